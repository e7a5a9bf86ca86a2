//! Hard-output sphere decoding: exact ML by depth-first Schnorr-Euchner
//! enumeration over the QR-triangularized lattice.

use super::{DetectorMetadata, DetectorOutput};
use crate::constellation::Constellation;
use crate::linalg::qr_thin;
use crate::Result;
use ndarray::{Array1, Array2};

const MAX_S: usize = 8;

struct Search<'a> {
    r: &'a Array2<f64>,
    yt: &'a Array1<f64>,
    alphabet: &'a [f64],
    cur: Vec<usize>,
    best: f64,
    best_idx: Vec<usize>,
    nodes: u64,
}

impl Search<'_> {
    /// Chooses coordinate lvl-1; lvl == 0 means a full candidate is built.
    fn descend(&mut self, lvl: usize, partial: f64) {
        if lvl == 0 {
            let better = partial < self.best
                || (partial == self.best
                    && !self.best_idx.is_empty()
                    && self.cur < self.best_idx);
            if self.best_idx.is_empty() || better {
                self.best = partial;
                self.best_idx = self.cur.clone();
            }
            return;
        }
        let i = lvl - 1;
        let s = self.alphabet.len();
        let mut t = self.yt[i];
        for j in lvl..self.cur.len() {
            t -= self.r[[i, j]] * self.alphabet[self.cur[j]];
        }
        let rii = self.r[[i, i]];
        let center = t / rii;

        // symbol order by distance to the unconstrained minimizer, ties
        // toward the smaller symbol
        let mut ord = [0usize; MAX_S];
        let mut dist = [0.0f64; MAX_S];
        for k in 0..s {
            let d = (self.alphabet[k] - center).abs();
            let mut pos = k;
            while pos > 0 && dist[pos - 1] > d {
                ord[pos] = ord[pos - 1];
                dist[pos] = dist[pos - 1];
                pos -= 1;
            }
            ord[pos] = k;
            dist[pos] = d;
        }

        for &k in &ord[..s] {
            let diff = t - rii * self.alphabet[k];
            let next = partial + diff * diff;
            if next > self.best {
                // later siblings only cost more under this ordering
                break;
            }
            self.cur[i] = k;
            self.nodes += 1;
            self.descend(lvl - 1, next);
        }
    }
}

/// Exact ML detection (same argmin and tie-breaking as the exhaustive
/// search) with node-visit accounting.
pub fn sphere_decode(
    h: &Array2<f64>,
    y: &Array1<f64>,
    c: &Constellation,
) -> Result<DetectorOutput> {
    let (q, r) = qr_thin(h)?;
    let yt = q.t().dot(y);
    let dx = h.ncols();
    let mut search = Search {
        r: &r,
        yt: &yt,
        alphabet: &c.real_alphabet,
        cur: vec![0; dx],
        best: f64::INFINITY,
        best_idx: Vec::new(),
        nodes: 0,
    };
    search.descend(dx, 0.0);
    let hard = Array1::from_iter(search.best_idx.iter().map(|&k| c.real_alphabet[k]));
    Ok(DetectorOutput {
        hard,
        posteriors: None,
        metadata: DetectorMetadata {
            iterations: None,
            nodes_visited: Some(search.nodes),
            diverged: false,
        },
    })
}
