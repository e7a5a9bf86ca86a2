//! M-Best breadth-first sphere decoding with approximate soft outputs.

use super::{DetectorMetadata, DetectorOutput};
use crate::constellation::Constellation;
use crate::linalg::qr_thin;
use crate::{Error, Result};
use ndarray::{Array1, Array2};

#[derive(Clone)]
struct Candidate {
    metric: f64,
    /// Symbol indices for coordinates lvl..dx-1 (tail-first growth).
    tail: Vec<usize>,
}

/// Breadth-first tree search keeping the `m_keep` lowest-partial-metric
/// candidates per QR layer (natural column order, last coordinate first).
/// Survivor list metrics yield posteriors; missing symbols get probability
/// zero. Hard output is the full-metric argmin over the survivors.
pub fn mbest_soft(
    h: &Array2<f64>,
    y: &Array1<f64>,
    sigma2: f64,
    c: &Constellation,
    m_keep: usize,
) -> Result<DetectorOutput> {
    if m_keep == 0 {
        return Err(Error::Config("mbest_soft needs M >= 1".into()));
    }
    if sigma2 <= 0.0 {
        return Err(Error::Domain(format!(
            "mbest_soft needs sigma2 > 0, got {sigma2}"
        )));
    }
    let (q, r) = qr_thin(h)?;
    let yt = q.t().dot(y);
    let dx = h.ncols();
    let s = c.onehot_dim;

    let mut survivors = vec![Candidate {
        metric: 0.0,
        tail: Vec::new(),
    }];
    let mut nodes = 0u64;
    for i in (0..dx).rev() {
        let mut children = Vec::with_capacity(survivors.len() * s);
        for parent in &survivors {
            let mut t = yt[i];
            for (off, &kj) in parent.tail.iter().enumerate() {
                let j = dx - 1 - off;
                t -= r[[i, j]] * c.real_alphabet[kj];
            }
            for k in 0..s {
                let diff = t - r[[i, i]] * c.real_alphabet[k];
                let mut tail = Vec::with_capacity(parent.tail.len() + 1);
                tail.extend_from_slice(&parent.tail);
                tail.push(k);
                children.push(Candidate {
                    metric: parent.metric + diff * diff,
                    tail,
                });
                nodes += 1;
            }
        }
        // stable sort keeps insertion order on exact metric ties
        children.sort_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap());
        children.truncate(m_keep);
        survivors = children;
    }

    // tails hold coordinates dx-1..0; flip into natural component order
    let ordered: Vec<(f64, Vec<usize>)> = survivors
        .iter()
        .map(|cand| {
            let mut idx = cand.tail.clone();
            idx.reverse();
            (cand.metric, idx)
        })
        .collect();

    let min_metric = ordered
        .iter()
        .map(|(m, _)| *m)
        .fold(f64::INFINITY, f64::min);
    let mut posteriors = Array2::<f64>::zeros((dx, s));
    for (metric, idx) in &ordered {
        let w = (-(metric - min_metric) / (2.0 * sigma2)).exp();
        for (j, &k) in idx.iter().enumerate() {
            posteriors[[j, k]] += w;
        }
    }
    for j in 0..dx {
        let total = posteriors.row(j).sum();
        for k in 0..s {
            posteriors[[j, k]] /= total;
        }
    }

    let mut best = &ordered[0];
    for cand in &ordered[1..] {
        if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
            best = cand;
        }
    }
    let hard = Array1::from_iter(best.1.iter().map(|&k| c.real_alphabet[k]));

    Ok(DetectorOutput {
        hard,
        posteriors: Some(posteriors),
        metadata: DetectorMetadata {
            iterations: None,
            nodes_visited: Some(nodes),
            diverged: false,
        },
    })
}
