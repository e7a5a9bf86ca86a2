//! Symbol alphabets, one-hot encodings, and the complex-to-real
//! reparameterization of the linear model.

use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

/// Supported modulation schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationKind {
    Bpsk,
    Qpsk,
    Qam16,
    Psk8,
}

impl std::str::FromStr for ConstellationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bpsk" => Ok(Self::Bpsk),
            "qpsk" => Ok(Self::Qpsk),
            "qam16" => Ok(Self::Qam16),
            "psk8" => Ok(Self::Psk8),
            other => Err(Error::Config(format!("unknown constellation {other:?}"))),
        }
    }
}

impl std::fmt::Display for ConstellationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Bpsk => "bpsk",
            Self::Qpsk => "qpsk",
            Self::Qam16 => "qam16",
            Self::Psk8 => "psk8",
        };
        f.write_str(s)
    }
}

/// The 8-PSK points (re, im) on the unit circle, in lexicographic order so
/// nearest-point ties resolve deterministically.
pub const PSK8_POINTS: [(f64, f64); 8] = [
    (-1.0, 0.0),
    (-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    (-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (0.0, -1.0),
    (0.0, 1.0),
    (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (1.0, 0.0),
];

/// A real per-component symbol alphabet together with its one-hot layout.
#[derive(Clone, Debug)]
pub struct Constellation {
    pub kind: ConstellationKind,
    /// Symbol values per real component, strictly increasing.
    pub real_alphabet: Vec<f64>,
    /// One-hot block length, equals `real_alphabet.len()`.
    pub onehot_dim: usize,
    /// Bits carried by one real component; 0 when bit counting is undefined.
    pub bits_per_real_symbol: usize,
    /// Whether transmitted symbols are complex (two real components each).
    pub is_complex: bool,
    /// Mean of s^2 over the real alphabet.
    pub symbol_energy: f64,
}

/// Builds the alphabet and metadata for one of the supported kinds.
pub fn make_constellation(kind: ConstellationKind) -> Constellation {
    let (real_alphabet, bits, is_complex): (Vec<f64>, usize, bool) = match kind {
        ConstellationKind::Bpsk => (vec![-1.0, 1.0], 1, false),
        ConstellationKind::Qpsk => (vec![-1.0, 1.0], 1, true),
        ConstellationKind::Qam16 => (vec![-3.0, -1.0, 1.0, 3.0], 2, true),
        // real parts of e^{i*2*pi*k/8}; bit labeling per component is not
        // well defined for 8-PSK, so only SER is reported
        ConstellationKind::Psk8 => (
            vec![-1.0, -FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2, 1.0],
            0,
            true,
        ),
    };
    let onehot_dim = real_alphabet.len();
    let symbol_energy =
        real_alphabet.iter().map(|s| s * s).sum::<f64>() / real_alphabet.len() as f64;
    Constellation {
        kind,
        real_alphabet,
        onehot_dim,
        bits_per_real_symbol: bits,
        is_complex,
        symbol_energy,
    }
}

impl Constellation {
    /// Index of an exact alphabet value (within 1e-12).
    pub fn symbol_index(&self, v: f64) -> Result<usize> {
        self.real_alphabet
            .iter()
            .position(|s| (s - v).abs() <= 1e-12)
            .ok_or_else(|| Error::Domain(format!("value {v} is not in the alphabet")))
    }

    /// Index of the nearest alphabet value; ties go to the smaller symbol.
    pub fn nearest_index(&self, v: f64) -> usize {
        let mut best = 0;
        let mut best_d = (self.real_alphabet[0] - v).abs();
        for (i, s) in self.real_alphabet.iter().enumerate().skip(1) {
            let d = (s - v).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// Stacks one unit block of length |S| per real component of `x`.
pub fn encode_one_hot(x: &ArrayView1<f64>, c: &Constellation) -> Result<Array1<f64>> {
    let mut out = Array1::<f64>::zeros(c.onehot_dim * x.len());
    for (j, &v) in x.iter().enumerate() {
        let i = c
            .symbol_index(v)
            .map_err(|_| Error::Domain(format!("component {j}: {v} is not in the alphabet")))?;
        out[j * c.onehot_dim + i] = 1.0;
    }
    Ok(out)
}

/// Per block of length |S|, returns the weighted symbol sum (no
/// normalization; callers normalize when they need a distribution).
pub fn soft_decode(x_oh: &ArrayView1<f64>, c: &Constellation) -> Result<Array1<f64>> {
    let s = c.onehot_dim;
    if !x_oh.len().is_multiple_of(s) {
        return Err(Error::Domain(format!(
            "one-hot length {} is not a multiple of {s}",
            x_oh.len()
        )));
    }
    let blocks = x_oh.len() / s;
    let mut out = Array1::<f64>::zeros(blocks);
    for j in 0..blocks {
        let mut acc = 0.0;
        for i in 0..s {
            acc += c.real_alphabet[i] * x_oh[j * s + i];
        }
        out[j] = acc;
    }
    Ok(out)
}

/// Column-wise [`soft_decode`] for a (|S|*d)-by-B batch.
pub fn soft_decode_batch(x_oh: &Array2<f64>, c: &Constellation) -> Result<Array2<f64>> {
    let s = c.onehot_dim;
    if !x_oh.nrows().is_multiple_of(s) {
        return Err(Error::Domain(format!(
            "one-hot row count {} is not a multiple of {s}",
            x_oh.nrows()
        )));
    }
    let blocks = x_oh.nrows() / s;
    let mut out = Array2::<f64>::zeros((blocks, x_oh.ncols()));
    for b in 0..x_oh.ncols() {
        for j in 0..blocks {
            let mut acc = 0.0;
            for i in 0..s {
                acc += c.real_alphabet[i] * x_oh[[j * s + i, b]];
            }
            out[[j, b]] = acc;
        }
    }
    Ok(out)
}

/// Maps each entry to the nearest alphabet value (ties toward the smaller
/// symbol). For 8-PSK the vector is treated as [re; im] halves and each
/// rounded (re, im) pair is then projected to the nearest valid point.
pub fn hard_round(x_soft: &ArrayView1<f64>, c: &Constellation) -> Array1<f64> {
    let mut out = Array1::<f64>::zeros(x_soft.len());
    for (o, &v) in out.iter_mut().zip(x_soft.iter()) {
        *o = c.real_alphabet[c.nearest_index(v)];
    }
    if c.kind == ConstellationKind::Psk8 && x_soft.len().is_multiple_of(2) {
        let k = x_soft.len() / 2;
        for j in 0..k {
            let (re, im) = nearest_psk8_point(out[j], out[j + k]);
            out[j] = re;
            out[j + k] = im;
        }
    }
    out
}

/// Nearest of the 8 valid points to (re, im); ties go to the
/// lexicographically smaller point.
pub fn nearest_psk8_point(re: f64, im: f64) -> (f64, f64) {
    let mut best = PSK8_POINTS[0];
    let mut best_d = f64::INFINITY;
    for &(pr, pi) in &PSK8_POINTS {
        let d = (pr - re) * (pr - re) + (pi - im) * (pi - im);
        if d < best_d {
            best = (pr, pi);
            best_d = d;
        }
    }
    best
}

/// Real embedding of a complex matrix: [[Re, -Im], [Im, Re]].
pub fn realify_matrix(hc: &Array2<Complex64>) -> Array2<f64> {
    let (n, k) = hc.dim();
    let mut h = Array2::<f64>::zeros((2 * n, 2 * k));
    for i in 0..n {
        for j in 0..k {
            let z = hc[[i, j]];
            h[[i, j]] = z.re;
            h[[i, j + k]] = -z.im;
            h[[i + n, j]] = z.im;
            h[[i + n, j + k]] = z.re;
        }
    }
    h
}

/// Real embedding of a complex vector: [Re; Im].
pub fn realify_vector(vc: &ArrayView1<Complex64>) -> Array1<f64> {
    let n = vc.len();
    let mut v = Array1::<f64>::zeros(2 * n);
    for i in 0..n {
        v[i] = vc[i].re;
        v[i + n] = vc[i].im;
    }
    v
}

/// Realifies a complex channel and observation jointly.
pub fn complex_to_real(
    hc: &Array2<Complex64>,
    yc: &ArrayView1<Complex64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if hc.nrows() != yc.len() {
        return Err(Error::Domain(format!(
            "channel has {} rows but observation has length {}",
            hc.nrows(),
            yc.len()
        )));
    }
    Ok((realify_matrix(hc), realify_vector(yc)))
}
