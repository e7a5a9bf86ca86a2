//! Channel models and sample generation: i.i.d. Gaussian varying channels,
//! the deterministic alpha-Toeplitz fixed channel, SNR control, and seeded
//! RNG streams for reproducible draws.

use crate::constellation::{encode_one_hot, Constellation, PSK8_POINTS};
use crate::linalg::sym_sqrt;
use crate::{Error, Result};
use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Channel regime: one fixed deterministic H, or H redrawn per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Fc,
    Vc,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Fc => "fc",
            Regime::Vc => "vc",
        })
    }
}

/// Distribution of the channel matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    IidGaussian,
    AlphaToeplitz,
}

/// Channel description as it appears in experiment configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub regime: Regime,
    pub distribution: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub complex: bool,
}

impl ChannelModel {
    /// Varying i.i.d. Gaussian channel.
    pub fn vc_iid(k: usize, n: usize, complex: bool) -> Self {
        ChannelModel {
            regime: Regime::Vc,
            distribution: Distribution::IidGaussian,
            alpha: None,
            k,
            n,
            complex,
        }
    }

    /// Fixed alpha-Toeplitz channel.
    pub fn fc_toeplitz(alpha: f64, k: usize, n: usize, complex: bool) -> Self {
        ChannelModel {
            regime: Regime::Fc,
            distribution: Distribution::AlphaToeplitz,
            alpha: Some(alpha),
            k,
            n,
            complex,
        }
    }

    /// Length of the real symbol vector x.
    pub fn dim_x(&self) -> usize {
        if self.complex {
            2 * self.k
        } else {
            self.k
        }
    }

    /// Length of the real observation y.
    pub fn dim_y(&self) -> usize {
        if self.complex {
            2 * self.n
        } else {
            self.n
        }
    }

    /// Checks dimension and regime/distribution consistency.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n < self.k {
            return Err(Error::Config(format!(
                "need N >= K > 0, got K={} N={}",
                self.k, self.n
            )));
        }
        match (self.regime, self.distribution) {
            (Regime::Vc, Distribution::IidGaussian) => {
                if self.alpha.is_some() {
                    return Err(Error::Config(
                        "alpha is only meaningful for the alpha_toeplitz distribution".into(),
                    ));
                }
            }
            (Regime::Fc, Distribution::AlphaToeplitz) => match self.alpha {
                Some(a) if a > 0.0 && a < 1.0 => {}
                Some(a) => {
                    return Err(Error::Config(format!("alpha must be in (0,1), got {a}")));
                }
                None => {
                    return Err(Error::Config(
                        "alpha_toeplitz distribution requires an alpha field".into(),
                    ));
                }
            },
            (r, d) => {
                return Err(Error::Config(format!(
                    "unsupported regime/distribution pair {r:?}/{d:?}; \
                     supported: vc/iid_gaussian and fc/alpha_toeplitz"
                )));
            }
        }
        Ok(())
    }
}

/// One labeled detection instance.
#[derive(Clone, Debug)]
pub struct Sample {
    pub h: Array2<f64>,
    pub y: Array1<f64>,
    pub x: Array1<f64>,
    pub x_oh: Array1<f64>,
    pub sigma2: f64,
    pub snr_db: f64,
}

/// Stream ids at or above this value are reserved for initialization and
/// validation draws; training iteration i uses stream i.
pub const RESERVED_STREAM_BASE: u64 = 1 << 63;

/// Seeded, stream-addressable RNG. Identical (seed, stream) pairs reproduce
/// identical draws regardless of what other streams were consumed.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { rng }
    }

    /// One standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

type FcKey = (u64, usize, usize, bool);

fn fc_cache() -> &'static Mutex<HashMap<FcKey, Arc<Array2<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<FcKey, Arc<Array2<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Builds the deterministic Toeplitz-Gram channel: the symmetric PSD square
/// root of Sigma_ij = alpha^|i-j|, zero-padded with extra rows when the
/// receive dimension exceeds the transmit dimension.
fn toeplitz_channel(alpha: f64, dx: usize, dy: usize) -> Result<Array2<f64>> {
    let mut sigma = Array2::<f64>::zeros((dx, dx));
    for i in 0..dx {
        for j in 0..dx {
            sigma[[i, j]] = alpha.powi((i as i32 - j as i32).abs());
        }
    }
    let root = sym_sqrt(&sigma)?;
    let mut h = Array2::<f64>::zeros((dy, dx));
    for i in 0..dx {
        for j in 0..dx {
            h[[i, j]] = root[[i, j]];
        }
    }
    Ok(h)
}

/// Draws (or for FC, returns) the real channel matrix for one sample.
pub fn sample_channel(m: &ChannelModel, rng: &mut RngStream) -> Result<Array2<f64>> {
    m.validate()?;
    match m.distribution {
        Distribution::IidGaussian => {
            if m.complex {
                // draw re/im parts row-major, then embed
                let (n, k) = (m.n, m.k);
                let mut h = Array2::<f64>::zeros((2 * n, 2 * k));
                for i in 0..n {
                    for j in 0..k {
                        let re = rng.standard_normal();
                        let im = rng.standard_normal();
                        h[[i, j]] = re;
                        h[[i, j + k]] = -im;
                        h[[i + n, j]] = im;
                        h[[i + n, j + k]] = re;
                    }
                }
                Ok(h)
            } else {
                let mut h = Array2::<f64>::zeros((m.n, m.k));
                for v in h.iter_mut() {
                    *v = rng.standard_normal();
                }
                Ok(h)
            }
        }
        Distribution::AlphaToeplitz => {
            let alpha = m.alpha.expect("validated above");
            let key: FcKey = (alpha.to_bits(), m.k, m.n, m.complex);
            let mut cache = fc_cache().lock().expect("fc cache poisoned");
            if let Some(h) = cache.get(&key) {
                return Ok(h.as_ref().clone());
            }
            let h = toeplitz_channel(alpha, m.dim_x(), m.dim_y())?;
            cache.insert(key, Arc::new(h.clone()));
            Ok(h)
        }
    }
}

/// Noise variance per real component for a target SNR, defined as total
/// received signal power over total noise power:
/// sigma2 = P_s * E[trace(H^T H)] / (dim(y) * 10^(snr_db/10)).
pub fn sigma_for_snr(m: &ChannelModel, c: &Constellation, snr_db: f64) -> f64 {
    let expected_trace = match m.distribution {
        Distribution::IidGaussian => (m.dim_y() * m.dim_x()) as f64,
        Distribution::AlphaToeplitz => m.dim_x() as f64,
    };
    c.symbol_energy * expected_trace / (m.dim_y() as f64 * 10f64.powf(snr_db / 10.0))
}

/// Draws uniform symbols for one sample. For 8-PSK the draw is joint over
/// the 8 complex points so transmitted pairs are always valid.
fn draw_symbols(m: &ChannelModel, c: &Constellation, rng: &mut RngStream) -> Array1<f64> {
    let dx = m.dim_x();
    let mut x = Array1::<f64>::zeros(dx);
    if c.kind == crate::constellation::ConstellationKind::Psk8 {
        for j in 0..m.k {
            let (re, im) = PSK8_POINTS[rng.gen_range(0..8)];
            x[j] = re;
            x[j + m.k] = im;
        }
    } else {
        for v in x.iter_mut() {
            *v = c.real_alphabet[rng.gen_range(0..c.onehot_dim)];
        }
    }
    x
}

/// Draws one complete labeled instance: x, H, an SNR uniform on
/// [snr_min_db, snr_max_db], and Gaussian noise at the matching variance.
pub fn sample_problem(
    m: &ChannelModel,
    c: &Constellation,
    snr_min_db: f64,
    snr_max_db: f64,
    rng: &mut RngStream,
) -> Result<Sample> {
    if snr_min_db > snr_max_db {
        return Err(Error::Config(format!(
            "snr range inverted: {snr_min_db} > {snr_max_db}"
        )));
    }
    if m.complex != c.is_complex {
        return Err(Error::Config(format!(
            "channel complex={} but constellation {} has complex={}",
            m.complex, c.kind, c.is_complex
        )));
    }
    let x = draw_symbols(m, c, rng);
    let h = sample_channel(m, rng)?;
    let snr_db = if snr_min_db == snr_max_db {
        snr_min_db
    } else {
        rng.gen_range(snr_min_db..snr_max_db)
    };
    let sigma2 = sigma_for_snr(m, c, snr_db);
    let sigma = sigma2.sqrt();
    let mut y = h.dot(&x);
    for v in y.iter_mut() {
        *v += sigma * rng.standard_normal();
    }
    let x_oh = encode_one_hot(&x.view(), c)?;
    Ok(Sample {
        h,
        y,
        x,
        x_oh,
        sigma2,
        snr_db,
    })
}
