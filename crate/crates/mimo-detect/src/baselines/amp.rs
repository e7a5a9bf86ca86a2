//! Approximate message passing with the finite-alphabet posterior-mean
//! denoiser and an Onsager correction term.

use super::{denoiser_weights, posterior_mean_denoiser, DetectorMetadata, DetectorOutput};
use crate::constellation::{hard_round, Constellation};
use crate::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// AMP settings. Unlike the other baselines, AMP consumes the true noise
/// variance, so `knows_sigma2` is always true.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmpConfig {
    pub iterations: usize,
    pub damping: f64,
    #[serde(default = "default_true")]
    pub knows_sigma2: bool,
}

fn default_true() -> bool {
    true
}

impl Default for AmpConfig {
    fn default() -> Self {
        AmpConfig {
            iterations: 50,
            damping: 0.0,
            knows_sigma2: true,
        }
    }
}

impl AmpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("amp needs iterations >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!(
                "amp damping must be in [0,1), got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Iterative matched-filter-plus-denoiser detection. The channel is scaled
/// by 1/sqrt(dim y) internally so the state evolution constants apply; the
/// estimate is flagged as diverged once its norm passes 1e6.
pub fn amp_detect(
    h: &Array2<f64>,
    y: &Array1<f64>,
    sigma2: f64,
    c: &Constellation,
    cfg: &AmpConfig,
) -> Result<DetectorOutput> {
    cfg.validate()?;
    if sigma2 <= 0.0 {
        return Err(Error::Domain(format!(
            "amp_detect needs sigma2 > 0, got {sigma2}"
        )));
    }
    let n = h.nrows();
    let dx = h.ncols();
    let beta = dx as f64 / n as f64;
    let scale = 1.0 / (n as f64).sqrt();
    let a = h * scale;
    let b = y * scale;
    let sigma2_n = sigma2 / n as f64;

    let mut xhat = Array1::<f64>::zeros(dx);
    let mut z = b.clone();
    let mut tau2 = sigma2_n + beta * c.symbol_energy;
    let mut r = Array1::<f64>::zeros(dx);
    let mut vars = Array1::<f64>::zeros(dx);
    let mut last_denoise_tau2 = tau2;
    let mut diverged = false;
    let mut done = 0;

    for _ in 0..cfg.iterations {
        r = &xhat + &a.t().dot(&z);
        last_denoise_tau2 = tau2;
        let mut mean = Array1::<f64>::zeros(dx);
        for j in 0..dx {
            let (m, v) = posterior_mean_denoiser(r[j], tau2, c);
            mean[j] = m;
            vars[j] = v;
        }
        let x_new = if cfg.damping == 0.0 {
            mean
        } else {
            &mean * (1.0 - cfg.damping) + &xhat * cfg.damping
        };
        let vbar = vars.mean().unwrap_or(0.0);
        let onsager = beta * vbar / tau2;
        z = &b - &a.dot(&x_new) + &(&z * onsager);
        tau2 = sigma2_n + beta * vbar;
        xhat = x_new;
        done += 1;
        if xhat.dot(&xhat).sqrt() > 1e6 || !xhat.iter().all(|v| v.is_finite()) {
            diverged = true;
            break;
        }
    }

    // posteriors from the weights of the last denoising step
    let mut posteriors = Array2::<f64>::zeros((dx, c.onehot_dim));
    for j in 0..dx {
        let mut row = vec![0.0; c.onehot_dim];
        denoiser_weights(r[j], last_denoise_tau2, c, &mut row);
        for (i, w) in row.iter().enumerate() {
            posteriors[[j, i]] = *w;
        }
    }

    Ok(DetectorOutput {
        hard: hard_round(&xhat.view(), c),
        posteriors: Some(posteriors),
        metadata: DetectorMetadata {
            iterations: Some(done),
            nodes_visited: None,
            diverged,
        },
    })
}
