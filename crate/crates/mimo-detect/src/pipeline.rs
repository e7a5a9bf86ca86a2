//! Online-sampled training loop: fresh batches every iteration, Adam
//! updates, periodic validation, and resumable checkpoints.

use crate::channel::{sample_problem, ChannelModel, RngStream, Sample, RESERVED_STREAM_BASE};
use crate::constellation::{
    hard_round, make_constellation, soft_decode, Constellation, ConstellationKind,
};
use crate::evaluation::{error_rate, network_onehot_layers, ErrorMode};
use crate::neural::{
    adam_step, detnet_gradient, fullycon_gradient, save_checkpoint, AdamHyper, AdamMeta,
    AdamState, CheckpointMeta, DetNetParams, FullyConParams, NetworkParams, Parametrized,
};
use crate::{Error, Result};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn default_checkpoint_every() -> u64 {
    1000
}
fn default_log_every() -> u64 {
    100
}
fn default_eta() -> f64 {
    0.8
}
fn default_validation_trials() -> u64 {
    200
}

/// Everything a training run needs; the JSON schema mirrors these field
/// names exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub architecture: String,
    pub channel: ChannelModel,
    pub constellation: ConstellationKind,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub batch_size: usize,
    pub iterations: u64,
    #[serde(default)]
    pub adam: AdamHyper,
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_width: Option<usize>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub log_offset_loss: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay_per_1000: Option<f64>,
    #[serde(default = "default_validation_trials")]
    pub validation_trials: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

/// SNR training windows per constellation, in dB.
pub fn default_snr_range(kind: ConstellationKind) -> (f64, f64) {
    match kind {
        ConstellationKind::Bpsk => (7.0, 14.0),
        ConstellationKind::Qpsk => (8.0, 15.0),
        ConstellationKind::Qam16 | ConstellationKind::Psk8 => (15.0, 25.0),
    }
}

impl TrainConfig {
    /// A runnable configuration with documented defaults filled in.
    pub fn new(
        architecture: &str,
        channel: ChannelModel,
        constellation: ConstellationKind,
        seed: u64,
    ) -> Self {
        let (snr_min_db, snr_max_db) = default_snr_range(constellation);
        TrainConfig {
            architecture: architecture.into(),
            channel,
            constellation,
            snr_min_db,
            snr_max_db,
            batch_size: 500,
            iterations: 20_000,
            adam: AdamHyper::default(),
            seed,
            checkpoint_every: default_checkpoint_every(),
            log_every: default_log_every(),
            layers: None,
            z_width: None,
            v_width: None,
            hidden_width: None,
            eta: default_eta(),
            log_offset_loss: false,
            lr_decay_per_1000: None,
            validation_trials: default_validation_trials(),
            resume: None,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.unwrap_or(match self.architecture.as_str() {
            "fullycon" => 6,
            _ => 30,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.architecture != "detnet" && self.architecture != "fullycon" {
            return Err(Error::Config(format!(
                "architecture must be detnet or fullycon, got {:?}",
                self.architecture
            )));
        }
        self.channel.validate()?;
        let c = make_constellation(self.constellation);
        if c.is_complex != self.channel.complex {
            return Err(Error::Config(format!(
                "constellation {} has complex={} but the channel says {}",
                c.kind, c.is_complex, self.channel.complex
            )));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "batch_size and iterations must be at least 1".into(),
            ));
        }
        if self.snr_min_db.is_nan() || self.snr_max_db.is_nan() || self.snr_min_db > self.snr_max_db
        {
            return Err(Error::Config(format!(
                "snr range [{}, {}] is invalid",
                self.snr_min_db, self.snr_max_db
            )));
        }
        if self.checkpoint_every == 0 || self.log_every == 0 || self.validation_trials == 0 {
            return Err(Error::Config(
                "checkpoint_every, log_every, and validation_trials must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!(
                "eta must lie in [0,1], got {}",
                self.eta
            )));
        }
        if self.layer_count() == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if let Some(d) = self.lr_decay_per_1000 {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!(
                    "lr_decay_per_1000 must lie in (0,1], got {d}"
                )));
            }
        }
        Ok(())
    }

    fn detnet_widths(&self) -> (usize, usize) {
        (
            self.z_width.unwrap_or(8 * self.channel.k),
            self.v_width.unwrap_or(4 * self.channel.k),
        )
    }

    fn fullycon_dims(&self, c: &Constellation) -> Vec<usize> {
        let hidden = self.hidden_width.unwrap_or(4 * self.channel.k);
        let mut dims = vec![self.channel.dim_y()];
        dims.extend(std::iter::repeat_n(hidden, self.layer_count() - 1));
        dims.push(c.onehot_dim * self.channel.dim_x());
        dims
    }

    /// Checkpoint metadata describing this configuration after
    /// `trained_iterations` updates.
    fn meta(&self, c: &Constellation, trained_iterations: u64, adam: Option<AdamMeta>) -> CheckpointMeta {
        let (widths, eta) = match self.architecture.as_str() {
            "fullycon" => (self.fullycon_dims(c), None),
            _ => {
                let (zw, vw) = self.detnet_widths();
                (vec![zw, vw], Some(self.eta))
            }
        };
        CheckpointMeta {
            architecture: self.architecture.clone(),
            constellation: self.constellation,
            k: self.channel.k,
            n: self.channel.n,
            complex: self.channel.complex,
            layers: self.layer_count(),
            widths,
            eta,
            training_iterations: trained_iterations,
            adam,
        }
    }

    fn fresh_params(&self, c: &Constellation) -> Result<NetworkParams> {
        let mut rng = RngStream::new(self.seed, RESERVED_STREAM_BASE);
        let dx = self.channel.dim_x();
        let dy = self.channel.dim_y();
        match self.architecture.as_str() {
            "detnet" => {
                let (zw, vw) = self.detnet_widths();
                Ok(NetworkParams::DetNet(DetNetParams::new(
                    dx,
                    dy,
                    c.onehot_dim,
                    self.layer_count(),
                    zw,
                    vw,
                    self.eta,
                    &mut rng,
                )))
            }
            _ => Ok(NetworkParams::FullyCon(FullyConParams::new(
                &self.fullycon_dims(c),
                &mut rng,
            )?)),
        }
    }
}

/// One log line of a training run.
#[derive(Clone, Debug, Serialize)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub loss: f64,
    pub val_ber: f64,
    pub seconds: f64,
}

/// Training log as CSV.
pub fn train_log_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from("iteration,loss,val_ber,seconds\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.iteration, r.loss, r.val_ber, r.seconds)
            .expect("string write");
    }
    out
}

/// A finished (or resumed-and-finished) training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub adam: AdamState,
    pub log: Vec<TrainLogRow>,
    pub checkpoint_path: PathBuf,
}

/// Monte Carlo error rate of an arbitrary detector closure on a held-out
/// stream; BER when the constellation has a bit labeling, SER otherwise.
pub fn monte_carlo_error<F>(
    model: &ChannelModel,
    c: &Constellation,
    snr_db: f64,
    trials: u64,
    seed: u64,
    mut detect: F,
) -> Result<f64>
where
    F: FnMut(&Sample) -> Result<Array1<f64>>,
{
    if trials == 0 {
        return Err(Error::Config("validation needs at least one trial".into()));
    }
    let mode = if c.bits_per_real_symbol > 0 {
        ErrorMode::Ber
    } else {
        ErrorMode::Ser
    };
    let mut errors = 0u64;
    let mut denom = 0u64;
    for t in 0..trials {
        let mut rng = RngStream::new(seed, RESERVED_STREAM_BASE + 1 + t);
        let smp = sample_problem(model, c, snr_db, snr_db, &mut rng)?;
        let hard = detect(&smp)?;
        let (e, d) = error_rate(&hard.view(), &smp.x.view(), c, mode)?;
        errors += e;
        denom += d;
    }
    Ok(errors as f64 / denom as f64)
}

/// Validation error rate of a network's final-layer hard decisions.
pub fn validate_params(
    params: &NetworkParams,
    model: &ChannelModel,
    c: &Constellation,
    snr_db: f64,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    monte_carlo_error(model, c, snr_db, trials, seed, |smp| {
        let outs = network_onehot_layers(params, c, smp)?;
        let soft = soft_decode(&outs.last().expect("nonempty").view(), c)?;
        Ok(hard_round(&soft.view(), c))
    })
}

fn gradient_of(
    params: &NetworkParams,
    c: &Constellation,
    batch: &[Sample],
    log_offset: bool,
) -> Result<(f64, NetworkParams)> {
    match params {
        NetworkParams::DetNet(p) => {
            let (loss, g) = detnet_gradient(p, c, batch, log_offset)?;
            Ok((loss, NetworkParams::DetNet(g)))
        }
        NetworkParams::FullyCon(p) => {
            let (loss, g) = fullycon_gradient(p, batch)?;
            Ok((loss, NetworkParams::FullyCon(g)))
        }
    }
}

fn resume_state(
    cfg: &TrainConfig,
    c: &Constellation,
    path: &Path,
) -> Result<(NetworkParams, AdamState, u64)> {
    let (meta, params, adam) = crate::neural::load_checkpoint(path)?;
    meta.check_compatible(&cfg.channel, cfg.constellation)?;
    let expected = cfg.meta(c, meta.training_iterations, meta.adam);
    if meta != expected {
        return Err(Error::Config(format!(
            "checkpoint at {} does not match this training configuration",
            path.display()
        )));
    }
    let adam = adam.ok_or_else(|| {
        Error::Config("cannot resume from a checkpoint without optimizer state".into())
    })?;
    if adam.hyper.beta1 != cfg.adam.beta1
        || adam.hyper.beta2 != cfg.adam.beta2
        || adam.hyper.eps != cfg.adam.eps
    {
        return Err(Error::Config(
            "checkpoint optimizer hyperparameters differ from the configuration".into(),
        ));
    }
    if meta.training_iterations > cfg.iterations {
        return Err(Error::Config(format!(
            "checkpoint already has {} iterations, configuration asks for {}",
            meta.training_iterations, cfg.iterations
        )));
    }
    Ok((params, adam, meta.training_iterations))
}

/// Runs (or resumes) training, writing rolling checkpoints to
/// `out_dir/model.ckpt`. A non-finite loss aborts with an error; the last
/// good checkpoint stays on disk.
pub fn train(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let c = make_constellation(cfg.constellation);
    let model = &cfg.channel;
    std::fs::create_dir_all(out_dir)?;
    let checkpoint_path = out_dir.join("model.ckpt");

    let (mut params, mut adam, start_iter) = match &cfg.resume {
        Some(path) => resume_state(cfg, &c, path)?,
        None => {
            let params = cfg.fresh_params(&c)?;
            let adam = AdamState::new(params.num_params(), cfg.adam);
            (params, adam, 0)
        }
    };

    let mid_snr = 0.5 * (cfg.snr_min_db + cfg.snr_max_db);
    let mut log = Vec::new();
    let started = Instant::now();
    for i in start_iter..cfg.iterations {
        let mut rng = RngStream::new(cfg.seed, i);
        let batch: Vec<Sample> = (0..cfg.batch_size)
            .map(|_| sample_problem(model, &c, cfg.snr_min_db, cfg.snr_max_db, &mut rng))
            .collect::<Result<_>>()?;

        if let Some(decay) = cfg.lr_decay_per_1000 {
            adam.hyper.lr = cfg.adam.lr * decay.powf((i / 1000) as f64);
        }
        let (loss, grads) = gradient_of(&params, &c, &batch, cfg.log_offset_loss)?;
        adam_step(&mut params, &grads, &mut adam)?;

        let done = i + 1;
        if done % cfg.log_every == 0 || done == cfg.iterations {
            let val_ber = validate_params(
                &params,
                model,
                &c,
                mid_snr,
                cfg.validation_trials,
                cfg.seed,
            )?;
            log.push(TrainLogRow {
                iteration: done,
                loss,
                val_ber,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
        if done % cfg.checkpoint_every == 0 || done == cfg.iterations {
            let meta = cfg.meta(&c, done, Some(AdamMeta::from_state(&adam)));
            save_checkpoint(&checkpoint_path, &meta, &params, Some(&adam))?;
        }
    }
    if start_iter == cfg.iterations && !checkpoint_path.exists() {
        let meta = cfg.meta(&c, cfg.iterations, Some(AdamMeta::from_state(&adam)));
        save_checkpoint(&checkpoint_path, &meta, &params, Some(&adam))?;
    }

    Ok(TrainOutcome {
        params,
        adam,
        log,
        checkpoint_path,
    })
}
