//! Command-line entry point: `run <config.json> [--force]` executes an
//! experiment described by a JSON file; `describe <checkpoint>` prints a
//! checkpoint's metadata.

use crate::baselines::AmpConfig;
use crate::channel::ChannelModel;
use crate::constellation::{make_constellation, ConstellationKind};
use crate::evaluation::{
    accuracy_curve, bench_csv, eval_csv, runtime_bench, soft_csv, soft_distance_curve,
    DetectorSpec, ErrorMode, LearnedSpec,
};
use crate::neural::load_checkpoint;
use crate::pipeline::{train, train_log_csv, TrainConfig};
use crate::{Error, Result};
use clap::{Arg, ArgAction, Command};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Environment variable that overrides the configured output root.
pub const OUT_ROOT_ENV: &str = "MIMO_DETECT_OUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Curve,
    SoftCurve,
    Bench,
    OracleCheck,
}

/// One detector line in an experiment config.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorEntry {
    /// zf | ml | sd | amp | mbest | exact | checkpoint
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp: Option<AmpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
}

impl DetectorEntry {
    fn to_spec(&self, model: &ChannelModel, kind: ConstellationKind) -> Result<DetectorSpec> {
        match self.kind.as_str() {
            "zf" => Ok(DetectorSpec::Zf),
            "ml" => Ok(DetectorSpec::Ml),
            "sd" => Ok(DetectorSpec::Sd),
            "amp" => Ok(DetectorSpec::Amp(self.amp.unwrap_or_default())),
            "exact" => Ok(DetectorSpec::Exact),
            "mbest" => {
                let m = self.m.ok_or_else(|| {
                    Error::Config("detector kind mbest needs the field m".into())
                })?;
                Ok(DetectorSpec::MBest(m))
            }
            "checkpoint" => {
                let path = self.checkpoint.as_ref().ok_or_else(|| {
                    Error::Config("detector kind checkpoint needs the field checkpoint".into())
                })?;
                let (meta, params, _) = load_checkpoint(path)?;
                meta.check_compatible(model, kind)?;
                let label = self.label.clone().unwrap_or_else(|| {
                    path.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| meta.architecture.clone())
                });
                Ok(DetectorSpec::Learned(LearnedSpec {
                    label,
                    params,
                    layers: self.layers.clone(),
                }))
            }
            other => Err(Error::Config(format!(
                "unknown detector kind {other:?}; expected zf, ml, sd, amp, mbest, exact, \
                 or checkpoint"
            ))),
        }
    }
}

fn default_batch_sizes() -> Vec<usize> {
    vec![1, 10, 100, 1000]
}
fn default_repetitions() -> usize {
    20
}
fn default_oracle_trials() -> u64 {
    1000
}

/// Settings shared by the curve, soft-curve, bench, and oracle-check
/// modes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub channel: ChannelModel,
    pub constellation: ConstellationKind,
    #[serde(default)]
    pub snr_grid_db: Vec<f64>,
    #[serde(default = "default_oracle_trials")]
    pub trials: u64,
    #[serde(default)]
    pub detectors: Vec<DetectorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_mode: Option<ErrorMode>,
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench_snr_db: Option<f64>,
}

impl EvalSettings {
    fn specs(&self) -> Result<Vec<DetectorSpec>> {
        self.detectors
            .iter()
            .map(|d| d.to_spec(&self.channel, self.constellation))
            .collect()
    }

    fn mode(&self) -> ErrorMode {
        self.error_mode.unwrap_or({
            if make_constellation(self.constellation).bits_per_real_symbol > 0 {
                ErrorMode::Ber
            } else {
                ErrorMode::Ser
            }
        })
    }
}

/// Top-level experiment description; JSON field names mirror this struct.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub mode: Mode,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSettings>,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.experiment_id.is_empty()
            || !self
                .experiment_id
                .chars()
                .all(|ch| ch.is_ascii_alphanumeric() || matches!(ch, '-' | '_' | '.'))
            || self.experiment_id.starts_with('.')
        {
            return Err(Error::Config(format!(
                "experiment_id {:?} must be nonempty and use only letters, digits, '-', '_', '.'",
                self.experiment_id
            )));
        }
        match self.mode {
            Mode::Train => {
                if self.train.is_none() {
                    return Err(Error::Config("mode train needs the train section".into()));
                }
            }
            _ => {
                if self.eval.is_none() {
                    return Err(Error::Config(format!(
                        "mode {} needs the eval section",
                        serde_json::to_string(&self.mode).expect("mode serializes")
                    )));
                }
            }
        }
        Ok(())
    }

    fn eval(&self) -> &EvalSettings {
        self.eval.as_ref().expect("validated")
    }
}

fn parse_config(path: &Path) -> Result<(ExperimentConfig, String)> {
    let bytes = std::fs::read(path)?;
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        Error::Config(format!("{}: at {}: {}", path.display(), e.path(), e.inner()))
    })?;
    cfg.validate()?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((cfg, hex))
}

fn artifact_header(config_sha256: &str, seed: u64) -> String {
    format!("# config_sha256: {config_sha256}\n# seed: {seed}\n")
}

fn write_artifact(dir: &Path, name: &str, header: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, format!("{header}{body}"))?;
    Ok(path)
}

/// Formats checkpoint metadata for humans.
pub fn describe_checkpoint(path: &Path) -> Result<String> {
    let (meta, params, adam) = load_checkpoint(path)?;
    use crate::neural::Parametrized;
    let widths = meta
        .widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join("x");
    let mut out = format!(
        "architecture: {}\nlayers: {}\nwidths: {}\nconstellation: {}\nK: {}\nN: {}\ncomplex: {}\nparameters: {}\ntraining_iterations: {}\n",
        meta.architecture,
        meta.layers,
        widths,
        meta.constellation,
        meta.k,
        meta.n,
        meta.complex,
        params.num_params(),
        meta.training_iterations,
    );
    if let Some(eta) = meta.eta {
        out.push_str(&format!("eta: {eta}\n"));
    }
    if let Some(state) = adam {
        out.push_str(&format!(
            "adam: lr={} beta1={} beta2={} eps={} step={}\n",
            state.hyper.lr, state.hyper.beta1, state.hyper.beta2, state.hyper.eps, state.step
        ));
    }
    Ok(out)
}

fn oracle_check(cfg: &ExperimentConfig) -> Result<String> {
    use crate::baselines::{ml_detect_exhaustive, sphere_decode};
    use crate::channel::{sample_problem, RngStream};
    let ev = cfg.eval();
    ev.channel.validate()?;
    let c = make_constellation(ev.constellation);
    let grid = if ev.snr_grid_db.is_empty() {
        vec![0.0, 5.0, 10.0]
    } else {
        ev.snr_grid_db.clone()
    };
    let mut agree = 0u64;
    for t in 0..ev.trials {
        let snr = grid[(t as usize) % grid.len()];
        let mut rng = RngStream::new(cfg.seed, t);
        let smp = sample_problem(&ev.channel, &c, snr, snr, &mut rng)?;
        let sd = sphere_decode(&smp.h, &smp.y, &c)?;
        let ml = ml_detect_exhaustive(&smp.h, &smp.y, &c)?;
        if sd.hard == ml.hard {
            agree += 1;
        }
    }
    Ok(format!("sd==ml: {agree}/{}", ev.trials))
}

fn execute(cfg: &ExperimentConfig, dir: &Path, config_sha256: &str) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    match cfg.mode {
        Mode::Train => {
            let tc = cfg.train.as_ref().expect("validated");
            let header = artifact_header(config_sha256, tc.seed);
            let outcome = train(tc, dir)?;
            let log_path = write_artifact(dir, "train.csv", &header, &train_log_csv(&outcome.log))?;
            let last = outcome.log.last();
            lines.push(format!(
                "trained {} for {} iterations: final loss {}, val_ber {}, checkpoint {}, log {}",
                tc.architecture,
                tc.iterations,
                last.map_or(f64::NAN, |r| r.loss),
                last.map_or(f64::NAN, |r| r.val_ber),
                outcome.checkpoint_path.display(),
                log_path.display(),
            ));
        }
        Mode::Curve => {
            let ev = cfg.eval();
            let header = artifact_header(config_sha256, cfg.seed);
            let c = make_constellation(ev.constellation);
            let records = accuracy_curve(
                &ev.specs()?,
                &ev.channel,
                &c,
                &ev.snr_grid_db,
                ev.trials,
                cfg.seed,
                ev.mode(),
            )?;
            for r in &records {
                lines.push(format!(
                    "{} @ {} dB: rate {} ({} errors, {} skipped)",
                    r.detector, r.snr_db, r.rate, r.errors, r.skipped
                ));
            }
            write_artifact(dir, "curve.csv", &header, &eval_csv(&records))?;
        }
        Mode::SoftCurve => {
            let ev = cfg.eval();
            let header = artifact_header(config_sha256, cfg.seed);
            let c = make_constellation(ev.constellation);
            let records = soft_distance_curve(
                &ev.specs()?,
                &ev.channel,
                &c,
                &ev.snr_grid_db,
                ev.trials,
                cfg.seed,
            )?;
            for r in &records {
                lines.push(format!(
                    "{} @ {} dB: mean delta {}",
                    r.detector,
                    r.snr_db,
                    r.mean_delta.unwrap_or(0.0)
                ));
            }
            write_artifact(dir, "soft_curve.csv", &header, &soft_csv(&records))?;
        }
        Mode::Bench => {
            let ev = cfg.eval();
            let header = artifact_header(config_sha256, cfg.seed);
            let c = make_constellation(ev.constellation);
            let snr = ev.bench_snr_db.unwrap_or(10.0);
            let records = runtime_bench(
                &ev.specs()?,
                &ev.channel,
                &c,
                snr,
                &ev.batch_sizes,
                ev.repetitions,
                cfg.seed,
            )?;
            for r in &records {
                lines.push(format!(
                    "{} batch {}: {} s/sample (min {}, max {})",
                    r.detector, r.batch, r.mean_s, r.min_s, r.max_s
                ));
            }
            write_artifact(dir, "bench.csv", &header, &bench_csv(&records))?;
        }
        Mode::OracleCheck => {
            let header = artifact_header(config_sha256, cfg.seed);
            let line = oracle_check(cfg)?;
            write_artifact(dir, "oracle.txt", &header, &format!("{line}\n"))?;
            lines.push(line);
        }
    }
    Ok(lines)
}

/// Executes `run <config.json>`; returns printed summary lines.
pub fn run(config_path: &Path, force: bool) -> Result<Vec<String>> {
    let (cfg, config_sha256) = parse_config(config_path)?;
    if let Some(workers) = cfg.workers {
        if workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        // ignore the error: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let root = match std::env::var_os(OUT_ROOT_ENV) {
        Some(v) => PathBuf::from(v),
        None => cfg.out_dir.clone(),
    };
    let dir = root.join(&cfg.experiment_id);
    if dir.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::copy(config_path, dir.join("config.json"))?;
    execute(&cfg, &dir, &config_sha256)
}

fn command() -> Command {
    Command::new("mimo-detect")
        .about("Detection experiments: training, accuracy curves, soft output, benchmarks")
        .arg(
            Arg::new("action")
                .required(true)
                .value_parser(["run", "describe"]),
        )
        .arg(Arg::new("path").required(true))
        .arg(
            Arg::new("force")
                .long("force")
                .action(ArgAction::SetTrue)
                .help("overwrite an existing experiment directory"),
        )
}

/// Argument parsing and dispatch; returns the process exit code.
pub fn main() -> i32 {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let action = matches.get_one::<String>("action").expect("required");
    let path = PathBuf::from(matches.get_one::<String>("path").expect("required"));
    let result = match action.as_str() {
        "run" => run(&path, matches.get_flag("force")).map(|lines| {
            for line in lines {
                println!("{line}");
            }
        }),
        _ => describe_checkpoint(&path).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
