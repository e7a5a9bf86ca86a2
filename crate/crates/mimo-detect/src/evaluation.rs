//! Monte Carlo evaluation: error counting, posterior distances, accuracy
//! and soft-distance curves over SNR grids, and runtime benchmarks.

use crate::baselines::{
    amp_detect, exact_posteriors, mbest_soft, ml_detect_exhaustive, sphere_decode, zf_detect,
    AmpConfig, MAX_ENUMERATION,
};
use crate::channel::{sample_problem, ChannelModel, Regime, RngStream, Sample};
use crate::constellation::{
    hard_round, soft_decode, soft_decode_batch, Constellation, ConstellationKind,
};
use crate::neural::{detnet_forward, detnet_forward_batch, fullycon_forward_batch, NetworkParams};
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::time::Instant;

/// Whether an error-rate count is per bit or per (complex) symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    Ber,
    Ser,
}

/// Counts detection errors. SER counts per transmitted symbol (a complex
/// symbol is wrong if either real component differs); BER counts bit flips
/// under the natural binary labeling of alphabet indices.
pub fn error_rate(
    x_hat: &ArrayView1<f64>,
    x_true: &ArrayView1<f64>,
    c: &Constellation,
    mode: ErrorMode,
) -> Result<(u64, u64)> {
    if x_hat.len() != x_true.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} vs {}",
            x_hat.len(),
            x_true.len()
        )));
    }
    match mode {
        ErrorMode::Ser => {
            if c.is_complex {
                if !x_hat.len().is_multiple_of(2) {
                    return Err(Error::Domain(
                        "complex constellation needs an even component count".into(),
                    ));
                }
                let k = x_hat.len() / 2;
                let mut errors = 0;
                for j in 0..k {
                    if x_hat[j] != x_true[j] || x_hat[j + k] != x_true[j + k] {
                        errors += 1;
                    }
                }
                Ok((errors, k as u64))
            } else {
                let errors = x_hat
                    .iter()
                    .zip(x_true.iter())
                    .filter(|(a, b)| a != b)
                    .count() as u64;
                Ok((errors, x_hat.len() as u64))
            }
        }
        ErrorMode::Ber => {
            let bits = c.bits_per_real_symbol;
            if bits == 0 {
                return Err(Error::Domain(format!(
                    "bit labeling undefined for {}; report SER instead",
                    c.kind
                )));
            }
            let mut errors = 0u64;
            for (a, b) in x_hat.iter().zip(x_true.iter()) {
                let ia = c.symbol_index(*a)? as u32;
                let ib = c.symbol_index(*b)? as u32;
                errors += u64::from((ia ^ ib).count_ones());
            }
            Ok((errors, (x_hat.len() * bits) as u64))
        }
    }
}

/// L1 distance between two distributions over the same alphabet.
pub fn posterior_distance(p: &ArrayView1<f64>, q: &ArrayView1<f64>) -> f64 {
    p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum()
}

/// Turns a raw stacked one-hot estimate into per-component posterior rows:
/// negatives clamp to zero, every entry gets a 1e-12 floor, rows normalize
/// to sum 1.
pub fn soft_output_from_onehot(x_oh_hat: &ArrayView1<f64>, c: &Constellation) -> Result<Array2<f64>> {
    let s = c.onehot_dim;
    if !x_oh_hat.len().is_multiple_of(s) {
        return Err(Error::Domain(format!(
            "one-hot length {} is not a multiple of {s}",
            x_oh_hat.len()
        )));
    }
    let blocks = x_oh_hat.len() / s;
    let mut rows = Array2::<f64>::zeros((blocks, s));
    for j in 0..blocks {
        let mut total = 0.0;
        for i in 0..s {
            let v = x_oh_hat[j * s + i].max(0.0) + 1e-12;
            rows[[j, i]] = v;
            total += v;
        }
        for i in 0..s {
            rows[[j, i]] /= total;
        }
    }
    Ok(rows)
}

/// A trained network plus the layer depths to tap during evaluation.
#[derive(Clone, Debug)]
pub struct LearnedSpec {
    pub label: String,
    pub params: NetworkParams,
    /// 1-based layer indices to report separately; None taps only the
    /// final output.
    pub layers: Option<Vec<usize>>,
}

/// One detector entry in a curve or benchmark run.
#[derive(Clone, Debug)]
pub enum DetectorSpec {
    Zf,
    Ml,
    Sd,
    Amp(AmpConfig),
    MBest(usize),
    Exact,
    Learned(LearnedSpec),
}

impl DetectorSpec {
    pub fn name(&self) -> String {
        match self {
            DetectorSpec::Zf => "zf".into(),
            DetectorSpec::Ml => "ml".into(),
            DetectorSpec::Sd => "sd".into(),
            DetectorSpec::Amp(_) => "amp".into(),
            DetectorSpec::MBest(m) => format!("mbest{m}"),
            DetectorSpec::Exact => "exact".into(),
            DetectorSpec::Learned(l) => l.label.clone(),
        }
    }

    fn has_soft_output(&self) -> bool {
        matches!(
            self,
            DetectorSpec::Amp(_)
                | DetectorSpec::MBest(_)
                | DetectorSpec::Exact
                | DetectorSpec::Learned(_)
        )
    }
}

/// One point of an accuracy or soft-distance curve.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub detector: String,
    pub constellation: ConstellationKind,
    pub regime: Regime,
    pub k: usize,
    pub n: usize,
    pub snr_db: f64,
    /// Trials that produced a detector output at this point.
    pub trials: u64,
    pub errors: u64,
    /// Error denominator behind `rate` (bits or symbols counted).
    pub denom: u64,
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub stderr: f64,
    /// Trials dropped because the detector reported a failure.
    pub skipped: u64,
    pub mean_delta: Option<f64>,
    pub layer: Option<usize>,
}

/// One row of a runtime benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub detector: String,
    pub batch: usize,
    /// Median over repetitions of the per-sample mean.
    pub mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

fn tapped_layers(spec: &LearnedSpec) -> Result<Vec<Option<usize>>> {
    match (&spec.params, &spec.layers) {
        (_, None) => Ok(vec![None]),
        (NetworkParams::FullyCon(_), Some(_)) => Err(Error::Config(format!(
            "{}: per-layer taps need an unfolded network",
            spec.label
        ))),
        (NetworkParams::DetNet(p), Some(ls)) => {
            if ls.is_empty() {
                return Err(Error::Config(format!("{}: empty layer list", spec.label)));
            }
            for &l in ls {
                if l == 0 || l > p.layers.len() {
                    return Err(Error::Config(format!(
                        "{}: layer {l} is outside 1..={}",
                        spec.label,
                        p.layers.len()
                    )));
                }
            }
            Ok(ls.iter().map(|&l| Some(l)).collect())
        }
    }
}

/// (detector index, layer tag) pairs in reporting order.
fn slot_table(specs: &[DetectorSpec]) -> Result<Vec<(usize, Option<usize>)>> {
    let mut slots = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        match spec {
            DetectorSpec::Learned(l) => {
                for tap in tapped_layers(l)? {
                    slots.push((i, tap));
                }
            }
            _ => slots.push((i, None)),
        }
    }
    Ok(slots)
}

fn onehot_of_layer(outs: &[Array1<f64>], tap: Option<usize>) -> &Array1<f64> {
    match tap {
        Some(l) => &outs[l - 1],
        None => outs.last().expect("at least one layer"),
    }
}

/// Hard symbol decisions per slot of `spec`, in `slot_table` order.
fn hard_outputs(
    spec: &DetectorSpec,
    smp: &Sample,
    c: &Constellation,
) -> Result<Vec<Array1<f64>>> {
    match spec {
        DetectorSpec::Zf => Ok(vec![zf_detect(&smp.h, &smp.y, c)?.hard]),
        DetectorSpec::Ml => Ok(vec![ml_detect_exhaustive(&smp.h, &smp.y, c)?.hard]),
        DetectorSpec::Sd => Ok(vec![sphere_decode(&smp.h, &smp.y, c)?.hard]),
        DetectorSpec::Amp(cfg) => Ok(vec![amp_detect(&smp.h, &smp.y, smp.sigma2, c, cfg)?.hard]),
        DetectorSpec::MBest(m) => {
            Ok(vec![mbest_soft(&smp.h, &smp.y, smp.sigma2, c, *m)?.hard])
        }
        DetectorSpec::Exact => {
            Ok(vec![exact_posteriors(&smp.h, &smp.y, smp.sigma2, c)?.hard])
        }
        DetectorSpec::Learned(l) => {
            let outs = network_onehot_layers(&l.params, c, smp)?;
            tapped_layers(l)?
                .into_iter()
                .map(|tap| {
                    let xoh = onehot_of_layer(&outs, tap);
                    let soft = soft_decode(&xoh.view(), c)?;
                    Ok(hard_round(&soft.view(), c))
                })
                .collect()
        }
    }
}

/// Per-layer raw one-hot outputs of either architecture (FullyCon yields a
/// single pseudo-layer).
pub fn network_onehot_layers(
    params: &NetworkParams,
    c: &Constellation,
    smp: &Sample,
) -> Result<Vec<Array1<f64>>> {
    match params {
        NetworkParams::DetNet(p) => detnet_forward(p, c, &smp.h, &smp.y.view()),
        NetworkParams::FullyCon(p) => {
            let y = smp
                .y
                .clone()
                .into_shape_with_order((smp.y.len(), 1))
                .expect("column reshape");
            let out = fullycon_forward_batch(p, &y)?;
            Ok(vec![out.column(0).to_owned()])
        }
    }
}

/// Posterior rows per slot of `spec`.
fn soft_outputs(
    spec: &DetectorSpec,
    smp: &Sample,
    c: &Constellation,
) -> Result<Vec<Array2<f64>>> {
    let single = |out: crate::baselines::DetectorOutput| -> Result<Vec<Array2<f64>>> {
        out.posteriors
            .map(|p| vec![p])
            .ok_or_else(|| Error::Internal("detector returned no posteriors".into()))
    };
    match spec {
        DetectorSpec::Amp(cfg) => single(amp_detect(&smp.h, &smp.y, smp.sigma2, c, cfg)?),
        DetectorSpec::MBest(m) => single(mbest_soft(&smp.h, &smp.y, smp.sigma2, c, *m)?),
        DetectorSpec::Exact => single(exact_posteriors(&smp.h, &smp.y, smp.sigma2, c)?),
        DetectorSpec::Learned(l) => {
            let outs = network_onehot_layers(&l.params, c, smp)?;
            tapped_layers(l)?
                .into_iter()
                .map(|tap| soft_output_from_onehot(&onehot_of_layer(&outs, tap).view(), c))
                .collect()
        }
        other => Err(Error::Config(format!(
            "{} produces no soft output",
            other.name()
        ))),
    }
}

fn curve_preflight(
    specs: &[DetectorSpec],
    model: &ChannelModel,
    c: &Constellation,
    trials: u64,
) -> Result<Vec<(usize, Option<usize>)>> {
    model.validate()?;
    if model.complex != c.is_complex {
        return Err(Error::Config(format!(
            "channel complex={} but constellation {} has complex={}",
            model.complex, c.kind, c.is_complex
        )));
    }
    if trials == 0 {
        return Err(Error::Config("curves need at least one trial".into()));
    }
    if specs.is_empty() {
        return Err(Error::Config("no detectors requested".into()));
    }
    slot_table(specs)
}

fn stream_id(snr_index: usize, trials: u64, trial: u64) -> u64 {
    let id = snr_index as u64 * trials + trial;
    debug_assert!(id < crate::channel::RESERVED_STREAM_BASE);
    id
}

#[derive(Clone, Copy, Default)]
struct SlotCount {
    errors: u64,
    denom: u64,
    skipped: u64,
    delta_sum: f64,
    delta_rows: u64,
}

#[allow(clippy::too_many_arguments)]
fn record_from_count(
    name: String,
    layer: Option<usize>,
    model: &ChannelModel,
    c: &Constellation,
    snr_db: f64,
    trials: u64,
    count: &SlotCount,
    soft: bool,
) -> EvalRecord {
    let rate = if count.denom > 0 {
        count.errors as f64 / count.denom as f64
    } else {
        0.0
    };
    let stderr = if count.denom > 0 {
        (rate * (1.0 - rate) / count.denom as f64).sqrt()
    } else {
        0.0
    };
    EvalRecord {
        detector: name,
        constellation: c.kind,
        regime: model.regime,
        k: model.k,
        n: model.n,
        snr_db,
        trials: trials - count.skipped,
        errors: count.errors,
        denom: count.denom,
        rate,
        stderr,
        skipped: count.skipped,
        mean_delta: if soft {
            Some(if count.delta_rows > 0 {
                count.delta_sum / count.delta_rows as f64
            } else {
                0.0
            })
        } else {
            None
        },
        layer,
    }
}

/// Paired Monte Carlo error-rate curve: every detector sees the identical
/// sample at a given (snr, trial) coordinate. Detector failures skip that
/// trial for that detector only.
pub fn accuracy_curve(
    specs: &[DetectorSpec],
    model: &ChannelModel,
    c: &Constellation,
    snr_grid: &[f64],
    trials: u64,
    seed: u64,
    mode: ErrorMode,
) -> Result<Vec<EvalRecord>> {
    let slots = curve_preflight(specs, model, c, trials)?;
    let mut records = Vec::with_capacity(slots.len() * snr_grid.len());
    for (si, &snr) in snr_grid.iter().enumerate() {
        let per_trial: Vec<Result<Vec<(u64, u64, bool)>>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngStream::new(seed, stream_id(si, trials, t));
                let smp = sample_problem(model, c, snr, snr, &mut rng)?;
                let mut row = Vec::with_capacity(slots.len());
                for spec in specs {
                    match hard_outputs(spec, &smp, c) {
                        Ok(hards) => {
                            for hard in hards {
                                let (e, d) = error_rate(&hard.view(), &smp.x.view(), c, mode)?;
                                row.push((e, d, false));
                            }
                        }
                        Err(Error::Config(msg)) => return Err(Error::Config(msg)),
                        Err(_) => {
                            let width = match spec {
                                DetectorSpec::Learned(l) => tapped_layers(l)?.len(),
                                _ => 1,
                            };
                            row.extend(std::iter::repeat_n((0, 0, true), width));
                        }
                    }
                }
                Ok(row)
            })
            .collect();

        let mut counts = vec![SlotCount::default(); slots.len()];
        for row in per_trial {
            let row = row?;
            for (slot, &(e, d, skipped)) in row.iter().enumerate() {
                if skipped {
                    counts[slot].skipped += 1;
                } else {
                    counts[slot].errors += e;
                    counts[slot].denom += d;
                }
            }
        }
        for (slot, &(spec_idx, layer)) in slots.iter().enumerate() {
            records.push(record_from_count(
                specs[spec_idx].name(),
                layer,
                model,
                c,
                snr,
                trials,
                &counts[slot],
                false,
            ));
        }
    }
    Ok(records)
}

/// Mean L1 distance between each detector's posteriors and the exact
/// Bayes posteriors, over a paired SNR grid. Refuses systems too large
/// for exact enumeration.
pub fn soft_distance_curve(
    specs: &[DetectorSpec],
    model: &ChannelModel,
    c: &Constellation,
    snr_grid: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    let slots = curve_preflight(specs, model, c, trials)?;
    for spec in specs {
        if !spec.has_soft_output() {
            return Err(Error::Config(format!(
                "{} produces no soft output",
                spec.name()
            )));
        }
    }
    let dx = model.dim_x();
    if (c.onehot_dim as f64).powi(dx as i32) > MAX_ENUMERATION {
        return Err(Error::TooLarge(format!(
            "exact posterior reference needs {}^{dx} enumeration",
            c.onehot_dim
        )));
    }

    let mut records = Vec::with_capacity(slots.len() * snr_grid.len());
    for (si, &snr) in snr_grid.iter().enumerate() {
        let per_trial: Vec<Result<Vec<(f64, u64, bool)>>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngStream::new(seed, stream_id(si, trials, t));
                let smp = sample_problem(model, c, snr, snr, &mut rng)?;
                let reference = exact_posteriors(&smp.h, &smp.y, smp.sigma2, c)?
                    .posteriors
                    .expect("exact detector always returns posteriors");
                let mut row = Vec::with_capacity(slots.len());
                for spec in specs {
                    match soft_outputs(spec, &smp, c) {
                        Ok(outs) => {
                            for rows in outs {
                                let mut sum = 0.0;
                                for (p, q) in
                                    rows.axis_iter(Axis(0)).zip(reference.axis_iter(Axis(0)))
                                {
                                    sum += posterior_distance(&p, &q);
                                }
                                row.push((sum, rows.nrows() as u64, false));
                            }
                        }
                        Err(Error::Config(msg)) => return Err(Error::Config(msg)),
                        Err(_) => {
                            let width = match spec {
                                DetectorSpec::Learned(l) => tapped_layers(l)?.len(),
                                _ => 1,
                            };
                            row.extend(std::iter::repeat_n((0.0, 0, true), width));
                        }
                    }
                }
                Ok(row)
            })
            .collect();

        let mut counts = vec![SlotCount::default(); slots.len()];
        for row in per_trial {
            let row = row?;
            for (slot, &(sum, rows, skipped)) in row.iter().enumerate() {
                if skipped {
                    counts[slot].skipped += 1;
                } else {
                    counts[slot].delta_sum += sum;
                    counts[slot].delta_rows += rows;
                }
            }
        }
        for (slot, &(spec_idx, layer)) in slots.iter().enumerate() {
            records.push(record_from_count(
                specs[spec_idx].name(),
                layer,
                model,
                c,
                snr,
                trials,
                &counts[slot],
                true,
            ));
        }
    }
    Ok(records)
}

fn time_batch(spec: &DetectorSpec, batch: &[Sample], c: &Constellation) -> Result<Vec<f64>> {
    match spec {
        DetectorSpec::Learned(l) => {
            // batched inference is the whole point; one timed call
            let t0 = Instant::now();
            match &l.params {
                NetworkParams::DetNet(p) => {
                    let state = detnet_forward_batch(p, c, batch)?;
                    let last = state.xh.last().expect("at least one layer");
                    for col in last.axis_iter(Axis(1)) {
                        let _ = hard_round(&col, c);
                    }
                }
                NetworkParams::FullyCon(p) => {
                    let dy = batch[0].y.len();
                    let mut y = Array2::<f64>::zeros((dy, batch.len()));
                    for (i, smp) in batch.iter().enumerate() {
                        y.column_mut(i).assign(&smp.y);
                    }
                    let out = fullycon_forward_batch(p, &y)?;
                    let soft = soft_decode_batch(&out, c)?;
                    for col in soft.axis_iter(Axis(1)) {
                        let _ = hard_round(&col, c);
                    }
                }
            }
            let per = t0.elapsed().as_secs_f64() / batch.len() as f64;
            Ok(vec![per])
        }
        _ => {
            let mut times = Vec::with_capacity(batch.len());
            for smp in batch {
                let t0 = Instant::now();
                let _ = hard_outputs(spec, smp, c)?;
                times.push(t0.elapsed().as_secs_f64());
            }
            Ok(times)
        }
    }
}

/// Wall-clock per-sample detection cost across batch sizes. Generation is
/// excluded; two warm-up repetitions are discarded; the reported mean is
/// the median over repetitions. Runs single-threaded.
pub fn runtime_bench(
    specs: &[DetectorSpec],
    model: &ChannelModel,
    c: &Constellation,
    snr_db: f64,
    batch_sizes: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    model.validate()?;
    if repetitions == 0 || batch_sizes.contains(&0) {
        return Err(Error::Config(
            "benchmark needs repetitions >= 1 and positive batch sizes".into(),
        ));
    }
    let mut records = Vec::new();
    for spec in specs {
        for (bi, &bsz) in batch_sizes.iter().enumerate() {
            let mut rep_means = Vec::with_capacity(repetitions);
            let mut min_s = f64::INFINITY;
            let mut max_s = 0.0f64;
            for rep in 0..repetitions + 2 {
                let mut rng = RngStream::new(seed, (bi * (repetitions + 2) + rep) as u64);
                let batch: Vec<Sample> = (0..bsz)
                    .map(|_| sample_problem(model, c, snr_db, snr_db, &mut rng))
                    .collect::<Result<_>>()?;
                let times = time_batch(spec, &batch, c)?;
                if rep < 2 {
                    continue;
                }
                let mean = times.iter().sum::<f64>() / times.len() as f64;
                rep_means.push(mean);
                for &t in &times {
                    min_s = min_s.min(t);
                    max_s = max_s.max(t);
                }
            }
            rep_means.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
            let mean_s = rep_means[rep_means.len() / 2];
            records.push(BenchRecord {
                detector: spec.name(),
                batch: bsz,
                mean_s,
                min_s,
                max_s,
            });
        }
    }
    Ok(records)
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Accuracy-curve records as CSV.
pub fn eval_csv(records: &[EvalRecord]) -> String {
    let mut out =
        String::from("detector,constellation,regime,K,N,snr_db,trials,errors,rate,stderr,skipped,layer\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.detector,
            r.constellation,
            r.regime,
            r.k,
            r.n,
            r.snr_db,
            r.trials,
            r.errors,
            r.rate,
            r.stderr,
            r.skipped,
            opt_usize(r.layer)
        )
        .expect("string write");
    }
    out
}

/// Soft-distance records as CSV.
pub fn soft_csv(records: &[EvalRecord]) -> String {
    let mut out =
        String::from("detector,constellation,regime,K,N,snr_db,trials,mean_delta,skipped,layer\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.detector,
            r.constellation,
            r.regime,
            r.k,
            r.n,
            r.snr_db,
            r.trials,
            r.mean_delta.unwrap_or(0.0),
            r.skipped,
            opt_usize(r.layer)
        )
        .expect("string write");
    }
    out
}

/// Benchmark records as CSV.
pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("detector,batch,mean_s,min_s,max_s\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.detector, r.batch, r.mean_s, r.min_s, r.max_s
        )
        .expect("string write");
    }
    out
}
