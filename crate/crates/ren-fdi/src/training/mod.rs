//! Training of the filter bank: windowed tracking cost, exact reverse-mode
//! gradients, full-batch Adam and RMSE evaluation.
//!
//! The cost of filter `i` is the squared tracking error of its residual
//! against the synthetic fault injected on sensor `i`, summed over scenarios
//! and over samples from the warm-up index `k0` to the end of the horizon.
//! Rollouts always start from the zero filter state; `k0` masks the initial
//! transient. Because the parameterization is unconstrained, every Adam
//! iterate materializes into a contracting filter, which the per-epoch
//! gradient evaluation re-asserts implicitly.

mod backprop;

pub use backprop::DirectGrads;
pub(crate) use backprop::{materialize_adjoint, scenario_loss_grad, ExplicitGrads};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, ScenarioSet, TrainingPair};
use crate::ren::{
    self, init_params, Checkpoint, CheckpointError, DirectParams, ExplicitRen, FilterBank,
    InitConfig, PerformanceSpec, RenDims, RenError,
};
use crate::signals::mix_seed;
use crate::Col;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training pairs supplied")]
    EmptyPairs,
    #[error("training pair {index} has target length {target_len} but input length {input_len}")]
    LengthMismatch {
        index: usize,
        target_len: usize,
        input_len: usize,
    },
    #[error("warm-up index k0 = {k0} does not leave a loss window on a horizon of {len} samples")]
    BadWindow { k0: usize, len: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Ren(#[from] RenError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything that shapes one training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// First sample included in the loss (warm-up excluded).
    pub k0: usize,
    pub epochs: usize,
    pub step_size: f64,
    /// Adam moment coefficients.
    pub beta1: f64,
    pub beta2: f64,
    /// Adam divisor offset.
    pub adam_epsilon: f64,
    /// Master seed; per-filter init seeds are derived from it.
    pub seed: u64,
    /// Run a directional finite-difference spot check every this many epochs
    /// (0 disables).
    pub grad_check_cadence: usize,
    /// Directions per spot check.
    pub grad_check_directions: usize,
    /// Initialization scale multiplier.
    pub init_scale: f64,
    pub alpha_bar: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    // Step size and epoch count are sized for the 20-scenario corpus: the
    // quiet-target filters start with a large feedthrough residual and need
    // roughly this budget to fall below the per-sample accuracy the
    // evaluation table expects.
    fn default() -> Self {
        Self {
            k0: 4,
            epochs: 3000,
            step_size: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            grad_check_cadence: 1000,
            grad_check_directions: 3,
            init_scale: 1.0,
            alpha_bar: ren::DEFAULT_ALPHA_BAR,
            epsilon: ren::DEFAULT_EPSILON,
        }
    }
}

impl TrainConfig {
    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            scale: self.init_scale,
            alpha_bar: self.alpha_bar,
            epsilon: self.epsilon,
        }
    }

    /// Init seed of one filter, derived so the four filters draw independent
    /// parameters from a single master seed.
    pub fn filter_seed(&self, filter_index: usize) -> u64 {
        mix_seed(self.seed, 0x1000 + filter_index as u64)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Summary of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub filter_index: usize,
    pub per_epoch: Vec<EpochRecord>,
    pub final_loss: f64,
    pub wall_time_s: f64,
    /// Worst relative error seen by the directional spot checks, if any ran.
    pub grad_check_worst_rel_err: Option<f64>,
    /// Epochs whose loss exceeded the loss 50 epochs earlier. A soft
    /// diagnostic only; logged, never asserted.
    pub descent_window_violations: usize,
    pub checkpoint_path: Option<PathBuf>,
}

fn validate_pairs(pairs: &[TrainingPair], k0: usize) -> Result<(), TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyPairs);
    }
    for (index, p) in pairs.iter().enumerate() {
        if p.target.len() != p.inputs.len() {
            return Err(TrainError::LengthMismatch {
                index,
                target_len: p.target.len(),
                input_len: p.inputs.len(),
            });
        }
        if k0 >= p.inputs.len() {
            return Err(TrainError::BadWindow {
                k0,
                len: p.inputs.len(),
            });
        }
    }
    Ok(())
}

/// Windowed tracking cost
/// `J = Σ_s Σ_{k=k0}^{T-1} (r^s(k) - f^s(k))²`, rollouts from the zero state.
pub fn cost(
    params: &DirectParams,
    dims: &RenDims,
    spec: &PerformanceSpec,
    pairs: &[TrainingPair],
    k0: usize,
) -> Result<f64, TrainError> {
    validate_pairs(pairs, k0)?;
    let ren = ren::materialize(dims, spec, params)?;
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            let (rs, _) = ren::rollout(&ren, &Col::zeros(dims.n_z()), &p.inputs);
            rs.iter()
                .zip(&p.target)
                .skip(k0)
                .map(|(&r, &f)| (r - f) * (r - f))
                .sum::<f64>()
        })
        .collect();
    // Fixed-order reduction keeps the sum reproducible.
    Ok(losses.iter().sum())
}

/// Cost and its exact gradient with respect to the trainable fields.
pub fn gradient(
    params: &DirectParams,
    dims: &RenDims,
    spec: &PerformanceSpec,
    pairs: &[TrainingPair],
    k0: usize,
) -> Result<(f64, DirectGrads), TrainError> {
    validate_pairs(pairs, k0)?;
    let tr = ren::trace(dims, spec, params)?;
    tr.certify()?;
    let per: Vec<(f64, ExplicitGrads)> = pairs
        .par_iter()
        .map(|p| scenario_loss_grad(&tr.explicit, &p.inputs, &p.target, k0))
        .collect();
    let mut loss = 0.0;
    let mut eg = ExplicitGrads::zeros(dims);
    for (l, g) in &per {
        loss += l;
        eg.accumulate(g);
    }
    let dg = materialize_adjoint(&tr, params, &eg);
    Ok((loss, dg))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Directional secant check of the analytic gradient; returns the relative
/// error against `(J(θ+hd) - J(θ-hd)) / 2h` along a random unit direction.
fn directional_check(
    params: &DirectParams,
    dims: &RenDims,
    spec: &PerformanceSpec,
    pairs: &[TrainingPair],
    k0: usize,
    grad_flat: &[f64],
    seed: u64,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..grad_flat.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    for d in &mut dir {
        *d /= norm;
    }
    let theta = params.to_flat();
    let theta_inf = theta.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let h = 1e-5 * (1.0 + theta_inf);

    let eval = |flat: &[f64]| -> Result<f64, TrainError> {
        let mut p = params.clone();
        p.set_from_flat(flat);
        cost(&p, dims, spec, pairs, k0)
    };
    let plus: Vec<f64> = theta.iter().zip(&dir).map(|(&t, &d)| t + h * d).collect();
    let minus: Vec<f64> = theta.iter().zip(&dir).map(|(&t, &d)| t - h * d).collect();
    let secant = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
    let analytic: f64 = grad_flat.iter().zip(&dir).map(|(&g, &d)| g * d).sum();
    let denom = secant.abs().max(analytic.abs()).max(1e-10);
    Ok((secant - analytic).abs() / denom)
}

/// Trains the filter designed for sensor `filter_index` on the set with
/// full-batch Adam. Deterministic for a fixed config: parallel per-scenario
/// work is reduced in scenario order.
pub fn train_filter(
    filter_index: usize,
    dims: &RenDims,
    spec: &PerformanceSpec,
    set: &ScenarioSet,
    cfg: &TrainConfig,
) -> Result<(DirectParams, TrainReport), TrainError> {
    let pairs = dataset::training_pairs(set, filter_index)?;
    validate_pairs(&pairs, cfg.k0)?;

    let start = Instant::now();
    let mut params = init_params(dims, &cfg.init_config(), cfg.filter_seed(filter_index))?;
    let mut theta = params.to_flat();
    let mut adam = Adam::new(theta.len());
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut worst_check: Option<f64> = None;

    for epoch in 0..cfg.epochs {
        let (loss, grads) = gradient(&params, dims, spec, &pairs, cfg.k0)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        let grad_flat = grads.to_flat();
        let grad_norm = grad_flat.iter().map(|g| g * g).sum::<f64>().sqrt();
        per_epoch.push(EpochRecord { loss, grad_norm });

        if cfg.grad_check_cadence > 0 && epoch % cfg.grad_check_cadence == 0 {
            for d in 0..cfg.grad_check_directions {
                let seed = mix_seed(cfg.seed, 0x6C00 + (epoch as u64) * 31 + d as u64);
                let err =
                    directional_check(&params, dims, spec, &pairs, cfg.k0, &grad_flat, seed)?;
                worst_check = Some(worst_check.map_or(err, |w: f64| w.max(err)));
            }
        }

        adam.step(&mut theta, &grad_flat, cfg);
        params.set_from_flat(&theta);
    }

    let final_loss = cost(&params, dims, spec, &pairs, cfg.k0)?;
    let descent_window_violations = per_epoch
        .iter()
        .enumerate()
        .skip(50)
        .filter(|(e, rec)| rec.loss > per_epoch[e - 50].loss)
        .count();

    let report = TrainReport {
        filter_index,
        per_epoch,
        final_loss,
        wall_time_s: start.elapsed().as_secs_f64(),
        grad_check_worst_rel_err: worst_check,
        descent_window_violations,
        checkpoint_path: None,
    };
    Ok((params, report))
}

/// Trains the full bank, one filter per sensor, in parallel.
pub fn train_bank(
    dims: &RenDims,
    set: &ScenarioSet,
    cfg: &TrainConfig,
    input_count: usize,
    sensor_count: usize,
) -> Result<(FilterBank, Vec<TrainReport>), TrainError> {
    let results: Vec<Result<(Checkpoint, TrainReport), TrainError>> = (1..=sensor_count)
        .into_par_iter()
        .map(|i| {
            let spec = PerformanceSpec::with_defaults(i, input_count, sensor_count)?;
            let (params, report) = train_filter(i, dims, &spec, set, cfg)?;
            Ok((
                Checkpoint::new(*dims, spec, &params, cfg.filter_seed(i)),
                report,
            ))
        })
        .collect();
    let mut filters = Vec::new();
    let mut reports = Vec::new();
    for r in results {
        let (ck, rep) = r?;
        filters.push(ck);
        reports.push(rep);
    }
    Ok((FilterBank { filters }, reports))
}

/// Writes the per-epoch log as CSV `epoch,loss,grad_norm`.
pub fn write_training_log(report: &TrainReport, path: &Path) -> Result<(), TrainError> {
    let mut body = String::from("epoch,loss,grad_norm\n");
    for (e, rec) in report.per_epoch.iter().enumerate() {
        writeln!(
            body,
            "{e},{},{}",
            crate::plant::fmt_f64(rec.loss),
            crate::plant::fmt_f64(rec.grad_norm)
        )
        .unwrap();
    }
    std::fs::write(path, body).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Residuals of every filter of the bank over one input sequence, from the
/// zero state.
pub fn run_bank(rens: &[ExplicitRen], inputs: &[Col]) -> Vec<Vec<f64>> {
    rens.iter()
        .map(|ren| ren::rollout(ren, &Col::zeros(ren.dims.n_z()), inputs).0)
        .collect()
}

/// One row of the evaluation table: a fault class (scenario label) with the
/// mean RMSE of every filter's residual against its true fault target.
#[derive(Clone, Debug, Serialize)]
pub struct RmseRow {
    pub label: Vec<usize>,
    pub scenario_count: usize,
    pub mean_rmse: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RmseTable {
    pub k0: usize,
    pub rows: Vec<RmseRow>,
}

impl RmseTable {
    pub fn row_for(&self, label: &[usize]) -> Option<&RmseRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    fn label_text(label: &[usize]) -> String {
        if label.is_empty() {
            "healthy".to_string()
        } else {
            format!(
                "sensors {}",
                label
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("&")
            )
        }
    }

    /// Fixed-width text rendering, one row per fault class.
    pub fn render(&self) -> String {
        let filters = self.rows.first().map_or(0, |r| r.mean_rmse.len());
        let mut out = String::from("fault class     ");
        for i in 1..=filters {
            write!(out, "  detector {i}").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            write!(out, "{:<16}", Self::label_text(&row.label)).unwrap();
            for v in &row.mean_rmse {
                write!(out, "  {v:>10.4}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// CSV rendering: `class,detector_1,..`.
    pub fn to_csv(&self) -> String {
        let filters = self.rows.first().map_or(0, |r| r.mean_rmse.len());
        let mut out = String::from("class");
        for i in 1..=filters {
            write!(out, ",detector_{i}").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            write!(out, "{}", Self::label_text(&row.label).replace(' ', "_")).unwrap();
            for v in &row.mean_rmse {
                write!(out, ",{}", crate::plant::fmt_f64(*v)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Per-class mean RMSE of every filter on a labeled set. For each scenario
/// the residual of filter `i` is compared against the true fault injected on
/// sensor `i` (zero when that sensor is healthy), from sample `k0` on.
pub fn evaluate_rmse(
    bank: &FilterBank,
    set: &ScenarioSet,
    k0: usize,
) -> Result<RmseTable, TrainError> {
    let rens = bank.instantiate()?;
    let filters: Vec<(usize, ExplicitRen)> = bank
        .filters
        .iter()
        .zip(rens)
        .map(|(ck, ren)| (ck.spec.sensor_index(), ren))
        .collect();
    evaluate_rmse_filters(&filters, set, k0)
}

/// [`evaluate_rmse`] on already-materialized filters, each paired with the
/// 1-based sensor it is designed for.
pub fn evaluate_rmse_filters(
    filters: &[(usize, ExplicitRen)],
    set: &ScenarioSet,
    k0: usize,
) -> Result<RmseTable, TrainError> {
    let data_len = set.config.data_len();
    if k0 >= data_len {
        return Err(TrainError::BadWindow { k0, len: data_len });
    }
    let window = (data_len - k0) as f64;

    // RMSE per (scenario, filter), in parallel over scenarios.
    let per_scenario: Vec<Vec<f64>> = set
        .scenarios
        .par_iter()
        .map(|sc| {
            let inputs = set.filter_input(sc);
            filters
                .iter()
                .map(|(sensor, ren)| {
                    let (rs, _) = ren::rollout(ren, &Col::zeros(ren.dims.n_z()), &inputs);
                    let target = &sc.faults[sensor - 1].signal;
                    let sse: f64 = rs
                        .iter()
                        .zip(target)
                        .skip(k0)
                        .map(|(&r, &f)| (r - f) * (r - f))
                        .sum();
                    (sse / window).sqrt()
                })
                .collect()
        })
        .collect();

    let mut grouped: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for (idx, sc) in set.scenarios.iter().enumerate() {
        match grouped.iter_mut().find(|(label, _)| *label == sc.label) {
            Some((_, members)) => members.push(idx),
            None => grouped.push((sc.label.clone(), vec![idx])),
        }
    }
    // Healthy first, then single faults, then simultaneous ones.
    grouped.sort_by(|a, b| (a.0.len(), &a.0).cmp(&(b.0.len(), &b.0)));

    let rows = grouped
        .into_iter()
        .map(|(label, members)| {
            let mut mean = vec![0.0; filters.len()];
            for &idx in &members {
                for (fi, v) in per_scenario[idx].iter().enumerate() {
                    mean[fi] += v;
                }
            }
            for v in &mut mean {
                *v /= members.len() as f64;
            }
            RmseRow {
                label,
                scenario_count: members.len(),
                mean_rmse: mean,
            }
        })
        .collect();
    Ok(RmseTable { k0, rows })
}
