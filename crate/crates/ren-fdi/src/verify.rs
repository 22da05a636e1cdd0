//! Empirical certification of the architectural guarantees of a filter bank:
//! well-posedness of the materialized weights, exponential contraction of
//! paired trajectories, the incremental quadratic constraint relating
//! weighted input and residual increments, and the two bounds that follow
//! from it — sensitivity of the residual to faults on the designated sensor
//! (allowance `sqrt(beta/q)`) and insensitivity to faults elsewhere
//! (attenuation `sqrt(gamma/q)`).
//!
//! All checks are plain paired rollouts plus bookkeeping; they hold for any
//! finite free parameters, trained or not, which is exactly what makes them
//! worth testing against freshly drawn random filters.

use serde::Serialize;
use thiserror::Error;

use crate::ren::{
    self, DirectParams, ExplicitRen, FilterBank, PerformanceSpec, RenDims, RenError,
};
use crate::signals::{mix_seed, MultisineSpec, SignalError};
use crate::Col;

/// Allowed excess of the measured geometric-mean contraction ratio over the
/// configured bound; the Euclidean norm is not the metric in which the rate
/// bound is exact, so transient per-step ratios may exceed it.
pub const CONTRACTION_MARGIN: f64 = 0.02;
/// Paired trajectories count as converged once their distance falls below
/// this fraction of the initial distance.
pub const CONVERGENCE_FLOOR: f64 = 1e-10;
/// The constraint gap may dip below zero by this fraction of the weighted
/// signal energy before it counts as a violation (pure rounding slack).
pub const IQC_TOL_FACTOR: f64 = 1e-8;
/// Relative tolerance of the sensitivity/insensitivity bound checks.
pub const BOUND_REL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("degenerate state pair: both rollouts start from the same state")]
    DegenerateStatePair,
    #[error("sequence length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("fault vector has a nonzero entry on the designated sensor at sample {sample}")]
    FaultOnDesignatedSensor { sample: usize },
    #[error(transparent)]
    Ren(#[from] RenError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Certificate values of one materialization, reported rather than enforced.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct WellPosednessReport {
    pub h_posdef: bool,
    /// Smallest Cholesky pivot of `H` (smallest eigenvalue when the
    /// factorization failed).
    pub h_min_pivot: f64,
    pub lambda_positive: bool,
    pub lambda_min: f64,
    pub e_condition: f64,
    pub d11_strictly_lower: bool,
    /// Norm of the Cayley row; below 1 by construction.
    pub n_norm: f64,
}

impl WellPosednessReport {
    pub fn pass(&self) -> bool {
        self.h_posdef
            && self.lambda_positive
            && self.d11_strictly_lower
            && self.e_condition < ren::E_CONDITION_LIMIT
            && self.n_norm < 1.0
    }

    /// Smallest slack across the certificates, each in its natural scale.
    pub fn worst_margin(&self) -> f64 {
        let cond_slack = (ren::E_CONDITION_LIMIT - self.e_condition) / ren::E_CONDITION_LIMIT;
        self.h_min_pivot
            .min(self.lambda_min)
            .min(1.0 - self.n_norm)
            .min(cond_slack)
    }
}

/// Runs the materialization pipeline and reports every certificate. Never
/// fails on a failing certificate; a hard error is only possible when the
/// parameters cannot be materialized at all (wrong shapes, non-finite
/// values), in which case everything is reported as failed.
pub fn check_wellposed(
    dims: &RenDims,
    spec: &PerformanceSpec,
    params: &DirectParams,
) -> WellPosednessReport {
    match ren::trace(dims, spec, params) {
        Ok(tr) => {
            let lambda_min = tr.lambda.min();
            let h_min_pivot = tr.h_min_pivot.unwrap_or_else(|| {
                // Factorization failed; fall back to the smallest eigenvalue.
                tr.h.clone().symmetric_eigenvalues().min()
            });
            WellPosednessReport {
                h_posdef: tr.h_min_pivot.is_some(),
                h_min_pivot,
                lambda_positive: lambda_min > 0.0,
                lambda_min,
                e_condition: tr.e_cond,
                d11_strictly_lower: tr.explicit.d11_strictly_lower(),
                n_norm: tr.n_row.norm(),
            }
        }
        Err(_) => WellPosednessReport {
            h_posdef: false,
            h_min_pivot: f64::NAN,
            lambda_positive: false,
            lambda_min: f64::NAN,
            e_condition: f64::INFINITY,
            d11_strictly_lower: false,
            n_norm: f64::INFINITY,
        },
    }
}

/// Outcome of one paired-trajectory contraction test.
#[derive(Clone, Debug)]
pub struct ContractionOutcome {
    /// Per-step distance ratios, collected until the distance reaches the
    /// noise floor.
    pub ratios: Vec<f64>,
    pub geo_mean: f64,
    /// First sample index at which the paired distance fell below
    /// `CONVERGENCE_FLOOR` times the initial distance.
    pub converged_at: Option<usize>,
    /// Geometric-mean criterion: `geo_mean <= alpha_bar + CONTRACTION_MARGIN`.
    pub pass: bool,
}

/// Rolls two copies of the filter from different initial states under the
/// same input and measures how fast they converge to each other.
pub fn contraction_test(
    ren: &ExplicitRen,
    alpha_bar: f64,
    inputs: &[Col],
    z0_a: &Col,
    z0_b: &Col,
) -> Result<ContractionOutcome, VerifyError> {
    if z0_a == z0_b {
        return Err(VerifyError::DegenerateStatePair);
    }
    let d0 = (z0_a - z0_b).norm();
    let floor = CONVERGENCE_FLOOR * d0;

    let mut za = z0_a.clone();
    let mut zb = z0_b.clone();
    let mut dist = d0;
    let mut ratios = Vec::new();
    let mut converged_at = None;
    for (k, u) in inputs.iter().enumerate() {
        let (za_next, _, _) = ren::step(ren, &za, u);
        let (zb_next, _, _) = ren::step(ren, &zb, u);
        let next_dist = (&za_next - &zb_next).norm();
        if converged_at.is_none() {
            ratios.push(next_dist / dist);
            if next_dist < floor {
                converged_at = Some(k + 1);
            }
        }
        za = za_next;
        zb = zb_next;
        dist = next_dist;
    }

    let geo_mean = if ratios.iter().any(|&r| r == 0.0) {
        0.0
    } else {
        (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp()
    };
    Ok(ContractionOutcome {
        pass: geo_mean <= alpha_bar + CONTRACTION_MARGIN,
        ratios,
        geo_mean,
        converged_at,
    })
}

/// The incremental constraint gap evaluated at every truncation:
/// `gap(k) = -q·|δr|²_k + β·|δu|²_k + γ·|δy~1|²_k + β·|δy_i|²_k + γ·|δy~2|²_k`.
/// For equal initial filter states the gap is non-negative for every `k`, up
/// to rounding.
#[derive(Clone, Debug)]
pub struct IqcGap {
    pub per_truncation: Vec<f64>,
    pub min_gap: f64,
    /// Absolute rounding allowance: `IQC_TOL_FACTOR` times the weighted
    /// energy of all the increment terms.
    pub tol: f64,
    /// Weighted total energy used to normalize the tolerance.
    pub energy: f64,
}

impl IqcGap {
    pub fn pass(&self) -> bool {
        self.min_gap >= -self.tol
    }
}

/// Weighted per-sample increment terms split by channel group.
fn weighted_increment(spec: &PerformanceSpec, du: &Col) -> (f64, f64, f64, f64) {
    let l = spec.l();
    let i = spec.sensor_index();
    let mut u_term = 0.0;
    for k in 0..l {
        u_term += du[k] * du[k];
    }
    let mut y1_term = 0.0;
    for k in 0..i - 1 {
        let v = du[l + k];
        y1_term += v * v;
    }
    let yi = du[l + i - 1];
    let yi_term = yi * yi;
    let mut y2_term = 0.0;
    for k in i..spec.m() {
        let v = du[l + k];
        y2_term += v * v;
    }
    (u_term, y1_term, yi_term, y2_term)
}

/// Evaluates the constraint gap for two input sequences applied from the same
/// initial filter state.
pub fn iqc_gap(
    ren: &ExplicitRen,
    spec: &PerformanceSpec,
    input_a: &[Col],
    input_b: &[Col],
    z0: &Col,
) -> Result<IqcGap, VerifyError> {
    if input_a.len() != input_b.len() {
        return Err(VerifyError::LengthMismatch {
            a: input_a.len(),
            b: input_b.len(),
        });
    }
    let (ra, _) = ren::rollout(ren, z0, input_a);
    let (rb, _) = ren::rollout(ren, z0, input_b);

    let (beta, gamma, q) = (spec.beta(), spec.gamma(), spec.q());
    let mut gap = 0.0;
    let mut energy = 0.0;
    let mut per_truncation = Vec::with_capacity(input_a.len());
    for k in 0..input_a.len() {
        let dr = rb[k] - ra[k];
        let du = &input_b[k] - &input_a[k];
        let (u_term, y1_term, yi_term, y2_term) = weighted_increment(spec, &du);
        let weighted_in = beta * u_term + gamma * y1_term + beta * yi_term + gamma * y2_term;
        gap += weighted_in - q * dr * dr;
        energy += weighted_in + q * dr * dr;
        per_truncation.push(gap);
    }
    let min_gap = per_truncation.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(IqcGap {
        per_truncation,
        min_gap,
        tol: IQC_TOL_FACTOR * energy,
        energy,
    })
}

/// Truncation-wise comparison of `|δr|` against a gain times the fault norm.
#[derive(Clone, Debug)]
pub struct BoundCheck {
    /// `|δr|` at every truncation.
    pub lhs: Vec<f64>,
    /// Gain times the fault norm at every truncation.
    pub rhs: Vec<f64>,
    /// Minimum of `rhs·(1 + tol) - lhs` over all truncations.
    pub worst_margin: f64,
    pub pass: bool,
}

fn bound_check(residual_delta: &[f64], fault_energy: &[f64], gain: f64) -> BoundCheck {
    let mut lhs = Vec::with_capacity(residual_delta.len());
    let mut rhs = Vec::with_capacity(residual_delta.len());
    let mut dr_sq = 0.0;
    let mut worst = f64::INFINITY;
    for (dr, fe) in residual_delta.iter().zip(fault_energy) {
        dr_sq += dr * dr;
        let l = dr_sq.sqrt();
        let r = gain * fe.sqrt();
        worst = worst.min(r * (1.0 + BOUND_REL_TOL) - l);
        lhs.push(l);
        rhs.push(r);
    }
    BoundCheck {
        lhs,
        rhs,
        worst_margin: worst,
        pass: worst >= 0.0,
    }
}

/// Fault-sensitivity bound: injecting a fault on the designated sensor only,
/// the residual change obeys `|δr|_k <= sqrt(beta/q)·|f_i|_k` at every
/// truncation.
pub fn sensitivity_bound_check(
    ren: &ExplicitRen,
    spec: &PerformanceSpec,
    healthy_inputs: &[Col],
    fault_i: &[f64],
) -> Result<BoundCheck, VerifyError> {
    if fault_i.len() != healthy_inputs.len() {
        return Err(VerifyError::LengthMismatch {
            a: healthy_inputs.len(),
            b: fault_i.len(),
        });
    }
    let channel = spec.l() + spec.sensor_index() - 1;
    let faulted: Vec<Col> = healthy_inputs
        .iter()
        .zip(fault_i)
        .map(|(u, &f)| {
            let mut v = u.clone();
            v[channel] += f;
            v
        })
        .collect();
    let z0 = Col::zeros(ren.dims.n_z());
    let (ra, _) = ren::rollout(ren, &z0, healthy_inputs);
    let (rb, _) = ren::rollout(ren, &z0, &faulted);
    let delta: Vec<f64> = rb.iter().zip(&ra).map(|(b, a)| b - a).collect();

    let mut cum = 0.0;
    let fault_energy: Vec<f64> = fault_i
        .iter()
        .map(|f| {
            cum += f * f;
            cum
        })
        .collect();
    Ok(bound_check(&delta, &fault_energy, spec.sensitivity_gain()))
}

/// Insensitivity bound: for a fault vector that is identically zero on the
/// designated sensor, `|δr|_k <= sqrt(gamma/q)·|f~|_k` at every truncation.
/// `fault_other[k]` holds one value per sensor.
pub fn insensitivity_bound_check(
    ren: &ExplicitRen,
    spec: &PerformanceSpec,
    healthy_inputs: &[Col],
    fault_other: &[Col],
) -> Result<BoundCheck, VerifyError> {
    if fault_other.len() != healthy_inputs.len() {
        return Err(VerifyError::LengthMismatch {
            a: healthy_inputs.len(),
            b: fault_other.len(),
        });
    }
    let i = spec.sensor_index();
    for (sample, f) in fault_other.iter().enumerate() {
        if f[i - 1] != 0.0 {
            return Err(VerifyError::FaultOnDesignatedSensor { sample });
        }
    }
    let l = spec.l();
    let faulted: Vec<Col> = healthy_inputs
        .iter()
        .zip(fault_other)
        .map(|(u, f)| {
            let mut v = u.clone();
            for j in 0..spec.m() {
                v[l + j] += f[j];
            }
            v
        })
        .collect();
    let z0 = Col::zeros(ren.dims.n_z());
    let (ra, _) = ren::rollout(ren, &z0, healthy_inputs);
    let (rb, _) = ren::rollout(ren, &z0, &faulted);
    let delta: Vec<f64> = rb.iter().zip(&ra).map(|(b, a)| b - a).collect();

    let mut cum = 0.0;
    let fault_energy: Vec<f64> = fault_other
        .iter()
        .map(|f| {
            cum += f.norm_squared();
            cum
        })
        .collect();
    Ok(bound_check(&delta, &fault_energy, spec.insensitivity_gain()))
}

// --- property suite ---------------------------------------------------------

/// One line of the verification report.
#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub seed: u64,
    pub pass: bool,
    /// Smallest slack observed across the trials of this check; negative
    /// values mean a violation.
    pub worst_margin: f64,
}

/// Trial counts and seeding of the property suite.
#[derive(Clone, Copy, Debug)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Horizon of every synthetic rollout, samples.
    pub horizon: usize,
    /// Sample rate of the synthetic inputs, Hz.
    pub sample_rate: f64,
    pub contraction_pairs: usize,
    pub iqc_trials: usize,
    pub bound_trials: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: 80,
            sample_rate: 4.0,
            contraction_pairs: 20,
            iqc_trials: 100,
            bound_trials: 100,
        }
    }
}

/// A bounded synthetic input sequence: one multisine per channel.
pub fn synthetic_inputs(
    width: usize,
    horizon: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<Col>, VerifyError> {
    let spec = MultisineSpec::road(sample_rate, horizon as f64 / sample_rate);
    let mut channels = Vec::with_capacity(width);
    for ch in 0..width {
        let draw = crate::signals::draw_multisine(&spec, mix_seed(seed, ch as u64))?;
        channels.push(draw.render(sample_rate, horizon));
    }
    Ok((0..horizon)
        .map(|k| Col::from_fn(width, |ch, _| channels[ch][k]))
        .collect())
}

fn random_state(n: usize, scale: f64, seed: u64) -> Col {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Col::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Runs the full property suite over a filter bank and returns one record per
/// check per filter.
pub fn run_suite(bank: &FilterBank, cfg: &SuiteConfig) -> Result<Vec<CheckRecord>, VerifyError> {
    let mut records = Vec::new();
    for ck in &bank.filters {
        let i = ck.spec.sensor_index();
        let params = ck.to_params().map_err(|_| RenError::InvalidSpec(
            "checkpoint could not be rebuilt".into(),
        ))?;
        let ren = ren::materialize(&ck.dims, &ck.spec, &params)?;
        let ni = ck.dims.n_in();

        // Well-posedness certificates.
        let wp = check_wellposed(&ck.dims, &ck.spec, &params);
        records.push(CheckRecord {
            name: format!("wellposed.filter{i}"),
            seed: cfg.seed,
            pass: wp.pass(),
            worst_margin: wp.worst_margin(),
        });

        // Contraction over random initial-state pairs.
        let mut pass = true;
        let mut margin = f64::INFINITY;
        for trial in 0..cfg.contraction_pairs {
            let seed = mix_seed(cfg.seed, 0x01_0000 + (i as u64) * 1000 + trial as u64);
            let inputs = synthetic_inputs(ni, cfg.horizon, cfg.sample_rate, seed)?;
            let za = random_state(ck.dims.n_z(), 1.0, mix_seed(seed, 1));
            let zb = random_state(ck.dims.n_z(), 1.0, mix_seed(seed, 2));
            let outcome = contraction_test(&ren, params.alpha_bar, &inputs, &za, &zb)?;
            pass &= outcome.pass && outcome.converged_at.is_some();
            margin = margin.min(params.alpha_bar + CONTRACTION_MARGIN - outcome.geo_mean);
        }
        records.push(CheckRecord {
            name: format!("contraction.filter{i}"),
            seed: cfg.seed,
            pass,
            worst_margin: margin,
        });

        // Constraint gap over random input pairs.
        let mut pass = true;
        let mut margin = f64::INFINITY;
        for trial in 0..cfg.iqc_trials {
            let seed = mix_seed(cfg.seed, 0x02_0000 + (i as u64) * 100_000 + trial as u64);
            let a = synthetic_inputs(ni, cfg.horizon, cfg.sample_rate, mix_seed(seed, 1))?;
            let b = synthetic_inputs(ni, cfg.horizon, cfg.sample_rate, mix_seed(seed, 2))?;
            let gap = iqc_gap(&ren, &ck.spec, &a, &b, &Col::zeros(ck.dims.n_z()))?;
            pass &= gap.pass();
            let scale = gap.energy.max(f64::MIN_POSITIVE);
            margin = margin.min(gap.min_gap / scale + IQC_TOL_FACTOR);
        }
        records.push(CheckRecord {
            name: format!("iqc_gap.filter{i}"),
            seed: cfg.seed,
            pass,
            worst_margin: margin,
        });

        // Sensitivity bound: faults on the designated sensor.
        let fault_spec = MultisineSpec::fault(cfg.sample_rate, cfg.horizon as f64 / cfg.sample_rate);
        let mut pass = true;
        let mut margin = f64::INFINITY;
        for trial in 0..cfg.bound_trials {
            let seed = mix_seed(cfg.seed, 0x03_0000 + (i as u64) * 100_000 + trial as u64);
            let inputs = synthetic_inputs(ni, cfg.horizon, cfg.sample_rate, mix_seed(seed, 1))?;
            let (profile, _) =
                crate::signals::synth_fault(&fault_spec, i, cfg.horizon / 2, mix_seed(seed, 2))?;
            let check = sensitivity_bound_check(&ren, &ck.spec, &inputs, &profile.signal)?;
            pass &= check.pass;
            margin = margin.min(check.worst_margin);
        }
        records.push(CheckRecord {
            name: format!("sensitivity.filter{i}"),
            seed: cfg.seed,
            pass,
            worst_margin: margin,
        });

        // Insensitivity bound: joint faults on all the other sensors.
        let mut pass = true;
        let mut margin = f64::INFINITY;
        for trial in 0..cfg.bound_trials {
            let seed = mix_seed(cfg.seed, 0x04_0000 + (i as u64) * 100_000 + trial as u64);
            let inputs = synthetic_inputs(ni, cfg.horizon, cfg.sample_rate, mix_seed(seed, 1))?;
            let m = ck.spec.m();
            let mut fault = vec![Col::zeros(m); cfg.horizon];
            for j in 1..=m {
                if j == i {
                    continue;
                }
                let (profile, _) = crate::signals::synth_fault(
                    &fault_spec,
                    j,
                    cfg.horizon / 2,
                    mix_seed(seed, 10 + j as u64),
                )?;
                for (k, f) in fault.iter_mut().enumerate() {
                    f[j - 1] = profile.signal[k];
                }
            }
            let check = insensitivity_bound_check(&ren, &ck.spec, &inputs, &fault)?;
            pass &= check.pass;
            margin = margin.min(check.worst_margin);
        }
        records.push(CheckRecord {
            name: format!("insensitivity.filter{i}"),
            seed: cfg.seed,
            pass,
            worst_margin: margin,
        });
    }
    Ok(records)
}

/// JSON rendering of a report: one object per check.
pub fn report_json(records: &[CheckRecord]) -> String {
    serde_json::to_string_pretty(records).expect("report serialization")
}
