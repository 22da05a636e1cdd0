use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Col;

/// Errors raised by filter construction and materialization.
#[derive(Debug, Error)]
pub enum RenError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("invalid performance weights: {0}")]
    InvalidSpec(String),
    #[error("parameter field `{field}` has shape {got}, expected {expected}")]
    ShapeMismatch {
        field: &'static str,
        got: String,
        expected: String,
    },
    #[error("parameter field `{0}` contains a non-finite value")]
    NonFinite(&'static str),
    #[error("certificate violated: H failed its positive-definiteness check")]
    HNotPositiveDefinite,
    #[error("certificate violated: Lambda has a non-positive diagonal entry ({min:.3e})")]
    LambdaNotPositive { min: f64 },
    #[error("certificate violated: R + D22'·Q·D22 is not positive definite")]
    RcalNotPositiveDefinite,
    #[error("certificate violated: E condition estimate {cond:.3e} exceeds {limit:.0e}")]
    IllConditionedE { cond: f64, limit: f64 },
    #[error("E is numerically singular")]
    SingularE,
}

/// Widths of one filter. The residual output is always scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRenDims")]
pub struct RenDims {
    n_z: usize,
    n_v: usize,
    n_in: usize,
}

#[derive(Deserialize)]
struct RawRenDims {
    n_z: usize,
    n_v: usize,
    n_in: usize,
}

impl TryFrom<RawRenDims> for RenDims {
    type Error = RenError;
    fn try_from(r: RawRenDims) -> Result<Self, RenError> {
        RenDims::new(r.n_z, r.n_v, r.n_in)
    }
}

impl RenDims {
    /// Residual width; the filter bank uses scalar residuals throughout.
    pub const N_OUT: usize = 1;

    pub fn new(n_z: usize, n_v: usize, n_in: usize) -> Result<Self, RenError> {
        if n_z < 1 || n_v < 1 || n_in < 1 {
            return Err(RenError::InvalidDims(format!(
                "all widths must be >= 1, got n_z={n_z}, n_v={n_v}, n_in={n_in}"
            )));
        }
        Ok(Self { n_z, n_v, n_in })
    }

    /// State width.
    pub fn n_z(&self) -> usize {
        self.n_z
    }

    /// Neuron count of the equilibrium layer.
    pub fn n_v(&self) -> usize {
        self.n_v
    }

    /// Filter input width (known inputs plus sensor channels).
    pub fn n_in(&self) -> usize {
        self.n_in
    }
}

/// Channel weights of one filter: high gain `beta` on the known inputs and on
/// the designated sensor, low gain `gamma` on every other sensor, and output
/// weight `q`. The ordering `0 < gamma < q < beta` makes `sqrt(beta/q)` the
/// sensitivity allowance for the designated sensor and `sqrt(gamma/q)` the
/// attenuation bound for all the others.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPerformanceSpec")]
pub struct PerformanceSpec {
    beta: f64,
    gamma: f64,
    q: f64,
    sensor_index: usize,
    l: usize,
    m: usize,
}

#[derive(Deserialize)]
struct RawPerformanceSpec {
    beta: f64,
    gamma: f64,
    q: f64,
    sensor_index: usize,
    l: usize,
    m: usize,
}

impl TryFrom<RawPerformanceSpec> for PerformanceSpec {
    type Error = RenError;
    fn try_from(r: RawPerformanceSpec) -> Result<Self, RenError> {
        PerformanceSpec::new(r.beta, r.gamma, r.q, r.sensor_index, r.l, r.m)
    }
}

/// Default sensitivity weight on the designated channel.
pub const DEFAULT_BETA: f64 = 10_000.0;
/// Default attenuation weight on the remaining sensor channels.
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Default residual weight.
pub const DEFAULT_Q: f64 = 100.0;

impl PerformanceSpec {
    pub fn new(
        beta: f64,
        gamma: f64,
        q: f64,
        sensor_index: usize,
        l: usize,
        m: usize,
    ) -> Result<Self, RenError> {
        for (name, v) in [("beta", beta), ("gamma", gamma), ("q", q)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(RenError::InvalidSpec(format!("{name} must be a positive real, got {v}")));
            }
        }
        if !(gamma < q && q < beta) {
            return Err(RenError::InvalidSpec(format!(
                "ordering gamma < q < beta violated: gamma={gamma}, q={q}, beta={beta}"
            )));
        }
        if l < 1 || m < 1 {
            return Err(RenError::InvalidSpec(format!("need l >= 1 and m >= 1, got l={l}, m={m}")));
        }
        if sensor_index < 1 || sensor_index > m {
            return Err(RenError::InvalidSpec(format!(
                "sensor_index must lie in [1, {m}], got {sensor_index}"
            )));
        }
        Ok(Self { beta, gamma, q, sensor_index, l, m })
    }

    /// `beta = 10000, gamma = 1, q = 100` for the given sensor.
    pub fn with_defaults(sensor_index: usize, l: usize, m: usize) -> Result<Self, RenError> {
        Self::new(DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_Q, sensor_index, l, m)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// 1-based index of the sensor this filter is designed for.
    pub fn sensor_index(&self) -> usize {
        self.sensor_index
    }

    /// Number of known-input channels.
    pub fn l(&self) -> usize {
        self.l
    }

    /// Number of sensor channels.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Width of the stacked filter input `col[u, y]`.
    pub fn input_width(&self) -> usize {
        self.l + self.m
    }

    /// Allowed incremental gain from the designated sensor to the residual.
    pub fn sensitivity_gain(&self) -> f64 {
        (self.beta / self.q).sqrt()
    }

    /// Guaranteed attenuation from every other sensor to the residual.
    pub fn insensitivity_gain(&self) -> f64 {
        (self.gamma / self.q).sqrt()
    }
}

/// Builds the diagonal of the input weight `R` and the scalar output weight
/// `Q = -q` for a filter: `R = diag(beta·I_l, gamma·I_{i-1}, beta, gamma·I_{m-i})`.
pub fn build_weight_spec(spec: &PerformanceSpec) -> (Col, f64) {
    let p = spec.input_width();
    let mut r = Col::from_element(p, spec.gamma);
    for k in 0..spec.l {
        r[k] = spec.beta;
    }
    r[spec.l + spec.sensor_index - 1] = spec.beta;
    (r, -spec.q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_spec_designated_sensor_first() {
        let spec = PerformanceSpec::new(10_000.0, 1.0, 100.0, 1, 2, 4).unwrap();
        let (r, q) = build_weight_spec(&spec);
        let expected = [10_000.0, 10_000.0, 10_000.0, 1.0, 1.0, 1.0];
        assert_eq!(r.as_slice(), &expected);
        assert_eq!(q, -100.0);
        assert!(r.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn weight_spec_designated_sensor_second() {
        let spec = PerformanceSpec::new(10_000.0, 1.0, 100.0, 2, 2, 4).unwrap();
        let (r, q) = build_weight_spec(&spec);
        let expected = [10_000.0, 10_000.0, 1.0, 10_000.0, 1.0, 1.0];
        assert_eq!(r.as_slice(), &expected);
        assert_eq!(q, -100.0);
    }

    #[test]
    fn weight_spec_rejects_flat_ordering() {
        assert!(PerformanceSpec::new(1.0, 1.0, 1.0, 1, 1, 1).is_err());
    }

    #[test]
    fn rejects_out_of_range_sensor_and_nonpositive_weights() {
        assert!(PerformanceSpec::new(10_000.0, 1.0, 100.0, 5, 2, 4).is_err());
        assert!(PerformanceSpec::new(10_000.0, 1.0, 100.0, 0, 2, 4).is_err());
        assert!(PerformanceSpec::new(10_000.0, -1.0, 100.0, 1, 2, 4).is_err());
        assert!(PerformanceSpec::new(f64::NAN, 1.0, 100.0, 1, 2, 4).is_err());
    }

    #[test]
    fn dims_reject_zero_widths() {
        assert!(RenDims::new(0, 3, 6).is_err());
        assert!(RenDims::new(2, 0, 6).is_err());
        assert!(RenDims::new(2, 3, 0).is_err());
        assert!(RenDims::new(1, 1, 1).is_ok());
    }

    #[test]
    fn serde_rejects_invalid_spec() {
        let good = r#"{"beta":10000.0,"gamma":1.0,"q":100.0,"sensor_index":1,"l":2,"m":4}"#;
        assert!(serde_json::from_str::<PerformanceSpec>(good).is_ok());
        let bad = r#"{"beta":1.0,"gamma":1.0,"q":1.0,"sensor_index":1,"l":2,"m":4}"#;
        assert!(serde_json::from_str::<PerformanceSpec>(bad).is_err());
    }
}
