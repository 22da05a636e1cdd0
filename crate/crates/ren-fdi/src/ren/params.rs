use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Col, Mat};

use super::spec::{RenDims, RenError};

/// Fixed positive-definiteness margin of the parameterization. Kept constant
/// rather than trained so the certificate slack does not drift during
/// optimization.
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Default upper bound on the contraction rate. Strictly below 1 so the
/// empirical contraction test has a falsifiable target, and small enough that
/// paired trajectories provably collapse far below rounding noise within a
/// 20 s data horizon (0.7^80 ≈ 4e-13); trained filters otherwise settle near
/// whatever rate the bound allows.
pub const DEFAULT_ALPHA_BAR: f64 = 0.7;

/// Unconstrained free parameters of one filter. Any finite value of the
/// trainable fields materializes into a well-posed, contracting network; that
/// is the point of the parameterization and it is what makes plain first-order
/// training safe.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectParams {
    /// Implicit input-to-state map, `n_z × n_in`.
    pub b2_imp: Mat,
    /// Residual read-out of the state, `1 × n_z`.
    pub c2: Mat,
    /// Implicit input-to-neuron map, `n_v × n_in`.
    pub d12_imp: Mat,
    /// Residual read-out of the neurons, `1 × n_v`.
    pub d21: Mat,
    /// Implicit bias, `n_z + n_v + 1` (state, neuron, residual blocks).
    pub eta_tilde: Col,
    /// Cayley-block scalar.
    pub x3: f64,
    /// Cayley-block scalar; inert for scalar residuals (its skew part vanishes)
    /// but kept so the parameter layout matches the general construction.
    pub y3: f64,
    /// Cayley-block tail, length `n_in - 1`.
    pub z3: Col,
    /// Square root factor of the certificate matrix `H`, `(2n_z+n_v) × (2n_z+n_v)`.
    pub x: Mat,
    /// Skew contribution to `E`, `n_z × n_z`.
    pub y1: Mat,
    /// Positive-definiteness margin; fixed, not trained.
    pub epsilon: f64,
    /// Contraction-rate bound in `(0, 1]`; fixed per filter.
    pub alpha_bar: f64,
}

/// Initialization settings shared by the whole bank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    /// Multiplier on the per-field `1/sqrt(fan-in)` scales. Zero gives
    /// all-zero trainables.
    pub scale: f64,
    pub alpha_bar: f64,
    pub epsilon: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            alpha_bar: DEFAULT_ALPHA_BAR,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<(), RenError> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(RenError::InvalidSpec(format!(
                "epsilon must be a positive real, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha_bar > 0.0 && self.alpha_bar <= 1.0) {
            return Err(RenError::InvalidSpec(format!(
                "alpha_bar must lie in (0, 1], got {}",
                self.alpha_bar
            )));
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(RenError::InvalidSpec(format!(
                "init scale must be a finite non-negative real, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

impl DirectParams {
    /// All-zero trainables with the given margin and contraction bound.
    pub fn zeros(dims: &RenDims, epsilon: f64, alpha_bar: f64) -> Self {
        let (nz, nv, ni) = (dims.n_z(), dims.n_v(), dims.n_in());
        Self {
            b2_imp: Mat::zeros(nz, ni),
            c2: Mat::zeros(1, nz),
            d12_imp: Mat::zeros(nv, ni),
            d21: Mat::zeros(1, nv),
            eta_tilde: Col::zeros(nz + nv + 1),
            x3: 0.0,
            y3: 0.0,
            z3: Col::zeros(ni - 1),
            x: Mat::zeros(2 * nz + nv, 2 * nz + nv),
            y1: Mat::zeros(nz, nz),
            epsilon,
            alpha_bar,
        }
    }

    /// State block of the implicit bias.
    pub fn eta_z(&self, dims: &RenDims) -> Col {
        self.eta_tilde.rows(0, dims.n_z()).into_owned()
    }

    /// Neuron block of the implicit bias.
    pub fn eta_v(&self, dims: &RenDims) -> Col {
        self.eta_tilde.rows(dims.n_z(), dims.n_v()).into_owned()
    }

    /// Residual entry of the implicit bias.
    pub fn eta_r(&self, dims: &RenDims) -> f64 {
        self.eta_tilde[dims.n_z() + dims.n_v()]
    }

    pub fn check_shapes(&self, dims: &RenDims) -> Result<(), RenError> {
        let (nz, nv, ni) = (dims.n_z(), dims.n_v(), dims.n_in());
        let gw = 2 * nz + nv;
        let checks: [(&'static str, (usize, usize), (usize, usize)); 7] = [
            ("b2_imp", self.b2_imp.shape(), (nz, ni)),
            ("c2", self.c2.shape(), (1, nz)),
            ("d12_imp", self.d12_imp.shape(), (nv, ni)),
            ("d21", self.d21.shape(), (1, nv)),
            ("eta_tilde", (self.eta_tilde.len(), 1), (nz + nv + 1, 1)),
            ("x", self.x.shape(), (gw, gw)),
            ("y1", self.y1.shape(), (nz, nz)),
        ];
        for (field, got, expected) in checks {
            if got != expected {
                return Err(RenError::ShapeMismatch {
                    field,
                    got: format!("{}x{}", got.0, got.1),
                    expected: format!("{}x{}", expected.0, expected.1),
                });
            }
        }
        if self.z3.len() != ni - 1 {
            return Err(RenError::ShapeMismatch {
                field: "z3",
                got: format!("{}", self.z3.len()),
                expected: format!("{}", ni - 1),
            });
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<(), RenError> {
        let all_finite = |m: &Mat| m.iter().all(|v| v.is_finite());
        if !all_finite(&self.b2_imp) {
            return Err(RenError::NonFinite("b2_imp"));
        }
        if !all_finite(&self.c2) {
            return Err(RenError::NonFinite("c2"));
        }
        if !all_finite(&self.d12_imp) {
            return Err(RenError::NonFinite("d12_imp"));
        }
        if !all_finite(&self.d21) {
            return Err(RenError::NonFinite("d21"));
        }
        if !self.eta_tilde.iter().all(|v| v.is_finite()) {
            return Err(RenError::NonFinite("eta_tilde"));
        }
        if !self.x3.is_finite() {
            return Err(RenError::NonFinite("x3"));
        }
        if !self.y3.is_finite() {
            return Err(RenError::NonFinite("y3"));
        }
        if !self.z3.iter().all(|v| v.is_finite()) {
            return Err(RenError::NonFinite("z3"));
        }
        if !all_finite(&self.x) {
            return Err(RenError::NonFinite("x"));
        }
        if !all_finite(&self.y1) {
            return Err(RenError::NonFinite("y1"));
        }
        if !self.epsilon.is_finite() || !self.alpha_bar.is_finite() {
            return Err(RenError::NonFinite("epsilon/alpha_bar"));
        }
        Ok(())
    }

    /// Number of trainable scalars for the given dims.
    pub fn trainable_len(dims: &RenDims) -> usize {
        let (nz, nv, ni) = (dims.n_z(), dims.n_v(), dims.n_in());
        let gw = 2 * nz + nv;
        nz * ni + nz + nv * ni + nv + (nz + nv + 1) + 1 + 1 + (ni - 1) + gw * gw + nz * nz
    }

    /// Flattens the trainable fields in the documented order:
    /// `b2_imp, c2, d12_imp, d21, eta_tilde, x3, y3, z3, x, y1`,
    /// matrices row-major. `epsilon` and `alpha_bar` are not included.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        push_row_major(&mut out, &self.b2_imp);
        push_row_major(&mut out, &self.c2);
        push_row_major(&mut out, &self.d12_imp);
        push_row_major(&mut out, &self.d21);
        out.extend(self.eta_tilde.iter());
        out.push(self.x3);
        out.push(self.y3);
        out.extend(self.z3.iter());
        push_row_major(&mut out, &self.x);
        push_row_major(&mut out, &self.y1);
        out
    }

    /// Inverse of [`DirectParams::to_flat`]. Panics if the slice length does
    /// not match the parameter shapes.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut pos = 0usize;
        take_row_major(flat, &mut pos, &mut self.b2_imp);
        take_row_major(flat, &mut pos, &mut self.c2);
        take_row_major(flat, &mut pos, &mut self.d12_imp);
        take_row_major(flat, &mut pos, &mut self.d21);
        for i in 0..self.eta_tilde.len() {
            self.eta_tilde[i] = flat[pos];
            pos += 1;
        }
        self.x3 = flat[pos];
        pos += 1;
        self.y3 = flat[pos];
        pos += 1;
        for i in 0..self.z3.len() {
            self.z3[i] = flat[pos];
            pos += 1;
        }
        take_row_major(flat, &mut pos, &mut self.x);
        take_row_major(flat, &mut pos, &mut self.y1);
        assert_eq!(pos, flat.len(), "flat parameter length mismatch");
    }
}

pub(crate) fn push_row_major(out: &mut Vec<f64>, m: &Mat) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

fn take_row_major(flat: &[f64], pos: &mut usize, m: &mut Mat) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] = flat[*pos];
            *pos += 1;
        }
    }
}

/// Draws fresh free parameters. Every field is sampled i.i.d. normal with
/// standard deviation `scale / sqrt(fan-in)` (biases use a small fixed scale),
/// so the same seed always yields the same parameters.
pub fn init_params(dims: &RenDims, cfg: &InitConfig, seed: u64) -> Result<DirectParams, RenError> {
    cfg.validate()?;
    let (nz, nv, ni) = (dims.n_z(), dims.n_v(), dims.n_in());
    let gw = 2 * nz + nv;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |sigma: f64| -> f64 {
        let g: f64 = StandardNormal.sample(&mut rng);
        sigma * g
    };
    let fill = |rows: usize, cols: usize, sigma: f64, draw: &mut dyn FnMut(f64) -> f64| {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = draw(sigma);
            }
        }
        m
    };

    let s = cfg.scale;
    let b2_imp = fill(nz, ni, s / (ni as f64).sqrt(), &mut draw);
    let c2 = fill(1, nz, s / (nz as f64).sqrt(), &mut draw);
    let d12_imp = fill(nv, ni, s / (ni as f64).sqrt(), &mut draw);
    let d21 = fill(1, nv, s / (nv as f64).sqrt(), &mut draw);
    let eta_tilde = DVector::from_fn(nz + nv + 1, |_, _| draw(0.01 * s));
    let x3 = draw(s);
    let y3 = draw(s);
    let z3 = DVector::from_fn(ni - 1, |_, _| draw(s / (ni as f64).sqrt()));
    let x = fill(gw, gw, s / (gw as f64).sqrt(), &mut draw);
    let y1 = fill(nz, nz, s / (nz as f64).sqrt(), &mut draw);

    Ok(DirectParams {
        b2_imp,
        c2,
        d12_imp,
        d21,
        eta_tilde,
        x3,
        y3,
        z3,
        x,
        y1,
        epsilon: cfg.epsilon,
        alpha_bar: cfg.alpha_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> RenDims {
        RenDims::new(3, 5, 6).unwrap()
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = InitConfig::default();
        let a = init_params(&dims(), &cfg, 7).unwrap();
        let b = init_params(&dims(), &cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = init_params(&dims(), &cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_scale_gives_zero_trainables() {
        let cfg = InitConfig {
            scale: 0.0,
            ..InitConfig::default()
        };
        let p = init_params(&dims(), &cfg, 3).unwrap();
        assert!(p.to_flat().iter().all(|&v| v == 0.0));
        assert_eq!(p.epsilon, DEFAULT_EPSILON);
    }

    #[test]
    fn flat_round_trip() {
        let p = init_params(&dims(), &InitConfig::default(), 11).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), DirectParams::trainable_len(&dims()));
        let mut q = DirectParams::zeros(&dims(), p.epsilon, p.alpha_bar);
        q.set_from_flat(&flat);
        assert_eq!(p, q);
    }

    #[test]
    fn finite_and_shape_checks() {
        let mut p = init_params(&dims(), &InitConfig::default(), 1).unwrap();
        assert!(p.check_shapes(&dims()).is_ok());
        assert!(p.check_finite().is_ok());
        p.x3 = f64::NAN;
        assert!(matches!(p.check_finite(), Err(RenError::NonFinite("x3"))));
        let other = RenDims::new(4, 5, 6).unwrap();
        assert!(init_params(&dims(), &InitConfig::default(), 1)
            .unwrap()
            .check_shapes(&other)
            .is_err());
    }

    #[test]
    fn init_config_validation() {
        assert!(InitConfig { scale: 1.0, alpha_bar: 0.0, epsilon: 1e-4 }.validate().is_err());
        assert!(InitConfig { scale: 1.0, alpha_bar: 1.5, epsilon: 1e-4 }.validate().is_err());
        assert!(InitConfig { scale: 1.0, alpha_bar: 1.0, epsilon: 0.0 }.validate().is_err());
        assert!(InitConfig { scale: -1.0, alpha_bar: 0.9, epsilon: 1e-4 }.validate().is_err());
        assert!(InitConfig::default().validate().is_ok());
    }
}
