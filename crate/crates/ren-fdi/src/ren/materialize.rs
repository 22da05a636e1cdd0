use nalgebra::linalg::{Cholesky, LU};
use nalgebra::Dyn;

use crate::{Col, Mat};

use super::params::DirectParams;
use super::spec::{build_weight_spec, PerformanceSpec, RenDims, RenError};

/// Condition-estimate threshold above which the state solve `E^{-1}` is
/// rejected as numerically singular.
pub const E_CONDITION_LIMIT: f64 = 1e12;

/// Explicit filter weights. Produced only by [`materialize`]; the fields are
/// public for inspection but production code never assembles one by hand.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitRen {
    pub dims: RenDims,
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    /// Strictly lower triangular neuron coupling; the acyclic structure is
    /// what makes the equilibrium layer solvable by forward substitution.
    pub d11: Mat,
    pub d12: Mat,
    pub c2: Mat,
    pub d21: Mat,
    pub d22: Mat,
    pub bias_z: Col,
    pub bias_v: Col,
    pub bias_r: f64,
}

impl ExplicitRen {
    /// True iff every entry on or above the diagonal of `D11` is exactly zero.
    pub fn d11_strictly_lower(&self) -> bool {
        let n = self.d11.nrows();
        for i in 0..n {
            for j in i..n {
                if self.d11[(i, j)] != 0.0 {
                    return false;
                }
            }
        }
        true
    }
}

/// Intermediates of the materialization pipeline, kept for the reverse-mode
/// gradient and for the well-posedness report.
pub(crate) struct MaterializeTrace {
    /// Diagonal of the Cholesky factor of `R` (square roots of the channel
    /// weights).
    pub l_r: Col,
    /// Positive output weight `q` (so `Q = -q`).
    pub q: f64,
    pub sqrt_q: f64,
    pub m_scalar: f64,
    /// Cayley row `N`, `1 × n_in`; its Euclidean norm is below 1 by
    /// construction.
    pub n_row: Mat,
    pub r_cal_chol: Cholesky<f64, Dyn>,
    /// Stacked implicit couplings `[C2cal'; D21cal'; B2_imp]`.
    pub g_stack: Mat,
    /// `K = Rcal^{-1} G'`.
    pub k_sol: Mat,
    pub h: Mat,
    /// Smallest squared diagonal entry of the Cholesky factor of `H`;
    /// `None` when the factorization failed.
    pub h_min_pivot: Option<f64>,
    pub lambda: Col,
    pub e_mat: Mat,
    pub e_cond: f64,
    pub explicit: ExplicitRen,
}

impl MaterializeTrace {
    /// Enforces the construction certificates. A failure here indicates an
    /// implementation bug, not a bad parameter value: the pipeline guarantees
    /// all of them for every finite input.
    pub fn certify(&self) -> Result<(), RenError> {
        if self.h_min_pivot.is_none() {
            return Err(RenError::HNotPositiveDefinite);
        }
        let lambda_min = self.lambda.min();
        if !(lambda_min > 0.0) {
            return Err(RenError::LambdaNotPositive { min: lambda_min });
        }
        if !(self.e_cond < E_CONDITION_LIMIT) {
            return Err(RenError::IllConditionedE {
                cond: self.e_cond,
                limit: E_CONDITION_LIMIT,
            });
        }
        Ok(())
    }
}

/// Runs the full direct-parameterization pipeline and returns the trace.
///
/// Steps, for scalar residual width:
/// 1. Cholesky factors of the channel weights: `L_R = sqrt(R)` (diagonal),
///    `L_Q = sqrt(q)`.
/// 2. Cayley block: `M = X3² + |Z3|² + ε`,
///    `N = [(1-M)/(1+M), -2·Z3'/(1+M)]`, `D22 = L_Q^{-1} N L_R`. The `|Z3|²`
///    term keeps `|N| < 1` for every finite `Z3`; together with step 1 this
///    bounds the direct feedthrough gain.
/// 3. Implicit output couplings `C2cal = D22'·Q·C2`,
///    `D21cal = D22'·Q·D21 - D12_imp'` and `Rcal = R + D22'·Q·D22`, which is
///    positive definite because `|N| < 1`.
/// 4. Certificate matrix
///    `H = X'X + εI + G·Rcal^{-1}·G' - [C2'; D21'; 0]·Q·[C2'; D21'; 0]'`
///    with `G = [C2cal'; D21cal'; B2_imp]`; positive definite by construction
///    (`Q < 0` makes the last term add a positive rank-one piece).
/// 5. Partition `H` into 3×3 blocks of row sizes `(n_z, n_v, n_z)`. Split
///    `H22 = Φ - L - L'` with `Φ` diagonal and `L` strictly lower triangular;
///    `Λ = Φ/2`, implicit `D11 = L`.
/// 6. `F = H31`, `B1cal = H32`, `C1cal = -H21`,
///    `E = (H11 + ᾱ^{-2}·H33 + Y1 - Y1')/2`; `E + E'` is positive definite,
///    so `E` is invertible.
/// 7. Explicit weights: left-multiply the state row by `E^{-1}` and the
///    neuron row by `Λ^{-1}`; the output row carries over unchanged.
pub(crate) fn trace(
    dims: &RenDims,
    spec: &PerformanceSpec,
    p: &DirectParams,
) -> Result<MaterializeTrace, RenError> {
    if spec.input_width() != dims.n_in() {
        return Err(RenError::InvalidDims(format!(
            "spec input width {} does not match dims n_in {}",
            spec.input_width(),
            dims.n_in()
        )));
    }
    p.check_shapes(dims)?;
    p.check_finite()?;
    if !(p.epsilon > 0.0) {
        return Err(RenError::InvalidSpec(format!("epsilon must be positive, got {}", p.epsilon)));
    }
    if !(p.alpha_bar > 0.0 && p.alpha_bar <= 1.0) {
        return Err(RenError::InvalidSpec(format!(
            "alpha_bar must lie in (0, 1], got {}",
            p.alpha_bar
        )));
    }

    let (nz, nv, ni) = (dims.n_z(), dims.n_v(), dims.n_in());
    let gw = 2 * nz + nv;
    let (r_diag, q_neg) = build_weight_spec(spec);
    let q = -q_neg;
    let l_r = r_diag.map(f64::sqrt);
    let sqrt_q = q.sqrt();

    // Cayley block.
    let m_scalar = p.x3 * p.x3 + p.z3.norm_squared() + p.epsilon;
    let denom = 1.0 + m_scalar;
    let mut n_row = Mat::zeros(1, ni);
    n_row[(0, 0)] = (1.0 - m_scalar) / denom;
    for j in 0..ni - 1 {
        n_row[(0, j + 1)] = -2.0 * p.z3[j] / denom;
    }
    let mut d22 = Mat::zeros(1, ni);
    for j in 0..ni {
        d22[(0, j)] = n_row[(0, j)] * l_r[j] / sqrt_q;
    }

    // Implicit output couplings.
    let c2_cal = d22.transpose() * &p.c2 * (-q);
    let d21_cal = d22.transpose() * &p.d21 * (-q) - p.d12_imp.transpose();
    let r_cal = Mat::from_diagonal(&r_diag) - (d22.transpose() * &d22) * q;
    let r_cal_chol = Cholesky::new(r_cal.clone()).ok_or(RenError::RcalNotPositiveDefinite)?;

    // Certificate matrix H.
    let mut g_stack = Mat::zeros(gw, ni);
    g_stack.view_mut((0, 0), (nz, ni)).copy_from(&c2_cal.transpose());
    g_stack.view_mut((nz, 0), (nv, ni)).copy_from(&d21_cal.transpose());
    g_stack.view_mut((nz + nv, 0), (nz, ni)).copy_from(&p.b2_imp);
    let k_sol = r_cal_chol.solve(&g_stack.transpose());
    let t_mat = &g_stack * &k_sol;

    let mut cvec = Mat::zeros(gw, 1);
    cvec.view_mut((0, 0), (nz, 1)).copy_from(&p.c2.transpose());
    cvec.view_mut((nz, 0), (nv, 1)).copy_from(&p.d21.transpose());

    let h = p.x.transpose() * &p.x
        + Mat::identity(gw, gw) * p.epsilon
        + t_mat
        + (&cvec * cvec.transpose()) * q;

    let h_min_pivot = Cholesky::new(h.clone()).map(|ch| {
        let d = ch.l_dirty().diagonal();
        d.iter().fold(f64::INFINITY, |acc, &v| acc.min(v * v))
    });

    // Partition and split.
    let h11 = h.view((0, 0), (nz, nz)).into_owned();
    let h21 = h.view((nz, 0), (nv, nz)).into_owned();
    let h22 = h.view((nz, nz), (nv, nv)).into_owned();
    let h31 = h.view((nz + nv, 0), (nz, nz)).into_owned();
    let h32 = h.view((nz + nv, nz), (nz, nv)).into_owned();
    let h33 = h.view((nz + nv, nz + nv), (nz, nz)).into_owned();

    let lambda = h22.diagonal() * 0.5;
    let mut l_strict = Mat::zeros(nv, nv);
    for i in 0..nv {
        for j in 0..i {
            l_strict[(i, j)] = -h22[(i, j)];
        }
    }

    let alpha_sq_inv = 1.0 / (p.alpha_bar * p.alpha_bar);
    let e_mat = (h11 + h33 * alpha_sq_inv + &p.y1 - p.y1.transpose()) * 0.5;
    let sv = e_mat.clone().svd(false, false).singular_values;
    let (sv_max, sv_min) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| {
        (hi.max(s), lo.min(s))
    });
    let e_cond = if sv_min > 0.0 { sv_max / sv_min } else { f64::INFINITY };
    let e_lu = LU::new(e_mat.clone());

    // Explicit state row: one solve with stacked right-hand sides.
    let mut rhs = Mat::zeros(nz, nz + nv + ni + 1);
    rhs.view_mut((0, 0), (nz, nz)).copy_from(&h31);
    rhs.view_mut((0, nz), (nz, nv)).copy_from(&h32);
    rhs.view_mut((0, nz + nv), (nz, ni)).copy_from(&p.b2_imp);
    rhs.view_mut((0, nz + nv + ni), (nz, 1)).copy_from(&p.eta_z(dims));
    let sol = e_lu.solve(&rhs).ok_or(RenError::SingularE)?;
    let a = sol.view((0, 0), (nz, nz)).into_owned();
    let b1 = sol.view((0, nz), (nz, nv)).into_owned();
    let b2 = sol.view((0, nz + nv), (nz, ni)).into_owned();
    let bias_z = sol.column(nz + nv + ni).into_owned();

    // Explicit neuron row: diagonal scaling by 1/Λ.
    let scale_rows = |m: &Mat| -> Mat {
        let mut out = m.clone();
        for i in 0..nv {
            let inv = 1.0 / lambda[i];
            for j in 0..out.ncols() {
                out[(i, j)] *= inv;
            }
        }
        out
    };
    let c1 = scale_rows(&(-&h21));
    let d11 = scale_rows(&l_strict);
    let d12 = scale_rows(&p.d12_imp);
    let eta_v = p.eta_v(dims);
    let bias_v = Col::from_fn(nv, |i, _| eta_v[i] / lambda[i]);

    let explicit = ExplicitRen {
        dims: *dims,
        a,
        b1,
        b2,
        c1,
        d11,
        d12,
        c2: p.c2.clone(),
        d21: p.d21.clone(),
        d22,
        bias_z,
        bias_v,
        bias_r: p.eta_r(dims),
    };

    Ok(MaterializeTrace {
        l_r,
        q,
        sqrt_q,
        m_scalar,
        n_row,
        r_cal_chol,
        g_stack,
        k_sol,
        h,
        h_min_pivot,
        lambda,
        e_mat,
        e_cond,
        explicit,
    })
}

/// Maps free parameters to explicit filter weights, enforcing the
/// construction certificates (`H` positive definite, `Λ > 0`, `E` well
/// conditioned) along the way.
pub fn materialize(
    dims: &RenDims,
    spec: &PerformanceSpec,
    params: &DirectParams,
) -> Result<ExplicitRen, RenError> {
    let tr = trace(dims, spec, params)?;
    tr.certify()?;
    Ok(tr.explicit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ren::params::{DirectParams, InitConfig, DEFAULT_ALPHA_BAR};
    use crate::ren::{init_params, PerformanceSpec};
    use approx::assert_relative_eq;

    fn small() -> (RenDims, PerformanceSpec) {
        (
            RenDims::new(3, 5, 6).unwrap(),
            PerformanceSpec::with_defaults(1, 2, 4).unwrap(),
        )
    }

    #[test]
    fn cayley_step_matches_closed_form() {
        // With zero free variables, M = ε and N collapses to a single entry:
        // N = [(1-ε)/(1+ε), 0, ...], so D22 = N · L_R / sqrt(q) entrywise.
        let ni = 4;
        let eps = 1e-4;
        let m = eps;
        let n0 = (1.0 - m) / (1.0 + m);
        let dims = RenDims::new(2, 3, ni).unwrap();
        let spec = PerformanceSpec::new(4.0, 1.0, 2.0, 1, 1, 3).unwrap();
        let p = DirectParams::zeros(&dims, eps, DEFAULT_ALPHA_BAR);
        let tr = trace(&dims, &spec, &p).unwrap();
        assert_relative_eq!(tr.m_scalar, m);
        assert_relative_eq!(tr.n_row[(0, 0)], n0);
        for j in 1..ni {
            assert_eq!(tr.n_row[(0, j)], 0.0);
        }
        // D22 = N * L_R / sqrt(q): first channel weight is beta = 4.
        assert_relative_eq!(tr.explicit.d22[(0, 0)], n0 * 2.0 / 2.0f64.sqrt());
        for j in 1..ni {
            assert_eq!(tr.explicit.d22[(0, j)], 0.0);
        }
    }

    #[test]
    fn zero_trainables_give_h_equal_eps_identity() {
        let (dims, spec) = small();
        let p = DirectParams::zeros(&dims, 1e-4, DEFAULT_ALPHA_BAR);
        let tr = trace(&dims, &spec, &p).unwrap();
        let gw = 2 * dims.n_z() + dims.n_v();
        for i in 0..gw {
            for j in 0..gw {
                let expected = if i == j { 1e-4 } else { 0.0 };
                assert_relative_eq!(tr.h[(i, j)], expected, max_relative = 1e-12);
            }
        }
        let pivot = tr.h_min_pivot.unwrap();
        assert_relative_eq!(pivot, 1e-4, max_relative = 1e-9);
        assert!(tr.lambda.min() > 0.0);
        assert!(tr.certify().is_ok());
        // Zero couplings materialize to a zero state map.
        assert!(tr.explicit.a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn materialize_succeeds_and_bounds_cayley_norm_over_random_draws() {
        let (dims, spec) = small();
        for seed in 0..100u64 {
            let p = init_params(&dims, &InitConfig::default(), seed).unwrap();
            let tr = trace(&dims, &spec, &p).unwrap();
            tr.certify().unwrap();
            assert!(tr.explicit.d11_strictly_lower(), "seed {seed}");

            // Power-iteration oracle on N recovered from the materialized D22:
            // N = L_Q · D22 · L_R^{-1}.
            let ni = dims.n_in();
            let mut n_rec = Mat::zeros(1, ni);
            for j in 0..ni {
                n_rec[(0, j)] = tr.sqrt_q * tr.explicit.d22[(0, j)] / tr.l_r[j];
            }
            let gram = n_rec.transpose() * &n_rec;
            let mut v = Col::from_element(ni, 1.0 / (ni as f64).sqrt());
            let mut sigma_sq = 0.0;
            for _ in 0..200 {
                let w = &gram * &v;
                sigma_sq = w.norm();
                if sigma_sq == 0.0 {
                    break;
                }
                v = w / sigma_sq;
            }
            let sigma = sigma_sq.sqrt();
            assert!(sigma < 1.0, "seed {seed}: sigma_max(N) = {sigma}");
            assert_relative_eq!(sigma, tr.n_row.norm(), max_relative = 1e-10);
        }
    }

    #[test]
    fn rejects_mismatched_spec_and_dims() {
        let dims = RenDims::new(3, 5, 7).unwrap();
        let spec = PerformanceSpec::with_defaults(1, 2, 4).unwrap();
        let p = DirectParams::zeros(&dims, 1e-4, 0.95);
        assert!(matches!(trace(&dims, &spec, &p), Err(RenError::InvalidDims(_))));
    }

    #[test]
    fn rejects_non_finite_params() {
        let (dims, spec) = small();
        let mut p = DirectParams::zeros(&dims, 1e-4, 0.95);
        p.x[(0, 0)] = f64::INFINITY;
        assert!(matches!(materialize(&dims, &spec, &p), Err(RenError::NonFinite("x"))));
    }
}
