//! Reverse-mode differentiation of the tracking cost: backpropagation through
//! the rollout (the recurrence and the forward-substituted equilibrium layer)
//! chained with the adjoint of the materialization pipeline (matrix solves,
//! the certificate-matrix assembly and the Cayley block). The result is the
//! exact gradient with respect to the free parameters; agreement with central
//! finite differences is enforced by tests and by optional spot checks during
//! training.

use nalgebra::linalg::LU;

use crate::ren::{DirectParams, ExplicitRen, MaterializeTrace, RenDims};
use crate::{Col, Mat};

/// Gradients with respect to the explicit weights of one filter.
pub(crate) struct ExplicitGrads {
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    pub d11: Mat,
    pub d12: Mat,
    pub c2: Mat,
    pub d21: Mat,
    pub d22: Mat,
    pub bias_z: Col,
    pub bias_v: Col,
    pub bias_r: f64,
}

impl ExplicitGrads {
    pub fn zeros(dims: &RenDims) -> Self {
        let (nz, nv, ni) = (dims.n_z(), dims.n_v(), dims.n_in());
        Self {
            a: Mat::zeros(nz, nz),
            b1: Mat::zeros(nz, nv),
            b2: Mat::zeros(nz, ni),
            c1: Mat::zeros(nv, nz),
            d11: Mat::zeros(nv, nv),
            d12: Mat::zeros(nv, ni),
            c2: Mat::zeros(1, nz),
            d21: Mat::zeros(1, nv),
            d22: Mat::zeros(1, ni),
            bias_z: Col::zeros(nz),
            bias_v: Col::zeros(nv),
            bias_r: 0.0,
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        self.a += &other.a;
        self.b1 += &other.b1;
        self.b2 += &other.b2;
        self.c1 += &other.c1;
        self.d11 += &other.d11;
        self.d12 += &other.d12;
        self.c2 += &other.c2;
        self.d21 += &other.d21;
        self.d22 += &other.d22;
        self.bias_z += &other.bias_z;
        self.bias_v += &other.bias_v;
        self.bias_r += other.bias_r;
    }
}

/// Gradient of the cost with respect to the trainable fields, in the same
/// shapes as [`DirectParams`].
#[derive(Clone, Debug)]
pub struct DirectGrads {
    pub b2_imp: Mat,
    pub c2: Mat,
    pub d12_imp: Mat,
    pub d21: Mat,
    pub eta_tilde: Col,
    pub x3: f64,
    pub y3: f64,
    pub z3: Col,
    pub x: Mat,
    pub y1: Mat,
}

impl DirectGrads {
    pub fn zeros(dims: &RenDims) -> Self {
        let (nz, nv, ni) = (dims.n_z(), dims.n_v(), dims.n_in());
        let gw = 2 * nz + nv;
        Self {
            b2_imp: Mat::zeros(nz, ni),
            c2: Mat::zeros(1, nz),
            d12_imp: Mat::zeros(nv, ni),
            d21: Mat::zeros(1, nv),
            eta_tilde: Col::zeros(nz + nv + 1),
            x3: 0.0,
            y3: 0.0,
            z3: Col::zeros(ni - 1),
            x: Mat::zeros(gw, gw),
            y1: Mat::zeros(nz, nz),
        }
    }

    /// Same layout as [`DirectParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        crate::ren::push_row_major(&mut out, &self.b2_imp);
        crate::ren::push_row_major(&mut out, &self.c2);
        crate::ren::push_row_major(&mut out, &self.d12_imp);
        crate::ren::push_row_major(&mut out, &self.d21);
        out.extend(self.eta_tilde.iter());
        out.push(self.x3);
        out.push(self.y3);
        out.extend(self.z3.iter());
        crate::ren::push_row_major(&mut out, &self.x);
        crate::ren::push_row_major(&mut out, &self.y1);
        out
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Forward rollout with cached states plus reverse sweep for one scenario.
/// Returns the windowed squared-error loss and the gradients with respect to
/// the explicit weights.
pub(crate) fn scenario_loss_grad(
    ren: &ExplicitRen,
    inputs: &[Col],
    target: &[f64],
    k0: usize,
) -> (f64, ExplicitGrads) {
    let t_len = inputs.len();
    let (nz, nv) = (ren.dims.n_z(), ren.dims.n_v());

    // Forward, caching states and neuron outputs.
    let mut z_hist = Vec::with_capacity(t_len + 1);
    let mut w_hist = Vec::with_capacity(t_len);
    let mut r_hist = Vec::with_capacity(t_len);
    z_hist.push(Col::zeros(nz));
    for u in inputs {
        let (z_next, r, w) = crate::ren::step(ren, z_hist.last().unwrap(), u);
        z_hist.push(z_next);
        w_hist.push(w);
        r_hist.push(r);
    }

    let mut loss = 0.0;
    for k in k0..t_len {
        let e = r_hist[k] - target[k];
        loss += e * e;
    }

    // Reverse sweep.
    let a_t = ren.a.transpose();
    let b1_t = ren.b1.transpose();
    let c1_t = ren.c1.transpose();
    let c2_col = ren.c2.row(0).transpose();
    let d21_col = ren.d21.row(0).transpose();

    let mut g = ExplicitGrads::zeros(&ren.dims);
    let mut z_bar = Col::zeros(nz); // dJ/dz(k+1), starts at zero for k+1 = T
    let mut v_bar = Col::zeros(nv);
    for k in (0..t_len).rev() {
        let r_bar = if k >= k0 { 2.0 * (r_hist[k] - target[k]) } else { 0.0 };
        let z_k = &z_hist[k];
        let w_k = &w_hist[k];
        let u_k = &inputs[k];

        // z(k+1) = A z(k) + B1 w(k) + B2 u(k) + bias_z
        g.a += &z_bar * z_k.transpose();
        g.b1 += &z_bar * w_k.transpose();
        g.b2 += &z_bar * u_k.transpose();
        g.bias_z += &z_bar;

        // Total derivative wrt w(k): output row plus next-state row.
        let w_bar = &d21_col * r_bar + &b1_t * &z_bar;

        // Equilibrium layer backward, mirroring the forward substitution:
        // w_j feeds v_i for i > j, and tanh'(v) = 1 - w².
        for kk in (0..nv).rev() {
            let mut acc = w_bar[kk];
            for j in kk + 1..nv {
                acc += ren.d11[(j, kk)] * v_bar[j];
            }
            v_bar[kk] = acc * (1.0 - w_k[kk] * w_k[kk]);
        }

        g.c1 += &v_bar * z_k.transpose();
        for i in 0..nv {
            for j in 0..i {
                g.d11[(i, j)] += v_bar[i] * w_k[j];
            }
        }
        g.d12 += &v_bar * u_k.transpose();
        g.bias_v += &v_bar;

        g.c2 += z_k.transpose() * r_bar;
        g.d21 += w_k.transpose() * r_bar;
        g.d22 += u_k.transpose() * r_bar;
        g.bias_r += r_bar;

        z_bar = &a_t * &z_bar + &c2_col * r_bar + &c1_t * &v_bar;
    }

    (loss, g)
}

/// Pulls explicit-weight gradients back through the materialization pipeline.
/// Mirrors the forward steps of [`crate::ren::trace`] in reverse order.
pub(crate) fn materialize_adjoint(
    tr: &MaterializeTrace,
    p: &DirectParams,
    eg: &ExplicitGrads,
) -> DirectGrads {
    let ren = &tr.explicit;
    let dims = &ren.dims;
    let (nz, nv, ni) = (dims.n_z(), dims.n_v(), dims.n_in());
    let gw = 2 * nz + nv;
    let q = tr.q;
    let mut out = DirectGrads::zeros(dims);

    // State row: A = E^{-1} F etc. Solve E' S = [Ā | B̄1 | B̄2 | b̄z] once.
    let mut rhs = Mat::zeros(nz, nz + nv + ni + 1);
    rhs.view_mut((0, 0), (nz, nz)).copy_from(&eg.a);
    rhs.view_mut((0, nz), (nz, nv)).copy_from(&eg.b1);
    rhs.view_mut((0, nz + nv), (nz, ni)).copy_from(&eg.b2);
    rhs.view_mut((0, nz + nv + ni), (nz, 1)).copy_from(&eg.bias_z);
    let e_t_lu = LU::new(tr.e_mat.transpose());
    let s = e_t_lu.solve(&rhs).expect("E' solve in adjoint");
    let f_bar = s.view((0, 0), (nz, nz)).into_owned();
    let b1cal_bar = s.view((0, nz), (nz, nv)).into_owned();
    let b2_from_e = s.view((0, nz + nv), (nz, ni)).into_owned();
    let eta_z_bar = s.column(nz + nv + ni).into_owned();

    // Ē = -(S_A A' + S_B1 B1' + S_B2 B2' + s_bz bias_z')
    let e_bar = -(&f_bar * ren.a.transpose()
        + &b1cal_bar * ren.b1.transpose()
        + &b2_from_e * ren.b2.transpose()
        + &eta_z_bar * ren.bias_z.transpose());

    out.b2_imp += &b2_from_e;

    // Neuron row: C1 = Λ^{-1} C1cal etc. Row scaling plus the Λ adjoint
    // collected from all four right-hand sides.
    let scale_rows = |m: &Mat| -> Mat {
        let mut r = m.clone();
        for i in 0..nv {
            let inv = 1.0 / tr.lambda[i];
            for j in 0..r.ncols() {
                r[(i, j)] *= inv;
            }
        }
        r
    };
    let c1cal_bar = scale_rows(&eg.c1);
    let l_bar = scale_rows(&eg.d11);
    out.d12_imp += scale_rows(&eg.d12);
    let mut lambda_bar = Col::zeros(nv);
    for i in 0..nv {
        let mut dot = ren.bias_v[i] * eg.bias_v[i];
        for j in 0..nz {
            dot += ren.c1[(i, j)] * eg.c1[(i, j)];
        }
        for j in 0..i {
            dot += ren.d11[(i, j)] * eg.d11[(i, j)];
        }
        for j in 0..ni {
            dot += ren.d12[(i, j)] * eg.d12[(i, j)];
        }
        lambda_bar[i] = -dot / tr.lambda[i];
    }
    let eta_v_bar = Col::from_fn(nv, |i, _| eg.bias_v[i] / tr.lambda[i]);

    // Output row carries over unchanged.
    let mut c2_bar = eg.c2.clone();
    let mut d21_bar = eg.d21.clone();
    let mut d22_bar = eg.d22.clone();
    let eta_r_bar = eg.bias_r;

    // Assemble H̄ from the blocks the forward pass read.
    let mut h_bar = Mat::zeros(gw, gw);
    let alpha_sq_inv = 1.0 / (p.alpha_bar * p.alpha_bar);
    {
        let half_e = &e_bar * 0.5;
        let mut h11 = h_bar.view_mut((0, 0), (nz, nz));
        h11 += &half_e;
    }
    {
        let scaled = &e_bar * (0.5 * alpha_sq_inv);
        let mut h33 = h_bar.view_mut((nz + nv, nz + nv), (nz, nz));
        h33 += &scaled;
    }
    out.y1 += (&e_bar - e_bar.transpose()) * 0.5;
    {
        let mut h31 = h_bar.view_mut((nz + nv, 0), (nz, nz));
        h31 += &f_bar;
    }
    {
        let mut h32 = h_bar.view_mut((nz + nv, nz), (nz, nv));
        h32 += &b1cal_bar;
    }
    {
        let mut h21 = h_bar.view_mut((nz, 0), (nv, nz));
        h21 -= &c1cal_bar;
    }
    // H22 = Φ - L - L': Λ = Φ/2 reads the diagonal, L the strict lower part.
    for i in 0..nv {
        h_bar[(nz + i, nz + i)] += 0.5 * lambda_bar[i];
        for j in 0..i {
            h_bar[(nz + i, nz + j)] -= l_bar[(i, j)];
        }
    }

    // H = X'X + εI + T + q·c·c'
    let h_bar_sym = &h_bar + h_bar.transpose();
    out.x += &p.x * &h_bar_sym;
    let mut cvec = Mat::zeros(gw, 1);
    cvec.view_mut((0, 0), (nz, 1)).copy_from(&p.c2.transpose());
    cvec.view_mut((nz, 0), (nv, 1)).copy_from(&p.d21.transpose());
    let c_bar = &h_bar_sym * &cvec * q;
    c2_bar += c_bar.view((0, 0), (nz, 1)).transpose();
    d21_bar += c_bar.view((nz, 0), (nv, 1)).transpose();

    // T = G K with K = Rcal^{-1} G'.
    let t_bar = h_bar;
    let mut g_bar = &t_bar * tr.k_sol.transpose();
    let k_bar = tr.g_stack.transpose() * &t_bar;
    let w_sol = tr.r_cal_chol.solve(&k_bar);
    g_bar += w_sol.transpose();
    let rcal_bar = -(&w_sol * tr.k_sol.transpose());

    // Unstack G = [C2cal'; D21cal'; B2_imp].
    let c2cal_bar = g_bar.view((0, 0), (nz, ni)).transpose();
    let d21cal_bar = g_bar.view((nz, 0), (nv, ni)).transpose();
    out.b2_imp += g_bar.view((nz + nv, 0), (nz, ni)).into_owned();

    // C2cal = -q D22' C2, D21cal = -q D22' D21 - D12_imp',
    // Rcal = R - q D22' D22.
    d22_bar += (&p.c2 * c2cal_bar.transpose()) * (-q);
    c2_bar += (&ren.d22 * &c2cal_bar) * (-q);
    d22_bar += (&p.d21 * d21cal_bar.transpose()) * (-q);
    d21_bar += (&ren.d22 * &d21cal_bar) * (-q);
    out.d12_imp -= d21cal_bar.transpose();
    let rcal_sym = &rcal_bar + rcal_bar.transpose();
    d22_bar += (&ren.d22 * &rcal_sym) * (-q);

    // D22 = N · diag(L_R) / sqrt(q), then the Cayley block.
    let denom = 1.0 + tr.m_scalar;
    let denom_sq = denom * denom;
    let mut m_bar = 0.0;
    let mut z3_bar = Col::zeros(ni - 1);
    for j in 0..ni {
        let n_bar_j = d22_bar[(0, j)] * tr.l_r[j] / tr.sqrt_q;
        if j == 0 {
            // c = (1 - M) / (1 + M)
            m_bar += n_bar_j * (-2.0 / denom_sq);
        } else {
            // d_j = -2 z3_j / (1 + M)
            m_bar += n_bar_j * (2.0 * p.z3[j - 1] / denom_sq);
            z3_bar[j - 1] += n_bar_j * (-2.0 / denom);
        }
    }
    // M = x3² + |z3|² + ε
    out.x3 = 2.0 * p.x3 * m_bar;
    out.z3 = z3_bar + &p.z3 * (2.0 * m_bar);
    out.y3 = 0.0; // skew part vanishes for scalar residuals

    out.c2 += c2_bar;
    out.d21 += d21_bar;
    out.eta_tilde.rows_mut(0, nz).copy_from(&eta_z_bar);
    out.eta_tilde.rows_mut(nz, nv).copy_from(&eta_v_bar);
    out.eta_tilde[nz + nv] = eta_r_bar;
    out
}
