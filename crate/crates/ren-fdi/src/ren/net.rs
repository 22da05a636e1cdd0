use crate::Col;

use super::materialize::ExplicitRen;

/// Entrywise activation of the equilibrium layer: `tanh`, which is zero at
/// zero and slope-restricted to `[0, 1]`.
pub fn activation(v: &Col) -> Col {
    v.map(f64::tanh)
}

/// One filter step. The neuron potentials are solved row by row: because
/// `D11` is strictly lower triangular, `v_k` depends only on `w_0..w_{k-1}`.
///
/// Returns the next state, the residual at the current sample (read out
/// before the state update) and the neuron outputs `w`.
pub fn step(ren: &ExplicitRen, z: &Col, u_bar: &Col) -> (Col, f64, Col) {
    let nv = ren.dims.n_v();
    let base = &ren.c1 * z + &ren.d12 * u_bar + &ren.bias_v;
    let mut w = Col::zeros(nv);
    for k in 0..nv {
        let mut vk = base[k];
        for j in 0..k {
            vk += ren.d11[(k, j)] * w[j];
        }
        w[k] = vk.tanh();
    }
    let z_next = &ren.a * z + &ren.b1 * &w + &ren.b2 * u_bar + &ren.bias_z;
    let r = (&ren.c2 * z)[(0, 0)] + (&ren.d21 * &w)[(0, 0)] + (&ren.d22 * u_bar)[(0, 0)] + ren.bias_r;
    (z_next, r, w)
}

/// Iterates [`step`] over an input sequence. `residuals[k]` is the output at
/// sample `k` before the state update; `states[k]` the state after it. Both
/// outputs have the length of `inputs`.
pub fn rollout(ren: &ExplicitRen, z0: &Col, inputs: &[Col]) -> (Vec<f64>, Vec<Col>) {
    let mut z = z0.clone();
    let mut residuals = Vec::with_capacity(inputs.len());
    let mut states = Vec::with_capacity(inputs.len());
    for u in inputs {
        let (z_next, r, _) = step(ren, &z, u);
        residuals.push(r);
        states.push(z_next.clone());
        z = z_next;
    }
    (residuals, states)
}
