//! Four-degree-of-freedom roll-plane vehicle model: body heave and roll plus
//! two tire hops, with cubic suspension springs and tanh-saturated dampers.
//! The model is the data-generating system for the filter bank; it is
//! integrated with classical RK4 under zero-order-hold road inputs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("mass matrix is singular or parameters are not strictly positive")]
    SingularMass,
    #[error("input length {got} does not match duration {duration_s} s at {rate_hz} Hz (expected {expected})")]
    InputLength {
        got: usize,
        expected: usize,
        duration_s: f64,
        rate_hz: f64,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Physical parameters. All masses, stiffnesses and damping coefficients are
/// strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollPlaneParams {
    /// Sprung (body) mass, kg.
    pub sprung_mass: f64,
    /// Tire masses, kg.
    pub tire_mass_1: f64,
    pub tire_mass_2: f64,
    /// Roll inertia, kg·m².
    pub roll_inertia: f64,
    /// Track width, m.
    pub track_width: f64,
    /// Linear damping, N·s/m.
    pub damping_1: f64,
    pub damping_2: f64,
    /// Nonlinear damping coefficients, N·s/m.
    pub damping_1n: f64,
    pub damping_2n: f64,
    /// Linear suspension stiffness, N/m.
    pub stiffness_1: f64,
    pub stiffness_2: f64,
    /// Tire stiffness, N/m.
    pub tire_stiffness_1: f64,
    pub tire_stiffness_2: f64,
    /// Cubic suspension stiffness, N/m³.
    pub stiffness_1n: f64,
    pub stiffness_2n: f64,
}

impl Default for RollPlaneParams {
    fn default() -> Self {
        Self {
            sprung_mass: 580.0,
            tire_mass_1: 36.26,
            tire_mass_2: 36.26,
            roll_inertia: 63.3316,
            track_width: 1.524,
            damping_1: 710.70,
            damping_2: 710.70,
            damping_1n: 0.71,
            damping_2n: 0.71,
            stiffness_1: 19_357.2,
            stiffness_2: 19_357.2,
            tire_stiffness_1: 96_319.76,
            tire_stiffness_2: 96_319.76,
            stiffness_1n: 15_000.0,
            stiffness_2n: 15_000.0,
        }
    }
}

impl RollPlaneParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let all = [
            self.sprung_mass,
            self.tire_mass_1,
            self.tire_mass_2,
            self.roll_inertia,
            self.track_width,
            self.damping_1,
            self.damping_2,
            self.damping_1n,
            self.damping_2n,
            self.stiffness_1,
            self.stiffness_2,
            self.tire_stiffness_1,
            self.tire_stiffness_2,
            self.stiffness_1n,
            self.stiffness_2n,
        ];
        if all.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(PlantError::SingularMass);
        }
        Ok(())
    }
}

/// Positions and velocities of the four degrees of freedom. The zero state is
/// an equilibrium under zero input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantState {
    pub q: Vector4<f64>,
    pub qd: Vector4<f64>,
}

impl PlantState {
    pub fn zero() -> Self {
        Self {
            q: Vector4::zeros(),
            qd: Vector4::zeros(),
        }
    }

    fn add_scaled(&self, dq: &Vector4<f64>, dqd: &Vector4<f64>, h: f64) -> Self {
        Self {
            q: self.q + dq * h,
            qd: self.qd + dqd * h,
        }
    }
}

/// The plant with its constant mass matrix factorized once.
#[derive(Clone, Debug)]
pub struct RollPlanePlant {
    pub params: RollPlaneParams,
    mass_inv: Matrix4<f64>,
}

fn spring_force(k: f64, kn: f64, x: f64) -> f64 {
    k * x + kn * x * x * x
}

fn damper_force(c: f64, cn: f64, xd: f64) -> f64 {
    c * xd + cn * (0.2 * (10.0 * xd).tanh())
}

impl RollPlanePlant {
    pub fn new(params: RollPlaneParams) -> Result<Self, PlantError> {
        params.validate()?;
        let m = params.sprung_mass;
        let i_l = params.roll_inertia / params.track_width;
        #[rustfmt::skip]
        let mass = Matrix4::new(
            m / 2.0, m / 2.0, 0.0,                0.0,
            -i_l,    i_l,     0.0,                0.0,
            0.0,     0.0,     params.tire_mass_1, 0.0,
            0.0,     0.0,     0.0,                params.tire_mass_2,
        );
        let mass_inv = mass.try_inverse().ok_or(PlantError::SingularMass)?;
        Ok(Self { params, mass_inv })
    }

    /// Continuous dynamics: `q̈ = M^{-1}(f_U(u) - f_K(q) - f_C(q̇))` with the
    /// spring vector `f_K`, damper vector `f_C` and road-input vector `f_U`.
    pub fn dynamics(&self, state: &PlantState, u: [f64; 2]) -> (Vector4<f64>, Vector4<f64>) {
        let p = &self.params;
        let q = &state.q;
        let qd = &state.qd;
        let half_track = p.track_width / 2.0;

        let fk1 = |x: f64| spring_force(p.stiffness_1, p.stiffness_1n, x);
        let fk2 = |x: f64| spring_force(p.stiffness_2, p.stiffness_2n, x);
        let fc1 = |xd: f64| damper_force(p.damping_1, p.damping_1n, xd);
        let fc2 = |xd: f64| damper_force(p.damping_2, p.damping_2n, xd);

        let f_k = Vector4::new(
            fk1(q[0] - q[2]) + fk2(q[1] - q[3]),
            half_track * (fk2(q[1] - q[3]) - fk1(q[0] - q[2])),
            fk1(q[2] - q[0]) + p.tire_stiffness_1 * q[2],
            fk2(q[3] - q[1]) + p.tire_stiffness_2 * q[3],
        );
        let f_c = Vector4::new(
            fc1(qd[0] - qd[2]) + fc2(qd[1] - qd[3]),
            half_track * (fc1(qd[2] - qd[0]) - fc2(qd[3] - qd[1])),
            fc1(qd[2] - qd[0]),
            fc2(qd[3] - qd[1]),
        );
        let f_u = Vector4::new(
            0.0,
            0.0,
            p.tire_stiffness_1 * u[0],
            p.tire_stiffness_2 * u[1],
        );

        let qdd = self.mass_inv * (f_u - f_k - f_c);
        (*qd, qdd)
    }

    /// Classical RK4 step with the road input held constant over the step.
    pub fn rk4_step(&self, state: &PlantState, u_held: [f64; 2], dt: f64) -> PlantState {
        let (k1q, k1qd) = self.dynamics(state, u_held);
        let s2 = state.add_scaled(&k1q, &k1qd, dt / 2.0);
        let (k2q, k2qd) = self.dynamics(&s2, u_held);
        let s3 = state.add_scaled(&k2q, &k2qd, dt / 2.0);
        let (k3q, k3qd) = self.dynamics(&s3, u_held);
        let s4 = state.add_scaled(&k3q, &k3qd, dt);
        let (k4q, k4qd) = self.dynamics(&s4, u_held);
        PlantState {
            q: state.q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0),
            qd: state.qd + (k1qd + k2qd * 2.0 + k3qd * 2.0 + k4qd) * (dt / 6.0),
        }
    }

    /// Integrates from the zero state under the sampled road profile.
    /// `inputs[k]` is held over `[k·dt, (k+1)·dt)`; the trajectory has one
    /// state per input sample, starting at the zero state.
    pub fn simulate(
        &self,
        inputs: &[[f64; 2]],
        dt: f64,
        duration_s: f64,
    ) -> Result<Vec<PlantState>, PlantError> {
        let rate = 1.0 / dt;
        let expected = (duration_s * rate).round() as usize + 1;
        if inputs.len() != expected {
            return Err(PlantError::InputLength {
                got: inputs.len(),
                expected,
                duration_s,
                rate_hz: rate,
            });
        }
        let mut traj = Vec::with_capacity(inputs.len());
        let mut state = PlantState::zero();
        traj.push(state);
        for u in &inputs[..inputs.len() - 1] {
            state = self.rk4_step(&state, *u, dt);
            traj.push(state);
        }
        Ok(traj)
    }
}

/// Sensor map: relative displacement and relative velocity between the roll
/// bar and both tires, in the order
/// `[q1 - q3, q2 - q4, q̇1 - q̇3, q̇2 - q̇4]`.
pub fn measure(state: &PlantState) -> [f64; 4] {
    [
        state.q[0] - state.q[2],
        state.q[1] - state.q[3],
        state.qd[0] - state.qd[2],
        state.qd[1] - state.qd[3],
    ]
}

/// Renders a trajectory as CSV with header
/// `t,q1,q2,q3,q4,qd1,qd2,qd3,qd4,u1,u2`, floats at 17 significant digits so
/// parsing the file back reproduces every value exactly.
pub fn trajectory_csv(traj: &[PlantState], inputs: &[[f64; 2]], dt: f64) -> String {
    let mut out = String::from("t,q1,q2,q3,q4,qd1,qd2,qd3,qd4,u1,u2\n");
    for (k, (s, u)) in traj.iter().zip(inputs).enumerate() {
        let t = k as f64 * dt;
        write!(out, "{}", fmt_f64(t)).unwrap();
        for i in 0..4 {
            write!(out, ",{}", fmt_f64(s.q[i])).unwrap();
        }
        for i in 0..4 {
            write!(out, ",{}", fmt_f64(s.qd[i])).unwrap();
        }
        writeln!(out, ",{},{}", fmt_f64(u[0]), fmt_f64(u[1])).unwrap();
    }
    out
}

pub fn write_trajectory_csv(
    path: &Path,
    traj: &[PlantState],
    inputs: &[[f64; 2]],
    dt: f64,
) -> Result<(), PlantError> {
    std::fs::write(path, trajectory_csv(traj, inputs, dt))?;
    Ok(())
}

/// 17 significant digits: enough to round-trip any finite f64 exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plant() -> RollPlanePlant {
        RollPlanePlant::new(RollPlaneParams::default()).unwrap()
    }

    /// Independent formulation of the same equations: per-corner suspension
    /// forces assembled from the physical picture, and the 2x2 body block of
    /// the mass matrix inverted in closed form.
    fn dynamics_oracle(p: &RollPlaneParams, state: &PlantState, u: [f64; 2]) -> Vector4<f64> {
        let (q, qd) = (&state.q, &state.qd);
        let defl1 = q[0] - q[2];
        let defl2 = q[1] - q[3];
        let rate1 = qd[0] - qd[2];
        let rate2 = qd[1] - qd[3];
        let susp1 = p.stiffness_1 * defl1
            + p.stiffness_1n * defl1.powi(3)
            + p.damping_1 * rate1
            + p.damping_1n * 0.2 * (10.0 * rate1).tanh();
        let susp2 = p.stiffness_2 * defl2
            + p.stiffness_2n * defl2.powi(3)
            + p.damping_2 * rate2
            + p.damping_2n * 0.2 * (10.0 * rate2).tanh();

        // Body heave feels both corner forces; roll feels their moment; each
        // tire feels its corner force back plus the tire spring and the road.
        let rhs1 = -(susp1 + susp2);
        let rhs2 = -(p.track_width / 2.0) * (susp2 - susp1);
        let rhs3 = p.tire_stiffness_1 * u[0] - (-susp1 + p.tire_stiffness_1 * q[2]);
        let rhs4 = p.tire_stiffness_2 * u[1] - (-susp2 + p.tire_stiffness_2 * q[3]);

        // [m/2  m/2; -I/L  I/L] [a1; a2] = [rhs1; rhs2], inverted by hand.
        let il = p.roll_inertia / p.track_width;
        let det = (p.sprung_mass / 2.0) * il * 2.0;
        let a1 = (il * rhs1 - (p.sprung_mass / 2.0) * rhs2) / det;
        let a2 = (il * rhs1 + (p.sprung_mass / 2.0) * rhs2) / det;
        Vector4::new(a1, a2, rhs3 / p.tire_mass_1, rhs4 / p.tire_mass_2)
    }

    #[test]
    fn zero_state_zero_input_is_an_equilibrium() {
        let pl = plant();
        let (dq, dqd) = pl.dynamics(&PlantState::zero(), [0.0, 0.0]);
        assert_eq!(dq, Vector4::zeros());
        assert_eq!(dqd, Vector4::zeros());

        let stepped = pl.rk4_step(&PlantState::zero(), [0.0, 0.0], 0.01);
        assert_eq!(stepped, PlantState::zero());
    }

    #[test]
    fn road_step_from_rest_only_accelerates_the_tires() {
        let pl = plant();
        let p = pl.params;
        let (_, qdd) = pl.dynamics(&PlantState::zero(), [0.05, 0.05]);
        assert_relative_eq!(qdd[2], p.tire_stiffness_1 * 0.05 / p.tire_mass_1, max_relative = 1e-12);
        assert_relative_eq!(qdd[3], p.tire_stiffness_2 * 0.05 / p.tire_mass_2, max_relative = 1e-12);
        assert_relative_eq!(qdd[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(qdd[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dynamics_matches_independent_formulation() {
        let pl = plant();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let state = PlantState {
                q: Vector4::from_fn(|_, _| rng.gen_range(-0.1..0.1)),
                qd: Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            };
            let u = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
            let (_, qdd) = pl.dynamics(&state, u);
            let oracle = dynamics_oracle(&pl.params, &state, u);
            for i in 0..4 {
                let scale = 1.0f64.max(qdd[i].abs()).max(oracle[i].abs());
                assert!(
                    (qdd[i] - oracle[i]).abs() <= 1e-12 * scale,
                    "component {i}: {} vs {}",
                    qdd[i],
                    oracle[i]
                );
            }
        }
    }

    #[test]
    fn dynamics_is_odd_in_state_and_input() {
        let pl = plant();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let state = PlantState {
                q: Vector4::from_fn(|_, _| rng.gen_range(-0.2..0.2)),
                qd: Vector4::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
            };
            let u = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
            let neg = PlantState { q: -state.q, qd: -state.qd };
            let (_, qdd) = pl.dynamics(&state, u);
            let (_, qdd_neg) = pl.dynamics(&neg, [-u[0], -u[1]]);
            for i in 0..4 {
                assert_relative_eq!(qdd[i], -qdd_neg[i], max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rk4_order_via_step_halving() {
        let pl = plant();
        // Velocities kept small enough that the saturating damper stays in
        // its smooth regime at dt = 1e-2; otherwise the asymptotic 16x
        // reduction per halving is not yet reached at the coarsest step.
        let state = PlantState {
            q: Vector4::new(0.02, -0.01, 0.005, 0.01),
            qd: Vector4::new(0.04, -0.05, 0.06, -0.03),
        };
        let u = [0.03, -0.02];

        // Reference: very fine steps over the same 1 s horizon.
        let reference = {
            let mut s = state;
            let fine = 1e-4;
            for _ in 0..10_000 {
                s = pl.rk4_step(&s, u, fine);
            }
            s
        };
        let err_at = |dt: f64| {
            let n = (1.0 / dt).round() as usize;
            let mut s = state;
            for _ in 0..n {
                s = pl.rk4_step(&s, u, dt);
            }
            ((s.q - reference.q).norm_squared() + (s.qd - reference.qd).norm_squared()).sqrt()
        };

        let e1 = err_at(1e-2);
        let e2 = err_at(5e-3);
        let e3 = err_at(2.5e-3);
        assert!(e1 / e2 >= 15.0, "halving 1: {e1:.3e} -> {e2:.3e}");
        assert!(e2 / e3 >= 15.0, "halving 2: {e2:.3e} -> {e3:.3e}");
    }

    #[test]
    fn long_run_remains_bounded_under_small_road_inputs() {
        let pl = plant();
        let n = 2001;
        let inputs: Vec<[f64; 2]> = (0..n)
            .map(|k| {
                let t = k as f64 * 0.01;
                [0.05 * (2.0 * t).sin(), 0.05 * (2.5 * t + 0.3).sin()]
            })
            .collect();
        let traj = pl.simulate(&inputs, 0.01, 20.0).unwrap();
        for s in &traj {
            assert!((s.q[0] - s.q[2]).abs() < 0.5);
            assert!((s.q[1] - s.q[3]).abs() < 0.5);
            assert!(s.q.iter().chain(s.qd.iter()).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn simulate_checks_length_and_is_deterministic() {
        let pl = plant();
        let inputs = vec![[0.0, 0.0]; 2001];
        let traj = pl.simulate(&inputs, 0.01, 20.0).unwrap();
        assert_eq!(traj.len(), 2001);
        assert!(traj.iter().all(|s| *s == PlantState::zero()));

        assert!(matches!(
            pl.simulate(&inputs[..2000], 0.01, 20.0),
            Err(PlantError::InputLength { .. })
        ));

        let wavy: Vec<[f64; 2]> = (0..2001)
            .map(|k| [0.02 * (0.07 * k as f64).sin(), 0.02 * (0.05 * k as f64).cos()])
            .collect();
        let a = pl.simulate(&wavy, 0.01, 20.0).unwrap();
        let b = pl.simulate(&wavy, 0.01, 20.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn measurement_is_relative_displacement_and_velocity() {
        assert_eq!(measure(&PlantState::zero()), [0.0; 4]);
        let s = PlantState {
            q: Vector4::new(1.0, 0.0, 0.0, 0.0),
            qd: Vector4::zeros(),
        };
        assert_eq!(measure(&s), [1.0, 0.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let s = PlantState {
                q: Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
                qd: Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            };
            let y = measure(&s);
            assert_eq!(y[0], s.q[0] - s.q[2]);
            assert_eq!(y[1], s.q[1] - s.q[3]);
            assert_eq!(y[2], s.qd[0] - s.qd[2]);
            assert_eq!(y[3], s.qd[1] - s.qd[3]);
        }
    }

    #[test]
    fn csv_round_trips_every_float() {
        let pl = plant();
        let inputs: Vec<[f64; 2]> = (0..101)
            .map(|k| [0.01 * (0.3 * k as f64).sin(), 0.01 * (0.4 * k as f64).cos()])
            .collect();
        let traj = pl.simulate(&inputs, 0.01, 1.0).unwrap();
        let csv = trajectory_csv(&traj, &inputs, 0.01);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,q1,q2,q3,q4,qd1,qd2,qd3,qd4,u1,u2");
        for (k, line) in lines.enumerate() {
            let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cells.len(), 11);
            assert_eq!(cells[0], k as f64 * 0.01);
            for i in 0..4 {
                assert_eq!(cells[1 + i], traj[k].q[i]);
                assert_eq!(cells[5 + i], traj[k].qd[i]);
            }
            assert_eq!(cells[9], inputs[k][0]);
            assert_eq!(cells[10], inputs[k][1]);
        }
    }
}
