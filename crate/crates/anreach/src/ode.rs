//! Fixed-step fourth-order Runge-Kutta integration with dense output.
//!
//! Integrations may run forward or time-reversed; storage is always in
//! increasing time and arbitrary-time queries use linear interpolation.

use crate::error::{Error, Result};
use crate::network::{global_drift, AgentNetwork};

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    /// Fixed step size.
    pub step: f64,
    /// Abort threshold for positivity-monitored integrations.
    pub positivity_floor: f64,
}

impl IntegratorConfig {
    /// Default step T/3000, matching h = 1e-3 on the T = 3 case studies.
    pub fn for_horizon(horizon: f64) -> Self {
        IntegratorConfig { step: horizon / 3000.0, positivity_floor: 1e-9 }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }
}

/// Dense numerical solution on a uniform grid (last step may be short).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub dim: usize,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Linear interpolation between grid neighbors; exact at grid times.
    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if t <= self.times[0] {
            out.copy_from_slice(self.row(0));
            return;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(self.row(n - 1));
            return;
        }
        let i = self.times.partition_point(|&ti| ti <= t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.row(i - 1), self.row(i));
        for j in 0..self.dim {
            out[j] = a[j] + w * (b[j] - a[j]);
        }
    }

    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.value_into(t, &mut out);
        out
    }
}

/// Classical RK4 at fixed step. `t_end < t_start` integrates backward;
/// the returned trajectory is always stored in increasing time.
/// `positivity_floor` aborts on any component dropping below the floor.
pub fn integrate<F>(
    mut rhs: F,
    x0: &[f64],
    t_start: f64,
    t_end: f64,
    step: f64,
    positivity_floor: Option<f64>,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    assert!(step > 0.0, "step must be positive");
    assert!(t_start != t_end, "empty integration span");
    let dim = x0.len();
    let span = (t_end - t_start).abs();
    let dir = if t_end > t_start { 1.0 } else { -1.0 };
    let n_full = (span / step).floor() as usize;
    let remainder = span - n_full as f64 * step;
    let n_steps = n_full + if remainder > 1e-12 * span.max(1.0) { 1 } else { 0 };

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity((n_steps + 1) * dim);
    let mut x = x0.to_vec();
    let mut t = t_start;
    times.push(t);
    values.extend_from_slice(&x);

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    for i in 0..n_steps {
        let t_next =
            if i + 1 == n_steps { t_end } else { t_start + (i as f64 + 1.0) * step * dir };
        let h = t_next - t;

        rhs(t, &x, &mut k1);
        for j in 0..dim {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for j in 0..dim {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for j in 0..dim {
            tmp[j] = x[j] + h * k3[j];
        }
        rhs(t + h, &tmp, &mut k4);
        for j in 0..dim {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        t = t_next;

        for (j, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteDerivative { t });
            }
            if let Some(floor) = positivity_floor {
                if v < floor {
                    return Err(Error::PositivityFloorBreached {
                        state: format!("component {j}"),
                        t,
                        value: v,
                    });
                }
            }
        }
        times.push(t);
        values.extend_from_slice(&x);
    }

    if dir < 0.0 {
        times.reverse();
        let n = times.len();
        let mut rev = Vec::with_capacity(values.len());
        for i in (0..n).rev() {
            rev.extend_from_slice(&values[i * dim..(i + 1) * dim]);
        }
        values = rev;
    }

    Ok(Trajectory { times, dim, values })
}

/// Nominal solution V^0 on [0;T] with u = 0 and positivity monitoring,
/// plus eps' = min over states and grid times of V^0 (the decoupling cap).
pub fn nominal_trajectory(an: &AgentNetwork, cfg: &IntegratorConfig) -> Result<(Trajectory, f64)> {
    let names = an.state_names.clone();
    let rhs = |t: f64, v: &[f64], out: &mut [f64]| {
        // Drift errors surface as non-finite output and abort the run.
        match global_drift(an, t, v, &|_| 0.0) {
            Ok(d) => out.copy_from_slice(&d),
            Err(_) => out.fill(f64::NAN),
        }
    };
    let traj = integrate(rhs, &an.init, 0.0, an.horizon, cfg.step, Some(cfg.positivity_floor))
        .map_err(|e| match e {
            Error::PositivityFloorBreached { state, t, value } => {
                let idx: usize = state
                    .strip_prefix("component ")
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(0);
                Error::PositivityFloorBreached { state: names[idx].clone(), t, value }
            }
            other => other,
        })?;
    let mut eps_prime = f64::INFINITY;
    for i in 0..traj.times.len() {
        for &v in traj.row(i) {
            eps_prime = eps_prime.min(v);
        }
    }
    Ok((traj, eps_prime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gps_model, sirs_model};

    #[test]
    fn exp_decay_forward() {
        let traj = integrate(|_, x, dx| dx[0] = -x[0], &[1.0], 0.0, 1.0, 1e-3, None).unwrap();
        let end = traj.row(traj.times.len() - 1)[0];
        assert!((end - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn zero_drift_constant() {
        let traj = integrate(|_, _, dx| dx.fill(0.0), &[2.5, -1.0], 0.0, 2.0, 0.1, None).unwrap();
        for i in 0..traj.times.len() {
            assert_eq!(traj.row(i), &[2.5, -1.0]);
        }
    }

    #[test]
    fn exp_growth_backward() {
        // dp/dt = p, p(1) = 1, integrated back to t = 0: p(0) = 1/e.
        let traj = integrate(|_, x, dx| dx[0] = x[0], &[1.0], 1.0, 0.0, 1e-3, None).unwrap();
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        assert!((traj.row(0)[0] - (-1.0f64).exp()).abs() < 1e-9);
        assert!((traj.row(traj.times.len() - 1)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rk4_convergence_order() {
        // Smooth nonlinear problem: dx/dt = x^2, x(0)=0.5 on [0,1]; exact 1/(2-t).
        let solve = |h: f64| -> f64 {
            let traj = integrate(|_, x, dx| dx[0] = x[0] * x[0], &[0.5], 0.0, 1.0, h, None).unwrap();
            traj.row(traj.times.len() - 1)[0]
        };
        let exact = 1.0;
        let e1 = (solve(0.02) - exact).abs();
        let e2 = (solve(0.01) - exact).abs();
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
        let order = ratio.log2();
        assert!(order > 3.7 && order < 4.3, "order {order}");
    }

    #[test]
    fn interpolation_exact_at_grid_points() {
        let traj = integrate(|t, _, dx| dx[0] = t.cos(), &[0.0], 0.0, 1.0, 0.05, None).unwrap();
        for (i, &t) in traj.times.iter().enumerate() {
            assert_eq!(traj.value_at(t)[0], traj.row(i)[0]);
        }
    }

    #[test]
    fn generator_rhs_conserves_total() {
        // Row-sum-zero generator: total mass conserved to 1e-9.
        let rhs = |_t: f64, x: &[f64], dx: &mut [f64]| {
            dx[0] = -2.0 * x[0] + x[1];
            dx[1] = 2.0 * x[0] - x[1];
        };
        let traj = integrate(rhs, &[0.7, 0.3], 0.0, 3.0, 1e-3, None).unwrap();
        for i in 0..traj.times.len() {
            let s: f64 = traj.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sirs_nominal_conserves_mass_and_is_positive() {
        let an = sirs_model(1, 0.05).compile().unwrap();
        let (traj, eps_prime) = nominal_trajectory(&an, &IntegratorConfig::for_horizon(3.0)).unwrap();
        for i in 0..traj.times.len() {
            let s: f64 = traj.row(i).iter().sum();
            assert!((s - 6.0).abs() < 1e-9);
        }
        assert!(eps_prime > 0.0);
    }

    #[test]
    fn gps_nominal_per_class_conservation() {
        let an = gps_model(2, 0.05).compile().unwrap();
        let (traj, eps_prime) = nominal_trajectory(&an, &IntegratorConfig::for_horizon(3.0)).unwrap();
        for i in 0..traj.times.len() {
            let row = traj.row(i);
            // states are ordered Q_1, D_1, Q_2, D_2
            assert!((row[0] + row[1] - 1.0).abs() < 1e-9);
            assert!((row[2] + row[3] - 1.0).abs() < 1e-9);
        }
        assert!(eps_prime > 0.0);
    }

    #[test]
    fn positivity_floor_aborts() {
        let res = integrate(|_, _, dx| dx[0] = -10.0, &[0.5], 0.0, 1.0, 1e-2, Some(1e-9));
        assert!(matches!(res, Err(Error::PositivityFloorBreached { .. })));
    }
}
