//! Extremal transient probabilities of the enveloped linear dynamics.
//!
//! The envelope guarantees rates affine in the uncertainties, nonnegative
//! coefficients, and one transition per uncertainty; under these conditions
//! a strict maximum principle holds and the optimal control is the
//! deterministic bang-bang rule below. The solver integrates the costate
//! backward from the target weights, extracts the control, and integrates
//! the probability vector forward under it.

use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::ode::{integrate, Trajectory};

/// Envelope coefficients tabulated at half-step resolution so integration
/// stages read arrays instead of re-evaluating polynomials.
pub struct SampledEnvelope<'a> {
    pub env: &'a Envelope,
    dt: f64,
    n_samples: usize,
    transitions: Vec<SampledTransition>,
}

struct SampledTransition {
    from: usize,
    to: usize,
    base: Vec<f64>,
    /// (uncertainty index, coefficient samples); coefficients are >= 0.
    terms: Vec<(usize, Vec<f64>)>,
}

impl Envelope {
    /// Tabulate coefficients at spacing step/2 so every RK4 stage time of a
    /// grid-aligned integration hits a sample exactly.
    pub fn sample(&self, step: f64) -> SampledEnvelope<'_> {
        let m = ((2.0 * self.horizon / step).ceil() as usize).max(2);
        let dt = self.horizon / m as f64;
        let transitions = self
            .transitions
            .iter()
            .enumerate()
            .map(|(ti, tr)| SampledTransition {
                from: tr.from,
                to: tr.to,
                base: (0..=m).map(|i| self.eval_coeff(ti, &tr.base, i as f64 * dt)).collect(),
                terms: tr
                    .terms
                    .iter()
                    .map(|term| {
                        (
                            term.unc,
                            (0..=m)
                                .map(|i| self.eval_coeff(ti, &term.coeff, i as f64 * dt))
                                .collect(),
                        )
                    })
                    .collect(),
            })
            .collect();
        SampledEnvelope { env: self, dt, n_samples: m + 1, transitions }
    }
}

impl SampledEnvelope<'_> {
    #[inline]
    fn lookup(&self, samples: &[f64], t: f64) -> f64 {
        let x = (t / self.dt).clamp(0.0, (self.n_samples - 1) as f64);
        let i = (x as usize).min(self.n_samples - 2);
        let frac = x - i as f64;
        samples[i] + frac * (samples[i + 1] - samples[i])
    }

    /// Bound of every uncertainty at the given eps.
    pub fn bounds(&self, eps: f64) -> Result<Vec<f64>> {
        self.env.uncertainties.iter().map(|u| u.bound.eval(eps)).collect()
    }

    /// Largest coefficient magnitude over all terms and sample times.
    pub fn max_coefficient(&self) -> f64 {
        self.transitions
            .iter()
            .flat_map(|tr| tr.terms.iter())
            .flat_map(|(_, k)| k.iter())
            .fold(0.0_f64, |a, &b| a.max(b.abs()))
    }

    /// Verify base - sum coeff * bound >= 0 at every sample time.
    pub fn check_nonnegativity(&self, bounds: &[f64], eps: f64) -> Result<()> {
        for tr in &self.transitions {
            for s in 0..self.n_samples {
                let mut worst = tr.base[s];
                for (unc, k) in &tr.terms {
                    worst -= k[s] * bounds[*unc];
                }
                if worst < 0.0 {
                    return Err(Error::EnvelopeNonnegativityViolated {
                        from: self.env.state_names[tr.from].clone(),
                        to: self.env.state_names[tr.to].clone(),
                        t: s as f64 * self.dt,
                        eps,
                    });
                }
            }
        }
        Ok(())
    }

    /// Kolmogorov drift of pi under the control u (indexed by uncertainty).
    pub fn drift_into(&self, t: f64, pi: &[f64], u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for tr in &self.transitions {
            let mut r = self.lookup(&tr.base, t);
            for (unc, k) in &tr.terms {
                r += self.lookup(k, t) * u[*unc];
            }
            let flow = r * pi[tr.from];
            out[tr.from] -= flow;
            out[tr.to] += flow;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

#[derive(Debug, Clone)]
pub struct TargetSpec {
    /// Weight per state of the objective sum_A sigma_A pi_A(t_hat).
    pub weights: Vec<f64>,
    pub time: f64,
    pub direction: Direction,
}

/// Piecewise-constant control values on the integration grid.
#[derive(Debug, Clone)]
pub struct ControlTrace {
    pub times: Vec<f64>,
    pub n_unc: usize,
    pub values: Vec<f64>,
}

impl ControlTrace {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_unc..(i + 1) * self.n_unc]
    }
}

#[derive(Debug, Clone)]
pub struct ExtremalSolution {
    /// Extremal value of sum sigma_A pi_A(t_hat).
    pub value: f64,
    /// Minimum |psi_i| over the grid per uncertainty; infinity when the
    /// uncertainty drives no term.
    pub switching_margin: Vec<f64>,
    pub costate: Option<Trajectory>,
    pub state: Option<Trajectory>,
    pub control: Option<ControlTrace>,
}

/// The deterministic optimal control: +bound on psi >= 0, -bound otherwise.
#[inline]
pub fn bang_bang_rule(psi: f64, bound: f64) -> f64 {
    if psi >= 0.0 {
        bound
    } else {
        -bound
    }
}

/// Costate derivative under the extremal control induced by p itself:
/// dp_B = sum_C (p_B - p_C) k^{B->C}(t) + extremal term contributions.
pub fn costate_rhs(se: &SampledEnvelope, t: f64, p: &[f64], bounds: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for tr in &se.transitions {
        let dp = p[tr.to] - p[tr.from];
        let mut r = se.lookup(&tr.base, t);
        for (unc, k) in &tr.terms {
            let kv = se.lookup(k, t);
            r += kv * bang_bang_rule(dp * kv, bounds[*unc]);
        }
        out[tr.from] -= r * dp;
    }
}

/// Backward costate pass, control extraction, forward probability pass.
/// `record` retains the costate/state/control traces for CSV output.
pub fn solve_extremal(
    se: &SampledEnvelope,
    target: &TargetSpec,
    eps: f64,
    step: f64,
    record: bool,
) -> Result<ExtremalSolution> {
    let n = se.env.n_states();
    assert_eq!(target.weights.len(), n);
    assert!(
        target.time > 0.0 && target.time <= se.env.horizon + 1e-12,
        "target time outside (0;T]"
    );
    let bounds = se.bounds(eps)?;
    se.check_nonnegativity(&bounds, eps)?;

    let p_end: Vec<f64> = match target.direction {
        Direction::Min => target.weights.iter().map(|w| -w).collect(),
        Direction::Max => target.weights.clone(),
    };
    let costate = integrate(
        |t, p, out| costate_rhs(se, t, p, &bounds, out),
        &p_end,
        target.time,
        0.0,
        step,
        None,
    )?;

    // Forward pass under the control read off the interpolated costate.
    let mut p_buf = vec![0.0; n];
    let mut u_buf = vec![0.0; bounds.len()];
    let mut pi_rhs = {
        let costate = &costate;
        let bounds = &bounds;
        move |t: f64, pi: &[f64], out: &mut [f64]| {
            costate.value_into(t, &mut p_buf);
            extract_control(se, t, &p_buf, bounds, &mut u_buf);
            se.drift_into(t, pi, &u_buf, out);
        }
    };
    let state = integrate(&mut pi_rhs, &se.env.pi0, 0.0, target.time, step, Some(-1e-9))?;

    let pi_end = state.row(state.times.len() - 1);
    let value: f64 = target.weights.iter().zip(pi_end).map(|(w, p)| w * p).sum();

    // Switching margins and (optionally) the control trace on the grid.
    let mut margin = vec![f64::INFINITY; bounds.len()];
    let mut trace_values = Vec::new();
    let mut p_at = vec![0.0; n];
    let mut u_at = vec![0.0; bounds.len()];
    for &t in &state.times {
        costate.value_into(t, &mut p_at);
        for tr in &se.transitions {
            let dp = p_at[tr.to] - p_at[tr.from];
            for (unc, k) in &tr.terms {
                let psi = dp * se.lookup(k, t);
                margin[*unc] = margin[*unc].min(psi.abs());
            }
        }
        if record {
            extract_control(se, t, &p_at, &bounds, &mut u_at);
            trace_values.extend_from_slice(&u_at);
        }
    }

    Ok(ExtremalSolution {
        value,
        switching_margin: margin,
        costate: record.then(|| costate.clone()),
        state: record.then(|| state.clone()),
        control: record.then(|| ControlTrace {
            times: state.times.clone(),
            n_unc: bounds.len(),
            values: trace_values,
        }),
    })
}

/// Bang-bang control per uncertainty given the costate at time t.
fn extract_control(se: &SampledEnvelope, t: f64, p: &[f64], bounds: &[f64], u: &mut [f64]) {
    u.fill(0.0);
    for tr in &se.transitions {
        let dp = p[tr.to] - p[tr.from];
        for (unc, k) in &tr.terms {
            u[*unc] = bang_bang_rule(dp * se.lookup(k, t), bounds[*unc]);
        }
    }
}

/// Switching tolerance zeta = xi / (t_hat * n * c1 * c2): any control that
/// agrees with the bang-bang rule wherever |psi_i| >= zeta is within xi of
/// the extremal value.
pub fn switching_tolerance(se: &SampledEnvelope, xi: f64, t_hat: f64, eps: f64) -> Result<f64> {
    assert!(xi > 0.0, "xi must be positive");
    let bounds = se.bounds(eps)?;
    let n = se
        .transitions
        .iter()
        .map(|tr| tr.terms.len())
        .sum::<usize>()
        .max(1);
    let c1 = se.max_coefficient().max(f64::MIN_POSITIVE);
    let c2 = bounds.iter().fold(0.0_f64, |a, &b| a.max(b)) * 2.0;
    let c2 = c2.max(f64::MIN_POSITIVE);
    Ok(xi / (t_hat * n as f64 * c1 * c2))
}

/// Forward value sum_A w_A pi_A(t_hat) under an arbitrary admissible
/// control; used to cross-check extremality.
pub fn simulate_with_control<F>(
    se: &SampledEnvelope,
    weights: &[f64],
    t_hat: f64,
    step: f64,
    mut control: F,
) -> Result<f64>
where
    F: FnMut(f64, &mut [f64]),
{
    let n_unc = se.env.uncertainties.len();
    let mut u = vec![0.0; n_unc];
    let traj = integrate(
        |t, pi, out| {
            control(t, &mut u);
            se.drift_into(t, pi, &u, out);
        },
        &se.env.pi0,
        0.0,
        t_hat,
        step,
        Some(-1e-9),
    )?;
    let pi_end = traj.row(traj.times.len() - 1);
    Ok(weights.iter().zip(pi_end).map(|(w, p)| w * p).sum())
}
