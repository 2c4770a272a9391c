//! The outer reachability algorithm: evaluate the maximal-deviation map
//! Psi(eps) on a time grid via extremal solves, iterate eps_{k+1} =
//! Psi(eps_k) + eta from zero, and certify a reach tube when an iterate
//! decreases.

use rayon::prelude::*;

use crate::envelope::{build_envelope, Envelope};
use crate::error::Result;
use crate::network::AgentNetwork;
use crate::ode::{nominal_trajectory, IntegratorConfig};
use crate::pontryagin::{solve_extremal, Direction, SampledEnvelope, TargetSpec};

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub dt: f64,
}

impl GridSpec {
    /// {0, dt, 2dt, ...} within [0;T], with T always included.
    pub fn times(&self, horizon: f64) -> Vec<f64> {
        assert!(self.dt > 0.0, "dt must be positive");
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let t = k as f64 * self.dt;
            if t >= horizon - 1e-12 {
                break;
            }
            out.push(t);
            k += 1;
        }
        out.push(horizon);
        out
    }
}

/// Whether eps lives in concentration units (scaled by the conserved total
/// mass M) or in probability units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Mass,
    Unit,
}

#[derive(Debug, Clone)]
pub struct FixedPointConfig {
    /// Additive inflation of each iterate; the certificate needs eta > 0.
    pub eta: f64,
    pub max_iter: usize,
    pub scale: Scale,
    /// Integrator step; defaults to horizon / 3000.
    pub step: Option<f64>,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { eta: 1e-3, max_iter: 50, scale: Scale::Mass, step: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TubeStatus {
    Certified,
    FailedEpsPrime,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct ExtremalRecord {
    pub state: usize,
    pub time: f64,
    pub direction: Direction,
    /// Extremal pi_state(time).
    pub value: f64,
    /// Nominal pi_state(time).
    pub nominal: f64,
}

#[derive(Debug, Clone)]
pub struct PsiEvaluation {
    /// Scaled maximal deviation over all (state, grid time, direction).
    pub value: f64,
    pub records: Vec<ExtremalRecord>,
    pub solves: usize,
}

#[derive(Debug, Clone)]
pub struct ReachTube {
    pub times: Vec<f64>,
    pub state_names: Vec<String>,
    /// Flat rows (times x states).
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Tube half width in concentration units; under unit scaling this is
    /// the certified probability deviation multiplied by the total mass.
    pub eps_star: f64,
    /// Iterates in the scale of the chosen mode (concentration units under
    /// mass scaling, probability units under unit scaling).
    pub iterates: Vec<f64>,
    pub status: TubeStatus,
    pub solves: usize,
    /// Decoupling cap: min of the nominal solution over states and time.
    pub eps_prime: f64,
}

impl ReachTube {
    pub fn lower_row(&self, i: usize) -> &[f64] {
        let n = self.state_names.len();
        &self.lower[i * n..(i + 1) * n]
    }

    pub fn upper_row(&self, i: usize) -> &[f64] {
        let n = self.state_names.len();
        &self.upper[i * n..(i + 1) * n]
    }
}

/// Maximal scaled deviation of the extremal transient probabilities from
/// the nominal over every state and positive grid time. One min and one
/// max solve per (state, grid time); tasks run in parallel and reduce in a
/// fixed order.
pub fn evaluate_psi(
    se: &SampledEnvelope,
    grid: &[f64],
    eps: f64,
    scale_factor: f64,
    step: f64,
) -> Result<PsiEvaluation> {
    let n = se.env.n_states();
    let mut tasks = Vec::new();
    for &t_hat in grid.iter().filter(|&&t| t > 0.0) {
        for state in 0..n {
            for direction in [Direction::Min, Direction::Max] {
                tasks.push((state, t_hat, direction));
            }
        }
    }

    let records: Vec<ExtremalRecord> = tasks
        .par_iter()
        .map(|&(state, t_hat, direction)| -> Result<ExtremalRecord> {
            let mut weights = vec![0.0; n];
            weights[state] = 1.0;
            let sol = solve_extremal(
                se,
                &TargetSpec { weights, time: t_hat, direction },
                eps,
                step,
                false,
            )?;
            let nominal = se.env.v0.value_at(t_hat)[state] / se.env.mass;
            Ok(ExtremalRecord { state, time: t_hat, direction, value: sol.value, nominal })
        })
        .collect::<Result<_>>()?;

    let mut value = 0.0_f64;
    for r in &records {
        let dev = match r.direction {
            Direction::Max => r.value - r.nominal,
            Direction::Min => r.nominal - r.value,
        };
        value = value.max(dev);
    }
    Ok(PsiEvaluation { value: scale_factor * value, records, solves: tasks.len() })
}

/// Upper bound on the sup norm of the Kolmogorov drift over the horizon:
/// the largest per-state total of incoming plus outgoing extremal rates
/// (valid for any probability vector).
pub fn lambda_bound(env: &Envelope, eps: f64) -> Result<f64> {
    let bounds: Vec<f64> =
        env.uncertainties.iter().map(|u| u.bound.eval(eps)).collect::<Result<_>>()?;
    let mut lambda = 0.0_f64;
    for &t in &env.v0.times {
        let mut per_state = vec![0.0; env.n_states()];
        for (ti, tr) in env.transitions.iter().enumerate() {
            let mut r = env.eval_coeff(ti, &tr.base, t);
            for term in &tr.terms {
                r += env.eval_coeff(ti, &term.coeff, t) * bounds[term.unc];
            }
            per_state[tr.from] += r;
            per_state[tr.to] += r;
        }
        for v in per_state {
            lambda = lambda.max(v);
        }
    }
    Ok(lambda)
}

/// The full pipeline: nominal solution, envelope, Kleene iteration of
/// eps_{k+1} = Psi(eps_k) + eta from eps_0 = 0, certified as soon as
/// Psi(eps_k) < eps_k, aborted when eps_k reaches the decoupling cap.
pub fn fixed_point_bound(
    an: &AgentNetwork,
    grid: GridSpec,
    cfg: &FixedPointConfig,
) -> Result<ReachTube> {
    assert!(cfg.eta > 0.0, "eta must be positive");
    let step = cfg.step.unwrap_or(an.horizon / 3000.0);
    let int_cfg = IntegratorConfig { step, positivity_floor: 1e-9 };
    let (v0, eps_prime) = nominal_trajectory(an, &int_cfg)?;
    let env = build_envelope(an, v0)?;
    let se = env.sample(step);
    let times = grid.times(an.horizon);

    let (scale_factor, cap) = match cfg.scale {
        Scale::Mass => (env.mass, eps_prime),
        Scale::Unit => (1.0, eps_prime / env.mass),
    };

    let mut eps = 0.0_f64;
    let mut iterates = vec![eps];
    let mut solves = 0usize;
    let mut status = TubeStatus::MaxIterations;
    for _ in 0..cfg.max_iter {
        if eps >= cap {
            status = TubeStatus::FailedEpsPrime;
            break;
        }
        // Rate nonnegativity under every admissible uncertainty is part of
        // the envelope's validity; losing it caps the iteration just like
        // eps' does.
        let bounds = se.bounds(eps)?;
        if se.check_nonnegativity(&bounds, eps).is_err() {
            status = TubeStatus::FailedEpsPrime;
            break;
        }
        let psi = evaluate_psi(&se, &times, eps, scale_factor, step)?;
        solves += psi.solves;
        if psi.value < eps {
            status = TubeStatus::Certified;
            break;
        }
        eps = psi.value + cfg.eta;
        iterates.push(eps);
    }

    // Tube half width in concentration units.
    let half = match cfg.scale {
        Scale::Mass => eps,
        Scale::Unit => eps * env.mass,
    };
    let n = an.state_names.len();
    let mut lower = Vec::with_capacity(times.len() * n);
    let mut upper = Vec::with_capacity(times.len() * n);
    for &t in &times {
        let v = env.v0.value_at(t);
        for &x in &v {
            lower.push(x - half);
            upper.push(x + half);
        }
    }

    Ok(ReachTube {
        times,
        state_names: an.state_names.clone(),
        lower,
        upper,
        eps_star: half,
        iterates,
        status,
        solves,
        eps_prime,
    })
}

/// Run the fixed point over a decreasing sequence of grid widths and
/// report (dt, eps_star, relative change to the previous bound).
pub fn refine_grid(
    an: &AgentNetwork,
    cfg: &FixedPointConfig,
    dt_sequence: &[f64],
) -> Result<Vec<(f64, f64, Option<f64>)>> {
    assert!(
        dt_sequence.windows(2).all(|w| w[1] < w[0]),
        "dt sequence must be strictly decreasing"
    );
    let mut out: Vec<(f64, f64, Option<f64>)> = Vec::new();
    for &dt in dt_sequence {
        let tube = fixed_point_bound(an, GridSpec { dt }, cfg)?;
        let change = out
            .last()
            .map(|&(_, prev, _)| (tube.eps_star - prev).abs() / prev.max(f64::MIN_POSITIVE));
        out.push((dt, tube.eps_star, change));
    }
    Ok(out)
}
