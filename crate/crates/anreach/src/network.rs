//! Agent-network models: JSON schema, validation, and the derived dynamics
//! (global drift, atomic transition rates, Kolmogorov drift).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{
    divide_by_state, AffineForm, Monomial, Polynomial, RateExpr, SymbolId, SymbolKind, SymbolTable,
};

/// Nominal parameter function: a constant or a piecewise-linear table.
#[derive(Debug, Clone)]
pub enum ParamFunction {
    Constant(f64),
    Table(Vec<(f64, f64)>),
}

impl ParamFunction {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            ParamFunction::Constant(c) => *c,
            ParamFunction::Table(pts) => {
                if t <= pts[0].0 {
                    return pts[0].1;
                }
                if t >= pts[pts.len() - 1].0 {
                    return pts[pts.len() - 1].1;
                }
                let i = pts.partition_point(|&(ti, _)| ti <= t);
                let (t0, v0) = pts[i - 1];
                let (t1, v1) = pts[i];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    pub fn min_on(&self, t_end: f64, samples: usize) -> f64 {
        match self {
            ParamFunction::Constant(c) => *c,
            ParamFunction::Table(_) => (0..=samples)
                .map(|i| self.value(t_end * i as f64 / samples as f64))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub symbol: SymbolId,
    pub nominal: ParamFunction,
    /// Constant modulus bound on the parameter uncertainty.
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct Reaction {
    /// Multiset of atomic transitions (from-state, to-state), as state indices.
    pub transitions: Vec<(usize, usize)>,
    pub rate: RateExpr,
}

/// Consumed/produced agent counts per state for one reaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stoichiometry {
    pub consumed: Vec<u32>,
    pub produced: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct AgentNetwork {
    pub table: SymbolTable,
    pub state_names: Vec<String>,
    pub state_symbols: Vec<SymbolId>,
    pub params: Vec<Param>,
    pub reactions: Vec<Reaction>,
    pub init: Vec<f64>,
    pub horizon: f64,
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub states: Vec<String>,
    pub params: BTreeMap<String, ParamJson>,
    pub reactions: Vec<ReactionJson>,
    pub init: BTreeMap<String, f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamJson {
    pub nominal: NominalJson,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NominalJson {
    Constant(f64),
    Table(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionJson {
    pub transitions: Vec<(String, String)>,
    pub rate: RateJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateJson {
    pub poly: Vec<MonomialJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denom: Option<AffineJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialJson {
    pub coeff: f64,
    pub vars: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineJson {
    #[serde(rename = "const")]
    pub constant: f64,
    pub terms: BTreeMap<String, f64>,
}

impl ModelJson {
    pub fn from_str(s: &str) -> Result<ModelJson> {
        Ok(serde_json::from_str(s)?)
    }

    /// Intern all symbols and build the network. Structural problems
    /// (undeclared symbols, empty reactions) are reported as errors here;
    /// semantic checks live in [`validate`].
    pub fn compile(&self) -> Result<AgentNetwork> {
        let mut table = SymbolTable::new();
        let mut state_symbols = Vec::new();
        for s in &self.states {
            state_symbols.push(table.intern_shiftable(s, SymbolKind::State));
        }
        let mut params = Vec::new();
        for (name, p) in &self.params {
            let symbol = table.intern_shiftable(name, SymbolKind::Parameter);
            let nominal = match &p.nominal {
                NominalJson::Constant(c) => ParamFunction::Constant(*c),
                NominalJson::Table(pts) => ParamFunction::Table(pts.clone()),
            };
            params.push(Param { name: name.clone(), symbol, nominal, bound: p.bound });
        }

        let state_index = |name: &str| -> Result<usize> {
            self.states
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::UnknownSymbol(name.to_string()))
        };
        let lookup = |table: &SymbolTable, name: &str| -> Result<SymbolId> {
            table.lookup(name).ok_or_else(|| Error::UnknownSymbol(name.to_string()))
        };

        let mut reactions = Vec::new();
        for r in &self.reactions {
            if r.transitions.is_empty() {
                return Err(Error::Model("reaction with empty transition multiset".into()));
            }
            let mut transitions = Vec::new();
            for (from, to) in &r.transitions {
                transitions.push((state_index(from)?, state_index(to)?));
            }
            let mut monomials = Vec::new();
            for m in &r.poly_monomials() {
                let mut exps = BTreeMap::new();
                for (v, &e) in &m.vars {
                    let id = lookup(&table, v)?;
                    if e > 0 {
                        exps.insert(id, e);
                    }
                }
                monomials.push(Monomial { coeff: m.coeff, exps });
            }
            let denom = match &r.rate.denom {
                None => None,
                Some(d) => {
                    let mut terms = BTreeMap::new();
                    for (v, &c) in &d.terms {
                        let id = lookup(&table, v)?;
                        if table.kind(id) != SymbolKind::State {
                            return Err(Error::Model(format!(
                                "denominator term `{v}` is not a state symbol"
                            )));
                        }
                        if c < 0.0 {
                            return Err(Error::Model(format!(
                                "denominator coefficient of `{v}` is negative"
                            )));
                        }
                        terms.insert(id, c);
                    }
                    if d.constant < 0.0 {
                        return Err(Error::Model("denominator constant is negative".into()));
                    }
                    Some(AffineForm { constant: d.constant, terms })
                }
            };
            let numer = Polynomial::from_monomials(monomials);
            if denom.is_some() {
                // Keeps the reciprocal construction applicable downstream.
                for m in &numer.monomials {
                    for (&s, &e) in &m.exps {
                        if table.kind(s) == SymbolKind::Parameter && e > 1 {
                            return Err(Error::Model(format!(
                                "rational rate has parameter `{}` with exponent {e} > 1",
                                table.name(s)
                            )));
                        }
                    }
                }
            }
            reactions.push(Reaction { transitions, rate: RateExpr { numer, denom } });
        }

        let mut init = Vec::new();
        for s in &self.states {
            let v = self
                .init
                .get(s)
                .copied()
                .ok_or_else(|| Error::Model(format!("initial condition missing state `{s}`")))?;
            init.push(v);
        }
        for key in self.init.keys() {
            if !self.states.contains(key) {
                return Err(Error::UnknownSymbol(key.clone()));
            }
        }
        if self.horizon <= 0.0 {
            return Err(Error::Model("horizon must be positive".into()));
        }

        Ok(AgentNetwork {
            table,
            state_names: self.states.clone(),
            state_symbols,
            params,
            reactions,
            init,
            horizon: self.horizon,
        })
    }
}

impl ReactionJson {
    fn poly_monomials(&self) -> Vec<MonomialJson> {
        self.rate.poly.clone()
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
}

impl Diagnostic {
    fn error(code: &'static str, message: String) -> Self {
        Diagnostic { severity: Severity::Error, code, message }
    }
    fn warning(code: &'static str, message: String) -> Self {
        Diagnostic { severity: Severity::Warning, code, message }
    }
}

/// Semantic checks: uncertainty bounds against nominal parameter minima,
/// transition-rate divisibility, initial-condition positivity, and
/// grid-point positivity of rates along the nominal solution.
pub fn validate(an: &AgentNetwork) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    for p in &an.params {
        let min_nominal = p.nominal.min_on(an.horizon, 512);
        if min_nominal <= 0.0 {
            out.push(Diagnostic::error(
                "NonPositiveParameter",
                format!("nominal parameter `{}` is not strictly positive on [0;T]", p.name),
            ));
        }
        if p.bound < 0.0 {
            out.push(Diagnostic::error(
                "NegativeBound",
                format!("uncertainty bound for `{}` is negative", p.name),
            ));
        }
        if p.bound >= min_nominal {
            out.push(Diagnostic::error(
                "BoundExceedsNominal",
                format!(
                    "bound {} for `{}` is not below the nominal minimum {} (admissible \
                     uncertainties require b < min nominal)",
                    p.bound, p.name, min_nominal
                ),
            ));
        }
        if let ParamFunction::Table(pts) = &p.nominal {
            let increasing = pts.windows(2).all(|w| w[0].0 < w[1].0);
            let covering = !pts.is_empty()
                && pts[0].0 <= 0.0
                && pts[pts.len() - 1].0 >= an.horizon;
            if !increasing || !covering {
                out.push(Diagnostic::error(
                    "BadParamTable",
                    format!("parameter table for `{}` must be strictly increasing and cover [0;T]", p.name),
                ));
            }
        }
    }

    for (i, v) in an.init.iter().enumerate() {
        if *v <= 0.0 {
            out.push(Diagnostic::error(
                "NonPositiveInitial",
                format!("initial condition of `{}` is {v}, must be strictly positive", an.state_names[i]),
            ));
        }
    }

    if let Err(e) = transition_rates(an) {
        out.push(Diagnostic::error("NotDivisible", format!("{e}")));
    }

    // Positivity of rates along the nominal tube is checked numerically.
    match crate::ode::nominal_trajectory(an, &crate::ode::IntegratorConfig::for_horizon(an.horizon)) {
        Ok((v0, _)) => {
            if let Ok(rates) = transition_rates(an) {
                'outer: for ((b, c), rate) in &rates {
                    for (i, &t) in v0.times.iter().enumerate().step_by(10) {
                        let row = v0.row(i);
                        let val = rate.eval_with(&an.table, |s| {
                            an.state_symbols
                                .iter()
                                .position(|&x| x == s)
                                .map(|j| row[j])
                                .or_else(|| an.params.iter().find(|p| p.symbol == s).map(|p| p.nominal.value(t)))
                        });
                        match val {
                            Ok(v) if v >= 0.0 => {}
                            _ => {
                                out.push(Diagnostic::warning(
                                    "RatePositivity",
                                    format!(
                                        "rate {}->{} could not be established nonnegative at t = {t}",
                                        an.state_names[*b], an.state_names[*c]
                                    ),
                                ));
                                continue 'outer;
                            }
                        }
                    }
                }
            }
        }
        Err(e) => out.push(Diagnostic::warning(
            "NominalIntegration",
            format!("nominal trajectory could not be computed: {e}"),
        )),
    }

    out
}

// ---------------------------------------------------------------------------
// Derived dynamics
// ---------------------------------------------------------------------------

pub fn stoichiometry(r: &Reaction, n_states: usize) -> Stoichiometry {
    let mut consumed = vec![0u32; n_states];
    let mut produced = vec![0u32; n_states];
    for &(from, to) in &r.transitions {
        consumed[from] += 1;
        produced[to] += 1;
    }
    Stoichiometry { consumed, produced }
}

/// Global drift F_B(V, k(t) + u_K) of the nonlinear fluid ODE.
pub fn global_drift(
    an: &AgentNetwork,
    t: f64,
    v: &[f64],
    u_param: &dyn Fn(usize) -> f64,
) -> Result<Vec<f64>> {
    let mut drift = vec![0.0; an.state_names.len()];
    for r in &an.reactions {
        let theta = r.rate.eval_with(&an.table, |s| {
            an.state_symbols
                .iter()
                .position(|&x| x == s)
                .map(|j| v[j])
                .or_else(|| {
                    an.params
                        .iter()
                        .position(|p| p.symbol == s)
                        .map(|j| an.params[j].nominal.value(t) + u_param(j))
                })
        })?;
        let st = stoichiometry(r, an.state_names.len());
        for b in 0..drift.len() {
            drift[b] += (st.produced[b] as f64 - st.consumed[b] as f64) * theta;
        }
    }
    Ok(drift)
}

/// Symbolic atomic transition rates r_{B,C} = sum_j Theta_j / V_B over
/// reactions containing B->C, self-loops pruned.
pub fn transition_rates(an: &AgentNetwork) -> Result<BTreeMap<(usize, usize), RateExpr>> {
    let mut map: BTreeMap<(usize, usize), RateExpr> = BTreeMap::new();
    for r in &an.reactions {
        // Multiplicity of each ordered pair within the multiset.
        let mut mult: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for &pair in &r.transitions {
            *mult.entry(pair).or_insert(0) += 1;
        }
        for ((from, to), m) in mult {
            if from == to {
                continue;
            }
            let divided = divide_by_state(&r.rate.numer, an.state_symbols[from], &an.table)?;
            let contrib = divided.scale(m as f64);
            map.entry((from, to))
                .and_modify(|e| {
                    debug_assert_eq!(e.denom, r.rate.denom, "mixed denominators on one transition");
                    e.numer = e.numer.add(&contrib);
                })
                .or_insert(RateExpr { numer: contrib, denom: r.rate.denom.clone() });
        }
    }
    map.retain(|_, r| !r.numer.is_zero());
    Ok(map)
}

/// Kolmogorov drift f_B = -sum_C r_BC pi_B + sum_C r_CB pi_C for
/// numerically evaluated rates.
pub fn kolmogorov_drift(rates: &BTreeMap<(usize, usize), f64>, pi: &[f64]) -> Vec<f64> {
    let mut f = vec![0.0; pi.len()];
    for (&(b, c), &r) in rates {
        f[b] -= r * pi[b];
        f[c] += r * pi[b];
    }
    f
}

/// Normalized initial distribution and total mass M = sum V(0).
pub fn normalize_initial(an: &AgentNetwork) -> (Vec<f64>, f64) {
    let mass: f64 = an.init.iter().sum();
    let pi0 = an.init.iter().map(|v| v / mass).collect();
    (pi0, mass)
}
