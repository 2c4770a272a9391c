//! Affine-in-uncertainty envelopes of the atomic transition rates.
//!
//! Construction: shift-expand each rate around the nominal solution and
//! parameters, turn higher-degree deviation monomials into fresh product
//! uncertainties with multiplied bounds, replace rational denominators by a
//! reciprocal uncertainty, duplicate shared uncertainties per transition,
//! and sign-normalize coefficients. The result satisfies: rates affine in
//! the uncertainties with nonnegative Lipschitz coefficients, and every
//! uncertainty attached to exactly one transition.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::expr::{shift_expand, AffineForm, Monomial, Polynomial, SymbolId, SymbolKind};
use crate::network::{normalize_initial, transition_rates, AgentNetwork, Param};
use crate::ode::Trajectory;

/// Bound of an uncertainty as a function of the state-deviation iterate eps.
#[derive(Debug, Clone)]
pub enum Bound {
    /// factor * eps^power; parameter bounds have power 0.
    Power { factor: f64, power: u32 },
    /// (coeff * eps) / (sigma_min - coeff * eps), the reciprocal budget.
    Reciprocal { coeff: f64, sigma_min: f64 },
    /// Product of bounds raised to integer powers.
    Product(Vec<(Bound, u32)>),
}

impl Bound {
    pub fn eval(&self, eps: f64) -> Result<f64> {
        match self {
            Bound::Power { factor, power } => Ok(factor * eps.powi(*power as i32)),
            Bound::Reciprocal { coeff, sigma_min } => reciprocal_bound(*sigma_min, coeff * eps),
            Bound::Product(parts) => {
                let mut v = 1.0;
                for (b, e) in parts {
                    v *= b.eval(eps)?.powi(*e as i32);
                }
                Ok(v)
            }
        }
    }

    /// True when the bound is zero for every eps (the uncertainty is inert).
    pub fn is_inert(&self) -> bool {
        match self {
            Bound::Power { factor, .. } => *factor == 0.0,
            Bound::Reciprocal { coeff, .. } => *coeff == 0.0,
            Bound::Product(parts) => parts.iter().any(|(b, _)| b.is_inert()),
        }
    }
}

/// Bound zeta / (sigma_min - zeta) on the reciprocal replacement
/// 1/(sigma(t) + u) = 1/sigma(t) * (1 + u_rec).
pub fn reciprocal_bound(sigma_min: f64, zeta: f64) -> Result<f64> {
    if zeta >= sigma_min {
        return Err(Error::BoundExceedsDenominator { zeta, sigma_min });
    }
    Ok(zeta / (sigma_min - zeta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum UncKind {
    Parameter,
    StateDev,
    Product,
    Reciprocal,
    Duplicate,
    Mirror,
}

/// How to reconstruct the value of an envelope uncertainty from original
/// parameter and state deviations (the containment witness).
#[derive(Debug, Clone)]
pub enum Provenance {
    Param(usize),
    State(usize),
    Reciprocal { transition: usize },
    Product(Vec<(usize, u32)>),
    DuplicateOf(usize),
    MirrorOf(usize),
}

#[derive(Debug, Clone)]
pub struct Uncertainty {
    pub name: String,
    pub kind: UncKind,
    pub bound: Bound,
    pub provenance: Provenance,
}

/// Time-dependent coefficient: a polynomial over nominal symbols,
/// optionally divided by the transition's denominator at the nominal.
#[derive(Debug, Clone)]
pub struct CoeffFn {
    pub poly: Polynomial,
    pub over_denom: bool,
}

#[derive(Debug, Clone)]
pub struct EnvelopeTerm {
    pub unc: usize,
    pub coeff: CoeffFn,
}

#[derive(Debug, Clone)]
pub struct DenomInfo {
    pub form: AffineForm,
    pub sigma_min: f64,
}

#[derive(Debug, Clone)]
pub struct TransitionEnv {
    pub from: usize,
    pub to: usize,
    pub base: CoeffFn,
    pub terms: Vec<EnvelopeTerm>,
    pub denom: Option<DenomInfo>,
}

#[derive(Debug, Clone)]
enum NominalSource {
    State(usize),
    Param(usize),
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub state_names: Vec<String>,
    pub transitions: Vec<TransitionEnv>,
    pub uncertainties: Vec<Uncertainty>,
    pub v0: Trajectory,
    pub horizon: f64,
    pub pi0: Vec<f64>,
    pub mass: f64,
    params: Vec<Param>,
    nominal_sources: BTreeMap<SymbolId, NominalSource>,
    /// Original state symbols, indexed like `state_names`.
    state_symbols: Vec<SymbolId>,
}

/// Deviation pattern of a monomial: deviation symbols with exponents plus
/// an optional reciprocal factor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Pattern {
    devs: Vec<(SymbolId, u32)>,
    recip: bool,
}

pub fn build_envelope(an: &AgentNetwork, v0: Trajectory) -> Result<Envelope> {
    assert!(
        (v0.t_end() - an.horizon).abs() < 1e-12 && v0.t_start() == 0.0,
        "nominal trajectory must cover [0;T]"
    );
    let (pi0, mass) = normalize_initial(an);

    let mut nominal_sources = BTreeMap::new();
    let mut state_of_dev = BTreeMap::new();
    let mut dev_uid: BTreeMap<SymbolId, Option<usize>> = BTreeMap::new();
    for (i, &s) in an.state_symbols.iter().enumerate() {
        nominal_sources.insert(an.table.nominal_of(s).unwrap(), NominalSource::State(i));
        state_of_dev.insert(an.table.deviation_of(s).unwrap(), i);
    }
    for (j, p) in an.params.iter().enumerate() {
        nominal_sources.insert(an.table.nominal_of(p.symbol).unwrap(), NominalSource::Param(j));
    }

    let mut env = Envelope {
        state_names: an.state_names.clone(),
        transitions: Vec::new(),
        uncertainties: Vec::new(),
        v0,
        horizon: an.horizon,
        pi0,
        mass,
        params: an.params.clone(),
        nominal_sources,
        state_symbols: an.state_symbols.clone(),
    };

    // Lazily register the shared uncertainty behind a deviation symbol.
    let register_dev = |env: &mut Envelope,
                        dev_uid: &mut BTreeMap<SymbolId, Option<usize>>,
                        an: &AgentNetwork,
                        sym: SymbolId|
     -> Option<usize> {
        if let Some(&cached) = dev_uid.get(&sym) {
            return cached;
        }
        let origin = an.table.origin_of_deviation(sym).expect("deviation symbol");
        let uid = match an.table.kind(origin) {
            SymbolKind::State => {
                let i = state_of_dev[&sym];
                Some(env.push_unc(Uncertainty {
                    name: format!("u[{}]", an.state_names[i]),
                    kind: UncKind::StateDev,
                    bound: Bound::Power { factor: 1.0, power: 1 },
                    provenance: Provenance::State(i),
                }))
            }
            SymbolKind::Parameter => {
                let j = an.params.iter().position(|p| p.symbol == origin).unwrap();
                if an.params[j].bound == 0.0 {
                    None
                } else {
                    Some(env.push_unc(Uncertainty {
                        name: format!("u[{}]", an.params[j].name),
                        kind: UncKind::Parameter,
                        bound: Bound::Power { factor: an.params[j].bound, power: 0 },
                        provenance: Provenance::Param(j),
                    }))
                }
            }
            _ => unreachable!("deviations originate from states or parameters"),
        };
        dev_uid.insert(sym, uid);
        uid
    };

    let rates = transition_rates(an)?;
    for ((from, to), rate) in rates {
        let trans_idx = env.transitions.len();

        let denom = match &rate.denom {
            None => None,
            Some(form) => {
                let mut sigma_min = f64::INFINITY;
                for i in 0..env.v0.times.len() {
                    let row = env.v0.row(i);
                    let sigma = form
                        .eval_with(&an.table, |s| {
                            an.state_symbols.iter().position(|&x| x == s).map(|j| row[j])
                        })
                        .expect("denominator references declared states");
                    sigma_min = sigma_min.min(sigma);
                }
                if sigma_min <= 0.0 {
                    return Err(Error::NonPositiveDenominator { value: sigma_min, t: f64::NAN });
                }
                Some(DenomInfo { form: form.clone(), sigma_min })
            }
        };

        // Shift every state and parameter symbol of the numerator.
        let shifted: Vec<SymbolId> = rate
            .numer
            .symbols()
            .into_iter()
            .filter(|&s| {
                matches!(an.table.kind(s), SymbolKind::State | SymbolKind::Parameter)
            })
            .collect();
        let expanded = shift_expand(&rate.numer, &shifted, &an.table);

        // Group monomials by their deviation pattern.
        let mut groups: BTreeMap<Pattern, Vec<Monomial>> = BTreeMap::new();
        for m in &expanded.monomials {
            let mut devs = Vec::new();
            let mut nominal = BTreeMap::new();
            for (&s, &e) in &m.exps {
                match an.table.kind(s) {
                    SymbolKind::Deviation => devs.push((s, e)),
                    _ => {
                        nominal.insert(s, e);
                    }
                }
            }
            let key = Pattern { devs, recip: false };
            groups.entry(key).or_default().push(Monomial { coeff: m.coeff, exps: nominal });
        }
        // The reciprocal replacement multiplies the whole numerator by
        // (1 + u_rec); duplicate every group once with the recip flag set.
        if denom.is_some() {
            let with_recip: Vec<(Pattern, Vec<Monomial>)> = groups
                .iter()
                .map(|(k, v)| (Pattern { devs: k.devs.clone(), recip: true }, v.clone()))
                .collect();
            groups.extend(with_recip);
        }

        let recip_uid = denom.as_ref().map(|d| {
            env.push_unc(Uncertainty {
                name: format!("u[rec:{}->{}]", an.state_names[from], an.state_names[to]),
                kind: UncKind::Reciprocal,
                bound: Bound::Reciprocal { coeff: d.form.abs_coeff_sum(), sigma_min: d.sigma_min },
                provenance: Provenance::Reciprocal { transition: trans_idx },
            })
        });

        let mut base = CoeffFn { poly: Polynomial::zero(), over_denom: denom.is_some() };
        let mut terms: Vec<EnvelopeTerm> = Vec::new();

        for (pattern, monos) in groups {
            let coeff_poly = Polynomial::from_monomials(monos);
            if coeff_poly.is_zero() {
                continue;
            }
            let coeff = CoeffFn { poly: coeff_poly, over_denom: denom.is_some() };

            if pattern.devs.is_empty() && !pattern.recip {
                base = coeff;
                continue;
            }

            // Resolve constituent uncertainties; a zero-bound constituent
            // makes the whole term inert.
            let mut constituents: Vec<(usize, u32)> = Vec::new();
            let mut inert = false;
            for &(sym, e) in &pattern.devs {
                match register_dev(&mut env, &mut dev_uid, an, sym) {
                    Some(uid) => constituents.push((uid, e)),
                    None => {
                        inert = true;
                        break;
                    }
                }
            }
            if inert {
                continue;
            }
            if pattern.recip {
                constituents.push((recip_uid.unwrap(), 1));
            }

            let uid = if constituents.len() == 1 && constituents[0].1 == 1 {
                constituents[0].0
            } else {
                let bound = Bound::Product(
                    constituents
                        .iter()
                        .map(|&(uid, e)| (env.uncertainties[uid].bound.clone(), e))
                        .collect(),
                );
                let name = constituents
                    .iter()
                    .map(|&(uid, e)| {
                        let n = &env.uncertainties[uid].name;
                        if e == 1 { n.clone() } else { format!("{n}^{e}") }
                    })
                    .collect::<Vec<_>>()
                    .join("*");
                env.push_unc(Uncertainty {
                    name: format!("prod({name})"),
                    kind: UncKind::Product,
                    bound,
                    provenance: Provenance::Product(constituents),
                })
            };
            if env.uncertainties[uid].bound.is_inert() {
                continue;
            }
            terms.push(EnvelopeTerm { unc: uid, coeff });
        }

        terms.sort_by_key(|t| t.unc);
        env.transitions.push(TransitionEnv { from, to, base, terms, denom });
    }

    duplicate_shared(&mut env);
    sign_normalize(&mut env)?;
    Ok(env)
}

/// Give every uncertainty appearing in two or more transitions a fresh
/// per-transition copy with the same bound.
fn duplicate_shared(env: &mut Envelope) {
    let mut occurrences: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (ti, tr) in env.transitions.iter().enumerate() {
        for (k, term) in tr.terms.iter().enumerate() {
            occurrences.entry(term.unc).or_default().push((ti, k));
        }
    }
    for (uid, occ) in occurrences {
        let n_trans = {
            let mut ts: Vec<usize> = occ.iter().map(|&(ti, _)| ti).collect();
            ts.dedup();
            ts.len()
        };
        if n_trans < 2 {
            continue;
        }
        for (ti, k) in occ {
            let src = &env.uncertainties[uid];
            let copy = Uncertainty {
                name: format!(
                    "{}@{}->{}",
                    src.name,
                    env.state_names[env.transitions[ti].from],
                    env.state_names[env.transitions[ti].to]
                ),
                kind: UncKind::Duplicate,
                bound: src.bound.clone(),
                provenance: Provenance::DuplicateOf(uid),
            };
            let new_uid = env.push_unc(copy);
            env.transitions[ti].terms[k].unc = new_uid;
        }
    }
}

/// Flip terms whose coefficient is nonpositive on the whole grid onto a
/// mirrored uncertainty; reject coefficients that change sign.
fn sign_normalize(env: &mut Envelope) -> Result<()> {
    let grid: Vec<f64> = env.v0.times.clone();
    for ti in 0..env.transitions.len() {
        for k in 0..env.transitions[ti].terms.len() {
            let mut min_v = f64::INFINITY;
            let mut max_v = f64::NEG_INFINITY;
            for &t in &grid {
                let v = env.eval_coeff(ti, &env.transitions[ti].terms[k].coeff, t);
                min_v = min_v.min(v);
                max_v = max_v.max(v);
            }
            if min_v >= 0.0 {
                continue;
            }
            if max_v <= 0.0 {
                let uid = env.transitions[ti].terms[k].unc;
                let src = &env.uncertainties[uid];
                let mirrored = Uncertainty {
                    name: format!("-{}", src.name),
                    kind: UncKind::Mirror,
                    bound: src.bound.clone(),
                    provenance: Provenance::MirrorOf(uid),
                };
                let new_uid = env.push_unc(mirrored);
                let term = &mut env.transitions[ti].terms[k];
                term.unc = new_uid;
                term.coeff.poly = term.coeff.poly.scale(-1.0);
                continue;
            }
            let tr = &env.transitions[ti];
            return Err(Error::SignChangingCoefficient {
                unc: env.uncertainties[tr.terms[k].unc].name.clone(),
                from: env.state_names[tr.from].clone(),
                to: env.state_names[tr.to].clone(),
            });
        }
    }
    Ok(())
}

impl Envelope {
    fn push_unc(&mut self, u: Uncertainty) -> usize {
        self.uncertainties.push(u);
        self.uncertainties.len() - 1
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    /// Evaluate the nominal sigma(t) of a transition's denominator.
    pub fn sigma_at(&self, trans: usize, t: f64) -> f64 {
        let d = self.transitions[trans].denom.as_ref().expect("transition has a denominator");
        let v = self.v0.value_at(t);
        let mut sigma = d.form.constant;
        for (&s, &c) in &d.form.terms {
            sigma += c * v[self.state_index_of_symbol(s)];
        }
        sigma
    }

    fn state_index_of_symbol(&self, sym: SymbolId) -> usize {
        self.state_symbols
            .iter()
            .position(|&x| x == sym)
            .expect("denominator references declared state symbols")
    }

    /// Coefficient value at time t along the nominal trajectory.
    pub fn eval_coeff(&self, trans: usize, c: &CoeffFn, t: f64) -> f64 {
        let v = self.v0.value_at(t);
        let val = c
            .poly
            .eval_with_nominal(&self.nominal_sources, &v, &self.params, t)
            .expect("coefficient polynomials reference nominal symbols only");
        if c.over_denom {
            val / self.sigma_at(trans, t)
        } else {
            val
        }
    }

    /// Rates base + sum coeff_i * u_i per transition, checking bounds.
    pub fn evaluate_rates(&self, t: f64, u: &[f64], eps: f64) -> Result<Vec<f64>> {
        assert_eq!(u.len(), self.uncertainties.len());
        for (i, unc) in self.uncertainties.iter().enumerate() {
            let b = unc.bound.eval(eps)?;
            if u[i].abs() > b + 1e-12 {
                return Err(Error::UncertaintyOutOfBounds {
                    unc: unc.name.clone(),
                    value: u[i],
                    bound: b,
                });
            }
        }
        let mut out = Vec::with_capacity(self.transitions.len());
        for (ti, tr) in self.transitions.iter().enumerate() {
            let mut r = self.eval_coeff(ti, &tr.base, t);
            for term in &tr.terms {
                r += self.eval_coeff(ti, &term.coeff, t) * u[term.unc];
            }
            out.push(r);
        }
        Ok(out)
    }

    /// Envelope assignment reproducing the original decoupled rates for
    /// given original deviations (the containment witness of the envelope
    /// definition).
    pub fn induced_assignment(
        &self,
        t: f64,
        u_param: &[f64],
        u_state: &[f64],
    ) -> Result<Vec<f64>> {
        let mut u = vec![0.0; self.uncertainties.len()];
        for (i, unc) in self.uncertainties.iter().enumerate() {
            u[i] = match &unc.provenance {
                Provenance::Param(j) => u_param[*j],
                Provenance::State(s) => u_state[*s],
                Provenance::Reciprocal { transition } => {
                    let d = self.transitions[*transition].denom.as_ref().unwrap();
                    let sigma = self.sigma_at(*transition, t);
                    let mut u_den = 0.0;
                    for (&s, &c) in &d.form.terms {
                        let idx = self.state_index_of_symbol(s);
                        u_den += c * u_state[idx];
                    }
                    -u_den / (sigma + u_den)
                }
                Provenance::Product(parts) => {
                    let mut v = 1.0;
                    for &(uid, e) in parts {
                        v *= u[uid].powi(e as i32);
                    }
                    v
                }
                Provenance::DuplicateOf(s) => u[*s],
                Provenance::MirrorOf(s) => -u[*s],
            };
        }
        Ok(u)
    }

    /// Verify base - sum |coeff_i| * bound_i(eps) >= 0 on the grid.
    pub fn check_nonnegativity(&self, eps: f64) -> Result<()> {
        let bounds: Vec<f64> = self
            .uncertainties
            .iter()
            .map(|u| u.bound.eval(eps))
            .collect::<Result<_>>()?;
        for (ti, tr) in self.transitions.iter().enumerate() {
            for &t in &self.v0.times {
                let mut worst = self.eval_coeff(ti, &tr.base, t);
                for term in &tr.terms {
                    worst -= self.eval_coeff(ti, &term.coeff, t) * bounds[term.unc];
                }
                if worst < 0.0 {
                    return Err(Error::EnvelopeNonnegativityViolated {
                        from: self.state_names[tr.from].clone(),
                        to: self.state_names[tr.to].clone(),
                        t,
                        eps,
                    });
                }
            }
        }
        Ok(())
    }

    /// Human-readable listing of bases, terms and bounds.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (ti, tr) in self.transitions.iter().enumerate() {
            s.push_str(&format!(
                "{} -> {}: base(0) = {:.6}\n",
                self.state_names[tr.from],
                self.state_names[tr.to],
                self.eval_coeff(ti, &tr.base, 0.0)
            ));
            for term in &tr.terms {
                let unc = &self.uncertainties[term.unc];
                s.push_str(&format!(
                    "    + k(0) = {:.6} * {}   [{:?}, bound(eps=0.1) = {:.6}]\n",
                    self.eval_coeff(ti, &term.coeff, 0.0),
                    unc.name,
                    unc.kind,
                    unc.bound.eval(0.1).unwrap_or(f64::NAN),
                ));
            }
        }
        s
    }
}


trait EvalNominal {
    fn eval_with_nominal(
        &self,
        sources: &BTreeMap<SymbolId, NominalSource>,
        v0: &[f64],
        params: &[Param],
        t: f64,
    ) -> Result<f64>;
}

impl EvalNominal for Polynomial {
    fn eval_with_nominal(
        &self,
        sources: &BTreeMap<SymbolId, NominalSource>,
        v0: &[f64],
        params: &[Param],
        t: f64,
    ) -> Result<f64> {
        let mut total = 0.0;
        for m in &self.monomials {
            let mut v = m.coeff;
            for (&s, &e) in &m.exps {
                let x = match sources.get(&s) {
                    Some(NominalSource::State(i)) => v0[*i],
                    Some(NominalSource::Param(j)) => params[*j].nominal.value(t),
                    None => return Err(Error::UnassignedSymbol(format!("symbol #{}", s.0))),
                };
                v *= x.powi(e as i32);
            }
            total += v;
        }
        Ok(total)
    }
}
