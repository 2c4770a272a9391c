//! Sparse multivariate polynomials and rational rate expressions.
//!
//! Rates are polynomials over interned symbols, optionally divided by a
//! positive affine form in state symbols. Shift-expansion substitutes
//! `x <- x0 + u_x` and is the algebraic step behind envelope construction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    State,
    Parameter,
    /// Nominal companion of a shifted symbol (`V_B^0`, `k_a^0`).
    Nominal,
    /// Deviation companion of a shifted symbol (`u_B`, `u_a`).
    Deviation,
}

/// Interned symbols with name/kind lookup and the nominal/deviation
/// companions used by shift-expansion.
#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    names: Vec<String>,
    kinds: Vec<SymbolKind>,
    index: BTreeMap<String, SymbolId>,
    /// shifted symbol -> (nominal companion, deviation companion)
    shift: BTreeMap<SymbolId, (SymbolId, SymbolId)>,
    /// deviation symbol -> shifted original
    dev_origin: BTreeMap<SymbolId, SymbolId>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str, kind: SymbolKind) -> SymbolId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = SymbolId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.kinds.push(kind);
        self.index.insert(name.to_string(), id);
        id
    }

    /// Intern a state or parameter symbol together with its nominal and
    /// deviation companions.
    pub fn intern_shiftable(&mut self, name: &str, kind: SymbolKind) -> SymbolId {
        let id = self.intern(name, kind);
        if !self.shift.contains_key(&id) {
            let nom = self.intern(&format!("{name}^0"), SymbolKind::Nominal);
            let dev = self.intern(&format!("u[{name}]"), SymbolKind::Deviation);
            self.shift.insert(id, (nom, dev));
            self.dev_origin.insert(dev, id);
        }
        id
    }

    pub fn lookup(&self, name: &str) -> Option<SymbolId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: SymbolId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn kind(&self, id: SymbolId) -> SymbolKind {
        self.kinds[id.0 as usize]
    }

    pub fn nominal_of(&self, id: SymbolId) -> Option<SymbolId> {
        self.shift.get(&id).map(|&(n, _)| n)
    }

    pub fn deviation_of(&self, id: SymbolId) -> Option<SymbolId> {
        self.shift.get(&id).map(|&(_, d)| d)
    }

    pub fn origin_of_deviation(&self, dev: SymbolId) -> Option<SymbolId> {
        self.dev_origin.get(&dev).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// A single monomial: coefficient times a product of symbol powers.
/// Canonical form drops zero exponents and zero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub exps: BTreeMap<SymbolId, u32>,
}

impl Monomial {
    pub fn constant(coeff: f64) -> Self {
        Monomial { coeff, exps: BTreeMap::new() }
    }

    pub fn var(coeff: f64, sym: SymbolId) -> Self {
        let mut exps = BTreeMap::new();
        exps.insert(sym, 1);
        Monomial { coeff, exps }
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut exps = self.exps.clone();
        for (&s, &e) in &other.exps {
            *exps.entry(s).or_insert(0) += e;
        }
        Monomial { coeff: self.coeff * other.coeff, exps }
    }

    pub fn degree(&self) -> u32 {
        self.exps.values().sum()
    }
}

/// A merged list of monomials; no two entries share an exponent map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    pub monomials: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial { monomials: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::from_monomials(vec![Monomial::constant(c)])
    }

    pub fn var(sym: SymbolId) -> Self {
        Polynomial::from_monomials(vec![Monomial::var(1.0, sym)])
    }

    /// Merge monomials with identical exponent maps and drop zero terms.
    pub fn from_monomials(monomials: Vec<Monomial>) -> Self {
        let mut merged: BTreeMap<Vec<(SymbolId, u32)>, f64> = BTreeMap::new();
        for m in monomials {
            let key: Vec<_> = m.exps.iter().filter(|&(_, &e)| e > 0).map(|(&s, &e)| (s, e)).collect();
            *merged.entry(key).or_insert(0.0) += m.coeff;
        }
        let monomials = merged
            .into_iter()
            .filter(|&(_, c)| c != 0.0)
            .map(|(key, coeff)| Monomial { coeff, exps: key.into_iter().collect() })
            .collect();
        Polynomial { monomials }
    }

    pub fn is_zero(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut all = self.monomials.clone();
        all.extend(other.monomials.iter().cloned());
        Polynomial::from_monomials(all)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Vec::with_capacity(self.monomials.len() * other.monomials.len());
        for a in &self.monomials {
            for b in &other.monomials {
                out.push(a.mul(b));
            }
        }
        Polynomial::from_monomials(out)
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        Polynomial::from_monomials(
            self.monomials.iter().map(|m| Monomial { coeff: m.coeff * c, exps: m.exps.clone() }).collect(),
        )
    }

    pub fn eval_with<F>(&self, table: &SymbolTable, assign: F) -> Result<f64>
    where
        F: Fn(SymbolId) -> Option<f64>,
    {
        let mut total = 0.0;
        for m in &self.monomials {
            let mut v = m.coeff;
            for (&s, &e) in &m.exps {
                let x = assign(s).ok_or_else(|| Error::UnassignedSymbol(table.name(s).to_string()))?;
                v *= x.powi(e as i32);
            }
            total += v;
        }
        Ok(total)
    }

    /// Symbols occurring with positive exponent in some monomial.
    pub fn symbols(&self) -> Vec<SymbolId> {
        let mut syms: Vec<SymbolId> = self
            .monomials
            .iter()
            .flat_map(|m| m.exps.keys().copied())
            .collect();
        syms.sort();
        syms.dedup();
        syms
    }
}

/// Decrement the exponent of `state` in every monomial of `p`.
/// This is the symbolic division behind the atomic transition rates.
pub fn divide_by_state(p: &Polynomial, state: SymbolId, table: &SymbolTable) -> Result<Polynomial> {
    let mut out = Vec::with_capacity(p.monomials.len());
    for m in &p.monomials {
        match m.exps.get(&state) {
            Some(&e) if e >= 1 => {
                let mut exps = m.exps.clone();
                if e == 1 {
                    exps.remove(&state);
                } else {
                    exps.insert(state, e - 1);
                }
                out.push(Monomial { coeff: m.coeff, exps });
            }
            _ => {
                return Err(Error::NotDivisible { state: table.name(state).to_string() });
            }
        }
    }
    Ok(Polynomial::from_monomials(out))
}

/// Substitute `x <- x^0 + u_x` for every symbol of `shifted` and expand.
/// Symbols outside `shifted` are left untouched.
pub fn shift_expand(p: &Polynomial, shifted: &[SymbolId], table: &SymbolTable) -> Polynomial {
    let mut out = Polynomial::zero();
    for m in &p.monomials {
        let mut acc = Polynomial::constant(m.coeff);
        for (&s, &e) in &m.exps {
            let factor = if shifted.contains(&s) {
                let (nom, dev) = (
                    table.nominal_of(s).expect("shifted symbol must be shiftable"),
                    table.deviation_of(s).expect("shifted symbol must be shiftable"),
                );
                Polynomial::var(nom).add(&Polynomial::var(dev))
            } else {
                Polynomial::var(s)
            };
            for _ in 0..e {
                acc = acc.mul(&factor);
            }
        }
        out = out.add(&acc);
    }
    out
}

/// Affine form `constant + sum coeff_B * V_B` over state symbols.
/// Used as the (strictly positive) denominator of sharing-type rates.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub constant: f64,
    pub terms: BTreeMap<SymbolId, f64>,
}

impl AffineForm {
    pub fn eval_with<F>(&self, table: &SymbolTable, assign: F) -> Result<f64>
    where
        F: Fn(SymbolId) -> Option<f64>,
    {
        let mut total = self.constant;
        for (&s, &c) in &self.terms {
            let x = assign(s).ok_or_else(|| Error::UnassignedSymbol(table.name(s).to_string()))?;
            total += c * x;
        }
        Ok(total)
    }

    /// Sum of absolute term coefficients; scales the denominator
    /// uncertainty budget fed into the reciprocal bound.
    pub fn abs_coeff_sum(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).sum()
    }
}

/// Polynomial numerator over an optional positive affine denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct RateExpr {
    pub numer: Polynomial,
    pub denom: Option<AffineForm>,
}

impl RateExpr {
    pub fn polynomial(numer: Polynomial) -> Self {
        RateExpr { numer, denom: None }
    }

    pub fn eval_with<F>(&self, table: &SymbolTable, assign: F) -> Result<f64>
    where
        F: Fn(SymbolId) -> Option<f64> + Copy,
    {
        let num = self.numer.eval_with(table, assign)?;
        match &self.denom {
            None => Ok(num),
            Some(d) => {
                let den = d.eval_with(table, assign)?;
                if den <= 0.0 {
                    return Err(Error::NonPositiveDenominator { value: den, t: f64::NAN });
                }
                Ok(num / den)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn assign_map(m: &HashMap<SymbolId, f64>) -> impl Fn(SymbolId) -> Option<f64> + Copy + '_ {
        move |s| m.get(&s).copied()
    }

    #[test]
    fn eval_mass_action_rate() {
        let mut t = SymbolTable::new();
        let vs = t.intern_shiftable("V_S", SymbolKind::State);
        let vi = t.intern_shiftable("V_I", SymbolKind::State);
        let p = Polynomial::var(vs).mul(&Polynomial::var(vi));
        let mut a = HashMap::new();
        a.insert(vs, 4.0);
        a.insert(vi, 1.0);
        let r = RateExpr::polynomial(p);
        assert_eq!(r.eval_with(&t, assign_map(&a)).unwrap(), 4.0);
    }

    #[test]
    fn eval_constant() {
        let t = SymbolTable::new();
        let r = RateExpr::polynomial(Polynomial::constant(1.0));
        assert_eq!(r.eval_with(&t, |_| None).unwrap(), 1.0);
    }

    #[test]
    fn eval_gps_sharing_rate() {
        // k_a * phi1 * V_Q1 / (phi1 V_Q1 + phi2 V_Q2) with phi = (1/3, 2/3)
        let mut t = SymbolTable::new();
        let ka = t.intern_shiftable("k_a", SymbolKind::Parameter);
        let q1 = t.intern_shiftable("Q1", SymbolKind::State);
        let q2 = t.intern_shiftable("Q2", SymbolKind::State);
        let numer = Polynomial::var(ka).mul(&Polynomial::var(q1)).scale(1.0 / 3.0);
        let mut terms = BTreeMap::new();
        terms.insert(q1, 1.0 / 3.0);
        terms.insert(q2, 2.0 / 3.0);
        let r = RateExpr { numer, denom: Some(AffineForm { constant: 0.0, terms }) };
        let mut a = HashMap::new();
        a.insert(ka, 3.0);
        a.insert(q1, 0.8);
        a.insert(q2, 0.8);
        let v = r.eval_with(&t, assign_map(&a)).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn eval_rejects_nonpositive_denominator() {
        let mut t = SymbolTable::new();
        let q = t.intern_shiftable("Q", SymbolKind::State);
        let mut terms = BTreeMap::new();
        terms.insert(q, 1.0);
        let r = RateExpr {
            numer: Polynomial::constant(1.0),
            denom: Some(AffineForm { constant: 0.0, terms }),
        };
        let mut a = HashMap::new();
        a.insert(q, 0.0);
        assert!(matches!(
            r.eval_with(&t, assign_map(&a)),
            Err(Error::NonPositiveDenominator { .. })
        ));
    }

    #[test]
    fn divide_by_state_examples() {
        let mut t = SymbolTable::new();
        let vs = t.intern_shiftable("V_S", SymbolKind::State);
        let vi = t.intern_shiftable("V_I", SymbolKind::State);
        let vr = t.intern_shiftable("V_R", SymbolKind::State);
        let kb = t.intern_shiftable("k_b", SymbolKind::Parameter);

        let p = Polynomial::var(vs).mul(&Polynomial::var(vi));
        let q = divide_by_state(&p, vs, &t).unwrap();
        assert_eq!(q, Polynomial::var(vi));

        let p = Polynomial::var(kb).mul(&Polynomial::var(vi));
        let q = divide_by_state(&p, vi, &t).unwrap();
        assert_eq!(q, Polynomial::var(kb));

        let p = Polynomial::var(vr);
        assert!(matches!(divide_by_state(&p, vs, &t), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn divide_then_multiply_is_identity() {
        let mut t = SymbolTable::new();
        let x = t.intern_shiftable("x", SymbolKind::State);
        let y = t.intern_shiftable("y", SymbolKind::State);
        let p = Polynomial::from_monomials(vec![
            Monomial { coeff: 2.0, exps: [(x, 2), (y, 1)].into_iter().collect() },
            Monomial { coeff: -3.5, exps: [(x, 1)].into_iter().collect() },
        ]);
        let q = divide_by_state(&p, x, &t).unwrap();
        assert_eq!(q.mul(&Polynomial::var(x)), p);
    }

    #[test]
    fn shift_expand_bilinear() {
        // k_a * V_I -> k_a^0 V_I^0 + k_a^0 u_I + u_a V_I^0 + u_a u_I
        let mut t = SymbolTable::new();
        let ka = t.intern_shiftable("k_a", SymbolKind::Parameter);
        let vi = t.intern_shiftable("V_I", SymbolKind::State);
        let p = Polynomial::var(ka).mul(&Polynomial::var(vi));
        let e = shift_expand(&p, &[ka, vi], &t);
        assert_eq!(e.monomials.len(), 4);
        let (ka0, ua) = (t.nominal_of(ka).unwrap(), t.deviation_of(ka).unwrap());
        let (vi0, ui) = (t.nominal_of(vi).unwrap(), t.deviation_of(vi).unwrap());
        let expect = Polynomial::from_monomials(vec![
            Monomial { coeff: 1.0, exps: [(ka0, 1), (vi0, 1)].into_iter().collect() },
            Monomial { coeff: 1.0, exps: [(ka0, 1), (ui, 1)].into_iter().collect() },
            Monomial { coeff: 1.0, exps: [(ua, 1), (vi0, 1)].into_iter().collect() },
            Monomial { coeff: 1.0, exps: [(ua, 1), (ui, 1)].into_iter().collect() },
        ]);
        assert_eq!(e, expect);
    }

    #[test]
    fn shift_expand_constant_unaffected() {
        let mut t = SymbolTable::new();
        let x = t.intern_shiftable("x", SymbolKind::State);
        let p = Polynomial::constant(3.25);
        assert_eq!(shift_expand(&p, &[x], &t), p);
    }

    #[test]
    fn shift_expand_square_binomial() {
        let mut t = SymbolTable::new();
        let x = t.intern_shiftable("x", SymbolKind::State);
        let p = Polynomial::var(x).mul(&Polynomial::var(x));
        let e = shift_expand(&p, &[x], &t);
        let (x0, ux) = (t.nominal_of(x).unwrap(), t.deviation_of(x).unwrap());
        let expect = Polynomial::from_monomials(vec![
            Monomial { coeff: 1.0, exps: [(x0, 2)].into_iter().collect() },
            Monomial { coeff: 2.0, exps: [(x0, 1), (ux, 1)].into_iter().collect() },
            Monomial { coeff: 1.0, exps: [(ux, 2)].into_iter().collect() },
        ]);
        assert_eq!(e, expect);
    }
}
