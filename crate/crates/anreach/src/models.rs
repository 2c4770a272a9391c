//! Built-in model generators for the multi-class SIRS and generalized
//! processor sharing (GPS) queueing case studies.

use std::collections::BTreeMap;

use crate::network::{
    AffineJson, ModelJson, MonomialJson, NominalJson, ParamJson, RateJson, ReactionJson,
};

/// Multi-class SIRS with D classes. Infection rates k_a_{nu}_{mu} = 1,
/// recovery k_b_{nu} = 2, immunity loss k_g_{nu} = 3; initial condition
/// S_nu(0) = 4 + 0.1(nu-1), I_nu(0) = R_nu(0) = 1; horizon 3. Every
/// parameter carries the same uncertainty bound.
pub fn sirs_model(d: usize, theta_bound: f64) -> ModelJson {
    assert!(d >= 1);
    let mut states = Vec::new();
    for nu in 1..=d {
        states.push(format!("S_{nu}"));
        states.push(format!("I_{nu}"));
        states.push(format!("R_{nu}"));
    }

    let mut params = BTreeMap::new();
    let mut reactions = Vec::new();
    for nu in 1..=d {
        for mu in 1..=d {
            let alpha = format!("k_a_{nu}_{mu}");
            params.insert(
                alpha.clone(),
                ParamJson { nominal: NominalJson::Constant(1.0), bound: theta_bound },
            );
            reactions.push(ReactionJson {
                transitions: vec![
                    (format!("S_{nu}"), format!("I_{nu}")),
                    (format!("I_{mu}"), format!("I_{mu}")),
                ],
                rate: RateJson {
                    poly: vec![MonomialJson {
                        coeff: 1.0,
                        vars: [
                            (alpha, 1u32),
                            (format!("S_{nu}"), 1),
                            (format!("I_{mu}"), 1),
                        ]
                        .into_iter()
                        .collect(),
                    }],
                    denom: None,
                },
            });
        }
        let beta = format!("k_b_{nu}");
        params.insert(
            beta.clone(),
            ParamJson { nominal: NominalJson::Constant(2.0), bound: theta_bound },
        );
        reactions.push(ReactionJson {
            transitions: vec![(format!("I_{nu}"), format!("R_{nu}"))],
            rate: RateJson {
                poly: vec![MonomialJson {
                    coeff: 1.0,
                    vars: [(beta, 1u32), (format!("I_{nu}"), 1)].into_iter().collect(),
                }],
                denom: None,
            },
        });
        let gamma = format!("k_g_{nu}");
        params.insert(
            gamma.clone(),
            ParamJson { nominal: NominalJson::Constant(3.0), bound: theta_bound },
        );
        reactions.push(ReactionJson {
            transitions: vec![(format!("R_{nu}"), format!("S_{nu}"))],
            rate: RateJson {
                poly: vec![MonomialJson {
                    coeff: 1.0,
                    vars: [(gamma, 1u32), (format!("R_{nu}"), 1)].into_iter().collect(),
                }],
                denom: None,
            },
        });
    }

    let mut init = BTreeMap::new();
    for nu in 1..=d {
        init.insert(format!("S_{nu}"), 4.0 + 0.1 * (nu as f64 - 1.0));
        init.insert(format!("I_{nu}"), 1.0);
        init.insert(format!("R_{nu}"), 1.0);
    }

    ModelJson { states, params, reactions, init, horizon: 3.0 }
}

/// GPS queueing model with D job classes. Service rates k_a_{nu} = 3 carry
/// the uncertainty bound, think-time rates k_b_{nu} = 4 are certain;
/// bandwidth shares phi_nu = 2 nu / (D (D+1)); initial condition
/// Q_nu(0) = 0.8, D_nu(0) = 0.2; horizon 3.
pub fn gps_model(d: usize, alpha_bound: f64) -> ModelJson {
    assert!(d >= 2);
    let phi = |nu: usize| 2.0 * nu as f64 / (d as f64 * (d as f64 + 1.0));

    let mut states = Vec::new();
    for nu in 1..=d {
        states.push(format!("Q_{nu}"));
        states.push(format!("D_{nu}"));
    }

    let denom_terms: BTreeMap<String, f64> =
        (1..=d).map(|mu| (format!("Q_{mu}"), phi(mu))).collect();

    let mut params = BTreeMap::new();
    let mut reactions = Vec::new();
    for nu in 1..=d {
        let alpha = format!("k_a_{nu}");
        params.insert(
            alpha.clone(),
            ParamJson { nominal: NominalJson::Constant(3.0), bound: alpha_bound },
        );
        reactions.push(ReactionJson {
            transitions: vec![(format!("Q_{nu}"), format!("D_{nu}"))],
            rate: RateJson {
                poly: vec![MonomialJson {
                    coeff: phi(nu),
                    vars: [(alpha, 1u32), (format!("Q_{nu}"), 1)].into_iter().collect(),
                }],
                denom: Some(AffineJson { constant: 0.0, terms: denom_terms.clone() }),
            },
        });
        let beta = format!("k_b_{nu}");
        params.insert(beta.clone(), ParamJson { nominal: NominalJson::Constant(4.0), bound: 0.0 });
        reactions.push(ReactionJson {
            transitions: vec![(format!("D_{nu}"), format!("Q_{nu}"))],
            rate: RateJson {
                poly: vec![MonomialJson {
                    coeff: 1.0,
                    vars: [(beta, 1u32), (format!("D_{nu}"), 1)].into_iter().collect(),
                }],
                denom: None,
            },
        });
    }

    let mut init = BTreeMap::new();
    for nu in 1..=d {
        init.insert(format!("Q_{nu}"), 0.8);
        init.insert(format!("D_{nu}"), 0.2);
    }

    ModelJson { states, params, reactions, init, horizon: 3.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sirs_compiles_for_small_d() {
        for d in 1..=3 {
            let an = sirs_model(d, 0.05).compile().unwrap();
            assert_eq!(an.state_names.len(), 3 * d);
            assert_eq!(an.params.len(), d * d + 2 * d);
            assert_eq!(an.reactions.len(), d * d + 2 * d);
        }
    }

    #[test]
    fn gps_compiles_and_phi_sums_to_one() {
        for d in 2..=4 {
            let an = gps_model(d, 0.05).compile().unwrap();
            assert_eq!(an.state_names.len(), 2 * d);
            let r = &an.reactions[0];
            let denom = r.rate.denom.as_ref().unwrap();
            let total: f64 = denom.terms.values().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
