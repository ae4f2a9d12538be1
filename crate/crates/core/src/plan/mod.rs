//! Static planning geometry in exact arithmetic: PRIMAL/DUAL values, load
//! classification, the vertices of the dual polytope
//! `{ξ ≥ 0 : ξ·π ≤ 1 for all π}`, virtual resources and critically loaded
//! sets.
//!
//! For multi-hop models every function here is posed for the effective load
//! `λ̃ = R̃λ`.

pub mod rational;
pub mod simplex;

use std::collections::BTreeSet;

use itertools::Itertools;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::NetworkModel;
use rational::{dot, Rational};
use simplex::{maximize, Constraint, Lp, LpOutcome, Relation};

/// Default cap on the number of candidate constraint subsets examined by
/// [`enumerate_dual_vertices`].
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 200_000;

/// Tolerance used when λ is only available as floats.
pub const APPROX_LOAD_TOL: f64 = 1e-9;

pub fn effective_load(model: &NetworkModel, lambda: &[Rational]) -> Vec<Rational> {
    if model.is_multi_hop() {
        model.upstream.apply_exact(lambda)
    } else {
        lambda.to_vec()
    }
}

fn check_load(model: &NetworkModel, lambda: &[Rational]) -> Result<()> {
    if lambda.len() != model.n_queues {
        return Err(Error::Dimension {
            expected: model.n_queues,
            got: lambda.len(),
        });
    }
    if lambda.iter().any(Signed::is_negative) {
        return Err(Error::Precondition("arrival rates must be nonnegative".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    pub value: Rational,
    /// Weight per schedule index.
    pub weights: Vec<Rational>,
}

/// `min Σ α_π` subject to `Σ α_π π ≥ λ`, `α ≥ 0`.
pub fn solve_primal(model: &NetworkModel, lambda: &[Rational]) -> Result<PrimalSolution> {
    check_load(model, lambda)?;
    let load = effective_load(model, lambda);
    let s = &model.schedules;
    let constraints = (0..model.n_queues)
        .map(|n| {
            Constraint::new(
                s.iter_exact().map(|pi| pi[n].clone()).collect(),
                Relation::Ge,
                load[n].clone(),
            )
        })
        .collect();
    let lp = Lp {
        n_vars: s.len(),
        objective: vec![-Rational::one(); s.len()],
        constraints,
    };
    match maximize(&lp) {
        LpOutcome::Optimal { value, x } => Ok(PrimalSolution {
            value: -value,
            weights: x,
        }),
        _ => Err(Error::Precondition(
            "some queue with positive load is never served by any schedule".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub value: Rational,
    pub xi: Vec<Rational>,
}

/// `max ξ·λ` subject to `ξ ≥ 0`, `ξ·π ≤ 1` for all π.
pub fn solve_dual(model: &NetworkModel, lambda: &[Rational]) -> Result<DualSolution> {
    check_load(model, lambda)?;
    let load = effective_load(model, lambda);
    let constraints = model
        .schedules
        .iter_exact()
        .map(|pi| Constraint::new(pi.to_vec(), Relation::Le, Rational::one()))
        .collect();
    let lp = Lp {
        n_vars: model.n_queues,
        objective: load,
        constraints,
    };
    match maximize(&lp) {
        LpOutcome::Optimal { value, x } => Ok(DualSolution { value, xi: x }),
        _ => Err(Error::Precondition(
            "some queue with positive load is never served by any schedule".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadKind {
    StrictlyAdmissible,
    Critical,
    Inadmissible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadClass {
    pub primal_value: Rational,
    pub class: LoadKind,
    /// Set when λ came in as floats and the class was decided with a tolerance.
    pub approximate: bool,
}

pub fn classify_load(model: &NetworkModel, lambda: &[Rational]) -> Result<LoadClass> {
    let value = solve_primal(model, lambda)?.value;
    let class = match value.cmp(&Rational::one()) {
        std::cmp::Ordering::Less => LoadKind::StrictlyAdmissible,
        std::cmp::Ordering::Equal => LoadKind::Critical,
        std::cmp::Ordering::Greater => LoadKind::Inadmissible,
    };
    Ok(LoadClass {
        primal_value: value,
        class,
        approximate: false,
    })
}

/// Classification for float rates: the PRIMAL value of the exact binary
/// expansion is compared with 1 at tolerance `tol`.
pub fn classify_load_f64(model: &NetworkModel, lambda: &[f64], tol: f64) -> Result<LoadClass> {
    if lambda.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("arrival rates must be finite".into()));
    }
    let exact: Vec<Rational> = lambda.iter().map(|&x| rational::from_f64(x)).collect();
    let value = solve_primal(model, &exact)?.value;
    let v = rational::to_f64(&value);
    let class = if (v - 1.0).abs() <= tol {
        LoadKind::Critical
    } else if v < 1.0 {
        LoadKind::StrictlyAdmissible
    } else {
        LoadKind::Inadmissible
    };
    Ok(LoadClass {
        primal_value: value,
        class,
        approximate: true,
    })
}

/// Vertices of the dual polytope and its maximal elements.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualResourceSet {
    /// All vertices, sorted lexicographically.
    pub vertices: Vec<Vec<Rational>>,
    /// Maximal vertices (the virtual resources), sorted lexicographically.
    pub maximal: Vec<Vec<Rational>>,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

pub fn enumerate_dual_vertices(model: &NetworkModel) -> Result<VirtualResourceSet> {
    enumerate_dual_vertices_with_budget(model, DEFAULT_ENUMERATION_BUDGET)
}

/// Brute force over all N-subsets of the `N + |S|` defining constraints. A
/// subset made of k schedule rows and N − k coordinate rows pins the N − k
/// coordinates at zero and leaves a k×k system for the rest.
pub fn enumerate_dual_vertices_with_budget(
    model: &NetworkModel,
    budget: u128,
) -> Result<VirtualResourceSet> {
    let n = model.n_queues;
    let schedules: Vec<&[Rational]> = model.schedules.iter_exact().collect();
    let candidates = binomial((n + schedules.len()) as u128, n as u128);
    if candidates > budget {
        return Err(Error::BudgetExceeded { candidates, budget });
    }
    let subsets: Vec<Vec<usize>> = (0..=n.min(schedules.len()))
        .flat_map(|k| (0..schedules.len()).combinations(k))
        .collect();
    let found: Vec<Vec<Vec<Rational>>> = subsets
        .par_iter()
        .map(|chosen| {
            let k = chosen.len();
            let mut out = Vec::new();
            for free in (0..n).combinations(k) {
                let a: Vec<Vec<Rational>> = chosen
                    .iter()
                    .map(|&s| free.iter().map(|&j| schedules[s][j].clone()).collect())
                    .collect();
                let Some(sol) = rational::solve_square(a, vec![Rational::one(); k]) else {
                    continue;
                };
                let mut xi = vec![Rational::zero(); n];
                for (&j, v) in free.iter().zip(sol) {
                    xi[j] = v;
                }
                if rational::is_nonnegative(&xi)
                    && schedules.iter().all(|pi| dot(pi, &xi) <= Rational::one())
                {
                    out.push(xi);
                }
            }
            out
        })
        .collect();
    let vertices: BTreeSet<Vec<Rational>> = found.into_iter().flatten().collect();
    let vertices: Vec<Vec<Rational>> = vertices.into_iter().collect();
    for v in &vertices {
        if !is_dual_vertex(model, v) {
            return Err(Error::InvalidNetwork(
                "vertex enumeration produced a non-vertex".into(),
            ));
        }
    }
    let maximal = vertices
        .iter()
        .filter(|xi| {
            !vertices
                .iter()
                .any(|z| z != *xi && xi.iter().zip(z).all(|(a, b)| a <= b))
        })
        .cloned()
        .collect();
    Ok(VirtualResourceSet { vertices, maximal })
}

/// Feasible for the dual polytope with N linearly independent tight
/// constraints.
pub fn is_dual_vertex(model: &NetworkModel, xi: &[Rational]) -> bool {
    let n = model.n_queues;
    if xi.len() != n || !rational::is_nonnegative(xi) {
        return false;
    }
    let mut tight = Vec::new();
    for pi in model.schedules.iter_exact() {
        let v = dot(pi, xi);
        if v > Rational::one() {
            return false;
        }
        if v == Rational::one() {
            tight.push(pi.to_vec());
        }
    }
    for (j, x) in xi.iter().enumerate() {
        if x.is_zero() {
            let mut e = vec![Rational::zero(); n];
            e[j] = Rational::one();
            tight.push(e);
        }
    }
    rational::rank(&tight) == n
}

/// Critically loaded virtual resources `Ξ(λ)` (within S*) and `Ξ⁺(λ)`
/// (within all vertices).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CriticalSets {
    pub xi: Vec<Vec<Rational>>,
    pub xi_plus: Vec<Vec<Rational>>,
}

impl CriticalSets {
    pub fn xi_f64(&self) -> Vec<Vec<f64>> {
        self.xi.iter().map(|v| rational::vec_to_f64(v)).collect()
    }

    pub fn xi_plus_f64(&self) -> Vec<Vec<f64>> {
        self.xi_plus.iter().map(|v| rational::vec_to_f64(v)).collect()
    }
}

pub fn critically_loaded(
    model: &NetworkModel,
    lambda: &[Rational],
    vrs: &VirtualResourceSet,
) -> Result<CriticalSets> {
    check_load(model, lambda)?;
    let load = effective_load(model, lambda);
    let pick = |set: &[Vec<Rational>]| {
        set.iter()
            .filter(|xi| dot(xi, &load) == Rational::one())
            .cloned()
            .collect()
    };
    Ok(CriticalSets {
        xi: pick(&vrs.maximal),
        xi_plus: pick(&vrs.vertices),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompleteLoading {
    pub holds: bool,
    /// The uniform point `1/(max_π 1·π)`.
    pub target: Vec<Rational>,
    /// Convex weights over `Ξ(λ)` (in its order) reproducing the target. The
    /// smallest weight is as large as possible.
    pub weights: Option<Vec<Rational>>,
}

pub fn complete_loading_check(model: &NetworkModel, crit: &CriticalSets) -> CompleteLoading {
    let n = model.n_queues;
    let total = model.schedules.max_total();
    let level = if total.is_zero() {
        Rational::zero()
    } else {
        total.recip()
    };
    let target = vec![level; n];
    let k = crit.xi.len();
    if k == 0 || total.is_zero() {
        return CompleteLoading {
            holds: false,
            target,
            weights: None,
        };
    }
    // Variables a_1..a_k, t; maximize t subject to Σ a ξ = target, Σ a = 1, a ≥ t.
    let mut constraints = Vec::new();
    for j in 0..n {
        let mut row: Vec<Rational> = crit.xi.iter().map(|xi| xi[j].clone()).collect();
        row.push(Rational::zero());
        constraints.push(Constraint::new(row, Relation::Eq, target[j].clone()));
    }
    let mut sum = vec![Rational::one(); k];
    sum.push(Rational::zero());
    constraints.push(Constraint::new(sum, Relation::Eq, Rational::one()));
    for v in 0..k {
        let mut row = vec![Rational::zero(); k + 1];
        row[v] = Rational::one();
        row[k] = -Rational::one();
        constraints.push(Constraint::new(row, Relation::Ge, Rational::zero()));
    }
    let mut objective = vec![Rational::zero(); k];
    objective.push(Rational::one());
    let lp = Lp {
        n_vars: k + 1,
        objective,
        constraints,
    };
    match maximize(&lp) {
        LpOutcome::Optimal { mut x, .. } => {
            x.truncate(k);
            CompleteLoading {
                holds: true,
                target,
                weights: Some(x),
            }
        }
        _ => CompleteLoading {
            holds: false,
            target,
            weights: None,
        },
    }
}

/// Whether `σ` is a convex combination of schedules.
pub fn hull_membership_exact(model: &NetworkModel, sigma: &[Rational]) -> bool {
    if sigma.len() != model.n_queues {
        return false;
    }
    let s = &model.schedules;
    let mut constraints: Vec<Constraint> = (0..model.n_queues)
        .map(|n| {
            Constraint::new(
                s.iter_exact().map(|pi| pi[n].clone()).collect(),
                Relation::Eq,
                sigma[n].clone(),
            )
        })
        .collect();
    constraints.push(Constraint::new(
        vec![Rational::one(); s.len()],
        Relation::Eq,
        Rational::one(),
    ));
    let lp = Lp {
        n_vars: s.len(),
        objective: vec![Rational::zero(); s.len()],
        constraints,
    };
    matches!(maximize(&lp), LpOutcome::Optimal { .. })
}

pub fn hull_membership(model: &NetworkModel, sigma: &[f64]) -> bool {
    if sigma.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let exact: Vec<Rational> = sigma.iter().map(|&x| rational::from_f64(x)).collect();
    hull_membership_exact(model, &exact)
}

/// Whether `σ ≥ 0` is dominated by a point of the hull, i.e. `PRIMAL(σ) ≤ 1`
/// posed directly on σ.
pub fn dominated_membership_exact(model: &NetworkModel, sigma: &[Rational]) -> bool {
    if sigma.len() != model.n_queues || !rational::is_nonnegative(sigma) {
        return false;
    }
    let s = &model.schedules;
    let constraints = (0..model.n_queues)
        .map(|n| {
            Constraint::new(
                s.iter_exact().map(|pi| pi[n].clone()).collect(),
                Relation::Ge,
                sigma[n].clone(),
            )
        })
        .collect();
    let lp = Lp {
        n_vars: s.len(),
        objective: vec![-Rational::one(); s.len()],
        constraints,
    };
    match maximize(&lp) {
        LpOutcome::Optimal { value, .. } => -value <= Rational::one(),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{int_schedules, presets, validate_network, RoutingMatrix};
    use rational::{int, ratio};

    fn lam(v: &[(i64, i64)]) -> Vec<Rational> {
        v.iter().map(|&(n, d)| ratio(n, d)).collect()
    }

    #[test]
    fn ex2_primal_values() {
        let m = presets::ex2();
        let p = solve_primal(&m, &lam(&[(1, 1), (1, 1)])).unwrap();
        assert_eq!(p.value, int(1));
        let p = solve_primal(&m, &lam(&[(3, 1), (0, 1)])).unwrap();
        assert_eq!(p.value, int(1));
        assert_eq!(p.weights, vec![int(1), int(0)]);
        assert_eq!(solve_primal(&m, &lam(&[(0, 1), (0, 1)])).unwrap().value, int(0));
    }

    #[test]
    fn ex2_dual_values() {
        let m = presets::ex2();
        let d = solve_dual(&m, &lam(&[(1, 1), (1, 1)])).unwrap();
        assert_eq!(d.value, int(1));
        assert!(d.xi == lam(&[(1, 3), (2, 3)]) || d.xi == lam(&[(0, 1), (1, 1)]));
        let d = solve_dual(&m, &lam(&[(3, 1), (0, 1)])).unwrap();
        assert_eq!(d.value, int(1));
        assert_eq!(d.xi[0], ratio(1, 3));
        assert_eq!(solve_dual(&m, &lam(&[(0, 1), (0, 1)])).unwrap().value, int(0));
    }

    #[test]
    fn ex2_classification() {
        let m = presets::ex2();
        let c = classify_load(&m, &lam(&[(3, 2), (1, 2)])).unwrap();
        assert_eq!(c.class, LoadKind::StrictlyAdmissible);
        assert_eq!(c.primal_value, ratio(5, 6));
        assert_eq!(classify_load(&m, &lam(&[(1, 1), (1, 1)])).unwrap().class, LoadKind::Critical);
        assert_eq!(
            classify_load(&m, &lam(&[(0, 1), (11, 10)])).unwrap().class,
            LoadKind::Inadmissible
        );
        let approx = classify_load_f64(&m, &[1.0, 1.0 - 1e-12], APPROX_LOAD_TOL).unwrap();
        assert!(approx.approximate);
        assert_eq!(approx.class, LoadKind::Critical);
    }

    #[test]
    fn ex2_vertices() {
        let m = presets::ex2();
        let v = enumerate_dual_vertices(&m).unwrap();
        let want: BTreeSet<Vec<Rational>> = [
            lam(&[(0, 1), (0, 1)]),
            lam(&[(1, 3), (0, 1)]),
            lam(&[(1, 3), (2, 3)]),
            lam(&[(0, 1), (1, 1)]),
        ]
        .into_iter()
        .collect();
        assert_eq!(v.vertices.iter().cloned().collect::<BTreeSet<_>>(), want);
        let smax: BTreeSet<_> = v.maximal.iter().cloned().collect();
        assert_eq!(
            smax,
            [lam(&[(1, 3), (2, 3)]), lam(&[(0, 1), (1, 1)])].into_iter().collect()
        );
    }

    #[test]
    fn single_queue_vertices() {
        let v = enumerate_dual_vertices(&presets::single_queue()).unwrap();
        assert_eq!(v.vertices, vec![vec![int(0)], vec![int(1)]]);
        assert_eq!(v.maximal, vec![vec![int(1)]]);
    }

    #[test]
    fn iq2_virtual_resources_are_rows_and_columns() {
        let m = presets::iq_switch(2).unwrap();
        let v = enumerate_dual_vertices(&m).unwrap();
        let ind = |cells: &[usize]| {
            let mut x = vec![int(0); 4];
            for &c in cells {
                x[c] = int(1);
            }
            x
        };
        let want: BTreeSet<_> = [ind(&[0, 1]), ind(&[2, 3]), ind(&[0, 2]), ind(&[1, 3])]
            .into_iter()
            .collect();
        assert_eq!(v.maximal.into_iter().collect::<BTreeSet<_>>(), want);
    }

    #[test]
    fn budget_guard() {
        let m = presets::iq_switch(3).unwrap();
        assert!(matches!(
            enumerate_dual_vertices_with_budget(&m, 100),
            Err(Error::BudgetExceeded { candidates: 5005, budget: 100 })
        ));
    }

    #[test]
    fn ex2_critical_sets() {
        let m = presets::ex2();
        let v = enumerate_dual_vertices(&m).unwrap();
        let c = critically_loaded(&m, &lam(&[(1, 1), (1, 1)]), &v).unwrap();
        assert_eq!(c.xi.len(), 2);
        let c = critically_loaded(&m, &lam(&[(3, 1), (0, 1)]), &v).unwrap();
        assert_eq!(c.xi, vec![lam(&[(1, 3), (2, 3)])]);
        assert!(c.xi_plus.contains(&lam(&[(1, 3), (0, 1)])));
        let c = critically_loaded(&m, &lam(&[(1, 2), (1, 2)]), &v).unwrap();
        assert!(c.xi.is_empty() && c.xi_plus.is_empty());
    }

    #[test]
    fn complete_loading_cases() {
        let m = presets::ex2();
        let v = enumerate_dual_vertices(&m).unwrap();
        let c = critically_loaded(&m, &lam(&[(1, 1), (1, 1)]), &v).unwrap();
        assert!(!complete_loading_check(&m, &c).holds);
        assert!(!complete_loading_check(&m, &CriticalSets::default()).holds);

        let sw = presets::iq_switch(2).unwrap();
        let v = enumerate_dual_vertices(&sw).unwrap();
        let c = critically_loaded(&sw, &vec![ratio(1, 2); 4], &v).unwrap();
        let cl = complete_loading_check(&sw, &c);
        assert!(cl.holds);
        assert_eq!(cl.weights.unwrap(), vec![ratio(1, 4); 4]);
    }

    #[test]
    fn hull_cases() {
        let m = presets::ex2();
        assert!(hull_membership(&m, &[2.0, 0.5]));
        assert!(!hull_membership(&m, &[2.0, 1.0]));
        assert!(hull_membership(&m, &[1.0, 1.0]));
        assert!(dominated_membership_exact(&m, &lam(&[(1, 1), (1, 2)])));
        assert!(!dominated_membership_exact(&m, &lam(&[(0, 1), (11, 10)])));
    }

    #[test]
    fn tandem_uses_effective_load() {
        let s = crate::net::monotone_closure(&int_schedules(&[&[1, 1]]));
        let m = validate_network(s, RoutingMatrix::from_pairs(2, &[(0, 1)]).unwrap()).unwrap();
        // λ̃ = (1/2, 1): queue 2 is critical.
        let c = classify_load(&m, &lam(&[(1, 2), (1, 2)])).unwrap();
        assert_eq!(c.class, LoadKind::Critical);
    }

    #[test]
    fn inadmissible_iff_virtual_resource_overloaded() {
        let m = presets::ex2();
        let v = enumerate_dual_vertices(&m).unwrap();
        for a in 0..=12 {
            for b in 0..=12 {
                let l = lam(&[(a, 4), (b, 8)]);
                let over = v.maximal.iter().any(|xi| dot(xi, &l) > int(1));
                let class = classify_load(&m, &l).unwrap().class;
                assert_eq!(over, class == LoadKind::Inadmissible, "λ={a}/4,{b}/8");
            }
        }
    }
}
