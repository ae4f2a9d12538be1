//! Input-queued switch structure: the 2×2 invariant-workload region and
//! max-weight matching properties.
//!
//! Queue `(i, j)` of an M×M switch has index `i·M + j`.

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::arrivals::rng_for;
use crate::error::{Error, Result};
use crate::lift::{invariant_state_test, lift, LiftProblem};
use crate::net::{presets, WeightFunction};
use crate::plan::rational::{self, Rational};
use crate::plan::{critically_loaded, enumerate_dual_vertices};

/// Row-1, column-1 and total workload of a 2×2 switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Iq2x2Workload {
    pub row1: f64,
    pub col1: f64,
    pub total: f64,
}

impl Iq2x2Workload {
    pub fn new(row1: f64, col1: f64, total: f64) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && x >= 0.0 && x <= total;
        if !(total.is_finite() && ok(row1) && ok(col1)) {
            return Err(Error::Precondition(format!(
                "workload ({row1}, {col1}, {total}) needs 0 ≤ row1, col1 ≤ total"
            )));
        }
        Ok(Self { row1, col1, total })
    }

    pub fn of(q: &[f64]) -> Self {
        Self {
            row1: q[0] + q[1],
            col1: q[0] + q[2],
            total: q.iter().sum(),
        }
    }

    pub fn row2(&self) -> f64 {
        (self.total - self.row1).max(0.0)
    }

    pub fn col2(&self) -> f64 {
        (self.total - self.col1).max(0.0)
    }

    /// Admissible range of `x = q₁₁`.
    pub fn bounds(&self) -> (f64, f64) {
        (
            (self.row1 + self.col1 - self.total).max(0.0),
            self.row1.min(self.col1),
        )
    }

    pub fn matrix(&self, x: f64) -> [f64; 4] {
        [
            x,
            (self.row1 - x).max(0.0),
            (self.col1 - x).max(0.0),
            (self.total - self.row1 - self.col1 + x).max(0.0),
        ]
    }

    /// `θ(x) = q₁₁^α + q₂₂^α − q₁₂^α − q₂₁^α` along the workload fiber.
    pub fn theta(&self, x: f64, alpha: f64) -> f64 {
        let q = self.matrix(x);
        q[0].powf(alpha) + q[3].powf(alpha) - q[1].powf(alpha) - q[2].powf(alpha)
    }
}

const MEMBERSHIP_TOL: f64 = 1e-12;

/// Closed-form test of `w ∈ {Ŵ(q) : q ∈ INV(α)}`.
pub fn iq2x2_membership(w: &Iq2x2Workload, alpha: f64) -> bool {
    let rows = [w.row1, w.row2()];
    let cols = [w.col1, w.col2()];
    let slack = MEMBERSHIP_TOL * w.total.max(1.0);
    rows.iter().all(|&r| {
        cols.iter().all(|&c| {
            r + c + (r.powf(alpha) + c.powf(alpha)).powf(1.0 / alpha) >= w.total - slack
        })
    })
}

/// The invariant state with workload w, as `[q₁₁, q₁₂, q₂₁, q₂₂]`.
pub fn iq2x2_invariant_solve(w: &Iq2x2Workload, alpha: f64) -> Result<[f64; 4]> {
    if !iq2x2_membership(w, alpha) {
        return Err(Error::NoRoot);
    }
    let (mut lo, mut hi) = w.bounds();
    if w.theta(lo, alpha) >= 0.0 {
        return Ok(w.matrix(lo));
    }
    if w.theta(hi, alpha) <= 0.0 {
        return Ok(w.matrix(hi));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if w.theta(mid, alpha) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(w.matrix(0.5 * (lo + hi)))
}

/// `ΔW(q)` for the 2×2 switch with doubly stochastic `λ > 0`, when the
/// workload of q lies in the invariant region. Otherwise `None`.
pub fn iq2x2_lift(q: &[f64], alpha: f64) -> Option<[f64; 4]> {
    let w = Iq2x2Workload::of(q);
    iq2x2_invariant_solve(&w, alpha).ok()
}

/// Existence of a root of θ on its interval by dense sampling.
pub fn iq2x2_membership_brute(w: &Iq2x2Workload, alpha: f64, points: usize) -> bool {
    let (lo, hi) = w.bounds();
    let slack = MEMBERSHIP_TOL * w.total.max(1.0).powf(alpha.max(1.0));
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let points = points.max(2);
    for k in 0..points {
        let x = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let t = w.theta(x, alpha);
        min = min.min(t);
        max = max.max(t);
    }
    min <= slack && max >= -slack
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaPair {
    pub alpha_hi: f64,
    pub alpha_lo: f64,
    /// Grid points in the region for `alpha_hi` but not for `alpha_lo`.
    pub nesting_violations: usize,
    /// Grid points in the region for `alpha_lo` only.
    pub strict_witnesses: usize,
    pub example_witness: Option<Iq2x2Workload>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaProbeReport {
    pub grid_points: usize,
    pub pairs: Vec<AlphaPair>,
    pub passed: bool,
}

/// Grid over `row1, col1 ∈ [0, 2]`, `total ∈ [0, 6]` with step 0.1, keeping
/// only valid workloads.
pub fn default_workload_grid() -> Vec<Iq2x2Workload> {
    let mut out = Vec::new();
    for i in 0..=20 {
        for j in 0..=20 {
            for k in 0..=60 {
                let (r, c, t) = (i as f64 / 10.0, j as f64 / 10.0, k as f64 / 10.0);
                if let Ok(w) = Iq2x2Workload::new(r, c, t) {
                    out.push(w);
                }
            }
        }
    }
    out
}

/// `k³` workloads: totals `t_max·a/k` for `a = 1..=k`, with row and column
/// workloads spread evenly over `[0, total]`.
pub fn fiber_grid(k: usize, t_max: f64) -> Vec<Iq2x2Workload> {
    let mut out = Vec::with_capacity(k * k * k);
    let span = (k.max(2) - 1) as f64;
    for a in 1..=k {
        let total = t_max * a as f64 / k as f64;
        for i in 0..k {
            for j in 0..k {
                out.push(Iq2x2Workload {
                    row1: total * i as f64 / span,
                    col1: total * j as f64 / span,
                    total,
                });
            }
        }
    }
    out
}

/// Checks that the invariant workload region grows as α decreases.
pub fn alpha_monotonicity_probe(alphas: &[f64], grid: &[Iq2x2Workload]) -> Result<AlphaProbeReport> {
    if alphas.iter().any(|a| !(*a > 0.0)) || alphas.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Precondition("α list must be positive and strictly decreasing".into()));
    }
    let pairs: Vec<AlphaPair> = alphas
        .windows(2)
        .map(|p| {
            let (hi, lo) = (p[0], p[1]);
            let mut pair = AlphaPair {
                alpha_hi: hi,
                alpha_lo: lo,
                nesting_violations: 0,
                strict_witnesses: 0,
                example_witness: None,
            };
            for w in grid {
                match (iq2x2_membership(w, hi), iq2x2_membership(w, lo)) {
                    (true, false) => pair.nesting_violations += 1,
                    (false, true) => {
                        pair.strict_witnesses += 1;
                        pair.example_witness.get_or_insert(*w);
                    }
                    _ => {}
                }
            }
            pair
        })
        .collect();
    let passed = pairs
        .iter()
        .all(|p| p.nesting_violations == 0 && p.strict_witnesses > 0);
    Ok(AlphaProbeReport {
        grid_points: grid.len(),
        pairs,
        passed,
    })
}

/// Largest α in the (decreasing) list at which w enters the region and stays
/// for every smaller listed α.
pub fn alpha_threshold_probe(w: &Iq2x2Workload, alphas: &[f64]) -> Option<f64> {
    let mut threshold = None;
    for &a in alphas.iter().rev() {
        if iq2x2_membership(w, a) {
            threshold = Some(a);
        } else {
            break;
        }
    }
    threshold
}

/// All M×M permutations, each as the column assigned to row i.
pub fn matchings(m: usize) -> Vec<Vec<usize>> {
    (0..m).permutations(m).collect()
}

fn matching_weight(p: &[usize], x: &[f64], m: usize) -> f64 {
    p.iter().enumerate().map(|(i, &j)| x[i * m + j]).sum()
}

/// `A_ij = 1` iff `(i, j)` lies in some matching of weight within `tol` of
/// the maximum.
pub fn max_matching_support(x: &[f64], m: usize, tol: f64) -> Vec<bool> {
    let all = matchings(m);
    let weights: Vec<f64> = all.iter().map(|p| matching_weight(p, x, m)).collect();
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut support = vec![false; m * m];
    for (p, w) in all.iter().zip(&weights) {
        if *w >= max - tol * (1.0 + max.abs()) {
            for (i, &j) in p.iter().enumerate() {
                support[i * m + j] = true;
            }
        }
    }
    support
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingReport {
    pub m: usize,
    pub closure_checked: usize,
    pub closure_violations: usize,
    pub coverage_checked: usize,
    pub coverage_violations: usize,
    /// Sampled states that failed the invariant-state test before the
    /// coverage check; these are not counted as checked.
    pub rejected_states: usize,
}

/// Closure: with integer weights in `0..=3`, every matching inside the
/// support of the max-weight matchings is itself max-weight. Coverage: at
/// invariant states under a doubly stochastic `λ > 0`, every queue lies in
/// some max-weight matching of `q^α`.
pub fn matching_structure_checks(
    m: usize,
    closure_samples: usize,
    invariant_samples: usize,
    alpha: f64,
    seed: u64,
) -> Result<MatchingReport> {
    if !(2..=4).contains(&m) {
        return Err(Error::Precondition("matching checks need 2 ≤ M ≤ 4".into()));
    }
    let all = matchings(m);
    let closure_violations: usize = (0..closure_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_for(seed, s as u64);
            let x: Vec<f64> = (0..m * m).map(|_| f64::from(rng.random_range(0..=3u8))).collect();
            let max = all
                .iter()
                .map(|p| matching_weight(p, &x, m))
                .fold(f64::NEG_INFINITY, f64::max);
            let support = max_matching_support(&x, m, 0.0);
            all.iter()
                .filter(|p| p.iter().enumerate().all(|(i, &j)| support[i * m + j]))
                .filter(|p| matching_weight(p, &x, m) != max)
                .count()
        })
        .sum();

    let model = presets::iq_switch(m)?;
    let vertices = enumerate_dual_vertices(&model)?;
    let weight = WeightFunction::power(alpha)?;
    let results: Vec<Result<Option<bool>>> = (0..invariant_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_for(seed ^ 0xA3A3_A3A3, s as u64);
            // λ is a mixture of all matchings with positive integer weights.
            let mix: Vec<i64> = all.iter().map(|_| rng.random_range(1..=4)).collect();
            let total: i64 = mix.iter().sum();
            let mut lambda = vec![Rational::from_integer(0.into()); m * m];
            for (p, &c) in all.iter().zip(&mix) {
                for (i, &j) in p.iter().enumerate() {
                    lambda[i * m + j] += rational::ratio(c, total);
                }
            }
            let crit = critically_loaded(&model, &lambda, &vertices)?;
            let problem = LiftProblem::new(&model, &lambda, &crit.xi)?;
            let q: Vec<f64> = (0..m * m).map(|_| rng.random_range(0.0..2.0)).collect();
            let r = lift(&problem, &weight, &q)?.r_star;
            let lam_f = rational::vec_to_f64(&lambda);
            if !invariant_state_test(&model, &lam_f, &weight, &r, 1e-6) {
                return Ok(None);
            }
            let x: Vec<f64> = r.iter().map(|&v| weight.eval(v)).collect();
            let support = max_matching_support(&x, m, 1e-6);
            Ok(Some(support.iter().all(|&b| b)))
        })
        .collect();
    let mut coverage_checked = 0;
    let mut coverage_violations = 0;
    let mut rejected = 0;
    for r in results {
        match r? {
            Some(ok) => {
                coverage_checked += 1;
                if !ok {
                    coverage_violations += 1;
                }
            }
            None => rejected += 1,
        }
    }
    Ok(MatchingReport {
        m,
        closure_checked: closure_samples,
        closure_violations,
        coverage_checked,
        coverage_violations,
        rejected_states: rejected,
    })
}
