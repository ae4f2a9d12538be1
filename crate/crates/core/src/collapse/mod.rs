//! State-space collapse experiments, fluid near-optimality audits and the
//! input-queued switch suites.

pub mod iq;

use rayon::prelude::*;
use serde::Serialize;

use crate::arrivals::{median, ArrivalModel};
use crate::error::{Error, Result};
use crate::fluid::FluidTrajectory;
use crate::lift::{invariant_state_test, lift_with, LiftOptions, LiftProblem};
use crate::net::{NetworkModel, WeightFunction};
use crate::plan::rational::{self, Rational};
use crate::plan::{critically_loaded, enumerate_dual_vertices};
use crate::policy::{Policy, PolicyKind};
use crate::sim::{rescale, run_with, RunOptions, ScaleKind};
use crate::vecops::{sup_dist, sup_norm, sum};

pub use iq::{
    alpha_monotonicity_probe, iq2x2_invariant_solve, iq2x2_lift, iq2x2_membership,
    matching_structure_checks, Iq2x2Workload,
};

/// Scales below this are reported as sub-asymptotic.
pub const SUB_ASYMPTOTIC_SCALE: f64 = 5.0;
pub const DEFAULT_MEDIAN_THRESHOLD: f64 = 0.2;
pub const DEFAULT_SUBSAMPLE: usize = 200;

#[derive(Debug, Clone)]
pub struct MsscConfig {
    pub model: NetworkModel,
    pub policy: Policy,
    pub lambda: Vec<Rational>,
    /// `q̂(0)`, required to be an invariant state.
    pub q_hat0: Vec<f64>,
    pub scales: Vec<f64>,
    pub horizon: f64,
    pub replications: usize,
    pub seed: u64,
    pub subsample: usize,
    /// `λ^r = λ − Γ/r`; runs with Γ set are labeled as probes.
    pub heavy_traffic: Option<Vec<f64>>,
    pub median_threshold: f64,
}

impl MsscConfig {
    /// 2×2 switch, `λ_ij = ½`, MW-1, `q̂(0) = [[1, ½], [½, 0]]`.
    pub fn canonical() -> Result<Self> {
        Ok(Self {
            model: crate::net::presets::iq_switch(2)?,
            policy: Policy::mw_alpha(1.0)?,
            lambda: vec![rational::ratio(1, 2); 4],
            q_hat0: vec![1.0, 0.5, 0.5, 0.0],
            scales: vec![10.0, 20.0, 40.0],
            horizon: 2.0,
            replications: 20,
            seed: 2024,
            subsample: DEFAULT_SUBSAMPLE,
            heavy_traffic: None,
            median_threshold: DEFAULT_MEDIAN_THRESHOLD,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseRow {
    pub r: f64,
    pub replication: usize,
    pub ratio: f64,
    pub sup_deviation: f64,
    pub sup_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleSummary {
    pub r: f64,
    pub median: f64,
    pub p90: f64,
    pub sub_asymptotic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseReport {
    pub rows: Vec<CollapseRow>,
    pub summary: Vec<ScaleSummary>,
    /// Ξ(λ) is empty, so ΔW ≡ 0.
    pub trivial_lift: bool,
    pub heavy_traffic_probe: bool,
    pub median_strictly_decreasing: bool,
    pub median_threshold: f64,
    pub meets_threshold: bool,
}

/// Nearest-rank quantile.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// For each scale r and replication: start from `r·q̂(0)`, simulate
/// `r²T` slots with Bernoulli arrivals, rescale diffusively and compare the
/// path with its lift on a subsampled grid.
pub fn mssc_experiment(cfg: &MsscConfig) -> Result<CollapseReport> {
    let model = &cfg.model;
    let n = model.n_queues;
    if cfg.lambda.len() != n || cfg.q_hat0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: cfg.lambda.len().min(cfg.q_hat0.len()),
        });
    }
    if cfg.scales.is_empty() || cfg.scales.iter().any(|r| !(*r >= 1.0)) {
        return Err(Error::Precondition("scales must be ≥ 1".into()));
    }
    if cfg.replications == 0 || !(cfg.horizon > 0.0) {
        return Err(Error::Precondition("need replications > 0 and T > 0".into()));
    }
    let weight = match &cfg.policy.kind {
        PolicyKind::Mw(f) | PolicyKind::Backpressure(f) => f.clone(),
        PolicyKind::MsmwLog => {
            return Err(Error::Precondition("the collapse experiment needs an MW-f policy".into()))
        }
    };
    let lambda_f = rational::vec_to_f64(&cfg.lambda);
    if !invariant_state_test(model, &lambda_f, &weight, &cfg.q_hat0, 1e-9) {
        return Err(Error::Precondition("q̂(0) is not an invariant state".into()));
    }
    let vertices = enumerate_dual_vertices(model)?;
    let crit = critically_loaded(model, &cfg.lambda, &vertices)?;
    let problem = LiftProblem::new(model, &cfg.lambda, &crit.xi)?;
    let trivial_lift = problem.n_constraints() == 0;

    let jobs: Vec<(usize, usize)> = (0..cfg.scales.len())
        .flat_map(|i| (0..cfg.replications).map(move |k| (i, k)))
        .collect();
    let rows: Vec<Result<CollapseRow>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let r = cfg.scales[i];
            let p: Vec<f64> = match &cfg.heavy_traffic {
                Some(g) => lambda_f.iter().zip(g).map(|(l, g)| (l - g / r).max(0.0)).collect(),
                None => lambda_f.clone(),
            };
            let arrivals = ArrivalModel::bernoulli(p)?;
            let q0: Vec<f64> = cfg.q_hat0.iter().map(|x| x * r).collect();
            let slots = (r * r * cfg.horizon).ceil() as usize;
            let opts = RunOptions {
                horizon: slots,
                seed: cfg.seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                replication: k as u64,
                stride: 1,
            };
            let path = run_with(model, &cfg.policy, &arrivals, &q0, &opts)?;
            let scaled = rescale(&path, ScaleKind::Diffusion(r), cfg.horizon, cfg.subsample)?;
            let mut warm: Option<Vec<f64>> = None;
            let mut dev: f64 = 0.0;
            let lift_opts = LiftOptions::default();
            for q in &scaled.q {
                let res = lift_with(&problem, &weight, q, &lift_opts, warm.as_deref())?;
                dev = dev.max(sup_dist(q, &res.r_star));
                warm = Some(res.multipliers);
            }
            let sup_q = scaled.q.iter().map(|q| sup_norm(q)).fold(0.0, f64::max);
            Ok(CollapseRow {
                r,
                replication: k,
                ratio: dev / sup_q.max(1.0),
                sup_deviation: dev,
                sup_q,
            })
        })
        .collect();
    let rows: Vec<CollapseRow> = rows.into_iter().collect::<Result<_>>()?;
    let summary: Vec<ScaleSummary> = cfg
        .scales
        .iter()
        .map(|&r| {
            let mut vals: Vec<f64> = rows.iter().filter(|x| x.r == r).map(|x| x.ratio).collect();
            ScaleSummary {
                r,
                median: median(&mut vals),
                p90: quantile(&vals, 0.9),
                sub_asymptotic: r < SUB_ASYMPTOTIC_SCALE,
            }
        })
        .collect();
    let mut by_r = summary.clone();
    by_r.sort_by(|a, b| a.r.total_cmp(&b.r));
    let median_strictly_decreasing = by_r.windows(2).all(|w| w[1].median < w[0].median);
    let meets_threshold = by_r
        .last()
        .map_or(false, |s| s.median <= cfg.median_threshold);
    Ok(CollapseReport {
        rows,
        summary,
        trivial_lift,
        heavy_traffic_probe: cfg.heavy_traffic.is_some(),
        median_strictly_decreasing,
        median_threshold: cfg.median_threshold,
        meets_threshold,
    })
}

/// `N^{α/(1+α)}`.
pub fn upper_factor(n: usize, alpha: f64) -> f64 {
    (n as f64).powf(alpha / (1.0 + alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearOptimalityRow {
    pub policy: String,
    pub initial_total: f64,
    /// `max_t 1·q(t) − N^{α/(1+α)}·1·q(0)`; `None` for policies other than
    /// MW-α.
    pub upper_violation: Option<f64>,
    /// `max_t 1·q(0) − 1·q(t)`; `None` without complete loading.
    pub lower_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearOptimalityReport {
    pub n_queues: usize,
    pub complete_loading: bool,
    pub rows: Vec<NearOptimalityRow>,
}

impl NearOptimalityReport {
    /// Whether every asserted bound holds within `slack`.
    pub fn holds(&self, slack: f64) -> bool {
        self.rows.iter().all(|r| {
            r.upper_violation.map_or(true, |v| v <= slack) && r.lower_violation.map_or(true, |v| v <= slack)
        })
    }
}

/// Evaluates both total-queue bounds along fluid trajectories. Each
/// trajectory comes with the policy that produced it.
pub fn near_optimality_audit(
    model: &NetworkModel,
    complete_loading: bool,
    runs: &[(&Policy, &FluidTrajectory)],
) -> NearOptimalityReport {
    let n = model.n_queues;
    let rows = runs
        .iter()
        .map(|(policy, traj)| {
            let initial = sum(&traj.q[0]);
            let totals: Vec<f64> = traj.q.iter().map(|q| sum(q)).collect();
            let max_total = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min_total = totals.iter().copied().fold(f64::INFINITY, f64::min);
            let upper_violation = match &policy.kind {
                PolicyKind::Mw(WeightFunction::Power { alpha }) => {
                    Some(max_total - upper_factor(n, *alpha) * initial)
                }
                _ => None,
            };
            NearOptimalityRow {
                policy: policy.label(),
                initial_total: initial,
                upper_violation,
                lower_violation: complete_loading.then(|| initial - min_total),
            }
        })
        .collect();
    NearOptimalityReport {
        n_queues: n,
        complete_loading,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::integrate_fluid;
    use crate::net::presets;
    use crate::plan::complete_loading_check;

    #[test]
    fn factor_examples() {
        assert!((upper_factor(4, 1.0) - 2.0).abs() < 1e-15);
        assert!((upper_factor(4, 0.1) - 1.134).abs() < 1e-3);
    }

    #[test]
    fn quantiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.9), 5.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn audit_on_switch() {
        let m = presets::iq_switch(2).unwrap();
        let lam = vec![rational::ratio(1, 2); 4];
        let v = enumerate_dual_vertices(&m).unwrap();
        let c = critically_loaded(&m, &lam, &v).unwrap();
        let cl = complete_loading_check(&m, &c).holds;
        assert!(cl);
        let mw = Policy::mw_alpha(1.0).unwrap();
        let log = Policy::msmw_log();
        let h = 1e-3;
        let t1 = integrate_fluid(&m, &mw, &[0.5; 4], &[1.0, 0.0, 0.0, 0.0], h, 3.0).unwrap();
        let t2 = integrate_fluid(&m, &log, &[0.5; 4], &[1.0, 0.0, 0.0, 0.0], h, 3.0).unwrap();
        let rep = near_optimality_audit(&m, cl, &[(&mw, &t1), (&log, &t2)]);
        assert!(rep.holds(10.0 * h), "{rep:?}");
        assert!(rep.rows[1].upper_violation.is_none());
        let rep = near_optimality_audit(&m, false, &[(&log, &t2)]);
        assert!(rep.rows[0].lower_violation.is_none());
    }

    #[test]
    fn small_mssc_run() {
        let mut cfg = MsscConfig::canonical().unwrap();
        cfg.scales = vec![1.0, 4.0];
        cfg.replications = 3;
        cfg.subsample = 20;
        let rep = mssc_experiment(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 6);
        assert!(rep.rows.iter().all(|r| r.ratio >= 0.0));
        assert!(rep.summary[0].sub_asymptotic);
        assert!(!rep.trivial_lift);
        assert_eq!(rep, mssc_experiment(&cfg).unwrap());
    }

    #[test]
    fn subcritical_is_trivial() {
        let mut cfg = MsscConfig::canonical().unwrap();
        cfg.lambda = vec![rational::ratio(1, 4); 4];
        cfg.q_hat0 = vec![0.0; 4];
        cfg.scales = vec![4.0];
        cfg.replications = 2;
        cfg.subsample = 10;
        let rep = mssc_experiment(&cfg).unwrap();
        assert!(rep.trivial_lift);
        for row in &rep.rows {
            assert!((row.ratio - row.sup_q / row.sup_q.max(1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_invariant_start() {
        let mut cfg = MsscConfig::canonical().unwrap();
        cfg.q_hat0 = vec![1.0, 0.0, 0.0, 0.0];
        assert!(mssc_experiment(&cfg).is_err());
    }
}
