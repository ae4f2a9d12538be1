//! Fluid model solutions realized as fluid-scaled deterministic runs.
//!
//! Each step of length h offers `h·π` for the schedule the policy picks on
//! the current state and adds `h·λ`, so the trajectory is the discrete
//! recursion viewed at scale `1/h`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lift::{lift_with, LiftOptions, LiftProblem};
use crate::net::{NetworkModel, WeightFunction};
use crate::plan::rational::{self, Rational};
use crate::policy::{queue_coefficients, select_fast, Policy, ScheduleWeight, TieState};
use crate::sim::{advance, ScaledPath};
use crate::vecops::{dot, sup_dist, sup_norm, CompensatedSum};

pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct FluidTrajectory {
    pub h: f64,
    pub lambda: Vec<f64>,
    pub grid: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Cumulative time allocated to each schedule.
    pub s: Vec<Vec<f64>>,
    /// Schedule used on `[t_k, t_{k+1})`; `None` on the last point.
    pub chosen: Vec<Option<usize>>,
    pub policy: String,
}

impl FluidTrajectory {
    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap_or(&0.0)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Largest residual among the defining identities: `a = λt`,
    /// `Σ_π s_π = t`, monotone `y` and `s`, and the queue balance.
    pub fn audit(&self, model: &NetworkModel) -> f64 {
        let n = model.n_queues;
        let mut worst: f64 = 0.0;
        let q0 = &self.q[0];
        for k in 0..self.len() {
            let t = self.grid[k];
            for i in 0..n {
                worst = worst.max((self.a[k][i] - self.lambda[i] * t).abs());
            }
            worst = worst.max((self.s[k].iter().sum::<f64>() - t).abs());
            if k > 0 {
                for i in 0..n {
                    worst = worst.max(self.y[k - 1][i] - self.y[k][i]);
                }
                for (p, c) in self.s[k - 1].iter().zip(&self.s[k]) {
                    worst = worst.max(p - c);
                }
            }
            let mut served = vec![0.0; n];
            for (sp, pi) in self.s[k].iter().zip(model.schedules.iter()) {
                for i in 0..n {
                    served[i] += sp * pi[i];
                }
            }
            for i in 0..n {
                worst = worst.max(self.y[k][i] - served[i]);
            }
            let net: Vec<f64> = (0..n).map(|i| served[i] - self.y[k][i]).collect();
            let routed = model.routing.apply_transpose(&net);
            for i in 0..n {
                let expect = q0[i] + self.a[k][i] - net[i] + routed[i];
                worst = worst.max((self.q[k][i] - expect).abs());
            }
        }
        worst
    }
}

/// Integrates on `[0, T]` with step h.
pub fn integrate_fluid(
    model: &NetworkModel,
    policy: &Policy,
    lambda: &[f64],
    q0: &[f64],
    h: f64,
    horizon: f64,
) -> Result<FluidTrajectory> {
    let n = model.n_queues;
    if !(h > 0.0 && h <= 0.1) {
        return Err(Error::Precondition(format!("step h = {h} outside (0, 0.1]")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Precondition(format!("horizon {horizon} must be positive")));
    }
    for v in [lambda, q0] {
        if v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: v.len(),
            });
        }
    }
    if let Some((i, &v)) = q0.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeQueue { queue: i, value: v });
    }
    if lambda.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidArrivals("rates must be finite and nonnegative".into()));
    }
    policy.check_model(model)?;
    let steps = (horizon / h - 1e-9).ceil() as usize;
    let ns = model.schedules.len();
    let mut tie = TieState::default();
    let mut q = q0.to_vec();
    let mut y_acc = vec![CompensatedSum::default(); n];
    let mut counts = vec![0u64; ns];
    let arrivals: Vec<f64> = lambda.iter().map(|l| l * h).collect();
    let services: Vec<Vec<f64>> = model
        .schedules
        .iter()
        .map(|pi| pi.iter().map(|x| x * h).collect())
        .collect();
    let mut idle = vec![0.0; n];
    let mut traj = FluidTrajectory {
        h,
        lambda: lambda.to_vec(),
        grid: Vec::with_capacity(steps + 1),
        q: Vec::with_capacity(steps + 1),
        a: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        s: Vec::with_capacity(steps + 1),
        chosen: Vec::with_capacity(steps + 1),
        policy: policy.label(),
    };
    let record = |traj: &mut FluidTrajectory, k: usize, q: &[f64], y: &[CompensatedSum], counts: &[u64]| {
        let t = k as f64 * h;
        traj.grid.push(t);
        traj.q.push(q.to_vec());
        traj.a.push(lambda.iter().map(|l| l * t).collect());
        traj.y.push(y.iter().map(|c| c.value()).collect());
        traj.s.push(counts.iter().map(|&c| c as f64 * h).collect());
    };
    for k in 0..steps {
        record(&mut traj, k, &q, &y_acc, &counts);
        let c = select_fast(model, policy, &q, &mut tie);
        traj.chosen.push(Some(c));
        advance(model, &mut q, &services[c], &arrivals, &mut idle);
        for i in 0..n {
            y_acc[i].add(idle[i]);
        }
        counts[c] += 1;
    }
    record(&mut traj, steps, &q, &y_acc, &counts);
    traj.chosen.push(None);
    Ok(traj)
}

/// Largest increase `L(q(t)) − L(q(s))` over `s < t`.
pub fn lyapunov_increase(traj: &FluidTrajectory, weight: &WeightFunction) -> f64 {
    let mut running_min = f64::INFINITY;
    let mut worst: f64 = 0.0;
    for q in &traj.q {
        let l: f64 = q.iter().map(|&x| weight.antiderivative(x)).sum();
        worst = worst.max(l - running_min);
        running_min = running_min.min(l);
    }
    worst
}

/// `λ·f(q) − max_π π·c(q)` with `c = f` (single-hop) or `(I − R)f`
/// (multi-hop).
pub fn drift_formula(model: &NetworkModel, lambda: &[f64], weight: &WeightFunction, q: &[f64]) -> f64 {
    let c = queue_coefficients(model, weight, q);
    let max = model
        .schedules
        .iter()
        .map(|pi| dot(pi, &c))
        .fold(f64::NEG_INFINITY, f64::max);
    dot(lambda, &weight.eval_vec(q)) - max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftPoint {
    pub t: f64,
    pub formula: f64,
    /// Central difference of L; `None` where the near-argmax set changes
    /// inside the stencil or at the ends.
    pub finite_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub max_residual: f64,
    pub checked: usize,
    pub skipped: usize,
    pub points: Vec<DriftPoint>,
}

fn near_argmax(model: &NetworkModel, weight: &WeightFunction, q: &[f64], tol: f64) -> Vec<usize> {
    let c = queue_coefficients(model, weight, q);
    let w: Vec<ScheduleWeight> = model
        .schedules
        .iter()
        .map(|pi| ScheduleWeight {
            primary: dot(pi, &c),
            secondary: 0.0,
        })
        .collect();
    let max = w.iter().map(|x| x.primary).fold(f64::NEG_INFINITY, f64::max);
    (0..w.len())
        .filter(|&i| w[i].primary >= max - tol * (1.0 + max.abs()))
        .collect()
}

/// Queues holding less than one step of service count as empty.
fn shadow(q: &[f64], cutoff: f64) -> Vec<f64> {
    q.iter().map(|&x| if x <= cutoff { 0.0 } else { x }).collect()
}

pub fn lyapunov_drift_check(
    model: &NetworkModel,
    lambda: &[f64],
    weight: &WeightFunction,
    traj: &FluidTrajectory,
) -> DriftReport {
    let h = traj.h;
    let cutoff = h * model.schedules.max_component().max(1.0);
    let tie_tol = 5.0 * h;
    let lyap: Vec<f64> = traj
        .q
        .iter()
        .map(|q| q.iter().map(|&x| weight.antiderivative(x)).sum())
        .collect();
    let sets: Vec<Vec<usize>> = traj
        .q
        .iter()
        .map(|q| near_argmax(model, weight, &shadow(q, cutoff), tie_tol))
        .collect();
    let k_max = traj.len();
    let mut points = Vec::with_capacity(k_max);
    let mut max_residual: f64 = 0.0;
    let mut checked = 0;
    for k in 0..k_max {
        let formula = drift_formula(model, lambda, weight, &shadow(&traj.q[k], cutoff));
        let fd = if k > 0 && k + 1 < k_max && sets[k - 1] == sets[k] && sets[k] == sets[k + 1] {
            Some((lyap[k + 1] - lyap[k - 1]) / (traj.grid[k + 1] - traj.grid[k - 1]))
        } else {
            None
        };
        if let Some(d) = fd {
            checked += 1;
            max_residual = max_residual.max((d - formula).abs());
        }
        points.push(DriftPoint {
            t: traj.grid[k],
            formula,
            finite_difference: fd,
        });
    }
    DriftReport {
        max_residual,
        checked,
        skipped: k_max - checked,
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub holds: bool,
    pub max_violation: f64,
}

/// Checks `ξ·q̃(t) ≥ ξ·q̃(0)` for every ξ in `xi_set` and `q̃_n(t) ≤ q̃_n(0)`
/// wherever the effective load vanishes.
pub fn feasibility_preservation_check(
    model: &NetworkModel,
    lambda: &[Rational],
    xi_set: &[Vec<Rational>],
    traj: &FluidTrajectory,
    tol: f64,
) -> FeasibilityReport {
    let load = crate::plan::effective_load(model, lambda);
    let caps: Vec<usize> = (0..model.n_queues)
        .filter(|&i| num_traits::Zero::is_zero(&load[i]))
        .collect();
    let xi: Vec<Vec<f64>> = xi_set.iter().map(|x| rational::vec_to_f64(x)).collect();
    let q0 = model.upstream_transform(&traj.q[0]);
    let w0: Vec<f64> = xi.iter().map(|x| dot(x, &q0)).collect();
    let mut worst: f64 = 0.0;
    for q in &traj.q {
        let qt = model.upstream_transform(q);
        for (x, w) in xi.iter().zip(&w0) {
            worst = worst.max(w - dot(x, &qt));
        }
        for &i in &caps {
            worst = worst.max(qt[i] - q0[i]);
        }
    }
    FeasibilityReport {
        holds: worst <= tol,
        max_violation: worst,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub hitting_time: Option<f64>,
    /// `(t, |q(t) − ΔW(q(t))|)` on the sampled grid.
    pub distances: Vec<(f64, f64)>,
}

/// `(t, |q(t) − ΔW(q(t))|∞)` on about `samples` grid points, always
/// including both ends.
pub fn lift_distance_series(
    problem: &LiftProblem,
    weight: &WeightFunction,
    traj: &FluidTrajectory,
    samples: usize,
) -> Result<Vec<(f64, f64)>> {
    let stride = (traj.len() / samples.max(1)).max(1);
    let mut idx: Vec<usize> = (0..traj.len()).step_by(stride).collect();
    if idx.last() != Some(&(traj.len() - 1)) {
        idx.push(traj.len() - 1);
    }
    let opts = LiftOptions::default();
    let mut warm: Option<Vec<f64>> = None;
    let mut distances = Vec::with_capacity(idx.len());
    for &k in &idx {
        let q = &traj.q[k];
        let res = lift_with(problem, weight, q, &opts, warm.as_deref())?;
        distances.push((traj.grid[k], sup_dist(q, &res.r_star)));
        warm = Some(res.multipliers);
    }
    Ok(distances)
}

/// Start of the final run of samples with distance below ε.
pub fn hitting_time(distances: &[(f64, f64)], eps: f64) -> Option<f64> {
    let mut hitting = None;
    for (t, d) in distances.iter().rev() {
        if *d < eps {
            hitting = Some(*t);
        } else {
            break;
        }
    }
    hitting
}

/// Smallest sampled time after which `|q − ΔW(q)|∞ < ε` holds through T.
/// `samples` bounds the number of lifted points.
pub fn convergence_to_invariant(
    problem: &LiftProblem,
    weight: &WeightFunction,
    traj: &FluidTrajectory,
    eps: f64,
    samples: usize,
) -> Result<ConvergenceReport> {
    if sup_norm(&traj.q[0]) > 1.0 + 1e-12 {
        return Err(Error::Precondition("initial state must satisfy |q(0)| ≤ 1".into()));
    }
    let distances = lift_distance_series(problem, weight, traj, samples)?;
    Ok(ConvergenceReport {
        hitting_time: hitting_time(&distances, eps),
        distances,
    })
}

/// A piecewise-linear path sampled on an increasing time grid.
pub trait Trajectory {
    fn times(&self) -> &[f64];
    fn states(&self) -> &[Vec<f64>];
}

impl Trajectory for FluidTrajectory {
    fn times(&self) -> &[f64] {
        &self.grid
    }
    fn states(&self) -> &[Vec<f64>] {
        &self.q
    }
}

impl Trajectory for ScaledPath {
    fn times(&self) -> &[f64] {
        &self.t
    }
    fn states(&self) -> &[Vec<f64>] {
        &self.q
    }
}

fn sample_at(times: &[f64], states: &[Vec<f64>], t: f64) -> Vec<f64> {
    let k = times.partition_point(|&s| s <= t);
    if k == 0 {
        return states[0].clone();
    }
    if k >= times.len() {
        return states[times.len() - 1].clone();
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    states[k - 1]
        .iter()
        .zip(&states[k])
        .map(|(a, b)| a + w * (b - a))
        .collect()
}

/// `sup_t |x(t) − y(t)|∞` with both paths interpolated linearly; the sup is
/// attained on the union of the two grids.
pub fn trajectory_distance<X: Trajectory + ?Sized, Y: Trajectory + ?Sized>(x: &X, y: &Y) -> Result<f64> {
    let (tx, ty) = (x.times(), y.times());
    if tx.is_empty() || ty.is_empty() {
        return Err(Error::GridMismatch("empty trajectory".into()));
    }
    let (ex, ey) = (tx[tx.len() - 1], ty[ty.len() - 1]);
    if (ex - ey).abs() > 1e-9 * ex.abs().max(ey.abs()).max(1.0) || (tx[0] - ty[0]).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "horizons [{}, {ex}] and [{}, {ey}] differ",
            tx[0], ty[0]
        )));
    }
    if x.states()[0].len() != y.states()[0].len() {
        return Err(Error::GridMismatch("dimensions differ".into()));
    }
    let mut worst: f64 = 0.0;
    for &t in tx.iter().chain(ty) {
        let a = sample_at(tx, x.states(), t);
        let b = sample_at(ty, y.states(), t);
        worst = worst.max(sup_dist(&a, &b));
    }
    Ok(worst)
}
