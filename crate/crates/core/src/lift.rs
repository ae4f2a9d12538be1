//! Lyapunov function, workload map and the lifting map.
//!
//! `ΔW(q)` minimizes `L(r) = Σ F(r_n)` over `r ≥ 0` subject to
//! `ξ·R̃r ≥ ξ·R̃q` for every critically loaded virtual resource ξ and
//! `[R̃r]_n ≤ [R̃q]_n` wherever the effective load vanishes (`R̃ = I` in
//! single-hop networks). The solver works on the dual: for multipliers
//! μ ≥ 0 the primal minimizer is `r_n = f⁻¹([Gᵀμ]_n⁺)`, and the concave dual
//! is maximized by projected Newton with an exact coordinate-ascent
//! fallback.

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::{NetworkModel, WeightFunction};
use crate::plan::rational::{self, Rational};
use crate::plan::simplex::{maximize, Constraint, Lp, LpOutcome, Relation};
use crate::plan::effective_load;
use crate::vecops::{dot, sup_dist, sup_norm};

pub const DEFAULT_KKT_TOL: f64 = 1e-8;
pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LyapunovSpec {
    pub weight: WeightFunction,
}

impl LyapunovSpec {
    pub fn new(weight: WeightFunction) -> Self {
        Self { weight }
    }
}

pub fn lyapunov(spec: &LyapunovSpec, q: &[f64]) -> f64 {
    q.iter().map(|&x| spec.weight.antiderivative(x)).sum()
}

/// `w_v = ξ^v·q`, or `ξ^v·R̃q` for multi-hop models.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadVector {
    pub w: Vec<f64>,
}

pub fn workload(model: &NetworkModel, xi_set: &[Vec<Rational>], q: &[f64]) -> WorkloadVector {
    let qt = model.upstream_transform(q);
    WorkloadVector {
        w: xi_set.iter().map(|xi| rational::dot_f64(xi, &qt)).collect(),
    }
}

/// Constraint data of ALGD for a fixed `(model, λ, Ξ)`; the right-hand sides
/// depend on q.
#[derive(Debug, Clone)]
pub struct LiftProblem {
    n: usize,
    /// Rows `a` with `a·r = ξ·R̃r`.
    workload_rows: Vec<Vec<f64>>,
    /// Queues whose effective load is zero, and the row `R̃_{n·}` of each cap.
    cap_queues: Vec<usize>,
    cap_rows: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub multi_hop: bool,
}

impl LiftProblem {
    /// ALGD with Ξ(λ) and the zero-load caps.
    pub fn new(model: &NetworkModel, lambda: &[Rational], xi: &[Vec<Rational>]) -> Result<Self> {
        Self::build(model, lambda, xi, true)
    }

    /// The equivalent problem with all critically loaded vertices Ξ⁺(λ) and
    /// no caps.
    pub fn with_xi_plus(
        model: &NetworkModel,
        lambda: &[Rational],
        xi_plus: &[Vec<Rational>],
    ) -> Result<Self> {
        Self::build(model, lambda, xi_plus, false)
    }

    fn build(
        model: &NetworkModel,
        lambda: &[Rational],
        xi: &[Vec<Rational>],
        caps: bool,
    ) -> Result<Self> {
        let n = model.n_queues;
        if lambda.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: lambda.len(),
            });
        }
        if let Some(bad) = xi.iter().find(|x| x.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: bad.len(),
            });
        }
        let load = effective_load(model, lambda);
        let workload_rows = xi
            .iter()
            .map(|x| model.lift_constraint(&rational::vec_to_f64(x)))
            .collect();
        let cap_queues: Vec<usize> = if caps {
            (0..n).filter(|&i| load[i].is_zero()).collect()
        } else {
            vec![]
        };
        let cap_rows = cap_queues
            .iter()
            .map(|&i| {
                (0..n)
                    .map(|j| f64::from(model.upstream.entry(i, j)))
                    .collect()
            })
            .collect();
        Ok(Self {
            n,
            workload_rows,
            cap_queues,
            cap_rows,
            lambda: rational::vec_to_f64(lambda),
            multi_hop: model.is_multi_hop(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_constraints(&self) -> usize {
        self.workload_rows.len() + self.cap_rows.len()
    }

    pub fn cap_queues(&self) -> &[usize] {
        &self.cap_queues
    }

    /// All constraints as `G r ≥ b`.
    pub fn constraints(&self, q: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut g = Vec::with_capacity(self.n_constraints());
        let mut b = Vec::with_capacity(self.n_constraints());
        for row in &self.workload_rows {
            b.push(dot(row, q));
            g.push(row.clone());
        }
        for row in &self.cap_rows {
            b.push(-dot(row, q));
            g.push(row.iter().map(|x| -x).collect());
        }
        (g, b)
    }

    /// Largest scaled violation of the constraints at `r`.
    pub fn max_violation(&self, q: &[f64], r: &[f64]) -> f64 {
        let (g, b) = self.constraints(q);
        let s = sup_norm(q).max(1.0);
        g.iter()
            .zip(&b)
            .map(|(row, bc)| (bc - dot(row, r)).max(0.0) / s)
            .chain(r.iter().map(|&x| (-x).max(0.0) / s))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftResult {
    pub r_star: Vec<f64>,
    /// One multiplier per workload constraint, then one per cap.
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub solver_iterations: usize,
    pub is_fixed_point: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LiftOptions {
    pub kkt_tol: f64,
    pub fixed_point_tol: f64,
    pub max_newton: usize,
    pub max_sweeps: usize,
}

impl Default for LiftOptions {
    fn default() -> Self {
        Self {
            kkt_tol: DEFAULT_KKT_TOL,
            fixed_point_tol: DEFAULT_FIXED_POINT_TOL,
            max_newton: 200,
            max_sweeps: 20_000,
        }
    }
}

pub fn lift(problem: &LiftProblem, weight: &WeightFunction, q: &[f64]) -> Result<LiftResult> {
    lift_with(problem, weight, q, &LiftOptions::default(), None)
}

/// Solves ALGD(q). `warm` is an optional starting multiplier vector.
pub fn lift_with(
    problem: &LiftProblem,
    weight: &WeightFunction,
    q: &[f64],
    opts: &LiftOptions,
    warm: Option<&[f64]>,
) -> Result<LiftResult> {
    if q.len() != problem.n {
        return Err(Error::Dimension {
            expected: problem.n,
            got: q.len(),
        });
    }
    if let Some((i, &v)) = q.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::NegativeQueue { queue: i, value: v });
    }
    let k = problem.n_constraints();
    let scale = sup_norm(q);
    if k == 0 || scale == 0.0 {
        return Ok(LiftResult {
            r_star: vec![0.0; problem.n],
            multipliers: vec![0.0; k],
            kkt_residual: 0.0,
            solver_iterations: 0,
            is_fixed_point: scale == 0.0,
        });
    }
    // Power weights are homogeneous: solve at unit scale and rescale.
    let (s, mu_scale) = match weight.alpha() {
        Some(a) => (scale, scale.powf(a)),
        None => (1.0, 1.0),
    };
    let qs: Vec<f64> = q.iter().map(|x| x / s).collect();
    let (g, b) = problem.constraints(&qs);
    let dual = Dual {
        g: &g,
        b: &b,
        w: weight,
        n: problem.n,
        s: sup_norm(&qs).max(1.0),
    };
    let mu0: Vec<f64> = match warm {
        Some(m) if m.len() == k => m.iter().map(|x| (x / mu_scale).max(0.0)).collect(),
        _ => vec![0.0; k],
    };
    let (mu, r, iters, kkt) = dual.solve(mu0, opts, warm.is_none())?;
    let r_star: Vec<f64> = r.iter().map(|x| x * s).collect();
    let is_fixed_point =
        sup_dist(&r_star, q) <= opts.fixed_point_tol * scale.max(1.0);
    Ok(LiftResult {
        r_star,
        multipliers: mu.iter().map(|m| m * mu_scale).collect(),
        kkt_residual: kkt,
        solver_iterations: iters,
        is_fixed_point,
    })
}

/// Lifts many states in parallel; output order matches input order.
pub fn lift_many(
    problem: &LiftProblem,
    weight: &WeightFunction,
    qs: &[Vec<f64>],
) -> Result<Vec<LiftResult>> {
    qs.par_iter().map(|q| lift(problem, weight, q)).collect()
}

struct Dual<'a> {
    g: &'a [Vec<f64>],
    b: &'a [f64],
    w: &'a WeightFunction,
    n: usize,
    /// Scale used to normalize the residual.
    s: f64,
}

impl Dual<'_> {
    fn y_of(&self, mu: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (m, row) in mu.iter().zip(self.g) {
            if *m != 0.0 {
                for (yj, gj) in y.iter_mut().zip(row) {
                    *yj += m * gj;
                }
            }
        }
        y
    }

    fn r_of(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|&v| self.w.inverse(v)).collect()
    }

    fn value(&self, mu: &[f64], y: &[f64], r: &[f64]) -> f64 {
        let mut v = dot(mu, self.b);
        for j in 0..self.n {
            v += self.w.antiderivative(r[j]) - r[j] * y[j];
        }
        v
    }

    /// `b − G r`; positive entries are violated constraints.
    fn grad(&self, r: &[f64]) -> Vec<f64> {
        self.g.iter().zip(self.b).map(|(row, bc)| bc - dot(row, r)).collect()
    }

    fn kkt(&self, mu: &[f64], grad: &[f64]) -> f64 {
        let fs = self.w.eval(self.s).max(f64::MIN_POSITIVE);
        let mut res: f64 = 0.0;
        for (m, gr) in mu.iter().zip(grad) {
            res = res.max(gr.max(0.0) / self.s);
            res = res.max(m * (-gr).max(0.0) / (fs * self.s));
        }
        res
    }

    /// Exact maximization of the dual along coordinate `c`.
    fn coordinate(&self, mu: &mut [f64], y: &mut [f64], c: usize) {
        let row = &self.g[c];
        let phi = |t: f64, y: &[f64], mu_c: f64| -> f64 {
            let mut acc = self.b[c];
            for j in 0..self.n {
                if row[j] != 0.0 {
                    acc -= row[j] * self.w.inverse(y[j] + (t - mu_c) * row[j]);
                }
            }
            acc
        };
        let mu_c = mu[c];
        let target = if phi(0.0, y, mu_c) <= 0.0 {
            0.0
        } else {
            let mut lo = 0.0;
            let mut hi = mu_c.max(self.w.eval(self.s)).max(1e-12);
            let mut guard = 0;
            while phi(hi, y, mu_c) > 0.0 && guard < 400 {
                lo = hi;
                hi *= 2.0;
                guard += 1;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if phi(mid, y, mu_c) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        if target != mu_c {
            for j in 0..self.n {
                y[j] += (target - mu_c) * row[j];
            }
            mu[c] = target;
        }
    }

    fn sweep(&self, mu: &mut [f64]) {
        let mut y = self.y_of(mu);
        for c in 0..mu.len() {
            self.coordinate(mu, &mut y, c);
        }
    }

    fn newton_direction(&self, mu: &[f64], y: &[f64], grad: &[f64]) -> Vec<f64> {
        let k = mu.len();
        let d: Vec<f64> = y.iter().map(|&v| self.w.inverse_derivative(v)).collect();
        let binding: Vec<bool> = (0..k)
            .map(|c| mu[c] <= 1e-14 * self.w.eval(self.s).max(1.0) && grad[c] < 0.0)
            .collect();
        let free: Vec<usize> = (0..k).filter(|&c| !binding[c]).collect();
        let h = |a: usize, b: usize| -> f64 {
            (0..self.n)
                .map(|j| self.g[a][j] * d[j] * self.g[b][j])
                .sum::<f64>()
        };
        let mut dir = vec![0.0; k];
        for c in 0..k {
            if binding[c] {
                let hc = h(c, c);
                dir[c] = if hc > 0.0 { grad[c] / hc } else { -mu[c] };
            }
        }
        if free.is_empty() {
            return dir;
        }
        let m = free.len();
        let mut hm = DMatrix::<f64>::zeros(m, m);
        let mut diag_max: f64 = 0.0;
        for (i, &a) in free.iter().enumerate() {
            for (j, &b) in free.iter().enumerate() {
                hm[(i, j)] = h(a, b);
            }
            diag_max = diag_max.max(hm[(i, i)].abs());
        }
        let reg = 1e-12 * diag_max.max(1e-300) + 1e-300;
        for i in 0..m {
            hm[(i, i)] += reg;
        }
        let rhs = DVector::from_iterator(m, free.iter().map(|&c| grad[c]));
        let sol = hm
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .or_else(|| hm.lu().solve(&rhs));
        match sol {
            Some(s) => {
                for (i, &c) in free.iter().enumerate() {
                    dir[c] = s[i];
                }
            }
            None => {
                for &c in &free {
                    dir[c] = grad[c];
                }
            }
        }
        dir
    }

    fn solve(
        &self,
        mut mu: Vec<f64>,
        opts: &LiftOptions,
        cold: bool,
    ) -> Result<(Vec<f64>, Vec<f64>, usize, f64)> {
        let mut iters = 0;
        if cold {
            self.sweep(&mut mu);
            self.sweep(&mut mu);
            iters += 2;
        }
        let mut stalled = 0;
        for _ in 0..opts.max_newton {
            let y = self.y_of(&mu);
            let r = self.r_of(&y);
            let grad = self.grad(&r);
            let kkt = self.kkt(&mu, &grad);
            if kkt <= opts.kkt_tol {
                return Ok((mu, r, iters, kkt));
            }
            iters += 1;
            let dir = self.newton_direction(&mu, &y, &grad);
            let d0 = self.value(&mu, &y, &r);
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-20 {
                let cand: Vec<f64> = mu
                    .iter()
                    .zip(&dir)
                    .map(|(m, d)| (m + step * d).max(0.0))
                    .collect();
                let yc = self.y_of(&cand);
                let rc = self.r_of(&yc);
                let gain: f64 = grad.iter().zip(cand.iter().zip(&mu)).map(|(g, (c, m))| g * (c - m)).sum();
                let dc = self.value(&cand, &yc, &rc);
                let better_kkt = step == 1.0 && self.kkt(&cand, &self.grad(&rc)) < 0.5 * kkt;
                if dc >= d0 + 1e-4 * gain || better_kkt {
                    accepted = cand != mu;
                    mu = cand;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                stalled += 1;
                for _ in 0..20 {
                    self.sweep(&mut mu);
                }
                iters += 20;
                if stalled > 20 {
                    break;
                }
            }
        }
        let mut kkt = f64::INFINITY;
        for sweep in 0..opts.max_sweeps {
            let y = self.y_of(&mu);
            let r = self.r_of(&y);
            kkt = self.kkt(&mu, &self.grad(&r));
            if kkt <= opts.kkt_tol {
                return Ok((mu, r, iters + sweep, kkt));
            }
            self.sweep(&mut mu);
        }
        Err(Error::SolverDivergence {
            iterations: iters + opts.max_sweeps,
            residual: kkt,
            tol: opts.kkt_tol,
        })
    }
}

/// Independent primal solver for tests: a log-barrier interior-point method
/// in r-space. Queues pinned at zero by a cap are eliminated first; a
/// strictly feasible start comes from an exact phase-one LP.
pub fn lift_oracle(problem: &LiftProblem, weight: &WeightFunction, q: &[f64]) -> Result<Vec<f64>> {
    let n = problem.n;
    if n > 4 {
        return Err(Error::Precondition("lift oracle supports N ≤ 4".into()));
    }
    let (g_all, b_all) = problem.constraints(q);
    // Caps with zero right-hand side pin every queue in their row at zero.
    let mut pinned = vec![false; n];
    for (row, bc) in g_all.iter().zip(&b_all) {
        if row.iter().all(|&x| x <= 0.0) && *bc == 0.0 {
            for j in 0..n {
                if row[j] < 0.0 {
                    pinned[j] = true;
                }
            }
        }
    }
    let free: Vec<usize> = (0..n).filter(|&j| !pinned[j]).collect();
    let m = free.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (row, bc) in g_all.iter().zip(&b_all) {
        let reduced: Vec<f64> = free.iter().map(|&j| row[j]).collect();
        if reduced.iter().all(|&x| x == 0.0) {
            continue;
        }
        rows.push(reduced);
        rhs.push(*bc);
    }
    let mut out = vec![0.0; n];
    if m == 0 {
        return Ok(out);
    }
    // Phase one: maximize s subject to G r − s ≥ b, r − s ≥ 0, s ≤ 1.
    let one = Rational::from_integer(1.into());
    let mut cons = Vec::new();
    for (row, bc) in rows.iter().zip(&rhs) {
        let mut c: Vec<Rational> = row.iter().map(|&x| rational::from_f64(x)).collect();
        c.push(-one.clone());
        cons.push(Constraint::new(c, Relation::Ge, rational::from_f64(*bc)));
    }
    for j in 0..m {
        let mut c = vec![Rational::zero(); m + 1];
        c[j] = one.clone();
        c[m] = -one.clone();
        cons.push(Constraint::new(c, Relation::Ge, Rational::zero()));
    }
    let mut cap = vec![Rational::zero(); m + 1];
    cap[m] = one.clone();
    cons.push(Constraint::new(cap, Relation::Le, one.clone()));
    let mut obj = vec![Rational::zero(); m + 1];
    obj[m] = one;
    let lp = Lp {
        n_vars: m + 1,
        objective: obj,
        constraints: cons,
    };
    let (sval, x) = match maximize(&lp) {
        LpOutcome::Optimal { value, x } => (rational::to_f64(&value), x),
        _ => return Err(Error::Precondition("oracle phase one failed".into())),
    };
    if sval <= 0.0 {
        return Err(Error::Precondition("ALGD has no strictly feasible point".into()));
    }
    let mut r: Vec<f64> = x[..m].iter().map(rational::to_f64).collect();

    let slacks = |r: &[f64]| -> Vec<f64> {
        rows.iter().zip(&rhs).map(|(row, bc)| dot(row, r) - bc).collect()
    };
    let scale = sup_norm(q).max(1.0);
    let obj_scale = weight.antiderivative(scale).max(1e-300);
    let phi = |r: &[f64], t: f64| -> f64 {
        if r.iter().any(|&x| x <= 0.0) {
            return f64::INFINITY;
        }
        let s = slacks(r);
        if s.iter().any(|&x| x <= 0.0) {
            return f64::INFINITY;
        }
        let l: f64 = r.iter().map(|&x| weight.antiderivative(x)).sum::<f64>() / obj_scale;
        l - t * (s.iter().map(|x| x.ln()).sum::<f64>() + r.iter().map(|x| x.ln()).sum::<f64>())
    };
    let mut t = 1.0;
    while t > 1e-15 {
        for _ in 0..100 {
            let s = slacks(&r);
            let mut grad = DVector::<f64>::zeros(m);
            let mut hess = DMatrix::<f64>::zeros(m, m);
            for j in 0..m {
                grad[j] = weight.eval(r[j]) / obj_scale - t / r[j];
                hess[(j, j)] = weight.derivative(r[j]) / obj_scale + t / (r[j] * r[j]);
            }
            for (row, sc) in rows.iter().zip(&s) {
                for a in 0..m {
                    grad[a] -= t * row[a] / sc;
                    for b2 in 0..m {
                        hess[(a, b2)] += t * row[a] * row[b2] / (sc * sc);
                    }
                }
            }
            let Some(step) = hess.clone().cholesky().map(|c| c.solve(&grad)).or_else(|| hess.lu().solve(&grad)) else {
                break;
            };
            let decrement = grad.dot(&step);
            if decrement < 1e-20 {
                break;
            }
            let base = phi(&r, t);
            let mut a = 1.0;
            let mut moved = false;
            while a > 1e-30 {
                let cand: Vec<f64> = (0..m).map(|j| r[j] - a * step[j]).collect();
                if phi(&cand, t) <= base - 0.25 * a * decrement {
                    r = cand;
                    moved = true;
                    break;
                }
                a *= 0.5;
            }
            if !moved {
                break;
            }
        }
        t *= 0.1;
    }
    for (k, &j) in free.iter().enumerate() {
        out[j] = r[k];
    }
    Ok(out)
}

/// `|λ·f(q) − max_π π·f(q)| ≤ tol·(1 + |max|)`; multi-hop models use
/// `π·(I − R)f(q)` for the schedule weights.
pub fn invariant_state_test(
    model: &NetworkModel,
    lambda: &[f64],
    weight: &WeightFunction,
    q: &[f64],
    tol: f64,
) -> bool {
    let fq = weight.eval_vec(q);
    let coeff = crate::policy::queue_coefficients(model, weight, q);
    let lhs = dot(lambda, &fq);
    let max = model
        .schedules
        .iter()
        .map(|pi| dot(pi, &coeff))
        .fold(f64::NEG_INFINITY, f64::max);
    (lhs - max).abs() <= tol * (1.0 + max.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationReport {
    pub holds: bool,
    pub t: f64,
    /// Weights of σ over the schedule set (empty when t = 0).
    pub sigma_weights: Vec<f64>,
    /// L1 residual of the best fit, scaled by `max(1, |q|)`.
    pub residual: f64,
}

/// Searches for `t ≥ 0` and `σ ∈ ⟨S⟩` with `ΔW(q) = [q + t(λ − σ)]⁺`
/// (single-hop) or `ΔW(q) = q + t(λ − (I − Rᵀ)σ)` (multi-hop) by an exact LP
/// over `β = tσ` that minimizes the L1 mismatch.
pub fn representation_check(
    model: &NetworkModel,
    lambda: &[Rational],
    result: &LiftResult,
    q: &[f64],
    tol: f64,
) -> Result<RepresentationReport> {
    let n = model.n_queues;
    let ns = model.schedules.len();
    let r = &result.r_star;
    if q.len() != n || r.len() != n || lambda.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: q.len().min(r.len()).min(lambda.len()),
        });
    }
    let scale = sup_norm(q).max(sup_norm(r)).max(1.0);
    let zero_tol = 1e-9 * scale;
    // variables: t, β_1..β_S, e⁺_1..e⁺_N, e⁻_1..e⁻_N
    let nv = 1 + ns + 2 * n;
    let one = Rational::from_integer(1.into());
    let multi = model.is_multi_hop();
    let mut cons = Vec::new();
    for i in 0..n {
        let mut c = vec![Rational::zero(); nv];
        c[0] = lambda[i].clone();
        for (s, pi) in model.schedules.iter_exact().enumerate() {
            // single-hop: σ_i; multi-hop: [(I − Rᵀ)σ]_i = σ_i − σ_{upstream of i}
            let mut coef = pi[i].clone();
            if multi {
                for m in 0..n {
                    if model.routing.downstream(m) == Some(i) {
                        coef -= &pi[m];
                    }
                }
            }
            c[1 + s] = -coef;
        }
        let qi = rational::from_f64(q[i]);
        let ri = rational::from_f64(r[i]);
        c[1 + ns + i] = one.clone();
        c[1 + ns + n + i] = -one.clone();
        if !multi && r[i] <= zero_tol {
            // q_i + t(λ_i − σ_i) ≤ 0, with e⁻ absorbing any excess
            c[1 + ns + i] = Rational::zero();
            cons.push(Constraint::new(c, Relation::Le, -qi));
        } else {
            cons.push(Constraint::new(c, Relation::Eq, ri - qi));
        }
    }
    // Σ β = t
    let mut c = vec![Rational::zero(); nv];
    c[0] = -one.clone();
    for s in 0..ns {
        c[1 + s] = one.clone();
    }
    cons.push(Constraint::new(c, Relation::Eq, Rational::zero()));
    let mut obj = vec![Rational::zero(); nv];
    for v in obj.iter_mut().skip(1 + ns) {
        *v = -one.clone();
    }
    let lp = Lp {
        n_vars: nv,
        objective: obj,
        constraints: cons,
    };
    match maximize(&lp) {
        LpOutcome::Optimal { value, x } => {
            let residual = -rational::to_f64(&value) / scale;
            let t = rational::to_f64(&x[0]);
            let sigma_weights = if t > 0.0 {
                x[1..1 + ns].iter().map(|b| rational::to_f64(b) / t).collect()
            } else {
                vec![]
            };
            Ok(RepresentationReport {
                holds: residual <= tol,
                t,
                sigma_weights,
                residual,
            })
        }
        _ => Ok(RepresentationReport {
            holds: false,
            t: 0.0,
            sigma_weights: vec![],
            residual: f64::INFINITY,
        }),
    }
}
