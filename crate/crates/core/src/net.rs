//! Static network data: schedule sets, routing, the upstream matrix and
//! weight functions.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::plan::rational::{self, Rational};

/// Finite set of schedules. Each schedule is a vector of per-queue service
/// amounts; the position in the list is the schedule index used for
/// tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSet {
    exact: Vec<Vec<Rational>>,
    float: Vec<Vec<f64>>,
    dim: usize,
}

impl ScheduleSet {
    pub fn new(exact: Vec<Vec<Rational>>) -> Result<Self> {
        let first = exact.first().ok_or(Error::EmptyScheduleSet)?;
        let dim = first.len();
        for (i, s) in exact.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: s.len(),
                });
            }
            if s.iter().any(|x| x < &Rational::zero()) {
                return Err(Error::InvalidNetwork(format!(
                    "schedule {i} has a negative component"
                )));
            }
        }
        let float = exact
            .iter()
            .map(|s| s.iter().map(rational::to_f64).collect())
            .collect();
        Ok(Self { exact, float, dim })
    }

    pub fn from_f64(schedules: &[Vec<f64>]) -> Result<Self> {
        let mut exact = Vec::with_capacity(schedules.len());
        for s in schedules {
            let mut row = Vec::with_capacity(s.len());
            for &x in s {
                if !x.is_finite() {
                    return Err(Error::InvalidNetwork("non-finite schedule entry".into()));
                }
                row.push(rational::from_f64(x));
            }
            exact.push(row);
        }
        Self::new(exact)
    }

    pub fn len(&self) -> usize {
        self.float.len()
    }

    pub fn is_empty(&self) -> bool {
        self.float.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, idx: usize) -> &[f64] {
        &self.float[idx]
    }

    pub fn exact(&self, idx: usize) -> &[Rational] {
        &self.exact[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.float.iter().map(|v| v.as_slice())
    }

    pub fn iter_exact(&self) -> impl Iterator<Item = &[Rational]> {
        self.exact.iter().map(|v| v.as_slice())
    }

    /// Largest single-slot service at any queue.
    pub fn max_component(&self) -> f64 {
        self.float
            .iter()
            .flat_map(|s| s.iter().copied())
            .fold(0.0, f64::max)
    }

    /// `max_π 1·π`, exact.
    pub fn max_total(&self) -> Rational {
        self.exact
            .iter()
            .map(|s| s.iter().fold(Rational::zero(), |a, b| a + b))
            .max()
            .unwrap_or_else(Rational::zero)
    }

    /// True when every component-zeroing of every schedule is also in the set.
    pub fn is_monotone_closed(&self) -> bool {
        let present: HashSet<&Vec<Rational>> = self.exact.iter().collect();
        self.exact
            .iter()
            .all(|s| zeroings(s).iter().all(|z| present.contains(z)))
    }
}

/// All vectors obtained from `s` by zeroing a nonempty subset of its support,
/// last support position first.
fn zeroings(s: &[Rational]) -> Vec<Vec<Rational>> {
    let support: Vec<usize> = (0..s.len()).filter(|&i| !s[i].is_zero()).collect();
    let k = support.len();
    let mut out = Vec::new();
    for mask in 1u64..(1u64 << k) {
        let mut z = s.to_vec();
        for (bit, &pos) in support.iter().rev().enumerate() {
            if mask & (1 << bit) != 0 {
                z[pos] = Rational::zero();
            }
        }
        out.push(z);
    }
    out
}

/// Smallest superset of `schedules` closed under zeroing components. The
/// original schedules keep their indices; new ones are appended in discovery
/// order.
pub fn monotone_closure(schedules: &ScheduleSet) -> ScheduleSet {
    let mut seen: HashSet<Vec<Rational>> = schedules.exact.iter().cloned().collect();
    let mut out = schedules.exact.clone();
    let mut i = 0;
    while i < out.len() {
        for z in zeroings(&out[i]) {
            if seen.insert(z.clone()) {
                out.push(z);
            }
        }
        i += 1;
    }
    ScheduleSet::new(out).expect("closure of a valid schedule set is valid")
}

/// Fixed routing: each queue sends served work to at most one downstream queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingMatrix {
    downstream: Vec<Option<usize>>,
}

impl RoutingMatrix {
    pub fn none(n: usize) -> Self {
        Self {
            downstream: vec![None; n],
        }
    }

    /// Builds routing from `(from, to)` pairs (0-based).
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut downstream = vec![None; n];
        for &(m, k) in pairs {
            if m >= n || k >= n {
                return Err(Error::InvalidNetwork(format!(
                    "routing pair ({m},{k}) out of range for {n} queues"
                )));
            }
            match downstream[m] {
                Some(prev) if prev != k => return Err(Error::MultipleDownstream(m)),
                _ => downstream[m] = Some(k),
            }
        }
        Ok(Self { downstream })
    }

    pub fn from_dense(matrix: &[Vec<u8>]) -> Result<Self> {
        let n = matrix.len();
        let mut pairs = Vec::new();
        for (m, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: row.len(),
                });
            }
            let ones: Vec<usize> = (0..n).filter(|&k| row[k] != 0).collect();
            if ones.len() > 1 {
                return Err(Error::MultipleDownstream(m));
            }
            if let Some(&k) = ones.first() {
                pairs.push((m, k));
            }
        }
        Self::from_pairs(n, &pairs)
    }

    pub fn n(&self) -> usize {
        self.downstream.len()
    }

    pub fn downstream(&self, m: usize) -> Option<usize> {
        self.downstream[m]
    }

    pub fn is_zero(&self) -> bool {
        self.downstream.iter().all(Option::is_none)
    }

    pub fn entry(&self, m: usize, n: usize) -> u8 {
        u8::from(self.downstream[m] == Some(n))
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.downstream
            .iter()
            .enumerate()
            .filter_map(|(m, d)| d.map(|k| (m, k)))
            .collect()
    }

    /// `[R x]_n = x_{downstream(n)}`, zero when n has no downstream queue.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.downstream
            .iter()
            .map(|d| d.map_or(0.0, |k| x[k]))
            .collect()
    }

    /// `[Rᵀ x]_n = Σ_m R_{mn} x_m`: routed inflow into each queue.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (m, d) in self.downstream.iter().enumerate() {
            if let Some(k) = d {
                out[*k] += x[m];
            }
        }
        out
    }
}

/// `R̃ = (I − Rᵀ)⁻¹`; entry (m, n) is 1 when work injected at n passes through m.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpstreamMatrix {
    entries: Vec<Vec<u8>>,
}

impl UpstreamMatrix {
    /// Walks each queue's downstream chain; a chain longer than N is a cycle.
    pub fn compute(routing: &RoutingMatrix) -> Result<Self> {
        let n = routing.n();
        let mut entries = vec![vec![0u8; n]; n];
        for start in 0..n {
            let mut cur = Some(start);
            let mut steps = 0;
            while let Some(m) = cur {
                if steps > n {
                    return Err(Error::CyclicRouting(start));
                }
                if entries[m][start] == 1 {
                    return Err(Error::CyclicRouting(start));
                }
                entries[m][start] = 1;
                cur = routing.downstream(m);
                steps += 1;
            }
        }
        Ok(Self { entries })
    }

    pub fn entry(&self, m: usize, n: usize) -> u8 {
        self.entries[m][n]
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.entries
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|row| {
                row.iter()
                    .zip(x)
                    .filter(|(e, _)| **e == 1)
                    .map(|(_, v)| *v)
                    .sum()
            })
            .collect()
    }

    pub fn apply_exact(&self, x: &[Rational]) -> Vec<Rational> {
        self.entries
            .iter()
            .map(|row| {
                row.iter()
                    .zip(x)
                    .filter(|(e, _)| **e == 1)
                    .fold(Rational::zero(), |acc, (_, v)| acc + v)
            })
            .collect()
    }

    /// `R̃ᵀ ξ`, the constraint vector for `ξ·R̃r`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let n = self.entries.len();
        (0..n)
            .map(|col| (0..n).filter(|&m| self.entries[m][col] == 1).map(|m| x[m]).sum())
            .collect()
    }

    /// Checks `(I − Rᵀ)·R̃ = I` in integer arithmetic.
    pub fn is_inverse_of(&self, routing: &RoutingMatrix) -> bool {
        let n = self.entries.len();
        for i in 0..n {
            for j in 0..n {
                // [(I − Rᵀ) R̃]_{ij} = R̃_{ij} − Σ_k R_{ki} R̃_{kj}
                let mut v = i64::from(self.entries[i][j]);
                for k in 0..n {
                    v -= i64::from(routing.entry(k, i)) * i64::from(self.entries[k][j]);
                }
                if v != i64::from(i == j) {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_identity(&self) -> bool {
        self.entries
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &e)| e == u8::from(i == j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HopKind {
    Single,
    Multi,
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub n_queues: usize,
    pub schedules: ScheduleSet,
    pub routing: RoutingMatrix,
    pub upstream: UpstreamMatrix,
    pub hop_kind: HopKind,
    /// Whether the schedule set passes the monotone-closure check.
    pub monotone_closed: bool,
}

impl NetworkModel {
    pub fn is_multi_hop(&self) -> bool {
        self.hop_kind == HopKind::Multi
    }

    /// `R̃x`.
    pub fn upstream_transform(&self, x: &[f64]) -> Vec<f64> {
        upstream_transform(self, x)
    }

    /// Constraint vector `a` with `a·r = ξ·R̃r`.
    pub fn lift_constraint(&self, xi: &[f64]) -> Vec<f64> {
        if self.is_multi_hop() {
            self.upstream.apply_transpose(xi)
        } else {
            xi.to_vec()
        }
    }
}

pub fn validate_network(schedules: ScheduleSet, routing: RoutingMatrix) -> Result<NetworkModel> {
    if schedules.is_empty() {
        return Err(Error::EmptyScheduleSet);
    }
    let n = schedules.dim();
    if routing.n() != n {
        return Err(Error::Dimension {
            expected: n,
            got: routing.n(),
        });
    }
    let upstream = UpstreamMatrix::compute(&routing)?;
    debug_assert!(upstream.is_inverse_of(&routing));
    let hop_kind = if routing.is_zero() {
        HopKind::Single
    } else {
        HopKind::Multi
    };
    let monotone_closed = schedules.is_monotone_closed();
    Ok(NetworkModel {
        n_queues: n,
        schedules,
        routing,
        upstream,
        hop_kind,
        monotone_closed,
    })
}

pub fn upstream_transform(model: &NetworkModel, x: &[f64]) -> Vec<f64> {
    if model.is_multi_hop() {
        model.upstream.apply(x)
    } else {
        x.to_vec()
    }
}

/// A user-supplied weight function with its antiderivative and derivative.
pub struct CustomWeight {
    pub name: String,
    pub f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub antiderivative: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub derivative: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Closed-form inverse if available; otherwise bisection on `f`.
    pub inverse: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
}

/// The queue weight function `f` of MW-f, with `F(x) = ∫₀ˣ f`.
#[derive(Clone)]
pub enum WeightFunction {
    Power { alpha: f64 },
    Custom(Arc<CustomWeight>),
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Power { alpha } => write!(f, "Power({alpha})"),
            Self::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl WeightFunction {
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Precondition(format!(
                "power weight needs alpha > 0, got {alpha}"
            )));
        }
        Ok(Self::Power { alpha })
    }

    /// `f(x) = log(1 + x)`. Strictly increasing with `f(0) = 0`, but not
    /// scale-invariant for general schedule sets.
    pub fn log1p() -> Self {
        Self::Custom(Arc::new(CustomWeight {
            name: "log1p".into(),
            f: Box::new(f64::ln_1p),
            antiderivative: Box::new(|x| (1.0 + x) * x.ln_1p() - x),
            derivative: Box::new(|x| 1.0 / (1.0 + x)),
            inverse: Some(Box::new(f64::exp_m1)),
        }))
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Self::Power { alpha } => Some(*alpha),
            Self::Custom(_) => None,
        }
    }

    /// Only power functions are known to give scale-invariant argmax sets.
    pub fn is_scale_invariant(&self) -> bool {
        matches!(self, Self::Power { .. })
    }

    pub fn label(&self) -> String {
        match self {
            Self::Power { alpha } => format!("x^{alpha}"),
            Self::Custom(c) => c.name.clone(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            Self::Power { alpha } => {
                if x == 0.0 {
                    0.0
                } else if *alpha == 1.0 {
                    x
                } else {
                    x.powf(*alpha)
                }
            }
            Self::Custom(c) => (c.f)(x),
        }
    }

    pub fn eval_vec(&self, q: &[f64]) -> Vec<f64> {
        q.iter().map(|&x| self.eval(x)).collect()
    }

    pub fn antiderivative(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            Self::Power { alpha } => {
                if x == 0.0 {
                    0.0
                } else {
                    x.powf(1.0 + alpha) / (1.0 + alpha)
                }
            }
            Self::Custom(c) => (c.antiderivative)(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Power { alpha } => alpha * x.max(0.0).powf(alpha - 1.0),
            Self::Custom(c) => (c.derivative)(x.max(0.0)),
        }
    }

    /// `f⁻¹(y)` for `y ≥ 0`; returns 0 for `y ≤ 0`.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Power { alpha } => {
                if *alpha == 1.0 {
                    y
                } else {
                    y.powf(1.0 / alpha)
                }
            }
            Self::Custom(c) => match &c.inverse {
                Some(inv) => inv(y),
                None => bisect_inverse(&*c.f, y),
            },
        }
    }

    /// `d/dy f⁻¹(y)` for `y > 0`; 0 for `y ≤ 0`.
    pub fn inverse_derivative(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Power { alpha } => {
                if *alpha == 1.0 {
                    1.0
                } else {
                    y.powf(1.0 / alpha - 1.0) / alpha
                }
            }
            Self::Custom(c) => {
                let x = self.inverse(y);
                let d = (c.derivative)(x);
                if d > 0.0 {
                    1.0 / d
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

fn bisect_inverse(f: &dyn Fn(f64) -> f64, y: f64) -> f64 {
    let mut hi = 1.0;
    while f(hi) < y {
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Builds a schedule set from small integer vectors.
pub fn int_schedules(rows: &[&[i64]]) -> ScheduleSet {
    ScheduleSet::new(
        rows.iter()
            .map(|r| r.iter().map(|&x| Rational::from_integer(x.into())).collect())
            .collect(),
    )
    .expect("valid integer schedules")
}

pub mod presets {
    //! Named networks used by the scenario files and the test suites.

    use super::*;
    use itertools::Itertools;

    /// Two queues A, B with schedules "serve three from A" and "serve one each".
    pub fn ex2() -> NetworkModel {
        validate_network(int_schedules(&[&[3, 0], &[1, 1]]), RoutingMatrix::none(2))
            .expect("ex2 is valid")
    }

    /// M×M input-queued switch. Queue (i, j) has index `i*M + j`; schedules are
    /// the permutation matrices in lexicographic order of the permutation.
    pub fn iq_switch(m: usize) -> Result<NetworkModel> {
        if m == 0 {
            return Err(Error::InvalidNetwork("switch size must be positive".into()));
        }
        let schedules: Vec<Vec<Rational>> = (0..m)
            .permutations(m)
            .map(|perm| {
                let mut v = vec![Rational::zero(); m * m];
                for (i, &j) in perm.iter().enumerate() {
                    v[i * m + j] = Rational::one();
                }
                v
            })
            .collect();
        validate_network(ScheduleSet::new(schedules)?, RoutingMatrix::none(m * m))
    }

    /// Chain `0 → 1 → … → N−1` sharing one unit-rate server: the schedules are
    /// the unit vectors followed by the zero schedule.
    pub fn tandem(n: usize) -> Result<NetworkModel> {
        if n == 0 {
            return Err(Error::InvalidNetwork("tandem needs at least one queue".into()));
        }
        let units: Vec<Vec<Rational>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { Rational::one() } else { Rational::zero() })
                    .collect()
            })
            .collect();
        let closed = monotone_closure(&ScheduleSet::new(units)?);
        let pairs: Vec<(usize, usize)> = (1..n).map(|k| (k - 1, k)).collect();
        validate_network(closed, RoutingMatrix::from_pairs(n, &pairs)?)
    }

    /// Single queue served one unit per slot.
    pub fn single_queue() -> NetworkModel {
        validate_network(int_schedules(&[&[1]]), RoutingMatrix::none(1)).expect("valid")
    }
}
