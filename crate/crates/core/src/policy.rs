//! Schedule selection: MW-f, backpressure and MSMW-log.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arrivals::rng_for;
use crate::error::{Error, Result};
use crate::net::{NetworkModel, WeightFunction};

/// Salt separating the tie-break stream from the arrival stream of the same
/// replication.
const TIE_SEED_SALT: u64 = 0x7469_655f_6272_6b21;

#[derive(Debug, Clone)]
pub enum PolicyKind {
    Mw(WeightFunction),
    Backpressure(WeightFunction),
    MsmwLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    HighestIndex,
    Random,
    RoundRobin,
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    pub tie_break: TieBreak,
    /// Weights within `rel_tol·|max|` of the maximum count as maximal.
    pub rel_tol: f64,
}

impl Policy {
    pub fn mw(weight: WeightFunction) -> Self {
        Self {
            kind: PolicyKind::Mw(weight),
            tie_break: TieBreak::HighestIndex,
            rel_tol: 0.0,
        }
    }

    pub fn mw_alpha(alpha: f64) -> Result<Self> {
        Ok(Self::mw(WeightFunction::power(alpha)?))
    }

    pub fn backpressure(weight: WeightFunction) -> Self {
        Self {
            kind: PolicyKind::Backpressure(weight),
            tie_break: TieBreak::HighestIndex,
            rel_tol: 0.0,
        }
    }

    pub fn msmw_log() -> Self {
        Self {
            kind: PolicyKind::MsmwLog,
            tie_break: TieBreak::Random,
            rel_tol: 0.0,
        }
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn weight_function(&self) -> Option<&WeightFunction> {
        match &self.kind {
            PolicyKind::Mw(f) | PolicyKind::Backpressure(f) => Some(f),
            PolicyKind::MsmwLog => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            PolicyKind::Mw(f) => format!("mw[{}]", f.label()),
            PolicyKind::Backpressure(f) => format!("backpressure[{}]", f.label()),
            PolicyKind::MsmwLog => "msmw_log".into(),
        }
    }

    pub fn check_model(&self, model: &NetworkModel) -> Result<()> {
        match &self.kind {
            PolicyKind::Backpressure(_) if model.is_multi_hop() && !model.monotone_closed => {
                Err(Error::PolicyModelMismatch(
                    "backpressure needs a monotone-closed schedule set".into(),
                ))
            }
            PolicyKind::MsmwLog if model.is_multi_hop() => Err(Error::PolicyModelMismatch(
                "msmw_log is defined for single-hop networks only".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// A schedule weight. MW and backpressure use `primary` only; MSMW-log
/// compares `(size, log-weight)` lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleWeight {
    pub primary: f64,
    pub secondary: f64,
}

/// `[(I − R) f(q)]_n = f(q_n) − f(q_{downstream(n)})`.
pub fn pressure(model: &NetworkModel, f: &WeightFunction, q: &[f64]) -> Vec<f64> {
    (0..model.n_queues)
        .map(|n| {
            let down = model.routing.downstream(n).map_or(0.0, |m| f.eval(q[m]));
            f.eval(q[n]) - down
        })
        .collect()
}

/// The per-queue coefficient vector `c` with MW/backpressure weight `π·c`.
pub fn queue_coefficients(model: &NetworkModel, f: &WeightFunction, q: &[f64]) -> Vec<f64> {
    if model.is_multi_hop() {
        pressure(model, f, q)
    } else {
        f.eval_vec(q)
    }
}

fn check_queue(model: &NetworkModel, q: &[f64]) -> Result<()> {
    if q.len() != model.n_queues {
        return Err(Error::Dimension {
            expected: model.n_queues,
            got: q.len(),
        });
    }
    if let Some((i, &v)) = q.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeQueue { queue: i, value: v });
    }
    Ok(())
}

pub fn schedule_weights(
    model: &NetworkModel,
    policy: &Policy,
    q: &[f64],
) -> Result<Vec<ScheduleWeight>> {
    check_queue(model, q)?;
    policy.check_model(model)?;
    Ok(weights_unchecked(model, policy, q))
}

fn weights_unchecked(model: &NetworkModel, policy: &Policy, q: &[f64]) -> Vec<ScheduleWeight> {
    match &policy.kind {
        PolicyKind::Mw(f) | PolicyKind::Backpressure(f) => {
            let c = match policy.kind {
                PolicyKind::Backpressure(_) => pressure(model, f, q),
                _ => f.eval_vec(q),
            };
            model
                .schedules
                .iter()
                .map(|pi| ScheduleWeight {
                    primary: crate::vecops::dot(pi, &c),
                    secondary: 0.0,
                })
                .collect()
        }
        PolicyKind::MsmwLog => model
            .schedules
            .iter()
            .map(|pi| {
                let mut size = 0.0;
                let mut log = 0.0;
                for (p, &x) in pi.iter().zip(q) {
                    if x > 0.0 && *p != 0.0 {
                        size += p;
                        log += p * x.ln();
                    }
                }
                ScheduleWeight {
                    primary: size,
                    secondary: log,
                }
            })
            .collect(),
    }
}

fn near_max(w: f64, max: f64, rel_tol: f64) -> bool {
    w == max || (rel_tol > 0.0 && w >= max - rel_tol * max.abs())
}

/// Indices of maximal weights, ascending.
pub fn argmax_set(weights: &[ScheduleWeight], rel_tol: f64) -> Vec<usize> {
    let max1 = weights.iter().map(|w| w.primary).fold(f64::NEG_INFINITY, f64::max);
    let first: Vec<usize> = (0..weights.len())
        .filter(|&i| near_max(weights[i].primary, max1, rel_tol))
        .collect();
    let max2 = first
        .iter()
        .map(|&i| weights[i].secondary)
        .fold(f64::NEG_INFINITY, f64::max);
    first
        .into_iter()
        .filter(|&i| near_max(weights[i].secondary, max2, rel_tol))
        .collect()
}

/// Per-run tie-breaking state.
pub struct TieState {
    rng: ChaCha8Rng,
    last: Option<usize>,
}

impl TieState {
    pub fn new(seed: u64, rep: u64) -> Self {
        Self {
            rng: rng_for(seed ^ TIE_SEED_SALT, rep),
            last: None,
        }
    }
}

impl Default for TieState {
    fn default() -> Self {
        Self::new(0, 0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionTrace {
    pub weights: Vec<ScheduleWeight>,
    pub argmax_set: Vec<usize>,
    pub chosen: usize,
}

pub fn select_schedule(
    model: &NetworkModel,
    policy: &Policy,
    q: &[f64],
    tie: &mut TieState,
) -> Result<SelectionTrace> {
    let weights = schedule_weights(model, policy, q)?;
    let argmax = argmax_set(&weights, policy.rel_tol);
    let chosen = resolve_tie(&argmax, policy.tie_break, tie);
    Ok(SelectionTrace {
        weights,
        argmax_set: argmax,
        chosen,
    })
}

/// Selection without validation or trace, for inner loops whose inputs were
/// checked once up front.
pub(crate) fn select_fast(
    model: &NetworkModel,
    policy: &Policy,
    q: &[f64],
    tie: &mut TieState,
) -> usize {
    let weights = weights_unchecked(model, policy, q);
    let argmax = argmax_set(&weights, policy.rel_tol);
    resolve_tie(&argmax, policy.tie_break, tie)
}

fn resolve_tie(argmax: &[usize], rule: TieBreak, tie: &mut TieState) -> usize {
    let chosen = match rule {
        TieBreak::HighestIndex => *argmax.last().expect("nonempty argmax"),
        TieBreak::Random => {
            if argmax.len() == 1 {
                argmax[0]
            } else {
                argmax[tie.rng.random_range(0..argmax.len())]
            }
        }
        TieBreak::RoundRobin => match tie.last {
            Some(last) => *argmax.iter().find(|&&i| i > last).unwrap_or(&argmax[0]),
            None => argmax[0],
        },
    };
    tie.last = Some(chosen);
    chosen
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleCounterexample {
    pub q: Vec<f64>,
    pub kappa: f64,
    pub argmax_q: Vec<usize>,
    pub argmax_scaled: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleInvarianceReport {
    pub passed: bool,
    pub checked: usize,
    pub counterexamples: Vec<ScaleCounterexample>,
}

/// Relative tolerance for comparing argmax sets of `q` and `κq`; rescaling
/// perturbs float weights by a few ulps.
pub const SCALE_CHECK_TOL: f64 = 1e-9;

/// Samples `q` uniformly from `[0, 10]^N` and compares argmax sets at `q` and `κq`.
pub fn check_scale_invariance(
    model: &NetworkModel,
    policy: &Policy,
    samples: usize,
    kappas: &[f64],
    seed: u64,
) -> Result<ScaleInvarianceReport> {
    if matches!(policy.kind, PolicyKind::MsmwLog) {
        return Err(Error::Precondition(
            "scale invariance applies to mw and backpressure".into(),
        ));
    }
    policy.check_model(model)?;
    let mut rng = rng_for(seed, 0);
    let mut counterexamples = Vec::new();
    let mut checked = 0;
    for _ in 0..samples {
        let q: Vec<f64> = (0..model.n_queues).map(|_| rng.random_range(0.0..10.0)).collect();
        let base = argmax_set(&weights_unchecked(model, policy, &q), SCALE_CHECK_TOL);
        for &k in kappas {
            let scaled: Vec<f64> = q.iter().map(|x| x * k).collect();
            let other = argmax_set(&weights_unchecked(model, policy, &scaled), SCALE_CHECK_TOL);
            checked += 1;
            if other != base {
                counterexamples.push(ScaleCounterexample {
                    q: q.clone(),
                    kappa: k,
                    argmax_q: base.clone(),
                    argmax_scaled: other,
                });
            }
        }
    }
    Ok(ScaleInvarianceReport {
        passed: counterexamples.is_empty(),
        checked,
        counterexamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{int_schedules, monotone_closure, presets, validate_network, RoutingMatrix};
    use std::f64::consts::E;

    fn primaries(w: &[ScheduleWeight]) -> Vec<f64> {
        w.iter().map(|x| x.primary).collect()
    }

    #[test]
    fn ex2_weights() {
        let m = presets::ex2();
        let p = Policy::mw_alpha(1.0).unwrap();
        assert_eq!(primaries(&schedule_weights(&m, &p, &[5.0, 1.0]).unwrap()), vec![15.0, 6.0]);
    }

    #[test]
    fn tandem_backpressure_weight() {
        let s = monotone_closure(&int_schedules(&[&[1, 1]]));
        let m = validate_network(s, RoutingMatrix::from_pairs(2, &[(0, 1)]).unwrap()).unwrap();
        let p = Policy::backpressure(WeightFunction::power(1.0).unwrap());
        let w = schedule_weights(&m, &p, &[2.0, 5.0]).unwrap();
        // schedule 1 is (1,0) in the closure order
        assert_eq!(m.schedules.get(1), &[1.0, 0.0]);
        assert_eq!(w[1].primary, -3.0);
    }

    #[test]
    fn msmw_prefers_size_then_log() {
        let m = presets::iq_switch(2).unwrap();
        // permutation order: identity (diagonal) then swap (anti-diagonal)
        let p = Policy::msmw_log();
        let mut tie = TieState::default();
        let t = select_schedule(&m, &p, &[2.0, 3.0, 5.0, 0.0], &mut tie).unwrap();
        assert_eq!(t.weights[0].primary, 1.0);
        assert_eq!(t.weights[1].primary, 2.0);
        assert_eq!(t.chosen, 1);
        let e2 = E * E;
        let t = select_schedule(&m, &p, &[e2, 1.0, 1.0, e2], &mut tie).unwrap();
        assert!((t.weights[0].secondary - 4.0).abs() < 1e-12);
        assert_eq!(t.weights[1].secondary, 0.0);
        assert_eq!(t.chosen, 0);
    }

    #[test]
    fn ex2_tie_breaks() {
        let m = presets::ex2();
        let p = Policy::mw_alpha(1.0).unwrap();
        let mut tie = TieState::default();
        let t = select_schedule(&m, &p, &[1.0, 2.0], &mut tie).unwrap();
        assert_eq!(t.argmax_set, vec![0, 1]);
        assert_eq!(t.chosen, 1);
        assert_eq!(select_schedule(&m, &p, &[1.0, 4.0], &mut tie).unwrap().chosen, 1);

        let rr = p.clone().with_tie_break(TieBreak::RoundRobin);
        let picks: Vec<usize> = (0..4)
            .map(|_| select_schedule(&m, &rr, &[1.0, 2.0], &mut tie).unwrap().chosen)
            .collect();
        assert_eq!(picks, vec![0, 1, 0, 1]);

        let rnd = p.with_tie_break(TieBreak::Random);
        let mut tie = TieState::new(11, 0);
        let seen: std::collections::BTreeSet<usize> = (0..64)
            .map(|_| select_schedule(&m, &rnd, &[1.0, 2.0], &mut tie).unwrap().chosen)
            .collect();
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn mismatches_rejected() {
        let tandem = presets::tandem(2).unwrap();
        assert!(matches!(
            schedule_weights(&tandem, &Policy::msmw_log(), &[1.0, 1.0]),
            Err(Error::PolicyModelMismatch(_))
        ));
        let unclosed = validate_network(
            int_schedules(&[&[1, 1]]),
            RoutingMatrix::from_pairs(2, &[(0, 1)]).unwrap(),
        )
        .unwrap();
        let bp = Policy::backpressure(WeightFunction::power(1.0).unwrap());
        assert!(schedule_weights(&unclosed, &bp, &[1.0, 1.0]).is_err());
        assert!(matches!(
            schedule_weights(&presets::ex2(), &bp, &[-1.0, 1.0]),
            Err(Error::NegativeQueue { queue: 0, .. })
        ));
    }

    #[test]
    fn power_weights_are_scale_invariant() {
        let m = presets::iq_switch(3).unwrap();
        let p = Policy::mw_alpha(0.5).unwrap();
        let r = check_scale_invariance(&m, &p, 200, &[0.1, 1.0, 10.0], 1).unwrap();
        assert!(r.passed, "{:?}", r.counterexamples.first());
        let bp = Policy::backpressure(WeightFunction::power(2.0).unwrap());
        let t = presets::tandem(3).unwrap();
        assert!(check_scale_invariance(&t, &bp, 200, &[0.1, 10.0], 2).unwrap().passed);
    }

    #[test]
    fn log1p_is_not_scale_invariant_on_3x3() {
        let m = presets::iq_switch(3).unwrap();
        let p = Policy::mw(WeightFunction::log1p());
        let r = check_scale_invariance(&m, &p, 500, &[0.01, 100.0], 3).unwrap();
        assert!(!r.passed);
        let r = check_scale_invariance(&m, &p, 100, &[1.0], 3).unwrap();
        assert!(r.passed);
    }
}
