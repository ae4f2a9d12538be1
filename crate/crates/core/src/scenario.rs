//! Scenario files: a JSON description of network, load, arrivals, policy and
//! the experiment to run.
//!
//! Rational values may be given as JSON numbers (read through their decimal
//! text, so `0.1` is exactly 1/10) or as strings such as `"1/3"`.

use std::io::Read;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arrivals::ArrivalModel;
use crate::error::{Error, Result};
use crate::net::{monotone_closure, presets, validate_network, NetworkModel, RoutingMatrix, ScheduleSet, WeightFunction};
use crate::plan::rational::{self, Rational};
use crate::policy::{Policy, TieBreak};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RationalValue {
    Number(serde_json::Number),
    Text(String),
}

impl RationalValue {
    pub fn to_rational(&self) -> Result<Rational> {
        let text = match self {
            Self::Number(n) => n.to_string(),
            Self::Text(s) => s.clone(),
        };
        rational::parse(&text)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum ArrivalSpec {
    /// `A(τ) = λτ`.
    Deterministic,
    /// One unit per slot with probability `λ_n`.
    Bernoulli,
    /// Per-queue finite distributions as `[value, probability]` pairs.
    Batch { dists: Vec<Vec<(f64, f64)>> },
    /// Markov-modulated arrivals: `amounts[state][queue]`.
    Markov {
        transition: Vec<Vec<f64>>,
        amounts: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    Power,
    Log1p,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    #[serde(default)]
    pub kind: WeightKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl WeightSpec {
    pub fn build(&self) -> Result<WeightFunction> {
        match self.kind {
            WeightKind::Power => WeightFunction::power(self.alpha),
            WeightKind::Log1p => Ok(WeightFunction::log1p()),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKindSpec {
    Mw,
    Backpressure,
    MsmwLog,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreakSpec {
    Random,
    HighestIndex,
    RoundRobin,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKindSpec,
    #[serde(default)]
    pub weight: WeightKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub tie_break: Option<TieBreakSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum ExperimentSpec {
    Analyze {},
    Simulate {
        horizon: usize,
        #[serde(default = "one")]
        replications: usize,
        #[serde(default = "one")]
        stride: usize,
        q0: Option<Vec<f64>>,
        /// A trajectory CSV to audit in place of fresh runs.
        audit_fixture: Option<PathBuf>,
    },
    Fluid {
        q0: Vec<f64>,
        #[serde(default = "default_h")]
        h: f64,
        horizon: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_lift_samples")]
        lift_samples: usize,
    },
    Lift {
        q: Vec<Vec<f64>>,
    },
    Collapse {
        #[serde(default = "default_scales")]
        scales: Vec<f64>,
        #[serde(default = "default_collapse_horizon")]
        horizon: f64,
        #[serde(default = "default_reps")]
        replications: usize,
        #[serde(default = "default_subsample")]
        subsample: usize,
        q_hat0: Vec<f64>,
        heavy_traffic: Option<Vec<f64>>,
        #[serde(default = "default_threshold")]
        median_threshold: f64,
    },
    Iqcheck {
        #[serde(default = "default_alphas")]
        alphas: Vec<f64>,
        #[serde(default = "default_sizes")]
        sizes: Vec<usize>,
        #[serde(default = "default_closure_samples")]
        closure_samples: usize,
        #[serde(default = "default_invariant_samples")]
        invariant_samples: usize,
        #[serde(default = "default_alpha")]
        coverage_alpha: f64,
        #[serde(default = "default_brute_points")]
        brute_points: usize,
    },
}

fn one() -> usize {
    1
}
fn default_h() -> f64 {
    crate::fluid::DEFAULT_STEP
}
fn default_eps() -> f64 {
    0.05
}
fn default_lift_samples() -> usize {
    200
}
fn default_scales() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}
fn default_collapse_horizon() -> f64 {
    2.0
}
fn default_reps() -> usize {
    20
}
fn default_subsample() -> usize {
    crate::collapse::DEFAULT_SUBSAMPLE
}
fn default_threshold() -> f64 {
    crate::collapse::DEFAULT_MEDIAN_THRESHOLD
}
fn default_alphas() -> Vec<f64> {
    vec![1.0, 0.5, 0.2]
}
fn default_sizes() -> Vec<usize> {
    vec![2, 3]
}
fn default_closure_samples() -> usize {
    1000
}
fn default_invariant_samples() -> usize {
    200
}
fn default_brute_points() -> usize {
    1001
}

impl ExperimentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Analyze {} => "analyze",
            Self::Simulate { .. } => "simulate",
            Self::Fluid { .. } => "fluid",
            Self::Lift { .. } => "lift",
            Self::Collapse { .. } => "collapse",
            Self::Iqcheck { .. } => "iqcheck",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_kkt")]
    pub kkt: f64,
    #[serde(default = "default_fixed_point")]
    pub fixed_point: f64,
    #[serde(default = "default_invariant")]
    pub invariant: f64,
}

fn default_kkt() -> f64 {
    crate::lift::DEFAULT_KKT_TOL
}
fn default_fixed_point() -> f64 {
    crate::lift::DEFAULT_FIXED_POINT_TOL
}
fn default_invariant() -> f64 {
    1e-6
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            kkt: default_kkt(),
            fixed_point: default_fixed_point(),
            invariant: default_invariant(),
        }
    }
}

/// The file as written.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub preset: Option<String>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub schedules: Option<Vec<Vec<RationalValue>>>,
    /// `[from, to]` pairs.
    pub routing: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub closure: bool,
    pub lambda: Option<Vec<RationalValue>>,
    pub arrivals: Option<ArrivalSpec>,
    pub policy: Option<PolicySpec>,
    pub weight: Option<WeightSpec>,
    pub experiment: ExperimentSpec,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tolerances: Option<Tolerances>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: NetworkModel,
    pub model_label: String,
    pub lambda: Option<Vec<Rational>>,
    pub arrivals: Option<ArrivalModel>,
    pub policy: Policy,
    /// Weight for lifting and drift; the policy's own unless overridden.
    pub weight: Option<WeightFunction>,
    pub experiment: ExperimentSpec,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub tolerances: Tolerances,
    /// SHA-256 of the scenario bytes.
    pub config_hash: String,
}

pub const DEFAULT_SEED: u64 = 1;

fn schema_error<E: std::fmt::Display>(err: serde_path_to_error::Error<E>) -> Error {
    let mut pointer = String::new();
    for seg in err.path().iter() {
        use serde_path_to_error::Segment;
        match seg {
            Segment::Seq { index } => pointer.push_str(&format!("/{index}")),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                pointer.push('/');
                pointer.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Unknown => pointer.push_str("/?"),
        }
    }
    let message = err.inner().to_string();
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            pointer.push('/');
            pointer.push_str(field);
        }
    }
    if pointer.is_empty() {
        pointer.push('/');
    }
    Error::Schema { pointer, message }
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(schema_error)?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    build(file, hash)
}

/// Reads a scenario from a path, or from stdin when the path is `-`.
pub fn parse_scenario(path: &std::path::Path) -> Result<Scenario> {
    let mut text = String::new();
    if path.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut text)?;
    } else {
        text = std::fs::read_to_string(path)?;
    }
    parse_scenario_str(&text)
}

fn rationals(v: &[RationalValue]) -> Result<Vec<Rational>> {
    v.iter().map(RationalValue::to_rational).collect()
}

fn build_model(file: &ScenarioFile) -> Result<(NetworkModel, String)> {
    match (&file.preset, &file.schedules) {
        (Some(_), Some(_)) => Err(Error::Schema {
            pointer: "/schedules".into(),
            message: "give either a preset or explicit schedules, not both".into(),
        }),
        (None, None) => Err(Error::Schema {
            pointer: "/preset".into(),
            message: "a preset or explicit schedules are required".into(),
        }),
        (Some(p), None) => {
            let need = |v: Option<usize>, key: &str| {
                v.ok_or_else(|| Error::Schema {
                    pointer: format!("/{key}"),
                    message: format!("preset `{p}` needs `{key}`"),
                })
            };
            match p.as_str() {
                "ex2" => Ok((presets::ex2(), "ex2".into())),
                "single_queue" => Ok((presets::single_queue(), "single_queue".into())),
                "iq_switch" => {
                    let m = need(file.m, "M")?;
                    Ok((presets::iq_switch(m)?, format!("iq_switch(M={m})")))
                }
                "tandem" => {
                    let n = need(file.n, "N")?;
                    Ok((presets::tandem(n)?, format!("tandem(N={n})")))
                }
                other => Err(Error::PresetUnknown(other.to_string())),
            }
        }
        (None, Some(rows)) => {
            let exact = rows.iter().map(|r| rationals(r)).collect::<Result<Vec<_>>>()?;
            let mut set = ScheduleSet::new(exact)?;
            if file.closure {
                set = monotone_closure(&set);
            }
            let n = set.dim();
            let routing = match &file.routing {
                Some(pairs) => RoutingMatrix::from_pairs(n, pairs)?,
                None => RoutingMatrix::none(n),
            };
            Ok((validate_network(set, routing)?, "custom".into()))
        }
    }
}

fn build(file: ScenarioFile, config_hash: String) -> Result<Scenario> {
    let (model, model_label) = build_model(&file)?;
    let n = model.n_queues;
    let lambda = match &file.lambda {
        Some(l) => {
            let l = rationals(l)?;
            if l.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: l.len(),
                });
            }
            Some(l)
        }
        None => None,
    };
    let rates = lambda.as_ref().map(|l| rational::vec_to_f64(l));
    let arrivals = match (&file.arrivals, &rates) {
        (None, None) => None,
        (None, Some(r)) | (Some(ArrivalSpec::Deterministic), Some(r)) => Some(ArrivalModel::deterministic(r.clone())?),
        (Some(ArrivalSpec::Bernoulli), Some(r)) => Some(ArrivalModel::bernoulli(r.clone())?),
        (Some(ArrivalSpec::Deterministic | ArrivalSpec::Bernoulli), None) => {
            return Err(Error::Schema {
                pointer: "/lambda".into(),
                message: "these arrivals take their rates from `lambda`".into(),
            })
        }
        (Some(ArrivalSpec::Batch { dists }), _) => Some(ArrivalModel::iid_batch(dists.clone())?),
        (Some(ArrivalSpec::Markov { transition, amounts }), _) => {
            Some(ArrivalModel::markov_modulated(transition.clone(), amounts.clone())?)
        }
    };
    if let Some(a) = &arrivals {
        if a.n() != n {
            return Err(Error::Dimension {
                expected: n,
                got: a.n(),
            });
        }
    }
    let policy = match &file.policy {
        None => Policy::mw_alpha(1.0)?,
        Some(spec) => {
            let w = WeightSpec {
                kind: spec.weight,
                alpha: spec.alpha,
            }
            .build()?;
            let p = match spec.kind {
                PolicyKindSpec::Mw => Policy::mw(w),
                PolicyKindSpec::Backpressure => Policy::backpressure(w),
                PolicyKindSpec::MsmwLog => Policy::msmw_log(),
            };
            match spec.tie_break {
                Some(TieBreakSpec::Random) => p.with_tie_break(TieBreak::Random),
                Some(TieBreakSpec::HighestIndex) => p.with_tie_break(TieBreak::HighestIndex),
                Some(TieBreakSpec::RoundRobin) => p.with_tie_break(TieBreak::RoundRobin),
                None => p,
            }
        }
    };
    policy.check_model(&model)?;
    let weight = match &file.weight {
        Some(w) => Some(w.build()?),
        None => policy.weight_function().cloned(),
    };
    Ok(Scenario {
        model,
        model_label,
        lambda,
        arrivals,
        policy,
        weight,
        experiment: file.experiment,
        out: file.out,
        seed: file.seed.unwrap_or(DEFAULT_SEED),
        tolerances: file.tolerances.unwrap_or_default(),
        config_hash,
    })
}
