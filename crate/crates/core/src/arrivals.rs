//! Exogenous arrival processes with stationary increments.
//!
//! Every replication draws from its own ChaCha8 stream: the generator is
//! seeded with the master seed and `set_stream(replication)` selects the
//! stream, so replications are independent of scheduling order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Generator for replication `rep` under master seed `seed`.
pub fn rng_for(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalKind {
    /// `λ` every slot.
    Deterministic,
    /// One unit with probability `λ_n`, independently per queue and slot.
    Bernoulli,
    /// Per queue, a finite distribution of `(amount, probability)` pairs.
    IidBatch { dists: Vec<Vec<(f64, f64)>> },
    /// A finite irreducible chain; in state k each queue n receives
    /// `amounts[k][n]`. The chain starts from its stationary law.
    MarkovModulated {
        transition: Vec<Vec<f64>>,
        amounts: Vec<Vec<f64>>,
        stationary: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalModel {
    pub kind: ArrivalKind,
    /// Exact mean of one increment.
    pub rate: Vec<f64>,
    /// Largest possible increment per queue.
    pub a_max: Vec<f64>,
}

fn check_vec(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidArrivals(format!("{what} must be finite and nonnegative")));
    }
    Ok(())
}

impl ArrivalModel {
    pub fn deterministic(rate: Vec<f64>) -> Result<Self> {
        check_vec(&rate, "deterministic rates")?;
        Ok(Self {
            kind: ArrivalKind::Deterministic,
            a_max: rate.clone(),
            rate,
        })
    }

    pub fn bernoulli(p: Vec<f64>) -> Result<Self> {
        check_vec(&p, "bernoulli probabilities")?;
        if p.iter().any(|&x| x > 1.0) {
            return Err(Error::InvalidArrivals("bernoulli probabilities must be ≤ 1".into()));
        }
        Ok(Self {
            kind: ArrivalKind::Bernoulli,
            a_max: p.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect(),
            rate: p,
        })
    }

    pub fn iid_batch(dists: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let mut rate = Vec::with_capacity(dists.len());
        let mut a_max = Vec::with_capacity(dists.len());
        for (n, d) in dists.iter().enumerate() {
            if d.is_empty() {
                return Err(Error::InvalidArrivals(format!("queue {n}: empty batch distribution")));
            }
            let mut total = 0.0;
            let mut mean = 0.0;
            let mut max: f64 = 0.0;
            for &(v, p) in d {
                if !(v.is_finite() && v >= 0.0 && p.is_finite() && p >= 0.0) {
                    return Err(Error::InvalidArrivals(format!(
                        "queue {n}: batch amounts and probabilities must be nonnegative"
                    )));
                }
                total += p;
                mean += v * p;
                if p > 0.0 {
                    max = max.max(v);
                }
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArrivals(format!(
                    "queue {n}: probabilities sum to {total}"
                )));
            }
            rate.push(mean);
            a_max.push(max);
        }
        Ok(Self {
            kind: ArrivalKind::IidBatch { dists },
            rate,
            a_max,
        })
    }

    pub fn markov_modulated(transition: Vec<Vec<f64>>, amounts: Vec<Vec<f64>>) -> Result<Self> {
        let k = transition.len();
        if k == 0 || amounts.len() != k {
            return Err(Error::InvalidArrivals(
                "markov chain needs one amount vector per state".into(),
            ));
        }
        let n = amounts[0].len();
        for (s, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Dimension {
                    expected: k,
                    got: row.len(),
                });
            }
            check_vec(row, "transition probabilities")?;
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArrivals(format!(
                    "transition row {s} sums to {total}"
                )));
            }
            if amounts[s].len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: amounts[s].len(),
                });
            }
            check_vec(&amounts[s], "state amounts")?;
        }
        if !is_irreducible(&transition) {
            return Err(Error::InvalidArrivals("markov chain is not irreducible".into()));
        }
        let stationary = stationary_distribution(&transition)?;
        let rate = (0..n)
            .map(|q| (0..k).map(|s| stationary[s] * amounts[s][q]).sum())
            .collect();
        let a_max = (0..n)
            .map(|q| amounts.iter().map(|a| a[q]).fold(0.0, f64::max))
            .collect();
        Ok(Self {
            kind: ArrivalKind::MarkovModulated {
                transition,
                amounts,
                stationary,
            },
            rate,
            a_max,
        })
    }

    pub fn n(&self) -> usize {
        self.rate.len()
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ArrivalKind::Deterministic => "deterministic",
            ArrivalKind::Bernoulli => "bernoulli",
            ArrivalKind::IidBatch { .. } => "iid_batch",
            ArrivalKind::MarkovModulated { .. } => "markov_modulated",
        }
    }

    pub fn stream(&self, seed: u64, rep: u64) -> ArrivalStream<'_> {
        ArrivalStream::new(self, rng_for(seed, rep))
    }
}

fn is_irreducible(p: &[Vec<f64>]) -> bool {
    let k = p.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let edge = if forward { p[i][j] } else { p[j][i] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solves `ρ P = ρ`, `Σ ρ = 1`.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = p.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidArrivals("singular stationary system".into()))?;
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

fn sample_discrete(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>, n: usize) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    n - 1
}

/// Per-replication source of increments.
pub struct ArrivalStream<'a> {
    model: &'a ArrivalModel,
    rng: ChaCha8Rng,
    state: Option<usize>,
    slots: u64,
}

impl<'a> ArrivalStream<'a> {
    pub fn new(model: &'a ArrivalModel, rng: ChaCha8Rng) -> Self {
        Self {
            model,
            rng,
            state: None,
            slots: 0,
        }
    }

    /// Writes the next slot's increment into `out`.
    pub fn next_into(&mut self, out: &mut [f64]) {
        let model = self.model;
        match &model.kind {
            ArrivalKind::Deterministic => out.copy_from_slice(&model.rate),
            ArrivalKind::Bernoulli => {
                for (o, &p) in out.iter_mut().zip(&model.rate) {
                    let u: f64 = self.rng.random();
                    *o = if u < p { 1.0 } else { 0.0 };
                }
            }
            ArrivalKind::IidBatch { dists } => {
                for (o, d) in out.iter_mut().zip(dists) {
                    let i = sample_discrete(&mut self.rng, d.iter().map(|x| x.1), d.len());
                    *o = d[i].0;
                }
            }
            ArrivalKind::MarkovModulated {
                transition,
                amounts,
                stationary,
            } => {
                let k = transition.len();
                let s = match self.state {
                    Some(s) => s,
                    None => sample_discrete(&mut self.rng, stationary.iter().copied(), k),
                };
                out.copy_from_slice(&amounts[s]);
                self.state = Some(sample_discrete(
                    &mut self.rng,
                    transition[s].iter().copied(),
                    k,
                ));
            }
        }
        self.slots += 1;
    }

    pub fn next_increment(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.model.n()];
        self.next_into(&mut out);
        out
    }

    /// True when the cumulative process is exactly `λτ`.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.model.kind, ArrivalKind::Deterministic)
    }
}

/// Cumulative path `A(0), …, A(horizon)` for replication 0 of `seed`.
pub fn sample_increments(model: &ArrivalModel, horizon: usize, seed: u64) -> Vec<Vec<f64>> {
    sample_path(model, horizon, seed, 0)
}

pub fn sample_path(model: &ArrivalModel, horizon: usize, seed: u64, rep: u64) -> Vec<Vec<f64>> {
    let n = model.n();
    let mut stream = model.stream(seed, rep);
    let mut sums = vec![crate::vecops::CompensatedSum::default(); n];
    let mut path = Vec::with_capacity(horizon + 1);
    path.push(vec![0.0; n]);
    let mut inc = vec![0.0; n];
    for tau in 1..=horizon {
        stream.next_into(&mut inc);
        if stream.is_deterministic() {
            path.push(model.rate.iter().map(|&l| l * tau as f64).collect());
        } else {
            for (s, &x) in sums.iter_mut().zip(&inc) {
                s.add(x);
            }
            path.push(sums.iter().map(|s| s.value()).collect());
        }
    }
    path
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub horizons: Vec<usize>,
    /// Max over replications of `sup_{τ≤z} |A(τ) − λτ| / z`.
    pub sup_dev: Vec<f64>,
    /// Median over replications of the same quantity.
    pub median_dev: Vec<f64>,
    pub delta: Vec<f64>,
    pub pass_fluid: Vec<bool>,
}

pub fn default_delta(z: usize) -> f64 {
    (z as f64).powf(-1.0 / 3.0)
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

pub fn deviation_diagnostic(
    model: &ArrivalModel,
    horizons: &[usize],
    reps: usize,
    seed: u64,
    delta: Option<&[f64]>,
) -> Result<DeviationReport> {
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::Precondition("horizons must be nonempty and positive".into()));
    }
    if reps == 0 {
        return Err(Error::Precondition("need at least one replication".into()));
    }
    let delta: Vec<f64> = match delta {
        Some(d) => {
            if d.len() != horizons.len() {
                return Err(Error::Dimension {
                    expected: horizons.len(),
                    got: d.len(),
                });
            }
            let mut order: Vec<usize> = (0..horizons.len()).collect();
            order.sort_by_key(|&i| horizons[i]);
            if order.windows(2).any(|w| d[w[1]] > d[w[0]]) {
                return Err(Error::Precondition("δ_z must be nonincreasing in z".into()));
            }
            d.to_vec()
        }
        None => horizons.iter().map(|&z| default_delta(z)).collect(),
    };
    let zmax = *horizons.iter().max().expect("nonempty");
    // per rep: running sup of |A(τ) − λτ| at each requested horizon
    let per_rep: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let path = sample_path(model, zmax, seed, rep);
            let mut running = Vec::with_capacity(zmax + 1);
            let mut sup: f64 = 0.0;
            for (tau, a) in path.iter().enumerate() {
                for (x, l) in a.iter().zip(&model.rate) {
                    sup = sup.max((x - l * tau as f64).abs());
                }
                running.push(sup);
            }
            horizons.iter().map(|&z| running[z] / z as f64).collect()
        })
        .collect();
    let mut sup_dev = Vec::with_capacity(horizons.len());
    let mut median_dev = Vec::with_capacity(horizons.len());
    for h in 0..horizons.len() {
        let mut vals: Vec<f64> = per_rep.iter().map(|r| r[h]).collect();
        sup_dev.push(vals.iter().copied().fold(0.0, f64::max));
        median_dev.push(median(&mut vals));
    }
    let pass_fluid = sup_dev.iter().zip(&delta).map(|(s, d)| s <= d).collect();
    Ok(DeviationReport {
        horizons: horizons.to_vec(),
        sup_dev,
        median_dev,
        delta,
        pass_fluid,
    })
}
