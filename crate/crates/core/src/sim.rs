//! Discrete-time dynamics, cumulative trajectories, conservation audits and
//! rescaled views.
//!
//! Within a slot the network serves first and then receives arrivals. In a
//! multi-hop network work routed during slot τ reaches its downstream queue
//! in `Q(τ+1)`.

use std::io::{Read, Write};

use serde::Serialize;

use crate::arrivals::ArrivalModel;
use crate::error::{Error, Result};
use crate::net::{NetworkModel, RoutingMatrix};
use crate::policy::{select_fast, Policy, TieState};
use crate::vecops::CompensatedSum;

/// Applies one slot in place: `service` is offered, `arrivals` join after
/// service. Writes the idled amount `[service − q]⁺` to `idle`.
pub fn advance(
    model: &NetworkModel,
    q: &mut [f64],
    service: &[f64],
    arrivals: &[f64],
    idle: &mut [f64],
) {
    let n = q.len();
    for i in 0..n {
        idle[i] = (service[i] - q[i]).max(0.0);
    }
    if model.is_multi_hop() {
        let mut routed = vec![0.0; n];
        for i in 0..n {
            if let Some(k) = model.routing.downstream(i) {
                routed[k] += service[i] - idle[i];
            }
        }
        for i in 0..n {
            q[i] = (q[i] - service[i]).max(0.0) + arrivals[i] + routed[i];
        }
    } else {
        for i in 0..n {
            q[i] = (q[i] - service[i]).max(0.0) + arrivals[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub chosen: usize,
    pub d_a: Vec<f64>,
    pub d_b: Vec<f64>,
    pub d_y: Vec<f64>,
}

/// One slot under a given service vector.
pub fn step_with_service(
    model: &NetworkModel,
    q: &[f64],
    d_b: &[f64],
    d_a: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = model.n_queues;
    for v in [q, d_b, d_a] {
        if v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: v.len(),
            });
        }
    }
    if let Some(i) = d_a.iter().position(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidArrivals(format!("negative increment at queue {i}")));
    }
    let mut next = q.to_vec();
    let mut idle = vec![0.0; n];
    advance(model, &mut next, d_b, d_a, &mut idle);
    if let Some((i, &v)) = next.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeQueue { queue: i, value: v });
    }
    Ok((next, idle))
}

/// One slot with the schedule picked by `policy`.
pub fn step(
    model: &NetworkModel,
    policy: &Policy,
    q: &[f64],
    d_a: &[f64],
    tie: &mut TieState,
) -> Result<(Vec<f64>, SlotRecord)> {
    let trace = crate::policy::select_schedule(model, policy, q, tie)?;
    let d_b = model.schedules.get(trace.chosen).to_vec();
    let (next, d_y) = step_with_service(model, q, &d_b, d_a)?;
    Ok((
        next,
        SlotRecord {
            chosen: trace.chosen,
            d_a: d_a.to_vec(),
            d_b,
            d_y,
        },
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PathMeta {
    pub model: String,
    pub policy: String,
    pub seed: u64,
    pub replication: u64,
}

/// Cumulative trajectory of one run, recorded every `stride` slots plus the
/// final slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPath {
    pub n_queues: usize,
    pub schedules: Vec<Vec<f64>>,
    pub routing: RoutingMatrix,
    pub horizon: usize,
    pub stride: usize,
    pub taus: Vec<usize>,
    pub q: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub s_cum: Vec<Vec<u64>>,
    /// Schedule used during the recorded slot; `None` on the final row.
    pub chosen: Vec<Option<usize>>,
    /// Running maximum of each queue over every slot, recorded or not.
    pub max_q: Vec<f64>,
    /// `sup_τ |Q(τ)|_∞` over every slot.
    pub max_norm: f64,
    pub meta: PathMeta,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub horizon: usize,
    pub seed: u64,
    pub replication: u64,
    pub stride: usize,
}

impl RunOptions {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            replication: 0,
            stride: 1,
        }
    }
}

pub fn run(
    model: &NetworkModel,
    policy: &Policy,
    arrivals: &ArrivalModel,
    q0: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<SystemPath> {
    run_with(model, policy, arrivals, q0, &RunOptions::new(horizon, seed))
}

pub fn run_with(
    model: &NetworkModel,
    policy: &Policy,
    arrivals: &ArrivalModel,
    q0: &[f64],
    opts: &RunOptions,
) -> Result<SystemPath> {
    let n = model.n_queues;
    if q0.len() != n || arrivals.n() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if q0.len() != n { q0.len() } else { arrivals.n() },
        });
    }
    if let Some((i, &v)) = q0.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::NegativeQueue { queue: i, value: v });
    }
    policy.check_model(model)?;
    let stride = opts.stride.max(1);
    let ns = model.schedules.len();
    let mut stream = arrivals.stream(opts.seed, opts.replication);
    let mut tie = TieState::new(opts.seed, opts.replication);

    let mut q = q0.to_vec();
    let mut d_a = vec![0.0; n];
    let mut d_y = vec![0.0; n];
    let mut a_sum = vec![CompensatedSum::default(); n];
    let mut b_sum = vec![CompensatedSum::default(); n];
    let mut y_sum = vec![CompensatedSum::default(); n];
    let mut s_cum = vec![0u64; ns];

    let cap = opts.horizon / stride + 2;
    let mut path = SystemPath {
        n_queues: n,
        schedules: model.schedules.iter().map(<[f64]>::to_vec).collect(),
        routing: model.routing.clone(),
        horizon: opts.horizon,
        stride,
        taus: Vec::with_capacity(cap),
        q: Vec::with_capacity(cap),
        a: Vec::with_capacity(cap),
        b: Vec::with_capacity(cap),
        y: Vec::with_capacity(cap),
        s_cum: Vec::with_capacity(cap),
        chosen: Vec::with_capacity(cap),
        max_q: q0.to_vec(),
        max_norm: crate::vecops::sup_norm(q0),
        meta: PathMeta {
            model: String::new(),
            policy: policy.label(),
            seed: opts.seed,
            replication: opts.replication,
        },
    };
    let values = |s: &[CompensatedSum]| s.iter().map(CompensatedSum::value).collect::<Vec<_>>();

    for tau in 0..=opts.horizon {
        let record = tau % stride == 0 || tau == opts.horizon;
        if record {
            path.taus.push(tau);
            path.q.push(q.clone());
            path.a.push(if stream.is_deterministic() {
                arrivals.rate.iter().map(|l| l * tau as f64).collect()
            } else {
                values(&a_sum)
            });
            path.b.push(values(&b_sum));
            path.y.push(values(&y_sum));
            path.s_cum.push(s_cum.clone());
        }
        if tau == opts.horizon {
            if record {
                path.chosen.push(None);
            }
            break;
        }
        let chosen = select_fast(model, policy, &q, &mut tie);
        if record {
            path.chosen.push(Some(chosen));
        }
        stream.next_into(&mut d_a);
        let service = model.schedules.get(chosen);
        advance(model, &mut q, service, &d_a, &mut d_y);
        if let Some((i, &v)) = q.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeQueue { queue: i, value: v });
        }
        s_cum[chosen] += 1;
        for i in 0..n {
            a_sum[i].add(d_a[i]);
            b_sum[i].add(service[i]);
            y_sum[i].add(d_y[i]);
            if q[i] > path.max_q[i] {
                path.max_q[i] = q[i];
            }
            let abs = q[i].abs();
            if abs > path.max_norm {
                path.max_norm = abs;
            }
        }
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Slot at which the check failed (the later slot for pair checks).
    pub slot: usize,
    /// Earlier slot of a pair check.
    pub earlier: Option<usize>,
    pub check: &'static str,
    pub queue: Option<usize>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub ok: bool,
    pub rows_checked: usize,
    pub pairs_checked: usize,
    pub total_violations: usize,
    /// First violations in slot order, capped at [`AUDIT_VIOLATION_CAP`].
    pub violations: Vec<Violation>,
}

pub const AUDIT_VIOLATION_CAP: usize = 100;
pub const AUDIT_REL_TOL: f64 = 1e-9;

fn close(x: f64, y: f64, scale: f64) -> bool {
    (x - y).abs() <= AUDIT_REL_TOL * scale.max(1.0)
}

/// Checks the cumulative identities, the schedule-count identity, sign and
/// monotonicity constraints, slot-level work conservation and the pathwise
/// upper bound on queue growth. Never fails; problems are reported.
pub fn conservation_audit(path: &SystemPath) -> AuditReport {
    let n = path.n_queues;
    let rows = path.taus.len();
    let mut v: Vec<Violation> = Vec::new();
    let push = |v: &mut Vec<Violation>, slot, earlier, check, queue, magnitude| {
        v.push(Violation {
            slot,
            earlier,
            check,
            queue,
            magnitude,
        })
    };
    if rows == 0 {
        return AuditReport {
            ok: true,
            rows_checked: 0,
            pairs_checked: 0,
            total_violations: 0,
            violations: vec![],
        };
    }
    for i in 0..n {
        for (name, m) in [("a_zero_start", &path.a), ("b_zero_start", &path.b), ("y_zero_start", &path.y)] {
            if m[0][i] != 0.0 {
                push(&mut v, path.taus[0], None, name, Some(i), m[0][i].abs());
            }
        }
    }
    if path.s_cum[0].iter().any(|&c| c != 0) {
        push(&mut v, path.taus[0], None, "s_zero_start", None, 1.0);
    }
    let q0 = &path.q[0];
    let multi = !path.routing.is_zero();
    for k in 0..rows {
        let tau = path.taus[k];
        let (q, a, b, y) = (&path.q[k], &path.a[k], &path.b[k], &path.y[k]);
        // Q = Q0 + A − (I − Rᵀ)(B − Y); R = 0 gives the single-hop identity.
        let net: Vec<f64> = (0..n).map(|i| b[i] - y[i]).collect();
        let inflow = if multi { path.routing.apply_transpose(&net) } else { vec![0.0; n] };
        for i in 0..n {
            let rhs = q0[i] + a[i] - net[i] + inflow[i];
            let scale = q0[i].abs() + a[i].abs() + b[i].abs() + y[i].abs() + inflow[i].abs();
            if !close(q[i], rhs, scale) {
                push(&mut v, tau, None, "queue_identity", Some(i), (q[i] - rhs).abs());
            }
            if !(q[i] >= 0.0) {
                push(&mut v, tau, None, "negative_queue", Some(i), -q[i]);
            }
            let bs: f64 = path
                .schedules
                .iter()
                .zip(&path.s_cum[k])
                .map(|(pi, &c)| c as f64 * pi[i])
                .sum();
            if !close(b[i], bs, bs.abs()) {
                push(&mut v, tau, None, "service_identity", Some(i), (b[i] - bs).abs());
            }
        }
        if k + 1 < rows {
            let next = path.taus[k + 1];
            let slots = (next - tau) as u64;
            for i in 0..n {
                if path.y[k + 1][i] < y[i] {
                    push(&mut v, next, Some(tau), "y_monotone", Some(i), y[i] - path.y[k + 1][i]);
                }
                if path.a[k + 1][i] < a[i] {
                    push(&mut v, next, Some(tau), "a_monotone", Some(i), a[i] - path.a[k + 1][i]);
                }
            }
            let mut used = 0u64;
            let mut monotone = true;
            for (s, &c) in path.s_cum[k].iter().enumerate() {
                let c1 = path.s_cum[k + 1][s];
                if c1 < c {
                    monotone = false;
                } else {
                    used += c1 - c;
                }
            }
            if !monotone || used != slots {
                push(&mut v, next, Some(tau), "one_schedule_per_slot", None, (used as f64 - slots as f64).abs());
            }
            if slots == 1 {
                // idling only where the queue could not cover the service
                for i in 0..n {
                    let dy = path.y[k + 1][i] - y[i];
                    let db = path.b[k + 1][i] - b[i];
                    if dy > AUDIT_REL_TOL * db.abs().max(1.0) && q[i] >= db {
                        push(&mut v, tau, None, "work_conservation", Some(i), dy);
                    }
                }
            }
        }
    }
    // Pathwise growth bound on pairs (k, k + 2^j).
    let mut pairs = 0;
    for k in 0..rows {
        let mut step = 1;
        while k + step < rows {
            let j = k + step;
            let db: Vec<f64> = (0..n).map(|m| path.b[j][m] - path.b[k][m]).collect();
            let routed = path.routing.apply_transpose(&db);
            for i in 0..n {
                let rhs = path.q[k][i] + path.a[j][i] - path.a[k][i] + routed[i];
                let scale = path.q[k][i].abs() + path.a[j][i].abs() + path.b[j].iter().map(|x| x.abs()).sum::<f64>();
                if path.q[j][i] > rhs && !close(path.q[j][i], rhs, scale) {
                    push(&mut v, path.taus[j], Some(path.taus[k]), "growth_bound", Some(i), path.q[j][i] - rhs);
                }
            }
            pairs += 1;
            step *= 2;
        }
    }
    v.sort_by_key(|x| (x.slot, x.earlier));
    let total = v.len();
    v.truncate(AUDIT_VIOLATION_CAP);
    AuditReport {
        ok: total == 0,
        rows_checked: rows,
        pairs_checked: pairs,
        total_violations: total,
        violations: v,
    }
}

impl SystemPath {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.n_queues;
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["tau".to_string()];
        for p in ["q", "a", "b", "y"] {
            header.extend((1..=n).map(|i| format!("{p}_{i}")));
        }
        header.push("chosen_schedule".into());
        out.write_record(&header)?;
        for k in 0..self.taus.len() {
            let mut row = vec![self.taus[k].to_string()];
            for m in [&self.q, &self.a, &self.b, &self.y] {
                row.extend(m[k].iter().map(|x| x.to_string()));
            }
            row.push(self.chosen[k].map_or(String::new(), |c| c.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a dense trajectory written by [`SystemPath::write_csv`];
    /// schedule counts are rebuilt from the `chosen_schedule` column.
    pub fn from_csv<R: Read>(r: R, model: &NetworkModel) -> Result<Self> {
        let n = model.n_queues;
        let ns = model.schedules.len();
        let mut rdr = csv::Reader::from_reader(r);
        let width = rdr.headers()?.len();
        if width != 4 * n + 2 {
            return Err(Error::Dimension {
                expected: 4 * n + 2,
                got: width,
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Precondition(format!("bad number {s:?} in trajectory")))
        };
        let mut path = SystemPath {
            n_queues: n,
            schedules: model.schedules.iter().map(<[f64]>::to_vec).collect(),
            routing: model.routing.clone(),
            horizon: 0,
            stride: 1,
            taus: vec![],
            q: vec![],
            a: vec![],
            b: vec![],
            y: vec![],
            s_cum: vec![],
            chosen: vec![],
            max_q: vec![0.0; n],
            max_norm: 0.0,
            meta: PathMeta::default(),
        };
        let mut counts = vec![0u64; ns];
        for rec in rdr.records() {
            let rec = rec?;
            let tau: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::Precondition(format!("bad slot {:?}", &rec[0])))?;
            if let Some(&prev) = path.taus.last() {
                if tau != prev + 1 {
                    return Err(Error::Precondition("trajectory rows must be consecutive slots".into()));
                }
            }
            let mut blocks = Vec::with_capacity(4);
            for b in 0..4 {
                blocks.push(
                    (0..n)
                        .map(|i| parse(&rec[1 + b * n + i]))
                        .collect::<Result<Vec<f64>>>()?,
                );
            }
            let chosen = match rec[4 * n + 1].trim() {
                "" => None,
                s => {
                    let c: usize = s
                        .parse()
                        .map_err(|_| Error::Precondition(format!("bad schedule index {s:?}")))?;
                    if c >= ns {
                        return Err(Error::Precondition(format!("schedule index {c} out of range")));
                    }
                    Some(c)
                }
            };
            for (i, &x) in blocks[0].iter().enumerate() {
                path.max_q[i] = path.max_q[i].max(x);
                path.max_norm = path.max_norm.max(x.abs());
            }
            path.taus.push(tau);
            path.s_cum.push(counts.clone());
            if let Some(c) = chosen {
                counts[c] += 1;
            }
            let mut it = blocks.into_iter();
            path.q.push(it.next().expect("block"));
            path.a.push(it.next().expect("block"));
            path.b.push(it.next().expect("block"));
            path.y.push(it.next().expect("block"));
            path.chosen.push(chosen);
        }
        path.horizon = path.taus.last().copied().unwrap_or(0);
        Ok(path)
    }

    fn interpolate(&self, series: &[Vec<f64>], tau: f64) -> Vec<f64> {
        let k = self.taus.partition_point(|&t| (t as f64) <= tau);
        if k == 0 {
            return series[0].clone();
        }
        if k >= self.taus.len() {
            return series[self.taus.len() - 1].clone();
        }
        let (t0, t1) = (self.taus[k - 1] as f64, self.taus[k] as f64);
        let w = (tau - t0) / (t1 - t0);
        series[k - 1]
            .iter()
            .zip(&series[k])
            .map(|(x0, x1)| x0 + w * (x1 - x0))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "scale")]
pub enum ScaleKind {
    /// `x̄(t) = X(zt)/z`.
    Fluid(f64),
    /// `q̂(t) = Q(r²t)/r`.
    Diffusion(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPath {
    pub kind: ScaleKind,
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    /// Filled for fluid scaling only.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

/// Samples the rescaled path on `points` uniform intervals of `[0, t_max]`.
pub fn rescale(path: &SystemPath, kind: ScaleKind, t_max: f64, points: usize) -> Result<ScaledPath> {
    let (time_factor, value_factor) = match kind {
        ScaleKind::Fluid(z) => (z, z),
        ScaleKind::Diffusion(r) => (r * r, r),
    };
    if !(value_factor >= 1.0) {
        return Err(Error::Precondition("scale must be at least 1".into()));
    }
    let needed = (time_factor * t_max).ceil() as usize;
    if needed > path.horizon {
        return Err(Error::HorizonTooShort {
            needed,
            available: path.horizon,
        });
    }
    let points = points.max(1);
    let t: Vec<f64> = (0..=points).map(|k| t_max * k as f64 / points as f64).collect();
    let view = |series: &[Vec<f64>]| -> Vec<Vec<f64>> {
        t.iter()
            .map(|&s| {
                path.interpolate(series, (s * time_factor).min(path.horizon as f64))
                    .into_iter()
                    .map(|x| x / value_factor)
                    .collect()
            })
            .collect()
    };
    let q = view(&path.q);
    let (a, b, y) = match kind {
        ScaleKind::Fluid(_) => (view(&path.a), view(&path.b), view(&path.y)),
        ScaleKind::Diffusion(_) => (vec![], vec![], vec![]),
    };
    Ok(ScaledPath { kind, t, q, a, b, y })
}
