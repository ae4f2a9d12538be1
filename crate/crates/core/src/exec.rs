//! Runs a scenario and writes its outputs.
//!
//! Every JSON output carries a `context` block with λ, the weight function
//! and the policy; every CSV has a `<name>.meta.json` sidecar with the same
//! block. `manifest.json` lists the config hash, seed, version and the
//! SHA-256 of each file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::collapse::iq::{
    alpha_monotonicity_probe, default_workload_grid, fiber_grid, iq2x2_membership, iq2x2_membership_brute,
    matching_structure_checks, Iq2x2Workload,
};
use crate::collapse::{mssc_experiment, MsscConfig};
use crate::error::{Error, Result};
use crate::fluid::{
    drift_formula, feasibility_preservation_check, hitting_time, integrate_fluid, lift_distance_series,
    lyapunov_drift_check, lyapunov_increase,
};
use crate::lift::{invariant_state_test, lift_with, representation_check, LiftOptions, LiftProblem};
use crate::net::WeightFunction;
use crate::plan::rational::{self, Rational};
use crate::plan::{
    classify_load, complete_loading_check, critically_loaded, enumerate_dual_vertices, solve_dual, solve_primal,
    LoadKind,
};
use crate::scenario::{ExperimentSpec, Scenario};
use crate::sim::{conservation_audit, run_with, RunOptions, SystemPath};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PROPERTY: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    /// Written files relative to the output directory, sorted.
    pub files: Vec<String>,
    pub summary: String,
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: vec![],
        })
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), data)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    fn csv(&mut self, name: &str, data: Vec<u8>, context: &Value) -> Result<()> {
        self.bytes(name, &data)?;
        self.json(&format!("{name}.meta.json"), &json!({ "file": name, "context": context }))
    }
}

fn fmt_vec(v: &[Rational]) -> Vec<String> {
    v.iter().map(rational::format).collect()
}

fn fmt_set(v: &[Vec<Rational>]) -> Vec<Vec<String>> {
    v.iter().map(|x| fmt_vec(x)).collect()
}

fn context(s: &Scenario) -> Value {
    json!({
        "model": s.model_label,
        "lambda": s.lambda.as_ref().map(|l| fmt_vec(l)),
        "weight": s.weight.as_ref().map(WeightFunction::label),
        "policy": s.policy.label(),
        "seed": s.seed,
    })
}

fn need_lambda(s: &Scenario) -> Result<&[Rational]> {
    s.lambda
        .as_deref()
        .ok_or_else(|| Error::Precondition("this experiment needs `lambda`".into()))
}

fn need_weight(s: &Scenario) -> Result<&WeightFunction> {
    s.weight
        .as_ref()
        .ok_or_else(|| Error::Precondition("this experiment needs a weight function (`weight` or an MW policy)".into()))
}

/// Runs the scenario into `out`. `command`, when given, must match the
/// experiment kind.
pub fn execute(s: &Scenario, out: &Path, command: Option<&str>) -> Result<Outcome> {
    if let Some(cmd) = command {
        if cmd != s.experiment.name() {
            return Err(Error::Precondition(format!(
                "command `{cmd}` does not match experiment kind `{}`",
                s.experiment.name()
            )));
        }
    }
    let mut w = Writer::new(out)?;
    let (code, summary) = match &s.experiment {
        ExperimentSpec::Analyze {} => analyze(s, &mut w)?,
        ExperimentSpec::Simulate {
            horizon,
            replications,
            stride,
            q0,
            audit_fixture,
        } => simulate(s, &mut w, *horizon, *replications, *stride, q0.as_deref(), audit_fixture.as_deref())?,
        ExperimentSpec::Fluid {
            q0,
            h,
            horizon,
            eps,
            lift_samples,
        } => fluid(s, &mut w, q0, *h, *horizon, *eps, *lift_samples)?,
        ExperimentSpec::Lift { q } => lift_cmd(s, &mut w, q)?,
        ExperimentSpec::Collapse {
            scales,
            horizon,
            replications,
            subsample,
            q_hat0,
            heavy_traffic,
            median_threshold,
        } => {
            let lambda = need_lambda(s)?.to_vec();
            let cfg = MsscConfig {
                model: s.model.clone(),
                policy: s.policy.clone(),
                lambda,
                q_hat0: q_hat0.clone(),
                scales: scales.clone(),
                horizon: *horizon,
                replications: *replications,
                seed: s.seed,
                subsample: *subsample,
                heavy_traffic: heavy_traffic.clone(),
                median_threshold: *median_threshold,
            };
            collapse(s, &mut w, &cfg)?
        }
        ExperimentSpec::Iqcheck {
            alphas,
            sizes,
            closure_samples,
            invariant_samples,
            coverage_alpha,
            brute_points,
        } => iqcheck(
            s,
            &mut w,
            alphas,
            sizes,
            *closure_samples,
            *invariant_samples,
            *coverage_alpha,
            *brute_points,
        )?,
    };
    let mut listed: Vec<Value> = Vec::new();
    let mut names = w.files.clone();
    names.sort();
    for name in &names {
        let data = fs::read(w.dir.join(name))?;
        listed.push(json!({ "file": name, "sha256": hex::encode(Sha256::digest(&data)) }));
    }
    w.json(
        "manifest.json",
        &json!({
            "command": s.experiment.name(),
            "config_sha256": s.config_hash,
            "seed": s.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "exit_code": code,
            "context": context(s),
            "files": listed,
        }),
    )?;
    let mut files = w.files;
    files.sort();
    Ok(Outcome {
        exit_code: code,
        files,
        summary,
    })
}

fn analyze(s: &Scenario, w: &mut Writer) -> Result<(i32, String)> {
    let m = &s.model;
    let vrs = enumerate_dual_vertices(m)?;
    let mut doc = json!({
        "context": context(s),
        "n_queues": m.n_queues,
        "hop_kind": m.hop_kind,
        "monotone_closed": m.monotone_closed,
        "schedules": fmt_set(&m.schedules.iter_exact().map(<[Rational]>::to_vec).collect::<Vec<_>>()),
        "routing": m.routing.pairs(),
        "dual_vertices": fmt_set(&vrs.vertices),
        "virtual_resources": fmt_set(&vrs.maximal),
    });
    let mut summary = format!("{} dual vertices, {} virtual resources", vrs.vertices.len(), vrs.maximal.len());
    if let Some(lambda) = &s.lambda {
        let primal = solve_primal(m, lambda)?;
        let dual = solve_dual(m, lambda)?;
        let class = classify_load(m, lambda)?;
        let crit = critically_loaded(m, lambda, &vrs)?;
        let cl = complete_loading_check(m, &crit);
        doc["load"] = json!({
            "primal_value": rational::format(&primal.value),
            "primal_weights": fmt_vec(&primal.weights),
            "dual_value": rational::format(&dual.value),
            "dual_xi": fmt_vec(&dual.xi),
            "class": class.class,
            "critical_virtual_resources": fmt_set(&crit.xi),
            "critical_vertices": fmt_set(&crit.xi_plus),
            "complete_loading": {
                "holds": cl.holds,
                "target": fmt_vec(&cl.target),
                "weights": cl.weights.as_ref().map(|x| fmt_vec(x)),
            },
        });
        summary.push_str(&format!(", PRIMAL = {}", rational::format(&primal.value)));
    }
    w.json("analysis.json", &doc)?;
    Ok((EXIT_OK, summary))
}

fn path_csv(path: &SystemPath) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    Ok(buf)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    s: &Scenario,
    w: &mut Writer,
    horizon: usize,
    reps: usize,
    stride: usize,
    q0: Option<&[f64]>,
    fixture: Option<&Path>,
) -> Result<(i32, String)> {
    let ctx = context(s);
    if let Some(fx) = fixture {
        let file = fs::File::open(fx)?;
        let path = SystemPath::from_csv(file, &s.model)?;
        let report = conservation_audit(&path);
        w.json(
            "audit.json",
            &json!({ "context": ctx, "fixture": fx.display().to_string(), "audits": [report] }),
        )?;
        let code = if report.ok { EXIT_OK } else { EXIT_PROPERTY };
        return Ok((code, format!("fixture audit: {} violations", report.total_violations)));
    }
    let arrivals = s
        .arrivals
        .as_ref()
        .ok_or_else(|| Error::Precondition("simulate needs `lambda` or `arrivals`".into()))?;
    let zero = vec![0.0; s.model.n_queues];
    let q0 = q0.unwrap_or(&zero);
    let mut audits = Vec::with_capacity(reps);
    for rep in 0..reps {
        let opts = RunOptions {
            horizon,
            seed: s.seed,
            replication: rep as u64,
            stride,
        };
        let mut path = run_with(&s.model, &s.policy, arrivals, q0, &opts)?;
        path.meta.model = s.model_label.clone();
        w.csv(&format!("path_rep{rep}.csv"), path_csv(&path)?, &ctx)?;
        audits.push(conservation_audit(&path));
    }
    let bad: usize = audits.iter().filter(|a| !a.ok).count();
    w.json("audit.json", &json!({ "context": ctx, "audits": audits }))?;
    let code = if bad == 0 { EXIT_OK } else { EXIT_PROPERTY };
    Ok((code, format!("{reps} replications, {bad} failed audits")))
}

fn fluid(
    s: &Scenario,
    w: &mut Writer,
    q0: &[f64],
    h: f64,
    horizon: f64,
    eps: f64,
    samples: usize,
) -> Result<(i32, String)> {
    let m = &s.model;
    let lambda = need_lambda(s)?;
    let weight = need_weight(s)?;
    let lam_f = rational::vec_to_f64(lambda);
    let traj = integrate_fluid(m, &s.policy, &lam_f, q0, h, horizon)?;
    let audit = traj.audit(m);
    let l_increase = lyapunov_increase(&traj, weight);
    let drift = lyapunov_drift_check(m, &lam_f, weight, &traj);
    let vrs = enumerate_dual_vertices(m)?;
    let crit = critically_loaded(m, lambda, &vrs)?;
    let feas = feasibility_preservation_check(m, lambda, &crit.xi, &traj, 1e-6);
    let problem = LiftProblem::new(m, lambda, &crit.xi)?;
    let distances = lift_distance_series(&problem, weight, &traj, samples)?;
    let hit = hitting_time(&distances, eps);

    let n = m.n_queues;
    let mut buf = Vec::new();
    {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q_{i}")));
        header.extend(["L", "drift_formula", "drift_fd", "dist_to_lift"].map(String::from));
        out.write_record(&header)?;
        let mut di = 0;
        for k in 0..traj.len() {
            let t = traj.grid[k];
            let mut row = vec![t.to_string()];
            row.extend(traj.q[k].iter().map(|x| x.to_string()));
            let l: f64 = traj.q[k].iter().map(|&x| weight.antiderivative(x)).sum();
            row.push(l.to_string());
            row.push(drift.points[k].formula.to_string());
            row.push(drift.points[k].finite_difference.map_or(String::new(), |d| d.to_string()));
            if di < distances.len() && distances[di].0 == t {
                row.push(distances[di].1.to_string());
                di += 1;
            } else {
                row.push(String::new());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
    }
    let ctx = context(s);
    w.csv("fluid.csv", buf, &ctx)?;
    let audit_ok = audit <= 1e-9 * (1.0 + horizon);
    let l_ok = l_increase <= 10.0 * h;
    let drift_ok = drift.max_residual <= 0.1;
    let ok = audit_ok && l_ok && drift_ok && feas.holds;
    w.json(
        "fluid.json",
        &json!({
            "context": ctx,
            "h": h,
            "horizon": horizon,
            "q0": q0,
            "initial_drift": drift_formula(m, &lam_f, weight, q0),
            "audit_residual": audit,
            "lyapunov_max_increase": l_increase,
            "drift_max_residual": drift.max_residual,
            "drift_points_checked": drift.checked,
            "feasibility": feas,
            "eps": eps,
            "hitting_time": hit,
            "final_distance_to_lift": distances.last().map(|d| d.1),
            "passed": ok,
        }),
    )?;
    let code = if ok { EXIT_OK } else { EXIT_PROPERTY };
    Ok((code, format!("fluid run to T = {horizon}, hitting time {hit:?}")))
}

fn lift_cmd(s: &Scenario, w: &mut Writer, qs: &[Vec<f64>]) -> Result<(i32, String)> {
    let m = &s.model;
    let lambda = need_lambda(s)?;
    let weight = need_weight(s)?;
    let lam_f = rational::vec_to_f64(lambda);
    let vrs = enumerate_dual_vertices(m)?;
    let crit = critically_loaded(m, lambda, &vrs)?;
    let problem = LiftProblem::new(m, lambda, &crit.xi)?;
    let opts = LiftOptions {
        kkt_tol: s.tolerances.kkt,
        fixed_point_tol: s.tolerances.fixed_point,
        ..LiftOptions::default()
    };
    let mut results = Vec::with_capacity(qs.len());
    let mut ok = true;
    for q in qs {
        let r = lift_with(&problem, weight, q, &opts, None)?;
        let rep = representation_check(m, lambda, &r, q, 1e-6)?;
        let inv = invariant_state_test(m, &lam_f, weight, &r.r_star, s.tolerances.invariant);
        ok &= rep.holds && inv;
        results.push(json!({
            "q": q,
            "r_star": r.r_star,
            "multipliers": r.multipliers,
            "kkt_residual": r.kkt_residual,
            "is_fixed_point": r.is_fixed_point,
            "representation": rep,
            "lift_is_invariant": inv,
        }));
    }
    w.json(
        "lift.json",
        &json!({
            "context": context(s),
            "critical_virtual_resources": fmt_set(&crit.xi),
            "zero_load_caps": problem.cap_queues(),
            "results": results,
        }),
    )?;
    let code = if ok { EXIT_OK } else { EXIT_PROPERTY };
    Ok((code, format!("lifted {} states", qs.len())))
}

fn collapse(s: &Scenario, w: &mut Writer, cfg: &MsscConfig) -> Result<(i32, String)> {
    let class = classify_load(&s.model, &cfg.lambda)?;
    let rep = mssc_experiment(cfg)?;
    let ctx = context(s);
    let mut buf = Vec::new();
    {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        out.write_record(["r", "rep", "ratio"])?;
        for row in &rep.rows {
            out.write_record([row.r.to_string(), row.replication.to_string(), row.ratio.to_string()])?;
        }
        out.flush()?;
    }
    w.csv("mssc.csv", buf, &ctx)?;
    w.json(
        "summary.json",
        &json!({
            "context": ctx,
            "load_class": class.class,
            "horizon": cfg.horizon,
            "replications": cfg.replications,
            "q_hat0": cfg.q_hat0,
            "summary": rep.summary,
            "trivial_lift": rep.trivial_lift,
            "heavy_traffic_probe": rep.heavy_traffic_probe,
            "median_strictly_decreasing": rep.median_strictly_decreasing,
            "median_threshold": rep.median_threshold,
            "meets_threshold": rep.meets_threshold,
            "subsampled_sup_is_lower_bound": true,
        }),
    )?;
    let ok = rep.trivial_lift || class.class != LoadKind::Critical || (rep.median_strictly_decreasing && rep.meets_threshold);
    let last = rep.summary.last().map_or(f64::NAN, |x| x.median);
    let code = if ok { EXIT_OK } else { EXIT_PROPERTY };
    Ok((code, format!("median ratio at largest scale {last:.4}")))
}

#[allow(clippy::too_many_arguments)]
fn iqcheck(
    s: &Scenario,
    w: &mut Writer,
    alphas: &[f64],
    sizes: &[usize],
    closure_samples: usize,
    invariant_samples: usize,
    coverage_alpha: f64,
    brute_points: usize,
) -> Result<(i32, String)> {
    let grid = fiber_grid(10, 6.0);
    let mut disagreements = Vec::new();
    for &a in alphas {
        let d = grid
            .iter()
            .filter(|x| iq2x2_membership(x, a) != iq2x2_membership_brute(x, a, brute_points))
            .count();
        disagreements.push(json!({ "alpha": a, "grid_points": grid.len(), "disagreements": d }));
    }
    let probe = alpha_monotonicity_probe(alphas, &default_workload_grid())?;
    let witness = Iq2x2Workload::new(1.0, 1.0, 5.0)?;
    let witness_flags: Vec<Value> = alphas
        .iter()
        .map(|&a| json!({ "alpha": a, "member": iq2x2_membership(&witness, a) }))
        .collect();
    let mut matchings = Vec::new();
    for &m in sizes {
        matchings.push(matching_structure_checks(m, closure_samples, invariant_samples, coverage_alpha, s.seed)?);
    }
    let membership_ok = disagreements.iter().all(|d| d["disagreements"] == 0);
    let matching_ok = matchings
        .iter()
        .all(|r| r.closure_violations == 0 && r.coverage_violations == 0);
    let ok = membership_ok && probe.passed && matching_ok;
    w.json(
        "iqcheck.json",
        &json!({
            "context": context(s),
            "membership_vs_brute_force": disagreements,
            "alpha_probe": probe,
            "witness": { "w": witness, "membership": witness_flags },
            "matching_checks": matchings,
            "passed": ok,
        }),
    )?;
    let code = if ok { EXIT_OK } else { EXIT_PROPERTY };
    Ok((code, format!("iqcheck {}", if ok { "passed" } else { "found violations" })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario_str;

    fn run(text: &str) -> (Outcome, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let s = parse_scenario_str(text).unwrap();
        (execute(&s, dir.path(), None).unwrap(), dir)
    }

    #[test]
    fn analyze_ex2() {
        let (o, dir) = run(r#"{"preset":"ex2","experiment":{"kind":"analyze"},"lambda":[1,1]}"#);
        assert_eq!(o.exit_code, EXIT_OK);
        let doc: Value = serde_json::from_slice(&fs::read(dir.path().join("analysis.json")).unwrap()).unwrap();
        assert_eq!(doc["virtual_resources"], json!([["0", "1"], ["1/3", "2/3"]]));
        assert_eq!(doc["load"]["class"], "critical");
        assert!(o.files.contains(&"manifest.json".to_string()));
    }

    #[test]
    fn command_mismatch_is_error() {
        let s = parse_scenario_str(r#"{"preset":"ex2","experiment":{"kind":"analyze"}}"#).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(execute(&s, dir.path(), Some("fluid")).is_err());
    }

    #[test]
    fn simulate_and_corrupt_fixture() {
        let (o, dir) = run(
            r#"{"preset":"ex2","lambda":[0.5,1],"arrivals":{"kind":"bernoulli"},"seed":3,
                "experiment":{"kind":"simulate","horizon":50}}"#,
        );
        assert_eq!(o.exit_code, EXIT_OK);
        let csv_path = dir.path().join("path_rep0.csv");
        let text = fs::read_to_string(&csv_path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<String> = lines[10].split(',').map(String::from).collect();
        cells[1] = "999".into();
        lines[10] = cells.join(",");
        let bad = dir.path().join("bad.csv");
        fs::write(&bad, lines.join("\n") + "\n").unwrap();
        let text = format!(
            r#"{{"preset":"ex2","lambda":[0.5,1],"experiment":{{"kind":"simulate","horizon":50,"audit_fixture":{:?}}}}}"#,
            bad.display().to_string()
        );
        let (o, _d) = run(&text);
        assert_eq!(o.exit_code, EXIT_PROPERTY);
    }

    #[test]
    fn lift_and_fluid() {
        let (o, dir) = run(r#"{"preset":"ex2","lambda":[1,1],"experiment":{"kind":"lift","q":[[3,0],[0,3]]}}"#);
        assert_eq!(o.exit_code, EXIT_OK);
        let doc: Value = serde_json::from_slice(&fs::read(dir.path().join("lift.json")).unwrap()).unwrap();
        assert!((doc["results"][0]["r_star"][0].as_f64().unwrap() - 0.6).abs() < 1e-9);
        assert_eq!(doc["context"]["weight"], "x^1");
        let (o, dir) = run(r#"{"preset":"ex2","lambda":[1,1],"experiment":{"kind":"fluid","q0":[1,0],"horizon":3}}"#);
        assert_eq!(o.exit_code, EXIT_OK, "{}", o.summary);
        assert!(dir.path().join("fluid.csv.meta.json").exists());
    }
}
