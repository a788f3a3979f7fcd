//! Executes validated studies and writes their artifacts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use uniform_delta::applications::{
    iv_certificate, mindist_delta_scan, mineq_limit_study, tube_points, weak_iv_family, MineqStudyConfig,
};
use uniform_delta::metrics::MetricConfig;
use uniform_delta::montecarlo::{
    ci_study, cmt_counterexample, sequence_study, BernoulliMean, Chi2Shift, NormalMean, ParamFamily, ParamSeq,
    SimConfig,
};
use uniform_delta::remainder::{
    check_divergence, envelope, reciprocal_certificate, scan_with, square_certificate, BoxSet,
    DivergenceCertificate, DivergenceVerdict, EnvelopeConfig, GridSpec, RemainderField, Rule,
};

use crate::config::{
    CmtStudy, DivergeSpec, DivergeStudy, EnvelopeStudy, Expect, FamilySpec, MindistStudy, MineqStudy, NExpr,
    RunConfig, ScanStudy, SimStudy, Study, StudyBody,
};
use crate::error::{core_exit_code, exit, CliError, Result};
use crate::svg;

/// Final state of one study, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    IoError,
    ConfigError,
    DomainError,
    AssertionFailed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => exit::OK,
            Status::IoError => exit::IO,
            Status::ConfigError => exit::CONFIG,
            Status::DomainError => exit::DOMAIN,
            Status::AssertionFailed => exit::ASSERTION,
        }
    }

    fn from_exit_code(code: i32) -> Status {
        match code {
            exit::OK => Status::Ok,
            exit::IO => Status::IoError,
            exit::DOMAIN => Status::DomainError,
            exit::ASSERTION => Status::AssertionFailed,
            _ => Status::ConfigError,
        }
    }
}

/// Exit code of a batch: the code of its most severe status.
pub fn worst_exit_code(outcomes: &[StudyOutcome]) -> i32 {
    outcomes.iter().map(|o| o.status).max().unwrap_or(Status::Ok).exit_code()
}

/// One bound checked against a study result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub observed: Option<f64>,
    pub bound: f64,
    pub at_least: bool,
    pub passed: bool,
}

impl Check {
    fn new(label: impl Into<String>, observed: Option<f64>, bound: f64, at_least: bool) -> Self {
        let passed = observed.is_some_and(|v| if at_least { v >= bound } else { v <= bound });
        Check {
            label: label.into(),
            observed,
            bound,
            at_least,
            passed,
        }
    }

    fn exact(label: impl Into<String>, observed: f64, target: f64) -> Self {
        Check {
            label: label.into(),
            observed: Some(observed),
            bound: target,
            at_least: true,
            passed: observed == target,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyOutcome {
    pub name: String,
    pub kind: String,
    pub status: Status,
    pub message: Option<String>,
    pub dir: PathBuf,
    /// Study-specific result, also written to `report.json`.
    #[serde(skip)]
    pub result: Value,
    pub checks: Vec<Check>,
}

/// Study result before it is written to disk.
struct Produced {
    result: Value,
    checks: Vec<Check>,
    files: Vec<(&'static str, Vec<u8>)>,
    /// A domain failure that did not stop the study.
    domain_note: Option<String>,
}

impl Produced {
    fn new(result: Value) -> Self {
        Produced {
            result,
            checks: Vec::new(),
            files: Vec::new(),
            domain_note: None,
        }
    }
}

/// Hex SHA-256 of the canonical (sorted-key, compact) JSON form.
pub fn config_hash(v: &Value) -> String {
    let text = serde_json::to_string(v).expect("JSON values serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs every study of `cfg` into `out/<name>/`.
pub fn run_config(cfg: &RunConfig, out: &Path) -> Vec<StudyOutcome> {
    cfg.studies
        .iter()
        .map(|s| {
            let outcome = run_study(s, &out.join(&s.name));
            log_outcome(&outcome);
            outcome
        })
        .collect()
}

/// One line per finished study on stderr.
pub fn log_outcome(o: &StudyOutcome) {
    let msg = o.message.as_deref().map(|m| format!(": {m}")).unwrap_or_default();
    eprintln!("[{}] {} ({}){msg}", o.status, o.name, o.kind);
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::IoError => "io_error",
            Status::ConfigError => "config_error",
            Status::DomainError => "domain_error",
            Status::AssertionFailed => "assertion_failed",
        })
    }
}

/// Runs one study and writes `report.json` plus its tables into `dir`.
pub fn run_study(study: &Study, dir: &Path) -> StudyOutcome {
    let (mut status, mut message, produced) = match execute(study) {
        Ok(p) => {
            let failed: Vec<&str> = p.checks.iter().filter(|c| !c.passed).map(|c| c.label.as_str()).collect();
            if !failed.is_empty() {
                (Status::AssertionFailed, Some(format!("failed checks: {}", failed.join(", "))), p)
            } else if let Some(note) = p.domain_note.clone() {
                (Status::DomainError, Some(note), p)
            } else {
                (Status::Ok, None, p)
            }
        }
        Err(e) => {
            let status = match &e {
                CliError::Core(c) => Status::from_exit_code(core_exit_code(c)),
                other => Status::from_exit_code(other.exit_code()),
            };
            (status, Some(e.to_string()), Produced::new(Value::Null))
        }
    };
    let report = json!({
        "kind": study.kind,
        "name": study.name,
        "seed": study.seed,
        "config_sha256": config_hash(&study.raw),
        "config": study.raw,
        "status": status,
        "message": message,
        "checks": produced.checks,
        "result": produced.result,
    });
    let write = || -> Result<()> {
        for (file, bytes) in &produced.files {
            write_atomic(&dir.join(file), bytes)?;
        }
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        write_atomic(&dir.join("report.json"), text.as_bytes())
    };
    if let Err(e) = write() {
        status = Status::IoError;
        message = Some(e.to_string());
    }
    StudyOutcome {
        name: study.name.clone(),
        kind: study.kind.clone(),
        status,
        message,
        dir: dir.to_path_buf(),
        result: produced.result,
        checks: produced.checks,
    }
}

fn execute(study: &Study) -> Result<Produced> {
    match &study.body {
        StudyBody::Scan(s) => run_scan(s),
        StudyBody::Envelope(s) => run_envelope(s, study.seed),
        StudyBody::Diverge(s) => run_diverge(s),
        StudyBody::Sequence(s) => run_sequence(s, study.seed),
        StudyBody::Coverage(s) => run_coverage(s, study.seed),
        StudyBody::Mineq(s) => run_mineq(s, study.seed),
        StudyBody::Mindist(s) => run_mindist(s),
        StudyBody::Cmt(s) => run_cmt(s),
    }
}

/// Shortest round-trip text; empty for non-finite values.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

/// `null` stands in for non-finite floats.
fn jnum(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn numbered(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

/// `scan.csv` rows `t..., m..., delta, mask`.
pub fn field_csv(field: &RemainderField) -> Result<Vec<u8>> {
    let dt = field.t_points.first().map_or(0, Vec::len);
    let dm = field.m_points.first().map_or(0, Vec::len);
    let mut header = numbered("t", dt);
    header.extend(numbered("m", dm));
    header.push("delta".into());
    header.push("mask".into());
    let (n_t, n_m) = field.shape();
    let mut rows = Vec::with_capacity(n_t * n_m);
    for i_t in 0..n_t {
        for i_m in 0..n_m {
            let (v, mask) = field.get(i_t, i_m);
            let mut r: Vec<String> = field.t_points[i_t].iter().map(|x| num(*x)).collect();
            r.extend(field.m_points[i_m].iter().map(|x| num(*x)));
            r.push(num(v));
            r.push(mask.to_string());
            rows.push(r);
        }
    }
    csv_bytes(&header, &rows)
}

fn field_summary(field: &RemainderField) -> Value {
    use uniform_delta::remainder::CellMask;
    let (n_t, n_m) = field.shape();
    let max = field.max_valid().map(|(v, i, j)| {
        json!({"delta": jnum(v), "t": field.t_points[i], "m": field.m_points[j]})
    });
    json!({
        "t_points": n_t,
        "m_points": n_m,
        "valid": field.valid_count(),
        "outside_domain": field.count(CellMask::OutsideDomain),
        "degenerate": field.count(CellMask::Degenerate),
        "max": max,
    })
}

fn field_outputs(p: &mut Produced, field: &RemainderField, m_labels: &[f64], t_labels: &[f64]) -> Result<()> {
    p.files.push(("scan.csv", field_csv(field)?));
    p.files.push(("heatmap.svg", svg::heatmap(field, m_labels, t_labels, "m", "t").into_bytes()));
    if field.valid_count() == 0 {
        p.domain_note = Some("no (t, m) pair inside the domain".into());
    }
    Ok(())
}

fn run_scan(s: &ScanStudy) -> Result<Produced> {
    let t_grid = GridSpec::new(s.t_axes.clone())?;
    let m_grid = GridSpec::new(s.m_axes.clone())?;
    let field = scan_with(&s.phi, &t_grid, &m_grid, s.jacobian)?;
    let mut p = Produced::new(field_summary(&field));
    field_outputs(
        &mut p,
        &field,
        &svg::coordinate_labels(&field.m_points),
        &svg::coordinate_labels(&field.t_points),
    )?;
    Ok(p)
}

fn run_envelope(s: &EnvelopeStudy, seed: u64) -> Result<Produced> {
    let cfg = EnvelopeConfig {
        box_lo: s.box_lo.clone(),
        box_hi: s.box_hi.clone(),
        eps_list: s.eps.clone(),
        samples_per_eps: s.samples,
        seed,
    };
    let points = envelope(&s.phi, &cfg)?;
    let d = s.phi.d_in();
    let mut header = vec!["eps".to_string(), "delta_hat".into(), "valid_pairs".into()];
    header.extend(numbered("witness_t", d));
    header.extend(numbered("witness_m", d));
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|pt| {
            let mut r = vec![num(pt.eps), num(pt.delta_hat), pt.valid_pairs.to_string()];
            for w in [&pt.witness_t, &pt.witness_m] {
                match w {
                    Some(v) => r.extend(v.iter().map(|x| num(*x))),
                    None => r.extend(std::iter::repeat_n(String::new(), d)),
                }
            }
            r
        })
        .collect();
    let mut p = Produced::new(json!({ "points": points }));
    p.files.push(("table.csv", csv_bytes(&header, &rows)?));
    let (largest, smallest) = (points.first(), points.last());
    if let Some(b) = s.expect_below_at_smallest {
        p.checks.push(Check::new("delta_hat at smallest eps", smallest.map(|x| x.delta_hat), b, false));
    }
    if let Some(b) = s.expect_above_at_largest {
        p.checks.push(Check::new("delta_hat at largest eps", largest.map(|x| x.delta_hat), b, true));
    }
    Ok(p)
}

/// Verdicts of a divergence study; the weak-IV preset is judged against
/// the wider margin `1.5 sqrt(n)`.
pub fn diverge_verdicts(s: &DivergeStudy) -> Result<Vec<Value>> {
    let n_list = s.n_list.clone();
    let (cert, margin): (DivergenceCertificate, Option<f64>) = match &s.spec {
        DivergeSpec::Preset(name) => match name.as_str() {
            "reciprocal" => (reciprocal_certificate(n_list)?, None),
            "square" => (square_certificate(n_list)?, None),
            "iv" => (iv_certificate(n_list)?, Some(1.5)),
            other => return Err(CliError::config("/preset", format!("unknown preset `{other}`"))),
        },
        DivergeSpec::Custom {
            phi,
            m_n,
            eps_n,
            r_n,
            a_lo,
            a_hi,
            ..
        } => {
            let m_n: Vec<NExpr> = m_n.clone();
            let label = m_n.iter().map(|e| e.source.clone()).collect::<Vec<_>>().join(", ");
            (
                DivergenceCertificate::new(
                    phi.clone(),
                    n_rule(r_n),
                    n_rule(eps_n),
                    Rule::new(label, move |n| m_n.iter().map(|e| e.at(n)).collect()),
                    BoxSet::new(a_lo.clone(), a_hi.clone())?,
                    n_list,
                )?,
                None,
            )
        }
    };
    let verdicts = check_divergence(&cert.with_grid(s.grid)?)?;
    Ok(verdicts.into_iter().map(|v| verdict_json(v, margin)).collect())
}

fn verdict_json(v: DivergenceVerdict, margin: Option<f64>) -> Value {
    let mut out = serde_json::to_value(&v).expect("verdicts serialize");
    if let Some(c) = margin {
        let bound = c * (v.n as f64).sqrt();
        let holds = v.violations == 0 && v.min_delta.is_some_and(|d| d >= bound);
        out["margin"] = json!(bound);
        out["holds"] = json!(holds);
    }
    out
}

fn n_rule(e: &NExpr) -> Rule<f64> {
    let e = e.clone();
    Rule::new(e.source.clone(), move |n| e.at(n))
}

fn run_diverge(s: &DivergeStudy) -> Result<Produced> {
    let verdicts = diverge_verdicts(s)?;
    let header: Vec<String> = ["n", "r_n", "eps_n", "min_delta", "holds", "violations", "lattice_points"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for v in &verdicts {
        let n = v["n"].as_u64().unwrap_or(0);
        let min_delta = v["min_delta"].as_f64();
        let holds = v["holds"].as_bool().unwrap_or(false);
        let bound = v.get("margin").and_then(Value::as_f64).or(v["eps_n"].as_f64()).unwrap_or(f64::NAN);
        let mut c = Check::new(format!("certificate at n={n}"), min_delta, bound, true);
        c.passed = holds;
        checks.push(c);
        rows.push(vec![
            n.to_string(),
            opt_num(v["r_n"].as_f64()),
            num(bound),
            opt_num(min_delta),
            holds.to_string(),
            v["violations"].to_string(),
            v["lattice_points"].to_string(),
        ]);
    }
    let mut p = Produced::new(json!({ "verdicts": verdicts }));
    p.files.push(("table.csv", csv_bytes(&header, &rows)?));
    p.checks = checks;
    Ok(p)
}

fn family(spec: &FamilySpec) -> Result<Arc<dyn ParamFamily>> {
    Ok(match spec {
        FamilySpec::Normal(rows) => {
            let d = rows.len();
            Arc::new(NormalMean::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))?)
        }
        FamilySpec::Bernoulli => Arc::new(BernoulliMean),
        FamilySpec::Chi2 => Arc::new(Chi2Shift),
        FamilySpec::WeakIv { beta, rho } => weak_iv_family(*beta, *rho)?,
    })
}

fn sim_setup(s: &SimStudy, seed: u64) -> Result<(ParamSeq, SimConfig)> {
    let theta = s.theta.clone();
    let label = theta.iter().map(|e| e.source.clone()).collect::<Vec<_>>().join(", ");
    let seq = ParamSeq::new(
        family(&s.family)?,
        Rule::new(label, move |n| theta.iter().map(|e| e.at(n)).collect()),
    );
    let cfg = SimConfig {
        master_seed: seed,
        reps: s.reps,
        n_list: s.n_list.clone(),
        r_rule: n_rule(&s.r_n),
        metric: MetricConfig {
            subsample_cap: s.subsample_cap,
            bootstrap: s.bootstrap,
            seed,
        },
    };
    Ok((seq, cfg))
}

/// Checks `expect` bounds on every row whose `n` it selects.
fn expect_checks(expect: &Option<Expect>, rows: &[(u64, Vec<(&str, Option<f64>)>)]) -> Vec<Check> {
    let Some(e) = expect else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let selected: Vec<_> = rows.iter().filter(|(n, _)| e.n.is_none_or(|k| k == *n)).collect();
    if selected.is_empty() {
        if let Some(n) = e.n {
            for (metric, bound, at_least) in &e.bounds {
                out.push(Check::new(format!("{metric} at n={n} (n not simulated)"), None, *bound, *at_least));
            }
        }
        return out;
    }
    for (n, values) in selected {
        for (metric, bound, at_least) in &e.bounds {
            let observed = values.iter().find(|(k, _)| k == metric).and_then(|(_, v)| *v);
            let op = if *at_least { ">=" } else { "<=" };
            out.push(Check::new(format!("{metric} {op} {bound} at n={n}"), observed, *bound, *at_least));
        }
    }
    out
}

fn row_errors<'a>(errors: impl Iterator<Item = (u64, &'a Option<String>)>) -> Option<String> {
    let msgs: Vec<String> = errors.filter_map(|(n, e)| e.as_ref().map(|e| format!("n={n}: {e}"))).collect();
    (!msgs.is_empty()).then(|| msgs.join("; "))
}

fn run_sequence(s: &SimStudy, seed: u64) -> Result<Produced> {
    let (seq, cfg) = sim_setup(s, seed)?;
    let rows = sequence_study(&s.phi, &seq, &cfg)?;
    let d_theta = s.theta.len();
    let mut header = vec!["n".to_string()];
    header.extend(numbered("theta", d_theta));
    header.extend(
        ["r_n", "kept", "rejected", "bl", "bl_stderr", "ks", "ks_stderr", "xn_cdf_at_zero", "limit_cdf_at_zero", "error"]
            .map(String::from),
    );
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.n.to_string()];
            if r.theta.len() == d_theta {
                v.extend(r.theta.iter().map(|x| num(*x)));
            } else {
                v.extend(std::iter::repeat_n(String::new(), d_theta));
            }
            v.extend([
                num(r.r_n),
                r.kept.to_string(),
                r.rejected.to_string(),
                opt_num(r.bl.as_ref().map(|b| b.value)),
                opt_num(r.bl.as_ref().map(|b| b.mc_stderr)),
                opt_num(r.ks.as_ref().map(|b| b.value)),
                opt_num(r.ks.as_ref().map(|b| b.mc_stderr)),
                opt_num(r.xn_cdf_at_zero),
                opt_num(r.limit_cdf_at_zero),
                r.error.clone().unwrap_or_default(),
            ]);
            v
        })
        .collect();
    let values: Vec<(u64, Vec<(&str, Option<f64>)>)> = rows
        .iter()
        .map(|r| {
            (
                r.n,
                vec![
                    ("bl", r.bl.as_ref().map(|b| b.value)),
                    ("ks", r.ks.as_ref().map(|b| b.value)),
                    ("xn_cdf_at_zero", r.xn_cdf_at_zero),
                    ("limit_cdf_at_zero", r.limit_cdf_at_zero),
                ],
            )
        })
        .collect();
    let mut p = Produced::new(json!({ "rows": rows }));
    p.files.push(("table.csv", csv_bytes(&header, &table)?));
    p.checks = expect_checks(&s.expect, &values);
    p.domain_note = row_errors(rows.iter().map(|r| (r.n, &r.error)));
    Ok(p)
}

fn run_coverage(s: &SimStudy, seed: u64) -> Result<Produced> {
    let (seq, cfg) = sim_setup(s, seed)?;
    let rows = ci_study(&s.phi, &seq, &cfg, s.alpha)?;
    let d_theta = s.theta.len();
    let mut header = vec!["n".to_string()];
    header.extend(numbered("theta", d_theta));
    header.extend(["truth", "coverage", "stderr", "band_lo", "band_hi", "intervals", "rejected", "error"].map(String::from));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.n.to_string()];
            if r.theta.len() == d_theta {
                v.extend(r.theta.iter().map(|x| num(*x)));
            } else {
                v.extend(std::iter::repeat_n(String::new(), d_theta));
            }
            let c = r.coverage.as_ref();
            v.extend([
                num(r.truth),
                opt_num(c.map(|c| c.coverage)),
                opt_num(c.map(|c| c.stderr)),
                opt_num(c.map(|c| c.band.0)),
                opt_num(c.map(|c| c.band.1)),
                c.map_or_else(String::new, |c| c.intervals.to_string()),
                r.rejected.to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
            v
        })
        .collect();
    let values: Vec<(u64, Vec<(&str, Option<f64>)>)> = rows
        .iter()
        .map(|r| (r.n, vec![("coverage", r.coverage.as_ref().map(|c| c.coverage))]))
        .collect();
    let result = json!({
        "alpha": s.alpha,
        "rows": rows.iter().map(|r| json!({
            "n": r.n,
            "theta": r.theta,
            "truth": jnum(r.truth),
            "coverage": r.coverage,
            "rejected": r.rejected,
            "error": r.error,
        })).collect::<Vec<_>>(),
    });
    let mut p = Produced::new(result);
    p.files.push(("table.csv", csv_bytes(&header, &table)?));
    p.checks = expect_checks(&s.expect, &values);
    p.domain_note = row_errors(rows.iter().map(|r| (r.n, &r.error)));
    Ok(p)
}

fn run_mineq(s: &MineqStudy, seed: u64) -> Result<Produced> {
    let cfg = MineqStudyConfig {
        reps: s.reps,
        seed,
        drift_exponent: s.drift_exponent,
        fixed_m2: s.fixed_m2,
    };
    let rows = mineq_limit_study(&s.n_list, &cfg)?;
    let header: Vec<String> = ["n", "m1", "m2", "ks", "ks_stderr", "mean_pos_z", "fixed_rem2_nonzero", "mean_n_rem2"]
        .map(String::from)
        .to_vec();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                num(r.m[0]),
                num(r.m[1]),
                num(r.ks_rem2.value),
                num(r.ks_rem2.mc_stderr),
                num(r.mean_pos_z),
                num(r.fixed_rem2_nonzero),
                num(r.mean_n_rem2),
            ]
        })
        .collect();
    let values: Vec<(u64, Vec<(&str, Option<f64>)>)> = rows
        .iter()
        .map(|r| (r.n, vec![("ks", Some(r.ks_rem2.value)), ("mean_pos_z", Some(r.mean_pos_z))]))
        .collect();
    let mut p = Produced::new(json!({ "rows": rows }));
    p.files.push(("table.csv", csv_bytes(&header, &table)?));
    p.checks = expect_checks(&s.expect, &values);
    Ok(p)
}

fn run_mindist(s: &MindistStudy) -> Result<Produced> {
    let m_xs = s.m_x.values();
    let t_xs = s.t_x.values();
    let t_points = tube_points(&s.model, &t_xs, &s.offsets);
    let field = mindist_delta_scan(&s.model, &m_xs, t_points, s.starts)?;
    let t_labels: Vec<f64> = t_xs.iter().flat_map(|x| std::iter::repeat_n(*x, s.offsets.len())).collect();
    let mut summary = field_summary(&field);
    summary["model"] = json!(s.model.name());
    let mut p = Produced::new(summary);
    field_outputs(&mut p, &field, &m_xs, &t_labels)?;
    Ok(p)
}

fn run_cmt(s: &CmtStudy) -> Result<Produced> {
    let rows = cmt_counterexample(&s.n_list, s.theta)?;
    let header: Vec<String> = ["n", "theta", "psi_x", "psi_y", "gap"].map(String::from).to_vec();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.n.to_string(), num(r.theta), num(r.psi_x), num(r.psi_y), num(r.gap)])
        .collect();
    let mut p = Produced::new(json!({ "rows": rows }));
    p.files.push(("table.csv", csv_bytes(&header, &table)?));
    if let Some(g) = s.expect_gap {
        p.checks = rows.iter().map(|r| Check::exact(format!("gap == {g} at n={}", r.n), r.gap, g)).collect();
    }
    Ok(p)
}
