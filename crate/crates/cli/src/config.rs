//! Run configuration: a JSON document with a `studies` array. Every block is
//! validated up front; errors carry a JSON pointer into the document.

use std::path::PathBuf;

use serde_json::{Map, Value};

use uniform_delta::exprlang::{parse, Expr};
use uniform_delta::funcspace::{builtin, JacobianMode, PhiMap, StepRule};
use uniform_delta::remainder::{Axis, Spacing};

use crate::error::{CliError, Result};

pub const KINDS: [&str; 8] = [
    "scan", "envelope", "diverge", "sequence", "coverage", "mineq", "mindist", "cmt-demo",
];

/// Object view with a pointer for error messages.
#[derive(Clone, Copy)]
pub(crate) struct Ctx<'a> {
    map: &'a Map<String, Value>,
    path: &'a str,
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

impl<'a> Ctx<'a> {
    pub(crate) fn new(v: &'a Value, path: &'a str) -> Result<Self> {
        match v {
            Value::Object(map) => Ok(Ctx { map, path }),
            other => Err(CliError::config(
                display_path(path),
                format!("expected an object, found {}", type_name(other)),
            )),
        }
    }

    fn at(&self, key: &str) -> String {
        format!("{}/{}", self.path, key)
    }

    fn err(&self, key: &str, message: impl Into<String>) -> CliError {
        CliError::config(self.at(key), message)
    }

    fn allow(&self, keys: &[&str]) -> Result<()> {
        for k in self.map.keys() {
            if !keys.contains(&k.as_str()) {
                return Err(self.err(k, format!("unknown key (allowed: {})", keys.join(", "))));
            }
        }
        Ok(())
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn req(&self, key: &str) -> Result<&'a Value> {
        self.map.get(key).ok_or_else(|| self.err(key, "missing required key"))
    }

    fn f64_of(&self, key: &str, v: &Value) -> Result<f64> {
        v.as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.err(key, format!("expected a finite number, found {}", type_name(v))))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.f64_of(key, self.req(key)?)
    }

    fn opt_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.map.get(key).map_or(Ok(default), |v| self.f64_of(key, v))
    }

    fn u64_of(&self, path: String, v: &Value) -> Result<u64> {
        v.as_u64().ok_or_else(|| {
            CliError::config(path, format!("expected a nonnegative integer, found {}", type_name(v)))
        })
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.u64_of(self.at(key), self.req(key)?)
    }

    fn opt_u64(&self, key: &str) -> Result<Option<u64>> {
        self.map.get(key).map(|v| self.u64_of(self.at(key), v)).transpose()
    }

    fn usize_min(&self, key: &str, default: usize, min: usize) -> Result<usize> {
        let v = self.opt_u64(key)?.map_or(default, |v| v as usize);
        if v < min {
            return Err(self.err(key, format!("must be at least {min}, got {v}")));
        }
        Ok(v)
    }

    fn str(&self, key: &str) -> Result<&'a str> {
        let v = self.req(key)?;
        v.as_str()
            .ok_or_else(|| self.err(key, format!("expected a string, found {}", type_name(v))))
    }

    fn opt_str(&self, key: &str) -> Result<Option<&'a str>> {
        if self.has(key) {
            self.str(key).map(Some)
        } else {
            Ok(None)
        }
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>> {
        let v = self.req(key)?;
        v.as_array()
            .ok_or_else(|| self.err(key, format!("expected an array, found {}", type_name(v))))
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let arr = self.array(key)?;
        arr.iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| {
                    CliError::config(format!("{}/{i}", self.at(key)), "expected a finite number")
                })
            })
            .collect()
    }

    /// Strictly increasing positive integers.
    fn n_list(&self, key: &str) -> Result<Vec<u64>> {
        let arr = self.array(key)?;
        if arr.is_empty() {
            return Err(self.err(key, "must not be empty"));
        }
        let out = arr
            .iter()
            .enumerate()
            .map(|(i, v)| self.u64_of(format!("{}/{i}", self.at(key)), v))
            .collect::<Result<Vec<u64>>>()?;
        if out[0] == 0 || out.windows(2).any(|w| w[1] <= w[0]) {
            return Err(self.err(key, "must be positive and strictly increasing"));
        }
        Ok(out)
    }

    fn str_list(&self, key: &str) -> Result<Vec<String>> {
        match self.req(key)? {
            Value::String(s) => Ok(s.split(';').map(|p| p.trim().to_string()).collect()),
            Value::Array(arr) => arr
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_str().map(str::to_string).ok_or_else(|| {
                        CliError::config(format!("{}/{i}", self.at(key)), "expected a string")
                    })
                })
                .collect(),
            other => Err(self.err(key, format!("expected a string or array, found {}", type_name(other)))),
        }
    }

    fn obj(&self, key: &str) -> Result<Ctx<'a>> {
        let v = self.req(key)?;
        match v {
            Value::Object(map) => Ok(Ctx {
                map,
                path: leak(self.at(key)),
            }),
            other => Err(self.err(key, format!("expected an object, found {}", type_name(other)))),
        }
    }
}

/// Error paths live for the whole (short) process.
fn leak(s: String) -> &'static str {
    Box::leak(s.into_boxed_str())
}

fn display_path(path: &str) -> String {
    if path.is_empty() {
        "/".to_string()
    } else {
        path.to_string()
    }
}

/// Map reference inside a study block: `"phi": NAME` or `"expr": [..]`.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiSpec {
    Builtin(String),
    Expr(Vec<String>),
}

impl PhiSpec {
    fn parse(ctx: &Ctx<'_>) -> Result<(PhiSpec, PhiMap)> {
        match (ctx.has("phi"), ctx.has("expr")) {
            (true, true) => Err(ctx.err("expr", "give either `phi` or `expr`, not both")),
            (false, false) => Err(ctx.err("phi", "missing map: give `phi` or `expr`")),
            (true, false) => {
                let name = ctx.str("phi")?;
                let phi = builtin(name).map_err(|e| ctx.err("phi", e.to_string()))?;
                Ok((PhiSpec::Builtin(name.to_string()), phi))
            }
            (false, true) => {
                let parts = ctx.str_list("expr")?;
                let phi = uniform_delta::compile_phi(&parts).map_err(|e| ctx.err("expr", e.to_string()))?;
                Ok((PhiSpec::Expr(parts), phi))
            }
        }
    }
}

/// An expression in the sample size `n`.
#[derive(Debug, Clone)]
pub struct NExpr {
    pub source: String,
    expr: Expr,
}

impl NExpr {
    pub fn parse(source: &str) -> uniform_delta::Result<Self> {
        // identifiers other than `n` are function names
        let mut rewritten = String::with_capacity(source.len() + 4);
        let chars: Vec<char> = source.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_ascii_alphabetic() || chars[i] == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let ident: String = chars[start..i].iter().collect();
                if ident == "n" {
                    rewritten.push_str("t1");
                } else if ident.starts_with('t') && ident[1..].chars().all(|c| c.is_ascii_digit()) && ident.len() > 1 {
                    return Err(uniform_delta::Error::Syntax {
                        offset: start,
                        message: format!("unknown variable `{ident}`; rules depend on `n` only"),
                    });
                } else {
                    rewritten.push_str(&ident);
                }
            } else {
                rewritten.push(chars[i]);
                i += 1;
            }
        }
        Ok(NExpr {
            source: source.to_string(),
            expr: parse(&rewritten)?,
        })
    }

    pub fn at(&self, n: f64) -> f64 {
        self.expr.eval(&[n])
    }
}

fn n_expr(ctx: &Ctx<'_>, key: &str, source: &str, n_list: &[u64]) -> Result<NExpr> {
    let e = NExpr::parse(source).map_err(|e| ctx.err(key, e.to_string()))?;
    for &n in n_list {
        if !e.at(n as f64).is_finite() {
            return Err(ctx.err(key, format!("`{source}` is not finite at n = {n}")));
        }
    }
    Ok(e)
}

fn n_expr_list(ctx: &Ctx<'_>, key: &str, n_list: &[u64]) -> Result<Vec<NExpr>> {
    ctx.str_list(key)?
        .iter()
        .map(|s| n_expr(ctx, key, s, n_list))
        .collect()
}

fn parse_axes(ctx: &Ctx<'_>, key: &str, count: usize, spacing: Spacing) -> Result<Vec<Axis>> {
    let arr = ctx.array(key)?;
    let ranges: Vec<&Value> = if arr.first().is_some_and(Value::is_number) {
        vec![ctx.req(key)?]
    } else {
        arr.iter().collect()
    };
    if ranges.is_empty() {
        return Err(ctx.err(key, "needs at least one [lo, hi] range"));
    }
    ranges
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let path = if ranges.len() == 1 && arr.first().is_some_and(Value::is_number) {
                ctx.at(key)
            } else {
                format!("{}/{i}", ctx.at(key))
            };
            let pair = r
                .as_array()
                .filter(|a| a.len() == 2)
                .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
                .ok_or_else(|| CliError::config(path.clone(), "expected [lo, hi]"))?;
            Axis::new(pair.0, pair.1, count, spacing).map_err(|e| CliError::config(path, e.to_string()))
        })
        .collect()
}

fn jacobian_mode(ctx: &Ctx<'_>) -> Result<JacobianMode> {
    match ctx.opt_str("jacobian")?.unwrap_or("auto") {
        "auto" => Ok(JacobianMode::Auto),
        "fd" => Ok(JacobianMode::FiniteDifference(StepRule::CbrtEps)),
        other => Err(ctx.err("jacobian", format!("expected `auto` or `fd`, got `{other}`"))),
    }
}

#[derive(Debug, Clone)]
pub struct ScanStudy {
    pub phi_spec: PhiSpec,
    pub phi: PhiMap,
    pub t_axes: Vec<Axis>,
    pub m_axes: Vec<Axis>,
    pub jacobian: JacobianMode,
}

#[derive(Debug, Clone)]
pub struct EnvelopeStudy {
    pub phi_spec: PhiSpec,
    pub phi: PhiMap,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub eps: Vec<f64>,
    pub samples: usize,
    pub expect_below_at_smallest: Option<f64>,
    pub expect_above_at_largest: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum DivergeSpec {
    Preset(String),
    Custom {
        phi_spec: PhiSpec,
        phi: PhiMap,
        m_n: Vec<NExpr>,
        eps_n: NExpr,
        r_n: NExpr,
        a_lo: Vec<f64>,
        a_hi: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct DivergeStudy {
    pub spec: DivergeSpec,
    pub n_list: Vec<u64>,
    pub grid: usize,
}

pub const DIVERGE_PRESETS: [&str; 3] = ["reciprocal", "square", "iv"];

#[derive(Debug, Clone, PartialEq)]
pub enum FamilySpec {
    Normal(Vec<Vec<f64>>),
    Bernoulli,
    Chi2,
    WeakIv { beta: f64, rho: f64 },
}

/// Bounds checked on every selected row of a study table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expect {
    pub n: Option<u64>,
    pub bounds: Vec<(String, f64, bool)>,
}

impl Expect {
    /// `(metric, at_least)` pairs accepted under `expect`.
    fn parse(ctx: &Ctx<'_>, metrics: &[&str]) -> Result<Option<Expect>> {
        if !ctx.has("expect") {
            return Ok(None);
        }
        let e = ctx.obj("expect")?;
        let mut allowed = vec!["n"];
        let names: Vec<String> = metrics
            .iter()
            .flat_map(|m| [format!("{m}_min"), format!("{m}_max")])
            .collect();
        allowed.extend(names.iter().map(String::as_str));
        e.allow(&allowed)?;
        let mut bounds = Vec::new();
        for m in metrics {
            for (suffix, at_least) in [("min", true), ("max", false)] {
                let key = format!("{m}_{suffix}");
                if e.has(&key) {
                    bounds.push((m.to_string(), e.f64(&key)?, at_least));
                }
            }
        }
        Ok(Some(Expect {
            n: e.opt_u64("n")?,
            bounds,
        }))
    }
}

#[derive(Debug, Clone)]
pub struct SimStudy {
    pub phi_spec: PhiSpec,
    pub phi: PhiMap,
    pub family: FamilySpec,
    pub theta: Vec<NExpr>,
    pub n_list: Vec<u64>,
    pub reps: usize,
    pub r_n: NExpr,
    pub subsample_cap: usize,
    pub bootstrap: usize,
    pub alpha: f64,
    pub expect: Option<Expect>,
}

#[derive(Debug, Clone)]
pub struct MineqStudy {
    pub n_list: Vec<u64>,
    pub reps: usize,
    pub drift_exponent: f64,
    pub fixed_m2: f64,
    pub expect: Option<Expect>,
}

#[derive(Debug, Clone)]
pub struct MindistStudy {
    pub model: uniform_delta::applications::MinDistModel,
    pub m_x: Axis,
    pub t_x: Axis,
    pub offsets: Vec<f64>,
    pub starts: usize,
}

#[derive(Debug, Clone)]
pub struct CmtStudy {
    pub n_list: Vec<u64>,
    pub theta: Option<f64>,
    pub expect_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum StudyBody {
    Scan(ScanStudy),
    Envelope(EnvelopeStudy),
    Diverge(DivergeStudy),
    Sequence(SimStudy),
    Coverage(SimStudy),
    Mineq(MineqStudy),
    Mindist(MindistStudy),
    Cmt(CmtStudy),
}

#[derive(Debug, Clone)]
pub struct Study {
    pub name: String,
    pub kind: String,
    pub seed: u64,
    /// The block as written, hashed into every report.
    pub raw: Value,
    pub body: StudyBody,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub studies: Vec<Study>,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| CliError::config("/", format!("invalid JSON: {e}")))?;
        Self::from_value(&doc)
    }

    pub fn from_value(doc: &Value) -> Result<Self> {
        let top = Ctx::new(doc, "")?;
        top.allow(&["master_seed", "output_dir", "studies"])?;
        let master_seed = top.opt_u64("master_seed")?.unwrap_or(0);
        let output_dir = top.opt_str("output_dir")?.map(PathBuf::from);
        let blocks = top.array("studies")?;
        if blocks.is_empty() {
            return Err(CliError::config("/studies", "must contain at least one study"));
        }
        let mut studies = Vec::with_capacity(blocks.len());
        for (i, block) in blocks.iter().enumerate() {
            let path = leak(format!("/studies/{i}"));
            let study = parse_study(block, path, i, master_seed)?;
            if studies.iter().any(|s: &Study| s.name == study.name) {
                return Err(CliError::config(format!("{path}/name"), format!("duplicate study name `{}`", study.name)));
            }
            studies.push(study);
        }
        Ok(RunConfig {
            master_seed,
            output_dir,
            studies,
        })
    }
}

fn parse_study(block: &Value, path: &'static str, index: usize, master_seed: u64) -> Result<Study> {
    let ctx = Ctx::new(block, path)?;
    let kind = ctx.str("kind")?;
    if !KINDS.contains(&kind) {
        return Err(ctx.err("kind", format!("unknown kind `{kind}` (expected one of {})", KINDS.join(", "))));
    }
    let name = match ctx.opt_str("name")? {
        Some(n) => {
            if n.is_empty() || !n.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(ctx.err("name", "use letters, digits, `-` and `_` only"));
            }
            n.to_string()
        }
        None => format!("{kind}-{index}"),
    };
    let seed = ctx
        .opt_u64("seed")?
        .unwrap_or_else(|| uniform_delta::rng::derive_seed(master_seed, &[index as u64]));
    const COMMON: [&str; 3] = ["kind", "name", "seed"];
    let allow = |extra: &[&str]| {
        let keys: Vec<&str> = COMMON.iter().chain(extra).copied().collect();
        ctx.allow(&keys)
    };
    let body = match kind {
        "scan" => {
            allow(&["phi", "expr", "t_range", "m_range", "grid", "spacing", "jacobian"])?;
            let (phi_spec, phi) = PhiSpec::parse(&ctx)?;
            let grid = ctx.usize_min("grid", 100, 2)?;
            let spacing = match ctx.opt_str("spacing")?.unwrap_or("linear") {
                "linear" => Spacing::Linear,
                "log" => Spacing::Log,
                other => return Err(ctx.err("spacing", format!("expected `linear` or `log`, got `{other}`"))),
            };
            let t_axes = parse_axes(&ctx, "t_range", grid, spacing)?;
            let m_axes = parse_axes(&ctx, "m_range", grid, spacing)?;
            for (key, axes) in [("t_range", &t_axes), ("m_range", &m_axes)] {
                if axes.len() != phi.d_in() {
                    return Err(ctx.err(key, format!("needs {} range(s) for this map", phi.d_in())));
                }
            }
            StudyBody::Scan(ScanStudy {
                phi_spec,
                phi,
                t_axes,
                m_axes,
                jacobian: jacobian_mode(&ctx)?,
            })
        }
        "envelope" => {
            allow(&["phi", "expr", "box_lo", "box_hi", "eps", "samples", "expect"])?;
            let (phi_spec, phi) = PhiSpec::parse(&ctx)?;
            let box_lo = ctx.f64_list("box_lo")?;
            let box_hi = ctx.f64_list("box_hi")?;
            if box_lo.len() != phi.d_in() || box_hi.len() != phi.d_in() {
                return Err(ctx.err("box_lo", format!("box must be {}-dimensional", phi.d_in())));
            }
            if box_lo.iter().zip(&box_hi).any(|(l, h)| l > h) {
                return Err(ctx.err("box_hi", "needs box_lo <= box_hi"));
            }
            let eps = ctx.f64_list("eps")?;
            if eps.is_empty() || eps.iter().any(|e| *e <= 0.0) || eps.windows(2).any(|w| w[1] >= w[0]) {
                return Err(ctx.err("eps", "must be positive and strictly decreasing"));
            }
            let (mut below, mut above) = (None, None);
            if ctx.has("expect") {
                let e = ctx.obj("expect")?;
                e.allow(&["smallest_eps_max", "largest_eps_min"])?;
                below = e.has("smallest_eps_max").then(|| e.f64("smallest_eps_max")).transpose()?;
                above = e.has("largest_eps_min").then(|| e.f64("largest_eps_min")).transpose()?;
            }
            StudyBody::Envelope(EnvelopeStudy {
                phi_spec,
                phi,
                box_lo,
                box_hi,
                eps,
                samples: ctx.usize_min("samples", 4000, 1)?,
                expect_below_at_smallest: below,
                expect_above_at_largest: above,
            })
        }
        "diverge" => {
            allow(&["preset", "phi", "expr", "m_n", "eps_n", "r_n", "a_lo", "a_hi", "n", "grid"])?;
            let n_list = ctx.n_list("n")?;
            let grid = ctx.usize_min("grid", uniform_delta::remainder::DEFAULT_LATTICE, 1)?;
            let spec = if let Some(p) = ctx.opt_str("preset")? {
                if !DIVERGE_PRESETS.contains(&p) {
                    return Err(ctx.err("preset", format!("unknown preset `{p}` (expected one of {})", DIVERGE_PRESETS.join(", "))));
                }
                for key in ["phi", "expr", "m_n", "eps_n", "r_n", "a_lo", "a_hi"] {
                    if ctx.has(key) {
                        return Err(ctx.err(key, "not allowed together with `preset`"));
                    }
                }
                DivergeSpec::Preset(p.to_string())
            } else {
                let (phi_spec, phi) = PhiSpec::parse(&ctx)?;
                let m_n = n_expr_list(&ctx, "m_n", &n_list)?;
                if m_n.len() != phi.d_in() {
                    return Err(ctx.err("m_n", format!("needs {} component(s)", phi.d_in())));
                }
                let eps_n = n_expr(&ctx, "eps_n", ctx.str("eps_n")?, &n_list)?;
                let r_n = n_expr(&ctx, "r_n", ctx.opt_str("r_n")?.unwrap_or("sqrt(n)"), &n_list)?;
                let a_lo = ctx.f64_list("a_lo")?;
                let a_hi = ctx.f64_list("a_hi")?;
                if a_lo.len() != phi.d_in() || a_hi.len() != phi.d_in() {
                    return Err(ctx.err("a_lo", format!("set A must be {}-dimensional", phi.d_in())));
                }
                uniform_delta::remainder::BoxSet::new(a_lo.clone(), a_hi.clone())
                    .map_err(|e| ctx.err("a_hi", e.to_string()))?;
                DivergeSpec::Custom {
                    phi_spec,
                    phi,
                    m_n,
                    eps_n,
                    r_n,
                    a_lo,
                    a_hi,
                }
            };
            StudyBody::Diverge(DivergeStudy { spec, n_list, grid })
        }
        "sequence" | "coverage" => {
            let mut keys = vec!["phi", "expr", "family", "theta", "n", "reps", "r_n", "subsample_cap", "bootstrap", "expect"];
            if kind == "coverage" {
                keys.push("alpha");
            }
            allow(&keys)?;
            let (phi_spec, phi) = PhiSpec::parse(&ctx)?;
            let n_list = ctx.n_list("n")?;
            let family = parse_family(&ctx, phi.d_in())?;
            let theta = n_expr_list(&ctx, "theta", &n_list)?;
            let theta_dim = match &family {
                FamilySpec::Normal(s) => s.len(),
                _ => 1,
            };
            if theta.len() != theta_dim {
                return Err(ctx.err("theta", format!("family expects {theta_dim} parameter component(s)")));
            }
            let alpha = ctx.opt_f64("alpha", 0.05)?;
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(ctx.err("alpha", "must lie in (0, 1)"));
            }
            if kind == "coverage" && phi.d_out() != 1 {
                let key = if ctx.has("expr") { "expr" } else { "phi" };
                return Err(ctx.err(key, "coverage needs a scalar map"));
            }
            let metrics: &[&str] = if kind == "coverage" {
                &["coverage"]
            } else {
                &["bl", "ks", "xn_cdf_at_zero", "limit_cdf_at_zero"]
            };
            let study = SimStudy {
                phi_spec,
                phi,
                family,
                theta,
                reps: ctx.usize_min("reps", 100_000, 2)?,
                r_n: n_expr(&ctx, "r_n", ctx.opt_str("r_n")?.unwrap_or("sqrt(n)"), &n_list)?,
                n_list,
                subsample_cap: ctx.usize_min("subsample_cap", uniform_delta::metrics::DEFAULT_SUBSAMPLE_CAP, 2)?,
                bootstrap: ctx.usize_min("bootstrap", uniform_delta::metrics::DEFAULT_BOOTSTRAP, 0)?,
                alpha,
                expect: Expect::parse(&ctx, metrics)?,
            };
            if kind == "coverage" {
                StudyBody::Coverage(study)
            } else {
                StudyBody::Sequence(study)
            }
        }
        "mineq" => {
            allow(&["n", "reps", "drift_exponent", "fixed_m2", "expect"])?;
            let drift_exponent = ctx.opt_f64("drift_exponent", 0.5)?;
            if drift_exponent <= 0.0 {
                return Err(ctx.err("drift_exponent", "must be positive"));
            }
            StudyBody::Mineq(MineqStudy {
                n_list: ctx.n_list("n")?,
                reps: ctx.usize_min("reps", 100_000, 2)?,
                drift_exponent,
                fixed_m2: ctx.opt_f64("fixed_m2", 1.0)?,
                expect: Expect::parse(&ctx, &["ks", "mean_pos_z"])?,
            })
        }
        "mindist" => {
            allow(&["model", "x_range", "m_x", "t_x", "offsets", "starts"])?;
            use uniform_delta::applications::MinDistModel;
            let mut model = MinDistModel::by_name(ctx.str("model")?).map_err(|e| ctx.err("model", e.to_string()))?;
            if ctx.has("x_range") {
                let r = ctx.f64_list("x_range")?;
                if r.len() != 2 {
                    return Err(ctx.err("x_range", "expected [lo, hi]"));
                }
                model = model.with_range(r[0], r[1]).map_err(|e| ctx.err("x_range", e.to_string()))?;
            }
            let axis = |key: &str| -> Result<Axis> {
                let o = ctx.obj(key)?;
                o.allow(&["lo", "hi", "count"])?;
                Axis::linear(o.f64("lo")?, o.f64("hi")?, o.u64("count")? as usize)
                    .map_err(|e| ctx.err(key, e.to_string()))
            };
            let m_x = axis("m_x")?;
            let t_x = if ctx.has("t_x") { axis("t_x")? } else { m_x.clone() };
            let offsets = ctx.f64_list("offsets")?;
            if offsets.is_empty() {
                return Err(ctx.err("offsets", "must not be empty"));
            }
            StudyBody::Mindist(MindistStudy {
                model,
                m_x,
                t_x,
                offsets,
                starts: ctx.usize_min("starts", uniform_delta::applications::DEFAULT_STARTS, 3)?,
            })
        }
        "cmt-demo" => {
            allow(&["n", "theta", "expect_gap"])?;
            let theta = ctx.has("theta").then(|| ctx.f64("theta")).transpose()?;
            if theta.is_some_and(|t| t <= 0.0) {
                return Err(ctx.err("theta", "must be positive"));
            }
            StudyBody::Cmt(CmtStudy {
                n_list: ctx.n_list("n")?,
                theta,
                expect_gap: ctx.has("expect_gap").then(|| ctx.f64("expect_gap")).transpose()?,
            })
        }
        _ => unreachable!(),
    };
    Ok(Study {
        name,
        kind: kind.to_string(),
        seed,
        raw: block.clone(),
        body,
    })
}

fn parse_family(ctx: &Ctx<'_>, d_in: usize) -> Result<FamilySpec> {
    let f = ctx.obj("family")?;
    let kind = f.str("kind")?;
    let spec = match kind {
        "normal" => {
            f.allow(&["kind", "sigma"])?;
            let sigma = if f.has("sigma") {
                let rows = f.array("sigma")?;
                rows.iter()
                    .enumerate()
                    .map(|(i, r)| {
                        r.as_array()
                            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                            .ok_or_else(|| CliError::config(format!("{}/{i}", f.at("sigma")), "expected a row of numbers"))
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()?
            } else {
                (0..d_in)
                    .map(|i| (0..d_in).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                    .collect()
            };
            if sigma.len() != d_in || sigma.iter().any(|r| r.len() != d_in) {
                return Err(f.err("sigma", format!("expected a {d_in}x{d_in} matrix")));
            }
            let m = nalgebra::DMatrix::from_fn(d_in, d_in, |i, j| sigma[i][j]);
            uniform_delta::montecarlo::psd_sqrt(&m).map_err(|e| f.err("sigma", e.to_string()))?;
            FamilySpec::Normal(sigma)
        }
        "bernoulli" | "chi2" => {
            f.allow(&["kind"])?;
            if d_in != 1 {
                return Err(f.err("kind", format!("`{kind}` family is one-dimensional, map needs {d_in}")));
            }
            if kind == "chi2" {
                FamilySpec::Chi2
            } else {
                FamilySpec::Bernoulli
            }
        }
        "weak_iv" => {
            f.allow(&["kind", "beta", "rho"])?;
            if d_in != 2 {
                return Err(f.err("kind", "`weak_iv` family produces 2-dimensional means"));
            }
            let beta = f.opt_f64("beta", 1.0)?;
            let rho = f.opt_f64("rho", 0.5)?;
            if rho.abs() >= 1.0 {
                return Err(f.err("rho", "needs |rho| < 1"));
            }
            FamilySpec::WeakIv { beta, rho }
        }
        other => {
            return Err(f.err(
                "kind",
                format!("unknown family `{other}` (expected normal, bernoulli, chi2, weak_iv)"),
            ))
        }
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn err_path(v: Value) -> String {
        match RunConfig::from_value(&v) {
            Err(CliError::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn n_expressions() {
        let e = NExpr::parse("1/sqrt(n) + 1/n").unwrap();
        assert!((e.at(100.0) - 0.11).abs() < 1e-15);
        assert!(NExpr::parse("t1 + n").is_err());
        assert_eq!(NExpr::parse("min(n, 3)").unwrap().at(10.0), 3.0);
    }

    #[test]
    fn pointers_into_the_document() {
        assert_eq!(err_path(json!({"studies": []})), "/studies");
        assert_eq!(err_path(json!({"studies": [{"kind": "nope"}]})), "/studies/0/kind");
        assert_eq!(
            err_path(json!({"studies": [{"kind": "scan", "phi": "reciprocal", "t_range": [0.1, 1], "m_range": [0.1, 1], "grid": 1}]})),
            "/studies/0/grid"
        );
        assert_eq!(
            err_path(json!({"studies": [{"kind": "cmt-demo", "n": [1]}, {"kind": "diverge", "preset": "x", "n": [10]}]})),
            "/studies/1/preset"
        );
        assert_eq!(
            err_path(json!({"studies": [{"kind": "sequence", "phi": "reciprocal", "family": {"kind": "normal", "sigma": [[-1]]}, "theta": ["1"], "n": [10]}]})),
            "/studies/0/family/sigma"
        );
        assert_eq!(
            err_path(json!({"studies": [{"kind": "scan", "expr": "t1 +", "t_range": [0, 1], "m_range": [0, 1]}]})),
            "/studies/0/expr"
        );
        assert_eq!(err_path(json!({"studies": [{"kind": "cmt-demo", "n": [10, 5]}]})), "/studies/0/n");
        assert_eq!(err_path(json!({"studies": [{"kind": "cmt-demo", "n": [1], "bogus": 1}]})), "/studies/0/bogus");
    }

    #[test]
    fn defaults_and_names() {
        let cfg = RunConfig::from_value(&json!({
            "master_seed": 5,
            "studies": [{"kind": "cmt-demo", "n": [1, 2]}, {"kind": "cmt-demo", "name": "again", "n": [3]}]
        }))
        .unwrap();
        assert_eq!(cfg.studies[0].name, "cmt-demo-0");
        assert_eq!(cfg.studies[1].name, "again");
        assert_ne!(cfg.studies[0].seed, cfg.studies[1].seed);
    }
}
