//! TOML scenario files: validating parser and canonical serializer.

use super::scenario::*;
use crate::bounds::BoundKind;
use crate::coefficients::{AdvectionModel, DiffusionModel, Models, Nonlinearity, ScalarExpr};
use crate::geometry::{unit_from_degrees, BranchSpec, DomainSpec, MaskedGrid, WidthProfile};
use crate::solver::{Facing, Scheme, SimConfig};
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use toml::{Table, Value};

/// One validation problem with its location in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub section: String,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        write!(f, "[{}]", self.section)?;
        if let Some(k) = &self.key {
            write!(f, " {k}")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Every issue found in a config, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", lines.join("\n"))
    }
}

impl std::error::Error for ConfigError {}

const SECTIONS: [&str; 14] = [
    "scenario",
    "reaction",
    "diffusion",
    "advection",
    "domain",
    "branch",
    "grid",
    "time",
    "initial",
    "diagnostics",
    "expect",
    "sweep",
    "waves",
    "bounds",
];

/// Line numbers of section headers and keys, found by scanning the raw text.
struct Locator {
    headers: BTreeMap<(String, usize), usize>,
    keys: BTreeMap<(String, usize, String), usize>,
}

impl Locator {
    fn new(text: &str) -> Self {
        let mut headers = BTreeMap::new();
        let mut keys = BTreeMap::new();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut current = (String::new(), 0);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix("[[") {
                let name = rest.split("]]").next().unwrap_or("").trim().to_string();
                let n = counts.entry(name.clone()).or_insert(0);
                current = (name, *n);
                *n += 1;
                headers.insert(current.clone(), i + 1);
            } else if let Some(rest) = line.strip_prefix('[') {
                let name = rest.split(']').next().unwrap_or("").trim().to_string();
                current = (name, 0);
                headers.insert(current.clone(), i + 1);
            } else if let Some((k, _)) = line.split_once('=') {
                if !line.starts_with('#') {
                    let k = k.trim().trim_matches('"').to_string();
                    keys.entry((current.0.clone(), current.1, k)).or_insert(i + 1);
                }
            }
        }
        Self { headers, keys }
    }

    fn find(&self, section: &str, occ: usize, key: Option<&str>) -> Option<usize> {
        key.and_then(|k| self.keys.get(&(section.to_string(), occ, k.to_string())).copied())
            .or_else(|| self.headers.get(&(section.to_string(), occ)).copied())
    }
}

struct Ctx {
    loc: Locator,
    issues: Vec<ConfigIssue>,
}

impl Ctx {
    fn issue(&mut self, section: &str, occ: usize, key: Option<&str>, message: impl Into<String>) {
        let label = if section == "branch" { format!("branch {}", occ + 1) } else { section.to_string() };
        self.issues.push(ConfigIssue {
            line: self.loc.find(section, occ, key),
            section: label,
            key: key.map(str::to_string),
            message: message.into(),
        });
    }
}

/// Typed access to one section that remembers which keys were read.
struct Sec<'a> {
    name: &'static str,
    occ: usize,
    table: Option<&'a Table>,
    used: Vec<String>,
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

impl<'a> Sec<'a> {
    fn new(name: &'static str, occ: usize, table: Option<&'a Table>) -> Self {
        Self { name, occ, table, used: Vec::new() }
    }

    fn present(&self) -> bool {
        self.table.is_some()
    }

    fn get(&mut self, key: &str) -> Option<&'a Value> {
        self.used.push(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn has(&self, key: &str) -> bool {
        self.table.is_some_and(|t| t.contains_key(key))
    }

    fn bad(&self, cx: &mut Ctx, key: &str, msg: impl Into<String>) {
        cx.issue(self.name, self.occ, Some(key), msg);
    }

    fn num(&mut self, cx: &mut Ctx, key: &str) -> Option<f64> {
        let v = self.get(key)?;
        match as_number(v) {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.bad(cx, key, "expected a finite number");
                None
            }
        }
    }

    fn required(&mut self, cx: &mut Ctx, key: &str) -> Option<f64> {
        if !self.has(key) {
            self.bad(cx, key, "missing required key");
            self.used.push(key.to_string());
            return None;
        }
        self.num(cx, key)
    }

    fn positive(&mut self, cx: &mut Ctx, key: &str, required: bool) -> Option<f64> {
        let v = if required { self.required(cx, key) } else { self.num(cx, key) }?;
        if v > 0.0 {
            Some(v)
        } else {
            self.bad(cx, key, format!("must be positive, got {v}"));
            None
        }
    }

    fn string(&mut self, cx: &mut Ctx, key: &str) -> Option<&'a str> {
        match self.get(key)? {
            Value::String(s) => Some(s.as_str()),
            _ => {
                self.bad(cx, key, "expected a string");
                None
            }
        }
    }

    fn boolean(&mut self, cx: &mut Ctx, key: &str, default: bool) -> bool {
        match self.get(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.bad(cx, key, "expected true or false");
                default
            }
        }
    }

    fn count(&mut self, cx: &mut Ctx, key: &str) -> Option<usize> {
        match self.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            _ => {
                self.bad(cx, key, "expected a nonnegative integer");
                None
            }
        }
    }

    /// 1-based branch number converted to an index.
    fn branch(&mut self, cx: &mut Ctx, key: &str) -> Option<usize> {
        match self.get(key)? {
            Value::Integer(i) if *i >= 1 => Some(*i as usize - 1),
            _ => {
                self.bad(cx, key, "expected a branch number (1, 2, ...)");
                None
            }
        }
    }

    fn branches(&mut self, cx: &mut Ctx, key: &str) -> Vec<usize> {
        match self.get(key) {
            None => Vec::new(),
            Some(Value::Array(a)) => {
                let out: Option<Vec<usize>> = a
                    .iter()
                    .map(|v| match v {
                        Value::Integer(i) if *i >= 1 => Some(*i as usize - 1),
                        _ => None,
                    })
                    .collect();
                out.unwrap_or_else(|| {
                    self.bad(cx, key, "expected a list of branch numbers");
                    Vec::new()
                })
            }
            Some(_) => {
                self.bad(cx, key, "expected a list of branch numbers");
                Vec::new()
            }
        }
    }

    fn numbers(&mut self, cx: &mut Ctx, key: &str) -> Option<Vec<f64>> {
        let v = self.get(key)?;
        let out = match v {
            Value::Array(a) => a.iter().map(|x| as_number(x).filter(|x| x.is_finite())).collect(),
            _ => None,
        };
        if out.is_none() {
            self.bad(cx, key, "expected a list of numbers");
        }
        out
    }

    fn fixed(&mut self, cx: &mut Ctx, key: &str, n: usize) -> Option<Vec<f64>> {
        let v = self.numbers(cx, key)?;
        if v.len() == n {
            Some(v)
        } else {
            self.bad(cx, key, format!("expected {n} numbers, got {}", v.len()));
            None
        }
    }

    fn pair(&mut self, cx: &mut Ctx, key: &str) -> Option<(f64, f64)> {
        self.fixed(cx, key, 2).map(|v| (v[0], v[1]))
    }

    fn pairs(&mut self, cx: &mut Ctx, key: &str) -> Option<Vec<[f64; 2]>> {
        let v = self.get(key)?;
        let out = match v {
            Value::Array(a) => a
                .iter()
                .map(|row| match row {
                    Value::Array(r) if r.len() == 2 => {
                        let x = as_number(&r[0]).filter(|x| x.is_finite())?;
                        let y = as_number(&r[1]).filter(|y| y.is_finite())?;
                        Some([x, y])
                    }
                    _ => None,
                })
                .collect(),
            _ => None,
        };
        if out.is_none() {
            self.bad(cx, key, "expected a list of [number, number] pairs");
        }
        out
    }

    fn expr(&mut self, cx: &mut Ctx, key: &str, default: f64) -> Option<ScalarExpr> {
        let v = self.get(key);
        match v {
            None => Some(ScalarExpr::Const(default)),
            Some(Value::String(s)) => match ScalarExpr::parse(s) {
                Ok(e) => Some(e),
                Err(e) => {
                    self.bad(cx, key, e.to_string());
                    None
                }
            },
            Some(v) => match as_number(v) {
                Some(x) if x.is_finite() => Some(ScalarExpr::Const(x)),
                _ => {
                    self.bad(cx, key, "expected a number or an expression string");
                    None
                }
            },
        }
    }

    fn finish(self, cx: &mut Ctx) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.used.iter().any(|u| u == k) {
                    cx.issue(self.name, self.occ, Some(k), "unknown key");
                }
            }
        }
    }
}

fn facing_name(f: Facing) -> &'static str {
    match f {
        Facing::Inward => "inward",
        Facing::Outward => "outward",
    }
}

fn parse_facing(s: &str) -> Option<Facing> {
    match s {
        "inward" => Some(Facing::Inward),
        "outward" => Some(Facing::Outward),
        _ => None,
    }
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Explicit => "explicit",
        Scheme::Imex => "imex",
    }
}

/// Rough planar speed and 0.01-level front width for the travel-budget check.
fn travel_estimates(models: &Models) -> (f64, f64) {
    let theta = models.reaction.theta();
    let (rho_min, rho_max) = models.reaction.modulation_bounds();
    let beta2 = models.diffusion.beta2();
    let c = (1.0 - 2.0 * theta) * std::f64::consts::FRAC_1_SQRT_2 * (rho_max * beta2).sqrt()
        + models.advection.sup_norm();
    let width = std::f64::consts::SQRT_2 * 99f64.ln() * (beta2 / rho_min).sqrt();
    (c, width)
}

/// Parses and validates a scenario, collecting every problem found.
pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let table: Table = match text.parse() {
        Ok(t) => t,
        Err(e) => {
            let e: toml::de::Error = e;
            let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
            return Err(ConfigError {
                issues: vec![ConfigIssue {
                    line,
                    section: "file".into(),
                    key: None,
                    message: e.message().to_string(),
                }],
            });
        }
    };
    let mut cx = Ctx { loc: Locator::new(text), issues: Vec::new() };
    for k in table.keys() {
        if !SECTIONS.contains(&k.as_str()) {
            cx.issue(k, 0, None, "unknown section");
        }
    }
    let section = |cx: &mut Ctx, name: &'static str| -> Option<&Table> {
        match table.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                cx.issue(name, 0, None, "expected a [section]");
                None
            }
        }
    };

    let mut sc = Sec::new("scenario", 0, section(&mut cx, "scenario"));
    if !sc.present() {
        cx.issue("scenario", 0, None, "missing section");
    }
    let name = sc.string(&mut cx, "name").map(str::to_string);
    if name.is_none() && sc.present() && !sc.has("name") {
        sc.bad(&mut cx, "name", "missing required key");
    }
    if let Some(n) = &name {
        if n.is_empty() || !n.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_') {
            sc.bad(&mut cx, "name", "use lowercase letters, digits, '-' and '_'");
        }
    }
    let task = match sc.string(&mut cx, "task") {
        None => Some(Task::Simulate),
        Some(t) => {
            let parsed = Task::parse(t);
            if parsed.is_none() {
                sc.bad(&mut cx, "task", format!("unknown task '{t}'; use simulate, sweep, wave-table or verify-bounds"));
            }
            parsed
        }
    };
    sc.finish(&mut cx);
    let task_v = task.unwrap_or(Task::Simulate);

    let models = parse_models(&mut cx, &section);
    let (domain, h, grid) = parse_domain(&mut cx, &table, &section, task_v);
    let sim = parse_time(&mut cx, &section, task_v, grid.as_ref(), models.as_ref());
    let initial = parse_initial(&mut cx, &section, task_v);
    let diagnostics = parse_diagnostics(&mut cx, &section);
    let expect = parse_expect(&mut cx, &section);
    let sweep = parse_sweep(&mut cx, &section, task_v);
    let waves = parse_waves(&mut cx, &section, task_v);
    let needs_bounds = task_v == Task::VerifyBounds || matches!(initial, Some(InitialRecipe::Bound { .. }));
    let bounds = parse_bounds(&mut cx, &section, needs_bounds);

    if let Some(d) = &domain {
        check_references(&mut cx, d, initial.as_ref(), &diagnostics, sweep.as_ref(), bounds.as_ref());
        if let (Some(m), Some(s), Some(init)) = (&models, &sim, &initial) {
            check_travel(&mut cx, d, m, s, init, &diagnostics);
        }
    }
    if diagnostics.bound_ordering && !matches!(initial, Some(InitialRecipe::Bound { .. })) {
        cx.issue("diagnostics", 0, Some("bound_ordering"), "needs initial kind = \"bound\"");
    }

    if !cx.issues.is_empty() {
        cx.issues.sort_by_key(|i| i.line.unwrap_or(usize::MAX));
        return Err(ConfigError { issues: cx.issues });
    }
    Ok(Scenario {
        name: name.expect("checked"),
        task: task_v,
        models: models.expect("checked"),
        domain,
        h,
        sim,
        initial,
        diagnostics,
        expect,
        sweep,
        waves,
        bounds,
    })
}

type SectionFn<'t> = dyn Fn(&mut Ctx, &'static str) -> Option<&'t Table> + 't;

fn parse_models<'t>(cx: &mut Ctx, section: &SectionFn<'t>) -> Option<Models> {
    let mut r = Sec::new("reaction", 0, section(cx, "reaction"));
    if !r.present() {
        cx.issue("reaction", 0, None, "missing section");
    }
    let theta = if r.present() { r.required(cx, "theta") } else { None };
    if let Some(t) = theta {
        if !(t > 0.0 && t < 1.0) {
            r.bad(cx, "theta", format!("threshold outside (0,1): {t}"));
        }
    }
    let rho = r.expr(cx, "rho", 1.0);
    let reaction = match (theta, rho) {
        (Some(t), Some(rho)) if t > 0.0 && t < 1.0 => match Nonlinearity::modulated(t, rho) {
            Ok(nl) => Some(nl),
            Err(e) => {
                r.bad(cx, "rho", e.to_string());
                None
            }
        },
        _ => None,
    };
    r.finish(cx);

    let mut d = Sec::new("diffusion", 0, section(cx, "diffusion"));
    let (a1, a2) = (d.expr(cx, "a1", 1.0), d.expr(cx, "a2", 1.0));
    let diffusion = match (a1, a2) {
        (Some(a1), Some(a2)) => match DiffusionModel::new(a1, a2) {
            Ok(m) => Some(m),
            Err(e) => {
                cx.issue("diffusion", 0, None, e.to_string());
                None
            }
        },
        _ => None,
    };
    d.finish(cx);

    let mut a = Sec::new("advection", 0, section(cx, "advection"));
    let (q1, q2) = (a.expr(cx, "q1", 0.0), a.expr(cx, "q2", 0.0));
    a.finish(cx);
    Some(Models { reaction: reaction?, diffusion: diffusion?, advection: AdvectionModel::new(q1?, q2?) })
}

fn parse_width(cx: &mut Ctx, b: &mut Sec) -> Option<WidthProfile> {
    let given: Vec<&str> = ["width", "width_tanh", "width_table"].into_iter().filter(|k| b.has(k)).collect();
    if given.len() != 1 {
        cx.issue("branch", b.occ, None, "give exactly one of width, width_tanh, width_table");
        for k in ["width", "width_tanh", "width_table"] {
            b.used.push(k.to_string());
        }
        return None;
    }
    let w = match given[0] {
        "width" => WidthProfile::Constant(b.positive(cx, "width", true)?),
        "width_tanh" => {
            let v = b.fixed(cx, "width_tanh", 3)?;
            WidthProfile::Tanh { w0: v[0], winf: v[1], ell: v[2] }
        }
        _ => {
            let rows = b.pairs(cx, "width_table")?;
            WidthProfile::Table { s: rows.iter().map(|r| r[0]).collect(), w: rows.iter().map(|r| r[1]).collect() }
        }
    };
    Some(w)
}

fn parse_domain<'t>(
    cx: &mut Ctx,
    table: &Table,
    section: &SectionFn<'t>,
    task: Task,
) -> (Option<DomainSpec>, Option<f64>, Option<MaskedGrid>) {
    let mut d = Sec::new("domain", 0, section(cx, "domain"));
    let wanted = task != Task::WaveTable;
    if wanted && !d.present() {
        cx.issue("domain", 0, None, "missing section");
    }
    let radius = if d.present() { d.positive(cx, "junction_radius", true) } else { None };
    let polygon = d.pairs(cx, "polygon");
    let domain_present = d.present();
    d.finish(cx);

    let raw_branches: Vec<Option<&Table>> = match table.get("branch") {
        None => Vec::new(),
        Some(Value::Array(a)) => a
            .iter()
            .map(|v| match v {
                Value::Table(t) => Some(t),
                _ => None,
            })
            .collect(),
        Some(_) => {
            cx.issue("branch", 0, None, "use [[branch]] tables");
            Vec::new()
        }
    };
    if wanted && domain_present && raw_branches.is_empty() {
        cx.issue("domain", 0, None, "no [[branch]] tables");
    }
    let mut branches = Vec::new();
    let mut ok = true;
    for (i, t) in raw_branches.iter().enumerate() {
        let mut b = Sec::new("branch", i, *t);
        let direction = match (b.has("angle"), b.has("direction")) {
            (true, false) => b.num(cx, "angle").map(unit_from_degrees),
            (false, true) => b.fixed(cx, "direction", 2).and_then(|v| {
                if (v[0].hypot(v[1]) - 1.0).abs() <= 1e-9 {
                    Some([v[0], v[1]])
                } else {
                    b.bad(cx, "direction", "must be a unit vector");
                    None
                }
            }),
            _ => {
                cx.issue("branch", i, None, "give exactly one of angle, direction");
                b.used.extend(["angle".to_string(), "direction".to_string()]);
                None
            }
        };
        let shift = match b.has("shift") {
            true => b.pair(cx, "shift").map(|(x, y)| [x, y]),
            false => Some([0.0, 0.0]),
        };
        let length = b.positive(cx, "length", true);
        let width = parse_width(cx, &mut b);
        b.finish(cx);
        match (direction, shift, length, width) {
            (Some(dir), Some(sh), Some(len), Some(w)) => branches.push(BranchSpec::new(dir, sh, w, len)),
            _ => ok = false,
        }
    }
    let domain = match (radius, ok && !branches.is_empty()) {
        (Some(l), true) => match DomainSpec::new(l, branches, polygon) {
            Ok(d) => Some(d),
            Err(e) => {
                cx.issue("domain", 0, None, e.to_string());
                None
            }
        },
        _ => None,
    };

    let mut g = Sec::new("grid", 0, section(cx, "grid"));
    let h = match (&domain, g.has("h")) {
        (_, true) => g.positive(cx, "h", true),
        (Some(d), false) => Some(d.min_width() / 10.0),
        (None, false) => None,
    };
    g.finish(cx);
    let grid = match (&domain, h, task.needs_run()) {
        (Some(d), Some(h), true) => match MaskedGrid::build(d, h) {
            Ok(g) => Some(g),
            Err(e) => {
                cx.issue("grid", 0, Some("h"), e.to_string());
                None
            }
        },
        _ => None,
    };
    (domain, h.filter(|_| wanted), grid)
}

fn parse_time<'t>(
    cx: &mut Ctx,
    section: &SectionFn<'t>,
    task: Task,
    grid: Option<&MaskedGrid>,
    models: Option<&Models>,
) -> Option<SimConfig> {
    let mut s = Sec::new("time", 0, section(cx, "time"));
    if !s.present() {
        if task.needs_run() {
            cx.issue("time", 0, None, "missing section");
        }
        return None;
    }
    let t_end = s.required(cx, "t_end");
    if let Some(t) = t_end {
        if t < 0.0 {
            s.bad(cx, "t_end", "must be nonnegative");
        }
    }
    let scheme = match s.string(cx, "scheme") {
        None => Some(Scheme::Explicit),
        Some("explicit") => Some(Scheme::Explicit),
        Some("imex") => Some(Scheme::Imex),
        Some(o) => {
            s.bad(cx, "scheme", format!("unknown scheme '{o}'; use explicit or imex"));
            None
        }
    };
    let dt = if s.has("dt") { s.positive(cx, "dt", true).map(Some) } else { Some(None) };
    let output_every = s.num(cx, "output_every").unwrap_or(1.0);
    if output_every < 0.0 {
        s.bad(cx, "output_every", "must be nonnegative");
    }
    let tol_ss = s.positive(cx, "tol_ss", false).unwrap_or(1e-6);
    let lin_tol = s.positive(cx, "lin_tol", false).unwrap_or(1e-13);
    s.finish(cx);
    let (t_end, scheme, dt) = (t_end.filter(|t| *t >= 0.0)?, scheme?, dt?);
    let (grid, models) = (grid?, models?);
    let mut cfg = SimConfig::with_default_dt(grid, models, scheme, t_end);
    if let Some(dt) = dt {
        cfg.dt = dt;
    }
    cfg.output_every = output_every.max(0.0);
    cfg.tol_ss = tol_ss;
    cfg.lin_tol = lin_tol;
    if let Err(e) = cfg.validate(grid, models) {
        cx.issue("time", 0, Some("dt"), e.to_string());
        return None;
    }
    Some(cfg)
}

fn parse_initial<'t>(cx: &mut Ctx, section: &SectionFn<'t>, task: Task) -> Option<InitialRecipe> {
    let mut s = Sec::new("initial", 0, section(cx, "initial"));
    if !s.present() {
        if task.needs_run() {
            cx.issue("initial", 0, None, "missing section");
        }
        return None;
    }
    let kind = s.string(cx, "kind");
    if kind.is_none() && !s.has("kind") {
        s.bad(cx, "kind", "missing required key");
    }
    let recipe = initial_recipe(cx, &mut s, kind);
    s.finish(cx);
    recipe
}

fn initial_recipe(cx: &mut Ctx, s: &mut Sec, kind: Option<&str>) -> Option<InitialRecipe> {
    let level = |s: &mut Sec, cx: &mut Ctx, key: &str, default: f64| {
        let v = s.num(cx, key).unwrap_or(default);
        if !(0.0..=1.0).contains(&v) {
            s.bad(cx, key, "must lie in [0, 1]");
            return None;
        }
        Some(v)
    };
    match kind {
        None => None,
        Some("front") => {
            let branch = s.branch(cx, "branch");
            let position = s.required(cx, "position");
            let facing = match s.string(cx, "facing") {
                None => Some(Facing::Inward),
                Some(f) => parse_facing(f).or_else(|| {
                    s.bad(cx, "facing", "use inward or outward");
                    None
                }),
            };
            if !s.has("branch") {
                s.bad(cx, "branch", "missing required key");
            }
            Some(InitialRecipe::Front { branch: branch?, position: position?, facing: facing? })
        }
        Some("emanation") => {
            let branch = s.branch(cx, "branch");
            if !s.has("branch") {
                s.bad(cx, "branch", "missing required key");
            }
            let position = s.required(cx, "position");
            let amp = s.positive(cx, "amp", true);
            let rate = s.positive(cx, "rate", true);
            Some(InitialRecipe::Emanation { branch: branch?, position: position?, amp: amp?, rate: rate? })
        }
        Some("block") => {
            let branch = s.branch(cx, "branch");
            if !s.has("branch") {
                s.bad(cx, "branch", "missing required key");
            }
            let range = if s.has("range") { s.pair(cx, "range") } else {
                s.bad(cx, "range", "missing required key");
                None
            };
            let lv = level(s, cx, "level", 1.0);
            let fl = level(s, cx, "floor", 0.0);
            Some(InitialRecipe::Block { branch: branch?, range: range?, level: lv?, floor: fl? })
        }
        Some("plateau") => {
            let cuts = s.pairs(cx, "cuts");
            if !s.has("cuts") {
                s.bad(cx, "cuts", "missing required key");
            }
            let cuts = cuts.and_then(|rows| {
                let ok = rows.iter().all(|r| r[0] >= 1.0 && r[0].fract() == 0.0);
                if !ok {
                    s.bad(cx, "cuts", "each row is [branch number, axial cut]");
                }
                ok.then(|| rows.iter().map(|r| (r[0] as usize - 1, r[1])).collect::<Vec<_>>())
            });
            let lv = level(s, cx, "level", 1.0);
            let fl = level(s, cx, "floor", 0.0);
            Some(InitialRecipe::Plateau { cuts: cuts?, level: lv?, floor: fl? })
        }
        Some("constant") => {
            let lv = level(s, cx, "level", 0.0);
            Some(InitialRecipe::Constant { level: lv? })
        }
        Some("bound") => {
            let kind = s.string(cx, "bound").and_then(|k| {
                BoundKind::parse(k).or_else(|| {
                    s.bad(cx, "bound", format!("unknown bound kind '{k}'"));
                    None
                })
            });
            if !s.has("bound") {
                s.bad(cx, "bound", "missing required key");
            }
            let time = s.required(cx, "time");
            Some(InitialRecipe::Bound { kind: kind?, time: time? })
        }
        Some(o) => {
            s.bad(cx, "kind", format!("unknown kind '{o}'; use front, emanation, block, plateau, constant or bound"));
            None
        }
    }
}

fn parse_diagnostics<'t>(cx: &mut Ctx, section: &SectionFn<'t>) -> DiagnosticPlan {
    let mut s = Sec::new("diagnostics", 0, section(cx, "diagnostics"));
    let mut p = DiagnosticPlan::default();
    p.snapshot_every = s.count(cx, "snapshot_every").unwrap_or(0);
    p.speed_branches = s.branches(cx, "speed_branches");
    p.speed_window = s.pair(cx, "speed_window");
    if !p.speed_branches.is_empty() && p.speed_window.is_none() && !s.has("speed_window") {
        s.bad(cx, "speed_window", "required with speed_branches");
    }
    if let Some((a, b)) = p.speed_window {
        if !(a < b) {
            s.bad(cx, "speed_window", "start must precede end");
        }
    }
    p.distance_branches = s.branches(cx, "distance_branches");
    if let Some(f) = s.string(cx, "distance_facing") {
        match parse_facing(f) {
            Some(f) => p.distance_facing = f,
            None => s.bad(cx, "distance_facing", "use inward or outward"),
        }
    }
    p.certify_eps = s.numbers(cx, "certify_eps").unwrap_or_default();
    if p.certify_eps.iter().any(|e| !(*e > 0.0 && *e <= 0.5)) {
        s.bad(cx, "certify_eps", "levels must lie in (0, 0.5]");
    }
    p.certify_from = s.num(cx, "certify_from").unwrap_or(0.0);
    p.monotone = s.boolean(cx, "monotone", false);
    p.blocking_eps = s.positive(cx, "blocking_eps", false);
    p.bound_ordering = s.boolean(cx, "bound_ordering", false);
    s.finish(cx);
    p
}

fn parse_expect<'t>(cx: &mut Ctx, section: &SectionFn<'t>) -> Expectations {
    let mut s = Sec::new("expect", 0, section(cx, "expect"));
    let mut e = Expectations::default();
    e.invariant_tol = s.positive(cx, "invariant_tol", false).unwrap_or(e.invariant_tol);
    e.monotone_tol = s.positive(cx, "monotone_tol", false);
    e.speed_rel_tol = s.positive(cx, "speed_rel_tol", false);
    e.speed_r2_min = s.num(cx, "speed_r2_min");
    e.distance_max = s.positive(cx, "distance_max", false);
    e.certify_slack = s.boolean(cx, "certify_slack", false);
    e.shift_agreement = s.boolean(cx, "shift_agreement", false);
    e.ordering_tol = s.positive(cx, "ordering_tol", false);
    e.sweep_monotone = s.boolean(cx, "sweep_monotone", false);
    e.sweep_min_invaded = s.count(cx, "sweep_min_invaded");
    e.sweep_stability_tol = s.positive(cx, "sweep_stability_tol", false);
    e.wave_speed_tol = s.positive(cx, "wave_speed_tol", false);
    e.wave_zero_tol = s.positive(cx, "wave_zero_tol", false);
    e.residuals = s.boolean(cx, "residuals", false);
    e.weight = s.boolean(cx, "weight", false);
    s.finish(cx);
    e
}

fn parse_sweep<'t>(cx: &mut Ctx, section: &SectionFn<'t>, task: Task) -> Option<SweepPlan> {
    let mut s = Sec::new("sweep", 0, section(cx, "sweep"));
    if !s.present() {
        if task == Task::Sweep {
            cx.issue("sweep", 0, None, "missing section");
        }
        return None;
    }
    let branch = s.branch(cx, "branch");
    if !s.has("branch") {
        s.bad(cx, "branch", "missing required key");
    }
    let parameter = match s.string(cx, "parameter") {
        Some("chamber-ratio") => {
            let neck = if s.has("neck") { s.pair(cx, "neck") } else {
                s.bad(cx, "neck", "missing required key");
                None
            };
            if let Some((a, b)) = neck {
                if !(0.0 <= a && a < b) {
                    s.bad(cx, "neck", "need 0 <= start < end");
                }
            }
            neck.zip(branch).map(|(neck, branch)| SweepParameter::ChamberRatio { branch, neck })
        }
        Some("theta") => Some(SweepParameter::Theta),
        Some(o) => {
            s.bad(cx, "parameter", format!("unknown parameter '{o}'; use chamber-ratio or theta"));
            None
        }
        None => {
            s.bad(cx, "parameter", "missing required key");
            None
        }
    };
    let values = s.numbers(cx, "values");
    match &values {
        None if !s.has("values") => s.bad(cx, "values", "missing required key"),
        Some(v) if v.is_empty() => s.bad(cx, "values", "list is empty"),
        Some(v) if v.windows(2).any(|w| !(w[0] < w[1])) => s.bad(cx, "values", "values must increase"),
        Some(v) => match parameter {
            Some(SweepParameter::ChamberRatio { .. }) if v.iter().any(|r| !(*r >= 1.0)) => {
                s.bad(cx, "values", "ratios must be at least 1")
            }
            Some(SweepParameter::Theta) if v.iter().any(|t| !(*t > 0.0 && *t < 1.0)) => {
                s.bad(cx, "values", "threshold outside (0,1)")
            }
            _ => {}
        },
        None => {}
    }
    s.finish(cx);
    Some(SweepPlan { parameter: parameter?, values: values?, branch: branch? })
}

fn parse_waves<'t>(cx: &mut Ctx, section: &SectionFn<'t>, task: Task) -> Option<WavePlan> {
    let mut s = Sec::new("waves", 0, section(cx, "waves"));
    if !s.present() {
        if task == Task::WaveTable {
            cx.issue("waves", 0, None, "missing section");
        }
        return None;
    }
    let thetas = s.numbers(cx, "thetas");
    match &thetas {
        None if !s.has("thetas") => s.bad(cx, "thetas", "missing required key"),
        Some(v) if v.is_empty() => s.bad(cx, "thetas", "list is empty"),
        Some(v) if v.iter().any(|t| !(*t > 0.0 && *t < 1.0)) => s.bad(cx, "thetas", "threshold outside (0,1)"),
        _ => {}
    }
    s.finish(cx);
    Some(WavePlan { thetas: thetas? })
}

fn parse_bounds<'t>(cx: &mut Ctx, section: &SectionFn<'t>, needed: bool) -> Option<BoundPlan> {
    let mut s = Sec::new("bounds", 0, section(cx, "bounds"));
    if !s.present() {
        if needed {
            cx.issue("bounds", 0, None, "missing section");
        }
        return None;
    }
    let branch = if s.has("branch") { s.branch(cx, "branch") } else { Some(0) };
    let kinds: Option<Vec<BoundKind>> = match s.get("kinds") {
        None => Some(Vec::new()),
        Some(Value::Array(a)) => {
            let parsed: Option<Vec<BoundKind>> =
                a.iter().map(|v| v.as_str().and_then(BoundKind::parse)).collect();
            if parsed.is_none() {
                let names: Vec<&str> = BoundKind::ALL.iter().map(|k| k.name()).collect();
                s.bad(cx, "kinds", format!("expected a list of bound kinds: {}", names.join(", ")));
            }
            parsed
        }
        Some(_) => {
            s.bad(cx, "kinds", "expected a list of bound kinds");
            None
        }
    };
    let delta_factor = s.num(cx, "delta_factor").unwrap_or(0.9);
    if !(delta_factor > 0.0 && delta_factor <= 1.0) {
        s.bad(cx, "delta_factor", "must lie in (0, 1]");
    }
    let samples = match s.get("samples") {
        None => Some((120, 20)),
        Some(Value::Array(a)) if a.len() == 2 => match (&a[0], &a[1]) {
            (Value::Integer(n), Value::Integer(m)) if *n >= 1 && *m >= 1 => Some((*n as usize, *m as usize)),
            _ => None,
        },
        Some(_) => None,
    };
    if samples.is_none() {
        s.bad(cx, "samples", "expected [points, times] with positive integers");
    }
    let span = s.positive(cx, "span", false).unwrap_or(20.0);
    let slab = s.pair(cx, "slab");
    if let Some((_, r)) = slab {
        if !(r > 0.0) {
            s.bad(cx, "slab", "half width must be positive");
        }
    }
    let anchor_time = s.num(cx, "anchor_time").unwrap_or(0.0);
    let residual_mode = match s.string(cx, "residual") {
        None | Some("auto") => Some(ResidualMode::Auto),
        Some("differences") => Some(ResidualMode::Differences),
        Some(o) => {
            s.bad(cx, "residual", format!("unknown residual mode '{o}'; use auto or differences"));
            None
        }
    };
    s.finish(cx);
    Some(BoundPlan {
        branch: branch?,
        kinds: kinds?,
        delta_factor,
        samples: samples?,
        span,
        slab,
        anchor_time,
        residual_mode: residual_mode?,
    })
}

fn check_references(
    cx: &mut Ctx,
    d: &DomainSpec,
    initial: Option<&InitialRecipe>,
    diag: &DiagnosticPlan,
    sweep: Option<&SweepPlan>,
    bounds: Option<&BoundPlan>,
) {
    let m = d.branches.len();
    let check = |cx: &mut Ctx, section: &str, key: &str, list: &[usize]| {
        if let Some(b) = list.iter().find(|b| **b >= m) {
            cx.issue(section, 0, Some(key), format!("branch {} does not exist (domain has {m})", b + 1));
        }
    };
    if let Some(init) = initial {
        let key = if matches!(init, InitialRecipe::Plateau { .. }) { "cuts" } else { "branch" };
        check(cx, "initial", key, &init.branches());
    }
    check(cx, "diagnostics", "speed_branches", &diag.speed_branches);
    check(cx, "diagnostics", "distance_branches", &diag.distance_branches);
    if let Some(s) = sweep {
        check(cx, "sweep", "branch", &[s.branch]);
    }
    if let Some(b) = bounds {
        check(cx, "bounds", "branch", &[b.branch]);
    }
}

/// A tracked front must stay a 0.01-width away from the far wall of every
/// branch it can reach by `t_end`.
fn check_travel(cx: &mut Ctx, d: &DomainSpec, models: &Models, sim: &SimConfig, init: &InitialRecipe, diag: &DiagnosticPlan) {
    if diag.speed_branches.is_empty() && diag.distance_branches.is_empty() {
        return;
    }
    let (b, s0, facing) = match *init {
        InitialRecipe::Front { branch, position, facing } => (branch, position, facing),
        InitialRecipe::Emanation { branch, position, .. } => (branch, position, Facing::Inward),
        _ => return,
    };
    if b >= d.branches.len() {
        return;
    }
    let (c, width) = travel_estimates(models);
    let travel = c.abs() * sim.t_end;
    let toward_junction = (facing == Facing::Inward) == (c > 0.0);
    let mut need = |k: usize, required: f64| {
        if d.branches[k].length < required {
            cx.issue(
                "time",
                0,
                Some("t_end"),
                format!(
                    "branch {} is too short for t_end = {}: the front needs length {required:.3} (travel {travel:.3} plus width {width:.3})",
                    k + 1,
                    sim.t_end
                ),
            );
        }
    };
    if toward_junction {
        let beyond = travel - s0 + width;
        if travel > s0 {
            let tracked: Vec<usize> =
                diag.speed_branches.iter().chain(&diag.distance_branches).copied().filter(|k| *k != b).collect();
            for k in tracked {
                if k < d.branches.len() {
                    need(k, beyond);
                }
            }
        }
    } else {
        need(b, s0 + travel + width);
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| num(*x)).collect();
    format!("[{}]", parts.join(", "))
}

fn pair_list(rows: &[[f64; 2]]) -> String {
    let parts: Vec<String> = rows.iter().map(|r| list(r)).collect();
    format!("[{}]", parts.join(", "))
}

fn branch_list(bs: &[usize]) -> String {
    let parts: Vec<String> = bs.iter().map(|b| (b + 1).to_string()).collect();
    format!("[{}]", parts.join(", "))
}

/// Angle in degrees that reproduces `dir` exactly, if there is a short one.
fn exact_angle(dir: [f64; 2]) -> Option<f64> {
    let deg = dir[1].atan2(dir[0]).to_degrees().rem_euclid(360.0);
    let rounded = (deg * 1e6).round() / 1e6;
    let rounded = if rounded >= 360.0 { rounded - 360.0 } else { rounded };
    (unit_from_degrees(rounded) == dir).then_some(rounded)
}

/// Canonical text of a scenario: fixed section and key order, shortest
/// round-tripping numbers, values equal to their defaults left out except
/// the grid spacing and the time step.
pub fn serialize_config(s: &Scenario) -> String {
    let mut o = String::new();
    let kv = |o: &mut String, k: &str, v: String| {
        let _ = writeln!(o, "{k} = {v}");
    };
    let _ = writeln!(o, "[scenario]");
    kv(&mut o, "name", format!("\"{}\"", s.name));
    kv(&mut o, "task", format!("\"{}\"", s.task.name()));

    let _ = writeln!(o, "\n[reaction]");
    kv(&mut o, "theta", num(s.models.reaction.theta()));
    if s.models.reaction.modulation() != &ScalarExpr::Const(1.0) {
        kv(&mut o, "rho", format!("\"{}\"", s.models.reaction.modulation()));
    }
    let (a1, a2) = s.models.diffusion.entries();
    if !s.models.diffusion.is_identity() || a1 != &ScalarExpr::Const(1.0) || a2 != &ScalarExpr::Const(1.0) {
        let _ = writeln!(o, "\n[diffusion]");
        kv(&mut o, "a1", format!("\"{a1}\""));
        kv(&mut o, "a2", format!("\"{a2}\""));
    }
    let (q1, q2) = s.models.advection.components();
    if q1 != &ScalarExpr::Const(0.0) || q2 != &ScalarExpr::Const(0.0) {
        let _ = writeln!(o, "\n[advection]");
        kv(&mut o, "q1", format!("\"{q1}\""));
        kv(&mut o, "q2", format!("\"{q2}\""));
    }

    if let Some(d) = &s.domain {
        let _ = writeln!(o, "\n[domain]");
        kv(&mut o, "junction_radius", num(d.junction_radius));
        if let Some(p) = &d.polygon {
            kv(&mut o, "polygon", pair_list(p));
        }
        for b in &d.branches {
            let _ = writeln!(o, "\n[[branch]]");
            match exact_angle(b.direction) {
                Some(a) => kv(&mut o, "angle", num(a)),
                None => kv(&mut o, "direction", list(&b.direction)),
            }
            if b.shift != [0.0, 0.0] {
                kv(&mut o, "shift", list(&b.shift));
            }
            kv(&mut o, "length", num(b.length));
            match &b.width {
                WidthProfile::Constant(w) => kv(&mut o, "width", num(*w)),
                WidthProfile::Tanh { w0, winf, ell } => kv(&mut o, "width_tanh", list(&[*w0, *winf, *ell])),
                WidthProfile::Table { s: xs, w } => {
                    let rows: Vec<[f64; 2]> = xs.iter().zip(w).map(|(a, b)| [*a, *b]).collect();
                    kv(&mut o, "width_table", pair_list(&rows));
                }
            }
        }
    }
    if let Some(h) = s.h {
        let _ = writeln!(o, "\n[grid]");
        kv(&mut o, "h", num(h));
    }
    if let Some(t) = &s.sim {
        let _ = writeln!(o, "\n[time]");
        kv(&mut o, "t_end", num(t.t_end));
        kv(&mut o, "scheme", format!("\"{}\"", scheme_name(t.scheme)));
        kv(&mut o, "dt", num(t.dt));
        if t.output_every != 1.0 {
            kv(&mut o, "output_every", num(t.output_every));
        }
        if t.tol_ss != 1e-6 {
            kv(&mut o, "tol_ss", num(t.tol_ss));
        }
        if t.lin_tol != 1e-13 {
            kv(&mut o, "lin_tol", num(t.lin_tol));
        }
    }
    if let Some(init) = &s.initial {
        let _ = writeln!(o, "\n[initial]");
        kv(&mut o, "kind", format!("\"{}\"", init.kind_name()));
        match init {
            InitialRecipe::Front { branch, position, facing } => {
                kv(&mut o, "branch", (branch + 1).to_string());
                kv(&mut o, "position", num(*position));
                kv(&mut o, "facing", format!("\"{}\"", facing_name(*facing)));
            }
            InitialRecipe::Emanation { branch, position, amp, rate } => {
                kv(&mut o, "branch", (branch + 1).to_string());
                kv(&mut o, "position", num(*position));
                kv(&mut o, "amp", num(*amp));
                kv(&mut o, "rate", num(*rate));
            }
            InitialRecipe::Block { branch, range, level, floor } => {
                kv(&mut o, "branch", (branch + 1).to_string());
                kv(&mut o, "range", list(&[range.0, range.1]));
                kv(&mut o, "level", num(*level));
                kv(&mut o, "floor", num(*floor));
            }
            InitialRecipe::Plateau { cuts, level, floor } => {
                let rows: Vec<[f64; 2]> = cuts.iter().map(|(b, c)| [(*b + 1) as f64, *c]).collect();
                kv(&mut o, "cuts", pair_list(&rows));
                kv(&mut o, "level", num(*level));
                kv(&mut o, "floor", num(*floor));
            }
            InitialRecipe::Constant { level } => kv(&mut o, "level", num(*level)),
            InitialRecipe::Bound { kind, time } => {
                kv(&mut o, "bound", format!("\"{kind}\""));
                kv(&mut o, "time", num(*time));
            }
        }
    }

    let p = &s.diagnostics;
    let dp = DiagnosticPlan::default();
    if p != &dp {
        let _ = writeln!(o, "\n[diagnostics]");
        if p.snapshot_every != dp.snapshot_every {
            kv(&mut o, "snapshot_every", p.snapshot_every.to_string());
        }
        if !p.speed_branches.is_empty() {
            kv(&mut o, "speed_branches", branch_list(&p.speed_branches));
        }
        if let Some((a, b)) = p.speed_window {
            kv(&mut o, "speed_window", list(&[a, b]));
        }
        if !p.distance_branches.is_empty() {
            kv(&mut o, "distance_branches", branch_list(&p.distance_branches));
        }
        if p.distance_facing != dp.distance_facing {
            kv(&mut o, "distance_facing", format!("\"{}\"", facing_name(p.distance_facing)));
        }
        if !p.certify_eps.is_empty() {
            kv(&mut o, "certify_eps", list(&p.certify_eps));
        }
        if p.certify_from != dp.certify_from {
            kv(&mut o, "certify_from", num(p.certify_from));
        }
        if p.monotone {
            kv(&mut o, "monotone", "true".into());
        }
        if let Some(e) = p.blocking_eps {
            kv(&mut o, "blocking_eps", num(e));
        }
        if p.bound_ordering {
            kv(&mut o, "bound_ordering", "true".into());
        }
    }

    let e = &s.expect;
    let de = Expectations::default();
    if e != &de {
        let _ = writeln!(o, "\n[expect]");
        if e.invariant_tol != de.invariant_tol {
            kv(&mut o, "invariant_tol", num(e.invariant_tol));
        }
        let opt = |o: &mut String, k: &str, v: Option<f64>| {
            if let Some(v) = v {
                let _ = writeln!(o, "{k} = {}", num(v));
            }
        };
        let flag = |o: &mut String, k: &str, v: bool| {
            if v {
                let _ = writeln!(o, "{k} = true");
            }
        };
        opt(&mut o, "monotone_tol", e.monotone_tol);
        opt(&mut o, "speed_rel_tol", e.speed_rel_tol);
        opt(&mut o, "speed_r2_min", e.speed_r2_min);
        opt(&mut o, "distance_max", e.distance_max);
        flag(&mut o, "certify_slack", e.certify_slack);
        flag(&mut o, "shift_agreement", e.shift_agreement);
        opt(&mut o, "ordering_tol", e.ordering_tol);
        flag(&mut o, "sweep_monotone", e.sweep_monotone);
        if let Some(n) = e.sweep_min_invaded {
            let _ = writeln!(o, "sweep_min_invaded = {n}");
        }
        opt(&mut o, "sweep_stability_tol", e.sweep_stability_tol);
        opt(&mut o, "wave_speed_tol", e.wave_speed_tol);
        opt(&mut o, "wave_zero_tol", e.wave_zero_tol);
        flag(&mut o, "residuals", e.residuals);
        flag(&mut o, "weight", e.weight);
    }

    if let Some(sw) = &s.sweep {
        let _ = writeln!(o, "\n[sweep]");
        match sw.parameter {
            SweepParameter::ChamberRatio { neck, .. } => {
                kv(&mut o, "parameter", "\"chamber-ratio\"".into());
                kv(&mut o, "neck", list(&[neck.0, neck.1]));
            }
            SweepParameter::Theta => kv(&mut o, "parameter", "\"theta\"".into()),
        }
        kv(&mut o, "branch", (sw.branch + 1).to_string());
        kv(&mut o, "values", list(&sw.values));
    }
    if let Some(w) = &s.waves {
        let _ = writeln!(o, "\n[waves]");
        kv(&mut o, "thetas", list(&w.thetas));
    }
    if let Some(b) = &s.bounds {
        let _ = writeln!(o, "\n[bounds]");
        kv(&mut o, "branch", (b.branch + 1).to_string());
        if !b.kinds.is_empty() {
            let names: Vec<String> = b.kinds.iter().map(|k| format!("\"{k}\"")).collect();
            kv(&mut o, "kinds", format!("[{}]", names.join(", ")));
        }
        if b.delta_factor != 0.9 {
            kv(&mut o, "delta_factor", num(b.delta_factor));
        }
        if b.samples != (120, 20) {
            kv(&mut o, "samples", format!("[{}, {}]", b.samples.0, b.samples.1));
        }
        if b.span != 20.0 {
            kv(&mut o, "span", num(b.span));
        }
        if let Some((c, r)) = b.slab {
            kv(&mut o, "slab", list(&[c, r]));
        }
        if b.anchor_time != 0.0 {
            kv(&mut o, "anchor_time", num(b.anchor_time));
        }
        if b.residual_mode == ResidualMode::Differences {
            kv(&mut o, "residual", "\"differences\"".into());
        }
    }
    o
}
