//! Batch driver behind the `lab` binary: runs experiment configs and suites,
//! writes reports and maps outcomes to exit codes.
//!
//! Exit codes: 0 success, 1 a verdict failed, 2 a verdict passed only
//! vacuously, 64 invalid input, 65 solver failure.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::capacity::{image_condenser, solve_capacity, CapacityResult, Condenser, NodeField};
use crate::config::{CheckSpec, Command, ExperimentConfig, Format};
use crate::distortion::{distortion_report, ReportExponents};
use crate::error::{LabError, Result};
use crate::exec::{join, Execution};
use crate::mapping::{sample_grid, Domain, Mapping, MappingSpec, Scheme};
use crate::report::format_number;
use crate::verify::{
    capacity_distortion_check, change_of_variables_residual, energy_bounds_check, family_members,
    operator_norm_lower_bound, transfer_identity_residual, CapacityForm, FamilySpec, Settings,
    Verdict, TAU,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_VACUOUS: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_SOLVER: i32 = 65;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub grid: Option<usize>,
    pub tol: Option<f64>,
    pub bracket: bool,
    pub exec: Execution,
}

impl Overrides {
    fn echo(&self) -> Value {
        let mut m = serde_json::Map::new();
        if let Some(g) = self.grid {
            m.insert("grid".into(), json!(g));
        }
        if let Some(t) = self.tol {
            m.insert("tol".into(), json!(t));
        }
        if self.bracket {
            m.insert("bracket".into(), json!(true));
        }
        Value::Object(m)
    }
}

/// One line of a suite table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub config: String,
    pub command: String,
    pub check: String,
    pub kind: String,
    pub lhs: String,
    pub rhs: String,
    pub slack: String,
    pub tolerance: String,
    /// `pass`, `fail`, `vacuous`, `ok` or `error`.
    pub status: String,
    pub message: String,
}

impl Row {
    fn value(config: &str, command: &str, check: &str, v: f64) -> Row {
        Row {
            config: config.into(),
            command: command.into(),
            check: check.into(),
            kind: "value".into(),
            lhs: format_number(v),
            rhs: String::new(),
            slack: String::new(),
            tolerance: String::new(),
            status: "ok".into(),
            message: String::new(),
        }
    }

    fn error(config: &str, command: &str, e: &LabError) -> Row {
        Row {
            config: config.into(),
            command: command.into(),
            check: "error".into(),
            kind: error_kind(e).into(),
            lhs: String::new(),
            rhs: String::new(),
            slack: String::new(),
            tolerance: String::new(),
            status: "error".into(),
            message: e.to_string(),
        }
    }

    fn verdict(config: &str, v: &Verdict) -> Row {
        Row {
            config: config.into(),
            command: "verify".into(),
            check: v.name.clone(),
            kind: serde_json::to_value(v.kind)
                .ok()
                .and_then(|k| k.as_str().map(String::from))
                .unwrap_or_default(),
            lhs: format_number(v.lhs),
            rhs: format_number(v.rhs),
            slack: format_number(v.slack),
            tolerance: format_number(v.tolerance_used),
            status: verdict_status(v).into(),
            message: v
                .metadata
                .get("note")
                .and_then(|n| n.as_str())
                .unwrap_or_default()
                .into(),
        }
    }
}

fn verdict_status(v: &Verdict) -> &'static str {
    if !v.passed {
        "fail"
    } else if v.vacuous {
        "vacuous"
    } else {
        "pass"
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: String,
    pub code: i32,
    pub report: Value,
    /// One human-readable line per result or verdict.
    pub lines: Vec<String>,
    pub rows: Vec<Row>,
    pub field: Option<NodeField>,
}

pub fn exit_code(e: &LabError) -> i32 {
    match e {
        LabError::Convergence { .. } => EXIT_SOLVER,
        _ => EXIT_USAGE,
    }
}

fn error_kind(e: &LabError) -> &'static str {
    match e {
        LabError::Validation { .. } => "validation",
        LabError::OutsideDomain { .. } => "outside_domain",
        LabError::UnsupportedScheme(_) => "unsupported_scheme",
        LabError::NoInverse(_) => "no_inverse",
        LabError::DegenerateDomain(_) => "degenerate_domain",
        LabError::Singular { .. } => "singular",
        LabError::ResolutionTooCoarse(_) => "resolution_too_coarse",
        LabError::Convergence { .. } => "convergence",
        LabError::Io { .. } => "io",
        LabError::Json(_) => "json",
        LabError::Csv(_) => "csv",
    }
}

fn error_json(e: &LabError) -> Value {
    let mut v = json!({"kind": error_kind(e), "message": e.to_string()});
    if let LabError::Validation { field, .. } = e {
        v["field"] = json!(field);
    }
    if let LabError::Convergence { partial, .. } = e {
        v["partial"] = capacity_json(partial);
    }
    v
}

fn capacity_json(r: &CapacityResult) -> Value {
    serde_json::to_value(r).unwrap_or(Value::Null)
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Distortion => "distortion",
        Command::Capacity => "capacity",
        Command::Verify => "verify",
    }
}

fn config_name(cfg: Option<&ExperimentConfig>, path: &Path) -> String {
    cfg.and_then(|c| c.name.clone()).unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    })
}

/// Loads `path`, checks that it holds a `command` experiment and runs it.
/// Never fails: errors are part of the outcome.
pub fn run_path(path: &Path, command: Option<Command>, ov: &Overrides) -> Outcome {
    let loaded = std::fs::read_to_string(path)
        .map_err(|e| LabError::io(path.display().to_string(), e))
        .and_then(|text| {
            let raw: Value = serde_json::from_str(&text)
                .map_err(|e| LabError::validation("config", e.to_string()))?;
            let cfg = ExperimentConfig::from_json(&text)?;
            Ok((raw, cfg))
        });
    let (raw, cfg) = match loaded {
        Ok(v) => v,
        Err(e) => {
            return failed_outcome(
                &config_name(None, path),
                command.map_or("", command_name),
                Value::Null,
                e,
            )
        }
    };
    let name = config_name(Some(&cfg), path);
    if let Some(c) = command {
        if c != cfg.command {
            let e = LabError::validation(
                "command",
                format!(
                    "config is a `{}` experiment, not `{}`",
                    command_name(cfg.command),
                    command_name(c)
                ),
            );
            return failed_outcome(&name, command_name(c), raw, e);
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = run_config(&cfg, base, ov);
    out.name = name.clone();
    out.report["name"] = json!(name);
    out.report["config"] = raw;
    for r in &mut out.rows {
        r.config = name.clone();
    }
    out
}

fn failed_outcome(name: &str, command: &str, raw: Value, e: LabError) -> Outcome {
    Outcome {
        name: name.into(),
        code: exit_code(&e),
        report: json!({
            "name": name,
            "command": command,
            "status": "error",
            "exit_code": exit_code(&e),
            "config": raw,
            "error": error_json(&e),
        }),
        lines: vec![format!("ERROR {name}: {e}")],
        rows: vec![Row::error(name, command, &e)],
        field: None,
    }
}

/// Runs a parsed config; relative paths inside it resolve against `base`.
pub fn run_config(cfg: &ExperimentConfig, base: &Path, ov: &Overrides) -> Outcome {
    let cfg = match ov.grid {
        Some(g) => cfg.clone().with_grid(g),
        None => cfg.clone(),
    };
    let name = cfg.name.clone().unwrap_or_default();
    let command = command_name(cfg.command);
    let result = match cfg.command {
        Command::Distortion => run_distortion(&cfg, base, ov, &name),
        Command::Capacity => run_capacity(&cfg, base, ov, &name),
        Command::Verify => run_verify(&cfg, base, ov, &name),
    };
    let mut out = match result {
        Ok(o) => o,
        Err(e) => {
            let raw = serde_json::to_value(&cfg).unwrap_or(Value::Null);
            failed_outcome(&name, command, raw, e)
        }
    };
    out.report["command"] = json!(command);
    out.report["overrides"] = ov.echo();
    out.report["seed"] = json!(cfg.seed);
    if out.report.get("config").is_none_or(Value::is_null) {
        out.report["config"] = serde_json::to_value(&cfg).unwrap_or(Value::Null);
    }
    out
}

fn load_mapping(cfg: &ExperimentConfig, base: &Path) -> Result<(Mapping, Scheme)> {
    let mapping = Mapping::from_spec(&cfg.map, base)?;
    mapping.check_dim(cfg.domain.dim())?;
    let scheme = cfg.scheme.unwrap_or_else(|| Scheme::default_for(&mapping));
    Ok((mapping, scheme))
}

fn run_distortion(
    cfg: &ExperimentConfig,
    base: &Path,
    ov: &Overrides,
    name: &str,
) -> Result<Outcome> {
    let (mapping, scheme) = load_mapping(cfg, base)?;
    let exps = ReportExponents {
        p: cfg.exponents.p,
        q: cfg.exponents.need("q")?,
        s: cfg.exponents.s,
        r: cfg.exponents.need("r")?,
    };
    let samples = sample_grid(&mapping, &cfg.domain, scheme, ov.exec)?;
    let rep = distortion_report(&samples, exps, mapping.has_analytic_jacobian())?;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), short);
    let line = format!(
        "distortion {}: K_pq={} K_I_qs={} seminorm_L1q={} adj_Lr_norm={} ball={}",
        mapping.label(),
        opt(rep.k_pq),
        opt(rep.k_i_qs),
        short(rep.seminorm_l1q),
        short(rep.adj_lr_norm),
        serde_json::to_value(rep.ball_class_verdict)?
            .as_str()
            .unwrap_or_default(),
    );
    let mut rows = Vec::new();
    for (k, v) in [("K_pq", rep.k_pq), ("K_I_qs", rep.k_i_qs)] {
        if let Some(v) = v {
            rows.push(Row::value(name, "distortion", k, v));
        }
    }
    rows.push(Row::value(
        name,
        "distortion",
        "seminorm_L1q",
        rep.seminorm_l1q,
    ));
    rows.push(Row::value(
        name,
        "distortion",
        "adj_Lr_norm",
        rep.adj_lr_norm,
    ));
    rows.push(Row::value(
        name,
        "distortion",
        "jacobian_sign_fraction",
        rep.jacobian_sign_fraction,
    ));
    Ok(Outcome {
        name: name.into(),
        code: EXIT_OK,
        report: json!({
            "status": "ok",
            "exit_code": EXIT_OK,
            "result": serde_json::to_value(&rep)?,
            "scheme": serde_json::to_value(scheme)?,
        }),
        lines: vec![line],
        rows,
        field: None,
    })
}

/// The condenser of a capacity config: as given, or its image under `map`.
fn capacity_condenser(cfg: &ExperimentConfig, base: &Path) -> Result<Condenser> {
    let spec = cfg
        .condenser
        .as_ref()
        .ok_or_else(|| LabError::validation("condenser", "required for the capacity command"))?;
    let source = Condenser::from_spec(spec, &cfg.domain)?;
    if cfg.map == MappingSpec::Identity {
        return Ok(source);
    }
    let image_domain = cfg
        .image_domain
        .as_ref()
        .ok_or_else(|| LabError::validation("image_domain", "required to map the condenser"))?;
    let (mapping, _) = load_mapping(cfg, base)?;
    image_condenser(&source, &mapping, image_domain)
}

fn run_capacity(
    cfg: &ExperimentConfig,
    base: &Path,
    ov: &Overrides,
    name: &str,
) -> Result<Outcome> {
    let condenser = capacity_condenser(cfg, base)?;
    let mut solver = cfg.solver.clone();
    solver.exec = ov.exec;
    let (main, bracket) = if ov.bracket {
        let h = condenser.domain.sampling_grid()?.max_h();
        let (main, (grown, shrunk)) = join(
            ov.exec,
            || solve_capacity(&condenser, &solver),
            || {
                join(
                    ov.exec,
                    || solve_capacity(&condenser.offset_plates(h), &solver),
                    || solve_capacity(&condenser.offset_plates(-h), &solver),
                )
            },
        );
        let entry = |r: Result<CapacityResult>| match r {
            Ok(r) => json!({"value": format_number(r.value), "grid": r.grid}),
            Err(e) => json!({"unavailable": e.to_string()}),
        };
        let b = json!({"delta": h, "dilated": entry(grown), "eroded": entry(shrunk)});
        (main, Some(b))
    } else {
        (solve_capacity(&condenser, &solver), None)
    };
    let (result, error, code) = match main {
        Ok(r) => (r, None, EXIT_OK),
        Err(LabError::Convergence {
            iterations,
            partial,
        }) => {
            let e = LabError::Convergence {
                iterations,
                partial: partial.clone(),
            };
            (*partial, Some(e), EXIT_SOLVER)
        }
        Err(e) => return Err(e),
    };
    let mut line = format!(
        "capacity p={} grid={}: {} ({} iterations, max principle {})",
        result.p,
        result.grid,
        short(result.value),
        result.iterations,
        if result.max_principle_ok {
            "ok"
        } else {
            "violated"
        }
    );
    let mut report = json!({
        "status": if code == EXIT_OK { "ok" } else { "error" },
        "exit_code": code,
        "result": capacity_json(&result),
    });
    let mut rows = vec![Row::value(name, "capacity", "capacity", result.value)];
    if let Some(b) = bracket {
        line.push_str(&format!("; bracket {}", b));
        report["bracket"] = b;
    }
    if let Some(e) = &error {
        line = format!("ERROR {e}; partial {line}");
        report["error"] = json!({"kind": "convergence", "message": e.to_string()});
        rows.push(Row::error(name, "capacity", e));
    }
    Ok(Outcome {
        name: name.into(),
        code,
        report,
        lines: vec![line],
        rows,
        field: Some(result.minimizer),
    })
}

/// Every check whose exponents are present in the config.
fn default_checks(cfg: &ExperimentConfig, invertible: bool) -> Vec<CheckSpec> {
    let e = &cfg.exponents;
    let mut out = Vec::new();
    let qs = matches!((e.q, e.s), (Some(q), Some(s)) if s < q);
    if invertible && qs {
        out.push(CheckSpec::TransferIdentity);
    }
    if invertible {
        out.push(CheckSpec::ChangeOfVariables {
            integrand: crate::verify::Integrand::Constant { value: 1.0 },
            subset: Default::default(),
        });
    }
    if invertible && cfg.condenser.is_some() {
        if matches!((e.q, e.s), (Some(q), Some(s)) if s > 1.0 && s < q && q.is_finite()) {
            out.push(CheckSpec::CapacityDistortion {
                same_exponent: false,
            });
        }
        if e.p.is_some() {
            out.push(CheckSpec::CapacityDistortion {
                same_exponent: true,
            });
        }
    }
    if matches!((e.q, e.s), (Some(q), Some(s)) if s <= q) {
        out.push(CheckSpec::EnergyBounds);
    }
    if matches!((e.p, e.q), (Some(p), Some(q)) if q <= p) {
        out.push(CheckSpec::OperatorNorm);
    }
    out
}

fn check_name(c: &CheckSpec) -> &'static str {
    match c {
        CheckSpec::TransferIdentity => "transfer_identity",
        CheckSpec::ChangeOfVariables { .. } => "change_of_variables",
        CheckSpec::CapacityDistortion { .. } => "capacity_distortion",
        CheckSpec::EnergyBounds => "energy_bounds",
        CheckSpec::OperatorNorm => "operator_norm",
    }
}

fn run_check(
    check: &CheckSpec,
    cfg: &ExperimentConfig,
    mapping: &Mapping,
    scheme: Scheme,
    image_domain: &Domain,
    settings: &Settings,
) -> Result<Vec<Verdict>> {
    let e = &cfg.exponents;
    let family = || {
        let specs = cfg
            .family
            .as_ref()
            .map_or_else(FamilySpec::default_family, |f| f.to_vec());
        family_members(&specs, image_domain)
    };
    Ok(match check {
        CheckSpec::TransferIdentity => vec![transfer_identity_residual(
            mapping,
            &cfg.domain,
            image_domain,
            e.need("q")?,
            e.need("s")?,
            scheme,
            settings,
        )?],
        CheckSpec::ChangeOfVariables { integrand, subset } => vec![change_of_variables_residual(
            mapping,
            &cfg.domain,
            image_domain,
            integrand,
            subset,
            scheme,
            settings,
        )?],
        CheckSpec::CapacityDistortion { same_exponent } => {
            let spec = cfg.condenser.as_ref().ok_or_else(|| {
                LabError::validation("condenser", "required for the capacity_distortion check")
            })?;
            let condenser = Condenser::from_spec(spec, &cfg.domain)?;
            let form = if *same_exponent {
                CapacityForm::SameExponent {
                    p: e.p.unwrap_or(spec.p),
                }
            } else {
                CapacityForm::Inner {
                    q: e.need("q")?,
                    s: e.need("s")?,
                }
            };
            let mut solver = cfg.solver.clone();
            solver.exec = settings.exec;
            vec![capacity_distortion_check(
                mapping,
                &condenser,
                image_domain,
                form,
                &solver,
                scheme,
                settings,
            )?]
        }
        CheckSpec::EnergyBounds => energy_bounds_check(
            mapping,
            &cfg.domain,
            image_domain,
            e.need("q")?,
            e.need("s")?,
            &family()?,
            scheme,
            settings,
        )?,
        CheckSpec::OperatorNorm => vec![operator_norm_lower_bound(
            mapping,
            &cfg.domain,
            image_domain,
            e.need("p")?,
            e.need("q")?,
            &family()?,
            scheme,
            settings,
        )?],
    })
}

/// Compact number for summary lines.
fn short(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format_number(v);
    }
    if (1e-3..1e6).contains(&v.abs()) {
        let t = format!("{v:.10}");
        t.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.6e}")
    }
}

fn verdict_line(v: &Verdict) -> String {
    format!(
        "{:<7} {} lhs={} rhs={} slack={} tol={}",
        verdict_status(v).to_uppercase(),
        v.name,
        short(v.lhs),
        short(v.rhs),
        short(v.slack),
        short(v.tolerance_used)
    )
}

fn run_verify(cfg: &ExperimentConfig, base: &Path, ov: &Overrides, name: &str) -> Result<Outcome> {
    let image_domain = cfg
        .image_domain
        .clone()
        .ok_or_else(|| LabError::validation("image_domain", "required for the verify command"))?;
    let (mapping, scheme) = load_mapping(cfg, base)?;
    let settings = Settings {
        tau: TAU,
        tol_override: ov.tol.or(cfg.tolerance),
        exec: ov.exec,
    };
    let checks = match &cfg.checks {
        Some(c) if c.is_empty() => return Err(LabError::validation("checks", "list is empty")),
        Some(c) => c.clone(),
        None => {
            let c = default_checks(cfg, mapping.inverse().is_ok());
            if c.is_empty() {
                return Err(LabError::validation(
                    "checks",
                    "no check applies to the given exponents and mapping",
                ));
            }
            c
        }
    };
    let mut verdicts = Vec::new();
    let mut errors = Vec::new();
    for check in &checks {
        match run_check(check, cfg, &mapping, scheme, &image_domain, &settings) {
            Ok(v) => verdicts.extend(v),
            Err(e) => errors.push((check_name(check), e)),
        }
    }
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    let vacuous = verdicts.iter().filter(|v| v.passed && v.vacuous).count();
    let passed = verdicts.len() - failed - vacuous;
    let code = if let Some((_, e)) = errors.iter().find(|(_, e)| exit_code(e) == EXIT_USAGE) {
        exit_code(e)
    } else if !errors.is_empty() {
        EXIT_SOLVER
    } else if failed > 0 {
        EXIT_FAILED
    } else if vacuous > 0 {
        EXIT_VACUOUS
    } else {
        EXIT_OK
    };
    let worst = verdicts
        .iter()
        .filter(|v| v.kind == crate::verify::VerdictKind::Inequality && !v.vacuous)
        .map(|v| v.slack / v.rhs.abs().max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    let mut lines: Vec<String> = verdicts.iter().map(verdict_line).collect();
    let mut rows: Vec<Row> = verdicts.iter().map(|v| Row::verdict(name, v)).collect();
    for (check, e) in &errors {
        lines.push(format!("ERROR   {check}: {e}"));
        let mut r = Row::error(name, "verify", e);
        r.check = (*check).into();
        rows.push(r);
    }
    let status = match code {
        EXIT_OK => "passed",
        EXIT_FAILED => "failed",
        EXIT_VACUOUS => "vacuous",
        _ => "error",
    };
    let mut report = json!({
        "status": status,
        "exit_code": code,
        "result": serde_json::to_value(&verdicts)?,
        "summary": {
            "passed": passed,
            "failed": failed,
            "vacuous": vacuous,
            "errors": errors.len(),
            "worst_relative_slack": format_number(worst),
        },
        "scheme": serde_json::to_value(scheme)?,
    });
    if !errors.is_empty() {
        report["errors"] = errors
            .iter()
            .map(|(c, e)| {
                let mut v = error_json(e);
                v["check"] = json!(c);
                v
            })
            .collect();
    }
    Ok(Outcome {
        name: name.into(),
        code,
        report,
        lines,
        rows,
        field: None,
    })
}

/// Writes `rows` as CSV.
pub fn write_rows<W: std::io::Write>(rows: &[Row], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| LabError::io("csv output", e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| LabError::io(path.display().to_string(), e))
}

/// Writes the outcome of a single run. In CSV form the rows go to `path` and
/// a capacity minimizer goes next to it as `<stem>_minimizer.csv`.
pub fn write_outcome(out: &Outcome, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&out.report)?;
            text.push('\n');
            write_file(path, text.as_bytes())
        }
        Format::Csv => {
            let mut buf = Vec::new();
            write_rows(&out.rows, &mut buf)?;
            write_file(path, &buf)?;
            if let Some(field) = &out.field {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                field.write_csv(&path.with_file_name(format!("{stem}_minimizer.csv")))?;
            }
            Ok(())
        }
    }
}

/// Runs one config for the `distortion`, `capacity` or `verify` subcommand,
/// prints its summary lines and writes the report. Returns the exit code.
pub fn run(path: &Path, command: Command, ov: &Overrides) -> i32 {
    let out = run_path(path, Some(command), ov);
    for l in &out.lines {
        println!("{l}");
    }
    let target = ov.output.clone().map(|p| (p, ov.format)).or_else(|| {
        ExperimentConfig::load(path)
            .ok()
            .and_then(|c| c.output)
            .map(|o| {
                let base = path.parent().unwrap_or(Path::new("."));
                (base.join(o.path), Some(o.format))
            })
    });
    if let Some((p, format)) = target {
        let format = format.unwrap_or_else(|| guess_format(&p));
        if let Err(e) = write_outcome(&out, &p, format) {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    }
    out.code
}

fn guess_format(p: &Path) -> Format {
    match p.extension().and_then(|e| e.to_str()) {
        Some("csv") => Format::Csv,
        _ => Format::Json,
    }
}

/// Aggregate of a suite run.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub code: i32,
    pub rows: Vec<Row>,
    pub outcomes: Vec<Outcome>,
}

/// Config paths listed in a manifest, one per line, `#` starting a comment,
/// relative to the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| LabError::io(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

/// Worst exit code of a set of runs: usage errors, then solver failures,
/// then failed verdicts, then vacuous passes.
pub fn combine_codes(codes: impl IntoIterator<Item = i32>) -> i32 {
    let rank = |c: i32| match c {
        EXIT_USAGE => 4,
        EXIT_SOLVER => 3,
        EXIT_FAILED => 2,
        EXIT_VACUOUS => 1,
        _ => 0,
    };
    codes
        .into_iter()
        .max_by_key(|&c| rank(c))
        .unwrap_or(EXIT_OK)
}

fn run_all(paths: &[PathBuf], ov: &Overrides, jobs: Option<usize>) -> Vec<Outcome> {
    let run_one = |p: &PathBuf| run_path(p, None, ov);
    #[cfg(feature = "parallel")]
    if ov.exec.is_parallel() {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.unwrap_or(0))
            .build();
        if let Ok(pool) = pool {
            return pool.install(|| paths.par_iter().map(run_one).collect());
        }
    }
    let _ = jobs;
    paths.iter().map(run_one).collect()
}

/// Runs every config of a manifest. Rows are sorted by config name so the
/// table does not depend on scheduling.
pub fn suite(manifest: &Path, ov: &Overrides, jobs: Option<usize>) -> SuiteOutcome {
    let suite_ov = Overrides {
        output: None,
        format: None,
        ..ov.clone()
    };
    let paths = match read_manifest(manifest) {
        Ok(p) if p.is_empty() => {
            let e = LabError::validation("manifest", "no experiments");
            let mut row = Row::error(&config_name(None, manifest), "suite", &e);
            row.check = "manifest".into();
            return SuiteOutcome {
                code: EXIT_USAGE,
                rows: vec![row],
                outcomes: Vec::new(),
            };
        }
        Ok(p) => p,
        Err(e) => {
            let mut row = Row::error(&config_name(None, manifest), "suite", &e);
            row.check = "manifest".into();
            return SuiteOutcome {
                code: EXIT_USAGE,
                rows: vec![row],
                outcomes: Vec::new(),
            };
        }
    };
    let mut outcomes = run_all(&paths, &suite_ov, jobs);
    outcomes.sort_by(|a, b| a.name.cmp(&b.name));
    let rows = outcomes
        .iter()
        .flat_map(|o| o.rows.iter().cloned())
        .collect();
    SuiteOutcome {
        code: combine_codes(outcomes.iter().map(|o| o.code)),
        rows,
        outcomes,
    }
}

/// `lab suite`: prints one line per experiment and writes the table.
pub fn run_suite(manifest: &Path, ov: &Overrides, jobs: Option<usize>) -> i32 {
    let s = suite(manifest, ov, jobs);
    for o in &s.outcomes {
        let n = o.rows.len();
        let status = o
            .report
            .get("status")
            .and_then(Value::as_str)
            .unwrap_or("?");
        eprintln!("{:<8} {} ({n} rows)", status.to_uppercase(), o.name);
    }
    if s.outcomes.is_empty() {
        for r in &s.rows {
            eprintln!("ERROR {}", r.message);
        }
    }
    let written = match (&ov.output, ov.format) {
        (Some(p), Some(Format::Json)) => serde_json::to_vec_pretty(&s.rows)
            .map_err(LabError::from)
            .and_then(|b| write_file(p, &b)),
        (Some(p), _) => std::fs::File::create(p)
            .map_err(|e| LabError::io(p.display().to_string(), e))
            .and_then(|f| write_rows(&s.rows, f)),
        (None, Some(Format::Json)) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&s.rows).unwrap_or_default()
            );
            Ok(())
        }
        (None, _) => write_rows(&s.rows, std::io::stdout().lock()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    s.code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    const DIAG: &str = r#"{
        "command": "distortion",
        "map": {"family": "linear", "matrix": [[2, 0], [0, 1]]},
        "domain": {"kind": "box", "lo": [0, 0], "hi": [1, 1], "grid": 8},
        "exponents": {"p": 2, "q": 2, "s": 1, "r": 2}
    }"#;

    const VERIFY: &str = r#"{
        "command": "verify",
        "map": {"family": "linear", "matrix": [[2, 0], [0, 1]]},
        "domain": {"kind": "box", "lo": [0, 0], "hi": [1, 1], "grid": 8},
        "image_domain": {"kind": "box", "lo": [0, 0], "hi": [2, 1], "grid": 8},
        "exponents": {"p": 2, "q": 2, "s": 1}
    }"#;

    #[test]
    fn distortion_closed_forms() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_path(
            &write(dir.path(), "diag.json", DIAG),
            Some(Command::Distortion),
            &Overrides::default(),
        );
        assert_eq!(out.code, EXIT_OK, "{:?}", out.lines);
        let r = &out.report["result"];
        assert!((r["K_I_qs"].as_f64().unwrap() - 2.0).abs() < 1e-12);
        assert!((r["adj_Lr_norm"].as_f64().unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(out.report["name"], "diag");
    }

    #[test]
    fn command_mismatch_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "diag.json", DIAG);
        let out = run_path(&p, Some(Command::Capacity), &Overrides::default());
        assert_eq!(out.code, EXIT_USAGE);
        assert_eq!(out.report["error"]["field"], "command");
        let out = run_path(&dir.path().join("nope.json"), None, &Overrides::default());
        assert_eq!(out.code, EXIT_USAGE);
        assert_eq!(out.rows[0].status, "error");
    }

    #[test]
    fn verify_default_checks_pass() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_path(
            &write(dir.path(), "v.json", VERIFY),
            None,
            &Overrides::default(),
        );
        assert_eq!(out.code, EXIT_OK, "{:#?}", out.lines);
        let names: Vec<&str> = out.rows.iter().map(|r| r.check.as_str()).collect();
        assert!(
            names.iter().any(|n| n.starts_with("transfer_identity")),
            "{names:?}"
        );
        assert!(names.iter().any(|n| n.starts_with("energy")), "{names:?}");
    }

    #[test]
    fn forced_tolerance_fails() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{
            "command": "verify",
            "map": {"family": "radial_power", "a": 2},
            "domain": {"kind": "annulus", "center": [0, 0], "r_inner": 1, "r_outer": 2, "grid": 16},
            "image_domain": {"kind": "annulus", "center": [0, 0], "r_inner": 1, "r_outer": 4, "grid": 16},
            "checks": [{"check": "change_of_variables"}],
            "tolerance": 1e-15
        }"#;
        let out = run_path(
            &write(dir.path(), "v.json", text),
            None,
            &Overrides::default(),
        );
        assert_eq!(out.code, EXIT_FAILED, "{:#?}", out.lines);
        assert_eq!(out.rows[0].status, "fail");
    }

    #[test]
    fn reports_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "v.json", VERIFY);
        let a = serde_json::to_string(&run_path(&p, None, &Overrides::default()).report).unwrap();
        let b = serde_json::to_string(&run_path(&p, None, &Overrides::default()).report).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifests() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "b.json",
            &DIAG.replace("\"command\"", "\"name\": \"b\", \"command\""),
        );
        write(
            dir.path(),
            "a.json",
            &VERIFY.replace("\"command\"", "\"name\": \"a\", \"command\""),
        );
        let m = write(
            dir.path(),
            "m.manifest",
            "# two configs\nb.json\n\na.json  # verify\n",
        );
        let s = suite(&m, &Overrides::default(), Some(2));
        assert_eq!(s.code, EXIT_OK);
        let names: Vec<&str> = s.rows.iter().map(|r| r.config.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        let empty = write(dir.path(), "e.manifest", "# nothing\n\n");
        let s = suite(&empty, &Overrides::default(), None);
        assert_eq!(s.code, EXIT_USAGE);
        assert!(s.rows[0].message.contains("no experiments"));
        let broken = write(dir.path(), "x.manifest", "a.json\nmissing.json\n");
        let s = suite(&broken, &Overrides::default(), None);
        assert_eq!(s.code, EXIT_USAGE);
        assert!(s
            .rows
            .iter()
            .any(|r| r.config == "missing" && r.status == "error"));
    }

    #[test]
    fn code_precedence() {
        assert_eq!(combine_codes([0, 2, 1]), 1);
        assert_eq!(combine_codes([1, 65]), 65);
        assert_eq!(combine_codes([65, 64, 0]), 64);
        assert_eq!(combine_codes([]), 0);
    }
}
