//! Problem-spec ingestion and dispatch: JSON specs are validated into
//! fully parsed problems, run against the analysis modules, and rendered
//! as plain-text reports with per-check verdicts. CSV artifacts are
//! written atomically (temp file + rename).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::charpit::{self, FirstOrderPDE, JetPoint};
use crate::evolution::{self, EvolutionaryRelation, OmegaForm, Provenance, Pseudostructure};
use crate::expr::{ExprError, Expression};
use crate::forms::{Chart, DifferentialForm};
use crate::hamilton::{self, HamiltonianSystem};
use crate::maxwell::{self, FieldStrength2Form, SpacetimeGrid};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    WriteArtifact { path: PathBuf, source: std::io::Error },
    #[error("invalid spec JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema violation in field `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("expression in field `{field}`: {source}")]
    Expression { field: String, source: ExprError },
    #[error("check `{check}` failed to run: {message}")]
    CheckFailed { check: String, message: String },
}

fn schema(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Schema { field: field.to_string(), reason: reason.into() }
}

fn parse_expr(field: &str, text: &str) -> Result<Expression, CliError> {
    Expression::parse(text).map_err(|source| CliError::Expression { field: field.to_string(), source })
}

// ---------------------------------------------------------------------------
// raw JSON schema

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChartDecl {
    names: Vec<String>,
    #[serde(default)]
    signature: Option<Vec<f64>>,
}

impl ChartDecl {
    fn build(&self, field: &str) -> Result<Arc<Chart>, CliError> {
        let names: Vec<&str> = self.names.iter().map(|s| s.as_str()).collect();
        let signature = match &self.signature {
            Some(s) => s.clone(),
            None => vec![1.0; names.len()],
        };
        Chart::new(&names, &signature).map_err(|e| schema(field, e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartDecl {
    x: Vec<f64>,
    u: f64,
    p: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDecl {
    shape: [usize; 4],
    spacing: [f64; 4],
    #[serde(default)]
    origin: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldsDecl {
    e: [String; 3],
    b: [String; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PseudostructureDecl {
    parameters: Vec<String>,
    bounds: Vec<[f64; 2]>,
    map: Vec<String>,
    #[serde(default)]
    determinant: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFunctionDecl {
    #[serde(default)]
    psi0: f64,
    intervals: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LociDecl {
    determinant: String,
    bounds: Vec<[f64; 2]>,
    resolution: usize,
    tolerance: f64,
    #[serde(default)]
    output_csv: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum RawSpec {
    PdeAnalysis {
        chart: ChartDecl,
        degree: usize,
        coefficients: Vec<String>,
        tolerance: f64,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        samples: Option<usize>,
        #[serde(default)]
        bounds: Option<Vec<[f64; 2]>>,
    },
    Characteristics {
        chart: ChartDecl,
        f: String,
        start: StartDecl,
        ds: f64,
        steps: usize,
        tolerance: f64,
        #[serde(default)]
        output_csv: Option<PathBuf>,
    },
    Hamilton {
        dof: usize,
        h: String,
        q0: Vec<f64>,
        p0: Vec<f64>,
        #[serde(default)]
        t0: f64,
        dt: f64,
        steps: usize,
        tolerance: f64,
        #[serde(default)]
        poincare_tolerance: Option<f64>,
        #[serde(default)]
        output_csv: Option<PathBuf>,
    },
    MaxwellCheck {
        #[serde(default)]
        grid: Option<GridDecl>,
        #[serde(default)]
        fields: Option<FieldsDecl>,
        #[serde(default)]
        input_csv: Option<PathBuf>,
        tolerance: f64,
        #[serde(default)]
        output_csv: Option<PathBuf>,
    },
    Evolution {
        chart: ChartDecl,
        degree: usize,
        coefficients: Vec<String>,
        #[serde(default)]
        provenance: Option<Vec<String>>,
        tolerance: f64,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        samples: Option<usize>,
        #[serde(default)]
        bounds: Option<Vec<[f64; 2]>>,
        #[serde(default)]
        pseudostructure: Option<PseudostructureDecl>,
        #[serde(default)]
        state_function: Option<StateFunctionDecl>,
        #[serde(default)]
        loci: Option<LociDecl>,
    },
}

// ---------------------------------------------------------------------------
// validated problems

#[derive(Debug)]
pub struct SamplingPlan {
    pub seed: u64,
    pub samples: usize,
    pub bounds: Vec<(f64, f64)>,
}

impl SamplingPlan {
    /// Deterministic sample points: uniform draws per coordinate from a
    /// counter-seeded stream cipher, so identical specs sample identically.
    pub fn points(&self, chart: &Chart) -> Vec<HashMap<String, f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|_| {
                let coords: Vec<f64> = self
                    .bounds
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(lo..hi))
                    .collect();
                chart.point(&coords)
            })
            .collect()
    }
}

fn validate_sampling(
    chart: &Chart,
    seed: Option<u64>,
    samples: Option<usize>,
    bounds: Option<Vec<[f64; 2]>>,
) -> Result<SamplingPlan, CliError> {
    let bounds = match bounds {
        Some(b) => {
            if b.len() != chart.dim() {
                return Err(schema("bounds", format!("expected {} intervals", chart.dim())));
            }
            for [lo, hi] in &b {
                if !(lo < hi) {
                    return Err(schema("bounds", "each interval needs lower < upper"));
                }
            }
            b.iter().map(|&[lo, hi]| (lo, hi)).collect()
        }
        None => vec![(-1.0, 1.0); chart.dim()],
    };
    Ok(SamplingPlan {
        seed: effective_seed(seed.unwrap_or(0)),
        samples: samples.unwrap_or(20).max(1),
        bounds,
    })
}

/// `FORMFLOW_SEED` overrides the spec-declared seed when set to a valid
/// unsigned integer.
pub fn effective_seed(spec_seed: u64) -> u64 {
    match std::env::var("FORMFLOW_SEED") {
        Ok(v) => v.trim().parse().unwrap_or(spec_seed),
        Err(_) => spec_seed,
    }
}

#[derive(Debug)]
pub enum ProblemSpec {
    PdeAnalysis {
        form: DifferentialForm,
        tolerance: f64,
        sampling: SamplingPlan,
    },
    Characteristics {
        pde: FirstOrderPDE,
        start: JetPoint,
        ds: f64,
        steps: usize,
        tolerance: f64,
        output_csv: Option<PathBuf>,
    },
    Hamilton {
        sys: HamiltonianSystem,
        q0: Vec<f64>,
        p0: Vec<f64>,
        t0: f64,
        dt: f64,
        steps: usize,
        tolerance: f64,
        poincare_tolerance: Option<f64>,
        output_csv: Option<PathBuf>,
    },
    MaxwellCheck {
        source: MaxwellSource,
        tolerance: f64,
        output_csv: Option<PathBuf>,
    },
    Evolution {
        relation: EvolutionaryRelation,
        tolerance: f64,
        sampling: SamplingPlan,
        pseudostructure: Option<Pseudostructure>,
        state_function: Option<(f64, usize)>,
        loci: Option<LociTask>,
    },
}

#[derive(Debug)]
pub enum MaxwellSource {
    Analytic { grid: SpacetimeGrid, e: [Expression; 3], b: [Expression; 3] },
    Csv(PathBuf),
}

#[derive(Debug)]
pub struct LociTask {
    pub determinant: Expression,
    pub bounds: Vec<(f64, f64)>,
    pub resolution: usize,
    pub tolerance: f64,
    pub output_csv: Option<PathBuf>,
}

fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(schema(field, "tolerances > 0"))
    }
}

fn positive_step(field: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(schema(field, "step size must be > 0"))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<usize, CliError> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(schema(field, "must be >= 1"))
    }
}

fn parse_coefficients(field: &str, texts: &[String]) -> Result<Vec<Expression>, CliError> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| parse_expr(&format!("{field}[{i}]"), t))
        .collect()
}

fn validate(raw: RawSpec) -> Result<ProblemSpec, CliError> {
    match raw {
        RawSpec::PdeAnalysis { chart, degree, coefficients, tolerance, seed, samples, bounds } => {
            let chart = chart.build("chart")?;
            let coeffs = parse_coefficients("coefficients", &coefficients)?;
            for (i, c) in coeffs.iter().enumerate() {
                for v in c.free_variables() {
                    if chart.index_of(v).is_none() {
                        return Err(schema(
                            &format!("coefficients[{i}]"),
                            format!("unknown coordinate `{v}`"),
                        ));
                    }
                }
            }
            let form = build_form(chart.clone(), degree, coeffs)?;
            let sampling = validate_sampling(&chart, seed, samples, bounds)?;
            Ok(ProblemSpec::PdeAnalysis { form, tolerance: positive("tolerance", tolerance)?, sampling })
        }
        RawSpec::Characteristics { chart, f, start, ds, steps, tolerance, output_csv } => {
            let chart = chart.build("chart")?;
            let f = parse_expr("f", &f)?;
            let pde = FirstOrderPDE::new(chart.clone(), f)
                .map_err(|e| schema("f", e.to_string()))?;
            if start.x.len() != chart.dim() || start.p.len() != chart.dim() {
                return Err(schema("start", format!("x and p need {} entries", chart.dim())));
            }
            Ok(ProblemSpec::Characteristics {
                pde,
                start: JetPoint::new(start.x, start.u, start.p),
                ds: positive_step("ds", ds)?,
                steps: at_least_one("steps", steps)?,
                tolerance: positive("tolerance", tolerance)?,
                output_csv,
            })
        }
        RawSpec::Hamilton {
            dof, h, q0, p0, t0, dt, steps, tolerance, poincare_tolerance, output_csv,
        } => {
            let h = parse_expr("h", &h)?;
            let sys = HamiltonianSystem::new(dof, h).map_err(|e| schema("h", e.to_string()))?;
            if q0.len() != dof || p0.len() != dof {
                return Err(schema("q0", format!("q0 and p0 need {dof} entries")));
            }
            if let Some(pt) = poincare_tolerance {
                positive("poincare_tolerance", pt)?;
            }
            Ok(ProblemSpec::Hamilton {
                sys,
                q0,
                p0,
                t0,
                dt: positive_step("dt", dt)?,
                steps: at_least_one("steps", steps)?,
                tolerance: positive("tolerance", tolerance)?,
                poincare_tolerance,
                output_csv,
            })
        }
        RawSpec::MaxwellCheck { grid, fields, input_csv, tolerance, output_csv } => {
            let tolerance = positive("tolerance", tolerance)?;
            let source = match (grid, fields, input_csv) {
                (Some(g), Some(f), None) => {
                    for (i, &n) in g.shape.iter().enumerate() {
                        if n < 5 {
                            return Err(schema(
                                "grid.shape",
                                format!("resolutions >= 5 for maxwell-check (axis {i} has {n})"),
                            ));
                        }
                    }
                    let grid = SpacetimeGrid::new(g.shape, g.spacing, g.origin.unwrap_or([0.0; 4]))
                        .map_err(|e| schema("grid", e.to_string()))?;
                    let parse3 = |field: &str, texts: &[String; 3]| -> Result<[Expression; 3], CliError> {
                        let v = parse_coefficients(field, texts.as_slice())?;
                        for (i, c) in v.iter().enumerate() {
                            for name in c.free_variables() {
                                if !maxwell::AXIS_NAMES.contains(&name.as_str()) {
                                    return Err(schema(
                                        &format!("{field}[{i}]"),
                                        format!("unknown coordinate `{name}` (use t,x,y,z)"),
                                    ));
                                }
                            }
                        }
                        Ok(v.try_into().expect("three components"))
                    };
                    MaxwellSource::Analytic {
                        grid,
                        e: parse3("fields.e", &f.e)?,
                        b: parse3("fields.b", &f.b)?,
                    }
                }
                (None, None, Some(path)) => MaxwellSource::Csv(path),
                _ => {
                    return Err(schema(
                        "fields",
                        "provide either grid+fields or input_csv, not both",
                    ))
                }
            };
            Ok(ProblemSpec::MaxwellCheck { source, tolerance, output_csv })
        }
        RawSpec::Evolution {
            chart, degree, coefficients, provenance, tolerance, seed, samples, bounds,
            pseudostructure, state_function, loci,
        } => {
            let chart = chart.build("chart")?;
            let coeffs = parse_coefficients("coefficients", &coefficients)?;
            let tags = match provenance {
                None => Vec::new(),
                Some(labels) => labels
                    .iter()
                    .map(|l| match l.as_str() {
                        "energy" => Ok(Provenance::Energy),
                        "force" => Ok(Provenance::Force),
                        other => Err(schema(
                            "provenance",
                            format!("unknown tag `{other}` (use energy|force)"),
                        )),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            let relation = evolution::build_relation(chart.clone(), coeffs, degree, tags)
                .map_err(|e| schema("coefficients", e.to_string()))?;
            let sampling = validate_sampling(&chart, seed, samples, bounds)?;
            let pseudostructure = match pseudostructure {
                None => None,
                Some(ps) => {
                    if ps.bounds.len() != ps.parameters.len() {
                        return Err(schema(
                            "pseudostructure.bounds",
                            "one interval per parameter",
                        ));
                    }
                    let map = parse_coefficients("pseudostructure.map", &ps.map)?;
                    let determinant = match &ps.determinant {
                        Some(d) => Some(parse_expr("pseudostructure.determinant", d)?),
                        None => None,
                    };
                    Some(Pseudostructure {
                        param_names: ps.parameters,
                        param_bounds: ps.bounds.iter().map(|&[lo, hi]| (lo, hi)).collect(),
                        map,
                        determinant_function: determinant,
                    })
                }
            };
            let state_function = match state_function {
                None => None,
                Some(sf) => Some((sf.psi0, at_least_one("state_function.intervals", sf.intervals)?)),
            };
            let loci = match loci {
                None => None,
                Some(l) => Some(LociTask {
                    determinant: parse_expr("loci.determinant", &l.determinant)?,
                    bounds: l.bounds.iter().map(|&[lo, hi]| (lo, hi)).collect(),
                    resolution: at_least_one("loci.resolution", l.resolution)?,
                    tolerance: positive("loci.tolerance", l.tolerance)?,
                    output_csv: l.output_csv,
                }),
            };
            if state_function.is_some() && pseudostructure.is_none() {
                return Err(schema(
                    "state_function",
                    "requires a pseudostructure to integrate over",
                ));
            }
            Ok(ProblemSpec::Evolution {
                relation,
                tolerance: positive("tolerance", tolerance)?,
                sampling,
                pseudostructure,
                state_function,
                loci,
            })
        }
    }
}

fn build_form(
    chart: Arc<Chart>,
    degree: usize,
    coeffs: Vec<Expression>,
) -> Result<DifferentialForm, CliError> {
    if degree == 0 || degree > chart.dim() {
        return Err(schema("degree", format!("degree must be in 1..={}", chart.dim())));
    }
    if degree == 1 {
        return DifferentialForm::one_form(chart, coeffs)
            .map_err(|e| schema("coefficients", e.to_string()));
    }
    // canonical increasing multi-indices, lexicographic
    let mut indices = Vec::new();
    enumerate_indices(chart.dim(), degree, 0, &mut Vec::new(), &mut indices);
    if coeffs.len() != indices.len() {
        return Err(schema(
            "coefficients",
            format!("expected {} coefficients for degree {degree}", indices.len()),
        ));
    }
    let mut form = DifferentialForm::zero(chart, degree);
    for (idx, c) in indices.into_iter().zip(coeffs) {
        form.add_term(&idx, c);
    }
    Ok(form)
}

fn enumerate_indices(
    n: usize,
    k: usize,
    start: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if k == 0 {
        out.push(prefix.clone());
        return;
    }
    for i in start..=n.saturating_sub(k) {
        prefix.push(i);
        enumerate_indices(n, k - 1, i + 1, prefix, out);
        prefix.pop();
    }
}

/// Parses and validates a JSON spec document.
pub fn parse_spec(text: &str) -> Result<ProblemSpec, CliError> {
    let raw: RawSpec = serde_json::from_str(text)?;
    validate(raw)
}

/// Loads a spec file and validates it; every embedded expression is parsed
/// here, so `run` starts from a fully checked problem.
pub fn load_spec(path: &Path) -> Result<ProblemSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    parse_spec(&text)
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisReport {
    lines: Vec<(String, String)>,
    checks: Vec<Check>,
}

impl AnalysisReport {
    fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.to_string(), passed, detail: detail.into() });
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// 0 iff every verdict passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            1
        }
    }

    /// Aligned `key: value` lines followed by one verdict line per check
    /// and a final overall verdict. Deterministic for identical inputs.
    pub fn render(&self) -> String {
        let mut rows: Vec<(String, String)> = self.lines.clone();
        for c in &self.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            rows.push((format!("check {}", c.name), format!("{verdict} — {}", c.detail)));
        }
        rows.push((
            "verdict".to_string(),
            if self.all_passed() { "pass".to_string() } else { "fail".to_string() },
        ));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$} : {v}\n"));
        }
        out
    }
}

fn write_csv_atomic(
    path: &Path,
    write: impl FnOnce(&mut fs::File) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let wrap = |source: std::io::Error| CliError::WriteArtifact { path: path.to_path_buf(), source };
    let file_name = path
        .file_name()
        .ok_or_else(|| wrap(std::io::Error::other("path has no file name")))?;
    let tmp = path.with_file_name(format!(
        "{}.{}.tmp",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let mut out = fs::File::create(&tmp).map_err(wrap)?;
    let result = write(&mut out).and_then(|_| out.sync_all());
    drop(out);
    match result {
        Ok(()) => fs::rename(&tmp, path).map_err(wrap),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(wrap(e))
        }
    }
}

fn fail(check: &str, e: impl std::fmt::Display) -> CliError {
    CliError::CheckFailed { check: check.to_string(), message: e.to_string() }
}

/// Runs a validated spec. `Err` is an operational failure (exit 2);
/// a returned report carries its own verdict-based exit code (0 or 1).
pub fn run(spec: &ProblemSpec) -> Result<AnalysisReport, CliError> {
    let mut report = AnalysisReport::default();
    match spec {
        ProblemSpec::PdeAnalysis { form, tolerance, sampling } => {
            report.put("kind", "pde-analysis");
            report.put("chart", form.chart().names().join(","));
            report.put("degree", form.degree());
            report.put("seed", sampling.seed);
            report.put("samples", sampling.samples);
            let points = sampling.points(form.chart());
            let closure = form
                .is_closed(&points, *tolerance)
                .map_err(|e| fail("closure", e))?;
            report.put("closure max residual", closure.max_residual);
            if let (Some(pi), Some(idx)) = (closure.worst_point, &closure.worst_index) {
                report.put(
                    "closure worst",
                    format!("sample {pi}, component {idx:?}"),
                );
            }
            report.check(
                "closure",
                closure.closed,
                format!("max |d-coefficient| {} vs tolerance {tolerance}", closure.max_residual),
            );
            if form.degree() == 1 {
                let commutator = form.commutator().map_err(|e| fail("commutator", e))?;
                let measure = commutator
                    .max_abs_at(&points)
                    .map_err(|e| fail("commutator", e))?;
                report.put("commutator max entry", measure);
                report.check(
                    "commutator",
                    measure <= *tolerance,
                    format!("max |K_ij| {measure} vs tolerance {tolerance}"),
                );
            }
        }
        ProblemSpec::Characteristics { pde, start, ds, steps, tolerance, output_csv } => {
            report.put("kind", "characteristics");
            report.put("chart", pde.chart().names().join(","));
            report.put("ds", ds);
            report.put("steps", steps);
            let strip = pde
                .integrate_strip(start, *ds, *steps)
                .map_err(|e| fail("characteristic strip", e))?;
            let cert = charpit::generalized_solution_certificate(&strip, pde, *tolerance)
                .map_err(|e| fail("solution certificate", e))?;
            let end = strip.endpoint();
            report.put("endpoint x", csv_row(&end.x));
            report.put("endpoint u", end.u);
            report.put("max |F|", cert.max_f_residual);
            report.put("max strip residual", cert.max_strip_residual);
            report.check(
                "surface residual",
                cert.max_f_residual <= *tolerance,
                format!("max |F| {} vs tolerance {tolerance}", cert.max_f_residual),
            );
            report.check(
                "strip condition",
                cert.max_strip_residual <= *tolerance,
                format!("max residual {} vs tolerance {tolerance}", cert.max_strip_residual),
            );
            if let Some(path) = output_csv {
                write_csv_atomic(path, |out| charpit::write_strip_csv(&strip, pde, out))?;
                report.put("strip csv", path.display());
            }
        }
        ProblemSpec::Hamilton {
            sys, q0, p0, t0, dt, steps, tolerance, poincare_tolerance, output_csv,
        } => {
            report.put("kind", "hamilton");
            report.put("dof", sys.dof());
            report.put("dt", dt);
            report.put("steps", steps);
            let traj = sys
                .integrate(q0, p0, *t0, *dt, *steps)
                .map_err(|e| fail("hamiltonian flow", e))?;
            let e0 = sys.energy(*t0, q0, p0).map_err(|e| fail("energy", e))?;
            let mut drift = 0.0f64;
            for s in &traj.samples {
                let e = sys.energy(s.t, &s.q, &s.p).map_err(|e| fail("energy", e))?;
                drift = drift.max((e - e0).abs());
            }
            let end = traj.endpoint();
            report.put("endpoint t", end.t);
            report.put("endpoint q", csv_row(&end.q));
            report.put("endpoint p", csv_row(&end.p));
            report.put("action S", end.action);
            report.put("energy drift", drift);
            report.check(
                "energy drift",
                drift <= *tolerance,
                format!("max |H - H0| {drift} vs tolerance {tolerance}"),
            );
            if let Some(pt) = poincare_tolerance {
                let res = hamilton::poincare_residual(sys, &traj)
                    .map_err(|e| fail("invariant 1-form", e))?;
                report.put("invariant residual", res);
                report.check(
                    "invariant 1-form",
                    res <= *pt,
                    format!("max |dS - (p dq - H dt)|/dt {res} vs tolerance {pt}"),
                );
            }
            if let Some(path) = output_csv {
                write_csv_atomic(path, |out| hamilton::write_trajectory_csv(&traj, sys, out))?;
                report.put("trajectory csv", path.display());
            }
        }
        ProblemSpec::MaxwellCheck { source, tolerance, output_csv } => {
            report.put("kind", "maxwell-check");
            let field: FieldStrength2Form = match source {
                MaxwellSource::Analytic { grid, e, b } => {
                    let sample3 = |exprs: &[Expression; 3]| -> Result<[ndarray::Array4<f64>; 3], CliError> {
                        let mut arrays = Vec::with_capacity(3);
                        for expr in exprs {
                            arrays.push(
                                grid.sample_expression(expr).map_err(|e| fail("field sampling", e))?,
                            );
                        }
                        Ok(arrays.try_into().expect("three components"))
                    };
                    FieldStrength2Form::assemble_from_eb(grid.clone(), sample3(e)?, sample3(b)?)
                        .map_err(|e| fail("field assembly", e))?
                }
                MaxwellSource::Csv(path) => {
                    let file = fs::File::open(path)
                        .map_err(|source| CliError::Read { path: path.clone(), source })?;
                    maxwell::read_fields_csv(std::io::BufReader::new(file))
                        .map_err(|e| fail("field csv", e))?
                }
            };
            let shape = field.grid().shape();
            report.put("grid shape", format!("{}x{}x{}x{}", shape[0], shape[1], shape[2], shape[3]));
            let cert = maxwell::certify_physical_structure(&field, *tolerance);
            report.put("max |dF|", cert.residuals.d_max);
            report.put("max |d*F|", cert.residuals.dual_max);
            report.put("worst dF node", format!("{:?}", cert.residuals.d_worst));
            report.put("worst d*F node", format!("{:?}", cert.residuals.dual_worst));
            report.check(
                "closure dF",
                cert.residuals.d_max <= *tolerance,
                format!("max residual {} vs tolerance {tolerance}", cert.residuals.d_max),
            );
            report.check(
                "closure d*F",
                cert.residuals.dual_max <= *tolerance,
                format!("max residual {} vs tolerance {tolerance}", cert.residuals.dual_max),
            );
            if let Some(path) = output_csv {
                write_csv_atomic(path, |out| maxwell::write_fields_csv(&field, out))?;
                report.put("fields csv", path.display());
            }
        }
        ProblemSpec::Evolution {
            relation, tolerance, sampling, pseudostructure, state_function, loci,
        } => {
            report.put("kind", "evolution");
            report.put("chart", relation.chart().names().join(","));
            report.put("degree", relation.degree());
            report.put("interaction", relation.interaction().label());
            match relation.omega() {
                OmegaForm::Scalar(_) => {
                    report.put("measure", "undefined for degree 0");
                }
                OmegaForm::Form(_) => {
                    let points = sampling.points(relation.chart());
                    let measure = evolution::nonidentity_measure(relation, &points)
                        .map_err(|e| fail("nonidentity measure", e))?;
                    report.put("nonidentity measure", measure);
                    if measure <= *tolerance {
                        report.check(
                            "relation identity",
                            true,
                            format!("identical, measure {measure}"),
                        );
                    } else if let Some(ps) = pseudostructure {
                        report.put("pseudostructure", ps.param_names.join(","));
                        let (restricted, rr) = evolution::restrict_to_pseudostructure(relation, ps)
                            .map_err(|e| fail("pseudostructure restriction", e))?;
                        report.put("pullback", rr.pullback_coefficients.join("; "));
                        report.check(
                            "relation identity",
                            rr.closed,
                            format!(
                                "nonidentical, measure {measure}; restriction closed on pseudostructure"
                            ),
                        );
                        if let Some(&(psi0, intervals)) = state_function.as_ref() {
                            let bounds = ps.param_bounds[0];
                            let sf = evolution::extract_state_function(
                                &restricted,
                                bounds,
                                bounds.0,
                                psi0,
                                intervals,
                            )
                            .map_err(|e| fail("state function", e))?;
                            let last = *sf.values.last().expect("at least one node");
                            report.put("state function end", last);
                            report.put("quadrature error", sf.quadrature_error);
                            report.check(
                                "state function",
                                sf.quadrature_error <= *tolerance,
                                format!(
                                    "quadrature error {} vs tolerance {tolerance}",
                                    sf.quadrature_error
                                ),
                            );
                        }
                    } else {
                        report.check(
                            "relation identity",
                            false,
                            format!("nonidentical, measure {measure}; no pseudostructure declared"),
                        );
                    }
                }
            }
            if let Some(task) = loci {
                let points = evolution::detect_degenerate_loci(
                    &task.determinant,
                    relation.chart(),
                    &task.bounds,
                    task.resolution,
                    task.tolerance,
                )
                .map_err(|e| fail("degenerate loci", e))?;
                report.put("locus points", points.len());
                report.check(
                    "degenerate locus",
                    !points.is_empty(),
                    format!(
                        "{} points with |D| <= {}",
                        points.len(),
                        task.tolerance
                    ),
                );
                if let Some(path) = &task.output_csv {
                    write_csv_atomic(path, |out| {
                        evolution::write_loci_csv(&points, relation.chart(), out)
                    })?;
                    report.put("loci csv", path.display());
                }
            }
        }
    }
    Ok(report)
}

fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transport_spec(csv: Option<&str>) -> String {
        let output = match csv {
            Some(p) => format!(", \"output_csv\": \"{p}\""),
            None => String::new(),
        };
        format!(
            r#"{{
              "kind": "characteristics",
              "chart": {{ "names": ["x1", "x2"] }},
              "f": "p1 + 2*p2",
              "start": {{ "x": [0, 0], "u": 0, "p": [1, -0.5] }},
              "ds": 0.01,
              "steps": 100,
              "tolerance": 1e-12{output}
            }}"#
        )
    }

    #[test]
    fn transport_spec_parses() {
        let spec = parse_spec(&transport_spec(None)).unwrap();
        assert!(matches!(spec, ProblemSpec::Characteristics { steps: 100, .. }));
    }

    #[test]
    fn transport_run_passes() {
        let spec = parse_spec(&transport_spec(None)).unwrap();
        let report = run(&spec).unwrap();
        assert_eq!(report.exit_code(), 0);
        let text = report.render();
        assert!(text.contains("verdict"), "{text}");
        assert!(text.contains("PASS"));
    }

    #[test]
    fn negative_tolerance_rejected() {
        let bad = transport_spec(None).replace("1e-12", "-1");
        let err = parse_spec(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tolerance") && msg.contains("> 0"), "{msg}");
    }

    #[test]
    fn expression_error_carries_offset() {
        let bad = transport_spec(None).replace("p1 + 2*p2", "p1 + * p2");
        let err = parse_spec(&bad).unwrap_err();
        match err {
            CliError::Expression { field, source } => {
                assert_eq!(field, "f");
                assert!(source.to_string().contains("byte 5"), "{source}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        let err = parse_spec(r#"{ "kind": "unknown" }"#).unwrap_err();
        assert!(matches!(err, CliError::Json(_)));
    }

    #[test]
    fn rotation_relation_fails_without_pseudostructure() {
        let spec = parse_spec(
            r#"{
              "kind": "evolution",
              "chart": { "names": ["x", "y"] },
              "degree": 1,
              "coefficients": ["-y", "x"],
              "tolerance": 1e-9
            }"#,
        )
        .unwrap();
        let report = run(&spec).unwrap();
        assert_eq!(report.exit_code(), 1);
        let text = report.render();
        assert!(text.contains("nonidentical, measure 2"), "{text}");
        assert!(text.contains("weak"));
    }

    #[test]
    fn rotation_relation_passes_on_circle() {
        let spec = parse_spec(
            r#"{
              "kind": "evolution",
              "chart": { "names": ["x", "y"] },
              "degree": 1,
              "coefficients": ["-y", "x"],
              "tolerance": 1e-9,
              "pseudostructure": {
                "parameters": ["tau"],
                "bounds": [[0, 6.283185307179586]],
                "map": ["cos(tau)", "sin(tau)"]
              },
              "state_function": { "intervals": 128 }
            }"#,
        )
        .unwrap();
        let report = run(&spec).unwrap();
        assert_eq!(report.exit_code(), 0, "{}", report.render());
        assert!(report.render().contains("restriction closed"));
    }

    #[test]
    fn exact_one_form_analysis_passes() {
        let spec = parse_spec(
            r#"{
              "kind": "pde-analysis",
              "chart": { "names": ["x", "y"] },
              "degree": 1,
              "coefficients": ["y", "x"],
              "tolerance": 1e-12
            }"#,
        )
        .unwrap();
        let report = run(&spec).unwrap();
        assert_eq!(report.exit_code(), 0, "{}", report.render());
    }

    #[test]
    fn reports_are_reproducible() {
        let spec_text = r#"{
          "kind": "pde-analysis",
          "chart": { "names": ["x", "y", "z"] },
          "degree": 1,
          "coefficients": ["y*z", "x*z + 1", "x*y"],
          "tolerance": 1e-10,
          "seed": 42,
          "samples": 50
        }"#;
        let a = run(&parse_spec(spec_text).unwrap()).unwrap().render();
        let b = run(&parse_spec(spec_text).unwrap()).unwrap().render();
        assert_eq!(a, b);
    }

    #[test]
    fn strip_csv_written_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("strip.csv");
        let spec = parse_spec(&transport_spec(Some(csv.to_str().unwrap()))).unwrap();
        let report = run(&spec).unwrap();
        assert_eq!(report.exit_code(), 0);
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("s,x1,x2,u,p1,p2,F_residual,strip_residual\n"));
        assert_eq!(text.lines().count(), 102);
        // no leftover temp files
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path() != csv)
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn missing_spec_file_is_operational_error() {
        let err = load_spec(Path::new("/nonexistent/spec.json")).unwrap_err();
        assert!(matches!(err, CliError::Read { .. }));
    }

    #[test]
    fn maxwell_grid_resolution_validated() {
        let err = parse_spec(
            r#"{
              "kind": "maxwell-check",
              "grid": { "shape": [4, 8, 8, 8], "spacing": [0.1, 0.1, 0.1, 0.1] },
              "fields": { "e": ["0", "0", "0"], "b": ["0", "0", "0"] },
              "tolerance": 1e-12
            }"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("resolutions >= 5"), "{err}");
    }

    #[test]
    fn maxwell_constant_field_passes() {
        let spec = parse_spec(
            r#"{
              "kind": "maxwell-check",
              "grid": { "shape": [6, 6, 6, 6], "spacing": [0.1, 0.1, 0.1, 0.1] },
              "fields": { "e": ["1", "0", "0"], "b": ["0", "0", "2"] },
              "tolerance": 1e-15
            }"#,
        )
        .unwrap();
        let report = run(&spec).unwrap();
        assert_eq!(report.exit_code(), 0, "{}", report.render());
    }

    #[test]
    fn hamilton_oscillator_spec_runs() {
        let spec = parse_spec(
            r#"{
              "kind": "hamilton",
              "dof": 1,
              "h": "(p1^2 + q1^2) / 2",
              "q0": [1], "p0": [0],
              "dt": 0.001, "steps": 1000,
              "tolerance": 1e-9,
              "poincare_tolerance": 1e-6
            }"#,
        )
        .unwrap();
        let report = run(&spec).unwrap();
        assert_eq!(report.exit_code(), 0, "{}", report.render());
    }

    #[test]
    fn seed_env_override() {
        // effective_seed reads the env var; restore it afterwards
        std::env::set_var("FORMFLOW_SEED", "17");
        assert_eq!(effective_seed(3), 17);
        std::env::remove_var("FORMFLOW_SEED");
        assert_eq!(effective_seed(3), 3);
    }
}
