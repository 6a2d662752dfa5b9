//! Evolutionary relations `dψ = ω^p`: the commutator-based nonidentity
//! measure, detection of degenerate-transformation loci (zero sets of
//! determinant functions), restriction (pullback) to pseudostructures
//! where the relation becomes identical, and recovery of the state
//! function along a 1-D pseudostructure by quadrature.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::forms::{Chart, DifferentialForm, FormsError};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("form degree must be in 0..=3, got {0}")]
    DegreeOutOfRange(usize),
    #[error("expected {expected} coefficients for degree {degree} on a {dim}-dimensional chart, got {got}")]
    CoefficientCount { expected: usize, got: usize, degree: usize, dim: usize },
    #[error("provenance tags ({got}) do not match coefficient count ({expected})")]
    ProvenanceCount { expected: usize, got: usize },
    #[error("nonidentity measure is undefined for degree 0")]
    DegreeZeroMeasure,
    #[error("pseudostructure dimension {structure} does not match form degree {degree}")]
    RestrictionMismatch { structure: usize, degree: usize },
    #[error("pseudostructure parametrization has {got} component maps for a chart of dimension {expected}")]
    ParametrizationCount { expected: usize, got: usize },
    #[error("parametrization component references `{0}`, not a declared parameter")]
    UndeclaredParameter(String),
    #[error("pseudostructure must have at least one parameter and fewer than the chart dimension")]
    BadStructureDimension,
    #[error("restricted form must be a 1-form on a 1-D parameter box")]
    NotAOneForm,
    #[error("integration start {0} lies outside the parameter box")]
    StartOutsideBox(f64),
    #[error("scan resolution must be at least 1")]
    BadResolution,
    #[error("bounds count {got} does not match chart dimension {expected}")]
    BoundsCount { expected: usize, got: usize },
    #[error("singular integrand at tau = {0}: {1}")]
    SingularIntegrand(f64, String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Forms(#[from] FormsError),
}

/// Origin of an evolutionary coefficient: the along-trajectory coefficient
/// comes from the energy balance, the normal ones from the force balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Energy,
    Force,
}

/// Interaction type assigned to the form degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    Strong,
    Weak,
    Electromagnetic,
    Gravitational,
}

impl Interaction {
    pub fn label(self) -> &'static str {
        match self {
            Interaction::Strong => "strong",
            Interaction::Weak => "weak",
            Interaction::Electromagnetic => "electromagnetic",
            Interaction::Gravitational => "gravitational",
        }
    }
}

/// Degree p → interaction: 0 strong, 1 weak, 2 electromagnetic,
/// 3 gravitational.
pub fn classify_interaction(degree: usize) -> Result<Interaction, EvolutionError> {
    match degree {
        0 => Ok(Interaction::Strong),
        1 => Ok(Interaction::Weak),
        2 => Ok(Interaction::Electromagnetic),
        3 => Ok(Interaction::Gravitational),
        d => Err(EvolutionError::DegreeOutOfRange(d)),
    }
}

/// Right-hand side of the evolutionary relation: a single expression for
/// degree 0, a differential form otherwise.
#[derive(Debug, Clone)]
pub enum OmegaForm {
    Scalar(Expression),
    Form(DifferentialForm),
}

/// The relation `dψ = ω^p` on an accompanying chart, with per-coefficient
/// provenance tags.
#[derive(Debug, Clone)]
pub struct EvolutionaryRelation {
    chart: Arc<Chart>,
    degree: usize,
    omega: OmegaForm,
    provenance: Vec<Provenance>,
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Assembles an evolutionary relation. For degree 1 the coefficients are
/// `A_mu` in chart order; for degree 2 and 3 they are the coefficients of
/// the canonical increasing multi-indices in lexicographic order (the
/// higher-degree coefficients are caller-supplied data).
pub fn build_relation(
    chart: Arc<Chart>,
    coefficients: Vec<Expression>,
    degree: usize,
    provenance: Vec<Provenance>,
) -> Result<EvolutionaryRelation, EvolutionError> {
    if degree > 3 {
        return Err(EvolutionError::DegreeOutOfRange(degree));
    }
    let n = chart.dim();
    let expected = binomial(n, degree.max(1).min(n));
    let expected = if degree == 0 { 1 } else { expected };
    if coefficients.len() != expected {
        return Err(EvolutionError::CoefficientCount {
            expected,
            got: coefficients.len(),
            degree,
            dim: n,
        });
    }
    if !provenance.is_empty() && provenance.len() != coefficients.len() {
        return Err(EvolutionError::ProvenanceCount {
            expected: coefficients.len(),
            got: provenance.len(),
        });
    }
    let omega = if degree == 0 {
        OmegaForm::Scalar(coefficients.into_iter().next().expect("one coefficient"))
    } else if degree == 1 {
        OmegaForm::Form(DifferentialForm::one_form(chart.clone(), coefficients)?)
    } else {
        let mut form = DifferentialForm::zero(chart.clone(), degree);
        let indices = increasing_indices(n, degree);
        for (idx, c) in indices.into_iter().zip(coefficients) {
            form.add_term(&idx, c);
        }
        OmegaForm::Form(form)
    };
    Ok(EvolutionaryRelation { chart, degree, omega, provenance })
}

fn increasing_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 0 {
            out.push(prefix.clone());
            return;
        }
        for i in start..=n.saturating_sub(k) {
            prefix.push(i);
            rec(i + 1, n, k - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

impl EvolutionaryRelation {
    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn omega(&self) -> &OmegaForm {
        &self.omega
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn interaction(&self) -> Interaction {
        classify_interaction(self.degree).expect("degree validated at construction")
    }
}

/// Max commutator magnitude over the sample points: max-abs commutator
/// entry for degree 1, max-abs coefficient of dω for degree ≥ 2. Zero
/// means the relation is identical on the sampled region.
pub fn nonidentity_measure(
    rel: &EvolutionaryRelation,
    samples: &[HashMap<String, f64>],
) -> Result<f64, EvolutionError> {
    match &rel.omega {
        OmegaForm::Scalar(_) => Err(EvolutionError::DegreeZeroMeasure),
        OmegaForm::Form(form) => {
            if rel.degree == 1 {
                Ok(form.commutator()?.max_abs_at(samples)?)
            } else {
                Ok(form.exterior_derivative().max_abs_at(samples)?)
            }
        }
    }
}

/// A point on a degenerate locus, carrying the determinant value there.
#[derive(Debug, Clone)]
pub struct LocusPoint {
    pub coords: Vec<f64>,
    pub value: f64,
}

/// Finds points where `|D| <= tol` inside an axis-aligned box: grid scan
/// for near-zero nodes plus bisection along sign-changing grid edges.
/// Every returned point satisfies `|D(point)| <= tol`.
pub fn detect_degenerate_loci(
    d: &Expression,
    chart: &Chart,
    bounds: &[(f64, f64)],
    resolution: usize,
    tol: f64,
) -> Result<Vec<LocusPoint>, EvolutionError> {
    if resolution == 0 {
        return Err(EvolutionError::BadResolution);
    }
    let n = chart.dim();
    if bounds.len() != n {
        return Err(EvolutionError::BoundsCount { expected: n, got: bounds.len() });
    }
    let steps: Vec<f64> = bounds
        .iter()
        .map(|(lo, hi)| (hi - lo) / resolution as f64)
        .collect();
    let node = |idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(a, &k)| bounds[a].0 + k as f64 * steps[a])
            .collect()
    };
    let eval = |coords: &[f64]| -> Option<f64> {
        match d.evaluate(&chart.point(coords)) {
            Ok(v) => Some(v),
            Err(ExprError::Singular(_)) => None,
            // unbound variables would be a caller bug; surface as None too
            Err(_) => None,
        }
    };
    let mut points = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let coords = node(&idx);
        if let Some(v) = eval(&coords) {
            if v.abs() <= tol {
                points.push(LocusPoint { coords: coords.clone(), value: v });
            } else {
                // bisect along each axis edge with a sign change
                for a in 0..n {
                    if idx[a] + 1 > resolution {
                        continue;
                    }
                    let mut next = idx.clone();
                    next[a] += 1;
                    let coords_next = node(&next);
                    if let Some(w) = eval(&coords_next) {
                        if w.abs() > tol && v * w < 0.0 {
                            if let Some(p) = bisect_edge(d, chart, &coords, &coords_next, v, tol) {
                                points.push(p);
                            }
                        }
                    }
                }
            }
        }
        // advance the mixed-radix counter over grid nodes
        let mut a = 0;
        loop {
            if a == n {
                return Ok(points);
            }
            if idx[a] < resolution {
                idx[a] += 1;
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

fn bisect_edge(
    d: &Expression,
    chart: &Chart,
    lo: &[f64],
    hi: &[f64],
    f_lo: f64,
    tol: f64,
) -> Option<LocusPoint> {
    let mut a = lo.to_vec();
    let mut b = hi.to_vec();
    let mut fa = f_lo;
    for _ in 0..200 {
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let fm = d.evaluate(&chart.point(&mid)).ok()?;
        if fm.abs() <= tol {
            return Some(LocusPoint { coords: mid, value: fm });
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    None
}

/// Explicit lower-dimensional parametrized set; the optional determinant
/// function is the dual-side closure condition whose zero locus the
/// parametrization traces.
#[derive(Debug, Clone)]
pub struct Pseudostructure {
    pub param_names: Vec<String>,
    pub param_bounds: Vec<(f64, f64)>,
    /// Chart coordinates as expressions of the parameters, in chart order.
    pub map: Vec<Expression>,
    pub determinant_function: Option<Expression>,
}

impl Pseudostructure {
    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    fn validate(&self, chart: &Chart) -> Result<(), EvolutionError> {
        if self.dim() == 0 || self.dim() >= chart.dim() {
            return Err(EvolutionError::BadStructureDimension);
        }
        if self.map.len() != chart.dim() {
            return Err(EvolutionError::ParametrizationCount {
                expected: chart.dim(),
                got: self.map.len(),
            });
        }
        for comp in &self.map {
            for v in comp.free_variables() {
                if !self.param_names.contains(v) {
                    return Err(EvolutionError::UndeclaredParameter(v.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Report accompanying a restriction: top-degree pullbacks on a
/// d-dimensional structure are closed by dimension.
#[derive(Debug, Clone)]
pub struct RestrictionReport {
    pub closed: bool,
    pub pullback_coefficients: Vec<String>,
}

/// Pullback of ω through the pseudostructure parametrization (chain rule),
/// for degree 1 on a 1-D structure or degree 2 on a 2-D structure, so that
/// the restriction is a top form and the relation becomes identical.
pub fn restrict_to_pseudostructure(
    rel: &EvolutionaryRelation,
    ps: &Pseudostructure,
) -> Result<(DifferentialForm, RestrictionReport), EvolutionError> {
    ps.validate(&rel.chart)?;
    let form = match &rel.omega {
        OmegaForm::Form(f) => f,
        OmegaForm::Scalar(_) => {
            return Err(EvolutionError::RestrictionMismatch { structure: ps.dim(), degree: 0 })
        }
    };
    let d = ps.dim();
    if rel.degree != d || !(rel.degree == 1 || rel.degree == 2) {
        return Err(EvolutionError::RestrictionMismatch { structure: d, degree: rel.degree });
    }
    let name_refs: Vec<&str> = ps.param_names.iter().map(|s| s.as_str()).collect();
    let param_chart = Chart::euclidean(&name_refs);
    let subst: HashMap<String, Expression> = rel
        .chart
        .names()
        .iter()
        .cloned()
        .zip(ps.map.iter().cloned())
        .collect();
    // Jacobian ∂φ_i/∂τ_a
    let jac: Vec<Vec<Expression>> = ps
        .map
        .iter()
        .map(|comp| ps.param_names.iter().map(|p| comp.differentiate(p)).collect())
        .collect();
    let mut restricted = DifferentialForm::zero(param_chart, d);
    match d {
        1 => {
            let mut coeff = Expression::zero();
            for (idx, c) in form.terms() {
                let i = idx[0];
                coeff = coeff.add(&c.substitute(&subst).mul(&jac[i][0]));
            }
            restricted.add_term(&[0], coeff);
        }
        2 => {
            let mut coeff = Expression::zero();
            for (idx, c) in form.terms() {
                let (i, j) = (idx[0], idx[1]);
                let minor = jac[i][0]
                    .mul(&jac[j][1])
                    .sub(&jac[i][1].mul(&jac[j][0]));
                coeff = coeff.add(&c.substitute(&subst).mul(&minor));
            }
            restricted.add_term(&[0, 1], coeff);
        }
        _ => unreachable!("degree checked above"),
    }
    let closed = restricted.exterior_derivative().is_structurally_zero();
    let report = RestrictionReport {
        closed,
        pullback_coefficients: restricted.terms().map(|(_, c)| c.to_string()).collect(),
    };
    Ok((restricted, report))
}

/// The state function recovered on a 1-D pseudostructure.
#[derive(Debug, Clone)]
pub struct StateFunction {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    /// Max deviation against a half-step requadrature.
    pub quadrature_error: f64,
}

/// Integrates `ψ(τ) = ψ0 + ∫_{τ0}^{τ} a(σ) dσ` for a restricted 1-form
/// `a(τ) dτ` by per-interval Simpson quadrature on a uniform grid over
/// `bounds`. `τ0` must be the left endpoint of the box.
pub fn extract_state_function(
    restricted: &DifferentialForm,
    bounds: (f64, f64),
    tau0: f64,
    psi0: f64,
    intervals: usize,
) -> Result<StateFunction, EvolutionError> {
    if restricted.degree() != 1 || restricted.chart().dim() != 1 {
        return Err(EvolutionError::NotAOneForm);
    }
    if tau0 != bounds.0 {
        return Err(EvolutionError::StartOutsideBox(tau0));
    }
    let intervals = intervals.max(1);
    let a = restricted.coeff(&[0]);
    let chart = restricted.chart().clone();
    let eval = |tau: f64| -> Result<f64, EvolutionError> {
        a.evaluate(&chart.point(&[tau]))
            .map_err(|e| EvolutionError::SingularIntegrand(tau, e.to_string()))
    };
    let run = |m: usize| -> Result<(Vec<f64>, Vec<f64>), EvolutionError> {
        let h = (bounds.1 - bounds.0) / m as f64;
        let mut taus = Vec::with_capacity(m + 1);
        let mut values = Vec::with_capacity(m + 1);
        let mut psi = psi0;
        taus.push(tau0);
        values.push(psi);
        for k in 0..m {
            let t0 = bounds.0 + k as f64 * h;
            let t1 = t0 + h;
            let mid = 0.5 * (t0 + t1);
            psi += h / 6.0 * (eval(t0)? + 4.0 * eval(mid)? + eval(t1)?);
            taus.push(t1);
            values.push(psi);
        }
        Ok((taus, values))
    };
    let (taus, values) = run(intervals)?;
    let (_, fine) = run(2 * intervals)?;
    let mut err = 0.0f64;
    for (k, v) in values.iter().enumerate() {
        err = err.max((v - fine[2 * k]).abs());
    }
    Ok(StateFunction { taus, values, quadrature_error: err })
}

/// Line integral of a 1-form along a piecewise-linear path, per-segment
/// Simpson with `intervals` subintervals per segment. Used for path
/// independence checks of exact relations.
pub fn line_integral(
    omega: &DifferentialForm,
    waypoints: &[Vec<f64>],
    intervals: usize,
) -> Result<f64, EvolutionError> {
    if omega.degree() != 1 {
        return Err(EvolutionError::NotAOneForm);
    }
    let chart = omega.chart().clone();
    let n = chart.dim();
    let coeffs: Vec<Expression> = (0..n).map(|i| omega.coeff(&[i])).collect();
    let intervals = intervals.max(1);
    let mut total = 0.0;
    for seg in waypoints.windows(2) {
        let (a, b) = (&seg[0], &seg[1]);
        let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        let integrand = |s: f64| -> Result<f64, EvolutionError> {
            let coords: Vec<f64> = a.iter().zip(&delta).map(|(x, d)| x + s * d).collect();
            let env = chart.point(&coords);
            let mut acc = 0.0;
            for (c, d) in coeffs.iter().zip(&delta) {
                if *d != 0.0 {
                    acc += c
                        .evaluate(&env)
                        .map_err(|e| EvolutionError::SingularIntegrand(s, e.to_string()))?
                        * d;
                }
            }
            Ok(acc)
        };
        let h = 1.0 / intervals as f64;
        for k in 0..intervals {
            let s0 = k as f64 * h;
            let s1 = s0 + h;
            total += h / 6.0
                * (integrand(s0)? + 4.0 * integrand(0.5 * (s0 + s1))? + integrand(s1)?);
        }
    }
    Ok(total)
}

/// Writes locus points as CSV: one coordinate column per chart name plus
/// `abs_D`.
pub fn write_loci_csv<W: std::io::Write>(
    points: &[LocusPoint],
    chart: &Chart,
    out: &mut W,
) -> Result<(), std::io::Error> {
    writeln!(out, "{},abs_D", chart.names().join(","))?;
    for p in points {
        let coords: Vec<String> = p.coords.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{}", coords.join(","), p.value.abs())?;
    }
    Ok(())
}
