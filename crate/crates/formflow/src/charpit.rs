//! First-order PDE analysis by characteristics: the commutator of the
//! derivative 1-form, the characteristic (integrating) direction, the
//! degenerate-direction residual, strip integration, and certification of
//! generalized solutions.
//!
//! For `F(x^i, u, p_i) = 0` the integrating direction is
//! `dx^i = ∂F/∂p_i`, `dp_i = -(∂F/∂x^i + p_i ∂F/∂u)`, with the strip
//! condition `du = Σ p_i dx^i` adjoined.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::forms::{Chart, CommutatorTensor, DifferentialForm, FormsError};

#[derive(Debug, Error)]
pub enum CharpitError {
    #[error("F references undeclared variable `{0}`")]
    UndeclaredVariable(String),
    #[error("chart coordinate `{0}` collides with a reserved variable name")]
    ReservedName(String),
    #[error("F does not depend on any p_i; not a PDE in u")]
    NoMomentumDependence,
    #[error("stationary characteristic point: all dx^i vanish")]
    StationaryPoint,
    #[error("start point is off the equation surface: |F| = {0:.3e} > 1e-8")]
    OffSurface(f64),
    #[error("jet point has {got} entries for a chart of dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state encountered at step {0}")]
    NonFiniteState(usize),
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
    #[error("strip must take at least one step")]
    NoSteps,
    #[error("strip is empty")]
    EmptyStrip,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Forms(#[from] FormsError),
}

/// A point of the (2n+1)-dimensional jet space (x, u, p).
#[derive(Debug, Clone, PartialEq)]
pub struct JetPoint {
    pub x: Vec<f64>,
    pub u: f64,
    pub p: Vec<f64>,
}

impl JetPoint {
    pub fn new(x: Vec<f64>, u: f64, p: Vec<f64>) -> JetPoint {
        JetPoint { x, u, p }
    }

    fn is_finite(&self) -> bool {
        self.u.is_finite()
            && self.x.iter().all(|v| v.is_finite())
            && self.p.iter().all(|v| v.is_finite())
    }
}

/// The integrating direction at a jet point.
#[derive(Debug, Clone)]
pub struct StripDirection {
    pub dx: Vec<f64>,
    pub du: f64,
    pub dp: Vec<f64>,
}

/// `F(x^i, u, p_i)` with cached first partials. Coordinates come from the
/// chart; the unknown is named `u` and the momenta `p1..pn`.
#[derive(Debug, Clone)]
pub struct FirstOrderPDE {
    chart: Arc<Chart>,
    f: Expression,
    p_names: Vec<String>,
    fx: Vec<Expression>,
    fu: Expression,
    fp: Vec<Expression>,
}

impl FirstOrderPDE {
    pub fn new(chart: Arc<Chart>, f: Expression) -> Result<FirstOrderPDE, CharpitError> {
        let n = chart.dim();
        let p_names: Vec<String> = (1..=n).map(|i| format!("p{i}")).collect();
        for name in chart.names() {
            if name == "u" || p_names.contains(name) {
                return Err(CharpitError::ReservedName(name.clone()));
            }
        }
        for v in f.free_variables() {
            let declared =
                v == "u" || p_names.contains(v) || chart.names().contains(v);
            if !declared {
                return Err(CharpitError::UndeclaredVariable(v.clone()));
            }
        }
        let fx = chart.names().iter().map(|c| f.differentiate(c)).collect();
        let fu = f.differentiate("u");
        let fp: Vec<Expression> = p_names.iter().map(|p| f.differentiate(p)).collect();
        if fp.iter().all(|e| e.is_zero()) {
            return Err(CharpitError::NoMomentumDependence);
        }
        Ok(FirstOrderPDE { chart, f, p_names, fx, fu, fp })
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    fn env(&self, jp: &JetPoint) -> Result<HashMap<String, f64>, CharpitError> {
        let n = self.dim();
        if jp.x.len() != n || jp.p.len() != n {
            return Err(CharpitError::DimensionMismatch {
                expected: n,
                got: jp.x.len().max(jp.p.len()),
            });
        }
        let mut env = self.chart.point(&jp.x);
        env.insert("u".to_string(), jp.u);
        for (name, &v) in self.p_names.iter().zip(jp.p.iter()) {
            env.insert(name.clone(), v);
        }
        Ok(env)
    }

    /// `F` evaluated at a jet point.
    pub fn residual(&self, jp: &JetPoint) -> Result<f64, CharpitError> {
        Ok(self.f.evaluate(&self.env(jp)?)?)
    }

    /// The integrating direction: `dx^i = ∂F/∂p_i`,
    /// `dp_i = -(∂F/∂x^i + p_i ∂F/∂u)`, `du = Σ p_i dx^i`.
    pub fn characteristic_direction(&self, jp: &JetPoint) -> Result<StripDirection, CharpitError> {
        let env = self.env(jp)?;
        let n = self.dim();
        let mut dx = Vec::with_capacity(n);
        let mut dp = Vec::with_capacity(n);
        let fu = self.fu.evaluate(&env)?;
        for i in 0..n {
            dx.push(self.fp[i].evaluate(&env)?);
            dp.push(-(self.fx[i].evaluate(&env)? + jp.p[i] * fu));
        }
        if dx.iter().all(|v| *v == 0.0) {
            return Err(CharpitError::StationaryPoint);
        }
        let du = jp.p.iter().zip(dx.iter()).map(|(p, d)| p * d).sum();
        Ok(StripDirection { dx, du, dp })
    }

    /// Residual of the homogeneous solvability system along a candidate
    /// direction: `Σ (∂F/∂x^i + p_i ∂F/∂u) dx^i + Σ (∂F/∂p_i) dp_i`.
    /// Zero means the direction lies in the degenerate locus; the
    /// characteristic direction satisfies this identically.
    pub fn degenerate_condition(
        &self,
        jp: &JetPoint,
        dx: &[f64],
        dp: &[f64],
    ) -> Result<f64, CharpitError> {
        let env = self.env(jp)?;
        let fu = self.fu.evaluate(&env)?;
        let mut residual = 0.0;
        for i in 0..self.dim() {
            let cx = self.fx[i].evaluate(&env)? + jp.p[i] * fu;
            residual += cx * dx[i];
            residual += self.fp[i].evaluate(&env)? * dp[i];
        }
        Ok(residual)
    }

    fn rk4_step(&self, jp: &JetPoint, ds: f64) -> Result<JetPoint, CharpitError> {
        let stage = |jp: &JetPoint, dir: &StripDirection, frac: f64| -> JetPoint {
            JetPoint {
                x: jp.x.iter().zip(&dir.dx).map(|(x, d)| x + frac * ds * d).collect(),
                u: jp.u + frac * ds * dir.du,
                p: jp.p.iter().zip(&dir.dp).map(|(p, d)| p + frac * ds * d).collect(),
            }
        };
        let k1 = self.characteristic_direction(jp)?;
        let k2 = self.characteristic_direction(&stage(jp, &k1, 0.5))?;
        let k3 = self.characteristic_direction(&stage(jp, &k2, 0.5))?;
        let k4 = self.characteristic_direction(&stage(jp, &k3, 1.0))?;
        let n = self.dim();
        let mut next = jp.clone();
        for i in 0..n {
            next.x[i] += ds / 6.0 * (k1.dx[i] + 2.0 * k2.dx[i] + 2.0 * k3.dx[i] + k4.dx[i]);
            next.p[i] += ds / 6.0 * (k1.dp[i] + 2.0 * k2.dp[i] + 2.0 * k3.dp[i] + k4.dp[i]);
        }
        next.u += ds / 6.0 * (k1.du + 2.0 * k2.du + 2.0 * k3.du + k4.du);
        Ok(next)
    }

    /// Integrates the characteristic system with classical fixed-step RK4
    /// from a start point on the equation surface.
    pub fn integrate_strip(
        &self,
        start: &JetPoint,
        ds: f64,
        steps: usize,
    ) -> Result<CharacteristicStrip, CharpitError> {
        if ds <= 0.0 {
            return Err(CharpitError::InvalidStep(ds));
        }
        if steps == 0 {
            return Err(CharpitError::NoSteps);
        }
        let f0 = self.residual(start)?;
        if f0.abs() > 1e-8 {
            return Err(CharpitError::OffSurface(f0.abs()));
        }
        let mut samples = Vec::with_capacity(steps + 1);
        samples.push(start.clone());
        let mut current = start.clone();
        for step in 0..steps {
            current = self.rk4_step(&current, ds)?;
            if !current.is_finite() {
                return Err(CharpitError::NonFiniteState(step + 1));
            }
            samples.push(current.clone());
        }
        let mut strip = CharacteristicStrip {
            ds,
            samples,
            max_f_residual: 0.0,
            max_strip_residual: 0.0,
        };
        let (max_f, max_strip) = self.strip_diagnostics(&strip)?;
        strip.max_f_residual = max_f;
        strip.max_strip_residual = max_strip;
        Ok(strip)
    }

    /// Recomputes the strip diagnostics from the stored samples:
    /// max |F| over samples, and the per-step defect
    /// `|Δu - Σ w_k p·dx|/ds` against a re-run RK4 stage sum.
    pub fn strip_diagnostics(
        &self,
        strip: &CharacteristicStrip,
    ) -> Result<(f64, f64), CharpitError> {
        let mut max_f = 0.0f64;
        for jp in &strip.samples {
            max_f = max_f.max(self.residual(jp)?.abs());
        }
        let mut max_strip = 0.0f64;
        for w in strip.samples.windows(2) {
            let predicted = self.rk4_step(&w[0], strip.ds)?;
            max_strip = max_strip.max((w[1].u - predicted.u).abs() / strip.ds);
        }
        Ok((max_f, max_strip))
    }
}

/// A discrete characteristic trajectory (x(s), u(s), p(s)).
#[derive(Debug, Clone)]
pub struct CharacteristicStrip {
    pub ds: f64,
    pub samples: Vec<JetPoint>,
    pub max_f_residual: f64,
    pub max_strip_residual: f64,
}

impl CharacteristicStrip {
    pub fn endpoint(&self) -> &JetPoint {
        self.samples.last().expect("strip has at least the start sample")
    }
}

/// Verdict of the generalized-solution check: on the strip both the
/// equation residual and the strip condition must stay within `tol`.
#[derive(Debug, Clone)]
pub struct SolutionCertificate {
    pub valid: bool,
    pub tolerance: f64,
    pub max_f_residual: f64,
    pub max_strip_residual: f64,
}

/// Recomputes both residual maxima from the strip samples, so defects
/// injected after integration are detected.
pub fn generalized_solution_certificate(
    strip: &CharacteristicStrip,
    pde: &FirstOrderPDE,
    tol: f64,
) -> Result<SolutionCertificate, CharpitError> {
    if strip.samples.is_empty() {
        return Err(CharpitError::EmptyStrip);
    }
    let (max_f, max_strip) = pde.strip_diagnostics(strip)?;
    Ok(SolutionCertificate {
        valid: max_f <= tol && max_strip <= tol,
        tolerance: tol,
        max_f_residual: max_f,
        max_strip_residual: max_strip,
    })
}

/// Commutator of `θ = Σ p_i dx^i` for a derivative field given as
/// expressions over the chart coordinates. A zero tensor means the field
/// is a differential and the solution is a function, not a functional.
pub fn nonidentity_residual(
    chart: Arc<Chart>,
    p_field: &[Expression],
) -> Result<CommutatorTensor, CharpitError> {
    let theta = DifferentialForm::one_form(chart, p_field.to_vec())?;
    Ok(theta.commutator()?)
}

/// Writes a strip as CSV: `s,x1..xn,u,p1..pn,F_residual,strip_residual`.
pub fn write_strip_csv<W: Write>(
    strip: &CharacteristicStrip,
    pde: &FirstOrderPDE,
    out: &mut W,
) -> Result<(), std::io::Error> {
    let n = pde.dim();
    let mut header = String::from("s");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    header.push_str(",u");
    for i in 1..=n {
        header.push_str(&format!(",p{i}"));
    }
    header.push_str(",F_residual,strip_residual");
    writeln!(out, "{header}")?;
    for (k, jp) in strip.samples.iter().enumerate() {
        let f = pde.residual(jp).map_err(other_io)?;
        let strip_res = if k == 0 {
            0.0
        } else {
            let predicted = pde.rk4_step(&strip.samples[k - 1], strip.ds).map_err(other_io)?;
            (jp.u - predicted.u).abs() / strip.ds
        };
        let mut line = format!("{}", k as f64 * strip.ds);
        for v in &jp.x {
            line.push_str(&format!(",{v}"));
        }
        line.push_str(&format!(",{}", jp.u));
        for v in &jp.p {
            line.push_str(&format!(",{v}"));
        }
        line.push_str(&format!(",{f},{strip_res}"));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn other_io(e: CharpitError) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transport() -> FirstOrderPDE {
        let chart = Chart::euclidean(&["x1", "x2"]);
        FirstOrderPDE::new(chart, Expression::parse("p1 + 2*p2").unwrap()).unwrap()
    }

    fn eikonal() -> FirstOrderPDE {
        let chart = Chart::euclidean(&["x1", "x2"]);
        FirstOrderPDE::new(chart, Expression::parse("p1^2 + p2^2 - 1").unwrap()).unwrap()
    }

    fn growth() -> FirstOrderPDE {
        let chart = Chart::euclidean(&["x1"]);
        FirstOrderPDE::new(chart, Expression::parse("p1 - u").unwrap()).unwrap()
    }

    #[test]
    fn transport_direction() {
        let pde = transport();
        let jp = JetPoint::new(vec![0.4, -1.0], 2.0, vec![0.7, 3.0]);
        let dir = pde.characteristic_direction(&jp).unwrap();
        assert_eq!(dir.dx, vec![1.0, 2.0]);
        assert_eq!(dir.dp, vec![0.0, 0.0]);
        assert_eq!(dir.du, 0.7 + 2.0 * 3.0);
    }

    #[test]
    fn eikonal_direction() {
        let pde = eikonal();
        let jp = JetPoint::new(vec![0.0, 0.0], 0.0, vec![1.0, 0.0]);
        let dir = pde.characteristic_direction(&jp).unwrap();
        assert_eq!(dir.dx, vec![2.0, 0.0]);
        assert_eq!(dir.dp, vec![0.0, 0.0]);
        assert_eq!(dir.du, 2.0);
    }

    #[test]
    fn u_dependence_feeds_dp() {
        // F = p1 - u at p1 = 3: dp1 = -(0 + 3*(-1)) = 3
        let pde = growth();
        let jp = JetPoint::new(vec![0.0], 3.0, vec![3.0]);
        let dir = pde.characteristic_direction(&jp).unwrap();
        assert_eq!(dir.dp, vec![3.0]);
    }

    #[test]
    fn stationary_point_detected() {
        let pde = eikonal();
        let jp = JetPoint::new(vec![0.0, 0.0], 0.0, vec![0.0, 0.0]);
        assert!(matches!(
            pde.characteristic_direction(&jp),
            Err(CharpitError::StationaryPoint)
        ));
    }

    #[test]
    fn degenerate_condition_along_characteristic_direction() {
        let pde = growth();
        let jp = JetPoint::new(vec![0.5], 1.2, vec![1.2]);
        let dir = pde.characteristic_direction(&jp).unwrap();
        let r = pde.degenerate_condition(&jp, &dir.dx, &dir.dp).unwrap();
        assert!(r.abs() <= 1e-12);
    }

    #[test]
    fn degenerate_condition_transport_any_direction() {
        let pde = transport();
        let jp = JetPoint::new(vec![0.0, 0.0], 1.0, vec![0.3, -0.2]);
        let r = pde.degenerate_condition(&jp, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn degenerate_condition_off_characteristic() {
        // F = p1 - u at p1 = 3, direction dx = (1), dp = (0): residual -3
        let pde = growth();
        let jp = JetPoint::new(vec![0.0], 3.0, vec![3.0]);
        let r = pde.degenerate_condition(&jp, &[1.0], &[0.0]).unwrap();
        assert_eq!(r, -3.0);
    }

    #[test]
    fn transport_strip_is_straight_line() {
        let pde = transport();
        let start = JetPoint::new(vec![0.0, 0.0], 5.0, vec![-2.0, 1.0]); // F = 0
        let strip = pde.integrate_strip(&start, 0.01, 100).unwrap();
        let end = strip.endpoint();
        assert!((end.x[0] - 1.0).abs() <= 1e-12);
        assert!((end.x[1] - 2.0).abs() <= 1e-12);
        assert!((end.u - 5.0).abs() <= 1e-12);
        assert_eq!(end.p, vec![-2.0, 1.0]);
        assert!(strip.max_f_residual <= 1e-12);
    }

    #[test]
    fn eikonal_rays_are_straight() {
        let pde = eikonal();
        let start = JetPoint::new(vec![0.0, 0.0], 0.0, vec![1.0, 0.0]);
        let strip = pde.integrate_strip(&start, 0.01, 100).unwrap();
        let end = strip.endpoint();
        assert!((end.x[0] - 2.0).abs() <= 1e-10);
        assert!(end.x[1].abs() <= 1e-12);
        assert!((end.u - 2.0).abs() <= 1e-10);
        assert!(strip.max_strip_residual <= 1e-12);
    }

    #[test]
    fn off_surface_start_rejected() {
        let pde = transport();
        let start = JetPoint::new(vec![0.0, 0.0], 5.0, vec![-1.5, 1.0]); // F = 0.5
        assert!(matches!(
            pde.integrate_strip(&start, 0.01, 100),
            Err(CharpitError::OffSurface(_))
        ));
    }

    #[test]
    fn certificate_accepts_clean_strip() {
        let pde = transport();
        let start = JetPoint::new(vec![0.0, 0.0], 5.0, vec![-2.0, 1.0]);
        let strip = pde.integrate_strip(&start, 0.01, 100).unwrap();
        let cert = generalized_solution_certificate(&strip, &pde, 1e-8).unwrap();
        assert!(cert.valid);
    }

    #[test]
    fn certificate_detects_corrupted_sample() {
        let pde = transport();
        let start = JetPoint::new(vec![0.0, 0.0], 5.0, vec![-2.0, 1.0]);
        let mut strip = pde.integrate_strip(&start, 0.01, 100).unwrap();
        strip.samples[50].u += 0.1;
        let cert = generalized_solution_certificate(&strip, &pde, 1e-8).unwrap();
        assert!(!cert.valid);
        // defect of 0.1 in u shows up at the 0.1/ds scale
        assert!(cert.max_strip_residual >= 0.1 / strip.ds * 0.5);
    }

    #[test]
    fn nonidentity_residual_of_gradient_vanishes() {
        let chart = Chart::euclidean(&["x", "y"]);
        let k = nonidentity_residual(
            chart,
            &[Expression::var("y"), Expression::var("x")],
        )
        .unwrap();
        assert!(k.is_symbolically_zero());
    }

    #[test]
    fn nonidentity_residual_rotation() {
        let chart = Chart::euclidean(&["x", "y"]);
        let k = nonidentity_residual(
            chart.clone(),
            &[Expression::var("y").neg(), Expression::var("x")],
        )
        .unwrap();
        let p = chart.point(&[1.0, 1.0]);
        assert_eq!(k.entry(0, 1).evaluate(&p).unwrap(), 2.0);
    }

    #[test]
    fn nonidentity_residual_independent_coefficients() {
        let chart = Chart::euclidean(&["x", "y"]);
        let k = nonidentity_residual(
            chart,
            &[Expression::parse("x^2").unwrap(), Expression::zero()],
        )
        .unwrap();
        assert!(k.is_symbolically_zero());
    }

    #[test]
    fn rejects_non_pde() {
        let chart = Chart::euclidean(&["x1"]);
        assert!(matches!(
            FirstOrderPDE::new(chart, Expression::parse("x1 + u").unwrap()),
            Err(CharpitError::NoMomentumDependence)
        ));
    }

    #[test]
    fn rejects_undeclared_variable() {
        let chart = Chart::euclidean(&["x1"]);
        assert!(matches!(
            FirstOrderPDE::new(chart, Expression::parse("p1 + q").unwrap()),
            Err(CharpitError::UndeclaredVariable(_))
        ));
    }

    #[test]
    fn csv_export_shape() {
        let pde = transport();
        let start = JetPoint::new(vec![0.0, 0.0], 5.0, vec![-2.0, 1.0]);
        let strip = pde.integrate_strip(&start, 0.01, 3).unwrap();
        let mut buf = Vec::new();
        write_strip_csv(&strip, &pde, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "s,x1,x2,u,p1,p2,F_residual,strip_residual");
        assert_eq!(lines.len(), 5);
    }
}
