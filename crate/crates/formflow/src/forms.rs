//! Exterior-calculus core: charts, skew-symmetric differential forms with
//! expression coefficients, wedge product, exterior derivative, the
//! commutator of a 1-form, sampled closure testing, and the Hodge star for
//! diagonal metrics.
//!
//! Coefficients are stored only on strictly increasing multi-indices; every
//! permutation sign is applied when a term is inserted.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{ExprError, Expression};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormsError {
    #[error("chart mismatch: `{0}` vs `{1}`")]
    ChartMismatch(String, String),
    #[error("expected a form of degree {expected}, got degree {got}")]
    DegreeMismatch { expected: usize, got: usize },
    #[error("coordinate index {index} out of range for a chart of dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("expected {expected} coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// A fixed coordinate chart with a diagonal metric signature.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    names: Vec<String>,
    signature: Vec<f64>,
}

impl Chart {
    pub fn new(names: &[&str], signature: &[f64]) -> Result<Arc<Chart>, FormsError> {
        if names.is_empty() {
            return Err(FormsError::InvalidChart("dimension must be at least 1".into()));
        }
        if names.len() != signature.len() {
            return Err(FormsError::InvalidChart(format!(
                "{} coordinates but {} signature entries",
                names.len(),
                signature.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(FormsError::InvalidChart(format!("duplicate coordinate `{n}`")));
            }
        }
        if signature.iter().any(|s| s.abs() != 1.0) {
            return Err(FormsError::InvalidChart("signature entries must be +1 or -1".into()));
        }
        Ok(Arc::new(Chart {
            names: names.iter().map(|s| s.to_string()).collect(),
            signature: signature.to_vec(),
        }))
    }

    pub fn euclidean(names: &[&str]) -> Arc<Chart> {
        let signature = vec![1.0; names.len()];
        Chart::new(names, &signature).expect("euclidean chart")
    }

    /// (+1, -1, -1, -1) with the first coordinate timelike.
    pub fn minkowski(names: &[&str; 4]) -> Arc<Chart> {
        Chart::new(names, &[1.0, -1.0, -1.0, -1.0]).expect("minkowski chart")
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn signature(&self) -> &[f64] {
        &self.signature
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Bind chart coordinates to the given values.
    pub fn point(&self, coords: &[f64]) -> HashMap<String, f64> {
        self.names
            .iter()
            .cloned()
            .zip(coords.iter().copied())
            .collect()
    }

    fn label(&self) -> String {
        self.names.join(",")
    }
}

/// Sorts a multi-index into increasing order, returning the permutation
/// sign, or `None` when an index repeats (the term vanishes).
pub fn sort_index(indices: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut idx = indices.to_vec();
    let mut sign = 1.0;
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && idx[j - 1] > idx[j] {
            idx.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    for w in idx.windows(2) {
        if w[0] == w[1] {
            return None;
        }
    }
    Some((idx, sign))
}

/// Hodge complement of a strictly increasing multi-index under a diagonal
/// metric: returns the increasing complement and the sign
/// `sgn(I,J) * prod(signature[i] for i in I)`.
pub fn hodge_complement(signature: &[f64], indices: &[usize]) -> (Vec<usize>, f64) {
    let n = signature.len();
    let complement: Vec<usize> = (0..n).filter(|i| !indices.contains(i)).collect();
    // inversions between the I block and the J block of the concatenation
    let mut inversions = 0usize;
    for &i in indices {
        inversions += complement.iter().filter(|&&j| j < i).count();
    }
    let mut sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
    for &i in indices {
        sign *= signature[i];
    }
    (complement, sign)
}

/// A degree-k form with [`Expression`] coefficients on a fixed chart.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialForm {
    chart: Arc<Chart>,
    degree: usize,
    coeffs: BTreeMap<Vec<usize>, Expression>,
}

impl DifferentialForm {
    pub fn zero(chart: Arc<Chart>, degree: usize) -> DifferentialForm {
        DifferentialForm { chart, degree, coeffs: BTreeMap::new() }
    }

    pub fn from_scalar(chart: Arc<Chart>, f: Expression) -> DifferentialForm {
        let mut form = DifferentialForm::zero(chart, 0);
        form.coeffs.insert(Vec::new(), f);
        form
    }

    /// 1-form with one coefficient per coordinate.
    pub fn one_form(chart: Arc<Chart>, coeffs: Vec<Expression>) -> Result<DifferentialForm, FormsError> {
        if coeffs.len() != chart.dim() {
            return Err(FormsError::CoefficientCount { expected: chart.dim(), got: coeffs.len() });
        }
        let mut form = DifferentialForm::zero(chart, 1);
        for (i, c) in coeffs.into_iter().enumerate() {
            form.insert(vec![i], c);
        }
        Ok(form)
    }

    /// The basis form `dx^{i1} ∧ … ∧ dx^{ik}` (indices need not be sorted).
    pub fn basis(chart: Arc<Chart>, indices: &[usize]) -> Result<DifferentialForm, FormsError> {
        let dim = chart.dim();
        for &i in indices {
            if i >= dim {
                return Err(FormsError::IndexOutOfRange { index: i, dim });
            }
        }
        let mut form = DifferentialForm::zero(chart, indices.len());
        form.add_term(indices, Expression::one());
        Ok(form)
    }

    /// Adds `coeff * dx^indices` to the form, canonicalizing the index.
    pub fn add_term(&mut self, indices: &[usize], coeff: Expression) {
        debug_assert_eq!(indices.len(), self.degree);
        if let Some((sorted, sign)) = sort_index(indices) {
            let signed = if sign < 0.0 { coeff.neg() } else { coeff };
            self.insert(sorted, signed);
        }
    }

    fn insert(&mut self, index: Vec<usize>, coeff: Expression) {
        if self.degree > 0 && coeff.is_zero() {
            return;
        }
        match self.coeffs.remove(&index) {
            Some(existing) => {
                let sum = existing.add(&coeff);
                if !sum.is_zero() || self.degree == 0 {
                    self.coeffs.insert(index, sum);
                }
            }
            None => {
                self.coeffs.insert(index, coeff);
            }
        }
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Coefficient at a strictly increasing multi-index (zero if absent).
    pub fn coeff(&self, index: &[usize]) -> Expression {
        self.coeffs.get(index).cloned().unwrap_or_else(Expression::zero)
    }

    /// Stored (nonzero) coefficients in canonical index order.
    pub fn terms(&self) -> impl Iterator<Item = (&Vec<usize>, &Expression)> {
        self.coeffs.iter()
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.coeffs.values().all(|c| c.is_zero())
    }

    fn check_same_chart(&self, other: &DifferentialForm) -> Result<(), FormsError> {
        if self.chart != other.chart {
            return Err(FormsError::ChartMismatch(self.chart.label(), other.chart.label()));
        }
        Ok(())
    }

    pub fn add_form(&self, other: &DifferentialForm) -> Result<DifferentialForm, FormsError> {
        self.check_same_chart(other)?;
        if self.degree != other.degree {
            return Err(FormsError::DegreeMismatch { expected: self.degree, got: other.degree });
        }
        let mut out = self.clone();
        for (idx, c) in other.terms() {
            out.insert(idx.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> DifferentialForm {
        let mut out = DifferentialForm::zero(self.chart.clone(), self.degree);
        for (idx, c) in self.terms() {
            out.insert(idx.clone(), c.scale(factor));
        }
        out
    }

    /// Wedge product with all permutation signs applied at construction.
    pub fn wedge(&self, other: &DifferentialForm) -> Result<DifferentialForm, FormsError> {
        self.check_same_chart(other)?;
        let degree = self.degree + other.degree;
        let mut out = DifferentialForm::zero(self.chart.clone(), degree);
        if degree > self.chart.dim() {
            return Ok(out);
        }
        for (ia, ca) in self.terms() {
            for (ib, cb) in other.terms() {
                let mut combined = ia.clone();
                combined.extend_from_slice(ib);
                if let Some((sorted, sign)) = sort_index(&combined) {
                    let mut c = ca.mul(cb);
                    if sign < 0.0 {
                        c = c.neg();
                    }
                    out.insert(sorted, c);
                }
            }
        }
        Ok(out)
    }

    /// Exterior derivative `d`, degree k → k+1.
    pub fn exterior_derivative(&self) -> DifferentialForm {
        let n = self.chart.dim();
        let mut out = DifferentialForm::zero(self.chart.clone(), self.degree + 1);
        if self.degree >= n {
            return out;
        }
        let names = self.chart.names().to_vec();
        for (idx, c) in self.terms() {
            for (i, name) in names.iter().enumerate() {
                let dc = c.differentiate(name);
                if dc.is_zero() {
                    continue;
                }
                let mut combined = vec![i];
                combined.extend_from_slice(idx);
                if let Some((sorted, sign)) = sort_index(&combined) {
                    let signed = if sign < 0.0 { dc.neg() } else { dc };
                    out.insert(sorted, signed);
                }
            }
        }
        out
    }

    /// The commutator `K[i][j] = d(coeff_j)/dx^i - d(coeff_i)/dx^j` of a
    /// 1-form; `dθ = Σ_{i<j} K[i][j] dx^i ∧ dx^j`.
    pub fn commutator(&self) -> Result<CommutatorTensor, FormsError> {
        if self.degree != 1 {
            return Err(FormsError::DegreeMismatch { expected: 1, got: self.degree });
        }
        let n = self.chart.dim();
        let names = self.chart.names().to_vec();
        let coeffs: Vec<Expression> = (0..n).map(|i| self.coeff(&[i])).collect();
        let mut entries = vec![vec![Expression::zero(); n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let k = coeffs[j]
                    .differentiate(&names[i])
                    .sub(&coeffs[i].differentiate(&names[j]));
                entries[i][j] = k.clone();
                entries[j][i] = k.neg();
            }
        }
        Ok(CommutatorTensor { chart: self.chart.clone(), entries })
    }

    /// Samples every coefficient of `d(self)` and reports the maximum
    /// absolute residual; singular sample points are skipped and listed.
    pub fn is_closed(
        &self,
        sample_points: &[HashMap<String, f64>],
        tol: f64,
    ) -> Result<ClosureReport, FormsError> {
        let d = self.exterior_derivative();
        let mut report = ClosureReport {
            closed: true,
            tolerance: tol,
            max_residual: 0.0,
            worst_point: None,
            worst_index: None,
            skipped: Vec::new(),
        };
        for (pi, point) in sample_points.iter().enumerate() {
            for (idx, c) in d.terms() {
                match c.evaluate(point) {
                    Ok(v) => {
                        if v.abs() > report.max_residual {
                            report.max_residual = v.abs();
                            report.worst_point = Some(pi);
                            report.worst_index = Some(idx.clone());
                        }
                    }
                    Err(ExprError::Singular(msg)) => {
                        report.skipped.push((pi, msg));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        report.closed = report.max_residual <= tol;
        Ok(report)
    }

    /// Hodge star for the chart's diagonal metric. On an orthonormal basis
    /// `*(dx^I) = sgn(I,J) * prod(signature over I) * dx^J` with `J` the
    /// increasing complement; orientation is the coordinate order.
    pub fn hodge_star(&self) -> DifferentialForm {
        let n = self.chart.dim();
        let sig = self.chart.signature().to_vec();
        let mut out = DifferentialForm::zero(self.chart.clone(), n - self.degree);
        for (idx, c) in self.terms() {
            let (complement, sign) = hodge_complement(&sig, idx);
            let signed = if sign < 0.0 { c.neg() } else { c.clone() };
            out.insert(complement, signed);
        }
        if self.degree == 0 && self.coeffs.is_empty() {
            // canonical zero 0-form carries an explicit zero coefficient
            out.insert((0..n).collect(), Expression::zero());
        }
        out
    }

    /// Evaluates every stored coefficient at a point, keyed by index.
    pub fn evaluate_at(
        &self,
        point: &HashMap<String, f64>,
    ) -> Result<Vec<(Vec<usize>, f64)>, ExprError> {
        self.terms()
            .map(|(idx, c)| Ok((idx.clone(), c.evaluate(point)?)))
            .collect()
    }

    /// Max absolute coefficient value over the sample points.
    pub fn max_abs_at(&self, points: &[HashMap<String, f64>]) -> Result<f64, ExprError> {
        let mut max = 0.0f64;
        for p in points {
            for (_, v) in self.evaluate_at(p)? {
                max = max.max(v.abs());
            }
        }
        Ok(max)
    }
}

/// Antisymmetric matrix of expressions measuring failure of a 1-form to be
/// exact.
#[derive(Debug, Clone)]
pub struct CommutatorTensor {
    chart: Arc<Chart>,
    entries: Vec<Vec<Expression>>,
}

impl CommutatorTensor {
    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn entry(&self, i: usize, j: usize) -> &Expression {
        &self.entries[i][j]
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// True when every entry is the literal zero expression.
    pub fn is_symbolically_zero(&self) -> bool {
        self.entries.iter().flatten().all(|e| e.is_zero())
    }

    /// Max |K[i][j]| over entries and sample points.
    pub fn max_abs_at(&self, points: &[HashMap<String, f64>]) -> Result<f64, ExprError> {
        let n = self.dim();
        let mut max = 0.0f64;
        for p in points {
            for i in 0..n {
                for j in (i + 1)..n {
                    max = max.max(self.entries[i][j].evaluate(p)?.abs());
                }
            }
        }
        Ok(max)
    }
}

/// Outcome of a sampled closure test.
#[derive(Debug, Clone)]
pub struct ClosureReport {
    pub closed: bool,
    pub tolerance: f64,
    pub max_residual: f64,
    /// Index into the sample-point list where the max residual occurred.
    pub worst_point: Option<usize>,
    /// Multi-index of the derivative coefficient realizing the max residual.
    pub worst_index: Option<Vec<usize>>,
    /// Sample points skipped due to singular evaluation, with the reason.
    pub skipped: Vec<(usize, String)>,
}
