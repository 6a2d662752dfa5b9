//! Shared helpers for the integration suites: seeded random polynomial
//! expressions and forms, plus sample-point generation.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use formflow::expr::Expression;
use formflow::forms::{Chart, DifferentialForm};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random polynomial of total degree <= 4 in the given variables.
pub fn random_polynomial(rng: &mut ChaCha8Rng, vars: &[String]) -> Expression {
    let terms = rng.gen_range(1..=4);
    let mut acc = Expression::constant(round3(rng.gen_range(-2.0..2.0)));
    for _ in 0..terms {
        let mut term = Expression::constant(round3(rng.gen_range(-2.0..2.0)));
        let mut budget = 4usize;
        for v in vars {
            let e = rng.gen_range(0..=budget.min(2));
            for _ in 0..e {
                term = term.mul(&Expression::var(v));
            }
            budget -= e;
        }
        acc = acc.add(&term);
    }
    acc
}

// keep coefficients short so printed forms stay readable in failures
fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

pub fn increasing_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
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

/// Random form of the given degree with polynomial coefficients.
pub fn random_form(rng: &mut ChaCha8Rng, chart: &Arc<Chart>, degree: usize) -> DifferentialForm {
    let vars = chart.names().to_vec();
    let mut form = DifferentialForm::zero(chart.clone(), degree);
    for idx in increasing_indices(chart.dim(), degree) {
        form.add_term(&idx, random_polynomial(rng, &vars));
    }
    form
}

/// Uniform sample points in [-1, 1]^n.
pub fn sample_points(
    rng: &mut ChaCha8Rng,
    chart: &Chart,
    count: usize,
) -> Vec<HashMap<String, f64>> {
    (0..count)
        .map(|_| {
            let coords: Vec<f64> = (0..chart.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            chart.point(&coords)
        })
        .collect()
}

/// Max absolute coefficient gap between two forms over the sample points.
pub fn max_gap(
    a: &DifferentialForm,
    b: &DifferentialForm,
    points: &[HashMap<String, f64>],
) -> f64 {
    a.add_form(&b.scale(-1.0))
        .expect("comparable forms")
        .max_abs_at(points)
        .expect("polynomial evaluation")
}
