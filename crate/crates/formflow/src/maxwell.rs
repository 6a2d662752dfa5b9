//! Source-free Maxwell closure pair `dθ² = 0`, `d*θ² = 0` on a uniform
//! 4-D spacetime grid with Minkowski signature (+,-,-,-).
//!
//! The field strength 2-form is stored by its six canonical components
//! `F_tx, F_ty, F_tz, F_xy, F_xz, F_yz`; the (E, B) convention is
//! `F_tx = E_x, F_ty = E_y, F_tz = E_z, F_xy = -B_z, F_xz = B_y,
//! F_yz = -B_x`. Residuals use central differences on interior nodes only.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use ndarray::Array4;
use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::forms::hodge_complement;

#[derive(Debug, Error)]
pub enum MaxwellError {
    #[error("grid needs at least 5 nodes per axis, got {0}")]
    GridTooSmall(usize),
    #[error("grid spacing must be positive, got {0}")]
    InvalidSpacing(f64),
    #[error("field array shape {got:?} does not match grid shape {expected:?}")]
    ShapeMismatch { expected: [usize; 4], got: Vec<usize> },
    #[error("CSV error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const AXIS_NAMES: [&str; 4] = ["t", "x", "y", "z"];
pub const MINKOWSKI_SIGNATURE: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// Canonical index pairs of the six 2-form components, in storage order.
pub const COMPONENT_PAIRS: [(usize, usize); 6] =
    [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// The four increasing index triples of a 3-form in 4-D.
const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];

fn pair_slot(i: usize, j: usize) -> usize {
    COMPONENT_PAIRS
        .iter()
        .position(|&(a, b)| (a, b) == (i, j))
        .expect("increasing pair")
}

/// Uniform grid over the axes (t, x, y, z).
#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimeGrid {
    shape: [usize; 4],
    spacing: [f64; 4],
    origin: [f64; 4],
}

impl SpacetimeGrid {
    pub fn new(
        shape: [usize; 4],
        spacing: [f64; 4],
        origin: [f64; 4],
    ) -> Result<SpacetimeGrid, MaxwellError> {
        for &n in &shape {
            if n < 5 {
                return Err(MaxwellError::GridTooSmall(n));
            }
        }
        for &h in &spacing {
            if !(h > 0.0) {
                return Err(MaxwellError::InvalidSpacing(h));
            }
        }
        Ok(SpacetimeGrid { shape, spacing, origin })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 4] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 4] {
        self.origin
    }

    pub fn coords(&self, idx: [usize; 4]) -> [f64; 4] {
        let mut c = [0.0; 4];
        for a in 0..4 {
            c[a] = self.origin[a] + idx[a] as f64 * self.spacing[a];
        }
        c
    }

    /// Samples a scalar function of (t, x, y, z) on every node.
    pub fn sample(&self, f: impl Fn([f64; 4]) -> f64) -> Array4<f64> {
        let mut arr = Array4::zeros(self.shape);
        for i0 in 0..self.shape[0] {
            for i1 in 0..self.shape[1] {
                for i2 in 0..self.shape[2] {
                    for i3 in 0..self.shape[3] {
                        arr[[i0, i1, i2, i3]] = f(self.coords([i0, i1, i2, i3]));
                    }
                }
            }
        }
        arr
    }

    /// Samples an expression in the variables t, x, y, z on every node.
    pub fn sample_expression(&self, e: &Expression) -> Result<Array4<f64>, MaxwellError> {
        let mut arr = Array4::zeros(self.shape);
        let mut env: HashMap<String, f64> = HashMap::with_capacity(4);
        for i0 in 0..self.shape[0] {
            for i1 in 0..self.shape[1] {
                for i2 in 0..self.shape[2] {
                    for i3 in 0..self.shape[3] {
                        let c = self.coords([i0, i1, i2, i3]);
                        for (name, v) in AXIS_NAMES.iter().zip(c.iter()) {
                            env.insert(name.to_string(), *v);
                        }
                        arr[[i0, i1, i2, i3]] = e.evaluate(&env)?;
                    }
                }
            }
        }
        Ok(arr)
    }
}

/// Node-sampled field strength 2-form `θ² = ½ F_{μν} dx^μ ∧ dx^ν`.
#[derive(Debug, Clone)]
pub struct FieldStrength2Form {
    grid: SpacetimeGrid,
    /// Components ordered as [`COMPONENT_PAIRS`].
    comps: Vec<Array4<f64>>,
}

impl FieldStrength2Form {
    pub fn new(grid: SpacetimeGrid, comps: Vec<Array4<f64>>) -> Result<Self, MaxwellError> {
        assert_eq!(comps.len(), 6, "six 2-form components required");
        for c in &comps {
            if c.shape() != grid.shape {
                return Err(MaxwellError::ShapeMismatch {
                    expected: grid.shape,
                    got: c.shape().to_vec(),
                });
            }
        }
        Ok(FieldStrength2Form { grid, comps })
    }

    pub fn zero(grid: SpacetimeGrid) -> Self {
        let comps = (0..6).map(|_| Array4::zeros(grid.shape)).collect();
        FieldStrength2Form { grid, comps }
    }

    pub fn grid(&self) -> &SpacetimeGrid {
        &self.grid
    }

    pub fn component(&self, i: usize, j: usize) -> &Array4<f64> {
        &self.comps[pair_slot(i, j)]
    }

    /// Assembles `F` from node-sampled electric and magnetic fields under
    /// the pinned sign convention.
    pub fn assemble_from_eb(
        grid: SpacetimeGrid,
        e: [Array4<f64>; 3],
        b: [Array4<f64>; 3],
    ) -> Result<Self, MaxwellError> {
        let [ex, ey, ez] = e;
        let [bx, by, bz] = b;
        let comps = vec![ex, ey, ez, -bz, by, -bx];
        FieldStrength2Form::new(grid, comps)
    }

    /// Nodewise Hodge dual under the Minkowski signature, using the same
    /// basis convention as the analytic Hodge star.
    pub fn hodge_dual(&self) -> FieldStrength2Form {
        let mut comps: Vec<Array4<f64>> = (0..6).map(|_| Array4::zeros(self.grid.shape)).collect();
        for (slot, &(i, j)) in COMPONENT_PAIRS.iter().enumerate() {
            let (complement, sign) = hodge_complement(&MINKOWSKI_SIGNATURE, &[i, j]);
            let dual_slot = pair_slot(complement[0], complement[1]);
            comps[dual_slot] = &self.comps[slot] * sign;
        }
        FieldStrength2Form { grid: self.grid.clone(), comps }
    }

    /// Central difference of a component along an axis at an interior node.
    fn central_diff(&self, slot: usize, axis: usize, idx: [usize; 4]) -> f64 {
        let mut up = idx;
        let mut dn = idx;
        up[axis] += 1;
        dn[axis] -= 1;
        (self.comps[slot][up] - self.comps[slot][dn]) / (2.0 * self.grid.spacing[axis])
    }

    /// Max-abs coefficient of `dθ²` over interior nodes, with the node and
    /// triple where it occurs.
    pub fn exterior_derivative_residual(&self) -> (f64, [usize; 4]) {
        let s = self.grid.shape;
        let mut max = 0.0f64;
        let mut worst = [0usize; 4];
        for i0 in 1..s[0] - 1 {
            for i1 in 1..s[1] - 1 {
                for i2 in 1..s[2] - 1 {
                    for i3 in 1..s[3] - 1 {
                        let idx = [i0, i1, i2, i3];
                        for &(l, m, n) in &TRIPLES {
                            let v = self.central_diff(pair_slot(m, n), l, idx)
                                - self.central_diff(pair_slot(l, n), m, idx)
                                + self.central_diff(pair_slot(l, m), n, idx);
                            if v.abs() > max {
                                max = v.abs();
                                worst = idx;
                            }
                        }
                    }
                }
            }
        }
        (max, worst)
    }
}

/// Max-abs residuals of the Maxwell pair over interior nodes.
#[derive(Debug, Clone)]
pub struct ClosureResiduals {
    pub d_max: f64,
    pub d_worst: [usize; 4],
    pub dual_max: f64,
    pub dual_worst: [usize; 4],
}

pub fn closure_residuals(f: &FieldStrength2Form) -> ClosureResiduals {
    let (d_max, d_worst) = f.exterior_derivative_residual();
    let (dual_max, dual_worst) = f.hodge_dual().exterior_derivative_residual();
    ClosureResiduals { d_max, d_worst, dual_max, dual_worst }
}

/// Verdict of the physical-structure check: both residuals within `tol`.
#[derive(Debug, Clone)]
pub struct StructureReport {
    pub physical: bool,
    pub tolerance: f64,
    pub residuals: ClosureResiduals,
}

pub fn certify_physical_structure(f: &FieldStrength2Form, tol: f64) -> StructureReport {
    let residuals = closure_residuals(f);
    StructureReport {
        physical: residuals.d_max <= tol && residuals.dual_max <= tol,
        tolerance: tol,
        residuals,
    }
}

/// Writes the grid fields as CSV, one node per row:
/// `t,x,y,z,Ex,Ey,Ez,Bx,By,Bz`.
pub fn write_fields_csv<W: Write>(
    f: &FieldStrength2Form,
    out: &mut W,
) -> Result<(), std::io::Error> {
    writeln!(out, "t,x,y,z,Ex,Ey,Ez,Bx,By,Bz")?;
    let s = f.grid.shape;
    for i0 in 0..s[0] {
        for i1 in 0..s[1] {
            for i2 in 0..s[2] {
                for i3 in 0..s[3] {
                    let idx = [i0, i1, i2, i3];
                    let c = f.grid.coords(idx);
                    let ex = f.component(0, 1)[idx];
                    let ey = f.component(0, 2)[idx];
                    let ez = f.component(0, 3)[idx];
                    let bz = -f.component(1, 2)[idx];
                    let by = f.component(1, 3)[idx];
                    let bx = -f.component(2, 3)[idx];
                    writeln!(
                        out,
                        "{},{},{},{},{ex},{ey},{ez},{bx},{by},{bz}",
                        c[0], c[1], c[2], c[3]
                    )?;
                }
            }
        }
    }
    Ok(())
}

/// Reads node-per-row CSV (`t,x,y,z,Ex,Ey,Ez,Bx,By,Bz`) covering a full
/// uniform lattice and reconstructs the field strength form.
pub fn read_fields_csv<R: BufRead>(reader: R) -> Result<FieldStrength2Form, MaxwellError> {
    let mut rows: Vec<[f64; 10]> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if lineno == 0 || line.is_empty() {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(MaxwellError::Csv {
                line: lineno + 1,
                message: format!("expected 10 columns, got {}", fields.len()),
            });
        }
        let mut row = [0.0; 10];
        for (k, s) in fields.iter().enumerate() {
            row[k] = s.trim().parse().map_err(|_| MaxwellError::Csv {
                line: lineno + 1,
                message: format!("invalid number `{s}`"),
            })?;
        }
        rows.push(row);
    }
    // reconstruct axes from the unique sorted coordinates
    let mut axes: [Vec<f64>; 4] = Default::default();
    for a in 0..4 {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[a]).collect();
        vals.sort_by(|x, y| x.partial_cmp(y).expect("finite coordinates"));
        vals.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
        axes[a] = vals;
    }
    let shape = [axes[0].len(), axes[1].len(), axes[2].len(), axes[3].len()];
    let mut spacing = [0.0; 4];
    let mut origin = [0.0; 4];
    for a in 0..4 {
        if shape[a] < 5 {
            return Err(MaxwellError::GridTooSmall(shape[a]));
        }
        origin[a] = axes[a][0];
        let h = (axes[a][shape[a] - 1] - axes[a][0]) / (shape[a] - 1) as f64;
        for (k, &v) in axes[a].iter().enumerate() {
            if (v - (origin[a] + k as f64 * h)).abs() > 1e-9 * (1.0 + h.abs()) {
                return Err(MaxwellError::Csv {
                    line: 0,
                    message: format!("axis {} is not uniformly spaced", AXIS_NAMES[a]),
                });
            }
        }
        spacing[a] = h;
    }
    if rows.len() != shape.iter().product::<usize>() {
        return Err(MaxwellError::Csv {
            line: 0,
            message: format!(
                "{} rows do not fill a {}x{}x{}x{} lattice",
                rows.len(),
                shape[0],
                shape[1],
                shape[2],
                shape[3]
            ),
        });
    }
    let grid = SpacetimeGrid::new(shape, spacing, origin)?;
    let mut e: [Array4<f64>; 3] = [
        Array4::zeros(shape),
        Array4::zeros(shape),
        Array4::zeros(shape),
    ];
    let mut b: [Array4<f64>; 3] = [
        Array4::zeros(shape),
        Array4::zeros(shape),
        Array4::zeros(shape),
    ];
    for row in &rows {
        let mut idx = [0usize; 4];
        for a in 0..4 {
            idx[a] = ((row[a] - origin[a]) / spacing[a]).round() as usize;
        }
        for k in 0..3 {
            e[k][idx] = row[4 + k];
            b[k][idx] = row[7 + k];
        }
    }
    FieldStrength2Form::assemble_from_eb(grid, e, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> SpacetimeGrid {
        SpacetimeGrid::new([6, 6, 6, 6], [0.2; 4], [0.0; 4]).unwrap()
    }

    fn assemble(
        grid: &SpacetimeGrid,
        e: [&dyn Fn([f64; 4]) -> f64; 3],
        b: [&dyn Fn([f64; 4]) -> f64; 3],
    ) -> FieldStrength2Form {
        FieldStrength2Form::assemble_from_eb(
            grid.clone(),
            [grid.sample(e[0]), grid.sample(e[1]), grid.sample(e[2])],
            [grid.sample(b[0]), grid.sample(b[1]), grid.sample(b[2])],
        )
        .unwrap()
    }

    /// Plane wave propagating along (0.6, 0.8, 0): E ⟂ B ⟂ k, |E| = |B|.
    pub fn oblique_wave(grid: &SpacetimeGrid) -> FieldStrength2Form {
        let phase = |c: [f64; 4]| std::f64::consts::TAU * (0.6 * c[1] + 0.8 * c[2] - c[0]);
        assemble(
            grid,
            [
                &|c| -0.8 * phase(c).cos(),
                &|c| 0.6 * phase(c).cos(),
                &|_| 0.0,
            ],
            [&|_| 0.0, &|_| 0.0, &|c| phase(c).cos()],
        )
    }

    #[test]
    fn constant_bz_field_components() {
        let grid = small_grid();
        let f = assemble(
            &grid,
            [&|_| 0.0, &|_| 0.0, &|_| 0.0],
            [&|_| 0.0, &|_| 0.0, &|_| 1.0],
        );
        assert_eq!(f.component(1, 2)[[2, 2, 2, 2]], -1.0);
        assert_eq!(f.component(0, 1)[[2, 2, 2, 2]], 0.0);
        let r = closure_residuals(&f);
        assert_eq!(r.d_max, 0.0);
        assert_eq!(r.dual_max, 0.0);
        assert!(certify_physical_structure(&f, 1e-12).physical);
    }

    #[test]
    fn constant_ex_field_components() {
        let grid = small_grid();
        let f = assemble(
            &grid,
            [&|_| 1.0, &|_| 0.0, &|_| 0.0],
            [&|_| 0.0, &|_| 0.0, &|_| 0.0],
        );
        assert_eq!(f.component(0, 1)[[1, 2, 3, 4]], 1.0);
        for &(i, j) in COMPONENT_PAIRS.iter().skip(1) {
            assert_eq!(f.component(i, j)[[1, 2, 3, 4]], 0.0);
        }
    }

    #[test]
    fn zero_form_residuals_are_zero() {
        let f = FieldStrength2Form::zero(small_grid());
        let r = closure_residuals(&f);
        assert_eq!((r.d_max, r.dual_max), (0.0, 0.0));
    }

    #[test]
    fn axis_aligned_wave_samples() {
        // E_y and -F_xy both equal cos(k(x - t)) at every node
        let k = std::f64::consts::TAU;
        let grid = SpacetimeGrid::new([8, 8, 5, 5], [1.0 / 8.0; 4], [0.0; 4]).unwrap();
        let f = assemble(
            &grid,
            [&|_| 0.0, &move |c| (k * (c[1] - c[0])).cos(), &|_| 0.0],
            [&|_| 0.0, &|_| 0.0, &move |c| (k * (c[1] - c[0])).cos()],
        );
        for i0 in 0..8 {
            for i1 in 0..8 {
                let idx = [i0, i1, 2, 3];
                let c = grid.coords(idx);
                let expect = (k * (c[1] - c[0])).cos();
                assert!((f.component(0, 2)[idx] - expect).abs() <= 1e-15);
                assert!((-f.component(1, 2)[idx] - expect).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn oblique_wave_second_order_convergence() {
        let coarse = SpacetimeGrid::new([16; 4], [1.0 / 16.0; 4], [0.0; 4]).unwrap();
        let fine = SpacetimeGrid::new([32; 4], [1.0 / 32.0; 4], [0.0; 4]).unwrap();
        let rc = closure_residuals(&oblique_wave(&coarse));
        let rf = closure_residuals(&oblique_wave(&fine));
        for (c, f) in [(rc.d_max, rf.d_max), (rc.dual_max, rf.dual_max)] {
            assert!(c > 0.0 && f > 0.0);
            let ratio = c / f;
            assert!(
                (3.2..=4.8).contains(&ratio),
                "expected ~4x residual drop, got {ratio}"
            );
        }
    }

    #[test]
    fn duality_swap_exchanges_residuals() {
        // E -> B, B -> -E maps the dθ residual to the d*θ residual
        let grid = SpacetimeGrid::new([12; 4], [1.0 / 12.0; 4], [0.0; 4]).unwrap();
        let phase = |c: [f64; 4]| std::f64::consts::TAU * (0.6 * c[1] + 0.8 * c[2] - c[0]);
        let e: [&dyn Fn([f64; 4]) -> f64; 3] = [
            &|c| -0.8 * phase(c).cos(),
            &|c| 0.6 * phase(c).cos(),
            &|_| 0.0,
        ];
        let b: [&dyn Fn([f64; 4]) -> f64; 3] = [&|_| 0.0, &|_| 0.0, &|c| phase(c).cos()];
        let original = assemble(&grid, e, b);
        let swapped = assemble(
            &grid,
            [&|c| 0.0 * c[0], &|_| 0.0, &|c| phase(c).cos()],
            [&|c| 0.8 * phase(c).cos(), &|c| -0.6 * phase(c).cos(), &|_| 0.0],
        );
        let r0 = closure_residuals(&original);
        let r1 = closure_residuals(&swapped);
        assert!((r0.d_max - r1.dual_max).abs() <= 1e-12);
        assert!((r0.dual_max - r1.d_max).abs() <= 1e-12);
    }

    #[test]
    fn uniform_divergence_counterexample_rejected() {
        // E = (x, y, z) has divergence 3: d*θ² residual is 3, dθ² is 0
        let grid = small_grid();
        let f = assemble(
            &grid,
            [&|c| c[1], &|c| c[2], &|c| c[3]],
            [&|_| 0.0, &|_| 0.0, &|_| 0.0],
        );
        let r = closure_residuals(&f);
        assert!(r.d_max <= 1e-12);
        assert!((r.dual_max - 3.0).abs() <= 1e-12);
        assert!(!certify_physical_structure(&f, 1e-6).physical);
    }

    #[test]
    fn coulomb_field_off_origin_is_source_free() {
        // static E = r̂/r² on a box away from the origin, B = 0
        let e_comp = |axis: usize| {
            move |c: [f64; 4]| {
                let r2 = c[1] * c[1] + c[2] * c[2] + c[3] * c[3];
                c[axis] / r2.powf(1.5)
            }
        };
        let mut maxima = Vec::new();
        for n in [8usize, 16] {
            let h = 1.0 / n as f64;
            let grid = SpacetimeGrid::new(
                [5, n, n, n],
                [h, h, h, h],
                [0.0, 1.0, 1.0, 1.0],
            )
            .unwrap();
            let f = assemble(
                &grid,
                [&e_comp(1), &e_comp(2), &e_comp(3)],
                [&|_| 0.0, &|_| 0.0, &|_| 0.0],
            );
            let r = closure_residuals(&f);
            maxima.push(r.d_max.max(r.dual_max));
        }
        // O(h²): halving h cuts the residual by roughly 4
        let ratio = maxima[0] / maxima[1];
        assert!(ratio > 2.5, "ratio {ratio}");
    }

    #[test]
    fn polynomial_potential_derivative_is_exactly_closed() {
        // F = d(A) for A with per-axis degree ≤ 2 components: central
        // differences are exact, so dθ² vanishes identically
        let grid = small_grid();
        // A_t = x², A_x = t*y, A_y = z², A_z = x*y
        let a: [&dyn Fn([f64; 4]) -> f64; 4] = [
            &|c| c[1] * c[1],
            &|c| c[0] * c[2],
            &|c| c[3] * c[3],
            &|c| c[1] * c[2],
        ];
        // F_{μν} = ∂_μ A_ν − ∂_ν A_μ sampled analytically
        let deriv = |mu: usize, nu: usize, c: [f64; 4]| -> f64 {
            let h = 1e-4;
            let mut cp = c;
            let mut cm = c;
            cp[mu] += h;
            cm[mu] -= h;
            (a[nu](cp) - a[nu](cm)) / (2.0 * h)
        };
        let mut comps = Vec::new();
        for &(i, j) in &COMPONENT_PAIRS {
            comps.push(grid.sample(|c| deriv(i, j, c) - deriv(j, i, c)));
        }
        let f = FieldStrength2Form::new(grid, comps).unwrap();
        let (d_max, _) = f.exterior_derivative_residual();
        assert!(d_max <= 1e-9, "d_max {d_max}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let grid = small_grid();
        let bad = Array4::zeros([5, 6, 6, 6]);
        let ok = || Array4::zeros([6, 6, 6, 6]);
        assert!(matches!(
            FieldStrength2Form::assemble_from_eb(grid, [bad, ok(), ok()], [ok(), ok(), ok()]),
            Err(MaxwellError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let grid = SpacetimeGrid::new([5, 5, 5, 5], [0.25; 4], [0.0, -1.0, 0.5, 0.0]).unwrap();
        let f = assemble(
            &grid,
            [&|c| c[1] + c[0], &|c| c[2], &|_| 2.0],
            [&|c| c[3], &|_| -1.0, &|c| c[1] * c[2]],
        );
        let mut buf = Vec::new();
        write_fields_csv(&f, &mut buf).unwrap();
        let back = read_fields_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.grid(), f.grid());
        for slot in 0..6 {
            let diff = (&back.comps[slot] - &f.comps[slot])
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(
            SpacetimeGrid::new([4, 5, 5, 5], [1.0; 4], [0.0; 4]),
            Err(MaxwellError::GridTooSmall(4))
        ));
        assert!(matches!(
            SpacetimeGrid::new([5; 4], [0.0, 1.0, 1.0, 1.0], [0.0; 4]),
            Err(MaxwellError::InvalidSpacing(_))
        ));
    }
}
