//! Hamiltonian block: the canonical equations as a flow, the action
//! accumulated alongside the state, the Poincaré 1-form residual
//! `ds = -H dt + p_j dq_j`, and the Hamilton-Jacobi field residual
//! `∂s/∂t + H(t, q, ∂s/∂q)`.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::expr::{ExprError, Expression};

#[derive(Debug, Error)]
pub enum HamiltonError {
    #[error("H references undeclared variable `{0}`")]
    UndeclaredVariable(String),
    #[error("degrees of freedom must be at least 1")]
    NoDegreesOfFreedom,
    #[error("initial state has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite state encountered at step {0}")]
    NonFiniteState(usize),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("s references variable `{0}` outside (t, q_j)")]
    InvalidFieldVariable(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// `H(t, q_1..q_m, p_1..p_m)` with cached partials.
#[derive(Debug, Clone)]
pub struct HamiltonianSystem {
    dof: usize,
    h: Expression,
    q_names: Vec<String>,
    p_names: Vec<String>,
    hq: Vec<Expression>,
    hp: Vec<Expression>,
}

impl HamiltonianSystem {
    pub fn new(dof: usize, h: Expression) -> Result<HamiltonianSystem, HamiltonError> {
        if dof == 0 {
            return Err(HamiltonError::NoDegreesOfFreedom);
        }
        let q_names: Vec<String> = (1..=dof).map(|j| format!("q{j}")).collect();
        let p_names: Vec<String> = (1..=dof).map(|j| format!("p{j}")).collect();
        for v in h.free_variables() {
            if v != "t" && !q_names.contains(v) && !p_names.contains(v) {
                return Err(HamiltonError::UndeclaredVariable(v.clone()));
            }
        }
        let hq = q_names.iter().map(|q| h.differentiate(q)).collect();
        let hp = p_names.iter().map(|p| h.differentiate(p)).collect();
        Ok(HamiltonianSystem { dof, h, q_names, p_names, hq, hp })
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    fn env(&self, t: f64, q: &[f64], p: &[f64]) -> Result<HashMap<String, f64>, HamiltonError> {
        if q.len() != self.dof || p.len() != self.dof {
            return Err(HamiltonError::DimensionMismatch {
                expected: self.dof,
                got: q.len().max(p.len()),
            });
        }
        let mut env = HashMap::with_capacity(2 * self.dof + 1);
        env.insert("t".to_string(), t);
        for (name, &v) in self.q_names.iter().zip(q) {
            env.insert(name.clone(), v);
        }
        for (name, &v) in self.p_names.iter().zip(p) {
            env.insert(name.clone(), v);
        }
        Ok(env)
    }

    pub fn energy(&self, t: f64, q: &[f64], p: &[f64]) -> Result<f64, HamiltonError> {
        Ok(self.h.evaluate(&self.env(t, q, p)?)?)
    }

    /// Right-hand sides of the canonical equations:
    /// `dq_j/dt = ∂H/∂p_j`, `dp_j/dt = -∂H/∂q_j`.
    pub fn hamilton_rhs(
        &self,
        t: f64,
        q: &[f64],
        p: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), HamiltonError> {
        let env = self.env(t, q, p)?;
        let dq = self
            .hp
            .iter()
            .map(|e| e.evaluate(&env))
            .collect::<Result<Vec<_>, _>>()?;
        let dp = self
            .hq
            .iter()
            .map(|e| Ok(-e.evaluate(&env)?))
            .collect::<Result<Vec<_>, ExprError>>()?;
        Ok((dq, dp))
    }

    /// (dq, dp, dS) with the Lagrangian `L = Σ p_j q̇_j - H` feeding dS.
    fn augmented_rhs(
        &self,
        t: f64,
        q: &[f64],
        p: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, f64), HamiltonError> {
        let env = self.env(t, q, p)?;
        let h = self.h.evaluate(&env)?;
        let dq: Vec<f64> = self
            .hp
            .iter()
            .map(|e| e.evaluate(&env))
            .collect::<Result<Vec<_>, _>>()?;
        let dp: Vec<f64> = self
            .hq
            .iter()
            .map(|e| Ok(-e.evaluate(&env)?))
            .collect::<Result<Vec<_>, ExprError>>()?;
        let ds = p.iter().zip(&dq).map(|(pj, qd)| pj * qd).sum::<f64>() - h;
        Ok((dq, dp, ds))
    }

    /// Classical fixed-step RK4 integration of the canonical flow with the
    /// action accumulated through the same stages.
    pub fn integrate(
        &self,
        q0: &[f64],
        p0: &[f64],
        t0: f64,
        dt: f64,
        steps: usize,
    ) -> Result<PhaseTrajectory, HamiltonError> {
        if dt <= 0.0 {
            return Err(HamiltonError::InvalidStep(dt));
        }
        // validate dimensions up front
        self.env(t0, q0, p0)?;
        let m = self.dof;
        let mut samples = Vec::with_capacity(steps + 1);
        let mut q = q0.to_vec();
        let mut p = p0.to_vec();
        let mut action = 0.0;
        samples.push(PhaseSample { t: t0, q: q.clone(), p: p.clone(), action });
        for step in 0..steps {
            let t = t0 + step as f64 * dt;
            let k1 = self.augmented_rhs(t, &q, &p)?;
            let (q2, p2) = advance(&q, &p, &k1, 0.5 * dt);
            let k2 = self.augmented_rhs(t + 0.5 * dt, &q2, &p2)?;
            let (q3, p3) = advance(&q, &p, &k2, 0.5 * dt);
            let k3 = self.augmented_rhs(t + 0.5 * dt, &q3, &p3)?;
            let (q4, p4) = advance(&q, &p, &k3, dt);
            let k4 = self.augmented_rhs(t + dt, &q4, &p4)?;
            for j in 0..m {
                q[j] += dt / 6.0 * (k1.0[j] + 2.0 * k2.0[j] + 2.0 * k3.0[j] + k4.0[j]);
                p[j] += dt / 6.0 * (k1.1[j] + 2.0 * k2.1[j] + 2.0 * k3.1[j] + k4.1[j]);
            }
            action += dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
            let finite = action.is_finite()
                && q.iter().all(|v| v.is_finite())
                && p.iter().all(|v| v.is_finite());
            if !finite {
                return Err(HamiltonError::NonFiniteState(step + 1));
            }
            samples.push(PhaseSample {
                t: t0 + (step + 1) as f64 * dt,
                q: q.clone(),
                p: p.clone(),
                action,
            });
        }
        Ok(PhaseTrajectory { dt, samples })
    }
}

fn advance(
    q: &[f64],
    p: &[f64],
    k: &(Vec<f64>, Vec<f64>, f64),
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let q2 = q.iter().zip(&k.0).map(|(v, d)| v + h * d).collect();
    let p2 = p.iter().zip(&k.1).map(|(v, d)| v + h * d).collect();
    (q2, p2)
}

#[derive(Debug, Clone)]
pub struct PhaseSample {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// Action accumulated from the trajectory start.
    pub action: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseTrajectory {
    pub dt: f64,
    pub samples: Vec<PhaseSample>,
}

impl PhaseTrajectory {
    pub fn endpoint(&self) -> &PhaseSample {
        self.samples.last().expect("trajectory has at least the start sample")
    }
}

/// Max over steps of `|ΔS - (-H Δt + Σ p_j Δq_j)| / Δt` with the 1-form
/// evaluated at the step midpoint. Certifies the accumulated action is the
/// integral of the Poincaré 1-form along the trajectory.
pub fn poincare_residual(
    sys: &HamiltonianSystem,
    traj: &PhaseTrajectory,
) -> Result<f64, HamiltonError> {
    if traj.samples.is_empty() {
        return Err(HamiltonError::EmptyTrajectory);
    }
    let mut max = 0.0f64;
    for w in traj.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let dt = b.t - a.t;
        let t_mid = 0.5 * (a.t + b.t);
        let q_mid: Vec<f64> = a.q.iter().zip(&b.q).map(|(x, y)| 0.5 * (x + y)).collect();
        let p_mid: Vec<f64> = a.p.iter().zip(&b.p).map(|(x, y)| 0.5 * (x + y)).collect();
        let h_mid = sys.energy(t_mid, &q_mid, &p_mid)?;
        let pdq: f64 = p_mid
            .iter()
            .zip(a.q.iter().zip(&b.q))
            .map(|(p, (qa, qb))| p * (qb - qa))
            .sum();
        let one_form = -h_mid * dt + pdq;
        let ds = b.action - a.action;
        max = max.max((ds - one_form).abs() / dt);
    }
    Ok(max)
}

/// Report of the Hamilton-Jacobi residual `∂s/∂t + H(t, q, ∂s/∂q)` over
/// sample points `(t, q)`.
#[derive(Debug, Clone)]
pub struct HamiltonJacobiReport {
    pub max_residual: f64,
    /// Samples skipped due to singular evaluation, with the reason.
    pub skipped: Vec<(usize, String)>,
}

pub fn hamilton_jacobi_residual(
    sys: &HamiltonianSystem,
    s_field: &Expression,
    samples: &[(f64, Vec<f64>)],
) -> Result<HamiltonJacobiReport, HamiltonError> {
    for v in s_field.free_variables() {
        if v != "t" && !sys.q_names.contains(v) {
            return Err(HamiltonError::InvalidFieldVariable(v.clone()));
        }
    }
    let s_t = s_field.differentiate("t");
    let s_q: Vec<Expression> = sys.q_names.iter().map(|q| s_field.differentiate(q)).collect();
    let mut report = HamiltonJacobiReport { max_residual: 0.0, skipped: Vec::new() };
    for (i, (t, q)) in samples.iter().enumerate() {
        if q.len() != sys.dof {
            return Err(HamiltonError::DimensionMismatch { expected: sys.dof, got: q.len() });
        }
        let mut env = HashMap::new();
        env.insert("t".to_string(), *t);
        for (name, &v) in sys.q_names.iter().zip(q) {
            env.insert(name.clone(), v);
        }
        let attempt = (|| -> Result<f64, ExprError> {
            let st = s_t.evaluate(&env)?;
            let p: Vec<f64> = s_q
                .iter()
                .map(|e| e.evaluate(&env))
                .collect::<Result<Vec<_>, _>>()?;
            let mut henv = env.clone();
            for (name, &v) in sys.p_names.iter().zip(&p) {
                henv.insert(name.clone(), v);
            }
            Ok(st + sys.h.evaluate(&henv)?)
        })();
        match attempt {
            Ok(r) => report.max_residual = report.max_residual.max(r.abs()),
            Err(ExprError::Singular(msg)) => report.skipped.push((i, msg)),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(report)
}

/// Writes a trajectory as CSV: `t,q1..qm,p1..pm,S,H`.
pub fn write_trajectory_csv<W: Write>(
    traj: &PhaseTrajectory,
    sys: &HamiltonianSystem,
    out: &mut W,
) -> Result<(), std::io::Error> {
    let m = sys.dof();
    let mut header = String::from("t");
    for j in 1..=m {
        header.push_str(&format!(",q{j}"));
    }
    for j in 1..=m {
        header.push_str(&format!(",p{j}"));
    }
    header.push_str(",S,H");
    writeln!(out, "{header}")?;
    for s in &traj.samples {
        let h = sys
            .energy(s.t, &s.q, &s.p)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let mut line = format!("{}", s.t);
        for v in &s.q {
            line.push_str(&format!(",{v}"));
        }
        for v in &s.p {
            line.push_str(&format!(",{v}"));
        }
        line.push_str(&format!(",{},{}", s.action, h));
        writeln!(out, "{line}")?;
    }
    Ok(())
}
