use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fem::{solve_spd_from, CsrMatrix, FeSpace, NodalField, SolverSettings};

/// Heat equation `φ_t = κ ∇²φ` with homogeneous Neumann boundaries and the
/// manufactured solution `1 + A cos(2πx) cos(2πy) e^{−8π²κt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionProblem {
    pub amplitude: f64,
    pub kappa: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Implicitness of the θ-scheme; 0.5 is Crank–Nicolson.
    pub theta: f64,
}

impl Default for DiffusionProblem {
    fn default() -> Self {
        Self { amplitude: 0.1, kappa: 0.03, dt: 0.01, t_final: 1.0, theta: 0.5 }
    }
}

impl DiffusionProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return invalid(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return invalid(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if !(self.dt > 0.0) || !(self.t_final >= 0.0) {
            return invalid(format!("invalid time stepping dt={} t_final={}", self.dt, self.t_final));
        }
        Ok(())
    }

    /// Number of steps to reach `t_final`.
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

pub fn mms_exact(x: f64, y: f64, t: f64, problem: &DiffusionProblem) -> f64 {
    1.0 + problem.amplitude * (2.0 * PI * x).cos() * (2.0 * PI * y).cos() * (-8.0 * PI * PI * problem.kappa * t).exp()
}

/// `‖φ_h − φ(·, t)‖_{L²}` with a Gauss rule three points richer than the element rule.
pub fn mms_l2_error(field: &NodalField, t: f64, problem: &DiffusionProblem) -> Result<f64> {
    let nq = field.space().degree() + 3;
    let sq = field.integrate_with(nq, |x, u, _| {
        let e = u - mms_exact(x[0], x[1], t, problem);
        e * e
    })?;
    Ok(sq.sqrt())
}

/// θ-scheme time stepper that reuses its matrices while the space is unchanged.
#[derive(Debug)]
pub struct DiffusionStepper {
    problem: DiffusionProblem,
    settings: SolverSettings,
    cache: Option<(Arc<FeSpace>, CsrMatrix, CsrMatrix)>,
}

impl DiffusionStepper {
    pub fn new(problem: DiffusionProblem, settings: SolverSettings) -> Result<Self> {
        problem.validate()?;
        Ok(Self { problem, settings, cache: None })
    }

    pub fn problem(&self) -> &DiffusionProblem {
        &self.problem
    }

    /// Solve `(M/Δt + θκK) φⁿ⁺¹ = (M/Δt − (1−θ)κK) φⁿ`.
    pub fn step(&mut self, field: &NodalField) -> Result<NodalField> {
        let space = field.space();
        let stale = !matches!(&self.cache, Some((s, _, _)) if Arc::ptr_eq(s, space));
        if stale {
            let p = &self.problem;
            let inv_dt = 1.0 / p.dt;
            let lhs = CsrMatrix::lincomb(inv_dt, space.mass(), p.theta * p.kappa, space.stiffness())?;
            let rhs = CsrMatrix::lincomb(inv_dt, space.mass(), -(1.0 - p.theta) * p.kappa, space.stiffness())?;
            self.cache = Some((space.clone(), lhs, rhs));
        }
        let (_, lhs, rhs) = self.cache.as_ref().unwrap();
        let b = rhs.mul_vec(field.values());
        let sol = solve_spd_from(lhs, &b, field.values().to_vec(), self.settings)?;
        NodalField::new(space.clone(), sol.x)
    }
}

/// One θ-scheme step without matrix reuse.
pub fn diffusion_step(field: &NodalField, problem: &DiffusionProblem, settings: SolverSettings) -> Result<NodalField> {
    DiffusionStepper::new(*problem, settings)?.step(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    #[test]
    fn exact_solution_values() {
        let p = DiffusionProblem::default();
        assert!((mms_exact(0.0, 0.0, 0.0, &p) - 1.1).abs() < 1e-15);
        assert!((mms_exact(0.25, 0.25, 0.7, &p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_solution_has_unit_mass() {
        let s = FeSpace::new(Mesh::uniform(3).unwrap(), 2).unwrap();
        let p = DiffusionProblem::default();
        for t in [0.0, 0.5] {
            let f = NodalField::interpolate(s.clone(), |x| mms_exact(x[0], x[1], t, &p));
            let m = f.integrate_with(8, |x, _, _| mms_exact(x[0], x[1], t, &p)).unwrap();
            assert!((m - 1.0).abs() < 1e-13);
            assert!((f.integral() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_is_steady() {
        let s = FeSpace::new(Mesh::uniform(3).unwrap(), 1).unwrap();
        let f = NodalField::constant(s, 1.3);
        let g = diffusion_step(&f, &DiffusionProblem::default(), SolverSettings::default()).unwrap();
        assert!(g.values().iter().all(|v| (v - 1.3).abs() < 1e-13));
    }

    #[test]
    fn static_mesh_conserves_mass() {
        let s = FeSpace::new(Mesh::uniform(4).unwrap(), 1).unwrap();
        let p = DiffusionProblem::default();
        let mut f = NodalField::interpolate(s, |x| mms_exact(x[0], x[1], 0.0, &p));
        let m0 = f.integral();
        let mut stepper = DiffusionStepper::new(p, SolverSettings::default()).unwrap();
        for _ in 0..10 {
            f = stepper.step(&f).unwrap();
            assert!((f.integral() - m0).abs() < 1e-12);
        }
    }

    #[test]
    fn crank_nicolson_is_second_order_in_time() {
        // Fine fixed mesh, so the spatial error is small next to the time error.
        let s = FeSpace::new(Mesh::uniform(5).unwrap(), 2).unwrap();
        let t_final = 0.4;
        let mut errs = Vec::new();
        for dt in [0.1, 0.05] {
            let p = DiffusionProblem { dt, t_final, ..DiffusionProblem::default() };
            let mut f = NodalField::interpolate(s.clone(), |x| mms_exact(x[0], x[1], 0.0, &p));
            let mut stepper = DiffusionStepper::new(p, SolverSettings::default()).unwrap();
            for _ in 0..p.n_steps() {
                f = stepper.step(&f).unwrap();
            }
            errs.push(mms_l2_error(&f, t_final, &p).unwrap());
        }
        let ratio = errs[0] / errs[1];
        assert!((3.5..4.5).contains(&ratio), "error ratio {ratio}");
    }
}
