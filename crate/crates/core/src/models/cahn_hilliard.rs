//! Split Cahn–Hilliard system in weak form with Neumann boundaries,
//! backward Euler in time, Newton on the coupled `[φ; μ]` unknowns:
//!
//! `R_φ = M(φ − φⁿ)/Δt + m K μ`,  `R_μ = M μ − F(φ) − ε² K φ`,
//! with `F_a = ∫ f′(φ) N_a`.
//!
//! The nonlinear integrals use the same rule as [`energy`], so the scheme
//! differentiates exactly the discrete energy that is reported.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::free_energy::FreeEnergy;
use crate::error::{invalid, AmrError, Result};
use crate::fem::{
    jacobian_det, solve_newton, solve_spd, CsrMatrix, ElementTables, FeSpace, NewtonSettings, NodalField,
    SolverSettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CahnHilliardProblem {
    pub free_energy: FreeEnergy,
    pub eps2: f64,
    pub mobility: f64,
    pub dt: f64,
    pub t_final: f64,
    pub mean: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for CahnHilliardProblem {
    fn default() -> Self {
        Self {
            free_energy: FreeEnergy::Polynomial,
            eps2: 1e-3,
            mobility: 1.0,
            dt: 5e-4,
            t_final: 0.5,
            mean: 0.0,
            amplitude: 0.1,
            seed: 1,
        }
    }
}

impl CahnHilliardProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps2 > 0.0) || !(self.mobility > 0.0) {
            return invalid(format!("eps2 and mobility must be positive ({}, {})", self.eps2, self.mobility));
        }
        if !(self.dt > 0.0) || !(self.t_final >= 0.0) || !(self.amplitude >= 0.0) {
            return invalid("invalid time stepping or amplitude".to_string());
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Gauss points per axis for the nonlinear terms and the energy.
pub fn energy_rule(p: usize) -> usize {
    2 * p + 1
}

/// Ginzburg–Landau energy `∫ f(φ) + ½ε²|∇φ|²`.
pub fn energy(phi: &NodalField, problem: &CahnHilliardProblem) -> Result<f64> {
    let fe = problem.free_energy;
    let half_eps2 = 0.5 * problem.eps2;
    phi.integrate_with(energy_rule(phi.space().degree()), |_, u, g| {
        fe.f(u) + half_eps2 * (g[0] * g[0] + g[1] * g[1])
    })
}

/// Counter-based uniform samples in `[mean − a, mean + a]`, one per node,
/// keyed on the node's lattice position so the value does not depend on the mesh.
pub fn random_mixture_ic(space: &Arc<FeSpace>, mean: f64, amplitude: f64, seed: u64) -> Result<NodalField> {
    if !(amplitude >= 0.0) {
        return invalid(format!("amplitude must be non-negative, got {amplitude}"));
    }
    let values = space
        .dofs()
        .dof_keys()
        .iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((k[0] as u64) << 32) | k[1] as u64);
            let u: f64 = rng.random();
            mean + amplitude * (2.0 * u - 1.0)
        })
        .collect();
    NodalField::new(space.clone(), values)
}

/// Nonlinear load `F_a = ∫ f′(φ) N_a`.
fn nonlinear_load(space: &FeSpace, tables: &ElementTables, phi: &[f64], fe: FreeEnergy) -> Vec<f64> {
    let nloc = tables.n_local();
    space.assemble_vector(|e, out| {
        let mut u = vec![0.0; nloc];
        space.dofs().gather(e, phi, &mut u);
        let det = jacobian_det(space.mesh().leaf(e));
        for q in 0..tables.n_points() {
            let n = tables.values_at(q);
            let val: f64 = n.iter().zip(&u).map(|(a, b)| a * b).sum();
            let s = det * tables.weights()[q] * fe.df(val);
            for (o, na) in out.iter_mut().zip(n) {
                *o += s * na;
            }
        }
    })
}

/// `J_ab = ∫ f″(φ) N_a N_b`.
fn nonlinear_jacobian(space: &FeSpace, tables: &ElementTables, phi: &[f64], fe: FreeEnergy) -> CsrMatrix {
    let nloc = tables.n_local();
    space.assemble_elements(|e, out| {
        let mut u = vec![0.0; nloc];
        space.dofs().gather(e, phi, &mut u);
        let det = jacobian_det(space.mesh().leaf(e));
        for q in 0..tables.n_points() {
            let n = tables.values_at(q);
            let val: f64 = n.iter().zip(&u).map(|(a, b)| a * b).sum();
            let s = det * tables.weights()[q] * fe.d2f(val);
            for a in 0..nloc {
                for b in 0..nloc {
                    out[a * nloc + b] += s * n[a] * n[b];
                }
            }
        }
    })
}

/// Residual and Jacobian of one backward-Euler step on a fixed space.
pub struct ChSystem<'a> {
    space: &'a FeSpace,
    tables: ElementTables,
    problem: CahnHilliardProblem,
    dt: f64,
    phi_old: &'a [f64],
}

impl<'a> ChSystem<'a> {
    pub fn new(space: &'a FeSpace, problem: CahnHilliardProblem, dt: f64, phi_old: &'a [f64]) -> Result<Self> {
        let tables = ElementTables::new(space.degree(), energy_rule(space.degree()))?;
        Ok(Self { space, tables, problem, dt, phi_old })
    }

    /// `[R_φ; R_μ]` at `x = [φ; μ]`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let n = self.space.n_dofs();
        let (phi, mu) = x.split_at(n);
        let m = self.space.mass();
        let k = self.space.stiffness();
        let dphi: Vec<f64> = phi.iter().zip(self.phi_old).map(|(a, b)| (a - b) / self.dt).collect();
        let mut r = m.mul_vec(&dphi);
        for (ri, ki) in r.iter_mut().zip(k.mul_vec(mu)) {
            *ri += self.problem.mobility * ki;
        }
        let mut r_mu = m.mul_vec(mu);
        let f = nonlinear_load(self.space, &self.tables, phi, self.problem.free_energy);
        let kphi = k.mul_vec(phi);
        for ((ri, fi), ki) in r_mu.iter_mut().zip(&f).zip(&kphi) {
            *ri -= fi + self.problem.eps2 * ki;
        }
        r.extend(r_mu);
        r
    }

    /// `[[M/Δt, mK], [−(J_F + ε²K), M]]`.
    pub fn jacobian(&self, x: &[f64]) -> Result<CsrMatrix> {
        let n = self.space.n_dofs();
        let m = self.space.mass();
        let k = self.space.stiffness();
        let jf = nonlinear_jacobian(self.space, &self.tables, &x[..n], self.problem.free_energy);
        let mut trip = Vec::with_capacity(2 * m.nnz() + 2 * k.nnz() + jf.nnz());
        for (r, c, v) in m.triplets() {
            trip.push((r, c, v / self.dt));
            trip.push((n + r, n + c, v));
        }
        for (r, c, v) in k.triplets() {
            trip.push((r, n + c, self.problem.mobility * v));
            trip.push((n + r, c, -self.problem.eps2 * v));
        }
        for (r, c, v) in jf.triplets() {
            trip.push((n + r, c, -v));
        }
        CsrMatrix::from_triplets(2 * n, 2 * n, trip)
    }
}

/// Phase field and chemical potential on a common space.
#[derive(Debug, Clone)]
pub struct ChState {
    pub phi: NodalField,
    pub mu: NodalField,
}

/// `μ` consistent with `φ`: the L² projection of `f′(φ) − ε²∇²φ`.
pub fn chemical_potential(phi: &NodalField, problem: &CahnHilliardProblem, settings: SolverSettings) -> Result<NodalField> {
    let space = phi.space();
    let tables = ElementTables::new(space.degree(), energy_rule(space.degree()))?;
    let mut b = nonlinear_load(space, &tables, phi.values(), problem.free_energy);
    for (bi, ki) in b.iter_mut().zip(space.stiffness().mul_vec(phi.values())) {
        *bi += problem.eps2 * ki;
    }
    NodalField::new(space.clone(), solve_spd(space.mass(), &b, settings)?.x)
}

#[derive(Debug, Clone)]
pub struct ChStepOutcome {
    pub state: ChState,
    pub newton_iterations: usize,
    /// The step was completed as two half steps after a Newton failure.
    pub halved: bool,
}

fn backward_euler(state: &ChState, problem: &CahnHilliardProblem, dt: f64, newton: NewtonSettings) -> Result<(ChState, usize)> {
    let space = state.phi.space();
    if !Arc::ptr_eq(space, state.mu.space()) && !space.same_as(state.mu.space()) {
        return invalid("phi and mu live on different spaces".to_string());
    }
    let sys = ChSystem::new(space, *problem, dt, state.phi.values())?;
    let mut x0 = state.phi.values().to_vec();
    x0.extend_from_slice(state.mu.values());
    let out = solve_newton(|x| Ok(sys.residual(x)), |x| sys.jacobian(x), x0, newton)?;
    let n = space.n_dofs();
    let mu = out.x[n..].to_vec();
    let phi = out.x[..n].to_vec();
    Ok((
        ChState { phi: NodalField::new(space.clone(), phi)?, mu: NodalField::new(space.clone(), mu)? },
        out.iterations,
    ))
}

/// Advance by `problem.dt`; on Newton failure retry once as two half steps.
pub fn ch_step(state: &ChState, problem: &CahnHilliardProblem, newton: NewtonSettings) -> Result<ChStepOutcome> {
    match backward_euler(state, problem, problem.dt, newton) {
        Ok((state, it)) => Ok(ChStepOutcome { state, newton_iterations: it, halved: false }),
        Err(AmrError::NonlinearFailure { reason, trace }) => {
            log::warn!("Newton failed ({reason}); retrying with half the step");
            let half = 0.5 * problem.dt;
            let retry = backward_euler(state, problem, half, newton)
                .and_then(|(mid, i1)| backward_euler(&mid, problem, half, newton).map(|(s, i2)| (s, i1 + i2)));
            match retry {
                Ok((state, it)) => Ok(ChStepOutcome { state, newton_iterations: it, halved: true }),
                Err(AmrError::NonlinearFailure { reason: r2, trace: t2 }) => {
                    let mut all = trace;
                    all.extend(t2);
                    Err(AmrError::NonlinearFailure { reason: format!("{reason}; after halving: {r2}"), trace: all })
                }
                Err(e) => Err(e),
            }
        }
        Err(e) => Err(e),
    }
}
