//! Uniform continuous-Galerkin spaces on `[0, 1]`, used to demonstrate the
//! coarsening operators on a single uniform coarsening step.

use crate::error::{invalid, Result};
use crate::fem::{solve_spd, CsrMatrix, SolverSettings};
use crate::quadrature::{LagrangeBasis1D, QuadratureRule1D};
use crate::restriction::restriction_operator;

/// `n` equal elements of degree `p` with the `(p+1)`-point Gauss rule.
#[derive(Debug, Clone)]
pub struct LineSpace {
    n_elements: usize,
    basis: LagrangeBasis1D,
    rule: QuadratureRule1D,
}

impl LineSpace {
    pub fn new(n_elements: usize, p: usize) -> Result<Self> {
        if n_elements == 0 {
            return invalid("a line space needs at least one element".to_string());
        }
        Ok(Self {
            n_elements,
            basis: LagrangeBasis1D::equispaced(p)?,
            rule: QuadratureRule1D::gauss_legendre(p + 1)?,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_elements * self.degree() + 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_elements as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 / (self.n_elements * self.degree()) as f64
    }

    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n_dofs()).map(|i| f(self.node(i))).collect()
    }

    /// Field values at the Gauss points, element-major.
    pub fn gauss_values(&self, u: &[f64]) -> Vec<f64> {
        let p = self.degree();
        let table: Vec<Vec<f64>> = self.rule.points().iter().map(|&x| self.basis.values(x)).collect();
        let mut out = Vec::with_capacity(self.n_elements * self.rule.len());
        for e in 0..self.n_elements {
            for row in &table {
                out.push((0..=p).map(|a| row[a] * u[e * p + a]).sum());
            }
        }
        out
    }

    /// `Σ_e Σ_q w_q (h/2) g_q`.
    pub fn integrate_gauss(&self, g: &[f64]) -> f64 {
        let half = 0.5 * self.h();
        g.chunks(self.rule.len())
            .map(|b| half * b.iter().zip(self.rule.weights()).map(|(v, w)| v * w).sum::<f64>())
            .sum()
    }

    pub fn integral(&self, u: &[f64]) -> f64 {
        self.integrate_gauss(&self.gauss_values(u))
    }

    pub fn mass(&self) -> CsrMatrix {
        let p = self.degree();
        let half = 0.5 * self.h();
        let table: Vec<Vec<f64>> = self.rule.points().iter().map(|&x| self.basis.values(x)).collect();
        let mut trip = Vec::new();
        for e in 0..self.n_elements {
            for a in 0..=p {
                for b in 0..=p {
                    let v: f64 = table
                        .iter()
                        .zip(self.rule.weights())
                        .map(|(n, w)| w * half * n[a] * n[b])
                        .sum();
                    trip.push((e * p + a, e * p + b, v));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_dofs(), self.n_dofs(), trip).expect("indices lie inside the space")
    }

    /// Global L² projection of Gauss values onto the nodal space.
    pub fn project_l2(&self, g: &[f64], settings: SolverSettings) -> Result<Vec<f64>> {
        if g.len() != self.n_elements * self.rule.len() {
            return invalid(format!("{} Gauss values for {} elements", g.len(), self.n_elements));
        }
        let p = self.degree();
        let half = 0.5 * self.h();
        let table: Vec<Vec<f64>> = self.rule.points().iter().map(|&x| self.basis.values(x)).collect();
        let mut b = vec![0.0; self.n_dofs()];
        for (e, block) in g.chunks(self.rule.len()).enumerate() {
            for ((n, w), gq) in table.iter().zip(self.rule.weights()).zip(block) {
                for a in 0..=p {
                    b[e * p + a] += half * w * gq * n[a];
                }
            }
        }
        Ok(solve_spd(&self.mass(), &b, settings)?.x)
    }

    /// The space with every pair of elements merged.
    pub fn coarsened(&self) -> Result<Self> {
        if self.n_elements % 2 != 0 {
            return invalid(format!("{} elements cannot be merged pairwise", self.n_elements));
        }
        Self::new(self.n_elements / 2, self.degree())
    }

    /// Injection onto [`LineSpace::coarsened`]: keep every other node.
    pub fn inject(&self, u: &[f64]) -> Result<Vec<f64>> {
        let coarse = self.coarsened()?;
        Ok((0..coarse.n_dofs()).map(|i| u[2 * i]).collect())
    }

    /// Conservative coarsening onto [`LineSpace::coarsened`].
    pub fn coarsen_conservative(&self, u: &[f64], settings: SolverSettings) -> Result<Vec<f64>> {
        let coarse = self.coarsened()?;
        let nq = self.rule.len();
        let op = restriction_operator(self.degree(), nq, nq)?;
        let fine = self.gauss_values(u);
        let mut g = Vec::with_capacity(coarse.n_elements * nq);
        for pair in fine.chunks(2 * nq) {
            g.extend(op.apply(1, pair)?);
        }
        coarse.project_l2(&g, settings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(x: f64) -> f64 {
        (2.0 * std::f64::consts::PI * x).cos().abs() + 10.0
    }

    #[test]
    fn q1_mass_matrix_is_analytic() {
        let s = LineSpace::new(1, 1).unwrap();
        let m = s.mass();
        assert!((m.get(0, 0) - 2.0 / 6.0).abs() < 1e-14);
        assert!((m.get(0, 1) - 1.0 / 6.0).abs() < 1e-14);
        assert!((m.get(1, 1) - 2.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn linear_coarsening_integrals() {
        let s = LineSpace::new(16, 1).unwrap();
        let u = s.interpolate(g);
        let c = s.coarsened().unwrap();
        let orig = s.integral(&u);
        let inj = c.integral(&s.inject(&u).unwrap());
        let cons = c.integral(&s.coarsen_conservative(&u, SolverSettings::default()).unwrap());
        assert!((orig - 10.6284).abs() < 1e-3);
        assert!((inj - 10.6036).abs() < 1e-3);
        assert!((cons - orig).abs() < 1e-11);
    }

    #[test]
    fn quadratic_coarsening_integrals() {
        let s = LineSpace::new(8, 2).unwrap();
        let u = s.interpolate(g);
        let c = s.coarsened().unwrap();
        let orig = s.integral(&u);
        let inj = c.integral(&s.inject(&u).unwrap());
        let cons = c.integral(&s.coarsen_conservative(&u, SolverSettings::default()).unwrap());
        assert!((orig - 10.6367).abs() < 1e-3);
        assert!((inj - 10.6381).abs() < 1e-3);
        assert!((cons - orig).abs() < 1e-11);
    }

    #[test]
    fn odd_element_count_cannot_coarsen() {
        assert!(LineSpace::new(3, 1).unwrap().coarsened().is_err());
    }
}
