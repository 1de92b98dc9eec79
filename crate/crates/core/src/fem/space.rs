//! Tensor-product Lagrange elements on a quadtree mesh: reference tables, the
//! constrained CG space, nodal and Gauss-point fields, assembly, and the global
//! L² projection.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use super::linalg::{solve_spd, CsrMatrix, SolverSettings, SpdSolution};
use crate::error::{invalid, AmrError, Result};
use crate::mesh::{DofMap, Mesh, Octant};
use crate::quadrature::{LagrangeBasis1D, QuadratureRule1D};

/// Basis values and reference gradients at a tensor Gauss rule on `[-1, 1]^2`.
///
/// Point index `q = qx + nq·qy`, local node index `a = ax + (p+1)·ay`.
#[derive(Debug, Clone)]
pub struct ElementTables {
    degree: usize,
    n_quad_1d: usize,
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
    values: Vec<f64>,
    gradients: Vec<[f64; 2]>,
    ref_mass: Vec<f64>,
    ref_stiffness: Vec<f64>,
}

impl ElementTables {
    pub fn new(p: usize, nq: usize) -> Result<Self> {
        let basis = LagrangeBasis1D::equispaced(p)?;
        let rule = QuadratureRule1D::gauss_legendre(nq)?;
        let np = p + 1;
        let nloc = np * np;
        let v1: Vec<Vec<f64>> = rule.points().iter().map(|&x| basis.values(x)).collect();
        let d1: Vec<Vec<f64>> = rule.points().iter().map(|&x| basis.derivatives(x)).collect();
        let mut points = Vec::with_capacity(nq * nq);
        let mut weights = Vec::with_capacity(nq * nq);
        let mut values = Vec::with_capacity(nq * nq * nloc);
        let mut gradients = Vec::with_capacity(nq * nq * nloc);
        for qy in 0..nq {
            for qx in 0..nq {
                points.push([rule.points()[qx], rule.points()[qy]]);
                weights.push(rule.weights()[qx] * rule.weights()[qy]);
                for ay in 0..np {
                    for ax in 0..np {
                        values.push(v1[qx][ax] * v1[qy][ay]);
                        gradients.push([d1[qx][ax] * v1[qy][ay], v1[qx][ax] * d1[qy][ay]]);
                    }
                }
            }
        }
        let mut ref_mass = vec![0.0; nloc * nloc];
        let mut ref_stiffness = vec![0.0; nloc * nloc];
        for q in 0..nq * nq {
            let w = weights[q];
            let n = &values[q * nloc..(q + 1) * nloc];
            let g = &gradients[q * nloc..(q + 1) * nloc];
            for a in 0..nloc {
                for b in 0..nloc {
                    ref_mass[a * nloc + b] += w * n[a] * n[b];
                    ref_stiffness[a * nloc + b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
        Ok(Self { degree: p, n_quad_1d: nq, points, weights, values, gradients, ref_mass, ref_stiffness })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_quad_1d(&self) -> usize {
        self.n_quad_1d
    }

    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    pub fn n_local(&self) -> usize {
        (self.degree + 1).pow(2)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Basis values at point `q`.
    pub fn values_at(&self, q: usize) -> &[f64] {
        let n = self.n_local();
        &self.values[q * n..(q + 1) * n]
    }

    /// Reference-coordinate gradients at point `q`.
    pub fn gradients_at(&self, q: usize) -> &[[f64; 2]] {
        let n = self.n_local();
        &self.gradients[q * n..(q + 1) * n]
    }

    /// `∫ N_a N_b` over the reference square, row-major.
    pub fn ref_mass(&self) -> &[f64] {
        &self.ref_mass
    }

    /// `∫ ∇N_a · ∇N_b` over the reference square, row-major.
    pub fn ref_stiffness(&self) -> &[f64] {
        &self.ref_stiffness
    }
}

/// Jacobian determinant of the map from `[-1, 1]^2` onto `leaf`.
pub fn jacobian_det(leaf: &Octant) -> f64 {
    let half = 0.5 * leaf.width();
    half * half
}

/// Physical position of reference point `xi` in `leaf`.
pub fn map_to_leaf(leaf: &Octant, xi: [f64; 2]) -> [f64; 2] {
    let [x0, y0] = leaf.lower_corner();
    let half = 0.5 * leaf.width();
    [x0 + (xi[0] + 1.0) * half, y0 + (xi[1] + 1.0) * half]
}

/// Constrained continuous-Galerkin space of degree `p` on a balanced mesh.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Mesh,
    dofs: DofMap,
    tables: ElementTables,
    mass: OnceLock<CsrMatrix>,
    stiffness: OnceLock<CsrMatrix>,
}

impl FeSpace {
    /// Space using the `(p+1)`-point Gauss rule per axis.
    pub fn new(mesh: Mesh, p: usize) -> Result<Arc<Self>> {
        Self::with_quadrature(mesh, p, p + 1)
    }

    /// Space using an `nq`-point Gauss rule per axis, `nq ≥ p + 1`.
    pub fn with_quadrature(mesh: Mesh, p: usize, nq: usize) -> Result<Arc<Self>> {
        if nq < p + 1 {
            return invalid(format!("{nq} Gauss points per axis cannot integrate the degree-{p} mass matrix"));
        }
        let dofs = DofMap::enumerate(&mesh, p)?;
        let tables = ElementTables::new(p, nq)?;
        Ok(Arc::new(Self { mesh, dofs, tables, mass: OnceLock::new(), stiffness: OnceLock::new() }))
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn tables(&self) -> &ElementTables {
        &self.tables
    }

    pub fn degree(&self) -> usize {
        self.tables.degree
    }

    pub fn n_quad_1d(&self) -> usize {
        self.tables.n_quad_1d
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs()
    }

    pub fn n_leaves(&self) -> usize {
        self.mesh.len()
    }

    pub fn points_per_leaf(&self) -> usize {
        self.tables.n_points()
    }

    /// Physical Gauss points of `leaf`, lexicographic.
    pub fn gauss_points(&self, leaf: usize) -> Vec<[f64; 2]> {
        let o = self.mesh.leaf(leaf);
        self.tables.points.iter().map(|&xi| map_to_leaf(o, xi)).collect()
    }

    /// Whether both spaces describe the same mesh, degree and rule.
    pub fn same_as(&self, other: &FeSpace) -> bool {
        std::ptr::eq(self, other)
            || (self.degree() == other.degree()
                && self.n_quad_1d() == other.n_quad_1d()
                && self.mesh.leaves() == other.mesh.leaves())
    }

    /// Global mass matrix `M_ab = (N_a, N_b)` with hanging constraints folded in.
    pub fn mass(&self) -> &CsrMatrix {
        self.mass.get_or_init(|| self.assemble(self.tables.ref_mass(), |o| jacobian_det(o)))
    }

    /// Global stiffness matrix `K_ab = (∇N_a, ∇N_b)`.
    pub fn stiffness(&self) -> &CsrMatrix {
        // In 2D the Jacobian and the two inverse-Jacobian factors cancel.
        self.stiffness.get_or_init(|| self.assemble(self.tables.ref_stiffness(), |_| 1.0))
    }

    /// Assemble `Σ_e scale(e) · ref` through the constraint expansion.
    pub fn assemble(&self, reference: &[f64], scale: impl Fn(&Octant) -> f64 + Sync) -> CsrMatrix {
        self.assemble_elements(|e, out| {
            let s = scale(self.mesh.leaf(e));
            for (o, r) in out.iter_mut().zip(reference) {
                *o = s * r;
            }
        })
    }

    /// Assemble a global matrix from per-leaf dense matrices written by `element`.
    pub fn assemble_elements(&self, element: impl Fn(usize, &mut [f64]) + Sync) -> CsrMatrix {
        let nloc = self.tables.n_local();
        let per_leaf: Vec<Vec<(usize, usize, f64)>> = (0..self.n_leaves())
            .into_par_iter()
            .map(|e| {
                let mut ke = vec![0.0; nloc * nloc];
                element(e, &mut ke);
                let mut trip = Vec::with_capacity(nloc * nloc);
                for a in 0..nloc {
                    for b in 0..nloc {
                        let v = ke[a * nloc + b];
                        if v == 0.0 {
                            continue;
                        }
                        for &(i, wi) in self.dofs.local(e, a) {
                            for &(j, wj) in self.dofs.local(e, b) {
                                trip.push((i, j, wi * wj * v));
                            }
                        }
                    }
                }
                trip
            })
            .collect();
        let n = self.n_dofs();
        CsrMatrix::from_triplets(n, n, per_leaf.concat()).expect("element dofs lie inside the space")
    }

    /// Assemble a global vector from per-leaf local vectors written by `element`.
    pub fn assemble_vector(&self, element: impl Fn(usize, &mut [f64]) + Sync) -> Vec<f64> {
        let nloc = self.tables.n_local();
        let locals: Vec<Vec<f64>> = (0..self.n_leaves())
            .into_par_iter()
            .map(|e| {
                let mut fe = vec![0.0; nloc];
                element(e, &mut fe);
                fe
            })
            .collect();
        let mut out = vec![0.0; self.n_dofs()];
        for (e, fe) in locals.iter().enumerate() {
            for (a, &v) in fe.iter().enumerate() {
                for &(i, w) in self.dofs.local(e, a) {
                    out[i] += w * v;
                }
            }
        }
        out
    }

    /// Reference coordinates of `point` inside leaf `leaf`.
    pub fn reference_coords(&self, leaf: usize, point: [f64; 2]) -> [f64; 2] {
        let o = self.mesh.leaf(leaf);
        let [x0, y0] = o.lower_corner();
        let h = o.width();
        [2.0 * (point[0] - x0) / h - 1.0, 2.0 * (point[1] - y0) / h - 1.0]
    }
}

/// Nodal coefficients of a field in an [`FeSpace`], one per independent node.
#[derive(Debug, Clone)]
pub struct NodalField {
    space: Arc<FeSpace>,
    values: Vec<f64>,
}

impl NodalField {
    pub fn new(space: Arc<FeSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.n_dofs() {
            return invalid(format!("{} values for {} dofs", values.len(), space.n_dofs()));
        }
        Ok(Self { space, values })
    }

    pub fn constant(space: Arc<FeSpace>, c: f64) -> Self {
        let n = space.n_dofs();
        Self { space, values: vec![c; n] }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(space: Arc<FeSpace>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..space.n_dofs()).map(|d| f(space.dofs().dof_position(d))).collect();
        Self { space, values }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Local nodal values of `leaf`, constraints applied.
    pub fn local_values(&self, leaf: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.space.tables().n_local()];
        self.space.dofs().gather(leaf, &self.values, &mut out);
        out
    }

    /// Field value at an arbitrary point of the unit square.
    pub fn eval_at(&self, point: [f64; 2]) -> Result<f64> {
        Ok(self.eval_many(&[point])?[0])
    }

    /// Field values at many points, each located in the mesh independently.
    pub fn eval_many(&self, points: &[[f64; 2]]) -> Result<Vec<f64>> {
        let basis = LagrangeBasis1D::equispaced(self.space.degree())?;
        let np = basis.len();
        points
            .par_iter()
            .with_min_len(64)
            .map(|&point| {
                let leaf = self.space.mesh().locate(point)?;
                let xi = self.space.reference_coords(leaf, point);
                let vx = basis.values(xi[0]);
                let vy = basis.values(xi[1]);
                let u = self.local_values(leaf);
                let mut s = 0.0;
                for ay in 0..np {
                    for ax in 0..np {
                        s += vx[ax] * vy[ay] * u[ax + np * ay];
                    }
                }
                Ok(s)
            })
            .collect()
    }

    /// Values at the Gauss points of every leaf.
    pub fn eval_at_gauss(&self) -> GaussField {
        let tables = self.space.tables();
        let nq = tables.n_points();
        let mut out = vec![0.0; self.space.n_leaves() * nq];
        out.par_chunks_mut(nq).enumerate().for_each(|(e, block)| {
            let u = self.local_values(e);
            for (q, g) in block.iter_mut().enumerate() {
                *g = tables.values_at(q).iter().zip(&u).map(|(n, v)| n * v).sum();
            }
        });
        GaussField { space: self.space.clone(), values: out }
    }

    /// Physical gradients at the Gauss points of every leaf.
    pub fn gradients_at_gauss(&self) -> Vec<[f64; 2]> {
        let tables = self.space.tables();
        let nq = tables.n_points();
        let mut out = vec![[0.0; 2]; self.space.n_leaves() * nq];
        out.par_chunks_mut(nq).enumerate().for_each(|(e, block)| {
            let u = self.local_values(e);
            let scale = 2.0 / self.space.mesh().leaf(e).width();
            for (q, g) in block.iter_mut().enumerate() {
                let mut s = [0.0; 2];
                for (dn, v) in tables.gradients_at(q).iter().zip(&u) {
                    s[0] += dn[0] * v;
                    s[1] += dn[1] * v;
                }
                *g = [scale * s[0], scale * s[1]];
            }
        });
        out
    }

    /// Per-leaf integrals of `f(x, u, ∇u)` with an `nq`-point Gauss rule per axis.
    pub fn leaf_integrals(&self, nq: usize, f: impl Fn([f64; 2], f64, [f64; 2]) -> f64 + Sync) -> Result<Vec<f64>> {
        let tables = if nq == self.space.n_quad_1d() {
            None
        } else {
            Some(ElementTables::new(self.space.degree(), nq)?)
        };
        let tables = tables.as_ref().unwrap_or(self.space.tables());
        Ok((0..self.space.n_leaves())
            .into_par_iter()
            .map(|e| {
                let leaf = self.space.mesh().leaf(e);
                let u = self.local_values(e);
                let scale = 2.0 / leaf.width();
                let mut sum = 0.0;
                for q in 0..tables.n_points() {
                    let val: f64 = tables.values_at(q).iter().zip(&u).map(|(n, v)| n * v).sum();
                    let mut g = [0.0; 2];
                    for (dn, v) in tables.gradients_at(q).iter().zip(&u) {
                        g[0] += dn[0] * v;
                        g[1] += dn[1] * v;
                    }
                    let x = map_to_leaf(leaf, tables.points()[q]);
                    sum += tables.weights()[q] * f(x, val, [scale * g[0], scale * g[1]]);
                }
                sum * jacobian_det(leaf)
            })
            .collect())
    }

    /// `∫ f(x, u, ∇u)` over the domain with an `nq`-point rule per axis.
    pub fn integrate_with(&self, nq: usize, f: impl Fn([f64; 2], f64, [f64; 2]) -> f64 + Sync) -> Result<f64> {
        Ok(self.leaf_integrals(nq, f)?.iter().sum())
    }

    /// `∫ u` with the space's element rule.
    pub fn integral(&self) -> f64 {
        self.eval_at_gauss().integrate()
    }
}

/// Values at the Gauss points of every leaf: leaf-major in Morton order,
/// lexicographic within a leaf.
#[derive(Debug, Clone)]
pub struct GaussField {
    space: Arc<FeSpace>,
    values: Vec<f64>,
}

impl GaussField {
    pub fn new(space: Arc<FeSpace>, values: Vec<f64>) -> Result<Self> {
        let expect = space.n_leaves() * space.points_per_leaf();
        if values.len() != expect {
            return invalid(format!("{} Gauss values, expected {expect}", values.len()));
        }
        Ok(Self { space, values })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block(&self, leaf: usize) -> &[f64] {
        let n = self.space.points_per_leaf();
        &self.values[leaf * n..(leaf + 1) * n]
    }

    /// `Σ_e Σ_q w_q |J_e| g_q`, summed in leaf order.
    pub fn integrate(&self) -> f64 {
        let w = self.space.tables().weights();
        (0..self.space.n_leaves())
            .map(|e| {
                let s: f64 = self.block(e).iter().zip(w).map(|(g, w)| g * w).sum();
                s * jacobian_det(self.space.mesh().leaf(e))
            })
            .sum()
    }

    /// `b_a = Σ_e Σ_q w_q |J_e| g_q N_a(x_q)`.
    pub fn load_vector(&self) -> Vec<f64> {
        let tables = self.space.tables();
        self.space.assemble_vector(|e, fe| {
            let det = jacobian_det(self.space.mesh().leaf(e));
            for (q, &g) in self.block(e).iter().enumerate() {
                let s = det * tables.weights()[q] * g;
                for (f, n) in fe.iter_mut().zip(tables.values_at(q)) {
                    *f += s * n;
                }
            }
        })
    }

    /// Global L² projection onto the nodal space: solve `M G = b`.
    pub fn project_l2(&self, settings: SolverSettings) -> Result<NodalField> {
        Ok(self.project_l2_report(settings)?.0)
    }

    /// As [`GaussField::project_l2`], also returning the solver report.
    pub fn project_l2_report(&self, settings: SolverSettings) -> Result<(NodalField, SpdSolution)> {
        let b = self.load_vector();
        let sol = solve_spd(self.space.mass(), &b, settings)?;
        if !(sol.rel_residual <= 10.0 * settings.rel_tol) {
            return Err(AmrError::SolverFailure { iterations: sol.iterations, residual: sol.rel_residual });
        }
        let field = NodalField { space: self.space.clone(), values: sol.x.clone() };
        Ok((field, sol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{AdaptPlan, Flag, Stage, ROOT_LEN};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn adapted_mesh() -> Mesh {
        let m = Mesh::uniform(2).unwrap();
        let flags = m
            .leaves()
            .iter()
            .map(|o| if o.anchor() == [ROOT_LEN / 4, ROOT_LEN / 4] || o.anchor() == [0, 0] { Flag::Refine } else { Flag::NoChange })
            .collect();
        let m = m.execute_refine(&AdaptPlan::new(Stage::Refine, flags).unwrap()).unwrap().0;
        let flags = m.leaves().iter().map(|o| if o.anchor() == [0, 0] { Flag::Refine } else { Flag::NoChange }).collect();
        m.execute_refine(&AdaptPlan::new(Stage::Refine, flags).unwrap()).unwrap().0
    }

    #[test]
    fn reference_mass_of_q1_matches_closed_form() {
        // 1D factor (h/6)[[2,1],[1,2]] on [-1,1] is (1/3)[[2,1],[1,2]].
        let t = ElementTables::new(1, 2).unwrap();
        let m1 = [[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
        for a in 0..4 {
            for b in 0..4 {
                let expect = m1[a % 2][b % 2] * m1[a / 2][b / 2];
                assert!((t.ref_mass()[a * 4 + b] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_field_evaluates_and_integrates_exactly() {
        for p in 1..=2 {
            let s = FeSpace::new(adapted_mesh(), p).unwrap();
            let f = NodalField::constant(s.clone(), 2.5);
            let g = f.eval_at_gauss();
            assert!(g.values().iter().all(|&v| (v - 2.5).abs() < 1e-14));
            assert!((g.integrate() - 2.5).abs() < 1e-14);
            assert!((NodalField::constant(s, 1.0).integral() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_field_reproduced_at_gauss_points() {
        let s = FeSpace::new(Mesh::uniform(1).unwrap(), 1).unwrap();
        let f = NodalField::interpolate(s.clone(), |x| x[0]);
        let g = f.eval_at_gauss();
        for e in 0..s.n_leaves() {
            for (q, x) in s.gauss_points(e).iter().enumerate() {
                assert!((g.block(e)[q] - x[0]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_row_sums_give_domain_volume() {
        for p in 1..=2 {
            let s = FeSpace::new(adapted_mesh(), p).unwrap();
            let m = s.mass();
            assert!(m.asymmetry() < 1e-14);
            let total: f64 = m.triplets().map(|(_, _, v)| v).sum();
            assert!((total - 1.0).abs() < 1e-14);
            let k = s.stiffness();
            let ones = vec![1.0; s.n_dofs()];
            assert!(k.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn integrate_matches_explicit_loop() {
        let s = FeSpace::new(adapted_mesh(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..s.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = NodalField::new(s.clone(), vals).unwrap();
        let rule = QuadratureRule1D::gauss_legendre(3).unwrap();
        let mut oracle = 0.0;
        for (e, o) in s.mesh().leaves().iter().enumerate() {
            let h = o.width();
            let [x0, y0] = o.lower_corner();
            let _ = e;
            for qy in 0..3 {
                for qx in 0..3 {
                    let x = [x0 + (rule.points()[qx] + 1.0) * h / 2.0, y0 + (rule.points()[qy] + 1.0) * h / 2.0];
                    oracle += rule.weights()[qx] * rule.weights()[qy] * h * h / 4.0 * f.eval_at(x).unwrap();
                }
            }
        }
        assert!((f.integral() - oracle).abs() < 1e-13);
    }

    #[test]
    fn projection_is_identity_on_the_space() {
        // Nodal accuracy is bounded by the CG residual times the mass-matrix
        // conditioning, which grows with the level spread of the mesh.
        for (mesh, tol) in [(Mesh::uniform(3).unwrap(), 1e-11), (adapted_mesh(), 1e-10)] {
            for p in 1..=2 {
                let s = FeSpace::new(mesh.clone(), p).unwrap();
                let f = NodalField::interpolate(s.clone(), |x| (3.0 * x[0]).sin() + x[1] * x[1]);
                let back = f.eval_at_gauss().project_l2(SolverSettings::default()).unwrap();
                for (a, b) in f.values().iter().zip(back.values()) {
                    assert!((a - b).abs() < tol, "p={p} {a} {b}");
                }
            }
        }
    }

    #[test]
    fn projection_preserves_the_integral() {
        let s = FeSpace::new(adapted_mesh(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..s.n_leaves() * s.points_per_leaf()).map(|_| rng.random_range(0.0..2.0)).collect();
        let g = GaussField::new(s, vals).unwrap();
        let f = g.project_l2(SolverSettings::default()).unwrap();
        assert!((f.integral() - g.integrate()).abs() <= 1e-11 * g.integrate().abs());
    }

    #[test]
    fn higher_rule_needs_enough_points() {
        assert!(FeSpace::with_quadrature(Mesh::uniform(1).unwrap(), 2, 2).is_err());
        let s = FeSpace::with_quadrature(Mesh::uniform(1).unwrap(), 1, 4).unwrap();
        assert_eq!(s.points_per_leaf(), 16);
    }
}
