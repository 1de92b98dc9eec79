//! Local L² restriction from the Gauss points of `2^dim` children onto the
//! Gauss points of their parent.
//!
//! The 1D operator `R` has shape `n_c × 2·n_f`; columns are ordered child-major
//! (left child first), point-minor. In `dim` dimensions the operator is the
//! `dim`-fold Kronecker product of `R`, applied on the fly: entry
//! `(I, (child, ℓ))` is `Π_d R[I_d][c_d·n_f + ℓ_d]` where `(c_x, c_y, c_z)` are
//! the bits of the Morton child index.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use faer::prelude::*;
use faer::Mat;

use crate::error::{invalid, AmrError, Result};
use crate::quadrature::{tensor_index_map, LagrangeBasis1D, QuadratureRule1D};

/// Position of a child inside its parent, one bit per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChildCoordinates {
    pub cx: usize,
    pub cy: usize,
    pub cz: usize,
}

impl ChildCoordinates {
    pub fn as_array(self) -> [usize; 3] {
        [self.cx, self.cy, self.cz]
    }
}

/// Split a Morton child index into per-axis bits (bit 0 = x, bit 1 = y, bit 2 = z).
pub fn decode_morton(child: usize, dim: usize) -> Result<ChildCoordinates> {
    if !(1..=3).contains(&dim) {
        return invalid(format!("dimension {dim} not in 1..=3"));
    }
    if child >= 1 << dim {
        return invalid(format!("child index {child} out of range for dim {dim}"));
    }
    Ok(ChildCoordinates {
        cx: child & 1,
        cy: if dim >= 2 { (child & 2) >> 1 } else { 0 },
        cz: if dim == 3 { (child & 4) >> 2 } else { 0 },
    })
}

/// Precomputed 1D fine-to-coarse restriction matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionOperator {
    degree: usize,
    n_ip_f: usize,
    n_ip_c: usize,
    /// Row-major, `n_ip_c` rows by `2 * n_ip_f` columns.
    matrix: Vec<f64>,
    coarse_weights: Vec<f64>,
    fine_weights: Vec<f64>,
}

/// Child-to-parent coordinate maps `x_L(r) = (r-1)/2`, `x_R(r) = (r+1)/2`.
fn child_to_parent(child: usize, r: f64) -> f64 {
    if child == 0 {
        0.5 * (r - 1.0)
    } else {
        0.5 * (r + 1.0)
    }
}

impl RestrictionOperator {
    /// The standard operator: `p + 1` Gauss points on fine and coarse elements.
    ///
    /// With the coarse basis interpolating at the coarse Gauss points the
    /// local mass matrix is `diag(w_i)`, so
    /// `R[i, (c, q)] = (1 / w_i) · (w_q / 2) · N_i(x_c(r_q))`.
    /// Any other point count is routed to [`RestrictionOperator::general`].
    pub fn build_1d(p: usize, n_ip: usize) -> Result<Self> {
        if p == 0 {
            return invalid("restriction needs polynomial degree >= 1");
        }
        if n_ip != p + 1 {
            return Self::general(p, n_ip, n_ip);
        }
        let rule = QuadratureRule1D::gauss_legendre(n_ip)?;
        let basis = LagrangeBasis1D::new(rule.points().to_vec())?;
        let n = n_ip;
        let mut matrix = vec![0.0; n * 2 * n];
        let mut vals = vec![0.0; n];
        for c in 0..2 {
            for (q, (&r, &wq)) in rule.points().iter().zip(rule.weights()).enumerate() {
                basis.values_into(child_to_parent(c, r), &mut vals);
                for (i, &wi) in rule.weights().iter().enumerate() {
                    matrix[i * 2 * n + c * n + q] = (1.0 / wi) * (0.5 * wq) * vals[i];
                }
            }
        }
        Ok(Self {
            degree: p,
            n_ip_f: n,
            n_ip_c: n,
            matrix,
            coarse_weights: rule.weights().to_vec(),
            fine_weights: rule.weights().to_vec(),
        })
    }

    /// Restriction for arbitrary fine/coarse Gauss point counts (each `>= p + 1`).
    ///
    /// The coarse field lives in `Q_p` on the parent. Its coefficients solve
    /// the local mass system `M U = B g` with `M` integrated by the coarse rule
    /// and `B` summing both children's contributions with the fine rule; the
    /// coarse Gauss values are then `E U` with `E_kj = N_j(x_k)`.
    pub fn general(p: usize, n_ip_f: usize, n_ip_c: usize) -> Result<Self> {
        if p == 0 {
            return invalid("restriction needs polynomial degree >= 1");
        }
        if n_ip_f < p + 1 || n_ip_c < p + 1 {
            return invalid(format!(
                "quadrature ({n_ip_f} fine, {n_ip_c} coarse points) too coarse for degree {p}"
            ));
        }
        let fine = QuadratureRule1D::gauss_legendre(n_ip_f)?;
        let coarse = QuadratureRule1D::gauss_legendre(n_ip_c)?;
        let basis = LagrangeBasis1D::at_gauss_points(p + 1)?;
        let nb = p + 1;

        let coarse_vals: Vec<Vec<f64>> = coarse.points().iter().map(|&x| basis.values(x)).collect();
        let mass = Mat::<f64>::from_fn(nb, nb, |i, j| {
            coarse
                .weights()
                .iter()
                .zip(&coarse_vals)
                .map(|(&w, v)| w * v[i] * v[j])
                .sum()
        });
        let rhs = Mat::<f64>::from_fn(nb, 2 * n_ip_f, |i, col| {
            let (c, q) = (col / n_ip_f, col % n_ip_f);
            let x = child_to_parent(c, fine.points()[q]);
            0.5 * fine.weights()[q] * basis.values(x)[i]
        });
        let coeffs = mass.partial_piv_lu().solve(&rhs);

        let mut matrix = vec![0.0; n_ip_c * 2 * n_ip_f];
        for (k, vals) in coarse_vals.iter().enumerate() {
            for col in 0..2 * n_ip_f {
                matrix[k * 2 * n_ip_f + col] = (0..nb).map(|j| vals[j] * coeffs[(j, col)]).sum();
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(AmrError::Internal("singular local mass matrix".into()));
        }
        Ok(Self {
            degree: p,
            n_ip_f,
            n_ip_c,
            matrix,
            coarse_weights: coarse.weights().to_vec(),
            fine_weights: fine.weights().to_vec(),
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_ip_fine(&self) -> usize {
        self.n_ip_f
    }

    pub fn n_ip_coarse(&self) -> usize {
        self.n_ip_c
    }

    pub fn rows(&self) -> usize {
        self.n_ip_c
    }

    pub fn cols(&self) -> usize {
        2 * self.n_ip_f
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.cols() + col]
    }

    /// Row-major matrix entries.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn coarse_weights(&self) -> &[f64] {
        &self.coarse_weights
    }

    pub fn fine_weights(&self) -> &[f64] {
        &self.fine_weights
    }

    /// Number of fine values consumed per parent in `dim` dimensions.
    pub fn fine_len(&self, dim: usize) -> usize {
        (1 << dim) * self.n_ip_f.pow(dim as u32)
    }

    pub fn coarse_len(&self, dim: usize) -> usize {
        self.n_ip_c.pow(dim as u32)
    }

    /// Restrict one family of children (Morton order, lexicographic points
    /// within each child) to the parent's lexicographic Gauss points.
    pub fn apply(&self, dim: usize, fine_values: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.coarse_len(dim.clamp(1, 3))];
        self.apply_into(dim, fine_values, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, dim: usize, fine_values: &[f64], out: &mut [f64]) -> Result<()> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("dimension {dim} not in 1..=3"));
        }
        let (nf, nc) = (self.n_ip_f, self.n_ip_c);
        let per_child = nf.pow(dim as u32);
        if fine_values.len() != self.fine_len(dim) {
            return invalid(format!(
                "expected {} fine values, got {}",
                self.fine_len(dim),
                fine_values.len()
            ));
        }
        if out.len() != self.coarse_len(dim) {
            return invalid(format!("expected {} coarse slots, got {}", self.coarse_len(dim), out.len()));
        }
        let fine_idx: Vec<[usize; 3]> = (0..per_child)
            .map(|f| tensor_index_map(f, dim, nf))
            .collect::<Result<_>>()?;
        let coarse_idx: Vec<[usize; 3]> = (0..out.len())
            .map(|c| tensor_index_map(c, dim, nc))
            .collect::<Result<_>>()?;
        let cols = self.cols();

        out.fill(0.0);
        for child in 0..1 << dim {
            let cc = decode_morton(child, dim)?.as_array();
            let g = &fine_values[child * per_child..(child + 1) * per_child];
            for (u, big_i) in out.iter_mut().zip(&coarse_idx) {
                let mut acc = 0.0;
                for (gv, ell) in g.iter().zip(&fine_idx) {
                    let mut w = 1.0;
                    for d in 0..dim {
                        w *= self.matrix[big_i[d] * cols + cc[d] * nf + ell[d]];
                    }
                    acc += w * gv;
                }
                *u += acc;
            }
        }
        Ok(())
    }
}

type CacheKey = (usize, usize, usize);

/// Cached restriction operator for `(p, n_ip_f, n_ip_c)`.
pub fn restriction_operator(p: usize, n_ip_f: usize, n_ip_c: usize) -> Result<Arc<RestrictionOperator>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<RestrictionOperator>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (p, n_ip_f, n_ip_c);
    if let Some(op) = cache.lock().expect("restriction cache poisoned").get(&key) {
        return Ok(op.clone());
    }
    let op = if n_ip_f == p + 1 && n_ip_c == p + 1 {
        RestrictionOperator::build_1d(p, n_ip_f)?
    } else {
        RestrictionOperator::general(p, n_ip_f, n_ip_c)?
    };
    let op = Arc::new(op);
    cache
        .lock()
        .expect("restriction cache poisoned")
        .insert(key, op.clone());
    Ok(op)
}

/// Render the matrix as row-major decimal text with 17 significant digits.
pub fn format_matrix(op: &RestrictionOperator) -> String {
    let mut s = String::new();
    for i in 0..op.rows() {
        let row: Vec<String> = (0..op.cols())
            .map(|j| format!("{:.16e}", op.entry(i, j)))
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const Q1_REFERENCE: [[f64; 4]; 2] = [
        [0.5915063509461096, 0.3415063509461096, 0.1584936490538904, -0.09150635094610965],
        [-0.09150635094610965, 0.1584936490538904, 0.3415063509461096, 0.5915063509461096],
    ];
    const Q2_REFERENCE: [[f64; 6]; 3] = [
        [0.614415278851, 0.424865556414, 0.041666666667, -0.031081945517, -0.091532223080, 0.041666666667],
        [-0.097551215948, 0.291666666667, 0.305884549282, 0.305884549282, 0.291666666667, -0.097551215948],
        [0.041666666667, -0.091532223080, -0.031081945517, 0.041666666667, 0.424865556414, 0.614415278851],
    ];

    #[test]
    fn decode_morton_examples() {
        let c = decode_morton(3, 2).unwrap();
        assert_eq!((c.cx, c.cy, c.cz), (1, 1, 0));
        let c = decode_morton(5, 3).unwrap();
        assert_eq!((c.cx, c.cy, c.cz), (1, 0, 1));
        let c = decode_morton(0, 3).unwrap();
        assert_eq!((c.cx, c.cy, c.cz), (0, 0, 0));
        assert!(decode_morton(4, 2).is_err());
        assert!(decode_morton(8, 3).is_err());
    }

    #[test]
    fn q1_matches_reference_table() {
        let op = RestrictionOperator::build_1d(1, 2).unwrap();
        assert_eq!((op.rows(), op.cols()), (2, 4));
        for i in 0..2 {
            for j in 0..4 {
                assert!((op.entry(i, j) - Q1_REFERENCE[i][j]).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn q2_matches_reference_table() {
        let op = RestrictionOperator::build_1d(2, 3).unwrap();
        assert_eq!((op.rows(), op.cols()), (3, 6));
        for i in 0..3 {
            for j in 0..6 {
                assert!((op.entry(i, j) - Q2_REFERENCE[i][j]).abs() < 1e-9, "({i},{j})");
            }
        }
    }

    #[test]
    fn constant_fine_vector_restricts_to_constant() {
        let op = RestrictionOperator::build_1d(1, 2).unwrap();
        let out = op.apply(1, &[1.0; 4]).unwrap();
        assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    fn check_row_and_weighted_column_sums(op: &RestrictionOperator) {
        for i in 0..op.rows() {
            let s: f64 = (0..op.cols()).map(|j| op.entry(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for col in 0..op.cols() {
            let q = col % op.n_ip_fine();
            let s: f64 = (0..op.rows()).map(|i| op.coarse_weights()[i] * op.entry(i, col)).sum();
            assert!((s - 0.5 * op.fine_weights()[q]).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_identities_hold_for_all_operators() {
        for (p, nf, nc) in [(1, 2, 2), (2, 3, 3), (1, 3, 3), (2, 4, 4), (1, 4, 2), (2, 3, 5)] {
            let op = restriction_operator(p, nf, nc).unwrap();
            check_row_and_weighted_column_sums(&op);
        }
    }

    #[test]
    fn general_path_reduces_to_diagonal_path() {
        for p in 1..=3 {
            let diag = RestrictionOperator::build_1d(p, p + 1).unwrap();
            let gen = RestrictionOperator::general(p, p + 1, p + 1).unwrap();
            for (a, b) in diag.matrix().iter().zip(gen.matrix()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn build_1d_routes_nonstandard_counts() {
        let a = RestrictionOperator::build_1d(1, 3).unwrap();
        let b = RestrictionOperator::general(1, 3, 3).unwrap();
        assert_eq!(a, b);
        assert!(RestrictionOperator::general(2, 2, 3).is_err());
    }

    #[test]
    fn linear_data_is_reproduced_in_1d() {
        // g(x) = x sampled at the mapped child Gauss points; explicit 2x4 product.
        let op = RestrictionOperator::build_1d(1, 2).unwrap();
        let r = 1.0 / 3f64.sqrt();
        let fine: Vec<f64> = [0usize, 1]
            .iter()
            .flat_map(|&c| [-r, r].map(|x| child_to_parent(c, x)))
            .collect();
        let explicit: Vec<f64> = (0..2)
            .map(|i| (0..4).map(|j| Q1_REFERENCE[i][j] * fine[j]).sum())
            .collect();
        let out = op.apply(1, &fine).unwrap();
        for (k, &expect) in [-r, r].iter().enumerate() {
            assert!((out[k] - expect).abs() < 1e-13);
            assert!((explicit[k] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_is_reproduced_in_every_dimension() {
        for p in 1..=2 {
            let op = restriction_operator(p, p + 1, p + 1).unwrap();
            for dim in 1..=3 {
                let out = op.apply(dim, &vec![7.3; op.fine_len(dim)]).unwrap();
                assert!(out.iter().all(|v| (v - 7.3).abs() < 1e-13));
            }
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let op = RestrictionOperator::build_1d(1, 2).unwrap();
        assert!(op.apply(2, &[0.0; 15]).is_err());
        assert!(op.apply(4, &[0.0; 16]).is_err());
    }

    #[test]
    fn two_dimensional_conservation_with_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let op = RestrictionOperator::build_1d(1, 2).unwrap();
        let w = op.fine_weights();
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = op.apply(2, &v).unwrap();
        let coarse: f64 = (0..4).map(|k| w[k % 2] * w[k / 2] * out[k]).sum();
        let fine: f64 = (0..16).map(|i| w[i % 2] * w[(i / 2) % 2] * v[i]).sum::<f64>() * 0.25;
        assert!((coarse - fine).abs() <= 1e-12 * fine.abs().max(1e-300));
    }
}
