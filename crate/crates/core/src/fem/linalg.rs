//! Compressed-row sparse matrices, a Jacobi-preconditioned conjugate-gradient
//! solver for SPD systems, and a Newton iteration backed by sparse LU.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use rayon::prelude::*;

use crate::error::{invalid, AmrError, Result};

/// Square or rectangular matrix in compressed row form with sorted, unique columns per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Sum duplicate `(row, col, value)` entries. The result does not depend on
    /// the order of `triplets` beyond floating-point summation order of duplicates,
    /// which follows a stable sort.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return invalid(format!("entry ({r}, {c}) outside a {n_rows}x{n_cols} matrix"));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    /// All stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        y.par_iter_mut().with_min_len(256).enumerate().for_each(|(r, yr)| {
            let (cols, vals) = self.row(r);
            *yr = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        });
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `alpha A + beta B` for matrices of equal shape.
    pub fn lincomb(alpha: f64, a: &CsrMatrix, beta: f64, b: &CsrMatrix) -> Result<CsrMatrix> {
        if a.n_rows != b.n_rows || a.n_cols != b.n_cols {
            return invalid("matrix shapes differ".to_string());
        }
        let trip = a
            .triplets()
            .map(|(r, c, v)| (r, c, alpha * v))
            .chain(b.triplets().map(|(r, c, v)| (r, c, beta * v)))
            .collect();
        CsrMatrix::from_triplets(a.n_rows, a.n_cols, trip)
    }

    /// Largest `|A_ij - A_ji|` relative to the largest `|A_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        self.triplets().map(|(r, c, v)| (v - self.get(c, r)).abs()).fold(0.0, f64::max) / scale
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows * self.n_cols];
        for (r, c, v) in self.triplets() {
            d[r * self.n_cols + c] = v;
        }
        d
    }
}

/// Stopping rule for iterative linear solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Stop once `‖b − A x‖ ≤ rel_tol · ‖b‖`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { rel_tol: 1e-12, max_iter: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual of the returned iterate, recomputed from scratch.
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` for symmetric positive definite `A`, starting from zero.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], settings: SolverSettings) -> Result<SpdSolution> {
    solve_spd_from(a, b, vec![0.0; b.len()], settings)
}

/// Jacobi-preconditioned conjugate gradients from the initial guess `x0`.
pub fn solve_spd_from(a: &CsrMatrix, b: &[f64], x0: Vec<f64>, settings: SolverSettings) -> Result<SpdSolution> {
    let n = a.n_rows();
    if a.n_cols() != n || b.len() != n || x0.len() != n {
        return invalid(format!("system sizes disagree: {}x{}, rhs {}, guess {}", n, a.n_cols(), b.len(), x0.len()));
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(SpdSolution { x: vec![0.0; n], iterations: 0, rel_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = x0;
    let mut r = a.mul_vec(&x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let target = settings.rel_tol * b_norm;
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm(&r);
    let mut it = 0;
    while res > target {
        if it == settings.max_iter {
            return Err(AmrError::SolverFailure { iterations: it, residual: res / b_norm });
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(AmrError::SolverFailure { iterations: it, residual: res / b_norm });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm(&r);
        it += 1;
    }
    let mut true_r = a.mul_vec(&x);
    for (ri, bi) in true_r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    Ok(SpdSolution { x, iterations: it, rel_residual: norm(&true_r) / b_norm })
}

/// Solve a general square sparse system by LU with partial pivoting.
/// LU factors of a square sparse matrix, reusable across right-hand sides.
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.n_rows();
        if a.n_cols() != n {
            return invalid(format!("LU needs a square matrix, got {}x{}", n, a.n_cols()));
        }
        // faer splits work by its global thread setting; sequential factorisation
        // keeps results independent of the thread count.
        static SEQUENTIAL: std::sync::Once = std::sync::Once::new();
        SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        let trip: Vec<Triplet<usize, usize, f64>> = a.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
            .map_err(|e| AmrError::Internal(format!("sparse matrix construction failed: {e:?}")))?;
        let lu = m
            .sp_lu()
            .map_err(|e| AmrError::Internal(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { n, lu })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return invalid(format!("rhs has {} entries, matrix has {} rows", b.len(), self.n));
        }
        let mut rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(rhs.as_mut());
        Ok(rhs.col_as_slice(0).to_vec())
    }
}

pub fn solve_sparse_lu(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n_rows() {
        return invalid(format!("system sizes disagree: {}x{}, rhs {}", a.n_rows(), a.n_cols(), b.len()));
    }
    SparseLu::new(a)?.solve(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Converged once `‖R(x)‖ ≤ tol · max(1, ‖R(x₀)‖)`.
    pub tol: f64,
    pub max_iter: usize,
    /// The Jacobian is factored on the first iteration and again whenever
    /// `‖R‖` fails to drop below `refresh_ratio` times its previous value.
    /// Zero refactors every iteration.
    pub refresh_ratio: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 30, refresh_ratio: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    /// Number of updates applied.
    pub iterations: usize,
    /// `‖R‖` before each update and after the last one.
    pub trace: Vec<f64>,
}

/// Newton's method with a sparse Jacobian, optionally reusing factors while
/// the residual keeps contracting.
pub fn solve_newton<R, J>(
    mut residual: R,
    mut jacobian: J,
    initial_guess: Vec<f64>,
    settings: NewtonSettings,
) -> Result<NewtonOutcome>
where
    R: FnMut(&[f64]) -> Result<Vec<f64>>,
    J: FnMut(&[f64]) -> Result<CsrMatrix>,
{
    let mut x = initial_guess;
    let mut r = residual(&x)?;
    let r0 = norm(&r);
    let target = settings.tol * r0.max(1.0);
    let mut trace = vec![r0];
    let mut it = 0;
    let mut factors: Option<SparseLu> = None;
    loop {
        let rn = *trace.last().unwrap();
        if !rn.is_finite() {
            return Err(AmrError::NonlinearFailure { reason: "residual is not finite".into(), trace });
        }
        if rn <= target {
            return Ok(NewtonOutcome { x, iterations: it, trace });
        }
        if it == settings.max_iter {
            return Err(AmrError::NonlinearFailure {
                reason: format!("no convergence in {it} iterations"),
                trace,
            });
        }
        let stalled = trace.len() < 2 || rn > settings.refresh_ratio * trace[trace.len() - 2];
        if factors.is_none() || stalled {
            factors = match SparseLu::new(&jacobian(&x)?) {
                Ok(f) => Some(f),
                Err(e) => {
                    return Err(AmrError::NonlinearFailure { reason: format!("linear solve failed: {e}"), trace });
                }
            };
        }
        for v in r.iter_mut() {
            *v = -*v;
        }
        let dx = match factors.as_ref().expect("factored above").solve(&r) {
            Ok(dx) => dx,
            Err(e) => {
                return Err(AmrError::NonlinearFailure { reason: format!("linear solve failed: {e}"), trace });
            }
        };
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        it += 1;
        r = residual(&x)?;
        trace.push(norm(&r));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_diagonal_systems() {
        let r = vec![1.0, -2.0, 3.5];
        let x = solve_spd(&CsrMatrix::identity(3), &r, SolverSettings::default()).unwrap().x;
        assert_eq!(x, r);
        let d = [2.0, 4.0, 0.5];
        let x = solve_spd(&CsrMatrix::from_diagonal(&d), &r, SolverSettings::default()).unwrap().x;
        for i in 0..3 {
            assert!((x[i] - r[i] / d[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn random_spd_matches_dense_factorisation() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b_mat: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut trip = Vec::new();
        let mut dense = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut v: f64 = (0..n).map(|k| b_mat[k * n + i] * b_mat[k * n + j]).sum();
                if i == j {
                    v += 1.0;
                }
                trip.push((i, j, v));
                dense[(i, j)] = v;
            }
        }
        let a = CsrMatrix::from_triplets(n, n, trip).unwrap();
        assert!(a.asymmetry() < 1e-15);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cg = solve_spd(&a, &rhs, SolverSettings::default()).unwrap();
        let oracle = dense.partial_piv_lu().solve(Mat::from_fn(n, 1, |i, _| rhs[i]));
        for i in 0..n {
            assert!((cg.x[i] - oracle[(i, 0)]).abs() < 1e-10);
        }
        assert!(cg.rel_residual <= 1e-12);
    }

    #[test]
    fn indefinite_matrix_reports_failure() {
        let a = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(
            solve_spd(&a, &[1.0, 1.0], SolverSettings::default()),
            Err(AmrError::SolverFailure { .. })
        ));
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 0, 2.0), (1, 0, 0.5)]).unwrap();
        assert_eq!(a.get(1, 0), 1.5);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 2);
        assert!(CsrMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn newton_scalar_root() {
        let out = solve_newton(
            |x| Ok(vec![x[0] * x[0] - 4.0]),
            |x| CsrMatrix::from_triplets(1, 1, vec![(0, 0, 2.0 * x[0])]),
            vec![3.0],
            NewtonSettings { tol: 1e-14, ..NewtonSettings::default() },
        )
        .unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reused_factors_reach_the_same_root() {
        let lazy = NewtonSettings { tol: 1e-14, refresh_ratio: 0.5, ..NewtonSettings::default() };
        let mut factorizations = 0;
        let out = solve_newton(
            |x| Ok(vec![x[0] * x[0] - 4.0]),
            |x| {
                factorizations += 1;
                CsrMatrix::from_triplets(1, 1, vec![(0, 0, 2.0 * x[0])])
            },
            vec![2.5],
            lazy,
        )
        .unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-12);
        assert!(factorizations < out.iterations);
    }

    #[test]
    fn newton_linear_residual_takes_one_step() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 3.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 2.0)]).unwrap();
        let b = [1.0, 2.0];
        let out = solve_newton(
            |x| Ok(a.mul_vec(x).iter().zip(&b).map(|(ax, bi)| ax - bi).collect()),
            |_| Ok(a.clone()),
            vec![0.0, 0.0],
            NewtonSettings::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn newton_failure_carries_trace() {
        // x^2 + 1 has no real root.
        let err = solve_newton(
            |x| Ok(vec![x[0] * x[0] + 1.0]),
            |x| CsrMatrix::from_triplets(1, 1, vec![(0, 0, 2.0 * x[0])]),
            vec![0.5],
            NewtonSettings { tol: 1e-12, max_iter: 5, ..NewtonSettings::default() },
        )
        .unwrap_err();
        match err {
            AmrError::NonlinearFailure { trace, .. } => assert_eq!(trace.len(), 6),
            e => panic!("unexpected {e:?}"),
        }
    }
}
