//! Gauss–Legendre rules and 1D Lagrange bases on the reference interval `[-1, 1]`.
//!
//! Two basis families are used throughout the crate:
//!
//! * element-nodal bases with equispaced nodes (`Q1`: `{-1, 1}`, `Q2`: `{-1, 0, 1}`),
//!   which carry the continuous-Galerkin degrees of freedom;
//! * quadrature-point bases whose nodes sit at the Gauss points. Their
//!   Kronecker property at the quadrature points makes the local mass matrix of
//!   the coarsening projection diagonal.

use crate::error::{invalid, Result};

/// A 1D quadrature rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1D {
    points: Vec<f64>,
    weights: Vec<f64>,
}

// Tabulated abscissae/weights for n <= 5, ascending.
const GL2_X: f64 = 0.577_350_269_189_625_8;
const GL3_X: f64 = 0.774_596_669_241_483_4;
const GL4_X: [f64; 2] = [0.339_981_043_584_856_26, 0.861_136_311_594_052_6];
const GL4_W: [f64; 2] = [0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
const GL5_X: [f64; 2] = [0.538_469_310_105_683_1, 0.906_179_845_938_664];
const GL5_W: [f64; 3] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
];

impl QuadratureRule1D {
    /// The `n`-point Gauss–Legendre rule, exact for polynomials of degree `2n - 1`.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        let (points, weights) = match n {
            0 => return invalid("Gauss-Legendre rule needs at least one point"),
            1 => (vec![0.0], vec![2.0]),
            2 => (vec![-GL2_X, GL2_X], vec![1.0, 1.0]),
            3 => (
                vec![-GL3_X, 0.0, GL3_X],
                vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0],
            ),
            4 => (
                vec![-GL4_X[1], -GL4_X[0], GL4_X[0], GL4_X[1]],
                vec![GL4_W[1], GL4_W[0], GL4_W[0], GL4_W[1]],
            ),
            5 => (
                vec![-GL5_X[1], -GL5_X[0], 0.0, GL5_X[0], GL5_X[1]],
                vec![GL5_W[2], GL5_W[1], GL5_W[0], GL5_W[1], GL5_W[2]],
            ),
            _ => newton_legendre(n),
        };
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫_{-1}^{1} f` under this rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=n {
        let k = k as f64;
        let next = ((2.0 * k - 1.0) * x * p - (k - 1.0) * p_prev) / k;
        p_prev = p;
        p = next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

fn newton_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess for the i-th largest root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[n - 1 - i] = x;
        points[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    (points, weights)
}

/// Cardinal (Lagrange) polynomials on an arbitrary set of distinct nodes.
///
/// Values use the second barycentric formula; derivatives use the product
/// form, which has no removable singularity at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis1D {
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl LagrangeBasis1D {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return invalid("Lagrange basis needs at least one node");
        }
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if a == b {
                    return invalid("Lagrange nodes must be distinct");
                }
            }
        }
        let bary = nodes
            .iter()
            .enumerate()
            .map(|(j, &xj)| {
                let prod: f64 = nodes
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j)
                    .map(|(_, &xk)| xj - xk)
                    .product();
                1.0 / prod
            })
            .collect();
        Ok(Self { nodes, bary })
    }

    /// Element-nodal basis of degree `p` with equispaced nodes on `[-1, 1]`.
    pub fn equispaced(p: usize) -> Result<Self> {
        if p == 0 {
            return invalid("element-nodal basis needs degree >= 1");
        }
        let nodes = (0..=p)
            .map(|i| -1.0 + 2.0 * i as f64 / p as f64)
            .collect();
        Self::new(nodes)
    }

    /// Basis whose nodes are the `n` Gauss–Legendre points.
    pub fn at_gauss_points(n: usize) -> Result<Self> {
        Self::new(QuadratureRule1D::gauss_legendre(n)?.points().to_vec())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Value of the `j`-th cardinal polynomial at `x`.
    pub fn eval(&self, j: usize, x: f64) -> Result<f64> {
        if j >= self.len() {
            return invalid(format!("basis index {j} out of range (len {})", self.len()));
        }
        let mut out = vec![0.0; self.len()];
        self.values_into(x, &mut out);
        Ok(out[j])
    }

    /// All cardinal values at `x`, written into `out`.
    pub fn values_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        if let Some(m) = self.nodes.iter().position(|&xn| xn == x) {
            out.fill(0.0);
            out[m] = 1.0;
            return;
        }
        let mut denom = 0.0;
        for ((o, &xn), &w) in out.iter_mut().zip(&self.nodes).zip(&self.bary) {
            *o = w / (x - xn);
            denom += *o;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.values_into(x, &mut out);
        out
    }

    /// All cardinal first derivatives at `x`.
    pub fn derivatives_into(&self, x: f64, out: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(out.len(), n);
        for j in 0..n {
            let mut sum = 0.0;
            for m in (0..n).filter(|&m| m != j) {
                let mut term = 1.0 / (self.nodes[j] - self.nodes[m]);
                for k in (0..n).filter(|&k| k != j && k != m) {
                    term *= (x - self.nodes[k]) / (self.nodes[j] - self.nodes[k]);
                }
                sum += term;
            }
            out[j] = sum;
        }
    }

    pub fn derivatives(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.derivatives_into(x, &mut out);
        out
    }
}

/// Decode a lexicographic tensor index into per-axis indices `(I_x, I_y, I_z)`.
///
/// `dim = 1` is accepted as well and yields `(lex, 0, 0)`.
pub fn tensor_index_map(lex_idx: usize, dim: usize, n: usize) -> Result<[usize; 3]> {
    if !(1..=3).contains(&dim) {
        return invalid(format!("dimension {dim} not in 1..=3"));
    }
    if n == 0 || lex_idx >= n.pow(dim as u32) {
        return invalid(format!("lexicographic index {lex_idx} out of range for n={n}, dim={dim}"));
    }
    Ok(match dim {
        1 => [lex_idx, 0, 0],
        2 => [lex_idx % n, lex_idx / n, 0],
        _ => [lex_idx % n, (lex_idx / n) % n, lex_idx / (n * n)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact_monomial(k: i32) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            2.0 / (k as f64 + 1.0)
        }
    }

    #[test]
    fn closed_form_rules() {
        let r1 = QuadratureRule1D::gauss_legendre(1).unwrap();
        assert_eq!(r1.points(), &[0.0]);
        assert_eq!(r1.weights(), &[2.0]);

        let r2 = QuadratureRule1D::gauss_legendre(2).unwrap();
        assert!((r2.points()[0] + 0.5773502691896258).abs() < 1e-16);
        assert!((r2.points()[1] - 0.5773502691896258).abs() < 1e-16);
        assert_eq!(r2.weights(), &[1.0, 1.0]);

        let r3 = QuadratureRule1D::gauss_legendre(3).unwrap();
        assert!((r3.points()[0] + 0.7745966692414834).abs() < 1e-16);
        assert_eq!(r3.points()[1], 0.0);
        assert!((r3.weights()[0] - 5.0 / 9.0).abs() < 1e-16);
        assert!((r3.weights()[1] - 8.0 / 9.0).abs() < 1e-16);
    }

    #[test]
    fn zero_points_is_rejected() {
        assert!(QuadratureRule1D::gauss_legendre(0).is_err());
    }

    #[test]
    fn tabulated_rules_agree_with_newton() {
        for n in 2..=5 {
            let table = QuadratureRule1D::gauss_legendre(n).unwrap();
            let (x, w) = newton_legendre(n);
            for i in 0..n {
                assert!((table.points()[i] - x[i]).abs() < 1e-15, "n={n} i={i}");
                assert!((table.weights()[i] - w[i]).abs() < 1e-15, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn monomial_exactness_and_rule_shape() {
        for n in 1..=10 {
            let rule = QuadratureRule1D::gauss_legendre(n).unwrap();
            let wsum: f64 = rule.weights().iter().sum();
            assert!((wsum - 2.0).abs() < 1e-14, "n={n}");
            assert!(rule.weights().iter().all(|&w| w > 0.0));
            assert!(rule.points().windows(2).all(|p| p[0] < p[1]));
            assert!(rule.points().iter().all(|&x| x > -1.0 && x < 1.0));
            for k in 0..(2 * n as i32) {
                let q = rule.integrate(|x| x.powi(k));
                assert!((q - exact_monomial(k)).abs() <= 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn lagrange_examples() {
        let q1 = LagrangeBasis1D::equispaced(1).unwrap();
        assert!((q1.eval(0, 0.0).unwrap() - 0.5).abs() < 1e-16);

        let g1 = LagrangeBasis1D::at_gauss_points(2).unwrap();
        let xl = 0.5 * (-1.0 / 3f64.sqrt() - 1.0);
        assert!((xl + 0.7886751345948129).abs() < 1e-15);
        assert!((g1.eval(0, xl).unwrap() - 1.1830127018922192).abs() < 1e-15);

        assert!(q1.eval(2, 0.0).is_err());
    }

    #[test]
    fn kronecker_and_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bases: Vec<LagrangeBasis1D> = (1..=4)
            .map(|p| LagrangeBasis1D::equispaced(p).unwrap())
            .chain((1..=5).map(|n| LagrangeBasis1D::at_gauss_points(n).unwrap()))
            .collect();
        for b in &bases {
            for (k, &xk) in b.nodes().iter().enumerate() {
                for j in 0..b.len() {
                    let expect = if j == k { 1.0 } else { 0.0 };
                    assert!((b.eval(j, xk).unwrap() - expect).abs() < 1e-14);
                }
            }
            let s: f64 = b.values(0.3).iter().sum();
            assert!((s - 1.0).abs() < 1e-13);
            for _ in 0..100 {
                let x = rng.random_range(-1.0..=1.0);
                let s: f64 = b.values(x).iter().sum();
                assert!((s - 1.0).abs() < 1e-13);
                let ds: f64 = b.derivatives(x).iter().sum();
                assert!(ds.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = LagrangeBasis1D::equispaced(2).unwrap();
        let h = 1e-6;
        for &x in &[-0.9, -0.2, 0.0, 0.45, 1.0] {
            let d = b.derivatives(x);
            for j in 0..3 {
                let fd = (b.eval(j, x + h).unwrap() - b.eval(j, x - h).unwrap()) / (2.0 * h);
                assert!((d[j] - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn tensor_index_examples() {
        assert_eq!(tensor_index_map(3, 2, 2).unwrap(), [1, 1, 0]);
        assert_eq!(tensor_index_map(7, 3, 2).unwrap(), [1, 1, 1]);
        assert_eq!(tensor_index_map(5, 3, 3).unwrap(), [2, 1, 0]);
        assert!(tensor_index_map(4, 2, 2).is_err());
        assert!(tensor_index_map(27, 3, 3).is_err());
    }

    #[test]
    fn tensor_index_is_a_bijection() {
        for dim in 1..=3 {
            for n in 1usize..=4 {
                let total = n.pow(dim as u32);
                let mut seen = std::collections::HashSet::new();
                for lex in 0..total {
                    let idx = tensor_index_map(lex, dim, n).unwrap();
                    assert!(idx.iter().take(dim).all(|&i| i < n));
                    assert!(idx.iter().skip(dim).all(|&i| i == 0));
                    assert!(seen.insert(idx));
                }
                assert_eq!(seen.len(), total);
            }
        }
    }
}
