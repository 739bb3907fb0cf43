//! Matrix-free linear operators and spectral-norm evaluation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, splitmix64};

/// Default cap on the dimension `materialize` will expand.
pub const MATERIALIZE_CAP: usize = 2000;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// out = A x
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    /// out = Aᵀ x
    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        out
    }

    fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_transpose_into(x, &mut out);
        out
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply_into(x, out)
    }
    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply_transpose_into(x, out)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

#[derive(Clone, Debug)]
pub struct Diagonal(pub Vec<f64>);

impl LinearOperator for Diagonal {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), di) in out.iter_mut().zip(x).zip(&self.0) {
            *o = di * xi;
        }
    }
    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        self.apply_into(x, out)
    }
}

/// Dense square matrix.
#[derive(Clone, Debug)]
pub struct DenseOp(pub DMatrix<f64>);

impl DenseOp {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        Ok(DenseOp(m))
    }
}

impl LinearOperator for DenseOp {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out.fill(0.0);
        // column-major storage: accumulate columns
        for (j, &xj) in x.iter().enumerate().take(n) {
            if xj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.0.column(j).iter()) {
                *o += a * xj;
            }
        }
    }
    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.0.column(j).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// Symmetric Toeplitz matrix (γ_{|i−j|}) given its first column.
#[derive(Clone, Debug)]
pub struct SymmetricToeplitzOp {
    first_column: Vec<f64>,
}

impl SymmetricToeplitzOp {
    pub fn new(first_column: Vec<f64>) -> Result<Self> {
        if first_column.is_empty() {
            return Err(Error::Parameter("empty Toeplitz column".into()));
        }
        Ok(SymmetricToeplitzOp { first_column })
    }

    pub fn first_column(&self) -> &[f64] {
        &self.first_column
    }
}

/// (Ωx)_i = Σ_j γ_{|i−j|} x_j, direct O(n²).
pub fn toeplitz_apply(op: &SymmetricToeplitzOp, x: &[f64]) -> Vec<f64> {
    op.apply(x)
}

impl LinearOperator for SymmetricToeplitzOp {
    fn dim(&self) -> usize {
        self.first_column.len()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.first_column;
        let n = g.len();
        for i in 0..n {
            // lower part j ≤ i uses g[i−j] reversed, upper part j > i uses g[j−i]
            let lower: f64 = x[..=i].iter().zip(g[..=i].iter().rev()).map(|(a, b)| a * b).sum();
            let upper: f64 = x[i + 1..].iter().zip(&g[1..n - i]).map(|(a, b)| a * b).sum();
            out[i] = lower + upper;
        }
    }
    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        self.apply_into(x, out)
    }
}

/// A − B.
pub struct Difference<A, B> {
    a: A,
    b: B,
}

pub fn op_difference<A: LinearOperator, B: LinearOperator>(a: A, b: B) -> Result<Difference<A, B>> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(Difference { a, b })
}

impl<A: LinearOperator, B: LinearOperator> LinearOperator for Difference<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.a.apply_into(x, out);
        let tmp = self.b.apply(x);
        for (o, t) in out.iter_mut().zip(tmp) {
            *o -= t;
        }
    }
    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        self.a.apply_transpose_into(x, out);
        let tmp = self.b.apply_transpose(x);
        for (o, t) in out.iter_mut().zip(tmp) {
            *o -= t;
        }
    }
}

/// A ∘ B, i.e. x ↦ A(Bx).
pub struct Composed<A, B> {
    a: A,
    b: B,
}

pub fn op_compose<A: LinearOperator, B: LinearOperator>(a: A, b: B) -> Result<Composed<A, B>> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(Composed { a, b })
}

impl<A: LinearOperator, B: LinearOperator> LinearOperator for Composed<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let tmp = self.b.apply(x);
        self.a.apply_into(&tmp, out);
    }
    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        let tmp = self.a.apply_transpose(x);
        self.b.apply_transpose_into(&tmp, out);
    }
}

/// Aᵀ as an operator.
pub struct Transposed<A>(pub A);

impl<A: LinearOperator> LinearOperator for Transposed<A> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.0.apply_transpose_into(x, out)
    }
    fn apply_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        self.0.apply_into(x, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIteration {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration {
            rel_tol: 1e-8,
            max_iter: 5000,
            restarts: 2,
            seed: 0x5EED,
        }
    }
}

impl PowerIteration {
    pub fn with_seed(self, seed: u64) -> Self {
        PowerIteration { seed, ..self }
    }

    pub fn with_tol(self, rel_tol: f64) -> Self {
        PowerIteration { rel_tol, ..self }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Trace of one power-iteration run: the Rayleigh quotients ‖Ax_k‖² of
/// AᵀA at each unit iterate.
#[derive(Clone, Debug)]
pub struct PowerTrace {
    pub rayleigh: Vec<f64>,
    pub converged: bool,
}

/// Runs power iteration on x ↦ Aᵀ(Ax) from the given start vector.
pub fn power_iterate<A: LinearOperator + ?Sized>(op: &A, start: Vec<f64>, rel_tol: f64, max_iter: usize) -> PowerTrace {
    let n = op.dim();
    let mut x = start;
    let mut ax = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut rayleigh = Vec::new();
    let nx = norm2(&x);
    if nx == 0.0 {
        return PowerTrace {
            rayleigh: vec![0.0],
            converged: true,
        };
    }
    x.iter_mut().for_each(|v| *v /= nx);
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        op.apply_into(&x, &mut ax);
        let lambda = ax.iter().map(|v| v * v).sum::<f64>();
        rayleigh.push(lambda);
        if lambda == 0.0 {
            return PowerTrace {
                rayleigh,
                converged: true,
            };
        }
        if (lambda - prev).abs() <= rel_tol * lambda {
            return PowerTrace {
                rayleigh,
                converged: true,
            };
        }
        prev = lambda;
        op.apply_transpose_into(&ax, &mut z);
        let nz = norm2(&z);
        if nz == 0.0 {
            return PowerTrace {
                rayleigh,
                converged: true,
            };
        }
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi = zi / nz;
        }
    }
    PowerTrace {
        rayleigh,
        converged: false,
    }
}

/// ‖A‖₂ by power iteration on AᵀA from `cfg.restarts` random starts;
/// returns the largest estimate. On non-convergence the error carries
/// the best estimate so far, which is a lower bound.
pub fn spectral_norm<A: LinearOperator + ?Sized>(op: &A, cfg: &PowerIteration) -> Result<f64> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::Parameter("operator has dimension 0".into()));
    }
    if !(cfg.rel_tol > 0.0) {
        return Err(Error::Parameter("rel_tol must be positive".into()));
    }
    let mut best = 0.0f64;
    let mut all_converged = true;
    let mut iterations = 0;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = rng_from_seed(splitmix64(cfg.seed ^ (r as u64).wrapping_mul(0xA24B_AED4_963E_E407)));
        let start: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let trace = power_iterate(op, start, cfg.rel_tol, cfg.max_iter);
        iterations += trace.rayleigh.len();
        all_converged &= trace.converged;
        best = best.max(trace.rayleigh.last().copied().unwrap_or(0.0).sqrt());
    }
    if all_converged {
        Ok(best)
    } else {
        Err(Error::NotConverged {
            iterations,
            last_estimate: best,
        })
    }
}

/// Like `spectral_norm`, but accepts a non-converged lower bound.
pub fn spectral_norm_lenient<A: LinearOperator + ?Sized>(op: &A, cfg: &PowerIteration) -> Result<f64> {
    match spectral_norm(op, cfg) {
        Err(Error::NotConverged { last_estimate, .. }) => Ok(last_estimate),
        other => other,
    }
}

/// ‖A‖₂ for a symmetric operator by Lanczos with full reorthogonalization.
///
/// The extreme Ritz values grow monotonically in modulus; iteration stops
/// once the largest has moved by at most rel_tol (relative) over the last
/// `STALL_WINDOW` steps. Clustered extreme eigenvalues, typical of
/// differences of banded inverses, stall power iteration but not this.
pub fn symmetric_spectral_norm<A: LinearOperator + ?Sized>(op: &A, cfg: &PowerIteration) -> Result<f64> {
    const STALL_WINDOW: usize = 4;
    let n = op.dim();
    if n == 0 {
        return Err(Error::Parameter("operator has dimension 0".into()));
    }
    if !(cfg.rel_tol > 0.0) {
        return Err(Error::Parameter("rel_tol must be positive".into()));
    }
    let mut rng = rng_from_seed(splitmix64(cfg.seed));
    let mut q: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let nq = norm2(&q);
    q.iter_mut().for_each(|v| *v /= nq);

    let steps = n.min(cfg.max_iter.max(1));
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    for _ in 0..steps {
        op.apply_into(&q, &mut w);
        alpha.push(dot(&q, &w));
        basis.push(std::mem::take(&mut q));
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        let bnext = norm2(&w);
        let theta = tridiagonal_abs_max(&alpha, &beta);
        history.push(theta);
        // invariant subspace: the Ritz values are exact
        if bnext <= f64::EPSILON * theta.max(f64::MIN_POSITIVE) * (n as f64) {
            return Ok(theta);
        }
        if history.len() > STALL_WINDOW {
            let old = history[history.len() - 1 - STALL_WINDOW];
            if theta - old <= cfg.rel_tol * theta {
                return Ok(theta);
            }
        }
        beta.push(bnext);
        q = w.iter().map(|v| v / bnext).collect();
    }
    let best = history.last().copied().unwrap_or(0.0);
    if steps == n {
        return Ok(best);
    }
    Err(Error::NotConverged {
        iterations: steps,
        last_estimate: best,
    })
}

/// max |λ| of the symmetric tridiagonal matrix with diagonal `a` and
/// off-diagonal `b`, by Sturm-sequence bisection at both ends.
fn tridiagonal_abs_max(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        let r = if i > 0 { b[i - 1].abs() } else { 0.0 } + if i + 1 < m { b[i].abs() } else { 0.0 };
        lo = lo.min(a[i] - r);
        hi = hi.max(a[i] + r);
    }
    // number of eigenvalues strictly below x
    let count_below = |x: f64| {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..m {
            let off = if i > 0 { b[i - 1] * b[i - 1] } else { 0.0 };
            q = a[i] - x - if i > 0 { off / q } else { 0.0 };
            if q == 0.0 {
                q = f64::EPSILON * (off.sqrt() + x.abs()).max(f64::MIN_POSITIVE);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let bisect = |target: usize| {
        // smallest x with count_below(x) > target, i.e. the (target+1)-th eigenvalue
        let (mut l, mut h) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (l + h);
            if mid <= l || mid >= h {
                break;
            }
            if count_below(mid) > target {
                h = mid;
            } else {
                l = mid;
            }
            if h - l <= 1e-15 * l.abs().max(h.abs()) {
                break;
            }
        }
        0.5 * (l + h)
    };
    bisect(0).abs().max(bisect(m - 1).abs())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense matrix by applying the operator to unit vectors.
pub fn materialize<A: LinearOperator + ?Sized>(op: &A) -> Result<DMatrix<f64>> {
    materialize_capped(op, MATERIALIZE_CAP)
}

pub fn materialize_capped<A: LinearOperator + ?Sized>(op: &A, cap: usize) -> Result<DMatrix<f64>> {
    let n = op.dim();
    if n > cap {
        return Err(Error::TooLarge { dim: n, cap });
    }
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply_into(&e, &mut col);
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok(m)
}

/// Lower Cholesky factor of a small symmetric positive definite matrix,
/// stored row-major as `l[i * n + j]`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factorizes the row-major `n × n` matrix `a`. Fails when a pivot drops
    /// below `rel_tol` times the largest diagonal entry.
    pub fn factor(a: &[f64], n: usize, rel_tol: f64) -> std::result::Result<Self, String> {
        assert_eq!(a.len(), n * n);
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
        if !(max_diag > 0.0) || !max_diag.is_finite() {
            return Err("matrix has no positive diagonal".into());
        }
        let threshold = rel_tol * max_diag;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = a[j * n + j];
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > threshold) {
                return Err(format!("pivot {diag:e} at index {j} below {threshold:e}"));
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    /// Dense inverse, column-major.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            inv.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        // symmetrize away rounding asymmetry
        let t = inv.transpose();
        (inv + t) * 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_norm() {
        let n = spectral_norm(&Identity(7), &PowerIteration::default()).unwrap();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_norm() {
        let n = spectral_norm(&Diagonal(vec![1.0, 2.0, 3.0]), &PowerIteration::default()).unwrap();
        assert!((n - 3.0).abs() < 1e-6);
    }

    #[test]
    fn lanczos_matches_dense_eigenvalues() {
        let mut rng = rng_from_seed(3);
        let n = 40;
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = &a + a.transpose();
        let exact = nalgebra::SymmetricEigen::new(s.clone()).eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let got = symmetric_spectral_norm(&DenseOp(s), &PowerIteration::default()).unwrap();
        assert!((got - exact).abs() <= 1e-8 * exact, "{got} vs {exact}");
    }

    #[test]
    fn lanczos_negative_extreme() {
        let d = Diagonal(vec![1.0, -5.0, 2.0, 4.999]);
        let got = symmetric_spectral_norm(&d, &PowerIteration::default()).unwrap();
        assert!((got - 5.0).abs() < 1e-10);
        assert_eq!(symmetric_spectral_norm(&Diagonal(vec![0.0; 3]), &PowerIteration::default()).unwrap(), 0.0);
    }

    #[test]
    fn difference_examples() {
        let z = op_difference(Identity(4), Identity(4)).unwrap();
        assert!(spectral_norm(&z, &PowerIteration::default()).unwrap() < 1e-10);
        let d = op_difference(Diagonal(vec![2.0; 4]), Identity(4)).unwrap();
        assert!((spectral_norm(&d, &PowerIteration::default()).unwrap() - 1.0).abs() < 1e-10);
        assert!(op_difference(Identity(3), Identity(4)).is_err());
    }

    #[test]
    fn toeplitz_examples() {
        let op = SymmetricToeplitzOp::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(toeplitz_apply(&op, &[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        let op = SymmetricToeplitzOp::new(vec![2.0, 1.0, 0.0]).unwrap();
        assert_eq!(toeplitz_apply(&op, &[1.0, 0.0, 0.0]), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn materialize_examples() {
        let m = materialize(&Identity(3)).unwrap();
        assert_eq!(m, DMatrix::identity(3, 3));
        let m = materialize(&SymmetricToeplitzOp::new(vec![1.0, 0.5]).unwrap()).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        assert!(matches!(
            materialize_capped(&Identity(5), 4),
            Err(Error::TooLarge { dim: 5, cap: 4 })
        ));
    }

    #[test]
    fn non_convergence_reports_lower_bound() {
        let cfg = PowerIteration {
            rel_tol: 1e-300,
            max_iter: 3,
            ..PowerIteration::default()
        };
        let op = Diagonal(vec![1.0, 0.99, 0.98, 0.5]);
        match spectral_norm(&op, &cfg) {
            Err(Error::NotConverged { last_estimate, .. }) => {
                assert!(last_estimate > 0.5 && last_estimate <= 1.0 + 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(spectral_norm_lenient(&op, &cfg).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn cholesky_solves_and_detects_singularity() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let c = Cholesky::factor(&a, 2, 1e-12).unwrap();
        let x = c.solve(&[2.0, 1.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
        let inv = c.inverse();
        assert!((inv[(0, 0)] - 3.0 / 8.0).abs() < 1e-14);
        assert!(Cholesky::factor(&[1.0, 1.0, 1.0, 1.0], 2, 1e-12).is_err());
        assert!(Cholesky::factor(&[0.0; 4], 2, 1e-12).is_err());
    }
}
