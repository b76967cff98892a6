//! Dense complex least squares via column-pivoted Householder QR.
//!
//! Solves `min ||A b - y||^2 + lambda ||b||^2` without ever forming the
//! normal equations. Rank deficiency (at `lambda = 0`) is detected from the
//! pivoted R diagonal and resolved by a complete orthogonal decomposition,
//! which yields the minimum-norm solution.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;

/// Column-major dense complex matrix.
#[derive(Debug, Clone)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::default(); rows * cols],
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> Complex64>(
        rows: usize,
        cols: usize,
        mut f: F,
    ) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.data[j * rows + i] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn col(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [Complex64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Raw column-major storage; chunks of `rows` are the columns.
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// `A * x`
    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![Complex64::default(); self.rows];
        for (j, &xj) in x.iter().enumerate() {
            let col = self.col(j);
            for (o, &c) in out.iter_mut().zip(col.iter()) {
                *o += c * xj;
            }
        }
        out
    }

    /// `A^H * y`
    pub fn herm_mul_vec(&self, y: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(y.len(), self.rows);
        (0..self.cols)
            .map(|j| {
                self.col(j)
                    .iter()
                    .zip(y.iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum()
            })
            .collect()
    }
}

/// Outcome of a least-squares solve.
#[derive(Debug, Clone)]
pub struct LsSolution {
    /// Minimizer of the (regularized) least-squares objective.
    pub coeffs: Vec<Complex64>,
    /// Numerical rank detected from the pivoted R diagonal.
    pub rank: usize,
    /// Estimate of the condition number of `A^H A + lambda I` restricted to
    /// the detected rank, from the ratio of extreme pivoted R diagonal
    /// magnitudes. For a full-rank system this estimates the condition of
    /// the normal-equations matrix itself.
    pub condition_estimate: f64,
    /// True when the rank-deficient minimum-norm fallback was taken.
    pub used_min_norm: bool,
}

struct QrFactors {
    /// Columns hold R above the diagonal and Householder vectors below
    /// (inclusive of the diagonal position).
    a: CMatrix,
    /// R diagonal.
    diag: Vec<Complex64>,
    /// perm[j] = original index of the column now in position j.
    perm: Vec<usize>,
}

fn reflect(v: &[Complex64], vnorm2: f64, target: &mut [Complex64], from: usize) {
    if vnorm2 == 0.0 {
        return;
    }
    let mut w = Complex64::default();
    for i in from..v.len() {
        w += v[i].conj() * target[i];
    }
    let factor = w * (2.0 / vnorm2);
    for i in from..v.len() {
        target[i] -= factor * v[i];
    }
}

/// Pivoted Householder QR, applying the same transformations to `b`.
fn qr_pivoted(mut a: CMatrix, b: &mut [Complex64]) -> QrFactors {
    let (m, n) = (a.rows, a.cols);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut diag = vec![Complex64::default(); n];
    let mut vnorm2 = vec![0.0f64; n];

    let norm2 =
        |col: &[Complex64], from: usize| -> f64 { col[from..].iter().map(|c| c.norm_sqr()).sum() };
    let mut colnorm: Vec<f64> = (0..n).map(|j| norm2(a.col(j), 0)).collect();
    let mut colnorm_ref = colnorm.clone();

    for k in 0..n {
        // pivot: largest remaining column
        let pivot = (k..n)
            .max_by(|&x, &y| colnorm[x].partial_cmp(&colnorm[y]).unwrap())
            .unwrap();
        if pivot != k {
            let (lo, hi) = (k.min(pivot), k.max(pivot));
            let (head, tail) = a.data.split_at_mut(hi * m);
            head[lo * m..(lo + 1) * m].swap_with_slice(&mut tail[..m]);
            perm.swap(k, pivot);
            colnorm.swap(k, pivot);
            colnorm_ref.swap(k, pivot);
        }

        let colk = a.col_mut(k);
        let normx = norm2(colk, k).sqrt();
        if normx == 0.0 {
            diag[k] = Complex64::default();
            continue;
        }
        let alpha = colk[k];
        let phase = if alpha.norm() > 0.0 {
            alpha / alpha.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let beta = -phase * normx;
        colk[k] = alpha - beta;
        diag[k] = beta;
        vnorm2[k] = 2.0 * normx * (normx + alpha.norm());

        // apply the reflector to the trailing columns in parallel, then to b
        let (head, tail) = a.data.split_at_mut((k + 1) * m);
        let v = &head[k * m..(k + 1) * m];
        let vn2 = vnorm2[k];
        tail.par_chunks_mut(m)
            .for_each(|col| reflect(v, vn2, col, k));
        reflect(v, vn2, b, k);

        // downdate remaining column norms; recompute when cancellation bites
        for j in k + 1..n {
            let rkj = a.get(k, j).norm_sqr();
            colnorm[j] -= rkj;
            if colnorm[j] < 0.01 * colnorm_ref[j] || colnorm[j] < 0.0 {
                colnorm[j] = norm2(a.col(j), k + 1);
                colnorm_ref[j] = colnorm[j];
            }
        }
    }

    QrFactors { a, diag, perm }
}

/// Unpivoted QR used for the complete orthogonal decomposition step.
fn qr_plain(a: &mut CMatrix) -> (Vec<Complex64>, Vec<f64>) {
    let (m, n) = (a.rows, a.cols);
    let mut diag = vec![Complex64::default(); n];
    let mut vnorm2 = vec![0.0f64; n];
    for k in 0..n {
        let colk = a.col_mut(k);
        let normx: f64 = colk[k..].iter().map(|c| c.norm_sqr()).sum::<f64>();
        let normx = normx.sqrt();
        if normx == 0.0 {
            continue;
        }
        let alpha = colk[k];
        let phase = if alpha.norm() > 0.0 {
            alpha / alpha.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let beta = -phase * normx;
        colk[k] = alpha - beta;
        diag[k] = beta;
        vnorm2[k] = 2.0 * normx * (normx + alpha.norm());
        let (head, tail) = a.data.split_at_mut((k + 1) * m);
        let v = &head[k * m..(k + 1) * m];
        for col in tail.chunks_mut(m) {
            reflect(v, vnorm2[k], col, k);
        }
    }
    (diag, vnorm2)
}

/// Solves `min ||A b - y||^2 + lambda ||b||^2`.
///
/// Requires `rows >= cols`. With `lambda > 0` the ridge term is handled by
/// QR of the augmented system, never by normal equations. A rank-deficient
/// unregularized system is reported through [`LsSolution::used_min_norm`]
/// and resolved with the minimum-norm solution.
pub fn solve_least_squares(a: &CMatrix, y: &[Complex64], lambda: f64) -> Result<LsSolution> {
    let (m, n) = (a.rows, a.cols);
    if n == 0 || m < n {
        return Err(Error::SizeMismatch(format!(
            "least squares needs rows >= cols > 0, got {m}x{n}"
        )));
    }
    if y.len() != m {
        return Err(Error::SizeMismatch(format!(
            "rhs length {} does not match {m} rows",
            y.len()
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "regularization must be finite and >= 0, got {lambda}"
        )));
    }

    // copy (optionally augmented with the ridge rows) so the caller keeps A
    let (work, mut rhs) = if lambda > 0.0 {
        let sq = lambda.sqrt();
        let mut aug = CMatrix::zeros(m + n, n);
        for j in 0..n {
            aug.col_mut(j)[..m].copy_from_slice(a.col(j));
            aug.col_mut(j)[m + j] = Complex64::new(sq, 0.0);
        }
        let mut rhs = y.to_vec();
        rhs.resize(m + n, Complex64::default());
        (aug, rhs)
    } else {
        (a.clone(), y.to_vec())
    };

    let f = qr_pivoted(work, &mut rhs);
    let mrows = f.a.rows;

    let diag_mags: Vec<f64> = f.diag.iter().map(|d| d.norm()).collect();
    let dmax = diag_mags.iter().cloned().fold(0.0f64, f64::max);
    let tol = dmax * (mrows.max(n) as f64) * f64::EPSILON;
    let rank = diag_mags.iter().take_while(|&&d| d > tol).count();

    if dmax == 0.0 {
        return Err(Error::NonFinite("all-zero system matrix".into()));
    }

    let mut coeffs = vec![Complex64::default(); n];
    let used_min_norm = rank < n;
    if !used_min_norm {
        // back substitution on R z = (Q^H y)[0..n]
        let mut z = rhs[..n].to_vec();
        for i in (0..n).rev() {
            let mut acc = z[i];
            #[allow(clippy::needless_range_loop)]
            for j in i + 1..n {
                acc -= f.a.get(i, j) * z[j];
            }
            z[i] = acc / f.diag[i];
        }
        for j in 0..n {
            coeffs[f.perm[j]] = z[j];
        }
    } else {
        // complete orthogonal decomposition of the leading r x n block:
        // [R11 R12]^H = Qb Rb, so [R11 R12] = Rb^H Qb^H and the minimum-norm
        // solution is z = Qb * (Rb^H \ c).
        let r = rank;
        let mut bmat = CMatrix::from_fn(n, r, |i, j| {
            if j > i {
                Complex64::default()
            } else if j == i {
                f.diag[i].conj()
            } else {
                // B[i][j] = conj(R[j][i]) with j < i (strict upper of R)
                f.a.get(j, i).conj()
            }
        });
        let (bdiag, bvnorm2) = qr_plain(&mut bmat);
        // forward substitution on Rb^H u = c
        let mut u = rhs[..r].to_vec();
        for i in 0..r {
            let mut acc = u[i];
            #[allow(clippy::needless_range_loop)]
            for j in 0..i {
                // (Rb^H)[i][j] = conj(Rb[j][i])
                acc -= bmat.get(j, i).conj() * u[j];
            }
            u[i] = acc / bdiag[i].conj();
        }
        let mut z = u;
        z.resize(n, Complex64::default());
        for k in (0..r).rev() {
            reflect(bmat.col(k), bvnorm2[k], &mut z, k);
        }
        for j in 0..n {
            coeffs[f.perm[j]] = z[j];
        }
    }

    let dmin = diag_mags[..rank.max(1)]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let condition_estimate = (dmax / dmin).powi(2);

    Ok(LsSolution {
        coeffs,
        rank,
        condition_estimate,
        used_min_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Complex, DMatrix, DVector};
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randc(rng: &mut ChaCha8Rng) -> Complex64 {
        let u = |r: &mut ChaCha8Rng| (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        Complex64::new(u(rng), u(rng))
    }

    fn random_matrix(m: usize, n: usize, seed: u64) -> (CMatrix, Vec<Complex64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = CMatrix::from_fn(m, n, |_, _| randc(&mut rng));
        let y = (0..m).map(|_| randc(&mut rng)).collect();
        (a, y)
    }

    fn to_na(a: &CMatrix) -> DMatrix<Complex<f64>> {
        DMatrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j))
    }

    fn rel_err(x: &[Complex64], y: &[Complex64]) -> f64 {
        let num: f64 = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let den: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn identity_system_returns_rhs() {
        let n = 8;
        let a = CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::default()
            }
        });
        let y: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, -1.0)).collect();
        let sol = solve_least_squares(&a, &y, 0.0).unwrap();
        assert_eq!(sol.rank, n);
        assert!(rel_err(&sol.coeffs, &y) < 1e-14);
    }

    #[test]
    fn consistent_system_recovers_coefficients() {
        for seed in 0..5 {
            let (a, _) = random_matrix(120, 17, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let truth: Vec<Complex64> = (0..17).map(|_| randc(&mut rng)).collect();
            let y = a.mul_vec(&truth);
            let sol = solve_least_squares(&a, &y, 0.0).unwrap();
            assert!(rel_err(&sol.coeffs, &truth) < 1e-10, "seed {seed}");
            assert!(!sol.used_min_norm);
        }
    }

    #[test]
    fn matches_pseudoinverse_oracle_on_overdetermined_systems() {
        for seed in 0..10 {
            let (a, y) = random_matrix(60, 9, seed);
            let sol = solve_least_squares(&a, &y, 0.0).unwrap();
            let na = to_na(&a);
            let ny = DVector::from_iterator(60, y.iter().cloned());
            let pinv = na.pseudo_inverse(1e-13).unwrap();
            let oracle = pinv * ny;
            assert!(
                rel_err(&sol.coeffs, oracle.as_slice()) < 1e-8,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn residual_is_orthogonal_to_column_space() {
        for (seed, lambda) in [(1u64, 0.0), (2, 0.0), (3, 0.1), (4, 2.5)] {
            let (a, y) = random_matrix(80, 11, seed);
            let sol = solve_least_squares(&a, &y, lambda).unwrap();
            let fitted = a.mul_vec(&sol.coeffs);
            let resid: Vec<Complex64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
            // A^H (y - A b) = lambda * b at the minimizer
            let grad = a.herm_mul_vec(&resid);
            let num: f64 = grad
                .iter()
                .zip(&sol.coeffs)
                .map(|(g, c)| (g - lambda * c).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let den: f64 = a
                .herm_mul_vec(&y)
                .iter()
                .map(|v| v.norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(
                num / den < 1e-10,
                "seed {seed} lambda {lambda}: {}",
                num / den
            );
        }
    }

    #[test]
    fn ridge_matches_normal_equations_oracle() {
        let lambda = 0.37;
        let (a, y) = random_matrix(50, 7, 11);
        let sol = solve_least_squares(&a, &y, lambda).unwrap();
        let na = to_na(&a);
        let ny = DVector::from_iterator(50, y.iter().cloned());
        let ah = na.adjoint();
        let lhs = &ah * &na + DMatrix::identity(7, 7) * Complex::new(lambda, 0.0);
        let rhs = ah * ny;
        let oracle = lhs.lu().solve(&rhs).unwrap();
        assert!(rel_err(&sol.coeffs, oracle.as_slice()) < 1e-10);
    }

    #[test]
    fn rank_deficient_falls_back_to_min_norm() {
        // duplicate a column so rank = n - 1
        let (base, y) = random_matrix(40, 5, 21);
        let a = CMatrix::from_fn(40, 6, |i, j| {
            if j < 5 {
                base.get(i, j)
            } else {
                base.get(i, 2)
            }
        });
        let sol = solve_least_squares(&a, &y, 0.0).unwrap();
        assert!(sol.used_min_norm);
        assert_eq!(sol.rank, 5);
        assert!(sol.condition_estimate.is_finite());
        let na = to_na(&a);
        let ny = DVector::from_iterator(40, y.iter().cloned());
        let oracle = na.pseudo_inverse(1e-10).unwrap() * ny;
        assert!(
            rel_err(&sol.coeffs, oracle.as_slice()) < 1e-8,
            "min-norm mismatch {}",
            rel_err(&sol.coeffs, oracle.as_slice())
        );
    }

    #[test]
    fn rejects_underdetermined_shapes() {
        let (a, _) = random_matrix(5, 8, 1);
        let y = vec![Complex64::default(); 5];
        assert!(solve_least_squares(&a, &y, 0.0).is_err());
    }
}
