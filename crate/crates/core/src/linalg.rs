//! Dense linear-algebra support: Frobenius norms, seeded random matrices,
//! a one-sided Jacobi SVD, and the optimal low-rank truncation error used
//! as the fitting oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Vector};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Distribution for seeded random matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Distribution {
    Gaussian { mean: f64, stddev: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomSpec {
    pub distribution: Distribution,
    pub seed: u64,
}

impl RandomSpec {
    pub fn gaussian(mean: f64, stddev: f64, seed: u64) -> Self {
        Self {
            distribution: Distribution::Gaussian { mean, stddev },
            seed,
        }
    }

    pub fn uniform(lo: f64, hi: f64, seed: u64) -> Self {
        Self {
            distribution: Distribution::Uniform { lo, hi },
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.distribution {
            Distribution::Gaussian { stddev, .. } if !(stddev > 0.0 && stddev.is_finite()) => {
                Err(Error::BadDistribution("gaussian stddev must be positive"))
            }
            Distribution::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(Error::BadDistribution("uniform range must satisfy lo < hi"))
            }
            _ => Ok(()),
        }
    }
}

/// Matrix with i.i.d. entries from `spec`, deterministic for a fixed spec.
pub fn random_matrix<T: Scalar>(m: usize, n: usize, spec: &RandomSpec) -> Result<DenseMatrix<T>> {
    if m == 0 || n == 0 {
        return Err(Error::BadDimension(format!("random_matrix({m}, {n})")));
    }
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let mut draw = move || match spec.distribution {
        Distribution::Gaussian { mean, stddev } => rng.gaussian(mean, stddev),
        Distribution::Uniform { lo, hi } => rng.uniform(lo, hi),
    };
    Ok(DenseMatrix::from_fn(m, n, |_, _| T::lit(draw())))
}

pub fn random_vector<T: Scalar>(n: usize, spec: &RandomSpec) -> Result<Vector<T>> {
    Ok(random_matrix(n, 1, spec)?.column(0))
}

pub fn frob_norm<T: Scalar>(a: &DenseMatrix<T>) -> T {
    let mut acc = T::zero();
    for &x in a.as_slice() {
        acc += x * x;
    }
    acc.sqrt()
}

pub fn frob_dist<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<T> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::DimMismatch {
            context: "frob_dist",
            expected: a.rows() * a.cols(),
            got: b.rows() * b.cols(),
        });
    }
    let mut acc = T::zero();
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Full singular value decomposition `A = U * diag(S) * V^T`.
#[derive(Debug, Clone)]
pub struct SvdResult<T> {
    /// Left singular vectors, `m x m`.
    pub u: DenseMatrix<T>,
    /// Singular values, nonincreasing and nonnegative, `min(m, n)` of them.
    pub s: Vector<T>,
    /// Right singular vectors, `n x n`.
    pub v: DenseMatrix<T>,
}

impl<T: Scalar> SvdResult<T> {
    /// Rebuilds `U * diag(S) * V^T`, for reconstruction checks.
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let m = self.u.rows();
        let n = self.v.rows();
        let r = self.s.len();
        let mut out = DenseMatrix::zeros(m, n);
        for l in 0..r {
            let s = self.s[l];
            if s == T::zero() {
                continue;
            }
            for i in 0..m {
                let ui = self.u[(i, l)] * s;
                let row = out.row_mut(i);
                for (j, o) in row.iter_mut().enumerate() {
                    *o += ui * self.v[(j, l)];
                }
            }
        }
        out
    }
}

const JACOBI_MAX_SWEEPS: usize = 30;
const JACOBI_TOL: f64 = 1e-12;

/// One-sided Jacobi SVD with a fixed sweep cap; deterministic for a fixed
/// input. Fails only if the rotation sweeps do not reach the off-diagonal
/// threshold, which signals numerical pathology in the input.
pub fn svd<T: Scalar>(a: &DenseMatrix<T>) -> Result<SvdResult<T>> {
    if a.rows() < a.cols() {
        // Orthogonalize the transpose and swap the factors back.
        let t = svd(&a.transpose())?;
        return Ok(SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }

    let m = a.rows();
    let n = a.cols();
    // Column-major working copy: columns get orthogonalized in place.
    let mut g: Vec<Vec<T>> = (0..n).map(|j| (0..m).map(|i| a[(i, j)]).collect()).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();

    // The stated threshold is meaningful in f64; for narrower scalars fall
    // back to a few ulps.
    let tol = T::lit(JACOBI_TOL).max(T::epsilon() * T::lit(4.0));
    // Columns this small relative to the matrix are numerically zero:
    // their directions are rounding noise and would never orthogonalize,
    // so they are deflated out of the sweeps and reported as zero.
    let fnorm = frob_norm(a);
    let deflate = fnorm * T::epsilon() * T::from_usize(m.max(n)).expect("small dim");
    let mut worst = T::zero();
    let mut converged = n < 2;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        worst = T::zero();
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = T::zero();
                for i in 0..m {
                    let gp = g[p][i];
                    let gq = g[q][i];
                    alpha += gp * gp;
                    beta += gq * gq;
                    gamma += gp * gq;
                }
                if alpha.sqrt() <= deflate || beta.sqrt() <= deflate {
                    continue;
                }
                let ratio = gamma.abs() / (alpha * beta).sqrt();
                if ratio > worst {
                    worst = ratio;
                }
                if ratio <= tol {
                    continue;
                }
                // Rutishauser rotation annihilating the (p, q) inner product.
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let gp = g[p][i];
                    let gq = g[q][i];
                    g[p][i] = c * gp - s * gq;
                    g[q][i] = s * gp + c * gq;
                }
                for i in 0..n {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if worst <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
            ratio: worst.to_f64().unwrap_or(f64::NAN),
        });
    }

    // Singular values are the column norms; sort them nonincreasing.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = g
        .iter()
        .map(|col| {
            let mut acc = T::zero();
            for &x in col {
                acc += x * x;
            }
            acc.sqrt()
        })
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let s = Vector::from_vec_unchecked(
        order
            .iter()
            .map(|&i| if norms[i] > deflate { norms[i] } else { T::zero() })
            .collect(),
    );
    let mut u = DenseMatrix::zeros(m, m);
    let mut v_out = DenseMatrix::zeros(n, n);
    let mut filled = vec![false; m];
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            v_out[(i, dst)] = v[src][i];
        }
        if norms[src] > deflate {
            for i in 0..m {
                u[(i, dst)] = g[src][i] / norms[src];
            }
            filled[dst] = true;
        }
    }
    complete_basis(&mut u, &mut filled);

    Ok(SvdResult { u, s, v: v_out })
}

/// Fills unfilled columns with an orthonormal completion (modified
/// Gram-Schmidt against every filled column, two passes).
fn complete_basis<T: Scalar>(u: &mut DenseMatrix<T>, filled: &mut [bool]) {
    let m = u.rows();
    let mut next_axis = 0usize;
    for col in 0..m {
        if filled[col] {
            continue;
        }
        'candidates: while next_axis <= m {
            let mut cand = vec![T::zero(); m];
            if next_axis < m {
                cand[next_axis] = T::one();
            }
            next_axis += 1;
            for _pass in 0..2 {
                for other in 0..m {
                    if !filled[other] {
                        continue;
                    }
                    let mut proj = T::zero();
                    for i in 0..m {
                        proj += cand[i] * u[(i, other)];
                    }
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c = *c - proj * u[(i, other)];
                    }
                }
            }
            let mut norm = T::zero();
            for &x in &cand {
                norm += x * x;
            }
            let norm = norm.sqrt();
            if norm > T::lit(1e-6) {
                for (i, c) in cand.iter().enumerate() {
                    u[(i, col)] = *c / norm;
                }
                filled[col] = true;
                break 'candidates;
            }
        }
        debug_assert!(filled[col], "basis completion exhausted candidates");
    }
}

/// Minimum Frobenius error over all matrices of rank at most `p`:
/// the square root of the tail sum of squared singular values.
pub fn optimal_lowrank_error<T: Scalar>(a: &DenseMatrix<T>, p: usize) -> Result<T> {
    if p > a.rows().min(a.cols()) {
        return Err(Error::RankOutOfRange {
            p,
            m: a.rows(),
            n: a.cols(),
        });
    }
    let s = svd(a)?.s;
    let mut acc = T::zero();
    for i in p..s.len() {
        acc += s[i] * s[i];
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn random_matrix_is_deterministic() {
        let spec = RandomSpec::gaussian(0.0, 1.0, 1);
        let a: DenseMatrix<f64> = random_matrix(2, 2, &spec).unwrap();
        let b: DenseMatrix<f64> = random_matrix(2, 2, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_matrix_rejects_degenerate_ranges() {
        assert!(random_matrix::<f64>(3, 3, &RandomSpec::uniform(0.0, 0.0, 0)).is_err());
        assert!(random_matrix::<f64>(3, 3, &RandomSpec::gaussian(0.0, 0.0, 0)).is_err());
        assert!(random_matrix::<f64>(0, 3, &RandomSpec::gaussian(0.0, 1.0, 0)).is_err());
    }

    #[test]
    fn gaussian_frobenius_concentrates() {
        // E |A|_F^2 = n^2 for standard normal entries; the norm is within
        // 1% of n at this size.
        let a: DenseMatrix<f64> = random_matrix(1024, 1024, &RandomSpec::gaussian(0.0, 1.0, 3)).unwrap();
        let f = frob_norm(&a);
        assert!((f - 1024.0).abs() < 0.01 * 1024.0, "frob {f}");
    }

    #[test]
    fn frob_basics() {
        let z = DenseMatrix::<f64>::zeros(4, 5);
        assert_eq!(frob_norm(&z), 0.0);
        let id = DenseMatrix::<f64>::identity(9);
        approx(frob_norm(&id), 3.0, 1e-12);
        assert_eq!(frob_dist(&id, &id).unwrap(), 0.0);
        assert!(frob_dist(&id, &z).is_err());
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let id = DenseMatrix::<f64>::identity(3);
        let r = svd(&id).unwrap();
        for i in 0..3 {
            approx(r.s[i], 1.0, 1e-12);
        }

        let mut d = DenseMatrix::<f64>::zeros(3, 3);
        d[(0, 0)] = 3.0;
        d[(1, 1)] = 2.0;
        d[(2, 2)] = 1.0;
        let r = svd(&d).unwrap();
        approx(r.s[0], 3.0, 1e-12);
        approx(r.s[1], 2.0, 1e-12);
        approx(r.s[2], 1.0, 1e-12);
    }

    fn check_svd(a: &DenseMatrix<f64>) {
        let r = svd(a).unwrap();
        // Nonincreasing, nonnegative.
        for i in 0..r.s.len() {
            assert!(r.s[i] >= 0.0);
            if i > 0 {
                assert!(r.s[i - 1] >= r.s[i]);
            }
        }
        // Reconstruction.
        let err = frob_dist(&r.reconstruct(), a).unwrap();
        let scale = frob_norm(a).max(1e-30);
        assert!(err <= 1e-9 * scale, "reconstruction {err} vs scale {scale}");
        // Orthonormality of both factors.
        for (q, dim) in [(&r.u, a.rows()), (&r.v, a.cols())] {
            for i in 0..dim {
                for j in i..dim {
                    let mut dot = 0.0;
                    for l in 0..dim {
                        dot += q[(l, i)] * q[(l, j)];
                    }
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() <= 1e-9, "col {i},{j}: {dot}");
                }
            }
        }
    }

    #[test]
    fn svd_reconstructs_random_square() {
        let a: DenseMatrix<f64> = random_matrix(50, 50, &RandomSpec::gaussian(0.0, 1.0, 5)).unwrap();
        check_svd(&a);
    }

    #[test]
    fn svd_handles_rectangular_both_ways() {
        let a: DenseMatrix<f64> = random_matrix(24, 9, &RandomSpec::gaussian(0.0, 1.0, 6)).unwrap();
        check_svd(&a);
        check_svd(&a.transpose());
    }

    #[test]
    fn svd_handles_rank_deficiency_and_zero() {
        // Rank-1 outer product.
        let u: DenseMatrix<f64> = random_matrix(12, 1, &RandomSpec::gaussian(0.0, 1.0, 7)).unwrap();
        let v: DenseMatrix<f64> = random_matrix(1, 12, &RandomSpec::gaussian(0.0, 1.0, 8)).unwrap();
        let a = u.matmul(&v).unwrap();
        check_svd(&a);
        let r = svd(&a).unwrap();
        assert!(r.s[1] <= 1e-10 * r.s[0]);

        check_svd(&DenseMatrix::<f64>::zeros(5, 3));
    }

    #[test]
    fn optimal_lowrank_error_known_values() {
        let mut d = DenseMatrix::<f64>::zeros(3, 3);
        d[(0, 0)] = 3.0;
        d[(1, 1)] = 2.0;
        d[(2, 2)] = 1.0;
        approx(optimal_lowrank_error(&d, 1).unwrap(), 5.0f64.sqrt(), 1e-12);
        approx(optimal_lowrank_error(&d, 3).unwrap(), 0.0, 1e-12);
        assert!(optimal_lowrank_error(&d, 4).is_err());
    }

    #[test]
    fn optimal_lowrank_error_nonincreasing_in_p() {
        let a: DenseMatrix<f64> = random_matrix(20, 14, &RandomSpec::gaussian(0.0, 1.0, 9)).unwrap();
        let mut prev = f64::INFINITY;
        for p in 0..=14 {
            let e = optimal_lowrank_error(&a, p).unwrap();
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn optimal_lowrank_never_beaten_by_random_candidates() {
        // Randomized lower-bound sanity check: no random rank-8 candidate
        // does better than the truncation error.
        let a: DenseMatrix<f64> = random_matrix(64, 64, &RandomSpec::gaussian(0.0, 1.0, 10)).unwrap();
        let opt = optimal_lowrank_error(&a, 8).unwrap();
        let mut rng = SplitMix64::new(11);
        for _ in 0..10_000 {
            let u = DenseMatrix::<f64>::from_fn(64, 8, |_, _| rng.gaussian(0.0, 0.35));
            let v = DenseMatrix::<f64>::from_fn(8, 64, |_, _| rng.gaussian(0.0, 0.35));
            let cand = u.matmul(&v).unwrap();
            let err = frob_dist(&cand, &a).unwrap();
            assert!(opt <= err + 1e-9);
        }
    }

    #[test]
    fn frob_dist_triangle_inequality() {
        let specs = [
            RandomSpec::gaussian(0.0, 1.0, 21),
            RandomSpec::gaussian(0.5, 2.0, 22),
            RandomSpec::uniform(-1.0, 3.0, 23),
        ];
        let ms: Vec<DenseMatrix<f64>> = specs.iter().map(|s| random_matrix(7, 5, s).unwrap()).collect();
        let ab = frob_dist(&ms[0], &ms[1]).unwrap();
        let bc = frob_dist(&ms[1], &ms[2]).unwrap();
        let ac = frob_dist(&ms[0], &ms[2]).unwrap();
        assert!(ac <= ab + bc + 1e-12);
        assert!((ab - frob_dist(&ms[1], &ms[0]).unwrap()).abs() <= 1e-12);
    }
}
