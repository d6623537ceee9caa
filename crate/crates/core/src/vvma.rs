//! The structured weight parametrization: a single shared `k x k` matrix
//! tiled over a block grid, with one learned diagonal vector per block to
//! differentiate the tiles. Block `(i, j)` of the represented dense matrix
//! is `m_scale * M * diag(v_ij)`, so a matrix-vector product only ever
//! needs `M` plus element-wise work on the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Vector};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Initialization for [`VvmaParam::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    /// Shared matrix and diagonals all zero.
    Zeros,
    /// Shared matrix and diagonals all one.
    Ones,
    /// Shared matrix i.i.d. uniform on `[-s, s]` with `s = sqrt(6 / 2k)`,
    /// diagonals all one, so the initial expansion is a plain tiling of `M`.
    #[default]
    FanUniform,
}

/// Scale factor used when the diagonals are disabled; keeps the tiled
/// matrix small enough to train without overflowing gradients.
pub const NO_DIAG_M_SCALE: f64 = 0.1;

/// Shared-matrix-plus-diagonals parametrization of an `(r*k) x (c*k)`
/// dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VvmaParam<T> {
    k: usize,
    row_blocks: usize,
    col_blocks: usize,
    m: DenseMatrix<T>,
    /// Row-major grid of per-block diagonals, `row_blocks * col_blocks`
    /// vectors of length `k`.
    diags: Vec<Vector<T>>,
    diag_enabled: bool,
    m_scale: T,
}

impl<T: Scalar> VvmaParam<T> {
    /// Creates a parametrization for an `(r*k) x (c*k)` matrix,
    /// deterministic for a fixed seed.
    pub fn new(k: usize, r: usize, c: usize, init: InitSpec, seed: u64) -> Result<Self> {
        if k == 0 || r == 0 || c == 0 {
            return Err(Error::BadDimension(format!(
                "block size and grid must be nonzero (k={k}, r={r}, c={c})"
            )));
        }
        let cells = r
            .checked_mul(c)
            .and_then(|rc| rc.checked_mul(k))
            .and_then(|x| x.checked_mul(k));
        if cells.is_none() || r.checked_mul(k).is_none() || c.checked_mul(k).is_none() {
            return Err(Error::BadDimension(format!(
                "dense shape overflows (k={k}, r={r}, c={c})"
            )));
        }

        let mut rng = SplitMix64::new(seed);
        let m = match init {
            InitSpec::Zeros => DenseMatrix::zeros(k, k),
            InitSpec::Ones => DenseMatrix::from_fn(k, k, |_, _| T::one()),
            InitSpec::FanUniform => {
                let s = (6.0 / (2 * k) as f64).sqrt();
                DenseMatrix::from_fn(k, k, |_, _| T::lit(rng.uniform(-s, s)))
            }
        };
        let diag_fill = match init {
            InitSpec::Zeros => T::zero(),
            InitSpec::Ones | InitSpec::FanUniform => T::one(),
        };
        let diags = (0..r * c)
            .map(|_| Vector::from_vec_unchecked(vec![diag_fill; k]))
            .collect();

        Ok(Self {
            k,
            row_blocks: r,
            col_blocks: c,
            m,
            diags,
            diag_enabled: true,
            m_scale: T::one(),
        })
    }

    /// Builds a parametrization from explicit parts, validating shapes.
    pub fn from_parts(
        k: usize,
        r: usize,
        c: usize,
        m: DenseMatrix<T>,
        diags: Vec<Vector<T>>,
        diag_enabled: bool,
        m_scale: T,
    ) -> Result<Self> {
        if k == 0 || r == 0 || c == 0 {
            return Err(Error::BadDimension("zero dimension".into()));
        }
        if m.rows() != k || m.cols() != k {
            return Err(Error::DimMismatch {
                context: "VvmaParam shared matrix",
                expected: k,
                got: m.rows().max(m.cols()),
            });
        }
        if diags.len() != r * c {
            return Err(Error::DimMismatch {
                context: "VvmaParam diagonal grid",
                expected: r * c,
                got: diags.len(),
            });
        }
        if let Some(bad) = diags.iter().find(|v| v.len() != k) {
            return Err(Error::DimMismatch {
                context: "VvmaParam diagonal length",
                expected: k,
                got: bad.len(),
            });
        }
        if !m_scale.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(Self {
            k,
            row_blocks: r,
            col_blocks: c,
            m,
            diags,
            diag_enabled,
            m_scale,
        })
    }

    /// Disables the per-block diagonals and applies the stabilizing
    /// `m_scale = 0.1`, the ablation configuration.
    pub fn disable_diagonals(mut self) -> Self {
        self.diag_enabled = false;
        self.m_scale = T::lit(NO_DIAG_M_SCALE);
        self
    }

    pub fn with_m_scale(mut self, m_scale: T) -> Self {
        self.m_scale = m_scale;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row_blocks(&self) -> usize {
        self.row_blocks
    }

    pub fn col_blocks(&self) -> usize {
        self.col_blocks
    }

    /// Rows of the represented dense matrix.
    pub fn out_dim(&self) -> usize {
        self.row_blocks * self.k
    }

    /// Columns of the represented dense matrix.
    pub fn in_dim(&self) -> usize {
        self.col_blocks * self.k
    }

    pub fn shared_matrix(&self) -> &DenseMatrix<T> {
        &self.m
    }

    pub fn diag(&self, i: usize, j: usize) -> &Vector<T> {
        &self.diags[i * self.col_blocks + j]
    }

    pub fn diag_enabled(&self) -> bool {
        self.diag_enabled
    }

    pub fn m_scale(&self) -> T {
        self.m_scale
    }

    pub fn shared_matrix_mut(&mut self) -> &mut DenseMatrix<T> {
        &mut self.m
    }

    pub fn diag_mut(&mut self, i: usize, j: usize) -> &mut Vector<T> {
        &mut self.diags[i * self.col_blocks + j]
    }

    /// Number of free parameters: `k^2` for the shared matrix plus one
    /// length-`k` diagonal per block when diagonals are enabled.
    pub fn param_count(&self) -> usize {
        if self.diag_enabled {
            self.k * self.k + self.row_blocks * self.col_blocks * self.k
        } else {
            self.k * self.k
        }
    }

    /// Materializes the represented dense matrix. Only used by oracles and
    /// reporting; the fast paths never build it.
    pub fn expand(&self) -> DenseMatrix<T> {
        let k = self.k;
        let mut out = DenseMatrix::zeros(self.out_dim(), self.in_dim());
        for bi in 0..self.row_blocks {
            for bj in 0..self.col_blocks {
                for a in 0..k {
                    let m_row = self.m.row(a);
                    let out_row = out.row_mut(bi * k + a);
                    if self.diag_enabled {
                        let v = self.diag(bi, bj).as_slice();
                        for b in 0..k {
                            out_row[bj * k + b] = self.m_scale * m_row[b] * v[b];
                        }
                    } else {
                        for b in 0..k {
                            out_row[bj * k + b] = self.m_scale * m_row[b];
                        }
                    }
                }
            }
        }
        out
    }

    /// Matrix-vector product in broadcast form: per output block,
    /// `y_i = m_scale * M * (sum_j v_ij .* x_j)`. Never materializes the
    /// expanded matrix.
    pub fn matvec(&self, x: &Vector<T>) -> Result<Vector<T>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimMismatch {
                context: "VvmaParam::matvec",
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let k = self.k;
        let mut y = vec![T::zero(); self.out_dim()];
        let mut z = vec![T::zero(); k];
        for bi in 0..self.row_blocks {
            for e in z.iter_mut() {
                *e = T::zero();
            }
            for bj in 0..self.col_blocks {
                let xj = &x.as_slice()[bj * k..(bj + 1) * k];
                if self.diag_enabled {
                    let v = self.diag(bi, bj).as_slice();
                    for b in 0..k {
                        z[b] += v[b] * xj[b];
                    }
                } else {
                    for b in 0..k {
                        z[b] += xj[b];
                    }
                }
            }
            for a in 0..k {
                let mut acc = T::zero();
                for (mv, zv) in self.m.row(a).iter().zip(&z) {
                    acc += *mv * *zv;
                }
                y[bi * k + a] = self.m_scale * acc;
            }
        }
        Ok(Vector::from_vec_unchecked(y))
    }

    /// Serializes to the self-describing JSON document; round-trips
    /// bit-exactly for finite doubles.
    pub fn to_json(&self) -> String
    where
        T: Serialize,
    {
        let doc = VvmaParamJson {
            k: self.k,
            r: self.row_blocks,
            c: self.col_blocks,
            diag_enabled: self.diag_enabled,
            m_scale: self.m_scale,
            m: self.m.as_slice().to_vec(),
            diags: self.diags.iter().map(|v| v.as_slice().to_vec()).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("VvmaParam serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let doc: VvmaParamJson<T> = serde_json::from_str(text)?;
        let m = DenseMatrix::from_vec(doc.k, doc.k, doc.m)?;
        let diags = doc
            .diags
            .into_iter()
            .map(Vector::from_vec)
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(doc.k, doc.r, doc.c, m, diags, doc.diag_enabled, doc.m_scale)
    }
}

#[derive(Serialize, Deserialize)]
struct VvmaParamJson<T> {
    k: usize,
    r: usize,
    c: usize,
    diag_enabled: bool,
    m_scale: T,
    #[serde(rename = "M")]
    m: Vec<T>,
    diags: Vec<Vec<T>>,
}

/// Fully random parametrization (Gaussian shared matrix and diagonals),
/// shared by tests across the crate.
#[cfg(test)]
pub(crate) fn random_param(
    k: usize,
    r: usize,
    c: usize,
    rng: &mut SplitMix64,
) -> VvmaParam<f64> {
    let m = DenseMatrix::from_fn(k, k, |_, _| rng.gaussian(0.0, 1.0));
    let diags = (0..r * c)
        .map(|_| Vector::from_vec((0..k).map(|_| rng.gaussian(0.0, 1.0)).collect()).unwrap())
        .collect();
    VvmaParam::from_parts(k, r, c, m, diags, true, 1.0).unwrap()
}

/// Block grid covering an `m x n` matrix with `k x k` tiles:
/// `(ceil(m/k), ceil(n/k))`. Callers zero-pad to `(r*k, c*k)` and crop
/// results back.
pub fn pad_shape(m: usize, n: usize, k: usize) -> (usize, usize) {
    assert!(m >= 1 && n >= 1 && k >= 1, "pad_shape needs positive dims");
    (m.div_ceil(k), n.div_ceil(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob_norm;

    type P = VvmaParam<f64>;

    #[test]
    fn zero_init_is_all_zero() {
        let p = P::new(2, 1, 1, InitSpec::Zeros, 0).unwrap();
        assert!(p.shared_matrix().iter().all(|&x| x == 0.0));
        assert_eq!(p.diag(0, 0).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn param_count_formula() {
        let p = P::new(32, 8, 8, InitSpec::FanUniform, 7).unwrap();
        assert_eq!(p.param_count(), 32 * 32 + 8 * 8 * 32);
        assert_eq!(p.param_count(), 3_072);

        let p = P::new(128, 8, 8, InitSpec::FanUniform, 0).unwrap();
        assert_eq!(p.param_count(), 16_384 + 8_192);

        let p = P::new(32, 16, 16, InitSpec::FanUniform, 0).unwrap();
        assert_eq!(p.param_count(), 1_024 + 8_192);

        let p = P::new(32, 4, 4, InitSpec::FanUniform, 0)
            .unwrap()
            .disable_diagonals();
        assert_eq!(p.param_count(), 1_024);
    }

    #[test]
    fn k1_ones_expands_to_all_ones() {
        let p = P::new(1, 3, 3, InitSpec::Ones, 0).unwrap();
        let w = p.expand();
        assert!(w.iter().all(|&x| x == 1.0));
        assert_eq!((w.rows(), w.cols()), (3, 3));
    }

    #[test]
    fn scalar_blocks_expand() {
        // k=1, 2x2 grid: entries are a * d_ij.
        let m = DenseMatrix::from_vec(1, 1, vec![3.0]).unwrap();
        let diags = vec![
            Vector::from_vec(vec![1.0]).unwrap(),
            Vector::from_vec(vec![2.0]).unwrap(),
            Vector::from_vec(vec![4.0]).unwrap(),
            Vector::from_vec(vec![5.0]).unwrap(),
        ];
        let p = P::from_parts(1, 2, 2, m, diags, true, 1.0).unwrap();
        let w = p.expand();
        assert_eq!(w.as_slice(), &[3.0, 6.0, 12.0, 15.0]);
    }

    #[test]
    fn no_diag_blocks_are_identical() {
        let p = P::new(4, 3, 2, InitSpec::FanUniform, 11)
            .unwrap()
            .disable_diagonals();
        assert_eq!(p.m_scale(), 0.1);
        let w = p.expand();
        let first = p.shared_matrix().scale(0.1);
        for bi in 0..3 {
            for bj in 0..2 {
                for a in 0..4 {
                    for b in 0..4 {
                        assert_eq!(w[(bi * 4 + a, bj * 4 + b)], first[(a, b)]);
                    }
                }
            }
        }
    }

    #[test]
    fn matvec_identity_like() {
        let m = DenseMatrix::identity(2);
        let diags = vec![Vector::from_vec(vec![1.0, 1.0]).unwrap()];
        let p = P::from_parts(2, 1, 1, m, diags, true, 1.0).unwrap();
        let y = p.matvec(&Vector::from_vec(vec![3.0, 5.0]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 5.0]);
    }

    #[test]
    fn matvec_matches_dense_expansion() {
        let mut rng = SplitMix64::new(42);
        let p = random_param(4, 2, 3, &mut rng);
        let x = Vector::from_vec((0..12).map(|_| rng.gaussian(0.0, 1.0)).collect()).unwrap();
        let fast = p.matvec(&x).unwrap();
        let dense = p.expand().mul_vector(&x).unwrap();
        for (a, b) in fast.iter().zip(dense.iter()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn annihilating_diagonal_gives_zero() {
        let m = DenseMatrix::from_fn(3, 3, |i, j| (i + j) as f64);
        let diags = vec![Vector::zeros(3)];
        let p = P::from_parts(3, 1, 1, m, diags, true, 1.0).unwrap();
        let y = p
            .matvec(&Vector::from_vec(vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matvec_rejects_length_mismatch() {
        let p = P::new(2, 2, 2, InitSpec::FanUniform, 0).unwrap();
        assert!(p.matvec(&Vector::zeros(3)).is_err());
    }

    #[test]
    fn new_rejects_zero_dims() {
        assert!(P::new(0, 1, 1, InitSpec::Zeros, 0).is_err());
        assert!(P::new(2, 0, 1, InitSpec::Zeros, 0).is_err());
        assert!(P::new(2, 1, 0, InitSpec::Zeros, 0).is_err());
        assert!(P::new(usize::MAX, 2, 2, InitSpec::Zeros, 0).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = P::new(8, 3, 3, InitSpec::FanUniform, 123).unwrap();
        let b = P::new(8, 3, 3, InitSpec::FanUniform, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pad_shape_examples() {
        assert_eq!(pad_shape(1024, 1024, 32), (32, 32));
        assert_eq!(pad_shape(100, 70, 32), (4, 3));
        assert_eq!(pad_shape(1, 1, 32), (1, 1));
    }

    #[test]
    fn compression_is_real() {
        // param_count < m*n whenever the grid has more than one block and
        // k < min(m, n).
        for &(k, r, c) in &[(2usize, 2usize, 2usize), (4, 2, 2), (8, 3, 2), (16, 2, 4)] {
            let p = P::new(k, r, c, InitSpec::FanUniform, 1).unwrap();
            let (m, n) = (r * k, c * k);
            assert!(r * c > 1 && k < m.min(n));
            assert!(p.param_count() < m * n, "k={k} r={r} c={c}");
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = SplitMix64::new(9);
        let p = random_param(3, 2, 2, &mut rng);
        let text = p.to_json();
        let q = P::from_json(&text).unwrap();
        assert_eq!(p, q);

        // Awkward but finite doubles must survive exactly.
        let m = DenseMatrix::from_vec(1, 1, vec![f64::MIN_POSITIVE]).unwrap();
        let diags = vec![Vector::from_vec(vec![1.0 + f64::EPSILON]).unwrap()];
        let p = P::from_parts(1, 1, 1, m, diags, true, 0.1).unwrap();
        let q = P::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn json_rejects_malformed_grids() {
        let p = P::new(2, 2, 2, InitSpec::FanUniform, 0).unwrap();
        let text = p.to_json().replace("\"r\": 2", "\"r\": 3");
        assert!(P::from_json(&text).is_err());
    }

    #[test]
    fn rank_bound_needs_row_shared_diagonals() {
        // When the diagonals are shared across block rows the expansion
        // factors as tile(M) * blockdiag(D_1..D_c), so rank <= k. With
        // per-row diagonals no such factorization exists and the rank is
        // generically full; the low-rank structure genuinely depends on
        // how the diagonals are tied.
        use crate::linalg::svd;
        let k = 4;
        let (r, c) = (3, 3);
        let mut rng = SplitMix64::new(77);

        let m = DenseMatrix::from_fn(k, k, |_, _| rng.gaussian(0.0, 1.0));
        let col_diags: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..k).map(|_| rng.gaussian(0.0, 1.0)).collect())
            .collect();
        let shared = P::from_parts(
            k,
            r,
            c,
            m.clone(),
            (0..r * c)
                .map(|cell| Vector::from_vec(col_diags[cell % c].clone()).unwrap())
                .collect(),
            true,
            1.0,
        )
        .unwrap();
        let s = svd(&shared.expand()).unwrap().s;
        assert!(s[k] <= 1e-10 * s[0], "shared-diagonal rank leaked: {:e}", s[k] / s[0]);

        let free = crate::vvma::random_param(k, r, c, &mut rng);
        let s = svd(&free.expand()).unwrap().s;
        assert!(
            s[k] > 1e-3 * s[0],
            "row-varying diagonals should exceed rank k (got {:e})",
            s[k] / s[0]
        );
    }

    #[test]
    fn expand_norm_matches_blockwise_sum() {
        let mut rng = SplitMix64::new(5);
        let p = random_param(4, 3, 3, &mut rng);
        let w = p.expand();
        let mut acc = 0.0;
        for bi in 0..3 {
            for bj in 0..3 {
                for a in 0..4 {
                    for b in 0..4 {
                        let e = p.m_scale() * p.shared_matrix()[(a, b)] * p.diag(bi, bj)[b];
                        acc += e * e;
                    }
                }
            }
        }
        assert!((frob_norm(&w) - acc.sqrt()).abs() < 1e-12);
    }
}
