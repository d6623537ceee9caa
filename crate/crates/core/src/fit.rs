//! Gradient-based fitting of the shared-matrix parametrization and of
//! plain low-rank factorizations to a target dense matrix under Frobenius
//! loss, with analytic gradients and Adam. The low-rank runs use a rank
//! chosen to match the structured parameter count, so the comparison is
//! parameter-for-parameter.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frob_norm;
use crate::matrix::{DenseMatrix, Vector};
use crate::optim::Adam;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::vvma::{pad_shape, InitSpec, VvmaParam};

/// Optimizer hyperparameters for a fit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Loss-curve sampling interval in steps.
    pub log_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            steps: 30_000,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            log_every: 100,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::BadConfig("learning_rate must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::BadConfig("steps must be at least 1".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::BadConfig(format!("{name} must be in [0, 1)")));
            }
        }
        if self.log_every == 0 {
            return Err(Error::BadConfig("log_every must be at least 1".into()));
        }
        Ok(())
    }

    fn adam<T: Scalar>(&self, n_params: usize) -> Adam<T> {
        Adam::new(
            n_params,
            T::lit(self.learning_rate),
            T::lit(self.adam_beta1),
            T::lit(self.adam_beta2),
            T::lit(self.adam_epsilon),
        )
    }
}

/// Outcome of a fit run. `final_loss` and the curve entries are Frobenius
/// distances (not squared).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub final_loss: f64,
    pub loss_curve: Vec<(usize, f64)>,
    pub wall_seconds: f64,
    pub params_fitted: usize,
}

impl FitReport {
    /// Curve as CSV with a `step,loss` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.loss_curve {
            out.push_str(&format!("{step},{loss}\n"));
        }
        out
    }

    pub fn summary(&self, config: &FitConfig) -> FitSummary {
        FitSummary {
            final_loss: self.final_loss,
            params_fitted: self.params_fitted,
            wall_seconds: Some(self.wall_seconds),
            config: config.clone(),
        }
    }
}

/// JSON summary of a fit run. `wall_seconds` is omitted when the caller
/// needs byte-reproducible output files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub final_loss: f64,
    pub params_fitted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
    pub config: FitConfig,
}

impl FitSummary {
    pub fn without_wall_time(mut self) -> Self {
        self.wall_seconds = None;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialization cannot fail")
    }
}

/// `U V^T` factorization with shared inner dimension `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankParam<T> {
    pub u: DenseMatrix<T>,
    pub v: DenseMatrix<T>,
}

impl<T: Scalar> LowRankParam<T> {
    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn dense(&self) -> DenseMatrix<T> {
        self.u
            .matmul(&self.v.transpose())
            .expect("factor shapes agree by construction")
    }

    pub fn param_count(&self) -> usize {
        self.u.rows() * self.u.cols() + self.v.rows() * self.v.cols()
    }
}

/// Analytic gradients of `L = |expand(p) - W|_F^2` with respect to the
/// shared matrix and every diagonal. Returns `(grad_M, grad_diags, L)`;
/// `grad_diags` is empty when diagonals are disabled.
pub fn vvma_fit_grad<T: Scalar>(
    p: &VvmaParam<T>,
    w: &DenseMatrix<T>,
) -> Result<(DenseMatrix<T>, Vec<Vector<T>>, T)> {
    if w.rows() != p.out_dim() || w.cols() != p.in_dim() {
        return Err(Error::DimMismatch {
            context: "vvma_fit_grad target shape",
            expected: p.out_dim() * p.in_dim(),
            got: w.rows() * w.cols(),
        });
    }
    let k = p.k();
    let s = p.m_scale();
    let two_s = s + s;
    let m = p.shared_matrix();
    let mut grad_m = DenseMatrix::zeros(k, k);
    let mut grad_diags = if p.diag_enabled() {
        vec![Vector::zeros(k); p.row_blocks() * p.col_blocks()]
    } else {
        Vec::new()
    };
    let mut loss = T::zero();

    for bi in 0..p.row_blocks() {
        for bj in 0..p.col_blocks() {
            let cell = bi * p.col_blocks() + bj;
            for a in 0..k {
                let m_row = m.row(a);
                let w_row = &w.row(bi * k + a)[bj * k..(bj + 1) * k];
                let gm_row = grad_m.row_mut(a);
                if p.diag_enabled() {
                    let v = p.diag(bi, bj).as_slice();
                    let gv = grad_diags[cell].as_mut_slice();
                    for b in 0..k {
                        let e = s * m_row[b] * v[b] - w_row[b];
                        loss += e * e;
                        gm_row[b] += two_s * e * v[b];
                        gv[b] += two_s * e * m_row[b];
                    }
                } else {
                    for b in 0..k {
                        let e = s * m_row[b] - w_row[b];
                        loss += e * e;
                        gm_row[b] += two_s * e;
                    }
                }
            }
        }
    }
    Ok((grad_m, grad_diags, loss))
}

/// Parameter-matched rank: the rank `p` at which a `U V^T` factorization
/// of an `m x n` matrix holds as many parameters as the structured form,
/// `p = round((k^2 + r*c*k) / (m + n))`, clamped to `[1, min(m, n)]`.
pub fn matched_rank(m: usize, n: usize, k: usize) -> usize {
    let (r, c) = pad_shape(m, n, k);
    let params = k * k + r * c * k;
    let p = (params as f64 / (m + n) as f64).round() as usize;
    p.clamp(1, m.min(n))
}

/// Fits the structured parametrization to `W` with Adam, jointly over the
/// shared matrix and the diagonals. Deterministic for a fixed config.
pub fn fit_vvma<T: Scalar>(
    w: &DenseMatrix<T>,
    k: usize,
    cfg: &FitConfig,
) -> Result<(VvmaParam<T>, FitReport)> {
    let (r, c) = pad_shape(w.rows(), w.cols(), k);
    let p = VvmaParam::new(k, r, c, InitSpec::FanUniform, cfg.seed)?;
    fit_vvma_from(p, w, cfg)
}

/// Like [`fit_vvma`] but starting from a caller-built parametrization, so
/// the diagonal-ablation variant fits through the same loop.
pub fn fit_vvma_from<T: Scalar>(
    mut p: VvmaParam<T>,
    w: &DenseMatrix<T>,
    cfg: &FitConfig,
) -> Result<(VvmaParam<T>, FitReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let (r, c) = pad_shape(w.rows(), w.cols(), p.k());
    if (r, c) != (p.row_blocks(), p.col_blocks()) {
        return Err(Error::DimMismatch {
            context: "fit_vvma_from block grid",
            expected: r * c,
            got: p.row_blocks() * p.col_blocks(),
        });
    }
    let padded;
    let target = if w.rows() == p.out_dim() && w.cols() == p.in_dim() {
        w
    } else {
        padded = w.pad_to(p.out_dim(), p.in_dim());
        &padded
    };

    let k = p.k();
    let n_diag = if p.diag_enabled() { r * c * k } else { 0 };
    let n_params = k * k + n_diag;
    let mut adam = cfg.adam::<T>(n_params);
    let mut flat_grad = vec![T::zero(); n_params];
    let mut flat_param = vec![T::zero(); n_params];
    let mut curve = Vec::new();

    for step in 0..cfg.steps {
        let (gm, gd, loss2) = vvma_fit_grad(&p, target)?;
        if !loss2.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if step % cfg.log_every == 0 {
            curve.push((step, loss2.sqrt().to_f64().unwrap()));
        }

        flat_grad[..k * k].copy_from_slice(gm.as_slice());
        flat_param[..k * k].copy_from_slice(p.shared_matrix().as_slice());
        for (cell, gv) in gd.iter().enumerate() {
            let at = k * k + cell * k;
            flat_grad[at..at + k].copy_from_slice(gv.as_slice());
            flat_param[at..at + k]
                .copy_from_slice(p.diag(cell / c, cell % c).as_slice());
        }
        adam.step(&mut flat_param, &flat_grad);
        p.shared_matrix_mut()
            .as_mut_slice()
            .copy_from_slice(&flat_param[..k * k]);
        for cell in 0..n_diag / k.max(1) {
            let at = k * k + cell * k;
            p.diag_mut(cell / c, cell % c)
                .as_mut_slice()
                .copy_from_slice(&flat_param[at..at + k]);
        }
    }

    let final_loss2 = vvma_fit_grad(&p, target)?.2;
    if !final_loss2.is_finite() {
        return Err(Error::NonFiniteLoss { step: cfg.steps });
    }
    let final_loss = final_loss2.sqrt().to_f64().unwrap();
    curve.push((cfg.steps, final_loss));
    let report = FitReport {
        final_loss,
        loss_curve: curve,
        wall_seconds: started.elapsed().as_secs_f64(),
        params_fitted: p.param_count(),
    };
    Ok((p, report))
}

/// Fits a rank-`p` factorization `U V^T` to `W` with Adam. Deterministic
/// for a fixed config.
pub fn fit_lowrank<T: Scalar>(
    w: &DenseMatrix<T>,
    p: usize,
    cfg: &FitConfig,
) -> Result<(LowRankParam<T>, FitReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let (m, n) = (w.rows(), w.cols());
    if p == 0 || p > m.min(n) {
        return Err(Error::RankOutOfRange { p, m, n });
    }

    // N(0, 1/sqrt(p)) factors rescaled so the initial product has a tenth
    // of the target's norm.
    let mut rng = SplitMix64::new(cfg.seed);
    let sd = (p as f64).sqrt().recip();
    let mut u = DenseMatrix::<T>::from_fn(m, p, |_, _| T::lit(rng.gaussian(0.0, sd)));
    let mut v = DenseMatrix::<T>::from_fn(n, p, |_, _| T::lit(rng.gaussian(0.0, sd)));
    let prod_norm = frob_norm(&u.matmul(&v.transpose()).expect("shapes agree"));
    if prod_norm > T::zero() {
        let f = (frob_norm(w) / (T::lit(10.0) * prod_norm)).sqrt();
        u = u.scale(f);
        v = v.scale(f);
    }

    let n_params = (m + n) * p;
    let mut adam = cfg.adam::<T>(n_params);
    let mut flat_param = vec![T::zero(); n_params];
    let mut flat_grad = vec![T::zero(); n_params];
    let mut curve = Vec::new();

    let loss_of = |e: &DenseMatrix<T>| {
        let mut acc = T::zero();
        for &x in e.as_slice() {
            acc += x * x;
        }
        acc
    };

    for step in 0..cfg.steps {
        let e = u.matmul(&v.transpose()).expect("shapes agree").sub(w)?;
        let loss2 = loss_of(&e);
        if !loss2.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if step % cfg.log_every == 0 {
            curve.push((step, loss2.sqrt().to_f64().unwrap()));
        }
        let gu = e.matmul(&v).expect("shapes agree").scale(T::lit(2.0));
        let gv = e.transpose().matmul(&u).expect("shapes agree").scale(T::lit(2.0));

        flat_param[..m * p].copy_from_slice(u.as_slice());
        flat_param[m * p..].copy_from_slice(v.as_slice());
        flat_grad[..m * p].copy_from_slice(gu.as_slice());
        flat_grad[m * p..].copy_from_slice(gv.as_slice());
        adam.step(&mut flat_param, &flat_grad);
        u.as_mut_slice().copy_from_slice(&flat_param[..m * p]);
        v.as_mut_slice().copy_from_slice(&flat_param[m * p..]);
    }

    let final_e = u.matmul(&v.transpose()).expect("shapes agree").sub(w)?;
    let final_loss2 = loss_of(&final_e);
    if !final_loss2.is_finite() {
        return Err(Error::NonFiniteLoss { step: cfg.steps });
    }
    let final_loss = final_loss2.sqrt().to_f64().unwrap();
    curve.push((cfg.steps, final_loss));
    let lr_param = LowRankParam { u, v };
    let params_fitted = lr_param.param_count();
    let report = FitReport {
        final_loss,
        loss_curve: curve,
        wall_seconds: started.elapsed().as_secs_f64(),
        params_fitted,
    };
    Ok((lr_param, report))
}
