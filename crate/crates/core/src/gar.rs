//! Affinity and balance regularizers on the class co-activation matrix `N = BᵀB`.
//!
//! `B` (m × n) holds the rectified output pre-activations of a batch. With
//! `v = diag(N)` and `V = vᵀv`:
//!
//! ```text
//! α   = Σ_{i≠j} N_ij / ((n−1)·Σ_i N_ii + ε)
//! β   = Σ_{i≠j} V_ij / ((n−1)·Σ_i V_ii + ε)
//! 1−β = Σ_{i<j} (v_i − v_j)² / ((n−1)·Σ_i v_i² + ε)
//! U   = c_α·α + c_β·(1−β) + c_F·‖B‖²_F
//! ```
//!
//! The last two lines are algebraically equal when ε = 0. The loss and its
//! gradient use the pairwise-difference form, which makes `U(0) = 0` and gives
//! a clean quotient-rule derivative. `m` is the batch size, not the dataset size.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::{Gradients, Network};

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarConfig {
    pub c_alpha: f64,
    pub c_beta: f64,
    pub c_frob: f64,
    /// Added to both ratio denominators so all-zero batches stay finite.
    pub epsilon: f64,
}

impl Default for GarConfig {
    fn default() -> Self {
        GarConfig {
            c_alpha: 3.0,
            c_beta: 1.0,
            c_frob: 1e-6,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl GarConfig {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [
            ("c_alpha", self.c_alpha),
            ("c_beta", self.c_beta),
            ("c_frob", self.c_frob),
        ];
        for (name, c) in coeffs {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {c}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn is_inert(&self) -> bool {
        self.c_alpha == 0.0 && self.c_beta == 0.0 && self.c_frob == 0.0
    }
}

/// Evaluated loss components for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GarTerms {
    pub alpha: f64,
    pub balance: f64,
    pub frob_sq: f64,
    pub total: f64,
    pub n: Matrix,
    /// `diag(N)` as a `1 × n` row.
    pub v: Matrix,
}

fn require_classes(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!(
            "affinity and balance need at least 2 classes, got {n}"
        )));
    }
    Ok(())
}

fn require_square(n: &Matrix, op: &'static str) -> Result<()> {
    if n.rows() != n.cols() {
        return Err(Error::shape(op, n.shape(), (n.cols(), n.cols())));
    }
    Ok(())
}

/// `N = BᵀB`. Exactly symmetric: both triangles sum the same products in the same order.
pub fn compute_n(b: &Matrix) -> Matrix {
    b.t_matmul(b)
}

fn off_diagonal_sum(n: &Matrix) -> f64 {
    let k = n.rows();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                s += n.get(i, j);
            }
        }
    }
    s
}

/// Normalized off-diagonal mass of `N`.
pub fn affinity(n: &Matrix, epsilon: f64) -> Result<f64> {
    require_square(n, "affinity")?;
    require_classes(n.rows())?;
    let k = n.rows() as f64;
    Ok(off_diagonal_sum(n) / ((k - 1.0) * n.trace() + epsilon))
}

/// Balance in its defining form, the normalized off-diagonal mass of `V = vᵀv`.
pub fn balance(n: &Matrix, epsilon: f64) -> Result<f64> {
    require_square(n, "balance")?;
    require_classes(n.rows())?;
    let v = n.diagonal();
    let k = v.len() as f64;
    let total: f64 = v.iter().sum();
    let sq: f64 = v.iter().map(|x| x * x).sum();
    let mut off = 0.0;
    for (i, &vi) in v.iter().enumerate() {
        for (j, &vj) in v.iter().enumerate() {
            if i != j {
                off += vi * vj;
            }
        }
    }
    debug_assert!((off - (total * total - sq)).abs() <= 1e-9 * (total * total).max(1e-300));
    Ok(off / ((k - 1.0) * sq + epsilon))
}

/// `1 − β` in pairwise-difference form.
pub fn balance_gap(n: &Matrix, epsilon: f64) -> Result<f64> {
    require_square(n, "balance_gap")?;
    require_classes(n.rows())?;
    let v = n.diagonal();
    Ok(pairwise_spread(&v) / ((v.len() as f64 - 1.0) * sum_sq(&v) + epsilon))
}

fn pairwise_spread(v: &[f64]) -> f64 {
    let mut p = 0.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            let d = v[i] - v[j];
            p += d * d;
        }
    }
    p
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `U(B)` and its components.
pub fn gar_loss(b: &Matrix, cfg: &GarConfig) -> Result<GarTerms> {
    require_classes(b.cols())?;
    let n = compute_n(b);
    let alpha = affinity(&n, cfg.epsilon)?;
    let gap = balance_gap(&n, cfg.epsilon)?;
    let balance = 1.0 - gap;
    #[cfg(debug_assertions)]
    {
        let direct = self::balance(&n, cfg.epsilon)?;
        let denom = (n.rows() as f64 - 1.0) * sum_sq(&n.diagonal()) + cfg.epsilon;
        // the two forms differ by exactly ε / denom
        debug_assert!(
            (direct - balance).abs() <= cfg.epsilon / denom + 1e-9,
            "balance forms disagree: {direct} vs {balance}"
        );
    }
    let frob_sq = b.frobenius_sq();
    let total = cfg.c_alpha * alpha + cfg.c_beta * (1.0 - balance) + cfg.c_frob * frob_sq;
    let v = Matrix::from_rows(&[n.diagonal()]);
    Ok(GarTerms {
        alpha,
        balance,
        frob_sq,
        total,
        n,
        v,
    })
}

/// `∂U/∂B` for the ε-guarded loss, valid at every `B` (not only where `B > 0`).
pub fn gar_grad(b: &Matrix, cfg: &GarConfig) -> Result<Matrix> {
    let (m, k) = b.shape();
    require_classes(k)?;
    let kf = k as f64;
    let eps = cfg.epsilon;

    // affinity: S / D with S = Σ_k (r_k² − Σ_i B_ki²), D = (n−1)·‖B‖² + ε
    let frob = b.frobenius_sq();
    let row_sums = b.row_sums();
    let s_off: f64 = (0..m)
        .map(|r| row_sums[r] * row_sums[r] - b.row(r).iter().map(|x| x * x).sum::<f64>())
        .sum();
    let d_alpha = (kf - 1.0) * frob + eps;

    // balance gap: P / E over v = column sums of B²
    let mut v = vec![0.0; k];
    for row in b.row_iter() {
        for (vi, &x) in v.iter_mut().zip(row) {
            *vi += x * x;
        }
    }
    let v_total: f64 = v.iter().sum();
    let p = pairwise_spread(&v);
    let q = sum_sq(&v);
    let e = (kf - 1.0) * q + eps;
    // ∂(P/E)/∂v_i, chained through ∂v_i/∂B_ki = 2 B_ki below
    let dgap_dv: Vec<f64> = v
        .iter()
        .map(|&vi| {
            let dp = 2.0 * (kf * vi - v_total);
            let de = 2.0 * (kf - 1.0) * vi;
            (dp * e - p * de) / (e * e)
        })
        .collect();

    let mut grad = Matrix::zeros(m, k);
    for r in 0..m {
        let rs = row_sums[r];
        let b_row = b.row(r);
        let g_row = grad.row_mut(r);
        for i in 0..k {
            let x = b_row[i];
            let ds = 2.0 * (rs - x);
            let dd = 2.0 * (kf - 1.0) * x;
            let dalpha = (ds * d_alpha - s_off * dd) / (d_alpha * d_alpha);
            let dgap = dgap_dv[i] * 2.0 * x;
            g_row[i] = cfg.c_alpha * dalpha + cfg.c_beta * dgap + cfg.c_frob * 2.0 * x;
        }
    }
    Ok(grad)
}

/// Loss and parameter gradients of `U(g(X))` for one (blended) batch.
///
/// The GAR head runs without dropout; the gradient through the rectifier is
/// zero wherever the output pre-activation is not positive.
pub fn gar_batch_objective(
    net: &Network,
    x: &Matrix,
    cfg: &GarConfig,
) -> Result<(GarTerms, Gradients)> {
    if x.rows() == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let (b, cache) = net.gar_head(x)?;
    let terms = gar_loss(&b, cfg)?;
    let d_b = gar_grad(&b, cfg)?;
    let logits = cache.pre_activation(cache.depth() - 1);
    let d_z = d_b.zip_map(logits, |g, z| if z > 0.0 { g } else { 0.0 });
    let grads = net.backward(&cache, &d_z)?;
    Ok((terms, grads))
}
