//! Small numeric kernels shared by the fitting code.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CnmaError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff used by [`pinv`] when callers have no
/// better choice.
pub const DEFAULT_PINV_RTOL: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// `rel_tol * max_singular_value` are treated as zero.
pub fn pinv(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CnmaError::InvalidArgument("pseudoinverse of a non-finite matrix".into()));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Matrix::zeros(m.ncols(), m.nrows()));
    }
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or(CnmaError::SvdNonConvergence)?;
    let smax = svd.singular_values.max();
    let cutoff = rel_tol * smax;
    let u = svd.u.as_ref().ok_or(CnmaError::SvdNonConvergence)?;
    let vt = svd.v_t.as_ref().ok_or(CnmaError::SvdNonConvergence)?;
    let mut out = Matrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    Ok(out)
}

/// Numerical rank with the same cutoff rule as [`pinv`].
pub fn rank(m: &Matrix, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let cutoff = rel_tol * sv.max();
    sv.iter().filter(|&&s| s > cutoff && s > 0.0).count()
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn chol(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(CnmaError::DimensionMismatch(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(CnmaError::InvalidArgument("Cholesky factor of a non-symmetric matrix".into()));
    }
    let c = nalgebra::linalg::Cholesky::new(m.clone()).ok_or(CnmaError::NotPositiveDefinite)?;
    let l = c.unpack();
    if l.diagonal().iter().any(|&d| !(d > 1e-300)) {
        return Err(CnmaError::NotPositiveDefinite);
    }
    Ok(l)
}

/// Log density of N(mean, L Lᵀ) at `x` given the lower Cholesky factor.
pub fn mvn_logpdf_chol(x: &[f64], mean: &[f64], l: &Matrix) -> Result<f64> {
    let n = x.len();
    if mean.len() != n || l.nrows() != n {
        return Err(CnmaError::DimensionMismatch(format!(
            "x has {n} entries, mean {}, covariance {}",
            mean.len(),
            l.nrows()
        )));
    }
    let mut z = vec![0.0; n];
    let mut log_det = 0.0;
    for i in 0..n {
        let mut s = x[i] - mean[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
        log_det += l[(i, i)].ln();
    }
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Ok(-0.5 * (n as f64 * LN_2PI + quad) - log_det)
}

pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &Matrix) -> Result<f64> {
    if cov.nrows() != x.len() || cov.ncols() != x.len() {
        return Err(CnmaError::DimensionMismatch(format!(
            "covariance is {}x{} for a vector of length {}",
            cov.nrows(),
            cov.ncols(),
            x.len()
        )));
    }
    let l = chol(cov)?;
    mvn_logpdf_chol(x, mean, &l)
}

/// Univariate normal log density.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_2PI + var.ln() + z * z / var)
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(n - 1) p`). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(CnmaError::EmptyInput("quantile of no draws".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(CnmaError::InvalidArgument(format!("quantile level {p} outside [0, 1]")));
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Seeded random stream. Each `(seed, stream)` pair yields an independent,
/// reproducible sequence, so replicates and chains can own their own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child stream: a different seed derived from this stream and `index`.
    pub fn child(&self, index: u64) -> Self {
        let mut z = self.seed ^ self.stream.rotate_left(29) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        // splitmix64 finaliser
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Self { seed: z, stream: index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}
