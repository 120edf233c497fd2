//! Frequentist component model on contrast data: generalized least squares
//! with a pseudoinverse, moment-based heterogeneity, P-scores.

use serde::{Deserialize, Serialize};

use crate::design::{block_design, build_sigma_star, s_star};
use crate::effects::{derive_relative_effect, normal_cdf, Direction, EffectSource, RankingMethod, RankingReport};
use crate::error::{CnmaError, Result};
use crate::network::{ContrastBlock, Network, Treatment};
use crate::numerics::{chol, pinv, rank, Matrix, Vector, DEFAULT_PINV_RTOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectsModel {
    Fixed,
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    pub tau2: f64,
    pub q: f64,
    pub df: usize,
    pub trace: f64,
    /// No residual degrees of freedom; tau2 reported as 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqFit {
    pub d_hat: Vec<f64>,
    pub cov_d: Matrix,
    pub tau2: f64,
    pub q: f64,
    pub df: usize,
    pub rank_x: usize,
    pub tau2_undefined: bool,
    pub effects: EffectsModel,
}

/// Stacked design, response and block covariances.
struct Stacked {
    x: Matrix,
    y: Vector,
    s_blocks: Vec<Matrix>,
    sigma_blocks: Vec<Matrix>,
}

fn stack(blocks: &[ContrastBlock], c: usize) -> Result<Stacked> {
    if blocks.is_empty() {
        return Err(CnmaError::EmptyNetwork);
    }
    let rows: usize = blocks.iter().map(|b| b.n_contrasts()).sum();
    let mut x = Matrix::zeros(rows, c);
    let mut y = Vector::zeros(rows);
    let mut s_blocks = Vec::with_capacity(blocks.len());
    let mut sigma_blocks = Vec::with_capacity(blocks.len());
    let mut r = 0;
    for b in blocks {
        let m = b.n_contrasts();
        x.view_mut((r, 0), (m, c)).copy_from(&block_design(b, c)?);
        for (k, v) in b.y_star.iter().enumerate() {
            y[r + k] = *v;
        }
        s_blocks.push(s_star(b));
        sigma_blocks.push(build_sigma_star(b.n_arms()));
        r += m;
    }
    Ok(Stacked { x, y, s_blocks, sigma_blocks })
}

fn block_diag(blocks: &[Matrix]) -> Matrix {
    let n = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(n, n);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, r), (b.nrows(), b.nrows())).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Block-diagonal inverse of `S*ᵢ + τ²Σ*ᵢ`.
fn weight_matrix(st: &Stacked, tau2: f64) -> Result<Matrix> {
    let inverses = st
        .s_blocks
        .iter()
        .zip(&st.sigma_blocks)
        .map(|(s, sig)| {
            let omega = s + sig * tau2;
            let l = chol(&omega)?;
            let n = omega.nrows();
            let li = l.solve_lower_triangular(&Matrix::identity(n, n)).ok_or(CnmaError::NotPositiveDefinite)?;
            Ok(li.transpose() * li)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(block_diag(&inverses))
}

/// Weighted least squares with a pseudoinverse: (d̂, (X'WX)⁺).
fn wls(x: &Matrix, w: &Matrix, y: &Vector) -> Result<(Vector, Matrix)> {
    let xtw = x.transpose() * w;
    let cov = pinv(&(&xtw * x), DEFAULT_PINV_RTOL)?;
    let d = &cov * (xtw * y);
    Ok((d, cov))
}

fn heterogeneity(st: &Stacked) -> Result<Heterogeneity> {
    let w = weight_matrix(st, 0.0)?;
    let (d, _) = wls(&st.x, &w, &st.y)?;
    let resid = &st.y - &st.x * d;
    let q = (resid.transpose() * &w * &resid)[(0, 0)];
    let rows = st.x.nrows();
    let rank_x = rank(&st.x, DEFAULT_PINV_RTOL);
    if rows <= rank_x {
        return Ok(Heterogeneity {
            tau2: 0.0,
            q,
            df: 0,
            trace: 0.0,
            undefined: true,
        });
    }
    let df = rows - rank_x;
    let wx = &w * &st.x;
    let p = &w - &wx * pinv(&(st.x.transpose() * &wx), DEFAULT_PINV_RTOL)? * wx.transpose();
    // E[Q] = df + τ²·tr(P·blockdiag(Σ*))
    let trace = (p * block_diag(&st.sigma_blocks)).trace();
    let tau2 = if trace > 0.0 { ((q - df as f64) / trace).max(0.0) } else { 0.0 };
    Ok(Heterogeneity {
        tau2,
        q,
        df,
        trace,
        undefined: false,
    })
}

/// Moment estimate of the between-study variance from a fixed-effect fit.
pub fn estimate_tau2(blocks: &[ContrastBlock], network: &Network) -> Result<Heterogeneity> {
    heterogeneity(&stack(blocks, network.n_components())?)
}

/// Generalized least squares fit of component effects. Under random
/// effects the heterogeneity estimate is plugged in as known.
pub fn gls_fit(blocks: &[ContrastBlock], network: &Network, effects: EffectsModel) -> Result<FreqFit> {
    network.require_connected()?;
    let st = stack(blocks, network.n_components())?;
    let het = heterogeneity(&st)?;
    let tau2 = match effects {
        EffectsModel::Fixed => 0.0,
        EffectsModel::Random => het.tau2,
    };
    let w = weight_matrix(&st, tau2)?;
    let (d, cov) = wls(&st.x, &w, &st.y)?;
    let cov_d = (&cov + cov.transpose()) * 0.5;
    Ok(FreqFit {
        d_hat: d.iter().copied().collect(),
        cov_d,
        tau2,
        q: het.q,
        df: het.df,
        rank_x: rank(&st.x, DEFAULT_PINV_RTOL),
        tau2_undefined: het.undefined,
        effects,
    })
}

/// Mean over competitors of Φ(θ̂ₖ − θ̂ₗ)/se.
pub fn p_scores(fit: &FreqFit, treatments: &[Treatment], direction: Direction) -> Result<RankingReport> {
    if treatments.len() < 2 {
        return Err(CnmaError::InvalidArgument("ranking needs at least two treatments".into()));
    }
    let source = EffectSource::Gaussian {
        d: &fit.d_hat,
        cov: &fit.cov_d,
    };
    let t = treatments.len();
    let mut scores = vec![0.0; t];
    for k in 0..t {
        for l in 0..t {
            if k == l {
                continue;
            }
            let e = derive_relative_effect(source, &treatments[l], &treatments[k], 0.95)?;
            let diff = match direction {
                Direction::HigherBetter => e.point,
                Direction::LowerBetter => -e.point,
            };
            let p = if e.sd > 0.0 {
                normal_cdf(diff / e.sd)
            } else if treatments[k] == treatments[l] {
                0.5
            } else {
                return Err(CnmaError::ZeroStandardError(treatments[l].label.clone(), treatments[k].label.clone()));
            };
            scores[k] += p;
        }
    }
    for s in &mut scores {
        *s /= (t - 1) as f64;
    }
    Ok(RankingReport {
        labels: treatments.iter().map(|x| x.label.clone()).collect(),
        scores,
        method: RankingMethod::Pscore,
        direction,
    })
}
