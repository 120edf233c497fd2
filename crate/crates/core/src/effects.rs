//! Additivity and consistency algebra over component effects, plus
//! rank-based summaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CnmaError, Result};
use crate::network::Treatment;
use crate::numerics::{mean, quantile, sorted_copy, variance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectSourceKind {
    Freq,
    Posterior,
}

/// Relative effect of `target` against `comparator`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub comparator: String,
    pub target: String,
    pub point: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub source: EffectSourceKind,
}

/// Where component effects come from.
#[derive(Debug, Clone, Copy)]
pub enum EffectSource<'a> {
    /// Point estimate with covariance.
    Gaussian { d: &'a [f64], cov: &'a Matrix },
    /// Posterior draws of the full component vector.
    Draws(&'a [Vec<f64>]),
}

/// Treatment effect under additivity: sum of its component entries.
pub fn additive_effect(d: &[f64], treatment: &Treatment) -> Result<f64> {
    treatment
        .components()
        .iter()
        .map(|&c| d.get(c).copied().ok_or(CnmaError::UnknownComponent(c)))
        .sum()
}

/// Contrast vector `a` with `aᵀd = effect(target) − effect(comparator)`.
pub fn contrast_vector(n_components: usize, comparator: &Treatment, target: &Treatment) -> Result<Vec<f64>> {
    let mut a = vec![0.0; n_components];
    for (t, sign) in [(target, 1.0), (comparator, -1.0)] {
        for &c in t.components() {
            *a.get_mut(c).ok_or(CnmaError::UnknownComponent(c))? += sign;
        }
    }
    Ok(a)
}

fn quad_form(a: &[f64], cov: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        if a[i] == 0.0 {
            continue;
        }
        for j in 0..a.len() {
            s += a[i] * cov[(i, j)] * a[j];
        }
    }
    s
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Effect of `target` relative to `comparator` through additivity and
/// consistency, with uncertainty from covariance propagation or per-draw
/// evaluation.
pub fn derive_relative_effect(
    source: EffectSource<'_>,
    comparator: &Treatment,
    target: &Treatment,
    level: f64,
) -> Result<EffectEstimate> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CnmaError::InvalidArgument(format!("interval level {level} outside (0, 1)")));
    }
    let tail = (1.0 - level) / 2.0;
    let (point, sd, lower, upper, kind) = match source {
        EffectSource::Gaussian { d, cov } => {
            let a = contrast_vector(d.len(), comparator, target)?;
            let point: f64 = a.iter().zip(d).map(|(x, y)| x * y).sum();
            let sd = quad_form(&a, cov).max(0.0).sqrt();
            let z = normal_quantile(1.0 - tail);
            (point, sd, point - z * sd, point + z * sd, EffectSourceKind::Freq)
        }
        EffectSource::Draws(draws) => {
            if draws.is_empty() {
                return Err(CnmaError::EmptyInput("no posterior draws".into()));
            }
            let a = contrast_vector(draws[0].len(), comparator, target)?;
            let values: Vec<f64> = draws
                .iter()
                .map(|d| a.iter().zip(d).map(|(x, y)| x * y).sum())
                .collect();
            let sorted = sorted_copy(&values);
            (
                mean(&values),
                variance(&values).sqrt(),
                quantile(&sorted, tail)?,
                quantile(&sorted, 1.0 - tail)?,
                EffectSourceKind::Posterior,
            )
        }
    };
    Ok(EffectEstimate {
        comparator: comparator.label.clone(),
        target: target.label.clone(),
        point,
        sd,
        lower,
        upper,
        level,
        source: kind,
    })
}

/// Per-draw treatment effects (draw × treatment) under additivity.
pub fn treatment_draws(component_draws: &[Vec<f64>], treatments: &[Treatment]) -> Result<Vec<Vec<f64>>> {
    component_draws
        .iter()
        .map(|d| treatments.iter().map(|t| additive_effect(d, t)).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingMethod {
    Sucra,
    Pscore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub labels: Vec<String>,
    pub scores: Vec<f64>,
    pub method: RankingMethod,
    pub direction: Direction,
}

impl RankingReport {
    pub fn score(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.scores[i])
    }

    /// Labels from best to worst score; ties keep input order.
    pub fn ordering(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.labels.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx.into_iter().map(|i| self.labels[i].as_str()).collect()
    }
}

pub const MIN_SUCRA_DRAWS: usize = 100;

/// Surface under the cumulative ranking curve from draws of treatment
/// effects (draw × treatment). Tied values within a draw share the average
/// rank.
pub fn sucra(effect_draws: &[Vec<f64>], treatments: &[Treatment], direction: Direction) -> Result<RankingReport> {
    let t = treatments.len();
    if t < 2 {
        return Err(CnmaError::InvalidArgument("ranking needs at least two treatments".into()));
    }
    if effect_draws.len() < MIN_SUCRA_DRAWS {
        return Err(CnmaError::InvalidArgument(format!(
            "ranking needs at least {MIN_SUCRA_DRAWS} draws, got {}",
            effect_draws.len()
        )));
    }
    let mut rank_sums = vec![0.0; t];
    let mut order: Vec<usize> = (0..t).collect();
    for draw in effect_draws {
        if draw.len() != t {
            return Err(CnmaError::DimensionMismatch(format!("draw has {} effects for {t} treatments", draw.len())));
        }
        // rank 1 = best
        order.sort_by(|&a, &b| match direction {
            Direction::HigherBetter => draw[b].total_cmp(&draw[a]),
            Direction::LowerBetter => draw[a].total_cmp(&draw[b]),
        });
        let mut i = 0;
        while i < t {
            let mut j = i + 1;
            while j < t && draw[order[j]] == draw[order[i]] {
                j += 1;
            }
            let avg_rank = (i + 1 + j) as f64 / 2.0;
            for &k in &order[i..j] {
                rank_sums[k] += avg_rank;
            }
            i = j;
        }
    }
    let n = effect_draws.len() as f64;
    // (1/(T−1)) Σ_{j<T} P(rank ≤ j) = (T − E[rank]) / (T − 1)
    let scores = rank_sums.iter().map(|s| (t as f64 - s / n) / (t as f64 - 1.0)).collect();
    Ok(RankingReport {
        labels: treatments.iter().map(|x| x.label.clone()).collect(),
        scores,
        method: RankingMethod::Sucra,
        direction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorResidual {
    pub multi: String,
    pub size: usize,
    /// |d_{Z,X} − Σ_{c∈X} d_{Z,c}| after re-expressing effects against Z.
    pub residual: f64,
    /// (|X| − 1)·|d_{Y,Z}|
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorUniquenessReport {
    pub d_y_z: f64,
    pub residuals: Vec<AnchorResidual>,
    pub max_residual: f64,
    /// Every residual matches (|X| − 1)·|d_{Y,Z}| within the tolerance.
    pub identity_holds: bool,
    /// Additivity also holds with Z as anchor (all residuals within tolerance of 0).
    pub z_is_also_anchor: bool,
}

/// Checks what happens to additivity when effects that are additive with
/// anchor `y` are re-expressed against another treatment `z`.
///
/// `d_relative_to_y` holds d_{Y,T} for `z`, every multicomponent treatment
/// in `multis`, and every single-component treatment making them up;
/// d_{Y,Y} defaults to zero.
pub fn verify_unique_anchor(
    d_relative_to_y: &HashMap<Treatment, f64>,
    y: &Treatment,
    z: &Treatment,
    multis: &[Treatment],
    tol: f64,
) -> Result<AnchorUniquenessReport> {
    if y == z {
        return Err(CnmaError::InvalidArgument("Y and Z must be distinct treatments".into()));
    }
    let effect_y = |t: &Treatment| -> Result<f64> {
        if t == y {
            return Ok(d_relative_to_y.get(t).copied().unwrap_or(0.0));
        }
        d_relative_to_y
            .get(t)
            .copied()
            .ok_or_else(|| CnmaError::UnknownTreatment(t.label.clone()))
    };
    let d_y_z = effect_y(z)?;
    // consistency: d_{Z,T} = d_{Y,T} − d_{Y,Z}
    let effect_z = |t: &Treatment| -> Result<f64> { Ok(effect_y(t)? - d_y_z) };
    let mut residuals = Vec::with_capacity(multis.len());
    for x in multis {
        if x.size() < 2 {
            return Err(CnmaError::InvalidArgument(format!("'{}' is not a multicomponent treatment", x.label)));
        }
        let mut sum = 0.0;
        for &c in x.components() {
            let single = d_relative_to_y
                .keys()
                .chain(std::iter::once(y))
                .find(|t| t.components() == [c])
                .ok_or(CnmaError::UnknownComponent(c))?;
            sum += effect_z(single)?;
        }
        residuals.push(AnchorResidual {
            multi: x.label.clone(),
            size: x.size(),
            residual: (effect_z(x)? - sum).abs(),
            expected: (x.size() as f64 - 1.0) * d_y_z.abs(),
        });
    }
    let max_residual = residuals.iter().map(|r| r.residual).fold(0.0, f64::max);
    Ok(AnchorUniquenessReport {
        d_y_z,
        identity_holds: residuals.iter().all(|r| (r.residual - r.expected).abs() <= tol),
        z_is_also_anchor: max_residual <= tol,
        residuals,
        max_residual,
    })
}
