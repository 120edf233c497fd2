//! Design and covariance-structure matrices.
//!
//! `V` maps component effects to arm effects, `U` turns arm effects into
//! within-study contrasts, and `Sigma`/`Sigma_star` hold the compound
//! symmetric correlation of trial-level random effects.

use serde::{Deserialize, Serialize};

use crate::error::{CnmaError, Result};
use crate::network::{ContrastBlock, Network, Study, Treatment};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastMode {
    /// Every pair of arms, lexicographic by arm index.
    AllPairs,
    /// Every arm against one common baseline arm.
    Baseline,
}

/// Component incidence matrix for a list of arm treatments.
pub fn incidence<'a>(treatments: impl IntoIterator<Item = &'a Treatment>, n_components: usize) -> Result<Matrix> {
    let rows: Vec<&Treatment> = treatments.into_iter().collect();
    let mut v = Matrix::zeros(rows.len(), n_components);
    for (j, t) in rows.iter().enumerate() {
        for &c in t.components() {
            if c >= n_components {
                return Err(CnmaError::UnknownComponent(c));
            }
            v[(j, c)] = 1.0;
        }
    }
    Ok(v)
}

/// `V`: arms by components, 1 where the arm's treatment uses the component.
pub fn build_v(study: &Study, network: &Network) -> Result<Matrix> {
    incidence(study.treatments(), network.n_components())
}

/// Index of the single component of an anchor treatment.
pub fn anchor_component(anchor: &Treatment) -> Result<usize> {
    match anchor.components() {
        [c] => Ok(*c),
        _ => Err(CnmaError::MulticomponentAnchor(anchor.label.clone())),
    }
}

/// `V` with the anchor's column removed. An arm using only the anchor gets a
/// zero row.
pub fn build_v_anchored(study: &Study, network: &Network, anchor: &Treatment) -> Result<Matrix> {
    let drop = anchor_component(anchor)?;
    let c = network.n_components();
    if drop >= c {
        return Err(CnmaError::UnknownAnchor(anchor.label.clone()));
    }
    let v = build_v(study, network)?;
    Ok(v.remove_column(drop))
}

/// Contrast matrix over `a` arms.
///
/// `AllPairs` gives a(a−1)/2 rows: for arm pairs j < k in lexicographic
/// order, arm k minus arm j. `Baseline` gives a−1 rows, one per
/// non-baseline arm in arm order, each minus `baseline_arm`.
pub fn build_u(a: usize, mode: ContrastMode, baseline_arm: usize) -> Result<Matrix> {
    if a < 2 {
        return Err(CnmaError::InvalidArgument(format!("contrast matrix needs at least 2 arms, got {a}")));
    }
    match mode {
        ContrastMode::AllPairs => {
            let mut u = Matrix::zeros(a * (a - 1) / 2, a);
            let mut row = 0;
            for j in 0..a {
                for k in j + 1..a {
                    u[(row, j)] = -1.0;
                    u[(row, k)] = 1.0;
                    row += 1;
                }
            }
            Ok(u)
        }
        ContrastMode::Baseline => {
            if baseline_arm >= a {
                return Err(CnmaError::ArmOutOfRange {
                    index: baseline_arm,
                    arms: a,
                });
            }
            let mut u = Matrix::zeros(a - 1, a);
            for (row, k) in (0..a).filter(|&k| k != baseline_arm).enumerate() {
                u[(row, baseline_arm)] = -1.0;
                u[(row, k)] = 1.0;
            }
            Ok(u)
        }
    }
}

/// Compound symmetry on `n` dimensions: 1 on the diagonal, 1/2 elsewhere.
fn compound_symmetry(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.5 })
}

/// Random-effect correlation of the `a` arms of a trial. With
/// `reference_in_trial` the first row and column are zero: the reference
/// arm carries no heterogeneity.
pub fn build_sigma(a: usize, reference_in_trial: bool) -> Matrix {
    let mut s = compound_symmetry(a);
    if reference_in_trial && a > 0 {
        s.row_mut(0).fill(0.0);
        s.column_mut(0).fill(0.0);
    }
    s
}

/// Correlation of the a−1 contrast-level random effects.
pub fn build_sigma_star(a: usize) -> Matrix {
    compound_symmetry(a.saturating_sub(1))
}

/// Stacked `X = (U₁V₁; …; U_IV_I)` in study order, contrasting against arm 1
/// in `Baseline` mode.
pub fn stack_x(network: &Network, mode: ContrastMode) -> Result<Matrix> {
    let c = network.n_components();
    let mut parts = Vec::with_capacity(network.n_studies());
    for study in &network.studies {
        let u = build_u(study.n_arms(), mode, 0)?;
        parts.push(u * build_v(study, network)?);
    }
    Ok(vstack(&parts, c))
}

/// `U*ᵢVᵢ` for one contrast block.
pub fn block_design(block: &ContrastBlock, n_components: usize) -> Result<Matrix> {
    let u = build_u(block.n_arms(), ContrastMode::Baseline, block.baseline_arm)?;
    Ok(u * incidence(&block.treatments, n_components)?)
}

/// Stacked design for a list of contrast blocks.
pub fn stack_blocks(blocks: &[ContrastBlock], n_components: usize) -> Result<Matrix> {
    let parts = blocks
        .iter()
        .map(|b| block_design(b, n_components))
        .collect::<Result<Vec<_>>>()?;
    Ok(vstack(&parts, n_components))
}

/// Data covariance `S*ᵢ`: contrast variances on the diagonal, the baseline
/// arm's variance off the diagonal.
pub fn s_star(block: &ContrastBlock) -> Matrix {
    let m = block.n_contrasts();
    let vb = block.se_baseline * block.se_baseline;
    Matrix::from_fn(m, m, |i, j| if i == j { block.se[i] * block.se[i] } else { vb })
}

fn vstack(parts: &[Matrix], cols: usize) -> Matrix {
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut x = Matrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        x.view_mut((r, 0), (p.nrows(), cols)).copy_from(p);
        r += p.nrows();
    }
    x
}

/// Every per-study matrix for one network.
#[derive(Debug, Clone)]
pub struct StudyDesign {
    pub v: Matrix,
    pub v_anchored: Option<Matrix>,
    pub u_allpairs: Matrix,
    pub u_baseline: Matrix,
    pub sigma: Matrix,
    pub sigma_star: Matrix,
}

#[derive(Debug, Clone)]
pub struct DesignSet {
    pub studies: Vec<StudyDesign>,
    pub x: Matrix,
}

impl DesignSet {
    /// Builds all matrices with arm 1 as the contrast baseline. When an
    /// anchor is given, `v_anchored` is filled and `sigma` is zeroed in
    /// trials whose first arm is the anchor treatment.
    pub fn new(network: &Network, anchor: Option<&Treatment>, mode: ContrastMode) -> Result<Self> {
        if let Some(a) = anchor {
            anchor_component(a)?;
            if !network.contains_treatment(a) {
                return Err(CnmaError::UnknownAnchor(a.label.clone()));
            }
        }
        let mut studies = Vec::with_capacity(network.n_studies());
        for study in &network.studies {
            let a = study.n_arms();
            let v_anchored = anchor.map(|t| build_v_anchored(study, network, t)).transpose()?;
            let reference_in_trial = anchor.is_some_and(|t| study.arms[0].treatment == *t);
            studies.push(StudyDesign {
                v: build_v(study, network)?,
                v_anchored,
                u_allpairs: build_u(a, ContrastMode::AllPairs, 0)?,
                u_baseline: build_u(a, ContrastMode::Baseline, 0)?,
                sigma: build_sigma(a, reference_in_trial),
                sigma_star: build_sigma_star(a),
            });
        }
        Ok(Self {
            studies,
            x: stack_x(network, mode)?,
        })
    }
}
