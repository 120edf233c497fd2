//! Adaptive blockwise random-walk Metropolis with parallel chains,
//! split-chain diagnostics and posterior summaries.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CnmaError, Result};
use crate::numerics::{chol, mean, quantile, sorted_copy, variance, Matrix, RngStream};

/// Unnormalized log density over a flat parameter vector.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Terms of the log density that involve the parameters tagged with
    /// `scope`. Must differ from `log_density` by a quantity that does not
    /// depend on those parameters.
    fn local_log_density(&self, x: &[f64], scope: usize) -> f64 {
        let _ = scope;
        self.log_density(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    pub target_block: f64,
    pub target_scalar: f64,
    pub adapt_window: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 2,
            burn_in: 2000,
            keep: 5000,
            thin: 1,
            target_block: 0.234,
            target_scalar: 0.44,
            adapt_window: 50,
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(CnmaError::InvalidArgument("at least two chains are required".into()));
        }
        if self.burn_in == 0 || self.keep == 0 || self.thin == 0 || self.adapt_window == 0 {
            return Err(CnmaError::InvalidArgument("burn-in, keep, thin and adapt window must be positive".into()));
        }
        for t in [self.target_block, self.target_scalar] {
            if !(t > 0.0 && t < 1.0) {
                return Err(CnmaError::InvalidArgument(format!("target acceptance {t} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    /// Gaussian random walk; multi-dimensional blocks learn their proposal
    /// covariance during burn-in.
    RandomWalk,
    /// Random walk on the log of a single positive parameter with an upper
    /// bound. Indices in `rescale` are multiplied by the same ratio in the
    /// same move.
    LogScale { upper: f64, rescale: Vec<usize> },
    /// Gaussian random walk on the block that also moves each coupled
    /// coordinate by a fixed linear combination of the block's step.
    Shear { coupled: Vec<(usize, Vec<f64>)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub indices: Vec<usize>,
    pub kind: BlockKind,
    /// `Some(s)` when only `local_log_density(x, s)` depends on this block.
    pub scope: Option<usize>,
    pub init_scale: f64,
}

impl Block {
    pub fn random_walk(indices: Vec<usize>, init_scale: f64) -> Self {
        Self {
            indices,
            kind: BlockKind::RandomWalk,
            scope: None,
            init_scale,
        }
    }

    pub fn log_scale(index: usize, upper: f64, rescale: Vec<usize>) -> Self {
        Self {
            indices: vec![index],
            kind: BlockKind::LogScale { upper, rescale },
            scope: None,
            init_scale: 0.3,
        }
    }

    pub fn shear(indices: Vec<usize>, init_scale: f64, coupled: Vec<(usize, Vec<f64>)>) -> Self {
        Self {
            indices,
            kind: BlockKind::Shear { coupled },
            scope: None,
            init_scale,
        }
    }

    fn learns_covariance(&self) -> bool {
        self.indices.len() > 1 && matches!(self.kind, BlockKind::RandomWalk)
    }

    pub fn with_scope(mut self, scope: usize) -> Self {
        self.scope = Some(scope);
        self
    }
}

/// Kept draws of all chains with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub names: Vec<String>,
    pub dim: usize,
    pub n_kept: usize,
    /// Per chain, row-major `n_kept × dim`.
    pub draws: Vec<Vec<f64>>,
    /// Per chain, per block acceptance rate over the kept phase.
    pub acceptance: Vec<Vec<f64>>,
    pub scales_after_burn_in: Vec<Vec<f64>>,
    pub scales_at_end: Vec<Vec<f64>>,
    /// NaN where the dimension never moved.
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

impl PosteriorSample {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn draw(&self, chain: usize, i: usize) -> &[f64] {
        &self.draws[chain][i * self.dim..(i + 1) * self.dim]
    }

    /// Every kept draw, chain by chain.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.draws.iter().flat_map(move |c| c.chunks_exact(self.dim))
    }

    pub fn chain_column(&self, chain: usize, d: usize) -> Vec<f64> {
        self.draws[chain].chunks_exact(self.dim).map(|r| r[d]).collect()
    }

    pub fn pooled(&self, d: usize) -> Vec<f64> {
        self.iter_draws().map(|r| r[d]).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Refreshes `rhat` and `ess` after the draws were edited in place.
    pub fn recompute_diagnostics(&mut self) {
        self.rhat.clear();
        self.ess.clear();
        for d in 0..self.dim {
            let chains: Vec<Vec<f64>> = (0..self.n_chains()).map(|c| self.chain_column(c, d)).collect();
            self.rhat.push(rhat(&chains).unwrap_or(f64::NAN));
            self.ess.push(ess(&chains));
        }
    }

    pub fn max_rhat(&self, dims: &[usize]) -> f64 {
        dims.iter().map(|&d| self.rhat[d]).fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { a } else { a.max(b) })
    }
}

struct BlockState {
    scale: f64,
    /// Lower Cholesky factor of the proposal covariance (unit-scale).
    l: Matrix,
    target: f64,
    accepted_window: usize,
    accepted_kept: usize,
    windows: usize,
    // running moments for covariance learning
    n: usize,
    mean: Vec<f64>,
    m2: Matrix,
    learned: bool,
}

impl BlockState {
    fn new(block: &Block, cfg: &McmcConfig) -> Self {
        let k = block.indices.len();
        Self {
            scale: block.init_scale,
            l: Matrix::identity(k, k),
            target: if k == 1 { cfg.target_scalar } else { cfg.target_block },
            accepted_window: 0,
            accepted_kept: 0,
            windows: 0,
            n: 0,
            mean: vec![0.0; k],
            m2: Matrix::zeros(k, k),
            learned: false,
        }
    }

    fn observe(&mut self, x: &[f64], indices: &[usize]) {
        self.n += 1;
        let k = indices.len();
        let delta: Vec<f64> = indices.iter().enumerate().map(|(j, &i)| x[i] - self.mean[j]).collect();
        for j in 0..k {
            self.mean[j] += delta[j] / self.n as f64;
        }
        for a in 0..k {
            let da = x[indices[a]] - self.mean[a];
            for b in 0..k {
                self.m2[(a, b)] += delta[b] * da;
            }
        }
    }

    fn learn_covariance(&mut self) {
        let k = self.mean.len();
        if self.n < 2 * k + 20 {
            return;
        }
        let mut cov = &self.m2 / (self.n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        let jitter = 1e-10 * (cov.trace() / k as f64).max(1e-12);
        for j in 0..k {
            cov[(j, j)] += jitter;
        }
        if let Ok(l) = chol(&cov) {
            self.l = l;
            if !self.learned {
                self.scale = 2.38 / (k as f64).sqrt();
                self.learned = true;
            }
        }
    }

    fn end_window(&mut self, window: usize) {
        self.windows += 1;
        let rate = self.accepted_window as f64 / window as f64;
        let step = 1.0 / (self.windows as f64).sqrt();
        let mut log_s = self.scale.ln() + step * (rate - self.target) * 2.0;
        if self.accepted_window == 0 {
            log_s -= 1.0;
        }
        self.scale = log_s.clamp(-40.0, 10.0).exp();
        self.accepted_window = 0;
    }
}

const COLLAPSE_RATIO: f64 = 1e-6;

struct ChainOutput {
    draws: Vec<f64>,
    acceptance: Vec<f64>,
    scales_after_burn_in: Vec<f64>,
    scales_at_end: Vec<f64>,
}

fn check(lp: f64) -> Result<f64> {
    if lp.is_nan() {
        Err(CnmaError::LogPosteriorNaN)
    } else {
        Ok(lp)
    }
}

fn block_density<T: LogDensity>(target: &T, x: &[f64], block: &Block) -> f64 {
    match block.scope {
        Some(s) => target.local_log_density(x, s),
        None => target.log_density(x),
    }
}

/// One Metropolis update of `block`; returns whether it was accepted.
fn update<T: LogDensity>(target: &T, x: &mut [f64], scratch: &mut Vec<f64>, block: &Block, st: &BlockState, rng: &mut ChaCha8Rng) -> Result<bool> {
    let current = check(block_density(target, x, block))?;
    scratch.clear();
    scratch.extend_from_slice(x);
    let log_jacobian = match &block.kind {
        BlockKind::RandomWalk | BlockKind::Shear { .. } => {
            let k = block.indices.len();
            let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            let mut steps = vec![0.0; k];
            for a in 0..k {
                for b in 0..=a {
                    steps[a] += st.l[(a, b)] * z[b];
                }
                steps[a] *= st.scale;
                scratch[block.indices[a]] += steps[a];
            }
            if let BlockKind::Shear { coupled } = &block.kind {
                for (j, w) in coupled {
                    scratch[*j] += w.iter().zip(&steps).map(|(w, s)| w * s).sum::<f64>();
                }
            }
            0.0
        }
        BlockKind::LogScale { upper, rescale } => {
            let i = block.indices[0];
            let z: f64 = rng.sample(StandardNormal);
            let log_ratio = st.scale * z;
            let proposed = x[i] * log_ratio.exp();
            if !(proposed > 0.0 && proposed < *upper) {
                return Ok(false);
            }
            scratch[i] = proposed;
            for &j in rescale {
                scratch[j] *= log_ratio.exp();
            }
            log_ratio * (1 + rescale.len()) as f64
        }
    };
    let proposed = check(block_density(target, scratch, block))?;
    let u: f64 = rng.random();
    let log_alpha = proposed - current + log_jacobian;
    if proposed.is_finite() && u.ln() < log_alpha {
        x.copy_from_slice(scratch);
        Ok(true)
    } else {
        Ok(false)
    }
}

fn run_chain<T: LogDensity>(target: &T, init: &[f64], blocks: &[Block], cfg: &McmcConfig, chain: usize) -> Result<ChainOutput> {
    let mut rng = RngStream::new(cfg.seed, 0).child(chain as u64).rng();
    let mut x = init.to_vec();
    if !target.log_density(&x).is_finite() {
        return Err(CnmaError::NonFiniteInit(chain));
    }
    let mut states: Vec<BlockState> = blocks.iter().map(|b| BlockState::new(b, cfg)).collect();
    let mut scratch = Vec::with_capacity(x.len());
    let learn_from = cfg.burn_in / 4;
    let use_from = cfg.burn_in / 2;
    for it in 0..cfg.burn_in {
        for (b, st) in blocks.iter().zip(states.iter_mut()) {
            if update(target, &mut x, &mut scratch, b, st, &mut rng)? {
                st.accepted_window += 1;
            }
            if it >= learn_from && b.learns_covariance() {
                st.observe(&x, &b.indices);
            }
        }
        if (it + 1) % cfg.adapt_window == 0 {
            for (bi, (b, st)) in blocks.iter().zip(states.iter_mut()).enumerate() {
                // an empty window only counts once adaptation has already
                // shrunk the scale by a factor of 1e6 without recovering
                if st.accepted_window == 0 && st.scale <= COLLAPSE_RATIO * b.init_scale {
                    return Err(CnmaError::ScaleCollapse(bi));
                }
                st.end_window(cfg.adapt_window);
                if it + 1 >= use_from && b.learns_covariance() {
                    st.learn_covariance();
                }
            }
        }
    }
    let scales_after_burn_in: Vec<f64> = states.iter().map(|s| s.scale).collect();
    let dim = x.len();
    let mut draws = Vec::with_capacity(cfg.keep * dim);
    let total = cfg.keep * cfg.thin;
    for it in 0..total {
        for (b, st) in blocks.iter().zip(states.iter_mut()) {
            if update(target, &mut x, &mut scratch, b, st, &mut rng)? {
                st.accepted_kept += 1;
            }
        }
        if (it + 1) % cfg.thin == 0 {
            draws.extend_from_slice(&x);
        }
    }
    Ok(ChainOutput {
        draws,
        acceptance: states.iter().map(|s| s.accepted_kept as f64 / total as f64).collect(),
        scales_after_burn_in,
        scales_at_end: states.iter().map(|s| s.scale).collect(),
    })
}

/// Runs one chain per initial state in parallel.
pub fn run_chains<T: LogDensity>(
    target: &T,
    names: Vec<String>,
    inits: &[Vec<f64>],
    blocks: &[Block],
    config: &McmcConfig,
) -> Result<PosteriorSample> {
    config.validate()?;
    let dim = target.dim();
    if names.len() != dim {
        return Err(CnmaError::DimensionMismatch(format!("{} names for {dim} parameters", names.len())));
    }
    if inits.len() != config.n_chains || inits.iter().any(|x| x.len() != dim) {
        return Err(CnmaError::DimensionMismatch(format!(
            "need {} initial states of length {dim}",
            config.n_chains
        )));
    }
    for b in blocks {
        if b.indices.is_empty() || b.indices.iter().any(|&i| i >= dim) {
            return Err(CnmaError::InvalidArgument("block indices must be non-empty and in range".into()));
        }
        if let BlockKind::LogScale { upper, rescale } = &b.kind {
            if b.indices.len() != 1 || !(*upper > 0.0) || rescale.iter().any(|&i| i >= dim) {
                return Err(CnmaError::InvalidArgument("log-scale block needs one index and a positive bound".into()));
            }
        }
        if let BlockKind::Shear { coupled } = &b.kind {
            if coupled.iter().any(|(j, w)| *j >= dim || w.len() != b.indices.len() || b.indices.contains(j)) {
                return Err(CnmaError::InvalidArgument("shear coupling must name other in-range coordinates".into()));
            }
        }
    }
    let outputs = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, &inits[c], blocks, config, c))
        .collect::<Result<Vec<_>>>()?;
    let mut sample = PosteriorSample {
        names,
        dim,
        n_kept: config.keep,
        draws: Vec::with_capacity(outputs.len()),
        acceptance: Vec::new(),
        scales_after_burn_in: Vec::new(),
        scales_at_end: Vec::new(),
        rhat: Vec::new(),
        ess: Vec::new(),
    };
    for o in outputs {
        sample.draws.push(o.draws);
        sample.acceptance.push(o.acceptance);
        sample.scales_after_burn_in.push(o.scales_after_burn_in);
        sample.scales_at_end.push(o.scales_at_end);
    }
    sample.recompute_diagnostics();
    Ok(sample)
}

/// Split-chain potential scale reduction factor.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(CnmaError::InvalidArgument("rhat needs at least two chains".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return Err(CnmaError::InvalidArgument("rhat needs at least four draws per chain".into()));
    }
    let half = n / 2;
    let parts: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[half..2 * half]]).collect();
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = mean(&parts.iter().map(|p| variance(p)).collect::<Vec<_>>());
    let b = half as f64 * variance(&means);
    if w <= 0.0 {
        return if b > 0.0 { Ok(f64::INFINITY) } else { Err(CnmaError::ZeroVariance) };
    }
    let h = half as f64;
    let var_plus = (h - 1.0) / h * w + b / h;
    Ok((var_plus / w).sqrt())
}

/// Effective sample size from chain-averaged autocorrelations, truncated
/// at the first negative pair sum.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return 0.0;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let vars: Vec<f64> = chains.iter().map(|c| variance(&c[..n])).collect();
    let w = mean(&vars);
    let b_over_n = if m > 1 { variance(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if var_plus <= 0.0 {
        return 0.0;
    }
    let acov = |lag: usize| -> f64 {
        let mut total = 0.0;
        for (c, mu) in chains.iter().zip(&means) {
            let mut s = 0.0;
            for t in 0..n - lag {
                s += (c[t] - mu) * (c[t + lag] - mu);
            }
            total += s / n as f64;
        }
        total / m as f64
    };
    let rho = |lag: usize| 1.0 - (w - acov(lag)) / var_plus;
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    let total = (m * n) as f64;
    (total / (1.0 + 2.0 * sum)).min(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn summarize_values(values: &[f64], level: f64) -> Result<Summary> {
    if values.is_empty() {
        return Err(CnmaError::EmptyInput("no draws to summarize".into()));
    }
    let sorted = sorted_copy(values);
    let tail = (1.0 - level) / 2.0;
    Ok(Summary {
        mean: mean(values),
        median: quantile(&sorted, 0.5)?,
        lower: quantile(&sorted, tail)?,
        upper: quantile(&sorted, 1.0 - tail)?,
    })
}

/// Pooled-chain summary of every dimension.
pub fn summarize(sample: &PosteriorSample, level: f64) -> Result<Vec<Summary>> {
    (0..sample.dim).map(|d| summarize_values(&sample.pooled(d), level)).collect()
}
