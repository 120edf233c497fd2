//! Bayesian component models: anchored and unanchored arm-level binomial
//! models and the unanchored contrast-level normal model.
//!
//! Arm-level random effects use `ε₁ = 0`, `ε₂..ₐ ~ N(0, σ²Σ*)`. In the
//! anchored model the anchor arm is moved to position 1 first.
//!
//! The sampler works on `βᵢ = αᵢ + mean_j(ηᵢⱼ + εᵢⱼ)` instead of `αᵢ`, where
//! `η = Vd`. The map is a shear with unit Jacobian, so the posterior is
//! unchanged, but `d` then moves without dragging every baseline along.
//! Stored draws are converted back to `αᵢ`.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use rand::Rng;

use crate::design::{anchor_component, block_design, build_sigma_star, s_star};
use crate::error::{CnmaError, Result};
use crate::freq::EffectsModel;
use crate::mcmc::{run_chains, Block, LogDensity, McmcConfig, PosteriorSample};
use crate::network::{ContrastBlock, Network, Treatment};
use crate::numerics::{chol, mean, mvn_logpdf_chol, normal_logpdf, Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    AnchoredArm,
    UnanchoredArm,
    UnanchoredContrast,
}

impl ModelKind {
    pub fn is_arm_level(self) -> bool {
        !matches!(self, ModelKind::UnanchoredContrast)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub d_var: f64,
    pub alpha_var: f64,
    pub sigma_upper: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            d_var: 1000.0,
            alpha_var: 1000.0,
            sigma_upper: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub effects: EffectsModel,
    pub anchor: Option<Treatment>,
    pub priors: Priors,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, effects: EffectsModel, anchor: Option<Treatment>) -> Self {
        Self {
            kind,
            effects,
            anchor,
            priors: Priors::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.anchor) {
            (ModelKind::AnchoredArm, None) => {
                return Err(CnmaError::InvalidArgument("the anchored model needs an anchor treatment".into()))
            }
            (ModelKind::AnchoredArm, Some(a)) => {
                anchor_component(a)?;
            }
            (_, Some(_)) => {
                return Err(CnmaError::InvalidArgument("only the anchored model takes an anchor".into()));
            }
            _ => {}
        }
        let p = &self.priors;
        if !(p.sigma_upper > 0.0 && p.d_var > 0.0 && p.alpha_var > 0.0) {
            return Err(CnmaError::InvalidArgument("prior scales must be positive".into()));
        }
        Ok(())
    }

    fn random(&self) -> bool {
        self.effects == EffectsModel::Random
    }
}

/// Positions of each parameter group in a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// Component index of each entry of `d`.
    pub d_components: Vec<usize>,
    pub n_components: usize,
    pub sigma: Option<usize>,
    /// Baseline position per study (empty for the contrast model).
    pub alpha: Vec<usize>,
    /// Latent positions per study, arms 2..a in model arm order.
    pub eps: Vec<Vec<usize>>,
    pub dim: usize,
}

impl Layout {
    fn new(n_components: usize, d_components: Vec<usize>, random: bool, arm_sizes: Option<&[usize]>) -> Self {
        let mut next = d_components.len();
        let sigma = random.then(|| {
            next += 1;
            next - 1
        });
        let mut alpha = Vec::new();
        let mut eps = Vec::new();
        if let Some(sizes) = arm_sizes {
            for _ in sizes {
                alpha.push(next);
                next += 1;
            }
            for &a in sizes {
                if random {
                    eps.push((next..next + a - 1).collect());
                    next += a - 1;
                } else {
                    eps.push(Vec::new());
                }
            }
        }
        Self {
            d_components,
            n_components,
            sigma,
            alpha,
            eps,
            dim: next,
        }
    }

    /// Component-effect vector of full length with zeros for components
    /// not estimated (the anchor).
    pub fn full_d(&self, x: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.n_components];
        for (k, &c) in self.d_components.iter().enumerate() {
            d[c] = x[k];
        }
        d
    }

    pub fn all_eps(&self) -> Vec<usize> {
        self.eps.iter().flatten().copied().collect()
    }
}

/// Parameters of an arm-level model in natural form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArmParams {
    /// `c − 1` entries (anchor excluded) for the anchored model, `c` otherwise.
    pub d: Vec<f64>,
    pub sigma: Option<f64>,
    pub alpha: Vec<f64>,
    /// Per study, arms 2..a (model arm order); empty under fixed effects.
    pub eps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContrastParams {
    pub d: Vec<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone)]
struct ArmStudy {
    /// `d` positions summed into each arm's linear predictor.
    terms: Vec<Vec<usize>>,
    r: Vec<f64>,
    n: Vec<f64>,
    log_choose: f64,
    /// Original arm index of each model arm.
    order: Vec<usize>,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// log N(ε; 0, σ²Σ*) with Σ* = ½(I + 11ᵀ), using its closed-form inverse.
fn latent_logpdf(eps: impl ExactSizeIterator<Item = f64>, sigma: f64) -> f64 {
    let m = eps.len();
    if m == 0 {
        return 0.0;
    }
    let mf = m as f64;
    let (mut ss, mut s) = (0.0, 0.0);
    for e in eps {
        ss += e * e;
        s += e;
    }
    let quad = 2.0 * (ss - s * s / (mf + 1.0));
    let log_det = mf * 0.5f64.ln() + (mf + 1.0).ln() + 2.0 * mf * sigma.ln();
    -0.5 * (mf * std::f64::consts::TAU.ln() + log_det + quad / (sigma * sigma))
}

/// Arm-level binomial model, anchored or not.
#[derive(Debug, Clone)]
pub struct ArmModel {
    pub layout: Layout,
    studies: Vec<ArmStudy>,
    priors: Priors,
    random: bool,
}

impl ArmModel {
    pub fn new(spec: &ModelSpec, network: &Network) -> Result<Self> {
        spec.validate()?;
        if !spec.kind.is_arm_level() {
            return Err(CnmaError::ModelMismatch("arm-level model requested for a contrast-level kind".into()));
        }
        let c = network.n_components();
        let anchor = match (&spec.kind, &spec.anchor) {
            (ModelKind::AnchoredArm, Some(a)) => {
                if !network.contains_treatment(a) {
                    return Err(CnmaError::UnknownAnchor(a.label.clone()));
                }
                Some((a, anchor_component(a)?))
            }
            _ => None,
        };
        let d_components: Vec<usize> = (0..c).filter(|&k| anchor.is_none_or(|(_, ac)| k != ac)).collect();
        let mut d_pos = vec![None; c];
        for (k, &comp) in d_components.iter().enumerate() {
            d_pos[comp] = Some(k);
        }
        let mut studies = Vec::with_capacity(network.n_studies());
        for study in &network.studies {
            let a = study.n_arms();
            let first = anchor.and_then(|(t, _)| study.arm_of(t)).unwrap_or(0);
            let mut order = vec![first];
            order.extend((0..a).filter(|&j| j != first));
            let mut s = ArmStudy {
                terms: Vec::with_capacity(a),
                r: Vec::with_capacity(a),
                n: Vec::with_capacity(a),
                log_choose: 0.0,
                order,
            };
            for &j in &s.order {
                let arm = &study.arms[j];
                s.terms.push(arm.treatment.components().iter().filter_map(|&k| d_pos.get(k).copied().flatten()).collect());
                s.r.push(arm.events as f64);
                s.n.push(arm.total as f64);
                s.log_choose += ln_binomial(arm.total, arm.events);
            }
            studies.push(s);
        }
        let sizes: Vec<usize> = network.studies.iter().map(|s| s.n_arms()).collect();
        Ok(Self {
            layout: Layout::new(c, d_components, spec.random(), Some(&sizes)),
            studies,
            priors: spec.priors,
            random: spec.random(),
        })
    }

    /// Latent adjustments that keep every arm logit fixed when `d` moves:
    /// the step of arm `j` relative to the first arm is taken out of its latent.
    fn shear_coupling(&self) -> Vec<(usize, Vec<f64>)> {
        let k = self.layout.d_components.len();
        let mut coupled = Vec::new();
        if !self.random {
            return coupled;
        }
        for (i, s) in self.studies.iter().enumerate() {
            for j in 1..s.terms.len() {
                let mut w = vec![0.0; k];
                for &t in &s.terms[j] {
                    w[t] -= 1.0;
                }
                for &t in &s.terms[0] {
                    w[t] += 1.0;
                }
                if w.iter().any(|&v| v != 0.0) {
                    coupled.push((self.layout.eps[i][j - 1], w));
                }
            }
        }
        coupled
    }

    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    #[inline]
    fn eta(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let s = &self.studies[i];
        let mut v = s.terms[j].iter().map(|&k| x[k]).sum::<f64>();
        if j > 0 && self.random {
            v += x[self.layout.eps[i][j - 1]];
        }
        v
    }

    /// Baseline `αᵢ` from sampling coordinates.
    fn alpha_from_beta(&self, x: &[f64], i: usize) -> f64 {
        let a = self.studies[i].r.len();
        let m = (0..a).map(|j| self.eta(x, i, j)).sum::<f64>() / a as f64;
        x[self.layout.alpha[i]] - m
    }

    fn alpha(&self, x: &[f64], i: usize, natural: bool) -> f64 {
        if natural {
            x[self.layout.alpha[i]]
        } else {
            self.alpha_from_beta(x, i)
        }
    }

    /// Binomial log-likelihood of study `i`, `None` for a non-finite logit.
    fn study_loglik(&self, x: &[f64], i: usize, natural: bool) -> Option<f64> {
        let s = &self.studies[i];
        let alpha = self.alpha(x, i, natural);
        let mut ll = s.log_choose;
        for j in 0..s.r.len() {
            let logit = alpha + self.eta(x, i, j);
            if !logit.is_finite() {
                return None;
            }
            ll += s.r[j] * logit - s.n[j] * softplus(logit);
        }
        Some(ll)
    }

    fn study_terms(&self, x: &[f64], i: usize, natural: bool) -> Option<f64> {
        let mut lp = self.study_loglik(x, i, natural)?;
        lp += normal_logpdf(self.alpha(x, i, natural), 0.0, self.priors.alpha_var);
        if let Some(si) = self.layout.sigma {
            lp += latent_logpdf(self.layout.eps[i].iter().map(|&k| x[k]), x[si]);
        }
        Some(lp)
    }

    fn global_prior(&self, x: &[f64]) -> f64 {
        let mut lp: f64 = (0..self.layout.d_components.len()).map(|k| normal_logpdf(x[k], 0.0, self.priors.d_var)).sum();
        if let Some(si) = self.layout.sigma {
            let s = x[si];
            if !(s > 0.0 && s < self.priors.sigma_upper) {
                return f64::NEG_INFINITY;
            }
            lp -= self.priors.sigma_upper.ln();
        }
        lp
    }

    fn log_posterior_in(&self, x: &[f64], natural: bool) -> Result<f64> {
        if let Some(si) = self.layout.sigma {
            if !(x[si] > 0.0 && x[si] < self.priors.sigma_upper) {
                return Ok(f64::NEG_INFINITY);
            }
        }
        let mut lp = self.global_prior(x);
        for i in 0..self.studies.len() {
            lp += self.study_terms(x, i, natural).ok_or(CnmaError::NonFiniteLogit)?;
        }
        Ok(lp)
    }

    /// Log posterior (up to the evidence) at natural-form parameters.
    pub fn log_posterior(&self, params: &ArmParams) -> Result<f64> {
        self.log_posterior_in(&self.pack(params)?, true)
    }

    pub fn pack(&self, p: &ArmParams) -> Result<Vec<f64>> {
        let l = &self.layout;
        if p.d.len() != l.d_components.len() || p.alpha.len() != self.studies.len() || p.sigma.is_some() != l.sigma.is_some() {
            return Err(CnmaError::DimensionMismatch("parameters do not match the model layout".into()));
        }
        let mut x = vec![0.0; l.dim];
        x[..p.d.len()].copy_from_slice(&p.d);
        if let (Some(i), Some(s)) = (l.sigma, p.sigma) {
            x[i] = s;
        }
        for (i, &a) in p.alpha.iter().enumerate() {
            x[l.alpha[i]] = a;
        }
        if self.random {
            if p.eps.len() != self.studies.len() {
                return Err(CnmaError::DimensionMismatch("one latent vector per study is required".into()));
            }
            for (pos, e) in l.eps.iter().zip(&p.eps) {
                if pos.len() != e.len() {
                    return Err(CnmaError::DimensionMismatch("latent vector length must be arms − 1".into()));
                }
                for (&k, &v) in pos.iter().zip(e) {
                    x[k] = v;
                }
            }
        }
        Ok(x)
    }

    /// Arm logits of study `i` at natural-form parameters, in the study's
    /// original arm order.
    pub fn logits(&self, params: &ArmParams, i: usize) -> Result<Vec<f64>> {
        let x = self.pack(params)?;
        let s = &self.studies[i];
        let mut out = vec![0.0; s.r.len()];
        for j in 0..s.r.len() {
            out[s.order[j]] = x[self.layout.alpha[i]] + self.eta(&x, i, j);
        }
        Ok(out)
    }

    /// −2 × binomial log-likelihood at a natural-form parameter vector.
    pub fn deviance(&self, x: &[f64]) -> Result<f64> {
        let mut ll = 0.0;
        for i in 0..self.studies.len() {
            ll += self.study_loglik(x, i, true).ok_or(CnmaError::NonFiniteLogit)?;
        }
        Ok(-2.0 * ll)
    }

    fn to_natural(&self, x: &mut [f64]) {
        let alphas: Vec<f64> = (0..self.studies.len()).map(|i| self.alpha_from_beta(x, i)).collect();
        for (i, a) in alphas.into_iter().enumerate() {
            x[self.layout.alpha[i]] = a;
        }
    }
}

impl LogDensity for ArmModel {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_posterior_in(x, false).unwrap_or(f64::NEG_INFINITY)
    }

    fn local_log_density(&self, x: &[f64], scope: usize) -> f64 {
        self.study_terms(x, scope, false).unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone)]
struct ContrastStudy {
    x: Matrix,
    y: Vec<f64>,
    s: Matrix,
    sigma_star: Matrix,
}

/// Contrast-level normal model with the study random effects integrated out.
#[derive(Debug, Clone)]
pub struct ContrastModel {
    pub layout: Layout,
    studies: Vec<ContrastStudy>,
    priors: Priors,
}

impl ContrastModel {
    pub fn new(spec: &ModelSpec, blocks: &[ContrastBlock], network: &Network) -> Result<Self> {
        spec.validate()?;
        if spec.kind != ModelKind::UnanchoredContrast {
            return Err(CnmaError::ModelMismatch("contrast data given to an arm-level model".into()));
        }
        if blocks.is_empty() {
            return Err(CnmaError::EmptyNetwork);
        }
        let c = network.n_components();
        let studies = blocks
            .iter()
            .map(|b| {
                let s = s_star(b);
                chol(&s)?;
                Ok(ContrastStudy {
                    x: block_design(b, c)?,
                    y: b.y_star.clone(),
                    s,
                    sigma_star: build_sigma_star(b.n_arms()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout: Layout::new(c, (0..c).collect(), spec.random(), None),
            studies,
            priors: spec.priors,
        })
    }

    fn log_posterior_in(&self, x: &[f64]) -> Result<f64> {
        let c = self.layout.n_components;
        let d = &x[..c];
        let mut lp: f64 = d.iter().map(|&v| normal_logpdf(v, 0.0, self.priors.d_var)).sum();
        let s2 = match self.layout.sigma {
            Some(si) => {
                let s = x[si];
                if !(s > 0.0 && s < self.priors.sigma_upper) {
                    return Ok(f64::NEG_INFINITY);
                }
                lp -= self.priors.sigma_upper.ln();
                s * s
            }
            None => 0.0,
        };
        for st in &self.studies {
            let m = st.y.len();
            let mean: Vec<f64> = (0..m).map(|r| (0..c).map(|k| st.x[(r, k)] * d[k]).sum()).collect();
            if m == 1 {
                lp += normal_logpdf(st.y[0], mean[0], st.s[(0, 0)] + s2);
            } else {
                let l = chol(&(&st.s + &st.sigma_star * s2))?;
                lp += mvn_logpdf_chol(&st.y, &mean, &l)?;
            }
        }
        Ok(lp)
    }

    pub fn log_posterior(&self, params: &ContrastParams) -> Result<f64> {
        let c = self.layout.n_components;
        if params.d.len() != c || params.sigma.is_some() != self.layout.sigma.is_some() {
            return Err(CnmaError::DimensionMismatch("parameters do not match the model layout".into()));
        }
        let mut x = params.d.clone();
        x.extend(params.sigma);
        self.log_posterior_in(&x)
    }
}

impl LogDensity for ContrastModel {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_posterior_in(x).unwrap_or(f64::NEG_INFINITY)
    }
}

pub fn logpost_anchored_arm(params: &ArmParams, spec: &ModelSpec, network: &Network) -> Result<f64> {
    if spec.kind != ModelKind::AnchoredArm {
        return Err(CnmaError::ModelMismatch("expected the anchored arm-level model".into()));
    }
    ArmModel::new(spec, network)?.log_posterior(params)
}

pub fn logpost_unanchored_arm(params: &ArmParams, spec: &ModelSpec, network: &Network) -> Result<f64> {
    if spec.kind != ModelKind::UnanchoredArm {
        return Err(CnmaError::ModelMismatch("expected the unanchored arm-level model".into()));
    }
    ArmModel::new(spec, network)?.log_posterior(params)
}

pub fn logpost_unanchored_contrast(params: &ContrastParams, blocks: &[ContrastBlock], spec: &ModelSpec, network: &Network) -> Result<f64> {
    ContrastModel::new(spec, blocks, network)?.log_posterior(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub deviance_bar: f64,
    pub deviance_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
}

#[derive(Debug, Clone)]
pub struct BayesFit {
    pub spec: ModelSpec,
    /// Draws in natural form (`αᵢ`, not the centred sampling coordinate).
    pub sample: PosteriorSample,
    pub layout: Layout,
    pub dic: Option<Dic>,
}

impl BayesFit {
    /// Full-length component-effect vector of every pooled draw.
    pub fn component_draws(&self) -> Vec<Vec<f64>> {
        self.sample.iter_draws().map(|x| self.layout.full_d(x)).collect()
    }

    pub fn sigma_draws(&self) -> Option<Vec<f64>> {
        self.layout.sigma.map(|i| self.sample.pooled(i))
    }

    /// Positions of `d` and `σ`.
    pub fn monitored(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.layout.d_components.len()).collect();
        v.extend(self.layout.sigma);
        v
    }

    pub fn max_rhat(&self) -> f64 {
        self.sample.max_rhat(&self.monitored())
    }
}

fn param_names(layout: &Layout, network: &Network) -> Vec<String> {
    let mut names = vec![String::new(); layout.dim];
    for (k, &c) in layout.d_components.iter().enumerate() {
        names[k] = format!("d[{}]", network.components.name(c).unwrap_or("?"));
    }
    if let Some(i) = layout.sigma {
        names[i] = "sigma".into();
    }
    for (i, &p) in layout.alpha.iter().enumerate() {
        names[p] = format!("alpha[{}]", network.studies[i].id);
    }
    for (i, e) in layout.eps.iter().enumerate() {
        for (j, &p) in e.iter().enumerate() {
            names[p] = format!("eps[{}][{}]", network.studies[i].id, j + 2);
        }
    }
    names
}

/// Empirical log-odds with 0.5 added to both cells.
fn empirical_logit(r: f64, n: f64) -> f64 {
    ((r + 0.5) / (n - r + 0.5)).ln()
}

/// Per-chain starting points: `d` near zero, baselines at the study's mean
/// empirical logit, `σ` near the middle of its prior range, latents at 0.
fn initial_states(layout: &Layout, network: &Network, priors: &Priors, cfg: &McmcConfig) -> Vec<Vec<f64>> {
    (0..cfg.n_chains)
        .map(|chain| {
            let mut rng = RngStream::new(cfg.seed, 1).child(chain as u64).rng();
            let mut x = vec![0.0; layout.dim];
            for v in x.iter_mut().take(layout.d_components.len()) {
                *v = rng.random_range(-0.5..0.5);
            }
            if let Some(i) = layout.sigma {
                let u = priors.sigma_upper;
                let jitter = 0.25 * u / 12f64.sqrt();
                x[i] = u / 2.0 + rng.random_range(-jitter..jitter);
            }
            for (i, &p) in layout.alpha.iter().enumerate() {
                let study = &network.studies[i];
                let logits: Vec<f64> = study.arms.iter().map(|a| empirical_logit(a.events as f64, a.total as f64)).collect();
                x[p] = mean(&logits);
            }
            x
        })
        .collect()
}

fn sampler_blocks(layout: &Layout, priors: &Priors, arm_level: bool, shear: Vec<(usize, Vec<f64>)>) -> Vec<Block> {
    let d: Vec<usize> = (0..layout.d_components.len()).collect();
    let mut blocks = vec![Block::random_walk(d.clone(), 0.05)];
    if !shear.is_empty() {
        blocks.push(Block::shear(d, 0.05, shear));
    }
    if let Some(si) = layout.sigma {
        blocks.push(Block::log_scale(si, priors.sigma_upper, Vec::new()));
        if arm_level {
            blocks.push(Block::log_scale(si, priors.sigma_upper, layout.all_eps()));
        }
    }
    for (i, &p) in layout.alpha.iter().enumerate() {
        blocks.push(Block::random_walk(vec![p], 0.1).with_scope(i));
        if !layout.eps[i].is_empty() {
            blocks.push(Block::random_walk(layout.eps[i].clone(), 0.1).with_scope(i));
        }
    }
    blocks
}

/// Samples the posterior of `spec` on `network`. The contrast-level model
/// reads `blocks`; arm-level models read the network's counts.
pub fn fit(spec: &ModelSpec, network: &Network, blocks: Option<&[ContrastBlock]>, cfg: &McmcConfig) -> Result<BayesFit> {
    spec.validate()?;
    if network.studies.is_empty() {
        return Err(CnmaError::EmptyNetwork);
    }
    network.require_connected()?;
    match spec.kind {
        ModelKind::UnanchoredContrast => {
            let blocks = blocks.ok_or_else(|| CnmaError::ModelMismatch("the contrast-level model needs contrast data".into()))?;
            let model = ContrastModel::new(spec, blocks, network)?;
            let layout = model.layout.clone();
            let inits = initial_states(&layout, network, &spec.priors, cfg);
            let sample = run_chains(&model, param_names(&layout, network), &inits, &sampler_blocks(&layout, &spec.priors, false, Vec::new()), cfg)?;
            Ok(BayesFit {
                spec: spec.clone(),
                sample,
                layout,
                dic: None,
            })
        }
        _ => {
            let model = ArmModel::new(spec, network)?;
            let layout = model.layout.clone();
            let inits = initial_states(&layout, network, &spec.priors, cfg);
            let mut sample = run_chains(&model, param_names(&layout, network), &inits, &sampler_blocks(&layout, &spec.priors, true, model.shear_coupling()), cfg)?;
            let dim = sample.dim;
            for chain in &mut sample.draws {
                for row in chain.chunks_exact_mut(dim) {
                    model.to_natural(row);
                }
            }
            sample.recompute_diagnostics();
            Ok(BayesFit {
                spec: spec.clone(),
                sample,
                layout,
                dic: None,
            })
        }
    }
}

/// Deviance information criterion conditional on the latent effects.
pub fn dic(fit: &BayesFit, network: &Network) -> Result<Dic> {
    if !fit.spec.kind.is_arm_level() {
        return Err(CnmaError::ModelMismatch("DIC is defined for arm-level models only".into()));
    }
    let model = ArmModel::new(&fit.spec, network)?;
    if model.layout != fit.layout {
        return Err(CnmaError::ModelMismatch("fit layout does not match the network".into()));
    }
    let dim = fit.sample.dim;
    let mut means = vec![0.0; dim];
    let mut total = 0.0;
    let mut count = 0usize;
    for x in fit.sample.iter_draws() {
        total += model.deviance(x)?;
        for (m, v) in means.iter_mut().zip(x) {
            *m += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(CnmaError::EmptyInput("no posterior draws".into()));
    }
    for m in &mut means {
        *m /= count as f64;
    }
    let deviance_bar = total / count as f64;
    let deviance_at_mean = model.deviance(&means)?;
    let p_d = deviance_bar - deviance_at_mean;
    Ok(Dic {
        deviance_bar,
        deviance_at_mean,
        p_d,
        dic: deviance_bar + p_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{arm_to_contrast, build_network, parse_treatment, ArmRecord, ComponentDict, Study, ZeroCellPolicy};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn network(names: &[&str], studies: &[(&str, &[(&str, u64, u64)])]) -> Network {
        let mut dict = ComponentDict::from_names(names.iter().copied());
        let studies = studies
            .iter()
            .map(|(id, arms)| {
                let arms = arms.iter().map(|(t, r, n)| ArmRecord::new(parse_treatment(t, "+", &mut dict).unwrap(), *r, *n)).collect();
                Study::new(*id, arms).unwrap()
            })
            .collect();
        build_network(dict, studies).unwrap()
    }

    fn placebo_a(r: (u64, u64), n: (u64, u64)) -> Network {
        network(&["Placebo", "A"], &[("s1", &[("Placebo", r.0, n.0), ("A", r.1, n.1)])])
    }

    fn anchored(net: &Network, label: &str, effects: EffectsModel) -> ModelSpec {
        ModelSpec::new(ModelKind::AnchoredArm, effects, Some(net.treatment(label, "+").unwrap()))
    }

    fn quick() -> McmcConfig {
        McmcConfig {
            burn_in: 1000,
            keep: 2000,
            seed: 3,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn identity_case_likelihood() {
        let net = placebo_a((7, 12), (20, 30));
        let spec = anchored(&net, "Placebo", EffectsModel::Fixed);
        let p = ArmParams {
            d: vec![0.0],
            alpha: vec![0.0],
            ..Default::default()
        };
        let lp = logpost_anchored_arm(&p, &spec, &net).unwrap();
        let half = 0.5f64.ln();
        let ll = ln_binomial(20, 7) + 20.0 * half + ln_binomial(30, 12) + 30.0 * half;
        let priors = 2.0 * normal_logpdf(0.0, 0.0, 1000.0);
        assert_abs_diff_eq!(lp, ll + priors, epsilon = 1e-10);
    }

    #[test]
    fn anchor_choice_sets_arm_logits() {
        let net = placebo_a((7, 12), (20, 30));
        let p = ArmParams {
            d: vec![0.7],
            alpha: vec![-0.4],
            ..Default::default()
        };
        let m = ArmModel::new(&anchored(&net, "Placebo", EffectsModel::Fixed), &net).unwrap();
        let l = m.logits(&p, 0).unwrap();
        assert_abs_diff_eq!(l[0], -0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], -0.4 + 0.7, epsilon = 1e-15);
        let m = ArmModel::new(&anchored(&net, "A", EffectsModel::Fixed), &net).unwrap();
        assert_eq!(m.layout.d_components, vec![0]);
        let l = m.logits(&p, 0).unwrap();
        assert_abs_diff_eq!(l[0], -0.4 + 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], -0.4, epsilon = 1e-15);
    }

    #[test]
    fn zero_event_trials_are_finite() {
        let net = placebo_a((0, 0), (20, 30));
        let spec = anchored(&net, "Placebo", EffectsModel::Random);
        let p = ArmParams {
            d: vec![3.0],
            sigma: Some(0.5),
            alpha: vec![-2.0],
            eps: vec![vec![0.3]],
        };
        assert!(logpost_anchored_arm(&p, &spec, &net).unwrap().is_finite());
        let bad = ArmParams { d: vec![f64::INFINITY], ..p };
        assert!(matches!(logpost_anchored_arm(&bad, &spec, &net), Err(CnmaError::NonFiniteLogit)));
    }

    #[test]
    fn level_shift_leaves_likelihood_unchanged() {
        let net = network(
            &["P", "A", "B"],
            &[("s1", &[("P", 5, 40), ("A", 9, 40)]), ("s2", &[("A", 4, 30), ("B", 8, 30), ("P", 6, 30)])],
        );
        let m = ArmModel::new(&ModelSpec::new(ModelKind::UnanchoredArm, EffectsModel::Fixed, None), &net).unwrap();
        let base = ArmParams {
            d: vec![0.1, 0.5, -0.2],
            alpha: vec![-1.0, -0.5],
            ..Default::default()
        };
        let kappa = 0.37;
        let shifted = ArmParams {
            d: base.d.iter().map(|v| v + kappa).collect(),
            alpha: base.alpha.iter().map(|v| v - kappa).collect(),
            ..Default::default()
        };
        let dev = |p: &ArmParams| m.deviance(&m.pack(p).unwrap()).unwrap();
        assert_abs_diff_eq!(dev(&base), dev(&shifted), epsilon = 1e-10);
    }

    #[test]
    fn shear_coupling_preserves_arm_likelihood() {
        let net = network(
            &["P", "A", "B"],
            &[("s1", &[("P", 5, 40), ("A", 9, 40)]), ("s2", &[("A", 4, 30), ("A+B", 8, 30), ("P", 6, 30)])],
        );
        for spec in [
            ModelSpec::new(ModelKind::UnanchoredArm, EffectsModel::Random, None),
            anchored(&net, "P", EffectsModel::Random),
        ] {
            let m = ArmModel::new(&spec, &net).unwrap();
            let mut x: Vec<f64> = (0..m.layout.dim).map(|i| 0.1 * i as f64 - 0.4).collect();
            x[m.layout.sigma.unwrap()] = 0.7;
            let delta: Vec<f64> = (0..m.layout.d_components.len()).map(|k| 0.3 - 0.25 * k as f64).collect();
            let mut moved = x.clone();
            for (k, v) in delta.iter().enumerate() {
                moved[k] += v;
            }
            for (j, w) in m.shear_coupling() {
                moved[j] += w.iter().zip(&delta).map(|(w, d)| w * d).sum::<f64>();
            }
            for i in 0..m.n_studies() {
                let before = m.study_loglik(&x, i, false).unwrap();
                let after = m.study_loglik(&moved, i, false).unwrap();
                assert_abs_diff_eq!(before, after, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn contrast_marginal_covariances() {
        let mut dict = ComponentDict::from_names(["P", "A", "B"]);
        let (p, a, b) = (
            parse_treatment("P", "+", &mut dict).unwrap(),
            parse_treatment("A", "+", &mut dict).unwrap(),
            parse_treatment("B", "+", &mut dict).unwrap(),
        );
        let net = build_network(
            dict,
            vec![Study::new("s", vec![ArmRecord::new(p.clone(), 3, 30), ArmRecord::new(a.clone(), 5, 30), ArmRecord::new(b.clone(), 7, 30)]).unwrap()],
        )
        .unwrap();
        let spec = ModelSpec::new(ModelKind::UnanchoredContrast, EffectsModel::Random, None);
        let d = vec![0.0, 0.3, -0.1];
        let sigma = 0.6;
        let prior = d.iter().map(|&v| normal_logpdf(v, 0.0, 1000.0)).sum::<f64>() - 2f64.ln();

        let two = ContrastBlock::new("s", 0, vec![0.5], vec![0.4], 0.0, vec![p.clone(), a.clone()]).unwrap();
        let lp = logpost_unanchored_contrast(&ContrastParams { d: d.clone(), sigma: Some(sigma) }, &[two], &spec, &net).unwrap();
        assert_abs_diff_eq!(lp - prior, normal_logpdf(0.5, 0.3, 0.16 + 0.36), epsilon = 1e-12);

        let sb = 0.2;
        let three = ContrastBlock::new("s", 0, vec![0.5, 0.1], vec![0.4, 0.45], sb, vec![p, a, b]).unwrap();
        let lp = logpost_unanchored_contrast(&ContrastParams { d: d.clone(), sigma: Some(sigma) }, &[three.clone()], &spec, &net).unwrap();
        let cov = Matrix::from_row_slice(2, 2, &[0.16 + 0.36, sb * sb + 0.18, sb * sb + 0.18, 0.2025 + 0.36]);
        let expected = crate::numerics::mvn_logpdf(&[0.5, 0.1], &[0.3, -0.1], &cov).unwrap();
        assert_abs_diff_eq!(lp - prior, expected, epsilon = 1e-12);

        // σ → 0 reduces to the fixed-effect likelihood
        let fixed = ModelSpec::new(ModelKind::UnanchoredContrast, EffectsModel::Fixed, None);
        let lf = logpost_unanchored_contrast(&ContrastParams { d: d.clone(), sigma: None }, &[three.clone()], &fixed, &net).unwrap();
        let lr = logpost_unanchored_contrast(&ContrastParams { d, sigma: Some(1e-9) }, &[three], &spec, &net).unwrap();
        assert_abs_diff_eq!(lf, lr + 2f64.ln(), epsilon = 1e-8);
    }

    #[test]
    fn latent_density_matches_dense_form() {
        for eps in [vec![0.3], vec![0.3, -0.2], vec![0.1, 0.5, -0.4]] {
            let m = eps.len();
            let cov = build_sigma_star(m + 1) * 0.49;
            let dense = crate::numerics::mvn_logpdf(&eps, &vec![0.0; m], &cov).unwrap();
            assert_abs_diff_eq!(latent_logpdf(eps.iter().copied(), 0.7), dense, epsilon = 1e-12);
        }
    }

    #[test]
    fn one_study_posterior_matches_log_odds_ratio() {
        let net = placebo_a((300, 450), (1000, 1000));
        let spec = ModelSpec::new(ModelKind::UnanchoredArm, EffectsModel::Fixed, None);
        let f = fit(&spec, &net, None, &quick()).unwrap();
        let draws = f.component_draws();
        let diff = mean(&draws.iter().map(|d| d[1] - d[0]).collect::<Vec<_>>());
        let observed = ((450.0f64 / 550.0) / (300.0 / 700.0)).ln();
        assert!((diff - observed).abs() < 0.05, "{diff} vs {observed}");
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let net = placebo_a((3, 5), (20, 20));
        let ghost = Treatment::from_components("Ghost", vec![0, 1]);
        let spec = ModelSpec::new(ModelKind::AnchoredArm, EffectsModel::Fixed, Some(ghost));
        assert!(matches!(fit(&spec, &net, None, &quick()), Err(CnmaError::MulticomponentAnchor(_))));
        let mut dict = net.components.clone();
        let outsider = parse_treatment("Other", "+", &mut dict).unwrap();
        let spec = ModelSpec::new(ModelKind::AnchoredArm, EffectsModel::Fixed, Some(outsider));
        assert!(matches!(fit(&spec, &net, None, &quick()), Err(CnmaError::UnknownAnchor(_))));
        let spec = ModelSpec::new(ModelKind::UnanchoredContrast, EffectsModel::Fixed, None);
        assert!(matches!(fit(&spec, &net, None, &quick()), Err(CnmaError::ModelMismatch(_))));
        assert!(matches!(build_network(ComponentDict::new(), vec![]), Err(CnmaError::EmptyNetwork)));
    }

    #[test]
    fn dic_on_saturated_fit() {
        let net = placebo_a((30, 45), (100, 100));
        let spec = ModelSpec::new(ModelKind::UnanchoredArm, EffectsModel::Fixed, None);
        let f = fit(&spec, &net, None, &quick()).unwrap();
        let a = dic(&f, &net).unwrap();
        assert!((a.p_d - 2.0).abs() < 0.5, "pD {}", a.p_d);
        let g = fit(&spec, &net, None, &quick()).unwrap();
        assert_eq!(a, dic(&g, &net).unwrap());
        let h = fit(&spec, &net, None, &McmcConfig { seed: 99, ..quick() }).unwrap();
        assert!((dic(&h, &net).unwrap().dic - a.dic).abs() < 2.0);
    }

    #[test]
    fn contrast_prior_recovery_without_information() {
        let net = placebo_a((30, 45), (100, 100));
        let blocks = vec![ContrastBlock::new("s1", 0, vec![0.0], vec![1000.0], 0.0, net.studies[0].treatments().cloned().collect()).unwrap()];
        let spec = ModelSpec::new(ModelKind::UnanchoredContrast, EffectsModel::Random, None);
        let f = fit(&spec, &net, Some(&blocks), &McmcConfig { keep: 20_000, ..quick() }).unwrap();
        let s = f.sigma_draws().unwrap();
        assert!((mean(&s) - 1.0).abs() < 0.05, "sigma mean {}", mean(&s));
    }

    #[test]
    fn arm_and_contrast_fits_agree_on_large_counts() {
        let net = network(
            &["P", "A", "B"],
            &[
                ("s1", &[("P", 200, 1000), ("A", 300, 1000)]),
                ("s2", &[("P", 220, 1000), ("B", 260, 1000)]),
                ("s3", &[("A", 310, 1000), ("A+B", 380, 1000)]),
                ("s4", &[("P", 190, 1000), ("A+B", 340, 1000)]),
            ],
        );
        let blocks: Vec<_> = net.studies.iter().map(|s| arm_to_contrast(s, 0, ZeroCellPolicy::Error).unwrap()).collect();
        let arm = fit(&ModelSpec::new(ModelKind::UnanchoredArm, EffectsModel::Fixed, None), &net, None, &quick()).unwrap();
        let con = fit(&ModelSpec::new(ModelKind::UnanchoredContrast, EffectsModel::Fixed, None), &net, Some(&blocks), &quick()).unwrap();
        let contrast = |f: &BayesFit, k: usize| mean(&f.component_draws().iter().map(|d| d[k] - d[0]).collect::<Vec<_>>());
        for k in 1..3 {
            assert!((contrast(&arm, k) - contrast(&con, k)).abs() < 0.05);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn study_order_does_not_matter(d in prop::collection::vec(-1.0f64..1.0, 3), sigma in 0.05f64..1.9, a1 in -2.0f64..0.0, a2 in -2.0f64..0.0, e in -0.5f64..0.5) {
            let rows: [(&str, &[(&str, u64, u64)]); 2] = [("s1", &[("P", 5, 40), ("A", 9, 40)]), ("s2", &[("A", 4, 30), ("B", 8, 30)])];
            let fwd = network(&["P", "A", "B"], &rows);
            let rev = network(&["P", "A", "B"], &[rows[1], rows[0]]);
            for kind in [ModelKind::UnanchoredArm, ModelKind::AnchoredArm] {
                let anchor = (kind == ModelKind::AnchoredArm).then(|| fwd.treatment("P", "+").unwrap());
                let spec = ModelSpec::new(kind, EffectsModel::Random, anchor);
                let dd = if kind == ModelKind::AnchoredArm { d[1..].to_vec() } else { d.clone() };
                let p = ArmParams { d: dd.clone(), sigma: Some(sigma), alpha: vec![a1, a2], eps: vec![vec![e], vec![-e]] };
                let q = ArmParams { d: dd, sigma: Some(sigma), alpha: vec![a2, a1], eps: vec![vec![-e], vec![e]] };
                let l1 = ArmModel::new(&spec, &fwd).unwrap().log_posterior(&p).unwrap();
                let l2 = ArmModel::new(&spec, &rev).unwrap().log_posterior(&q).unwrap();
                prop_assert!((l1 - l2).abs() < 1e-9);
            }
        }
    }
}
