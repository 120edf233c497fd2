//! Simulation study: scenario truths, data generation from the anchored
//! arm-level model, replicated fitting and performance measures.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, ModelKind, ModelSpec, Priors};
use crate::design::{anchor_component, build_sigma};
use crate::effects::{derive_relative_effect, sucra, treatment_draws, Direction, EffectSource};
use crate::error::{CnmaError, Result};
use crate::freq::{gls_fit, p_scores, EffectsModel};
use crate::mcmc::{rhat, McmcConfig};
use crate::network::{arm_to_contrast, build_network, parse_treatment, ArmRecord, ComponentDict, Network, Study, Treatment, ZeroCellPolicy};
use crate::numerics::{chol, mean, quantile, sorted_copy, RngStream};

/// The four analyses compared in a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimModel {
    AnchoredArm,
    FreqContrast,
    BayesContrast,
    BayesArm,
}

impl SimModel {
    pub const ALL: [SimModel; 4] = [SimModel::AnchoredArm, SimModel::FreqContrast, SimModel::BayesContrast, SimModel::BayesArm];

    pub fn name(self) -> &'static str {
        match self {
            SimModel::AnchoredArm => "anchored-arm",
            SimModel::FreqContrast => "freq-contrast",
            SimModel::BayesContrast => "bayes-contrast",
            SimModel::BayesArm => "bayes-arm",
        }
    }

    pub fn is_unanchored(self) -> bool {
        self != SimModel::AnchoredArm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub first: String,
    pub second: String,
    pub trials: usize,
}

impl Edge {
    pub fn new(first: &str, second: &str, trials: usize) -> Self {
        Self {
            first: first.into(),
            second: second.into(),
            trials,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub network_id: u8,
    pub components: Vec<String>,
    pub topology: Vec<Edge>,
    /// Treatment that reports are expressed against.
    pub reference: String,
    /// Component effects relative to `reference`.
    pub single_effects: Vec<f64>,
    /// Baseline logit when `reference` is the anchor.
    pub reference_alpha: f64,
    pub data_anchor: String,
    pub analysis_anchor: String,
    pub sigma: f64,
    pub n_per_arm: u64,
    pub replicates: usize,
    pub seed: u64,
    pub zero_cell: ZeroCellPolicy,
    pub priors: Priors,
}

fn edges(list: &[(&str, &str)]) -> Vec<Edge> {
    list.iter().map(|(a, b)| Edge::new(a, b, 2)).collect()
}

impl ScenarioSpec {
    /// Five components A–E plus A+C, A+D and A+C+D, reported against E.
    pub fn network1(data_anchor: &str, analysis_anchor: &str) -> Self {
        Self {
            network_id: 1,
            components: ["A", "B", "C", "D", "E"].map(String::from).to_vec(),
            topology: edges(&[
                ("E", "A"),
                ("E", "B"),
                ("E", "C"),
                ("E", "D"),
                ("B", "C"),
                ("A", "A+C"),
                ("E", "A+C"),
                ("A", "A+D"),
                ("E", "A+C+D"),
                ("D", "A+D"),
            ]),
            reference: "E".into(),
            single_effects: vec![1.2, 0.9, 0.8, 0.7, 0.0],
            reference_alpha: -0.85,
            data_anchor: data_anchor.into(),
            analysis_anchor: analysis_anchor.into(),
            sigma: 0.1,
            n_per_arm: 500,
            replicates: 200,
            seed: 2024,
            zero_cell: ZeroCellPolicy::Continuity05,
            priors: Priors::default(),
        }
    }

    /// Five components A–E plus A+B, B+D and A+B+D, reported against C.
    pub fn network2(data_anchor: &str, analysis_anchor: &str) -> Self {
        Self {
            network_id: 2,
            topology: edges(&[
                ("C", "A"),
                ("C", "B"),
                ("C", "D"),
                ("C", "E"),
                ("A", "B"),
                ("A", "A+B"),
                ("C", "A+B"),
                ("B", "B+D"),
                ("C", "A+B+D"),
                ("D", "B+D"),
            ]),
            reference: "C".into(),
            single_effects: vec![0.70, 0.35, 0.0, -0.20, -0.50],
            reference_alpha: -0.60,
            sigma: 0.4,
            ..Self::network1(data_anchor, analysis_anchor)
        }
    }

    pub fn preset(network_id: u8, data_anchor: &str, analysis_anchor: &str) -> Result<Self> {
        match network_id {
            1 => Ok(Self::network1(data_anchor, analysis_anchor)),
            2 => Ok(Self::network2(data_anchor, analysis_anchor)),
            other => Err(CnmaError::InvalidArgument(format!("unknown network id {other}; expected 1 or 2"))),
        }
    }
}

/// True parameter values of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub components: ComponentDict,
    /// Every treatment in the topology, in first-appearance order.
    pub treatments: Vec<Treatment>,
    pub reference: Treatment,
    /// d_{ref,T} when the data anchor makes effects additive.
    pub effects: Vec<f64>,
    /// d_{ref,T} if the analysis anchor were the true anchor.
    pub analysis_anchor_effects: Vec<f64>,
    /// Component effects relative to the data anchor.
    pub data_anchor_d: Vec<f64>,
    pub data_alpha: f64,
    pub analysis_alpha: f64,
    pub data_anchor: Treatment,
    pub analysis_anchor: Treatment,
}

impl ScenarioTruth {
    pub fn effect(&self, t: &Treatment) -> Option<f64> {
        self.treatments.iter().position(|x| x == t).map(|i| self.effects[i])
    }

    /// Treatments other than the reference, the reported parameters.
    pub fn monitored(&self) -> Vec<usize> {
        (0..self.treatments.len()).filter(|&i| self.treatments[i] != self.reference).collect()
    }
}

/// Treatment effects relative to `reference` when `anchor` makes effects
/// additive: d_{ref,T} = d_{ref,k} + Σ_{c∈T} d_{k,c}.
fn anchored_effects(d_ref: &[f64], anchor: usize, reference: &Treatment, treatments: &[Treatment]) -> (Vec<f64>, Vec<f64>) {
    let d_k: Vec<f64> = d_ref.iter().map(|v| v - d_ref[anchor]).collect();
    let sum = |t: &Treatment| t.components().iter().map(|&c| d_k[c]).sum::<f64>();
    let ref_k = sum(reference);
    (treatments.iter().map(|t| sum(t) - ref_k).collect(), d_k)
}

pub fn derive_scenario_parameters(spec: &ScenarioSpec) -> Result<ScenarioTruth> {
    let mut dict = ComponentDict::from_names(spec.components.iter().map(String::as_str));
    if spec.single_effects.len() != dict.len() {
        return Err(CnmaError::DimensionMismatch(format!(
            "{} single effects for {} components",
            spec.single_effects.len(),
            dict.len()
        )));
    }
    if !(spec.sigma >= 0.0) {
        return Err(CnmaError::InvalidArgument("sigma must be non-negative".into()));
    }
    let mut treatments: Vec<Treatment> = Vec::new();
    for e in &spec.topology {
        for label in [&e.first, &e.second] {
            let t = dict.lookup(label, "+")?;
            if !treatments.contains(&t) {
                treatments.push(t);
            }
        }
    }
    let reference = parse_treatment(&spec.reference, "+", &mut dict)?;
    let data_anchor = dict.lookup(&spec.data_anchor, "+")?;
    let analysis_anchor = dict.lookup(&spec.analysis_anchor, "+")?;
    let (k, k2) = (anchor_component(&data_anchor)?, anchor_component(&analysis_anchor)?);
    let r = anchor_component(&reference)?;
    // α for anchor k: α_ref + d_{ref,k}
    let alpha_for = |c: usize| spec.reference_alpha + spec.single_effects[c] - spec.single_effects[r];
    let (effects, data_anchor_d) = anchored_effects(&spec.single_effects, k, &reference, &treatments);
    let (analysis_anchor_effects, _) = anchored_effects(&spec.single_effects, k2, &reference, &treatments);
    Ok(ScenarioTruth {
        components: dict,
        treatments,
        reference,
        effects,
        analysis_anchor_effects,
        data_anchor_d,
        data_alpha: alpha_for(k),
        analysis_alpha: alpha_for(k2),
        data_anchor,
        analysis_anchor,
    })
}

fn inv_logit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// True arm probabilities of one trial, data anchor first when present,
/// given the trial's latent effects.
fn trial_logits(truth: &ScenarioTruth, arms: &[Treatment], eps: &[f64]) -> Vec<f64> {
    arms.iter()
        .zip(eps)
        .map(|(t, e)| truth.data_alpha + t.components().iter().map(|&c| truth.data_anchor_d[c]).sum::<f64>() + e)
        .collect()
}

/// One simulated dataset: every trial in the topology with binomial counts.
pub fn generate_dataset(spec: &ScenarioSpec, truth: &ScenarioTruth, rng: &mut ChaCha8Rng) -> Result<Vec<Study>> {
    let mut studies = Vec::new();
    for e in &spec.topology {
        let mut arms = vec![truth.components.lookup(&e.first, "+")?, truth.components.lookup(&e.second, "+")?];
        if let Some(j) = arms.iter().position(|t| *t == truth.data_anchor) {
            arms.swap(0, j);
        }
        let a = arms.len();
        let anchor_in_trial = arms[0] == truth.data_anchor;
        let sigma_mat = build_sigma(a, anchor_in_trial) * (spec.sigma * spec.sigma);
        // With the anchor in the trial the first row is zero; factor with a
        // unit pivot there and zero it again so ε₁ stays 0.
        let l = if spec.sigma > 0.0 {
            let mut m = sigma_mat.clone();
            if anchor_in_trial {
                m[(0, 0)] = 1.0;
            }
            let mut l = chol(&m)?;
            if anchor_in_trial {
                l[(0, 0)] = 0.0;
            }
            Some(l)
        } else {
            None
        };
        for _ in 0..e.trials {
            let mut eps = vec![0.0; a];
            if let Some(l) = &l {
                let z: Vec<f64> = (0..a).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..a {
                    eps[i] = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
                }
            }
            let logits = trial_logits(truth, &arms, &eps);
            let mut records = Vec::with_capacity(a);
            for (t, lg) in arms.iter().zip(logits) {
                let p = inv_logit(lg);
                let r = Binomial::new(spec.n_per_arm, p).map_err(|e| CnmaError::InvalidArgument(e.to_string()))?.sample(rng);
                records.push(ArmRecord::new(t.clone(), r, spec.n_per_arm));
            }
            studies.push(Study::new(format!("t{}", studies.len() + 1), records)?);
        }
    }
    Ok(studies)
}

/// Point estimate and interval for one reported parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    /// Aligned with `ScenarioTruth::monitored()`.
    pub estimates: Vec<Estimate>,
    /// SUCRA (Bayesian) or P-score (frequentist), aligned with the truth's treatments.
    pub scores: Vec<f64>,
    pub max_rhat: Option<f64>,
    pub dic: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub results: Vec<(SimModel, std::result::Result<ModelRecord, String>)>,
    pub delta_dic: Option<f64>,
}

impl ReplicateRecord {
    pub fn get(&self, model: SimModel) -> Option<&ModelRecord> {
        self.results.iter().find(|(m, _)| *m == model).and_then(|(_, r)| r.as_ref().ok())
    }
}

const LEVEL: f64 = 0.95;

fn bayes_record(fit: &bayes::BayesFit, truth: &ScenarioTruth, network: &Network, want_dic: bool) -> Result<ModelRecord> {
    let comp = fit.component_draws();
    let draws = treatment_draws(&comp, &truth.treatments)?;
    let r = truth.treatments.iter().position(|t| *t == truth.reference).expect("reference is in the topology");
    let mut estimates = Vec::new();
    let mut max_rhat = fit.sample.max_rhat(&fit.layout.sigma.into_iter().collect::<Vec<_>>());
    let n_chains = fit.sample.n_chains();
    let per_chain = fit.sample.n_kept;
    for i in truth.monitored() {
        let values: Vec<f64> = draws.iter().map(|d| d[i] - d[r]).collect();
        let sorted = sorted_copy(&values);
        estimates.push(Estimate {
            point: mean(&values),
            lower: quantile(&sorted, (1.0 - LEVEL) / 2.0)?,
            upper: quantile(&sorted, (1.0 + LEVEL) / 2.0)?,
        });
        let chains: Vec<Vec<f64>> = (0..n_chains).map(|c| values[c * per_chain..(c + 1) * per_chain].to_vec()).collect();
        let rh = rhat(&chains)?;
        max_rhat = max_rhat.max(rh);
    }
    let scores = sucra(&draws, &truth.treatments, Direction::HigherBetter)?.scores;
    let dic = if want_dic { Some(bayes::dic(fit, network)?.dic) } else { None };
    Ok(ModelRecord {
        estimates,
        scores,
        max_rhat: Some(max_rhat),
        dic,
        sigma: fit.sigma_draws().map(|s| mean(&s)),
    })
}

fn run_model(model: SimModel, spec: &ScenarioSpec, truth: &ScenarioTruth, network: &Network, mcmc: &McmcConfig) -> Result<ModelRecord> {
    let blocks = || -> Result<Vec<_>> { network.studies.iter().map(|s| arm_to_contrast(s, 0, spec.zero_cell)).collect() };
    let with_priors = |mut m: ModelSpec| {
        m.priors = spec.priors;
        m
    };
    match model {
        SimModel::FreqContrast => {
            let fit = gls_fit(&blocks()?, network, EffectsModel::Random)?;
            let src = EffectSource::Gaussian { d: &fit.d_hat, cov: &fit.cov_d };
            let z = crate::effects::normal_quantile((1.0 + LEVEL) / 2.0);
            let estimates = truth
                .monitored()
                .into_iter()
                .map(|i| {
                    let e = derive_relative_effect(src, &truth.reference, &truth.treatments[i], LEVEL)?;
                    Ok(Estimate {
                        point: e.point,
                        lower: e.point - z * e.sd,
                        upper: e.point + z * e.sd,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ModelRecord {
                estimates,
                scores: p_scores(&fit, &truth.treatments, Direction::HigherBetter)?.scores,
                max_rhat: None,
                dic: None,
                sigma: Some(fit.tau2.sqrt()),
            })
        }
        SimModel::BayesContrast => {
            let s = with_priors(ModelSpec::new(ModelKind::UnanchoredContrast, EffectsModel::Random, None));
            let fit = bayes::fit(&s, network, Some(&blocks()?), mcmc)?;
            bayes_record(&fit, truth, network, false)
        }
        SimModel::BayesArm => {
            let s = with_priors(ModelSpec::new(ModelKind::UnanchoredArm, EffectsModel::Random, None));
            let fit = bayes::fit(&s, network, None, mcmc)?;
            bayes_record(&fit, truth, network, true)
        }
        SimModel::AnchoredArm => {
            let s = with_priors(ModelSpec::new(ModelKind::AnchoredArm, EffectsModel::Random, Some(truth.analysis_anchor.clone())));
            let fit = bayes::fit(&s, network, None, mcmc)?;
            bayes_record(&fit, truth, network, true)
        }
    }
}

/// Generates and analyses one replicate.
pub fn run_replicate(spec: &ScenarioSpec, truth: &ScenarioTruth, models: &[SimModel], mcmc: &McmcConfig, replicate: usize) -> Result<ReplicateRecord> {
    let stream = RngStream::new(spec.seed, 2).child(replicate as u64);
    let mut rng = stream.rng();
    let studies = generate_dataset(spec, truth, &mut rng)?;
    let network = build_network(truth.components.clone(), studies)?;
    let mut results = Vec::with_capacity(models.len());
    for (k, &m) in models.iter().enumerate() {
        let cfg = McmcConfig {
            seed: stream.child(k as u64).seed,
            ..mcmc.clone()
        };
        results.push((m, run_model(m, spec, truth, &network, &cfg).map_err(|e| e.to_string())));
    }
    let dic_of = |m: SimModel| results.iter().find(|(x, _)| *x == m).and_then(|(_, r)| r.as_ref().ok()).and_then(|r| r.dic);
    let delta_dic = match (dic_of(SimModel::BayesArm), dic_of(SimModel::AnchoredArm)) {
        (Some(u), Some(a)) => Some(u - a),
        _ => None,
    };
    Ok(ReplicateRecord {
        replicate,
        results,
        delta_dic,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterMetrics {
    pub model: SimModel,
    pub parameter: String,
    pub truth: f64,
    pub bias: f64,
    pub coverage: f64,
    pub mean_length: f64,
    pub mse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub model: SimModel,
    pub treatment: String,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHealth {
    pub model: SimModel,
    pub succeeded: usize,
    pub failed: usize,
    /// Fraction of successful Bayesian fits with rhat below the gate.
    pub rhat_ok: Option<f64>,
    pub errors: Vec<String>,
}

pub const RHAT_GATE: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub replicates: usize,
    pub parameters: Vec<ParameterMetrics>,
    pub rankings: Vec<RankingMetrics>,
    /// Counts of ΔDIC below −2, within [−2, 2], above 2.
    pub delta_dic_bins: [usize; 3],
    pub health: Vec<ModelHealth>,
}

impl SimReport {
    pub fn metric(&self, model: SimModel, parameter: &str) -> Option<&ParameterMetrics> {
        self.parameters.iter().find(|m| m.model == model && m.parameter == parameter)
    }

    pub fn mean_scores(&self, model: SimModel) -> Vec<(&str, f64)> {
        self.rankings.iter().filter(|r| r.model == model).map(|r| (r.treatment.as_str(), r.mean_score)).collect()
    }

    /// Modal ΔDIC bin: 0 for below −2, 1 for [−2, 2], 2 for above 2.
    pub fn modal_delta_bin(&self) -> usize {
        let b = self.delta_dic_bins;
        (0..3).max_by_key(|&i| (b[i], std::cmp::Reverse(i))).unwrap_or(1)
    }
}

pub fn parameter_label(truth: &ScenarioTruth, i: usize) -> String {
    format!("d[{},{}]", truth.reference.label, truth.treatments[i].label)
}

pub fn delta_bin(delta: f64) -> usize {
    if delta < -2.0 {
        0
    } else if delta <= 2.0 {
        1
    } else {
        2
    }
}

pub fn compute_metrics(records: &[ReplicateRecord], truth: &ScenarioTruth, models: &[SimModel]) -> Result<SimReport> {
    if records.is_empty() {
        return Err(CnmaError::EmptyInput("no replicate records".into()));
    }
    let monitored = truth.monitored();
    let mut parameters = Vec::new();
    let mut rankings = Vec::new();
    let mut health = Vec::new();
    for &m in models {
        let ok: Vec<&ModelRecord> = records.iter().filter_map(|r| r.get(m)).collect();
        let errors: Vec<String> = records
            .iter()
            .flat_map(|r| r.results.iter())
            .filter(|(x, _)| *x == m)
            .filter_map(|(_, r)| r.as_ref().err().cloned())
            .collect();
        let rhats: Vec<f64> = ok.iter().filter_map(|r| r.max_rhat).collect();
        health.push(ModelHealth {
            model: m,
            succeeded: ok.len(),
            failed: errors.len(),
            rhat_ok: (!rhats.is_empty()).then(|| rhats.iter().filter(|&&r| r < RHAT_GATE).count() as f64 / rhats.len() as f64),
            errors,
        });
        if ok.is_empty() {
            continue;
        }
        let n = ok.len() as f64;
        for (slot, &i) in monitored.iter().enumerate() {
            let t = truth.effects[i];
            let est: Vec<&Estimate> = ok.iter().map(|r| &r.estimates[slot]).collect();
            parameters.push(ParameterMetrics {
                model: m,
                parameter: parameter_label(truth, i),
                truth: t,
                bias: est.iter().map(|e| e.point - t).sum::<f64>() / n,
                coverage: est.iter().filter(|e| e.lower <= t && t <= e.upper).count() as f64 / n,
                mean_length: est.iter().map(|e| e.upper - e.lower).sum::<f64>() / n,
                mse: est.iter().map(|e| (e.point - t).powi(2)).sum::<f64>() / n,
                n: ok.len(),
            });
        }
        for (i, t) in truth.treatments.iter().enumerate() {
            rankings.push(RankingMetrics {
                model: m,
                treatment: t.label.clone(),
                mean_score: ok.iter().map(|r| r.scores[i]).sum::<f64>() / n,
            });
        }
    }
    let mut delta_dic_bins = [0; 3];
    for d in records.iter().filter_map(|r| r.delta_dic) {
        delta_dic_bins[delta_bin(d)] += 1;
    }
    Ok(SimReport {
        replicates: records.len(),
        parameters,
        rankings,
        delta_dic_bins,
        health,
    })
}

/// Runs every replicate on a pool of `workers` threads and aggregates.
/// Records come back in replicate order whatever the completion order.
pub fn run_study(spec: &ScenarioSpec, models: &[SimModel], mcmc: &McmcConfig, workers: usize) -> Result<(SimReport, Vec<ReplicateRecord>)> {
    if spec.replicates == 0 {
        return Err(CnmaError::InvalidArgument("at least one replicate is required".into()));
    }
    if models.is_empty() {
        return Err(CnmaError::InvalidArgument("no models selected".into()));
    }
    mcmc.validate()?;
    let truth = derive_scenario_parameters(spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CnmaError::InvalidArgument(e.to_string()))?;
    let records = pool.install(|| {
        (0..spec.replicates)
            .into_par_iter()
            .map(|r| run_replicate(spec, &truth, models, mcmc, r))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok((compute_metrics(&records, &truth, models)?, records))
}

/// Truth ordering helper: labels sorted by decreasing value.
pub fn ordering(labels: &[String], values: &[f64]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx.into_iter().map(|i| labels[i].clone()).collect()
}

/// Pairs (a, b) with `truth[a] > truth[b]` where `scores` disagree.
pub fn ordering_violations(labels: &[String], truth: &[f64], scores: &HashMap<String, f64>) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for a in 0..labels.len() {
        for b in 0..labels.len() {
            if truth[a] > truth[b] + 1e-12 && scores[&labels[a]] <= scores[&labels[b]] {
                out.push((labels[a].clone(), labels[b].clone()));
            }
        }
    }
    out
}
