//! The four commands. Each `run_*` function computes in memory; each `cmd_*`
//! function also writes its files under the configured output directory.

use std::path::{Path, PathBuf};

use cnma::bayes::{self, BayesFit, Dic, ModelKind, ModelSpec};
use cnma::effects::{derive_relative_effect, sucra, treatment_draws, EffectEstimate, EffectSource, RankingReport};
use cnma::freq::{gls_fit, p_scores, FreqFit};
use cnma::mcmc::{summarize_values, Summary};
use cnma::network::{build_network, contrast_network, ContrastBlock, Network, Treatment};
use cnma::sim::{run_study, ReplicateRecord, ScenarioSpec, ScenarioTruth, SimModel, SimReport, RHAT_GATE};
use serde::Serialize;

use crate::config::{ModelChoice, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{write_atomic, write_json};
use crate::plot::{forest_svg, ForestRow};
use crate::tables::{
    arm_to_contrast_table, detect_kind, read_arm_table, read_contrast_table, write_contrast_table, ArmTable, ContrastTable,
    TableKind,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub enum Data {
    Arms(ArmTable),
    Contrasts(ContrastTable),
}

pub fn load_data(path: &Path, separator: &str) -> Result<Data> {
    Ok(match detect_kind(path)? {
        TableKind::Arm => Data::Arms(read_arm_table(path, separator)?),
        TableKind::Contrast => Data::Contrasts(read_contrast_table(path, separator)?),
    })
}

#[derive(Debug, Clone)]
pub enum Fitted {
    Freq(FreqFit),
    Bayes(Box<BayesFit>),
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub network: Network,
    pub fitted: Fitted,
    pub dic: Option<Dic>,
}

impl Analysis {
    /// Draws of the full component vector, for Bayesian fits.
    fn component_draws(&self) -> Option<Vec<Vec<f64>>> {
        match &self.fitted {
            Fitted::Bayes(f) => Some(f.component_draws()),
            Fitted::Freq(_) => None,
        }
    }
}

fn network_and_blocks(config: &RunConfig, data: &Data) -> Result<(Network, Option<Vec<ContrastBlock>>)> {
    match data {
        Data::Arms(t) => {
            let network = build_network(t.components.clone(), t.studies.clone())?;
            let blocks = if config.model.is_contrast_level() {
                let baseline = config
                    .baseline
                    .as_deref()
                    .map(|b| t.components.lookup(b, &config.separator))
                    .transpose()?;
                Some(arm_to_contrast_table(t, baseline.as_ref(), config.zero_cell)?.blocks)
            } else {
                None
            };
            Ok((network, blocks))
        }
        Data::Contrasts(t) => {
            if !config.model.is_contrast_level() {
                return Err(CliError::Config(format!("model {} needs arm-level data", config.model.name())));
            }
            Ok((contrast_network(t.components.clone(), &t.blocks)?, Some(t.blocks.clone())))
        }
    }
}

pub fn analyse(config: &RunConfig, data: &Data) -> Result<Analysis> {
    config.validate()?;
    let (network, blocks) = network_and_blocks(config, data)?;
    let spec = |kind, anchor| ModelSpec {
        priors: config.priors,
        ..ModelSpec::new(kind, config.effects, anchor)
    };
    let fitted = match config.model {
        ModelChoice::FreqContrast => Fitted::Freq(gls_fit(blocks.as_deref().unwrap_or_default(), &network, config.effects)?),
        ModelChoice::BayesContrast => Fitted::Bayes(Box::new(bayes::fit(
            &spec(ModelKind::UnanchoredContrast, None),
            &network,
            blocks.as_deref(),
            &config.mcmc(),
        )?)),
        ModelChoice::BayesArm => Fitted::Bayes(Box::new(bayes::fit(&spec(ModelKind::UnanchoredArm, None), &network, None, &config.mcmc())?)),
        ModelChoice::AnchoredArm => {
            let label = config.anchor.as_deref().unwrap_or_default();
            let anchor = network
                .treatment(label, &config.separator)
                .map_err(|_| cnma::CnmaError::UnknownAnchor(label.to_string()))?;
            Fitted::Bayes(Box::new(bayes::fit(&spec(ModelKind::AnchoredArm, Some(anchor)), &network, None, &config.mcmc())?))
        }
    };
    let dic = match &fitted {
        Fitted::Bayes(f) if config.dic && f.spec.kind.is_arm_level() => Some(bayes::dic(f, &network)?),
        _ => None,
    };
    Ok(Analysis { network, fitted, dic })
}

/// Report comparator: the configured one, else the anchor, else the first
/// arm of the first study.
pub fn resolve_comparator(config: &RunConfig, network: &Network) -> Result<Treatment> {
    match config.comparator.as_deref().or(config.anchor.as_deref()) {
        Some(label) => Ok(network.components.lookup(label, &config.separator)?),
        None => Ok(network.studies[0].arms[0].treatment.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreqHeterogeneity {
    pub tau2: f64,
    pub tau: f64,
    pub q: f64,
    pub df: usize,
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub chains: usize,
    pub kept_per_chain: usize,
    /// Largest split-rhat over the component effects and σ.
    pub max_rhat: f64,
    pub min_ess: f64,
    pub rhat_gate: f64,
    /// Mean over chains of each sampler block's kept-phase acceptance rate.
    pub acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub version: String,
    pub model: ModelChoice,
    pub effects_model: cnma::freq::EffectsModel,
    pub anchor: Option<String>,
    pub comparator: String,
    pub level: f64,
    pub studies: usize,
    pub components: Vec<String>,
    pub estimates: Vec<EffectEstimate>,
    pub heterogeneity: Option<FreqHeterogeneity>,
    pub sigma: Option<Summary>,
    pub diagnostics: Option<Diagnostics>,
    pub dic: Option<Dic>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn estimate(&self, target: &str) -> Option<&EffectEstimate> {
        self.estimates.iter().find(|e| e.target == target)
    }
}

fn diagnostics(fit: &BayesFit) -> Diagnostics {
    let s = &fit.sample;
    let monitored = fit.monitored();
    let n_blocks = s.acceptance.first().map_or(0, Vec::len);
    Diagnostics {
        chains: s.n_chains(),
        kept_per_chain: s.n_kept,
        max_rhat: fit.max_rhat(),
        min_ess: monitored.iter().map(|&i| s.ess[i]).fold(f64::INFINITY, f64::min),
        rhat_gate: RHAT_GATE,
        acceptance: (0..n_blocks)
            .map(|b| s.acceptance.iter().map(|c| c[b]).sum::<f64>() / s.n_chains() as f64)
            .collect(),
    }
}

pub fn fit_report(config: &RunConfig, analysis: &Analysis) -> Result<FitReport> {
    let network = &analysis.network;
    let comparator = resolve_comparator(config, network)?;
    let targets: Vec<Treatment> = network.component_treatments().into_iter().filter(|t| *t != comparator).collect();
    let draws = analysis.component_draws();
    let source = match (&analysis.fitted, &draws) {
        (Fitted::Freq(f), _) => EffectSource::Gaussian { d: &f.d_hat, cov: &f.cov_d },
        (Fitted::Bayes(_), Some(d)) => EffectSource::Draws(d),
        (Fitted::Bayes(_), None) => unreachable!("Bayesian fits always have draws"),
    };
    let estimates = targets
        .iter()
        .map(|t| derive_relative_effect(source, &comparator, t, config.level))
        .collect::<cnma::Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let (heterogeneity, sigma, diag) = match &analysis.fitted {
        Fitted::Freq(f) => {
            if f.tau2_undefined {
                warnings.push("no residual degrees of freedom: heterogeneity set to 0".to_string());
            }
            if f.rank_x < network.n_components() {
                warnings.push(format!(
                    "design has rank {} for {} components: some effects are not identified",
                    f.rank_x,
                    network.n_components()
                ));
            }
            let h = FreqHeterogeneity {
                tau2: f.tau2,
                tau: f.tau2.sqrt(),
                q: f.q,
                df: f.df,
                undefined: f.tau2_undefined,
            };
            (Some(h), None, None)
        }
        Fitted::Bayes(f) => {
            let sigma = f.sigma_draws().map(|s| summarize_values(&s, config.level)).transpose()?;
            let d = diagnostics(f);
            if d.max_rhat >= RHAT_GATE {
                warnings.push(format!(
                    "max rhat {:.3} is at or above {RHAT_GATE}: chains may not have converged",
                    d.max_rhat
                ));
            }
            (None, sigma, Some(d))
        }
    };
    Ok(FitReport {
        version: VERSION.to_string(),
        model: config.model,
        effects_model: config.effects,
        anchor: config.anchor.clone(),
        comparator: comparator.label.clone(),
        level: config.level,
        studies: network.n_studies(),
        components: network.components.names().to_vec(),
        estimates,
        heterogeneity,
        sigma,
        diagnostics: diag,
        dic: analysis.dic,
        warnings,
    })
}

pub fn run_fit(config: &RunConfig, data: &Data) -> Result<FitReport> {
    fit_report(config, &analyse(config, data)?)
}

fn csv_bytes<F>(path: &Path, header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    fill(&mut w).map_err(err)?;
    w.into_inner().map_err(|e| CliError::io(path, e.into_error()))
}

fn write_run_config(config: &RunConfig) -> Result<PathBuf> {
    let path = config.out.join("run_config.toml");
    write_atomic(&path, config.to_toml()?.as_bytes())?;
    Ok(path)
}

/// Fits the configured model to the table at `data` and writes
/// `results.json`, `effects.csv`, `forest.svg` and `run_config.toml`.
pub fn cmd_fit(config: &RunConfig, data: &Path) -> Result<(FitReport, Vec<PathBuf>)> {
    let report = run_fit(config, &load_data(data, &config.separator)?)?;
    let out = &config.out;
    let results = out.join("results.json");
    write_json(&results, &report)?;
    let effects = out.join("effects.csv");
    let bytes = csv_bytes(&effects, &["comparator", "target", "point", "sd", "lower", "upper", "level"], |w| {
        for e in &report.estimates {
            w.write_record([
                e.comparator.clone(),
                e.target.clone(),
                e.point.to_string(),
                e.sd.to_string(),
                e.lower.to_string(),
                e.upper.to_string(),
                e.level.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(&effects, &bytes)?;
    let forest = out.join("forest.svg");
    let rows: Vec<ForestRow> = report
        .estimates
        .iter()
        .map(|e| ForestRow {
            label: e.target.clone(),
            point: e.point,
            lower: e.lower,
            upper: e.upper,
        })
        .collect();
    let title = format!("Log odds ratios of components versus {} ({})", report.comparator, report.model.name());
    let x_label = format!("log odds ratio, {}% interval", report.level * 100.0);
    write_atomic(&forest, forest_svg(&title, &x_label, &rows).as_bytes())?;
    let cfg = write_run_config(config)?;
    Ok((report, vec![results, effects, forest, cfg]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub version: String,
    pub model: ModelChoice,
    pub ranking: RankingReport,
    pub ordering: Vec<String>,
}

/// Ranks every treatment observed in the network: SUCRA from posterior
/// draws, P-scores from the frequentist fit.
pub fn run_rank(config: &RunConfig, data: &Data) -> Result<RankReport> {
    let analysis = analyse(config, data)?;
    let treatments = &analysis.network.treatments;
    let ranking = match (&analysis.fitted, analysis.component_draws()) {
        (Fitted::Freq(f), _) => p_scores(f, treatments, config.direction)?,
        (Fitted::Bayes(_), Some(draws)) => sucra(&treatment_draws(&draws, treatments)?, treatments, config.direction)?,
        (Fitted::Bayes(_), None) => unreachable!("Bayesian fits always have draws"),
    };
    let ordering = ranking.ordering().into_iter().map(String::from).collect();
    Ok(RankReport {
        version: VERSION.to_string(),
        model: config.model,
        ranking,
        ordering,
    })
}

/// Writes `ranking.json` and `ranking.csv`.
pub fn cmd_rank(config: &RunConfig, data: &Path) -> Result<(RankReport, Vec<PathBuf>)> {
    let report = run_rank(config, &load_data(data, &config.separator)?)?;
    let json = config.out.join("ranking.json");
    write_json(&json, &report)?;
    let table = config.out.join("ranking.csv");
    let r = &report.ranking;
    let bytes = csv_bytes(&table, &["treatment", "score", "position"], |w| {
        for (pos, label) in report.ordering.iter().enumerate() {
            let score = r.score(label).unwrap_or(f64::NAN);
            w.write_record([label.clone(), score.to_string(), (pos + 1).to_string()])?;
        }
        Ok(())
    })?;
    write_atomic(&table, &bytes)?;
    Ok((report, vec![json, table, write_run_config(config)?]))
}

/// Scenario of a simulation run built from the configuration. The zero-cell
/// policy stays at the scenario default (continuity 0.5).
pub fn scenario(config: &RunConfig) -> Result<ScenarioSpec> {
    let s = &config.simulation;
    Ok(ScenarioSpec {
        n_per_arm: s.n_per_arm,
        replicates: s.replicates,
        seed: config.seed,
        priors: config.priors,
        ..ScenarioSpec::preset(s.network, &s.data_anchor, &s.analysis_anchor)?
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationOutput {
    pub version: String,
    pub scenario: ScenarioSpec,
    pub truth: ScenarioTruth,
    pub report: SimReport,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

pub fn run_simulate(config: &RunConfig) -> Result<SimulationOutput> {
    let spec = scenario(config)?;
    let truth = cnma::sim::derive_scenario_parameters(&spec)?;
    let workers = match config.simulation.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    };
    let (report, records) = run_study(&spec, &SimModel::ALL, &config.mcmc(), workers)?;
    Ok(SimulationOutput {
        version: VERSION.to_string(),
        scenario: spec,
        truth,
        report,
        records,
    })
}

/// Writes `simulation.json`, `parameters.csv`, `rankings.csv` and, when
/// requested, `replicates.json`.
pub fn cmd_simulate(config: &RunConfig) -> Result<(SimulationOutput, Vec<PathBuf>)> {
    let output = run_simulate(config)?;
    let out = &config.out;
    let json = out.join("simulation.json");
    write_json(&json, &output)?;
    let params = out.join("parameters.csv");
    let bytes = csv_bytes(&params, &["model", "parameter", "truth", "bias", "coverage", "mean_length", "mse", "n"], |w| {
        for p in &output.report.parameters {
            w.write_record([
                p.model.name().to_string(),
                p.parameter.clone(),
                p.truth.to_string(),
                p.bias.to_string(),
                p.coverage.to_string(),
                p.mean_length.to_string(),
                p.mse.to_string(),
                p.n.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(&params, &bytes)?;
    let ranks = out.join("rankings.csv");
    let bytes = csv_bytes(&ranks, &["model", "treatment", "mean_score"], |w| {
        for r in &output.report.rankings {
            w.write_record([r.model.name().to_string(), r.treatment.clone(), r.mean_score.to_string()])?;
        }
        Ok(())
    })?;
    write_atomic(&ranks, &bytes)?;
    let mut files = vec![json, params, ranks];
    if config.simulation.raw_records {
        let raw = out.join("replicates.json");
        write_json(&raw, &output.records)?;
        files.push(raw);
    }
    files.push(write_run_config(config)?);
    Ok((output, files))
}

/// Converts an arm table to a contrast table under the configured
/// zero-cell policy and baseline.
pub fn run_convert(config: &RunConfig, table: &ArmTable) -> Result<ContrastTable> {
    let baseline = config
        .baseline
        .as_deref()
        .map(|b| table.components.lookup(b, &config.separator))
        .transpose()?;
    arm_to_contrast_table(table, baseline.as_ref(), config.zero_cell)
}

pub fn cmd_convert(config: &RunConfig, input: &Path, output: &Path) -> Result<ContrastTable> {
    let table = run_convert(config, &read_arm_table(input, &config.separator)?)?;
    write_contrast_table(output, &table, &config.separator)?;
    Ok(table)
}
