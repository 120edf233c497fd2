use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cnma::effects::Direction;
use cnma::freq::EffectsModel;
use cnma::network::ZeroCellPolicy;
use cnma_cli::commands::{cmd_convert, cmd_fit, cmd_rank, cmd_simulate};
use cnma_cli::config::{ModelChoice, RunConfig};
use cnma_cli::Result;

#[derive(Parser)]
#[command(name = "cnma", version, about = "Component network meta-analysis with anchored and unanchored additive models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write effects versus a comparator with a forest plot
    Fit {
        #[command(flatten)]
        common: Common,
        /// Arm table (study,treatment,events,total) or contrast table
        #[arg(long)]
        data: PathBuf,
    },
    /// Rank the observed treatments (SUCRA or P-score)
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        direction: Option<DirectionArg>,
    },
    /// Run a simulation study comparing all four models
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Preset network: 1 or 2
        #[arg(long)]
        network: Option<u8>,
        /// Single component that makes the generated effects additive
        #[arg(long)]
        data_anchor: Option<String>,
        /// Anchor assumed by the anchored model
        #[arg(long)]
        analysis_anchor: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        n_per_arm: Option<u64>,
        /// Worker threads; 0 uses every core
        #[arg(long)]
        workers: Option<usize>,
        /// Also write every replicate's raw record
        #[arg(long)]
        raw: bool,
    },
    /// Convert an arm table to a contrast table
    Convert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output contrast table
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its settings
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// Single-component treatment assumed to make effects additive
    #[arg(long)]
    anchor: Option<String>,
    /// Treatment the reported effects are relative to
    #[arg(long)]
    comparator: Option<String>,
    /// Treatment used as the contrast baseline when converting arm data
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, value_enum)]
    effects: Option<EffectsArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Interval level, e.g. 0.95
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, value_enum)]
    zero_cell: Option<ZeroCellArg>,
    /// Component separator in treatment labels
    #[arg(long)]
    separator: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EffectsArg {
    Fixed,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZeroCellArg {
    Error,
    Cc05,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    HigherBetter,
    LowerBetter,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.model {
            c.model = m;
        }
        if self.anchor.is_some() {
            c.anchor = self.anchor.clone();
        }
        if self.comparator.is_some() {
            c.comparator = self.comparator.clone();
        }
        if self.baseline.is_some() {
            c.baseline = self.baseline.clone();
        }
        if let Some(e) = self.effects {
            c.effects = match e {
                EffectsArg::Fixed => EffectsModel::Fixed,
                EffectsArg::Random => EffectsModel::Random,
            };
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if let Some(l) = self.level {
            c.level = l;
        }
        if let Some(z) = self.zero_cell {
            c.zero_cell = match z {
                ZeroCellArg::Error => ZeroCellPolicy::Error,
                ZeroCellArg::Cc05 => ZeroCellPolicy::Continuity05,
            };
        }
        if let Some(s) = &self.separator {
            c.separator = s.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { common, data } => {
            let config = common.resolve()?;
            let (report, files) = cmd_fit(&config, &data)?;
            for e in &report.estimates {
                println!("{:>12} vs {}: {:.3} [{:.3}, {:.3}]", e.target, e.comparator, e.point, e.lower, e.upper);
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Rank { common, data, direction } => {
            let mut config = common.resolve()?;
            if let Some(d) = direction {
                config.direction = match d {
                    DirectionArg::HigherBetter => Direction::HigherBetter,
                    DirectionArg::LowerBetter => Direction::LowerBetter,
                };
            }
            let (report, files) = cmd_rank(&config, &data)?;
            for (i, label) in report.ordering.iter().enumerate() {
                println!("{:>3}. {label} {:.3}", i + 1, report.ranking.score(label).unwrap_or(f64::NAN));
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Simulate {
            common,
            network,
            data_anchor,
            analysis_anchor,
            replicates,
            n_per_arm,
            workers,
            raw,
        } => {
            let mut config = common.resolve()?;
            let s = &mut config.simulation;
            if let Some(n) = network {
                s.network = n;
            }
            if let Some(a) = data_anchor {
                s.data_anchor = a;
            }
            if let Some(a) = analysis_anchor {
                s.analysis_anchor = a;
            }
            if let Some(r) = replicates {
                s.replicates = r;
            }
            if let Some(n) = n_per_arm {
                s.n_per_arm = n;
            }
            if let Some(w) = workers {
                s.workers = w;
            }
            s.raw_records |= raw;
            let (output, files) = cmd_simulate(&config)?;
            for h in &output.report.health {
                println!("{}: {} fits, {} failed", h.model.name(), h.succeeded, h.failed);
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Convert { common, data, output } => {
            let config = common.resolve()?;
            let table = cmd_convert(&config, &data, &output)?;
            println!("wrote {} contrast blocks to {}", table.blocks.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
