use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use uda_core::data::save_features;
use uda_core::eval::evaluate;
use uda_core::experiment::{
    ablate, run, sweep, write_report, Ablation, DataSource, ExperimentPlan, SweepParam,
};
use uda_core::losses::DiversityMode;
use uda_core::model::ModelBundle;
use uda_core::scoring::Scheme;
use uda_core::trainer::GrlMode;
use uda_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Universal domain adaptation by sample selection: train, evaluate and ablate
/// on synthetic domain pairs or pre-extracted features.
#[derive(Parser)]
#[command(name = "uda", version)]
struct Cli {
    /// Root directory for all outputs.
    #[arg(long, global = true, env = "UDA_OUTPUT_ROOT", default_value = "runs")]
    out_root: PathBuf,
    /// Verbose logging (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic domain pair as feature files plus a plan that trains on them.
    Gen {
        #[command(flatten)]
        plan: PlanArgs,
        /// Which repetition's data to export.
        #[arg(long, default_value_t = 0)]
        rep: usize,
        /// Output directory (default: <out-root>/<name>/data).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every repetition of a plan.
    Train {
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Evaluate a checkpoint on a labelled target feature file.
    Eval {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled target features (default: the plan's target data).
        #[arg(long = "eval-target")]
        eval_target: Option<PathBuf>,
        /// Output directory (default: <out-root>/<name>/eval).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the plan once per value of one threshold parameter.
    Sweep {
        #[command(flatten)]
        plan: PlanArgs,
        /// w_alpha_static, w_beta or w0.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
    /// Run the scoring or components ablation.
    Ablate {
        #[command(flatten)]
        plan: PlanArgs,
        /// scoring or components.
        #[arg(long)]
        ablation: Ablation,
    },
}

#[derive(Args)]
struct PlanArgs {
    /// Plan file (TOML); every field is optional.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Labelled source features; requires --target.
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    /// Labelled target features; requires --source.
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,

    /// Score scheme; resets w0, w_beta and alpha_start to its defaults.
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    w0: Option<f64>,
    #[arg(long)]
    w_beta: Option<f64>,
    #[arg(long)]
    alpha_start: Option<f64>,
    #[arg(long)]
    static_w_alpha: Option<f64>,
    #[arg(long)]
    no_pseudo_labels: bool,
    /// off, target_only or both.
    #[arg(long)]
    diversity_mode: Option<DiversityMode>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// constant or ramp.
    #[arg(long)]
    grl_mode: Option<GrlMode>,
    #[arg(long)]
    grl_lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    feature_hidden: Option<Vec<usize>>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    domain_hidden: Option<Vec<usize>>,
}

impl PlanArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentPlan> {
        let mut plan = match &self.config {
            Some(path) => ExperimentPlan::load(path)?,
            None => ExperimentPlan::default(),
        };
        if let Some(v) = &self.name {
            plan.name = v.clone();
        }
        if let Some(v) = self.repetitions {
            plan.repetitions = v;
        }
        if let Some(v) = self.workers {
            plan.workers = v;
        }
        if let (Some(source), Some(target)) = (&self.source, &self.target) {
            plan.data = DataSource::Files {
                labels: plan.data.labels().clone(),
                source: source.clone(),
                target: target.clone(),
            };
        }
        let t = &mut plan.train;
        if let Some(s) = self.scheme {
            *t = t.clone().with_scheme(s);
        }
        macro_rules! set {
            ($($field:ident <- $arg:expr),* $(,)?) => {
                $(if let Some(v) = $arg.clone() { t.$field = v; })*
            };
        }
        set!(
            gamma <- self.gamma,
            w0 <- self.w0,
            w_beta <- self.w_beta,
            alpha_start <- self.alpha_start,
            total_steps <- self.steps,
            batch_size <- self.batch_size,
            lr <- self.lr,
            momentum <- self.momentum,
            grl_lambda <- self.grl_lambda,
            seed <- self.seed,
            feature_hidden <- self.feature_hidden,
            feature_dim <- self.feature_dim,
            domain_hidden <- self.domain_hidden,
        );
        if self.static_w_alpha.is_some() {
            t.static_w_alpha = self.static_w_alpha;
        }
        if self.no_pseudo_labels {
            t.pseudo_labels = false;
        }
        if let Some(m) = self.diversity_mode {
            t.diversity_mode = m;
        }
        if let Some(m) = self.grl_mode {
            t.grl_mode = m;
        }
        plan.validate()?;
        Ok(plan)
    }
}

fn gen(plan: &ExperimentPlan, rep: usize, out: &Path) -> anyhow::Result<()> {
    let DataSource::Synthetic { labels, .. } = &plan.data else {
        bail!(Error::Config("gen needs a synthetic data source".into()));
    };
    if rep >= plan.repetitions {
        bail!(Error::Config(format!("rep {rep} out of range for {} repetitions", plan.repetitions)));
    }
    let (source, target) = plan.data.load(plan.data_seed(rep))?;
    fs::create_dir_all(out)?;
    save_features(&out.join("source.csv"), &source)?;
    save_features(&out.join("target.csv"), &target)?;
    let files_plan = ExperimentPlan {
        name: format!("{}-files", plan.name),
        data: DataSource::Files {
            labels: labels.clone(),
            source: "source.csv".into(),
            target: "target.csv".into(),
        },
        ..plan.clone()
    };
    fs::write(out.join("plan.toml"), files_plan.to_toml())?;
    println!(
        "wrote {} source and {} target samples to {}",
        source.len(),
        target.len(),
        out.display()
    );
    Ok(())
}

fn eval_checkpoint(
    plan: &ExperimentPlan,
    checkpoint: &Path,
    target: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let model = ModelBundle::load(checkpoint)?;
    let labels = plan.data.labels();
    let tgt = match target {
        Some(path) => {
            let classes = labels.target_classes();
            uda_core::data::load_features(
                path,
                uda_core::data::Domain::Target,
                uda_core::data::LabelColumn::Require,
                Some(&classes),
            )?
        }
        None => plan.data.load(plan.data_seed(0))?.1,
    };
    let report = evaluate(&model, &tgt, labels, plan.train.w0, plan.train.scheme)?;
    write_report(out, &report)?;
    print!("{}", report.summary_table());
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let root = &cli.out_root;
    match cli.command {
        Command::Gen { plan, rep, out } => {
            let plan = plan.resolve()?;
            let out = out.unwrap_or_else(|| root.join(&plan.name).join("data"));
            gen(&plan, rep, &out)
        }
        Command::Train { plan } => {
            let plan = plan.resolve()?;
            let m = run(&plan, root)?;
            for r in &m.runs {
                println!("seed {:>20}  accuracy {:6.2}", r.seed, 100.0 * r.average_class_accuracy);
            }
            println!(
                "{}: {:.2} ± {:.2} over {} runs -> {}",
                plan.name,
                100.0 * m.mean_accuracy,
                100.0 * m.std_accuracy,
                m.runs.len(),
                root.join(&plan.name).display()
            );
            Ok(())
        }
        Command::Eval {
            plan,
            checkpoint,
            eval_target,
            out,
        } => {
            let plan = plan.resolve()?;
            let out = out.unwrap_or_else(|| root.join(&plan.name).join("eval"));
            eval_checkpoint(&plan, &checkpoint, eval_target.as_deref(), &out)
        }
        Command::Sweep {
            plan,
            param,
            values,
        } => {
            let plan = plan.resolve()?;
            print!("{}", sweep(&plan, param, &values, root)?.render());
            Ok(())
        }
        Command::Ablate { plan, ablation } => {
            let plan = plan.resolve()?;
            print!("{}", ablate(&plan, ablation, root)?.render());
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NumericAbort { .. }) => EXIT_NUMERIC,
        Some(Error::Config(_) | Error::Parse { .. }) => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli).context("uda failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
