//! Experiment plans: data source + training config + repetitions, and the
//! run / sweep / ablation drivers that write per-run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    gen_synthetic, load_features, DomainDataset, Domain, LabelColumn, LabelSetSpec,
    SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, export_score_distributions, grouped_scores, write_histograms, EvalReport,
};
use crate::model::ModelBundle;
use crate::scoring::{score_batch, write_score_dump, Scheme, TaggedScore};
use crate::trainer::{derive_seed, train, StepRecord, TrainConfig};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SCORES_FILE: &str = "scores.csv";
pub const HISTOGRAM_FILE: &str = "histograms.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        labels: LabelSetSpec,
        #[serde(default)]
        synthetic: SyntheticConfig,
    },
    /// Pre-extracted features. Both files carry labels; the target's are only
    /// read by evaluation.
    Files {
        labels: LabelSetSpec,
        source: PathBuf,
        target: PathBuf,
    },
}

impl DataSource {
    pub fn benchmark() -> Self {
        DataSource::Synthetic {
            labels: LabelSetSpec::dense(4, 2, 6).expect("static partition"),
            synthetic: SyntheticConfig::default(),
        }
    }

    pub fn labels(&self) -> &LabelSetSpec {
        match self {
            DataSource::Synthetic { labels, .. } | DataSource::Files { labels, .. } => labels,
        }
    }

    /// Source and target datasets, both labelled.
    pub fn load(&self, seed: u64) -> Result<(DomainDataset, DomainDataset)> {
        match self {
            DataSource::Synthetic { labels, synthetic } => gen_synthetic(labels, synthetic, seed),
            DataSource::Files {
                labels,
                source,
                target,
            } => {
                let s = load_features(source, Domain::Source, LabelColumn::Require, Some(labels.source_classes()))?;
                let tc = labels.target_classes();
                let t = load_features(target, Domain::Target, LabelColumn::Require, Some(&tc))?;
                Ok((s, t))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub repetitions: usize,
    /// Upper bound on concurrently running repetitions / sweep points.
    pub workers: usize,
    pub train: TrainConfig,
    pub data: DataSource,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            name: "benchmark".into(),
            repetitions: 3,
            workers: 1,
            train: TrainConfig::default(),
            data: DataSource::benchmark(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    /// Reads a plan file; relative feature-file paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut plan = Self::from_toml(&text)?;
        if let DataSource::Files { source, target, .. } = &mut plan.data {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [source, target] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan is always serialisable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config(format!("bad plan name {:?}", self.name)));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be >= 1"));
        }
        self.train.validate()
    }

    /// Seed of repetition `rep`; drives both data generation and training.
    pub fn repetition_seed(&self, rep: usize) -> u64 {
        derive_seed(self.train.seed, 1000 + rep as u64)
    }

    /// Seed of the synthetic data of repetition `rep`.
    pub fn data_seed(&self, rep: usize) -> u64 {
        derive_seed(self.repetition_seed(rep), 7)
    }

    pub fn run_dir(&self, root: &Path, seed: u64) -> PathBuf {
        root.join(&self.name).join(format!("seed-{seed}"))
    }
}

/// Everything one repetition produces, before anything is written.
pub struct RunOutcome {
    pub seed: u64,
    pub config: TrainConfig,
    pub model: ModelBundle,
    pub log: Vec<StepRecord>,
    pub report: EvalReport,
    pub scores: Vec<TaggedScore>,
    pub histograms: Vec<crate::eval::Histogram>,
}

/// Trains and evaluates one repetition in memory.
pub fn run_repetition(plan: &ExperimentPlan, rep: usize) -> Result<RunOutcome> {
    let seed = plan.repetition_seed(rep);
    let labels = plan.data.labels();
    let (source, target) = plan.data.load(plan.data_seed(rep))?;
    let config = TrainConfig {
        seed,
        ..plan.train.clone()
    };
    let (model, log) = train(&source, target.inputs(), labels, &config)?;
    let report = evaluate(&model, &target, labels, config.w0, config.scheme)?;

    let mut scores = Vec::with_capacity(source.len() + target.len());
    for ds in [&source, &target] {
        let recs = score_batch(&model, ds.features(), config.scheme)?;
        let ys = ds.labels().expect("both datasets are labelled");
        scores.extend(recs.into_iter().enumerate().map(|(id, record)| TaggedScore {
            id,
            domain: ds.domain(),
            label: Some(ys[id]),
            record,
        }));
    }
    let grouped = grouped_scores(&model, &source, &target, labels, config.scheme)?;
    let histograms = export_score_distributions(&grouped, config.scheme);
    Ok(RunOutcome {
        seed,
        config,
        model,
        log,
        report,
        scores,
        histograms,
    })
}

pub fn write_metrics(path: &Path, log: &[StepRecord]) -> Result<()> {
    let mut s = String::new();
    for r in log {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes `report.json` and the human-readable `summary.txt` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(dir.join(SUMMARY_FILE), report.summary_table())?;
    Ok(())
}

/// Writes the per-run artifacts and returns their file names.
pub fn write_outcome(outcome: &RunOutcome, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    write_metrics(&dir.join(METRICS_FILE), &outcome.log)?;
    write_report(dir, &outcome.report)?;
    write_score_dump(BufWriter::new(fs::File::create(dir.join(SCORES_FILE))?), &outcome.scores)?;
    write_histograms(BufWriter::new(fs::File::create(dir.join(HISTOGRAM_FILE))?), &outcome.histograms)?;
    outcome.model.save(&dir.join(CHECKPOINT_FILE))?;
    Ok([METRICS_FILE, REPORT_FILE, SUMMARY_FILE, SCORES_FILE, HISTOGRAM_FILE, CHECKPOINT_FILE]
        .iter()
        .map(|s| s.to_string())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub seed: u64,
    pub dir: String,
    pub files: Vec<String>,
    pub average_class_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: ExperimentPlan,
    pub runs: Vec<ManifestRun>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

/// Runs every repetition of every plan, `workers` at a time; results keep plan order.
pub fn run_all(plans: &[ExperimentPlan], workers: usize) -> Result<Vec<Vec<RunOutcome>>> {
    let jobs: Vec<(usize, usize)> = plans
        .iter()
        .enumerate()
        .flat_map(|(p, plan)| (0..plan.repetitions).map(move |r| (p, r)))
        .collect();
    let results: Vec<Result<RunOutcome>> = pool(workers)?
        .install(|| jobs.par_iter().map(|&(p, r)| run_repetition(&plans[p], r)).collect());
    let mut grouped: Vec<Vec<RunOutcome>> = plans.iter().map(|_| Vec::new()).collect();
    for (&(p, _), res) in jobs.iter().zip(results) {
        grouped[p].push(res?);
    }
    Ok(grouped)
}

/// Writes all artifacts of a finished plan plus its manifest.
pub fn write_plan(plan: &ExperimentPlan, outcomes: &[RunOutcome], root: &Path) -> Result<Manifest> {
    let mut runs = Vec::new();
    for o in outcomes {
        let dir = plan.run_dir(root, o.seed);
        let files = write_outcome(o, &dir)?;
        runs.push(ManifestRun {
            seed: o.seed,
            dir: format!("seed-{}", o.seed),
            files,
            average_class_accuracy: o.report.average_class_accuracy,
        });
    }
    let accs: Vec<f64> = outcomes.iter().map(|o| o.report.average_class_accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let manifest = Manifest {
        plan: plan.clone(),
        runs,
        mean_accuracy,
        std_accuracy,
    };
    let plan_dir = root.join(&plan.name);
    fs::write(plan_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Trains, evaluates and writes every repetition of `plan` under `root/<name>/`.
/// Nothing is written unless every repetition succeeds.
pub fn run(plan: &ExperimentPlan, root: &Path) -> Result<Manifest> {
    plan.validate()?;
    let outcomes = run_all(std::slice::from_ref(plan), plan.workers)?.pop().unwrap();
    write_plan(plan, &outcomes, root)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    WAlphaStatic,
    WBeta,
    W0,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::WAlphaStatic => "w_alpha_static",
            SweepParam::WBeta => "w_beta",
            SweepParam::W0 => "w0",
        }
    }

    fn apply(self, cfg: &mut TrainConfig, v: f64) {
        match self {
            SweepParam::WAlphaStatic => cfg.static_w_alpha = Some(v),
            SweepParam::WBeta => cfg.w_beta = v,
            SweepParam::W0 => cfg.w0 = v,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepParam::WAlphaStatic, SweepParam::WBeta, SweepParam::W0]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown sweep parameter {s:?}")))
    }
}

/// One row of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub plan: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub title: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, variant: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
        let mut s = format!("{}\n", self.title);
        writeln!(s, "{:<width$}  {:>7}  {:>6}  per-seed", "variant", "mean", "std").unwrap();
        for r in &self.rows {
            let seeds: Vec<String> = r.accuracies.iter().map(|a| format!("{:.2}", 100.0 * a)).collect();
            writeln!(
                s,
                "{:<width$}  {:>7.2}  {:>6.2}  {}",
                r.variant,
                100.0 * r.mean,
                100.0 * r.std,
                seeds.join(" ")
            )
            .unwrap();
        }
        s
    }
}

/// Plans for a sweep; each differs from `base` only in the swept parameter and the name.
pub fn sweep_plans(base: &ExperimentPlan, param: SweepParam, values: &[f64]) -> Result<Vec<ExperimentPlan>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    values
        .iter()
        .map(|&v| {
            let mut p = base.clone();
            param.apply(&mut p.train, v);
            p.name = format!("{}-{}-{v}", base.name, param.name());
            p.validate()?;
            Ok(p)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Every scoring scheme, thresholds at each scheme's defaults.
    Scoring,
    /// Pseudo-label and diversity-loss variants of the full method.
    Components,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scoring" => Ok(Ablation::Scoring),
            "components" => Ok(Ablation::Components),
            _ => Err(Error::config(format!("unknown ablation {s:?}"))),
        }
    }
}

/// `(row label, plan)` pairs of an ablation.
pub fn ablation_plans(base: &ExperimentPlan, ablation: Ablation) -> Vec<(String, ExperimentPlan)> {
    let variant = |label: &str, f: &dyn Fn(&mut TrainConfig)| {
        let mut p = base.clone();
        f(&mut p.train);
        p.name = format!("{}-{}", base.name, label.replace([' ', '=', ','], "_"));
        (label.to_string(), p)
    };
    match ablation {
        Ablation::Scoring => Scheme::ALL
            .iter()
            .map(|&s| {
                variant(s.name(), &|c: &mut TrainConfig| {
                    *c = c.clone().with_scheme(s);
                })
            })
            .collect(),
        Ablation::Components => vec![
            variant("full", &|_| {}),
            variant("no_pseudo_labels", &|c| c.pseudo_labels = false),
            variant("w_alpha=0", &|c| c.static_w_alpha = Some(0.0)),
            variant("static_w_alpha=1.2", &|c| c.static_w_alpha = Some(1.2)),
            variant("no_diversity", &|c| c.diversity_mode = crate::losses::DiversityMode::Off),
            variant("diversity_target_only", &|c| {
                c.diversity_mode = crate::losses::DiversityMode::TargetOnly
            }),
        ],
    }
}

fn table_from(title: String, labelled: &[(String, ExperimentPlan)], outcomes: &[Vec<RunOutcome>]) -> ComparisonTable {
    let rows = labelled
        .iter()
        .zip(outcomes)
        .map(|((label, plan), outs)| {
            let accuracies: Vec<f64> = outs.iter().map(|o| o.report.average_class_accuracy).collect();
            let (mean, std) = mean_std(&accuracies);
            ComparisonRow {
                variant: label.clone(),
                plan: plan.name.clone(),
                accuracies,
                mean,
                std,
            }
        })
        .collect();
    ComparisonTable { title, rows }
}

/// Runs a labelled set of plans, writes each plan's artifacts, and a comparison
/// table (`<stem>.txt` and `<stem>.json`) under `root`.
pub fn compare(
    title: String,
    stem: &str,
    labelled: &[(String, ExperimentPlan)],
    workers: usize,
    root: &Path,
) -> Result<ComparisonTable> {
    for (_, p) in labelled {
        p.validate()?;
    }
    let plans: Vec<ExperimentPlan> = labelled.iter().map(|(_, p)| p.clone()).collect();
    let outcomes = run_all(&plans, workers)?;
    for (plan, outs) in plans.iter().zip(&outcomes) {
        write_plan(plan, outs, root)?;
    }
    let table = table_from(title, labelled, &outcomes);
    fs::create_dir_all(root)?;
    fs::write(root.join(format!("{stem}.txt")), table.render())?;
    fs::write(root.join(format!("{stem}.json")), serde_json::to_string_pretty(&table)? + "\n")?;
    Ok(table)
}

pub fn sweep(base: &ExperimentPlan, param: SweepParam, values: &[f64], root: &Path) -> Result<ComparisonTable> {
    let plans = sweep_plans(base, param, values)?;
    let labelled: Vec<(String, ExperimentPlan)> = values
        .iter()
        .zip(plans)
        .map(|(v, p)| (format!("{}={v}", param.name()), p))
        .collect();
    let title = format!("{}: average class accuracy vs {}", base.name, param.name());
    compare(title, &format!("{}-sweep-{}", base.name, param.name()), &labelled, base.workers, root)
}

pub fn ablate(base: &ExperimentPlan, ablation: Ablation, root: &Path) -> Result<ComparisonTable> {
    let labelled = ablation_plans(base, ablation);
    let kind = match ablation {
        Ablation::Scoring => "scoring",
        Ablation::Components => "components",
    };
    let title = format!("{}: {kind} ablation, average class accuracy (%)", base.name);
    compare(title, &format!("{}-ablation-{kind}", base.name), &labelled, base.workers, root)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_plan() -> ExperimentPlan {
        let mut p = ExperimentPlan {
            name: "quick".into(),
            repetitions: 2,
            ..ExperimentPlan::default()
        };
        p.train.total_steps = 15;
        p.train.batch_size = 8;
        p.train.feature_hidden = vec![8];
        p.train.feature_dim = 6;
        p.train.domain_hidden = vec![6, 6];
        if let DataSource::Synthetic { synthetic, .. } = &mut p.data {
            synthetic.per_class = 5;
            synthetic.dim = 4;
        }
        p
    }

    #[test]
    fn plan_toml_round_trip_and_defaults() {
        let p = quick_plan();
        let back = ExperimentPlan::from_toml(&p.to_toml()).unwrap();
        assert_eq!(back, p);
        let minimal = ExperimentPlan::from_toml("name = \"x\"\n").unwrap();
        assert_eq!(minimal.train, TrainConfig::default());
        assert_eq!(minimal.data, DataSource::benchmark());
        assert!(ExperimentPlan::from_toml("name = \"x\"\nbogus = 3\n").is_err());
        assert!(ExperimentPlan::from_toml("repetitions = 0\n").is_err());
        assert!(ExperimentPlan::from_toml("[train]\nw0 = 3.0\n").is_err());
    }

    #[test]
    fn files_data_source_parses() {
        let text = r#"
name = "office"
[data]
kind = "files"
source = "a.csv"
target = "b.csv"
[data.labels]
shared = [0, 1]
source_private = [2]
target_private = [3]
"#;
        let p = ExperimentPlan::from_toml(text).unwrap();
        assert!(matches!(p.data, DataSource::Files { .. }));
        assert_eq!(p.data.labels().jaccard(), 0.5);
    }

    #[test]
    fn repetition_seeds_are_distinct() {
        let p = quick_plan();
        assert_ne!(p.repetition_seed(0), p.repetition_seed(1));
        assert_eq!(p.repetition_seed(1), quick_plan().repetition_seed(1));
    }

    #[test]
    fn run_writes_manifest_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p = quick_plan();
        let m1 = run(&p, dir.path()).unwrap();
        assert_eq!(m1.runs.len(), 2);
        let plan_dir = dir.path().join("quick");
        let snapshot = |d: &Path| -> Vec<(PathBuf, Vec<u8>)> {
            let mut v: Vec<_> = walk(d).into_iter().map(|f| { let b = fs::read(&f).unwrap(); (f, b) }).collect();
            v.sort();
            v
        };
        let first = snapshot(&plan_dir);
        // every file is referenced by the manifest
        for (f, _) in &first {
            let rel = f.strip_prefix(&plan_dir).unwrap().to_string_lossy().to_string();
            if rel == MANIFEST_FILE {
                continue;
            }
            let listed = m1.runs.iter().any(|r| r.files.iter().any(|x| format!("{}/{x}", r.dir) == rel));
            assert!(listed, "{rel} not in manifest");
        }
        run(&p, dir.path()).unwrap();
        assert_eq!(first, snapshot(&plan_dir));
        let metrics = fs::read_to_string(plan_dir.join(&m1.runs[0].dir).join(METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().count(), 15);
        let ck = ModelBundle::load(&plan_dir.join(&m1.runs[0].dir).join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ck.num_source_classes(), 6);
    }

    fn walk(d: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn sweep_plans_differ_only_in_swept_field() {
        let base = quick_plan();
        for (param, field) in [
            (SweepParam::W0, "w0"),
            (SweepParam::WBeta, "w_beta"),
            (SweepParam::WAlphaStatic, "static_w_alpha"),
        ] {
            let plans = sweep_plans(&base, param, &[0.0, 2.0]).unwrap();
            let b = serde_json::to_value(&base.train).unwrap();
            for p in plans {
                let v = serde_json::to_value(&p.train).unwrap();
                let diff: Vec<&String> = b
                    .as_object()
                    .unwrap()
                    .iter()
                    .filter(|(k, val)| v.get(k.as_str()) != Some(val))
                    .map(|(k, _)| k)
                    .collect();
                assert_eq!(diff, vec![field]);
                assert_eq!(p.data, base.data);
                assert_eq!(p.repetitions, base.repetitions);
            }
        }
        assert!(sweep_plans(&base, SweepParam::W0, &[]).is_err());
        assert!(sweep_plans(&base, SweepParam::W0, &[2.5]).is_err());
    }

    #[test]
    fn scoring_ablation_covers_every_scheme() {
        let rows = ablation_plans(&quick_plan(), Ablation::Scoring);
        let names: Vec<&str> = rows.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(names, vec!["ours", "uan", "entropy", "ours_no_d", "ours_no_maxy"]);
        for (_, p) in &rows {
            p.validate().unwrap();
        }
        let uan = &rows[1].1.train;
        assert_eq!((uan.scheme, uan.w0), (Scheme::Uan, 0.0));
    }

    #[test]
    fn sweep_writes_table() {
        let dir = tempfile::tempdir().unwrap();
        let base = ExperimentPlan { repetitions: 1, ..quick_plan() };
        let t = sweep(&base, SweepParam::W0, &[0.0, 2.0], dir.path()).unwrap();
        assert_eq!(t.rows.len(), 2);
        // w0 = 2 rejects everything: recall 1 on τ and 0 on the four shared classes
        assert_eq!(t.rows[1].mean, 0.2);
        assert!(dir.path().join("quick-sweep-w0.txt").exists());
        assert!(dir.path().join("quick-w0-2").join(MANIFEST_FILE).exists());
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }
}
