//! Deployment decisions with τ-rejection and the |Y|+1 class-averaged accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, LabelSetSpec, OpenLabel};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::scoring::{score_batch, Scheme, ScoreRecord};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: usize,
    /// Most probable source class id.
    pub raw_argmax: usize,
    pub w: f64,
    pub decision: OpenLabel,
}

/// Predicts the argmax class when `w > w0`, otherwise τ.
pub fn decide(id: usize, record: &ScoreRecord, w0: f64, labels: &LabelSetSpec) -> Prediction {
    let raw_argmax = labels.source_class(record.argmax());
    let decision = if record.w > w0 {
        OpenLabel::Class(raw_argmax)
    } else {
        OpenLabel::Unknown
    };
    Prediction {
        id,
        raw_argmax,
        w: record.w,
        decision,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    /// Class id, or `"tau"`.
    pub label: String,
    pub support: usize,
    pub correct: usize,
    /// `None` when the class has no test samples.
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub count: usize,
    pub mean_d: f64,
    pub mean_max_prob: f64,
    pub mean_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub w0: f64,
    pub num_samples: usize,
    pub per_class: Vec<ClassRecall>,
    /// Mean of the per-class recalls over `Y ∪ {τ}` (classes with support only).
    pub average_class_accuracy: f64,
    /// Fraction of all samples decided correctly.
    pub micro_accuracy: f64,
    pub predicted_unknown: usize,
    pub groups: Vec<GroupSummary>,
}

fn recall_table(
    truth: &[OpenLabel],
    decisions: &[OpenLabel],
    labels: &LabelSetSpec,
) -> (Vec<ClassRecall>, f64, f64) {
    let mut table: BTreeMap<OpenLabel, (usize, usize)> = labels
        .shared()
        .iter()
        .map(|&c| (OpenLabel::Class(c), (0, 0)))
        .chain(std::iter::once((OpenLabel::Unknown, (0, 0))))
        .collect();
    let mut hits = 0;
    for (t, d) in truth.iter().zip(decisions) {
        let e = table.get_mut(t).expect("truth is always in Y ∪ {τ}");
        e.0 += 1;
        if t == d {
            e.1 += 1;
            hits += 1;
        }
    }
    let mut recalls = Vec::new();
    let per_class: Vec<ClassRecall> = table
        .into_iter()
        .map(|(label, (support, correct))| {
            let recall = (support > 0).then(|| correct as f64 / support as f64);
            match recall {
                Some(r) => recalls.push(r),
                None => log::warn!("class {label} has no test samples; left out of the average"),
            }
            ClassRecall {
                label: label.to_string(),
                support,
                correct,
                recall,
            }
        })
        .collect();
    let macro_avg = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let micro = hits as f64 / truth.len() as f64;
    (per_class, macro_avg, micro)
}

/// Scores and decides every target sample, then compares with the hidden labels.
pub fn evaluate(
    m: &ModelBundle,
    target: &DomainDataset,
    labels: &LabelSetSpec,
    w0: f64,
    scheme: Scheme,
) -> Result<EvalReport> {
    let ys = target
        .labels()
        .ok_or_else(|| Error::contract("evaluation needs the target's hidden labels"))?;
    if ys.is_empty() {
        return Err(Error::contract("target set is empty"));
    }
    let records = score_batch(m, target.features(), scheme)?;
    Ok(evaluate_records(&records, ys, labels, w0, scheme))
}

/// Same as [`evaluate`] on precomputed score records.
pub fn evaluate_records(
    records: &[ScoreRecord],
    ys: &[usize],
    labels: &LabelSetSpec,
    w0: f64,
    scheme: Scheme,
) -> EvalReport {
    let truth: Vec<OpenLabel> = ys.iter().map(|&y| labels.open_label(y)).collect();
    let decisions: Vec<OpenLabel> = records
        .iter()
        .enumerate()
        .map(|(i, r)| decide(i, r, w0, labels).decision)
        .collect();
    let (per_class, average_class_accuracy, micro_accuracy) =
        recall_table(&truth, &decisions, labels);

    let mut groups = Vec::new();
    for (name, keep) in [("target-shared", true), ("target-private", false)] {
        let sel: Vec<&ScoreRecord> = records
            .iter()
            .zip(&truth)
            .filter(|(_, t)| matches!(t, OpenLabel::Class(_)) == keep)
            .map(|(r, _)| r)
            .collect();
        if sel.is_empty() {
            continue;
        }
        let n = sel.len() as f64;
        groups.push(GroupSummary {
            group: name.into(),
            count: sel.len(),
            mean_d: sel.iter().map(|r| r.d).sum::<f64>() / n,
            mean_max_prob: sel.iter().map(|r| r.max_prob).sum::<f64>() / n,
            mean_w: sel.iter().map(|r| r.w).sum::<f64>() / n,
        });
    }

    EvalReport {
        scheme,
        w0,
        num_samples: records.len(),
        per_class,
        average_class_accuracy,
        micro_accuracy,
        predicted_unknown: decisions.iter().filter(|d| **d == OpenLabel::Unknown).count(),
        groups,
    }
}

impl EvalReport {
    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "scheme {}  w0 {}  samples {}", self.scheme, self.w0, self.num_samples).unwrap();
        writeln!(s, "{:<8} {:>8} {:>8} {:>8}", "class", "support", "correct", "recall").unwrap();
        for c in &self.per_class {
            let r = c.recall.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into());
            writeln!(s, "{:<8} {:>8} {:>8} {:>8}", c.label, c.support, c.correct, r).unwrap();
        }
        writeln!(s, "average class accuracy {:.4}", self.average_class_accuracy).unwrap();
        writeln!(s, "micro accuracy         {:.4}", self.micro_accuracy).unwrap();
        writeln!(s, "predicted tau          {}", self.predicted_unknown).unwrap();
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    SourceShared,
    SourcePrivate,
    TargetShared,
    TargetPrivate,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::SourceShared => "source-shared",
            Group::SourcePrivate => "source-private",
            Group::TargetShared => "target-shared",
            Group::TargetPrivate => "target-private",
        }
    }
}

/// Scores every labelled sample of both domains and tags it with its group.
pub fn grouped_scores(
    m: &ModelBundle,
    source: &DomainDataset,
    target: &DomainDataset,
    labels: &LabelSetSpec,
    scheme: Scheme,
) -> Result<Vec<(Group, ScoreRecord)>> {
    let mut out = Vec::new();
    for (ds, shared, private) in [
        (source, Group::SourceShared, Group::SourcePrivate),
        (target, Group::TargetShared, Group::TargetPrivate),
    ] {
        let ys = ds
            .labels()
            .ok_or_else(|| Error::contract("grouping needs labels"))?;
        let recs = score_batch(m, ds.features(), scheme)?;
        for (r, &y) in recs.into_iter().zip(ys) {
            let g = if labels.is_shared(y) { shared } else { private };
            out.push((g, r));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub group: Group,
    pub quantity: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0; HISTOGRAM_BINS];
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    for v in values {
        let b = ((v - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(HISTOGRAM_BINS - 1) };
        counts[b] += 1;
    }
    counts
}

/// Fixed-bin histograms of `d`, `max ȳ` and `w` for each group present in `records`.
pub fn export_score_distributions(records: &[(Group, ScoreRecord)], scheme: Scheme) -> Vec<Histogram> {
    let mut groups: Vec<Group> = records.iter().map(|(g, _)| *g).collect();
    groups.sort();
    groups.dedup();
    let (wlo, whi) = scheme.range();
    let mut out = Vec::new();
    for g in groups {
        let sel = || records.iter().filter(move |(gg, _)| *gg == g).map(|(_, r)| r);
        out.push(Histogram { group: g, quantity: "d", lo: 0.0, hi: 1.0, counts: histogram(sel().map(|r| r.d), 0.0, 1.0) });
        out.push(Histogram {
            group: g,
            quantity: "max_prob",
            lo: 0.0,
            hi: 1.0,
            counts: histogram(sel().map(|r| r.max_prob), 0.0, 1.0),
        });
        out.push(Histogram { group: g, quantity: "w", lo: wlo, hi: whi, counts: histogram(sel().map(|r| r.w), wlo, whi) });
    }
    out
}

/// `group,quantity,bin,bin_lo,bin_hi,count`
pub fn write_histograms<W: Write>(mut out: W, hists: &[Histogram]) -> Result<()> {
    writeln!(out, "group,quantity,bin,bin_lo,bin_hi,count")?;
    for h in hists {
        let width = (h.hi - h.lo) / HISTOGRAM_BINS as f64;
        for (i, c) in h.counts.iter().enumerate() {
            let lo = h.lo + width * i as f64;
            let hi = h.lo + width * (i + 1) as f64;
            writeln!(out, "{},{},{},{:?},{:?},{}", h.group.name(), h.quantity, i, lo, hi, c)?;
        }
    }
    Ok(())
}
