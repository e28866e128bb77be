//! Sample transfer scores and the competing schemes used in the ablations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::model::ModelBundle;

const SUM_TOL: f64 = 1e-9;

/// Which score drives selection and rejection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `d(x) + max ȳ(x)`
    Ours,
    /// `d(x) - H(ȳ(x)) / ln|Y_s|`
    Uan,
    /// `1 - H(ȳ(x)) / ln|Y_s|`
    Entropy,
    /// `max ȳ(x)` alone
    OursNoD,
    /// `d(x)` alone
    OursNoMaxy,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Ours,
        Scheme::Uan,
        Scheme::Entropy,
        Scheme::OursNoD,
        Scheme::OursNoMaxy,
    ];

    /// Closed interval every score of this scheme falls in.
    pub fn range(self) -> (f64, f64) {
        match self {
            Scheme::Ours => (0.0, 2.0),
            Scheme::Uan => (-1.0, 1.0),
            Scheme::Entropy | Scheme::OursNoD | Scheme::OursNoMaxy => (0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ours => "ours",
            Scheme::Uan => "uan",
            Scheme::Entropy => "entropy",
            Scheme::OursNoD => "ours_no_d",
            Scheme::OursNoMaxy => "ours_no_maxy",
        }
    }

    pub fn score(self, d: f64, y_bar: &[f64]) -> Result<f64> {
        match self {
            Scheme::Ours => score_ours(d, y_bar),
            Scheme::Uan => score_uan(d, y_bar),
            Scheme::Entropy => score_entropy(y_bar),
            Scheme::OursNoD => {
                check_distribution(y_bar)?;
                Ok(max_prob(y_bar))
            }
            Scheme::OursNoMaxy => {
                check_unit(d)?;
                Ok(d)
            }
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scoring scheme {s:?}")))
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRecord {
    pub d: f64,
    pub y_bar: Vec<f64>,
    pub max_prob: f64,
    pub entropy: f64,
    pub w: f64,
}

impl ScoreRecord {
    /// Index of the most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.y_bar)
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn max_prob(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::contract("empty probability vector"));
    }
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::contract(format!("probability entry {v} is negative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::contract(format!("probabilities sum to {s}")));
    }
    Ok(())
}

fn check_unit(d: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::contract(format!("domain probability {d} outside [0,1]")));
    }
    Ok(())
}

/// Shannon entropy in nats with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    let h: f64 = p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum();
    Ok(h.clamp(0.0, (p.len() as f64).ln()))
}

fn normalized_entropy(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::contract(format!(
            "entropy normalisation needs at least 2 classes, got {}",
            p.len()
        )));
    }
    Ok((entropy(p)? / (p.len() as f64).ln()).clamp(0.0, 1.0))
}

pub fn score_ours(d: f64, y_bar: &[f64]) -> Result<f64> {
    check_unit(d)?;
    check_distribution(y_bar)?;
    Ok(d + max_prob(y_bar))
}

pub fn score_uan(d: f64, y_bar: &[f64]) -> Result<f64> {
    check_unit(d)?;
    Ok(d - normalized_entropy(y_bar)?)
}

/// Source-side counterpart of [`score_uan`]: `-w_t(x)`.
pub fn score_uan_source(d: f64, y_bar: &[f64]) -> Result<f64> {
    Ok(-score_uan(d, y_bar)?)
}

pub fn score_entropy(y_bar: &[f64]) -> Result<f64> {
    Ok(1.0 - normalized_entropy(y_bar)?)
}

/// Builds records from already computed label probabilities `[n × k]` and domain outputs `[n × 1]`.
pub fn records_from(probs: &Tensor, d: &Tensor, scheme: Scheme) -> Result<Vec<ScoreRecord>> {
    let (n, _) = probs.rows_cols();
    if d.len() != n {
        return Err(Error::dim(
            "score_batch",
            format!("{n} prediction rows but {} domain outputs", d.len()),
        ));
    }
    (0..n)
        .map(|i| {
            let y_bar = probs.row(i).to_vec();
            let di = d.data()[i];
            Ok(ScoreRecord {
                d: di,
                max_prob: max_prob(&y_bar),
                entropy: entropy(&y_bar)?,
                w: scheme.score(di, &y_bar)?,
                y_bar,
            })
        })
        .collect()
}

/// Scores every row of `x` without touching any gradient state.
pub fn score_batch(m: &ModelBundle, x: &Tensor, scheme: Scheme) -> Result<Vec<ScoreRecord>> {
    let (probs, d) = m.forward_both(x)?;
    records_from(&probs, &d, scheme)
}

/// One row of the score dump.
#[derive(Clone, Debug)]
pub struct TaggedScore {
    pub id: usize,
    pub domain: Domain,
    pub label: Option<usize>,
    pub record: ScoreRecord,
}

/// Writes `id,domain,label,d,max_prob,entropy,w` rows (label empty when unknown).
pub fn write_score_dump<W: Write>(mut out: W, rows: &[TaggedScore]) -> Result<()> {
    writeln!(out, "id,domain,label,d,max_prob,entropy,w")?;
    for r in rows {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{:?},{:?},{:?},{:?}",
            r.id, r.domain, label, r.record.d, r.record.max_prob, r.record.entropy, r.record.w
        )?;
    }
    Ok(())
}
