//! Loss terms built on the autodiff graph.
//!
//! Selection masks and pseudo-labels are computed from node *values* and
//! enter the graph only as row indices, so no gradient flows through them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scoring::argmax;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    Off,
    TargetOnly,
    #[default]
    Both,
}

impl std::str::FromStr for DiversityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(DiversityMode::Off),
            "target_only" => Ok(DiversityMode::TargetOnly),
            "both" => Ok(DiversityMode::Both),
            _ => Err(Error::config(format!("unknown diversity mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_bd: f64,
    pub l_d: f64,
    pub total: f64,
    pub n_pseudo_selected: usize,
    pub n_diversity_selected: usize,
}

fn rows(g: &Graph, n: NodeId) -> usize {
    g.value(n).rows_cols().0
}

/// Indices `i` with `scores[i] > threshold`.
pub fn select_above(scores: &[f64], threshold: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Sum over rows of `-ln p[row, label]`.
fn nll_sum(g: &mut Graph, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    let k = g.value(probs).rows_cols().1;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} out of range for {k} classes")));
    }
    let picked = g.pick(probs, labels)?;
    let logs = g.log_clamped(picked, PROB_FLOOR)?;
    let s = g.sum(logs)?;
    g.scale(s, -1.0)
}

/// Mean cross-entropy of probability rows against class indices.
pub fn cross_entropy(g: &mut Graph, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    let n = rows(g, probs);
    if labels.len() != n {
        return Err(Error::dim("cross_entropy", format!("{} labels for {n} rows", labels.len())));
    }
    let s = nll_sum(g, probs, labels)?;
    g.scale(s, 1.0 / n as f64)
}

/// Source cross-entropy plus `gamma` times the pseudo-label term over target rows
/// whose score exceeds `w_alpha`. The pseudo-label term is averaged over the whole
/// target batch, so unselected rows count as zeros.
///
/// Returns the loss node and the number of selected targets.
pub fn loss_classification(
    g: &mut Graph,
    source_probs: NodeId,
    source_labels: &[usize],
    target_probs: NodeId,
    target_scores: &[f64],
    w_alpha: f64,
    gamma: f64,
) -> Result<(NodeId, usize)> {
    if source_labels.is_empty() {
        return Err(Error::contract("classification loss needs source samples"));
    }
    if !(gamma >= 0.0) {
        return Err(Error::contract(format!("gamma must be >= 0, got {gamma}")));
    }
    let n_t = rows(g, target_probs);
    if target_scores.len() != n_t {
        return Err(Error::dim(
            "loss_classification",
            format!("{} scores for {n_t} target rows", target_scores.len()),
        ));
    }
    let source = cross_entropy(g, source_probs, source_labels)?;
    let selected = select_above(target_scores, w_alpha);
    if selected.is_empty() {
        return Ok((source, 0));
    }
    let pseudo: Vec<usize> = selected
        .iter()
        .map(|&i| argmax(g.value(target_probs).row(i)))
        .collect();
    let chosen = g.gather_rows(target_probs, &selected)?;
    let nll = nll_sum(g, chosen, &pseudo)?;
    let weighted = g.scale(nll, gamma / n_t as f64)?;
    Ok((g.add(source, weighted)?, selected.len()))
}

/// `Σ_j (mean_i p_ij)²` over the rows of `probs`.
pub fn diversity_term(g: &mut Graph, probs: NodeId) -> Result<NodeId> {
    let cm = g.col_mean(probs)?;
    let sq = g.square(cm)?;
    g.sum(sq)
}

/// Batch diversity over all source rows and the target rows scoring above `w_beta`.
///
/// Returns the loss node and the number of target rows used.
pub fn loss_batch_diversity(
    g: &mut Graph,
    source_probs: NodeId,
    target_probs: NodeId,
    target_scores: &[f64],
    w_beta: f64,
    mode: DiversityMode,
) -> Result<(NodeId, usize)> {
    if mode == DiversityMode::Off {
        return Ok((g.leaf(Tensor::scalar(0.0))?, 0));
    }
    let n_t = rows(g, target_probs);
    if target_scores.len() != n_t {
        return Err(Error::dim(
            "loss_batch_diversity",
            format!("{} scores for {n_t} target rows", target_scores.len()),
        ));
    }
    let selected = select_above(target_scores, w_beta);
    let chosen = if selected.is_empty() {
        None
    } else {
        Some(g.gather_rows(target_probs, &selected)?)
    };
    let pool = match (mode, chosen) {
        (DiversityMode::Both, Some(t)) => g.concat_rows(source_probs, t)?,
        (DiversityMode::Both, None) => source_probs,
        (DiversityMode::TargetOnly, Some(t)) => t,
        (DiversityMode::TargetOnly, None) => return Ok((g.leaf(Tensor::scalar(0.0))?, 0)),
        (DiversityMode::Off, _) => unreachable!(),
    };
    Ok((diversity_term(g, pool)?, selected.len()))
}

/// Binary cross-entropy with source labelled 1 and target labelled 0, each domain averaged separately.
pub fn loss_domain(g: &mut Graph, d_source: NodeId, d_target: NodeId) -> Result<NodeId> {
    if g.value(d_source).is_empty() || g.value(d_target).is_empty() {
        return Err(Error::contract("domain loss needs both domains"));
    }
    let ls = g.log_clamped(d_source, PROB_FLOOR)?;
    let ls = g.mean(ls)?;
    let neg = g.scale(d_target, -1.0)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let lt = g.log_clamped(one_minus, PROB_FLOOR)?;
    let lt = g.mean(lt)?;
    let both = g.add(ls, lt)?;
    g.scale(both, -1.0)
}

/// The three loss nodes of one step.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub l_c: NodeId,
    pub l_bd: NodeId,
    pub l_d: NodeId,
    pub n_pseudo_selected: usize,
    pub n_diversity_selected: usize,
}

/// Sums the three terms into one node. The domain term reaches `F` through
/// the gradient reversal layer, so minimising this sum trains `F` and `C`
/// against `L_C + L_BD - L_D` while `D` descends on `L_D`.
pub fn loss_compound(g: &mut Graph, parts: &LossParts) -> Result<(NodeId, LossBreakdown)> {
    let cb = g.add(parts.l_c, parts.l_bd)?;
    let total = g.add(cb, parts.l_d)?;
    let scalar = |n: NodeId| g.value(n).data()[0];
    let breakdown = LossBreakdown {
        l_c: scalar(parts.l_c),
        l_bd: scalar(parts.l_bd),
        l_d: scalar(parts.l_d),
        total: scalar(total),
        n_pseudo_selected: parts.n_pseudo_selected,
        n_diversity_selected: parts.n_diversity_selected,
    };
    Ok((total, breakdown))
}
