//! Training loop: paired batches, thresholded pseudo-labels, batch diversity,
//! and adversarial alignment through the gradient reversal layer, updated with
//! SGD + momentum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::{sample_batch, DomainBatch, DomainDataset, Inputs, LabelSetSpec};
use crate::error::{Error, Result};
use crate::losses::{
    loss_batch_diversity, loss_classification, loss_compound, loss_domain, select_above,
    DiversityMode, LossBreakdown, LossParts,
};
use crate::model::{BoundModel, FinalActivation, MlpSpec, ModelBundle};
use crate::scoring::{argmax, records_from, Scheme};

/// Starting value of the dynamic pseudo-label threshold for the `ours` score.
pub const ALPHA_START: f64 = 1.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrlMode {
    #[default]
    Constant,
    /// `lambda · (2 / (1 + exp(-10 t/T)) - 1)`
    Ramp,
}

impl std::str::FromStr for GrlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(GrlMode::Constant),
            "ramp" => Ok(GrlMode::Ramp),
            _ => Err(Error::config(format!("unknown GRL mode {s:?}"))),
        }
    }
}

/// Thresholds expressed in one scheme's native score range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub w0: f64,
    pub w_beta: f64,
    pub alpha_start: f64,
}

impl Thresholds {
    /// Defaults for `scheme`: the `ours` values (1.0, 0.8, 1.5) on `[0,2]`
    /// carried affinely onto the scheme's own range.
    pub fn for_scheme(scheme: Scheme) -> Self {
        let (lo, hi) = scheme.range();
        let map = |x: f64| lo + (hi - lo) * x / 2.0;
        Self {
            w0: map(1.0),
            w_beta: map(0.8),
            alpha_start: map(ALPHA_START),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub w0: f64,
    pub w_beta: f64,
    /// Value of the dynamic threshold at step 0.
    pub alpha_start: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub grl_mode: GrlMode,
    pub grl_lambda: f64,
    pub scheme: Scheme,
    /// Replaces the dynamic schedule with a constant threshold.
    pub static_w_alpha: Option<f64>,
    pub diversity_mode: DiversityMode,
    pub pseudo_labels: bool,
    pub seed: u64,
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub classifier_hidden: Vec<usize>,
    pub domain_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.6,
            w0: 1.0,
            w_beta: 0.8,
            alpha_start: ALPHA_START,
            total_steps: 3000,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            grl_mode: GrlMode::Constant,
            grl_lambda: 0.02,
            scheme: Scheme::Ours,
            static_w_alpha: None,
            diversity_mode: DiversityMode::Both,
            pseudo_labels: true,
            seed: 0,
            feature_hidden: vec![64, 64],
            feature_dim: 32,
            classifier_hidden: vec![],
            domain_hidden: vec![64, 64],
        }
    }
}

impl TrainConfig {
    /// Switches scheme and resets the thresholds to that scheme's defaults.
    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        let th = Thresholds::for_scheme(scheme);
        self.scheme = scheme;
        self.w0 = th.w0;
        self.w_beta = th.w_beta;
        self.alpha_start = th.alpha_start;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scheme.range();
        let in_range = |name: &str, v: f64| {
            if !(lo..=hi).contains(&v) {
                Err(Error::config(format!(
                    "{name}={v} outside the [{lo}, {hi}] range of scheme {}",
                    self.scheme
                )))
            } else {
                Ok(())
            }
        };
        in_range("w0", self.w0)?;
        if !self.w_beta.is_finite() || !self.alpha_start.is_finite() {
            return Err(Error::config("thresholds must be finite"));
        }
        if let Some(s) = self.static_w_alpha {
            if !s.is_finite() {
                return Err(Error::config("static_w_alpha must be finite"));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::config("gamma must be >= 0"));
        }
        if !(self.grl_lambda >= 0.0) {
            return Err(Error::config("grl_lambda must be >= 0"));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::config("batch_size must be even and >= 2"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be >= 1"));
        }
        Ok(())
    }

    pub fn model_specs(&self, input_dim: usize, num_classes: usize) -> (MlpSpec, MlpSpec, MlpSpec) {
        (
            MlpSpec::new(input_dim, &self.feature_hidden, self.feature_dim, FinalActivation::None),
            MlpSpec::new(self.feature_dim, &self.classifier_hidden, num_classes, FinalActivation::Softmax),
            MlpSpec::new(self.feature_dim, &self.domain_hidden, 1, FinalActivation::Sigmoid),
        )
    }

    /// Pseudo-label threshold in force at step `t`, or `None` when pseudo-labels are off.
    pub fn threshold_at(&self, t: usize) -> Option<f64> {
        if !self.pseudo_labels {
            return None;
        }
        Some(match self.static_w_alpha {
            Some(w) => w,
            None => w_alpha_from(self.alpha_start, t, self.total_steps.max(1), self.w0),
        })
    }

    pub fn grl_at(&self, t: usize) -> f64 {
        match self.grl_mode {
            GrlMode::Constant => self.grl_lambda,
            GrlMode::Ramp => {
                let p = t as f64 / self.total_steps.max(1) as f64;
                self.grl_lambda * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
            }
        }
    }
}

/// Dynamic pseudo-label threshold: `1.5 - (t/T)(1.5 - w0)`.
pub fn w_alpha(t: usize, total: usize, w0: f64) -> f64 {
    w_alpha_from(ALPHA_START, t, total, w0)
}

/// Linear decay from `start` at `t = 0` to `w0` at `t = total`.
pub fn w_alpha_from(start: f64, t: usize, total: usize, w0: f64) -> f64 {
    assert!(total >= 1 && t <= total, "w_alpha needs 0 <= t <= T, T >= 1");
    // (1-f)·start + f·w0 equals start - f·(start - w0) and hits both endpoints exactly
    let f = t as f64 / total as f64;
    (1.0 - f) * start + f * w0
}

/// Knobs for a single loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct StepParams {
    pub scheme: Scheme,
    /// `None` disables pseudo-labels.
    pub w_alpha: Option<f64>,
    pub w_beta: f64,
    pub gamma: f64,
    pub diversity_mode: DiversityMode,
    pub grl_lambda: f64,
}

impl StepParams {
    pub fn from_config(cfg: &TrainConfig, t: usize) -> Self {
        Self {
            scheme: cfg.scheme,
            w_alpha: cfg.threshold_at(t),
            w_beta: cfg.w_beta,
            gamma: cfg.gamma,
            diversity_mode: cfg.diversity_mode,
            grl_lambda: cfg.grl_at(t),
        }
    }
}

/// The loss graph of one batch, before `backward`.
pub struct StepGraph {
    pub graph: Graph,
    pub bound: BoundModel,
    pub total: NodeId,
    pub breakdown: LossBreakdown,
    pub target_scores: Vec<f64>,
    pub pseudo_selected: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
    pub diversity_selected: Vec<usize>,
}

fn stack(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = a.rows_cols();
    let (rb, cb) = b.rows_cols();
    if ca != cb {
        return Err(Error::dim("batch", format!("source width {ca} != target width {cb}")));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(ra + rb, ca, data)
}

/// Builds the compound loss for `batch`. `source_idx` are classifier output indices.
pub fn build_step(
    model: &ModelBundle,
    batch: &DomainBatch,
    source_idx: &[usize],
    p: &StepParams,
) -> Result<StepGraph> {
    let ns = batch.source_len();
    let nt = batch.target_len();
    if ns == 0 || nt == 0 {
        return Err(Error::contract("batch needs at least one sample per domain"));
    }
    let mut g = Graph::new();
    let bound = model.bind(&mut g)?;
    let x = g.leaf(stack(&batch.source_x, &batch.target_x)?)?;
    let feats = bound.features(&mut g, x)?;
    let probs = bound.label_probs(&mut g, feats)?;
    let d = bound.domain_probs(&mut g, feats, p.grl_lambda)?;

    let src_rows: Vec<usize> = (0..ns).collect();
    let tgt_rows: Vec<usize> = (ns..ns + nt).collect();
    let sp = g.gather_rows(probs, &src_rows)?;
    let tp = g.gather_rows(probs, &tgt_rows)?;
    let ds = g.gather_rows(d, &src_rows)?;
    let dt = g.gather_rows(d, &tgt_rows)?;

    let records = records_from(g.value(tp), g.value(dt), p.scheme)?;
    let scores: Vec<f64> = records.iter().map(|r| r.w).collect();
    let alpha = p.w_alpha.unwrap_or(f64::INFINITY);

    let (l_c, n_pseudo) = loss_classification(&mut g, sp, source_idx, tp, &scores, alpha, p.gamma)?;
    let (l_bd, n_div) = loss_batch_diversity(&mut g, sp, tp, &scores, p.w_beta, p.diversity_mode)?;
    let l_d = loss_domain(&mut g, ds, dt)?;
    let parts = LossParts {
        l_c,
        l_bd,
        l_d,
        n_pseudo_selected: n_pseudo,
        n_diversity_selected: n_div,
    };
    let (total, breakdown) = loss_compound(&mut g, &parts)?;

    let pseudo_selected = select_above(&scores, alpha);
    let pseudo_labels = pseudo_selected.iter().map(|&i| argmax(&records[i].y_bar)).collect();
    let diversity_selected = match p.diversity_mode {
        DiversityMode::Off => vec![],
        _ => select_above(&scores, p.w_beta),
    };
    Ok(StepGraph {
        graph: g,
        bound,
        total,
        breakdown,
        target_scores: scores,
        pseudo_selected,
        pseudo_labels,
        diversity_selected,
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_c: f64,
    pub l_bd: f64,
    pub l_d: f64,
    pub total: f64,
    pub n_pseudo_selected: usize,
    pub n_diversity_selected: usize,
    pub w_alpha: Option<f64>,
    pub grl_lambda: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub t: usize,
    pub model: ModelBundle,
    velocity: Vec<Vec<f64>>,
}

impl TrainState {
    pub fn new(model: ModelBundle) -> Self {
        let velocity = model
            .named_params()
            .into_iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self { t: 0, model, velocity }
    }
}

fn source_indices(labels: &LabelSetSpec, ys: &[usize]) -> Result<Vec<usize>> {
    ys.iter()
        .map(|&y| {
            labels
                .source_index(y)
                .ok_or_else(|| Error::contract(format!("source label {y} is not in Y_s")))
        })
        .collect()
}

/// Forward, compound loss, backward and one SGD-momentum update on every parameter.
pub fn train_step(
    state: &mut TrainState,
    batch: &DomainBatch,
    labels: &LabelSetSpec,
    cfg: &TrainConfig,
) -> Result<StepRecord> {
    if state.t >= cfg.total_steps {
        return Err(Error::contract(format!(
            "step {} is past the configured {} steps",
            state.t, cfg.total_steps
        )));
    }
    let t = state.t;
    let abort = |e: Error| match e {
        Error::Numeric { op } => Error::NumericAbort {
            step: t,
            reason: format!("non-finite value in {op}"),
        },
        other => other,
    };
    let idx = source_indices(labels, &batch.source_y)?;
    let params = StepParams::from_config(cfg, t);
    let mut step = build_step(&state.model, batch, &idx, &params).map_err(abort)?;
    if !step.breakdown.total.is_finite() {
        return Err(Error::NumericAbort {
            step: t,
            reason: "loss is not finite".into(),
        });
    }
    step.graph.backward(step.total)?;

    let param_nodes = step.bound.params();
    for ((slot, vel), node) in state
        .model
        .params_mut()
        .into_iter()
        .zip(&mut state.velocity)
        .zip(param_nodes)
    {
        let grad = step.graph.grad(node).data();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericAbort {
                step: t,
                reason: "non-finite gradient".into(),
            });
        }
        for ((p, v), &g) in slot.data_mut().iter_mut().zip(vel.iter_mut()).zip(grad) {
            *v = cfg.momentum * *v + g;
            *p -= cfg.lr * *v;
        }
    }
    state.t += 1;
    let b = step.breakdown;
    Ok(StepRecord {
        step: t,
        l_c: b.l_c,
        l_bd: b.l_bd,
        l_d: b.l_d,
        total: b.total,
        n_pseudo_selected: b.n_pseudo_selected,
        n_diversity_selected: b.n_diversity_selected,
        w_alpha: params.w_alpha,
        grl_lambda: params.grl_lambda,
    })
}

/// splitmix64, used to derive independent stream seeds from one config seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn init_model(input_dim: usize, labels: &LabelSetSpec, cfg: &TrainConfig) -> Result<ModelBundle> {
    let (f, c, d) = cfg.model_specs(input_dim, labels.num_source_classes());
    ModelBundle::init(f, c, d, derive_seed(cfg.seed, 1))
}

/// Runs `cfg.total_steps` steps. Only the target's features are visible here.
pub fn train(
    source: &DomainDataset,
    target: Inputs<'_>,
    labels: &LabelSetSpec,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, Vec<StepRecord>)> {
    cfg.validate()?;
    if target.features().rows_cols().1 != source.dim() {
        return Err(Error::config("source and target feature widths differ"));
    }
    let model = init_model(source.dim(), labels, cfg)?;
    let mut state = TrainState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut log = Vec::with_capacity(cfg.total_steps);
    while state.t < cfg.total_steps {
        let batch = sample_batch(source, target, cfg.batch_size, &mut rng)?;
        let rec = train_step(&mut state, &batch, labels, cfg)?;
        log::trace!("step {} total {:.5}", rec.step, rec.total);
        log.push(rec);
    }
    Ok((state.model, log))
}
