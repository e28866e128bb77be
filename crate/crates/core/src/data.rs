//! Label-set partitions, synthetic domain pairs, feature files and batch sampling.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

/// An evaluation label: a shared class or the unknown symbol τ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpenLabel {
    Class(usize),
    Unknown,
}

impl fmt::Display for OpenLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpenLabel::Class(c) => write!(f, "{c}"),
            OpenLabel::Unknown => f.write_str("tau"),
        }
    }
}

/// Partition of class ids into shared, source-private and target-private sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSets", into = "RawLabelSets")]
pub struct LabelSetSpec {
    shared: Vec<usize>,
    source_private: Vec<usize>,
    target_private: Vec<usize>,
    source_classes: Vec<usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawLabelSets {
    shared: Vec<usize>,
    source_private: Vec<usize>,
    target_private: Vec<usize>,
}

impl TryFrom<RawLabelSets> for LabelSetSpec {
    type Error = Error;

    fn try_from(r: RawLabelSets) -> Result<Self> {
        LabelSetSpec::new(r.shared, r.source_private, r.target_private)
    }
}

impl From<LabelSetSpec> for RawLabelSets {
    fn from(s: LabelSetSpec) -> Self {
        RawLabelSets {
            shared: s.shared,
            source_private: s.source_private,
            target_private: s.target_private,
        }
    }
}

impl LabelSetSpec {
    pub fn new(
        shared: Vec<usize>,
        source_private: Vec<usize>,
        target_private: Vec<usize>,
    ) -> Result<Self> {
        let norm = |v: Vec<usize>, what: &str| -> Result<Vec<usize>> {
            let set: BTreeSet<usize> = v.iter().copied().collect();
            if set.len() != v.len() {
                return Err(Error::config(format!("duplicate class id in {what}")));
            }
            Ok(set.into_iter().collect())
        };
        let shared = norm(shared, "shared")?;
        let source_private = norm(source_private, "source_private")?;
        let target_private = norm(target_private, "target_private")?;
        let all: BTreeSet<usize> = shared
            .iter()
            .chain(&source_private)
            .chain(&target_private)
            .copied()
            .collect();
        if all.len() != shared.len() + source_private.len() + target_private.len() {
            return Err(Error::config("label sets must be pairwise disjoint"));
        }
        let source_classes: Vec<usize> = shared
            .iter()
            .chain(&source_private)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if source_classes.is_empty() {
            return Err(Error::config("source label set is empty"));
        }
        Ok(Self {
            shared,
            source_private,
            target_private,
            source_classes,
        })
    }

    /// Dense ids: shared first, then source-private, then target-private.
    pub fn dense(n_shared: usize, n_source_private: usize, n_target_private: usize) -> Result<Self> {
        let a = n_shared;
        let b = a + n_source_private;
        let c = b + n_target_private;
        Self::new((0..a).collect(), (a..b).collect(), (b..c).collect())
    }

    pub fn shared(&self) -> &[usize] {
        &self.shared
    }

    pub fn source_private(&self) -> &[usize] {
        &self.source_private
    }

    pub fn target_private(&self) -> &[usize] {
        &self.target_private
    }

    /// `Y_s` in ascending id order; position in this list is the classifier output index.
    pub fn source_classes(&self) -> &[usize] {
        &self.source_classes
    }

    pub fn target_classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.shared.iter().chain(&self.target_private).copied().collect();
        set.into_iter().collect()
    }

    pub fn all_classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .shared
            .iter()
            .chain(&self.source_private)
            .chain(&self.target_private)
            .copied()
            .collect();
        set.into_iter().collect()
    }

    pub fn num_source_classes(&self) -> usize {
        self.source_classes.len()
    }

    /// `|Y| / |Y_s ∪ Y_t|`.
    pub fn jaccard(&self) -> f64 {
        self.shared.len() as f64 / self.all_classes().len() as f64
    }

    pub fn source_index(&self, class: usize) -> Option<usize> {
        self.source_classes.binary_search(&class).ok()
    }

    pub fn source_class(&self, index: usize) -> usize {
        self.source_classes[index]
    }

    pub fn is_shared(&self, class: usize) -> bool {
        self.shared.binary_search(&class).is_ok()
    }

    pub fn is_source_private(&self, class: usize) -> bool {
        self.source_private.binary_search(&class).is_ok()
    }

    /// Ground-truth mapping for target evaluation: shared ids stay, everything else is τ.
    pub fn open_label(&self, class: usize) -> OpenLabel {
        if self.is_shared(class) {
            OpenLabel::Class(class)
        } else {
            OpenLabel::Unknown
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    domain: Domain,
    features: Tensor,
    labels: Option<Vec<usize>>,
}

/// Features of a dataset with its labels out of reach.
#[derive(Clone, Copy, Debug)]
pub struct Inputs<'a>(&'a Tensor);

impl<'a> Inputs<'a> {
    pub fn features(&self) -> &'a Tensor {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows_cols().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DomainDataset {
    pub fn new(domain: Domain, features: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::dim("dataset", "features must be [n × dim]"));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows_cols().0 {
                return Err(Error::dim(
                    "dataset",
                    format!("{} labels for {} rows", l.len(), features.rows_cols().0),
                ));
            }
        }
        Ok(Self {
            domain,
            features,
            labels,
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.features.rows_cols().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.rows_cols().1
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn inputs(&self) -> Inputs<'_> {
        Inputs(&self.features)
    }

    /// Copy without labels.
    pub fn without_labels(&self) -> Self {
        Self {
            domain: self.domain,
            features: self.features.clone(),
            labels: None,
        }
    }
}

/// Affine map applied to target samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    /// Rotation angle (radians) inside a random 2-D subspace.
    pub rotation: f64,
    /// Norm of the translation, along a random unit direction.
    pub translation: f64,
    pub scale: f64,
    /// Multiplier on the per-class noise std for target samples.
    pub noise_scale: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            rotation: 0.0,
            translation: 0.0,
            scale: 1.0,
            noise_scale: 1.0,
        }
    }
}

impl ShiftConfig {
    pub fn identity() -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub per_class: usize,
    /// Std of the Gaussian class centres.
    pub center_scale: f64,
    /// Std of the centres of target-private classes.
    pub private_center_scale: f64,
    /// Within-class std.
    pub cluster_std: f64,
    pub shift: ShiftConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            per_class: 60,
            center_scale: 0.25,
            private_center_scale: 0.1,
            cluster_std: 0.125,
            shift: ShiftConfig {
                rotation: 0.6,
                translation: 0.25,
                scale: 1.1,
                noise_scale: 1.2,
            },
        }
    }
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct AffineShift {
    u: Vec<f64>,
    v: Vec<f64>,
    cos: f64,
    sin: f64,
    scale: f64,
    offset: Vec<f64>,
}

impl AffineShift {
    fn draw(cfg: &ShiftConfig, dim: usize, rng: &mut impl Rng) -> Self {
        let mut u = gaussian_vec(rng, dim);
        normalize(&mut u);
        let mut v = gaussian_vec(rng, dim);
        let p = dot(&u, &v);
        v.iter_mut().zip(&u).for_each(|(vi, ui)| *vi -= p * ui);
        normalize(&mut v);
        let mut dir = gaussian_vec(rng, dim);
        normalize(&mut dir);
        Self {
            u,
            v,
            cos: cfg.rotation.cos(),
            sin: cfg.rotation.sin(),
            scale: cfg.scale,
            offset: dir.iter().map(|d| d * cfg.translation).collect(),
        }
    }

    fn apply(&self, x: &mut [f64]) {
        let a = dot(x, &self.u);
        let b = dot(x, &self.v);
        let ra = self.cos * a - self.sin * b;
        let rb = self.sin * a + self.cos * b;
        for i in 0..x.len() {
            let rotated = x[i] + (ra - a) * self.u[i] + (rb - b) * self.v[i];
            x[i] = self.scale * rotated + self.offset[i];
        }
    }
}

/// Isotropic Gaussian blobs per class. Source samples come from `Y_s`;
/// target samples come from `Y_t` and are passed through a seeded affine shift.
pub fn gen_synthetic(
    spec: &LabelSetSpec,
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if cfg.dim < 2 {
        return Err(Error::config("synthetic dim must be >= 2"));
    }
    if cfg.per_class == 0 {
        return Err(Error::config("per_class must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = spec.all_classes();
    let centers: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let s = if spec.target_private().contains(&c) {
                cfg.private_center_scale
            } else {
                cfg.center_scale
            };
            gaussian_vec(&mut rng, cfg.dim).iter().map(|x| x * s).collect()
        })
        .collect();
    let center_of = |c: usize| &centers[classes.binary_search(&c).unwrap()];
    let shift = AffineShift::draw(&cfg.shift, cfg.dim, &mut rng);

    let mut blob = |classes: &[usize], std: f64, shifted: bool| {
        let mut data = Vec::with_capacity(classes.len() * cfg.per_class * cfg.dim);
        let mut labels = Vec::with_capacity(classes.len() * cfg.per_class);
        for &c in classes {
            let mu = center_of(c);
            for _ in 0..cfg.per_class {
                let mut x: Vec<f64> = gaussian_vec(&mut rng, cfg.dim)
                    .iter()
                    .zip(mu)
                    .map(|(e, m)| m + std * e)
                    .collect();
                if shifted {
                    shift.apply(&mut x);
                }
                data.extend_from_slice(&x);
                labels.push(c);
            }
        }
        (data, labels)
    };

    let (sx, sy) = blob(spec.source_classes(), cfg.cluster_std, false);
    let tc = spec.target_classes();
    let (tx, ty) = blob(&tc, cfg.cluster_std * cfg.shift.noise_scale, true);
    let source = DomainDataset::new(
        Domain::Source,
        Tensor::matrix(sy.len(), cfg.dim, sx)?,
        Some(sy),
    )?;
    if ty.is_empty() {
        return Err(Error::config("target label set is empty"));
    }
    let target = DomainDataset::new(
        Domain::Target,
        Tensor::matrix(ty.len(), cfg.dim, tx)?,
        Some(ty),
    )?;
    Ok((source, target))
}

/// How [`load_features`] treats a label column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    /// File must carry labels; they are kept.
    Require,
    /// File must not carry labels.
    Refuse,
    /// Labels are dropped if present.
    Ignore,
}

/// Feature file:
///
/// ```text
/// # uda-features dim=<d> count=<n> labeled=<0|1>
/// x_1,...,x_d[,label]
/// ```
pub fn save_features(path: &Path, ds: &DomainDataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_features(std::io::BufWriter::new(file), ds)
}

pub fn write_features<W: Write>(mut out: W, ds: &DomainDataset) -> Result<()> {
    writeln!(
        out,
        "# uda-features dim={} count={} labeled={}",
        ds.dim(),
        ds.len(),
        u8::from(ds.labels.is_some())
    )?;
    let mut line = String::new();
    for i in 0..ds.len() {
        line.clear();
        for (j, v) in ds.features.row(i).iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:?}"));
        }
        if let Some(l) = &ds.labels {
            line.push_str(&format!(",{}", l[i]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn parse_header(line: &str) -> Option<(usize, usize, bool)> {
    let rest = line.strip_prefix("# uda-features")?;
    let (mut dim, mut count, mut labeled) = (None, None, None);
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        match k {
            "dim" => dim = v.parse().ok(),
            "count" => count = v.parse().ok(),
            "labeled" => labeled = matches!(v, "1" | "true").then_some(true).or(Some(false)),
            _ => return None,
        }
    }
    Some((dim?, count?, labeled?))
}

/// Loads a feature file. `known_classes`, when given, rejects any label outside it.
pub fn load_features(
    path: &Path,
    domain: Domain,
    labels: LabelColumn,
    known_classes: Option<&[usize]>,
) -> Result<DomainDataset> {
    let file = std::fs::File::open(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return Err(err(1, "empty file".into())),
    };
    let (dim, count, has_labels) =
        parse_header(header.trim()).ok_or_else(|| err(1, format!("bad header {header:?}")))?;
    if dim == 0 {
        return Err(err(1, "dim must be >= 1".into()));
    }
    match (labels, has_labels) {
        (LabelColumn::Require, false) => return Err(err(1, "file has no label column".into())),
        (LabelColumn::Refuse, true) => {
            return Err(err(1, "file carries labels but an unlabeled file was expected".into()))
        }
        _ => {}
    }
    let width = dim + usize::from(has_labels);
    let mut data = Vec::with_capacity(count * dim);
    let mut ys = Vec::with_capacity(count);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(err(line_no, format!("expected {width} fields, got {}", fields.len())));
        }
        for f in &fields[..dim] {
            let v: f64 = f
                .parse()
                .map_err(|_| err(line_no, format!("non-numeric field {f:?}")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("non-finite value {f:?}")));
            }
            data.push(v);
        }
        if has_labels {
            let f = fields[dim];
            let y: usize = f
                .parse()
                .map_err(|_| err(line_no, format!("bad class id {f:?}")))?;
            if let Some(known) = known_classes {
                if !known.contains(&y) {
                    return Err(err(line_no, format!("unknown class id {y}")));
                }
            }
            ys.push(y);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(err(2, "no samples".into()));
    }
    if rows != count {
        return Err(err(1, format!("header says {count} rows, found {rows}")));
    }
    let keep = has_labels && labels == LabelColumn::Require;
    DomainDataset::new(
        domain,
        Tensor::matrix(rows, dim, data)?,
        keep.then_some(ys),
    )
}

/// One training batch: half source, half target.
#[derive(Clone, Debug)]
pub struct DomainBatch {
    pub source_x: Tensor,
    pub source_y: Vec<usize>,
    pub target_x: Tensor,
}

impl DomainBatch {
    pub fn source_len(&self) -> usize {
        self.source_y.len()
    }

    pub fn target_len(&self) -> usize {
        self.target_x.rows_cols().0
    }
}

fn gather(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (_, d) = t.rows_cols();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::matrix(rows.len(), d, data)
}

/// Uniform sampling with replacement, `batch_size / 2` from each domain.
pub fn sample_batch(
    src: &DomainDataset,
    tgt: Inputs<'_>,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<DomainBatch> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(Error::contract(format!(
            "batch size must be even and >= 2, got {batch_size}"
        )));
    }
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::contract("cannot sample from an empty dataset"));
    }
    let labels = src
        .labels()
        .ok_or_else(|| Error::contract("source dataset has no labels"))?;
    let half = batch_size / 2;
    let si: Vec<usize> = (0..half).map(|_| rng.gen_range(0..src.len())).collect();
    let ti: Vec<usize> = (0..half).map(|_| rng.gen_range(0..tgt.len())).collect();
    Ok(DomainBatch {
        source_x: gather(src.features(), &si)?,
        source_y: si.iter().map(|&i| labels[i]).collect(),
        target_x: gather(tgt.features(), &ti)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cfg(shift: ShiftConfig) -> SyntheticConfig {
        SyntheticConfig {
            dim: 5,
            per_class: 400,
            center_scale: 3.0,
            private_center_scale: 3.0,
            cluster_std: 0.5,
            shift,
        }
    }

    fn class_mean(ds: &DomainDataset, class: usize) -> Vec<f64> {
        let labels = ds.labels().unwrap();
        let mut acc = vec![0.0; ds.dim()];
        let mut n = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y == class {
                acc.iter_mut().zip(ds.features().row(i)).for_each(|(a, x)| *a += x);
                n += 1.0;
            }
        }
        acc.iter().map(|a| a / n).collect()
    }

    #[test]
    fn label_set_validation() {
        assert!(LabelSetSpec::new(vec![0, 1], vec![1], vec![]).is_err());
        assert!(LabelSetSpec::new(vec![], vec![], vec![3]).is_err());
        assert!(LabelSetSpec::new(vec![0, 0], vec![], vec![]).is_err());
        let s = LabelSetSpec::new(vec![5, 2], vec![7], vec![1]).unwrap();
        assert_eq!(s.source_classes(), &[2, 5, 7]);
        assert_eq!(s.target_classes(), vec![1, 2, 5]);
        assert_eq!(s.source_index(7), Some(2));
        assert_eq!(s.source_index(1), None);
        assert_eq!(s.open_label(2), OpenLabel::Class(2));
        assert_eq!(s.open_label(1), OpenLabel::Unknown);
    }

    #[test]
    fn default_benchmark_jaccard() {
        let s = LabelSetSpec::dense(4, 2, 6).unwrap();
        assert!((s.jaccard() - 4.0 / 12.0).abs() < 1e-15);
        assert_eq!(s.num_source_classes(), 6);
    }

    #[test]
    fn label_set_serde() {
        let s = LabelSetSpec::dense(2, 1, 1).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"shared":[0,1],"source_private":[2],"target_private":[3]}"#);
        let back: LabelSetSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<LabelSetSpec>(
            r#"{"shared":[0],"source_private":[0],"target_private":[]}"#
        )
        .is_err());
    }

    #[test]
    fn identity_shift_closed_set_means_agree() {
        let spec = LabelSetSpec::dense(3, 0, 0).unwrap();
        let (s, t) = gen_synthetic(&spec, &small_cfg(ShiftConfig::identity()), 4).unwrap();
        assert_eq!(s.len(), t.len());
        // std of a 400-sample mean with cluster std 0.5 is 0.025; allow 5σ
        for c in 0..3 {
            for (a, b) in class_mean(&s, c).iter().zip(class_mean(&t, c)) {
                assert!((a - b).abs() < 5.0 * 0.5 * (2.0f64 / 400.0).sqrt(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn partial_set_geometry() {
        let spec = LabelSetSpec::dense(3, 2, 0).unwrap();
        let cfg = SyntheticConfig { per_class: 10, ..SyntheticConfig::default() };
        let (s, t) = gen_synthetic(&spec, &cfg, 1).unwrap();
        let sl: BTreeSet<usize> = s.labels().unwrap().iter().copied().collect();
        let tl: BTreeSet<usize> = t.labels().unwrap().iter().copied().collect();
        assert_eq!(sl, (0..5).collect());
        assert_eq!(tl, (0..3).collect());
        assert!(tl.is_subset(&sl));
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = LabelSetSpec::dense(4, 2, 6).unwrap();
        let cfg = SyntheticConfig::default();
        let a = gen_synthetic(&spec, &cfg, 42).unwrap();
        let b = gen_synthetic(&spec, &cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&spec, &cfg, 43).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn generator_rejects_bad_config() {
        let spec = LabelSetSpec::dense(2, 0, 0).unwrap();
        let cfg = SyntheticConfig { dim: 1, ..SyntheticConfig::default() };
        assert!(gen_synthetic(&spec, &cfg, 0).is_err());
        let cfg = SyntheticConfig { per_class: 0, ..SyntheticConfig::default() };
        assert!(gen_synthetic(&spec, &cfg, 0).is_err());
    }

    #[test]
    fn rotation_preserves_norm_without_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ShiftConfig { rotation: 1.1, ..ShiftConfig::identity() };
        let shift = AffineShift::draw(&cfg, 6, &mut rng);
        let x0 = gaussian_vec(&mut rng, 6);
        let mut x = x0.clone();
        shift.apply(&mut x);
        assert!((dot(&x, &x) - dot(&x0, &x0)).abs() < 1e-12);
        assert!(x.iter().zip(&x0).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn feature_file_round_trip() {
        let spec = LabelSetSpec::dense(2, 1, 1).unwrap();
        let cfg = SyntheticConfig { dim: 3, per_class: 4, ..SyntheticConfig::default() };
        let (s, _) = gen_synthetic(&spec, &cfg, 9).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_features(f.path(), &s).unwrap();
        let back = load_features(f.path(), Domain::Source, LabelColumn::Require, Some(&[0, 1, 2])).unwrap();
        assert_eq!(back, s);
        let dropped = load_features(f.path(), Domain::Source, LabelColumn::Ignore, None).unwrap();
        assert_eq!(dropped.labels(), None);
        assert_eq!(dropped.features(), s.features());
        assert!(load_features(f.path(), Domain::Target, LabelColumn::Refuse, None).is_err());
        // unknown class id
        let e = load_features(f.path(), Domain::Source, LabelColumn::Require, Some(&[0, 1])).unwrap_err();
        assert!(matches!(e, Error::Parse { .. }), "{e}");
    }

    #[test]
    fn feature_file_errors_carry_line_numbers() {
        let f = write_tmp("");
        assert!(matches!(
            load_features(f.path(), Domain::Source, LabelColumn::Ignore, None),
            Err(Error::Parse { line: 1, .. })
        ));
        let f = write_tmp("# uda-features dim=2 count=0 labeled=0\n");
        assert!(load_features(f.path(), Domain::Target, LabelColumn::Refuse, None).is_err());
        let f = write_tmp("# uda-features dim=2 count=2 labeled=0\n1.0,2.0\n3.0\n");
        assert!(matches!(
            load_features(f.path(), Domain::Target, LabelColumn::Refuse, None),
            Err(Error::Parse { line: 3, .. })
        ));
        let f = write_tmp("# uda-features dim=2 count=1 labeled=0\n1.0,abc\n");
        assert!(matches!(
            load_features(f.path(), Domain::Target, LabelColumn::Refuse, None),
            Err(Error::Parse { line: 2, .. })
        ));
        let f = write_tmp("# uda-features dim=2 count=1 labeled=0\n1.0,2.0\n");
        assert!(load_features(f.path(), Domain::Target, LabelColumn::Require, None).is_err());
    }

    #[test]
    fn batch_halves_and_determinism() {
        let spec = LabelSetSpec::dense(2, 1, 1).unwrap();
        let cfg = SyntheticConfig { per_class: 5, ..SyntheticConfig::default() };
        let (s, t) = gen_synthetic(&spec, &cfg, 0).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let a = sample_batch(&s, t.inputs(), 8, &mut r1).unwrap();
            let b = sample_batch(&s, t.inputs(), 8, &mut r2).unwrap();
            assert_eq!(a.source_len(), 4);
            assert_eq!(a.target_len(), 4);
            assert_eq!(a.source_x, b.source_x);
            assert_eq!(a.target_x, b.target_x);
            assert_eq!(a.source_y, b.source_y);
        }
        assert!(sample_batch(&s, t.inputs(), 7, &mut r1).is_err());
        assert!(sample_batch(&s, t.inputs(), 0, &mut r1).is_err());
        let unlabeled = s.without_labels();
        assert!(sample_batch(&unlabeled, t.inputs(), 4, &mut r1).is_err());
    }

    #[test]
    fn batch_selection_frequency_is_uniform() {
        // rows carry their own index as the single feature value
        let n = 10;
        let feats = Tensor::matrix(n, 2, (0..n).flat_map(|i| [i as f64, 0.0]).collect()).unwrap();
        let src = DomainDataset::new(Domain::Source, feats.clone(), Some(vec![0; n])).unwrap();
        let tgt = DomainDataset::new(Domain::Target, feats, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut counts = vec![0u32; n];
        let batches = 10_000;
        for _ in 0..batches {
            let b = sample_batch(&src, tgt.inputs(), 8, &mut rng).unwrap();
            for r in 0..4 {
                counts[b.source_x.row(r)[0] as usize] += 1;
            }
        }
        let trials = (batches * 4) as f64;
        let p = 1.0 / n as f64;
        let mean = trials * p;
        let sigma = (trials * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "{c} vs {mean}±{sigma}");
        }
    }

    proptest! {
        #[test]
        fn jaccard_matches_set_arithmetic(assign in prop::collection::vec(0u8..4, 1..30)) {
            // 0 → shared, 1 → source private, 2 → target private, 3 → unused
            let pick = |k: u8| assign.iter().enumerate().filter(|(_, &a)| a == k).map(|(i, _)| i).collect::<Vec<_>>();
            let (sh, sp, tp) = (pick(0), pick(1), pick(2));
            prop_assume!(!(sh.is_empty() && sp.is_empty()));
            let spec = LabelSetSpec::new(sh.clone(), sp.clone(), tp.clone()).unwrap();
            let ys: BTreeSet<usize> = sh.iter().chain(&sp).copied().collect();
            let yt: BTreeSet<usize> = sh.iter().chain(&tp).copied().collect();
            let inter = ys.intersection(&yt).count() as f64;
            let union = ys.union(&yt).count() as f64;
            prop_assert_eq!(spec.jaccard(), inter / union);
        }
    }
}
