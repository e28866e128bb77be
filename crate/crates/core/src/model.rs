//! The three networks: feature extractor `F`, label classifier `C` and
//! domain classifier `D`, all plain MLPs.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    None,
    Softmax,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub final_activation: FinalActivation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        final_activation: FinalActivation,
    ) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            final_activation,
        }
    }

    /// `(fan_in, fan_out)` of each linear layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config(format!("{name}: all layer widths must be >= 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[fan_in × fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

/// Fully connected network with ReLU between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
}

impl Mlp {
    /// He-style uniform initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn init(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / fan_in as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Linear {
                    weight: Tensor::new(vec![fan_in, fan_out], w).expect("layer dims are positive"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Self { spec, layers }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    fn bind(&self, g: &mut Graph) -> Result<Vec<(NodeId, NodeId)>> {
        self.layers
            .iter()
            .map(|l| Ok((g.leaf(l.weight.clone())?, g.leaf(l.bias.clone())?)))
            .collect()
    }
}

/// Parameter leaves of one [`Mlp`] inside a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<(NodeId, NodeId)>,
    final_activation: FinalActivation,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul(h, w)?;
            h = g.add_bias(z, b)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        match self.final_activation {
            FinalActivation::None => Ok(h),
            FinalActivation::Softmax => g.softmax(h),
            FinalActivation::Sigmoid => g.sigmoid(h),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub feature: Mlp,
    pub classifier: Mlp,
    pub domain: Mlp,
}

/// A [`ModelBundle`] whose parameters live in a [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub feature: BoundMlp,
    pub classifier: BoundMlp,
    pub domain: BoundMlp,
}

impl BoundModel {
    pub fn features(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        self.feature.forward(g, x)
    }

    /// `ȳ = C(F(x))` from precomputed features.
    pub fn label_probs(&self, g: &mut Graph, features: NodeId) -> Result<NodeId> {
        self.classifier.forward(g, features)
    }

    /// `d = D(GRL(F(x)))` from precomputed features.
    pub fn domain_probs(&self, g: &mut Graph, features: NodeId, lambda: f64) -> Result<NodeId> {
        let reversed = g.grad_reverse(features, lambda)?;
        self.domain.forward(g, reversed)
    }

    /// Every parameter leaf in the same order as [`ModelBundle::named_params`].
    pub fn params(&self) -> Vec<NodeId> {
        self.feature
            .params()
            .chain(self.classifier.params())
            .chain(self.domain.params())
            .collect()
    }
}

impl ModelBundle {
    pub fn init(spec_f: MlpSpec, spec_c: MlpSpec, spec_d: MlpSpec, seed: u64) -> Result<Self> {
        spec_f.validate("feature extractor")?;
        spec_c.validate("label classifier")?;
        spec_d.validate("domain classifier")?;
        Self::check_compatible(&spec_f, &spec_c, &spec_d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feature = Mlp::init(spec_f, &mut rng);
        let classifier = Mlp::init(spec_c, &mut rng);
        let domain = Mlp::init(spec_d, &mut rng);
        Ok(Self {
            feature,
            classifier,
            domain,
        })
    }

    fn check_compatible(f: &MlpSpec, c: &MlpSpec, d: &MlpSpec) -> Result<()> {
        if c.input_dim != f.output_dim || d.input_dim != f.output_dim {
            return Err(Error::config(format!(
                "classifier input {} and domain input {} must equal feature dim {}",
                c.input_dim, d.input_dim, f.output_dim
            )));
        }
        if d.output_dim != 1 {
            return Err(Error::config("domain classifier must have one output"));
        }
        if c.final_activation != FinalActivation::Softmax {
            return Err(Error::config("label classifier must end in softmax"));
        }
        if d.final_activation != FinalActivation::Sigmoid {
            return Err(Error::config("domain classifier must end in sigmoid"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.feature.spec.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature.spec.output_dim
    }

    pub fn num_source_classes(&self) -> usize {
        self.classifier.spec.output_dim
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel> {
        Ok(BoundModel {
            feature: BoundMlp {
                layers: self.feature.bind(g)?,
                final_activation: self.feature.spec.final_activation,
            },
            classifier: BoundMlp {
                layers: self.classifier.bind(g)?,
                final_activation: self.classifier.spec.final_activation,
            },
            domain: BoundMlp {
                layers: self.domain.bind(g)?,
                final_activation: self.domain.spec.final_activation,
            },
        })
    }

    fn nets(&self) -> [(&'static str, &Mlp); 3] {
        [("f", &self.feature), ("c", &self.classifier), ("d", &self.domain)]
    }

    /// `(name, tensor)` for every parameter, e.g. `f.0.weight`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (net, mlp) in self.nets() {
            for (i, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{net}.{i}.weight"), &l.weight));
                out.push((format!("{net}.{i}.bias"), &l.bias));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for mlp in [&mut self.feature, &mut self.classifier, &mut self.domain] {
            for l in &mut mlp.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    /// All parameters concatenated in [`named_params`](Self::named_params) order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.named_params()
            .into_iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        match x.shape() {
            [_, d] if *d == self.input_dim() => Ok(()),
            s => Err(Error::dim(
                "forward",
                format!("expected [batch × {}], got {s:?}", self.input_dim()),
            )),
        }
    }

    /// Rows of `ȳ(x)`, shape `[batch × |Y_s|]`.
    pub fn forward_label(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g)?;
        let xn = g.leaf(x.clone())?;
        let feats = bound.features(&mut g, xn)?;
        let probs = bound.label_probs(&mut g, feats)?;
        Ok(g.value(probs).clone())
    }

    /// `d(x)` in `(0,1)`, shape `[batch × 1]`.
    pub fn forward_domain(&self, x: &Tensor, lambda: f64) -> Result<Tensor> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g)?;
        let xn = g.leaf(x.clone())?;
        let feats = bound.features(&mut g, xn)?;
        let d = bound.domain_probs(&mut g, feats, lambda)?;
        Ok(g.value(d).clone())
    }

    /// Both heads from one pass: `(ȳ, d)`.
    pub fn forward_both(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g)?;
        let xn = g.leaf(x.clone())?;
        let feats = bound.features(&mut g, xn)?;
        let probs = bound.label_probs(&mut g, feats)?;
        let d = bound.domain_probs(&mut g, feats, 1.0)?;
        Ok((g.value(probs).clone(), g.value(d).clone()))
    }

    /// Writes the text checkpoint format:
    ///
    /// ```text
    /// uda-checkpoint 1
    /// spec f {"input_dim":..}
    /// spec c {..}
    /// spec d {..}
    /// param f.0.weight 16 64
    /// <space separated values>
    /// ...
    /// ```
    ///
    /// Values use Rust's shortest round-trip float formatting, so loading
    /// reproduces every parameter bit for bit.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::from("uda-checkpoint 1\n");
        for (net, mlp) in self.nets() {
            writeln!(s, "spec {net} {}", serde_json::to_string(&mlp.spec)?).unwrap();
        }
        for (name, t) in self.named_params() {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            writeln!(s, "param {name} {}", dims.join(" ")).unwrap();
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "{}", vals.join(" ")).unwrap();
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn read_checkpoint<R: Read>(input: R, origin: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = BufReader::new(input).lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(perr(0, format!("unexpected end of file, expected {what}"))),
            }
        };
        let (n, header) = next("header")?;
        if header.trim() != "uda-checkpoint 1" {
            return Err(perr(n, format!("bad header {header:?}")));
        }
        let mut specs = Vec::new();
        for net in ["f", "c", "d"] {
            let (n, line) = next("spec line")?;
            let rest = line
                .strip_prefix(&format!("spec {net} "))
                .ok_or_else(|| perr(n, format!("expected spec for {net}")))?;
            let spec: MlpSpec =
                serde_json::from_str(rest).map_err(|e| perr(n, e.to_string()))?;
            specs.push(spec);
        }
        let d = specs.pop().unwrap();
        let c = specs.pop().unwrap();
        let f = specs.pop().unwrap();
        let mut model = ModelBundle::init(f, c, d, 0)?;
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let (n, line) = next("param line")?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some("param") || parts.next() != Some(name.as_str()) {
                return Err(perr(n, format!("expected param {name}")));
            }
            let dims: Vec<usize> = parts
                .map(|p| p.parse().map_err(|_| perr(n, format!("bad dim {p:?}"))))
                .collect::<Result<_>>()?;
            if dims != slot.shape() {
                return Err(perr(n, format!("{name}: shape {dims:?} != {:?}", slot.shape())));
            }
            let (n, line) = next("values")?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|p| p.parse().map_err(|_| perr(n, format!("bad float {p:?}"))))
                .collect::<Result<_>>()?;
            if vals.len() != slot.len() {
                return Err(perr(n, format!("{name}: {} values, need {}", vals.len(), slot.len())));
            }
            slot.data_mut().copy_from_slice(&vals);
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(std::fs::File::open(path)?, path)
    }
}
