//! Single-backbone classifiers and feature, logit and hybrid fusion of up to
//! three backbones.
//!
//! Feature fusion concatenates the pooled member features, optionally
//! projects them to `reduced_dim`, and applies a two-layer head
//! (linear, ReLU, dropout, linear) that emits one logit per sample.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::Linear;
use crate::nn::presets::DESK_INPUT_SIZE;
use crate::nn::{BackboneArch, BackboneSpec, Ctx, Family, ParamStore, ScalePreset};
use crate::tensor::ops::{self, Mode};
use crate::tensor::{Elem, Tensor, Var};

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, TocEntry,
    CHECKPOINT_END, CHECKPOINT_MAGIC,
};

pub const DEFAULT_HIDDEN_WIDTH: usize = 512;
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_HYBRID_WEIGHT: f64 = 0.5;
pub const DESK_REDUCED_DIM: usize = 128;
pub const PAPER_REDUCED_DIM: usize = 1024;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Samples per forward slice in eval-mode inference.
pub const EVAL_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Feature,
    Logit,
    Hybrid,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Feature => "feature",
            Strategy::Logit => "logit",
            Strategy::Hybrid => "hybrid",
        }
    }
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN_WIDTH
}

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

fn default_hybrid_weight() -> f64 {
    DEFAULT_HYBRID_WEIGHT
}

/// Architecture of a classifier over one to three backbones.
///
/// `reduced_dim` is the width of the projection applied to the concatenated
/// features. A single backbone feeds its features straight into the head, so
/// it leaves `reduced_dim` unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSpec {
    #[serde(default)]
    pub reduced_dim: Option<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_width: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_hybrid_weight")]
    pub hybrid_weight: f64,
    /// Per-member weights of the logit average; uniform when absent.
    #[serde(default)]
    pub logit_weights: Option<Vec<f64>>,
    pub members: Vec<BackboneSpec>,
}

impl FusionSpec {
    pub fn single(member: BackboneSpec) -> Self {
        Self {
            reduced_dim: None,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            dropout: DEFAULT_DROPOUT,
            strategy: Strategy::Feature,
            hybrid_weight: DEFAULT_HYBRID_WEIGHT,
            logit_weights: None,
            members: vec![member],
        }
    }

    /// Feature fusion of the given families at one scale with that scale's
    /// default reduced width.
    pub fn preset(families: &[Family], scale: ScalePreset) -> Self {
        let members: Vec<BackboneSpec> = families.iter().map(|&f| BackboneSpec::preset(f, scale)).collect();
        let reduced_dim = (members.len() > 1).then_some(match scale {
            ScalePreset::Desk => DESK_REDUCED_DIM,
            ScalePreset::Paper => PAPER_REDUCED_DIM,
        });
        Self {
            reduced_dim,
            members,
            ..Self::single(BackboneSpec::desk(Family::Residual))
        }
    }

    pub fn desk(families: &[Family]) -> Self {
        Self::preset(families, ScalePreset::Desk)
    }

    pub fn paper(families: &[Family]) -> Self {
        Self::preset(families, ScalePreset::Paper)
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn input_size(&self) -> usize {
        self.members.first().map_or(DESK_INPUT_SIZE, |m| m.input_size)
    }

    pub fn concat_dim(&self) -> usize {
        self.members.iter().map(BackboneSpec::feature_dim).sum()
    }

    /// Short model label, such as `Res` or `Res+Eff+Den`.
    pub fn label(&self) -> String {
        let names: Vec<&str> = self.members.iter().map(|m| m.family.short_label()).collect();
        let mut label = names.join("+");
        if self.strategy != Strategy::Feature {
            label.push_str(&format!(" ({})", self.strategy.as_str()));
        }
        label
    }

    /// Parses and validates a spec written as a TOML table.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self =
            toml::from_str(text).map_err(|e| Error::Config(vec![format!("fusion spec: {}", e.message().trim())]))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let n = self.members.len();
        if !(1..=3).contains(&n) {
            problems.push(format!("fusion needs 1 to 3 members, got {n}"));
        }
        for (i, m) in self.members.iter().enumerate() {
            if let Err(e) = m.validate() {
                problems.push(format!("member {i}: {e}"));
            }
        }
        if let Some(first) = self.members.first() {
            for (i, m) in self.members.iter().enumerate().skip(1) {
                if m.input_size != first.input_size {
                    problems.push(format!(
                        "member {i} input_size {} differs from member 0 input_size {}",
                        m.input_size, first.input_size
                    ));
                }
            }
        }
        if n == 1 && self.strategy != Strategy::Feature {
            problems.push(format!(
                "a single backbone only supports the feature strategy, got {}",
                self.strategy.as_str()
            ));
        }
        let concat = self.concat_dim();
        match self.reduced_dim {
            None if n > 1 && self.strategy != Strategy::Logit => {
                problems.push("reduced_dim is required when fusing features of several backbones".into())
            }
            Some(0) => problems.push("reduced_dim must be >= 1".into()),
            Some(d) if d > concat => {
                problems.push(format!("reduced_dim {d} exceeds the concatenated feature width {concat}"))
            }
            _ => {}
        }
        if self.hidden_width == 0 {
            problems.push("hidden_width must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.hybrid_weight) {
            problems.push(format!("hybrid_weight {} outside [0, 1]", self.hybrid_weight));
        }
        if let Some(w) = &self.logit_weights {
            if let Err(e) = check_weights(w, n) {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn logit_weights_or_uniform(&self) -> Vec<f64> {
        self.logit_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.members.len() as f64; self.members.len()])
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::invalid(format!("{} logit weights for {n} members", weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid(format!("logit weights {weights:?} must be non-negative")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("logit weights {weights:?} sum to {total}, not 1")));
    }
    Ok(())
}

/// Linear, ReLU, dropout, linear to one logit per sample.
#[derive(Debug, Clone)]
pub struct Head {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

impl Head {
    fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), input, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, 1, rng),
            dropout,
        }
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }

    /// `[N, d]` → logits `[N]`.
    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let h = ops::relu(&self.fc1.forward(ctx, x)?);
        let h = match ctx.mode() {
            Mode::Train if self.dropout > 0.0 => ops::dropout(&h, self.dropout, Mode::Train, ctx.rng()?)?,
            _ => h,
        };
        let y = self.fc2.forward(ctx, &h)?;
        let n = y.shape()[0];
        ops::reshape(&y, &[n])
    }
}

/// Layer layout of a fusion classifier; weights live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct FusionArch {
    spec: FusionSpec,
    members: Vec<BackboneArch>,
    offsets: Vec<usize>,
    reduction: Option<Linear>,
    head: Option<Head>,
    aux: Vec<Head>,
}

impl FusionArch {
    pub fn build_into<T: Elem>(store: &mut ParamStore<T>, spec: &FusionSpec, rng: &mut dyn RngCore) -> Result<Self> {
        spec.validate()?;
        let mut members = Vec::with_capacity(spec.members.len());
        let mut offsets = Vec::with_capacity(spec.members.len());
        let mut offset = 0;
        for (i, m) in spec.members.iter().enumerate() {
            let arch = BackboneArch::build_into(store, &format!("members.{i}"), m, rng)?;
            offsets.push(offset);
            offset += arch.feature_dim();
            members.push(arch);
        }
        let uses_feature_head = spec.strategy != Strategy::Logit;
        let reduction = match spec.reduced_dim {
            Some(d) if uses_feature_head => Some(Linear::new(store, "reduction", offset, d, rng)),
            _ => None,
        };
        let head = uses_feature_head.then(|| {
            let input = spec.reduced_dim.unwrap_or(offset);
            Head::new(store, "head", input, spec.hidden_width, spec.dropout, rng)
        });
        let aux = if spec.strategy == Strategy::Feature {
            Vec::new()
        } else {
            members
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    Head::new(store, &format!("aux.{i}"), m.feature_dim(), spec.hidden_width, spec.dropout, rng)
                })
                .collect()
        };
        Ok(Self {
            spec: spec.clone(),
            members,
            offsets,
            reduction,
            head,
            aux,
        })
    }

    pub fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    pub fn members(&self) -> &[BackboneArch] {
        &self.members
    }

    /// Column offset of each member's features within the concatenation.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn concat_dim(&self) -> usize {
        self.members.iter().map(BackboneArch::feature_dim).sum()
    }

    pub fn reduction(&self) -> Option<&Linear> {
        self.reduction.as_ref()
    }

    pub fn head(&self) -> Option<&Head> {
        self.head.as_ref()
    }

    pub fn aux_heads(&self) -> &[Head] {
        &self.aux
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size()
    }

    /// Analytic trainable-parameter count summed over declared layers.
    pub fn param_count(&self) -> usize {
        self.members.iter().map(BackboneArch::param_count).sum::<usize>()
            + self.reduction.as_ref().map_or(0, Linear::param_count)
            + self.head.as_ref().map_or(0, Head::param_count)
            + self.aux.iter().map(Head::param_count).sum::<usize>()
    }

    pub fn member_features<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Vec<Var<T>>> {
        self.members.iter().map(|m| m.forward(ctx, x)).collect()
    }

    fn feature_logits<T: Elem>(&self, ctx: &mut Ctx<'_, T>, features: &[Var<T>]) -> Result<Var<T>> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no feature-fusion head"))?;
        let f = if features.len() == 1 {
            features[0].clone()
        } else {
            ops::concat(features)?
        };
        let f = match &self.reduction {
            Some(r) => r.forward(ctx, &f)?,
            None => f,
        };
        head.forward(ctx, &f)
    }

    fn member_logits<T: Elem>(&self, ctx: &mut Ctx<'_, T>, features: &[Var<T>]) -> Result<Var<T>> {
        let logits = self
            .aux
            .iter()
            .zip(features)
            .map(|(h, f)| h.forward(ctx, f))
            .collect::<Result<Vec<_>>>()?;
        ops::weighted_sum(&logits, &self.spec.logit_weights_or_uniform())
    }

    /// `[N, 3, S, S]` → logits `[N]` under the configured strategy.
    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let features = self.member_features(ctx, x)?;
        match self.spec.strategy {
            Strategy::Feature => self.feature_logits(ctx, &features),
            Strategy::Logit => self.member_logits(ctx, &features),
            Strategy::Hybrid => {
                let lambda = self.spec.hybrid_weight;
                let a = self.feature_logits(ctx, &features)?;
                let b = self.member_logits(ctx, &features)?;
                ops::weighted_sum(&[a, b], &[lambda, 1.0 - lambda])
            }
        }
    }
}

/// A fusion classifier with its parameters.
#[derive(Debug, Clone)]
pub struct FusionModel<T: Elem = f32> {
    pub arch: FusionArch,
    pub store: ParamStore<T>,
}

impl<T: Elem> FusionModel<T> {
    pub fn build(spec: &FusionSpec, rng: &mut dyn RngCore) -> Result<Self> {
        let mut store = ParamStore::new();
        let arch = FusionArch::build_into(&mut store, spec, rng)?;
        Ok(Self { arch, store })
    }

    pub fn seeded(spec: &FusionSpec, seed: u64) -> Result<Self> {
        Self::build(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn spec(&self) -> &FusionSpec {
        self.arch.spec()
    }

    pub fn input_size(&self) -> usize {
        self.arch.input_size()
    }

    /// Same model with every stored tensor converted to another element type.
    pub fn cast<U: Elem>(&self) -> FusionModel<U> {
        FusionModel {
            arch: self.arch.clone(),
            store: self.store.cast(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.input_size();
        match x.shape() {
            [_, 3, h, w] if *h == s && *w == s => Ok(()),
            other => Err(Error::shape(
                "fusion_forward",
                format!("expected input [N, 3, {s}, {s}], got {other:?}"),
            )),
        }
    }

    /// Logits in the given mode. Training mode draws dropout masks from
    /// `rng` and updates batchnorm running statistics.
    pub fn forward_mode(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let input = Var::constant(x.clone());
        let out = match mode {
            Mode::Train => {
                let mut ctx = Ctx::train(&mut self.store, rng);
                self.arch.forward(&mut ctx, &input)?
            }
            Mode::Eval => self.arch.forward(&mut Ctx::eval(&self.store), &input)?,
        };
        Ok(out.to_tensor())
    }

    /// Eval-mode logits `[N]`. Large batches run in slices of
    /// [`EVAL_CHUNK`] samples so activations stay cache-resident; eval mode
    /// treats samples independently, so the result is the same.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let n = x.shape()[0];
        if n <= EVAL_CHUNK {
            let out = self.arch.forward(&mut Ctx::eval(&self.store), &Var::constant(x.clone()))?;
            return Ok(out.to_tensor());
        }
        let sample = x.len() / n;
        let mut logits = Vec::with_capacity(n);
        for chunk in x.data().chunks(EVAL_CHUNK * sample) {
            let mut shape = x.shape().to_vec();
            shape[0] = chunk.len() / sample;
            let part = Var::constant(Tensor::from_vec(&shape, chunk.to_vec())?);
            logits.extend_from_slice(self.arch.forward(&mut Ctx::eval(&self.store), &part)?.data());
        }
        Tensor::from_vec(&[n], logits)
    }

    /// Sigmoid of the eval-mode logits.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.logits(x)?.map(ops::sigmoid_scalar))
    }

    /// Label 1 (diabetic) iff the probability reaches `threshold`.
    pub fn classify(&self, x: &Tensor<T>, threshold: f64) -> Result<Vec<u8>> {
        let p = self.predict_proba(x)?;
        threshold_labels(p.data(), threshold)
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }
}

/// Labels from probabilities; a probability equal to the threshold is positive.
pub fn threshold_labels<T: Elem>(probabilities: &[T], threshold: f64) -> Result<Vec<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(probabilities
        .iter()
        .map(|p| u8::from(p.as_f64() >= threshold))
        .collect())
}

/// Trainable scalar count of a model.
pub fn count_parameters<T: Elem>(model: &FusionModel<T>) -> usize {
    model.param_count()
}

/// Size in bytes of the model's checkpoint file.
pub fn serialized_size<T: Elem>(model: &FusionModel<T>) -> Result<usize> {
    Ok(encode_checkpoint(model, &CheckpointMeta::default())?.len())
}

/// Weighted average of the eval-mode logits of independently trained models;
/// uniform weights when `weights` is `None`.
pub fn logit_fusion<T: Elem>(
    members: &[FusionModel<T>],
    x: &Tensor<T>,
    weights: Option<&[f64]>,
) -> Result<Tensor<T>> {
    if members.is_empty() {
        return Err(Error::invalid("logit fusion needs at least one member"));
    }
    let weights = match weights {
        Some(w) => {
            check_weights(w, members.len())?;
            w.to_vec()
        }
        None => vec![1.0 / members.len() as f64; members.len()],
    };
    let logits = members
        .iter()
        .map(|m| m.logits(x).map(Var::constant))
        .collect::<Result<Vec<_>>>()?;
    Ok(ops::weighted_sum(&logits, &weights)?.to_tensor())
}

/// `λ · feature_model + (1 − λ) · logit_fusion(members)` with uniform member weights.
pub fn hybrid_fusion<T: Elem>(
    feature_model: &FusionModel<T>,
    members: &[FusionModel<T>],
    x: &Tensor<T>,
    lambda: f64,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("hybrid weight {lambda} outside [0, 1]")));
    }
    let a = Var::constant(feature_model.logits(x)?);
    let b = Var::constant(logit_fusion(members, x, None)?);
    Ok(ops::weighted_sum(&[a, b], &[lambda, 1.0 - lambda])?.to_tensor())
}
