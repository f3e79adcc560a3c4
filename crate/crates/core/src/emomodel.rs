//! The utterance-level emotion CNN in its three variants.
//!
//! Each active input channel runs
//! `input dropout -> conv1d -> activation -> global max pool`; the pooled
//! vectors are concatenated (late fusion) and fed to a shared head
//! `dense(hidden) -> activation -> dense(classes) -> softmax`.
//!
//! The word channel reads a frozen pretrained table supplied at call time. The
//! frame channel either owns a trainable table learned jointly with the rest
//! of the network, or reads a frozen table like the word channel.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autonet::ddouble::{dot_dd, DoubleF64};
use crate::autonet::{
    argmax, dropout, global_max_pool, max_pool_backward, softmax, softmax_cross_entropy,
    Checkpoint, Conv1d, Dense, Differentiable, Mode, Optimizer, OptimizerState, Param, Pooled,
    Tensor2,
};
use crate::corpus::{Corpus, Utterance};
use crate::embedding::{embed_sequence, EmbeddingTable};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Frame symbol used for utterances without a frame stream and for frames the
/// trainable table has never seen.
pub const UNK_FRAME: &str = "<unk-frame>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Word,
    Semantic,
    Fusion,
}

impl Variant {
    pub fn channels(self) -> &'static [ChannelKind] {
        match self {
            Variant::Word => &[ChannelKind::Word],
            Variant::Semantic => &[ChannelKind::Frame],
            Variant::Fusion => &[ChannelKind::Word, ChannelKind::Frame],
        }
    }

    pub fn uses_frames(self) -> bool {
        self != Variant::Word
    }

    pub fn uses_words(self) -> bool {
        self != Variant::Semantic
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Variant::Word),
            "semantic" => Ok(Variant::Semantic),
            "fusion" => Ok(Variant::Fusion),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Word,
    Frame,
}

impl ChannelKind {
    fn name(self) -> &'static str {
        match self {
            ChannelKind::Word => "word",
            ChannelKind::Frame => "frame",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub filters: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub classes: usize,
    pub max_len: usize,
    pub word_dim: usize,
    pub frame_dim: usize,
    /// Learn the frame table with the classifier instead of reading a frozen
    /// one.
    pub frame_trainable: bool,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Word,
            filters: 150,
            kernel_size: 3,
            stride: 1,
            dropout: 0.2,
            hidden: 32,
            classes: 4,
            max_len: 100,
            word_dim: 300,
            frame_dim: 50,
            frame_trainable: true,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("filters", self.filters),
            ("kernel_size", self.kernel_size),
            ("stride", self.stride),
            ("hidden", self.hidden),
            ("classes", self.classes),
            ("max_len", self.max_len),
            ("word_dim", self.word_dim),
            ("frame_dim", self.frame_dim),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_len < self.kernel_size {
            return Err(Error::Config(format!(
                "max_len {} is shorter than kernel_size {}",
                self.max_len, self.kernel_size
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.filters * self.variant.channels().len()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::default(),
            epochs: 30,
            batch_size: 50,
            seed: 0,
            early_stop_patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.optimizer.learning_rate() <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen tables supplied alongside a model.
#[derive(Debug, Clone, Copy, Default)]
pub struct Embeddings<'a> {
    pub word: Option<&'a EmbeddingTable>,
    /// Only read when the model's frame table is not trainable.
    pub frame: Option<&'a EmbeddingTable>,
}

impl<'a> Embeddings<'a> {
    pub fn words(word: &'a EmbeddingTable) -> Self {
        Self {
            word: Some(word),
            frame: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub kind: ChannelKind,
    pub conv: Conv1d,
}

/// All learned state of one network plus what is needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    config: ModelConfig,
    labels: Vec<String>,
    channels: Vec<Channel>,
    hidden: Dense,
    output: Dense,
    frame_table: Option<EmbeddingTable>,
}

/// Distinct frame symbols of a corpus, sorted.
pub fn frame_vocabulary(corpus: &Corpus) -> Vec<String> {
    corpus
        .utterances()
        .iter()
        .flat_map(|u| u.frames.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Wires an untrained network. `frame_symbols` seeds the trainable frame table
/// and is ignored otherwise; [`UNK_FRAME`] is always added.
pub fn build_model(
    config: &ModelConfig,
    labels: &[String],
    frame_symbols: &[String],
    seed: u64,
) -> Result<TrainedModel> {
    config.validate()?;
    if labels.len() != config.classes {
        return Err(Error::LabelMismatch(format!(
            "{} labels for a {}-class model",
            labels.len(),
            config.classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "build-model"));
    let channels: Vec<Channel> = config
        .variant
        .channels()
        .iter()
        .map(|&kind| {
            let dim = match kind {
                ChannelKind::Word => config.word_dim,
                ChannelKind::Frame => config.frame_dim,
            };
            Channel {
                kind,
                conv: Conv1d::new(dim, config.filters, config.kernel_size, config.stride, &mut rng),
            }
        })
        .collect();
    let head_width: usize = channels.iter().map(|c| c.conv.filters()).sum();
    assert_eq!(
        head_width,
        config.head_width(),
        "head width must be filters x active channels"
    );
    let hidden = Dense::new(head_width, config.hidden, &mut rng);
    let output = Dense::new(config.hidden, config.classes, &mut rng);

    let frame_table = if config.variant.uses_frames() && config.frame_trainable {
        let mut symbols: Vec<&str> = vec![UNK_FRAME];
        symbols.extend(frame_symbols.iter().map(String::as_str).filter(|s| *s != UNK_FRAME));
        Some(EmbeddingTable::new_trainable(
            &symbols,
            config.frame_dim,
            derive_seed(seed, "frame-table"),
        )?)
    } else {
        None
    };

    Ok(TrainedModel {
        config: config.clone(),
        labels: labels.to_vec(),
        channels,
        hidden,
        output,
        frame_table,
    })
}

/// Per-channel input, resolved once per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelInput {
    /// Already looked up in a frozen table.
    Matrix(Tensor2),
    /// Rows of the model's trainable frame table; `None` is a zero pad row.
    Rows(Vec<Option<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub inputs: Vec<ChannelInput>,
}

/// Double-double intermediates of the eval-mode forward pass, cached by
/// gradient checks.
#[derive(Debug, Clone)]
pub struct ReferencePoint {
    inputs: Vec<Vec<DoubleF64>>,
    concat: Vec<DoubleF64>,
    hidden_pre: Vec<DoubleF64>,
}

struct ChannelTrace {
    input: Tensor2,
    drop_scale: Option<Vec<f64>>,
    conv_pre: Tensor2,
    pooled: Pooled,
}

struct Trace {
    channels: Vec<ChannelTrace>,
    concat: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
    logits: Vec<f64>,
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn hidden_layer(&self) -> &Dense {
        &self.hidden
    }

    pub fn output_layer(&self) -> &Dense {
        &self.output
    }

    pub fn head_width(&self) -> usize {
        self.hidden.input_width()
    }

    pub fn frame_table(&self) -> Option<&EmbeddingTable> {
        self.frame_table.as_ref()
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    /// Zeroes both head layers, making every prediction uniform.
    pub fn zero_head(&mut self) {
        for layer in [&mut self.hidden, &mut self.output] {
            layer.params.weight.value.fill(0.0);
            layer.params.bias.value.fill(0.0);
        }
    }

    /// Checks that the supplied tables fit this model.
    pub fn check_embeddings(&self, emb: &Embeddings) -> Result<()> {
        if self.config.variant.uses_words() {
            let word = emb
                .word
                .ok_or_else(|| Error::EmbeddingMismatch("word table required".into()))?;
            if word.dim() != self.config.word_dim {
                return Err(Error::EmbeddingMismatch(format!(
                    "word table has dim {}, model expects {}",
                    word.dim(),
                    self.config.word_dim
                )));
            }
        }
        if self.config.variant.uses_frames() && self.frame_table.is_none() {
            let frame = emb
                .frame
                .ok_or_else(|| Error::EmbeddingMismatch("frozen frame table required".into()))?;
            if frame.dim() != self.config.frame_dim {
                return Err(Error::EmbeddingMismatch(format!(
                    "frame table has dim {}, model expects {}",
                    frame.dim(),
                    self.config.frame_dim
                )));
            }
        }
        Ok(())
    }

    /// Resolves the channel inputs of one utterance.
    pub fn encode(&self, utterance: &Utterance, emb: &Embeddings) -> Result<EncodedSample> {
        self.check_embeddings(emb)?;
        let max_len = self.config.max_len;
        let unk = [UNK_FRAME.to_owned()];
        let frames: &[String] = if utterance.frames.is_empty() {
            &unk
        } else {
            &utterance.frames
        };
        let inputs = self
            .channels
            .iter()
            .map(|ch| -> Result<ChannelInput> {
                Ok(match ch.kind {
                    ChannelKind::Word => ChannelInput::Matrix(
                        embed_sequence(&utterance.tokens, emb.word.expect("checked"), max_len)?
                            .values,
                    ),
                    ChannelKind::Frame => match &self.frame_table {
                        Some(table) => {
                            let unk_row = table.index_of(UNK_FRAME).expect("unk row");
                            let rows = (0..max_len)
                                .map(|r| {
                                    frames
                                        .get(r)
                                        .map(|f| table.index_of(f).unwrap_or(unk_row))
                                })
                                .collect();
                            ChannelInput::Rows(rows)
                        }
                        None => ChannelInput::Matrix(
                            embed_sequence(frames, emb.frame.expect("checked"), max_len)?.values,
                        ),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedSample { inputs })
    }

    fn materialize(&self, input: &ChannelInput) -> Tensor2 {
        match input {
            ChannelInput::Matrix(m) => m.clone(),
            ChannelInput::Rows(rows) => {
                let table = self.frame_table.as_ref().expect("rows imply a frame table");
                let mut m = Tensor2::zeros(rows.len(), table.dim());
                for (r, idx) in rows.iter().enumerate() {
                    if let Some(i) = idx {
                        m.row_mut(r).copy_from_slice(table.matrix().row(*i));
                    }
                }
                m
            }
        }
    }

    fn forward<R: Rng + ?Sized>(
        &self,
        sample: &EncodedSample,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Trace> {
        if sample.inputs.len() != self.channels.len() {
            return Err(Error::Shape("sample encoded for a different variant".into()));
        }
        let act = self.config.activation;
        let mut channels = Vec::with_capacity(self.channels.len());
        let mut concat = Vec::with_capacity(self.head_width());
        for (ch, input) in self.channels.iter().zip(&sample.inputs) {
            let raw = self.materialize(input);
            let (input, drop_scale) = dropout(&raw, self.config.dropout, mode, rng)?;
            let conv_pre = ch.conv.forward(&input)?;
            let activated = conv_pre.map(|v| act.apply(v));
            let pooled = global_max_pool(&activated)?;
            concat.extend_from_slice(&pooled.values);
            channels.push(ChannelTrace {
                input,
                drop_scale,
                conv_pre,
                pooled,
            });
        }
        let hidden_pre = self.hidden.forward(&concat)?;
        let hidden_act: Vec<f64> = hidden_pre.iter().map(|&v| act.apply(v)).collect();
        let logits = self.output.forward(&hidden_act)?;
        Ok(Trace {
            channels,
            concat,
            hidden_pre,
            hidden_act,
            logits,
        })
    }

    fn act_dd(&self, v: DoubleF64) -> DoubleF64 {
        match self.config.activation {
            Activation::Relu if v.is_sign_positive_nonzero() => v,
            Activation::Relu => DoubleF64::ZERO,
            Activation::Tanh => v.tanh(),
        }
    }

    /// Pooled activation of one filter, in double-double.
    fn pooled_dd(&self, channel: usize, x: &[DoubleF64], filter: usize) -> Result<DoubleF64> {
        let conv = &self.channels[channel].conv;
        let width = conv.kernel_size * conv.in_dim;
        let bias = DoubleF64::from(conv.params.bias.value.values()[filter]);
        let weights = conv.params.weight.value.row(filter);
        (0..conv.output_len(x.len() / conv.in_dim))
            .map(|t| {
                let start = t * conv.stride * conv.in_dim;
                self.act_dd(dot_dd(bias, &x[start..start + width], weights))
            })
            .reduce(DoubleF64::max)
            .ok_or_else(|| Error::Shape("input shorter than the kernel".into()))
    }

    fn hidden_pre_dd(&self, concat: &[DoubleF64], unit: usize) -> DoubleF64 {
        let p = &self.hidden.params;
        dot_dd(p.bias.value.values()[unit].into(), concat, p.weight.value.row(unit))
    }

    fn loss_from_hidden_dd(&self, hidden_pre: &[DoubleF64], target: usize) -> Result<DoubleF64> {
        let hidden: Vec<DoubleF64> = hidden_pre.iter().map(|&v| self.act_dd(v)).collect();
        let p = &self.output.params;
        let z: Vec<DoubleF64> = (0..self.output.output_width())
            .map(|o| dot_dd(p.bias.value.values()[o].into(), &hidden, p.weight.value.row(o)))
            .collect();
        if target >= z.len() {
            return Err(Error::Shape(format!("target {target} out of range")));
        }
        let max = z.iter().copied().reduce(DoubleF64::max).expect("classes > 0");
        let sum = z
            .iter()
            .fold(DoubleF64::ZERO, |acc, &v| acc + (v - max).exp());
        Ok(max + sum.ln() - z[target])
    }

    /// Accumulates gradients for `grad_logits` into every trainable parameter.
    fn backward(&mut self, sample: &EncodedSample, trace: &Trace, grad_logits: &[f64]) {
        let act = self.config.activation;
        let mut grad_hidden = self.output.backward(&trace.hidden_act, grad_logits);
        for (g, &pre) in grad_hidden.iter_mut().zip(&trace.hidden_pre) {
            *g *= act.derivative(pre);
        }
        let grad_concat = self.hidden.backward(&trace.concat, &grad_hidden);

        let mut offset = 0;
        for (ci, ct) in trace.channels.iter().enumerate() {
            let filters = self.channels[ci].conv.filters();
            let grad_pool = &grad_concat[offset..offset + filters];
            offset += filters;

            let mut grad_conv = max_pool_backward(&ct.pooled, grad_pool);
            for (f, &r) in ct.pooled.argmax.iter().enumerate() {
                let d = act.derivative(ct.conv_pre.get(r, f));
                grad_conv.set(r, f, grad_conv.get(r, f) * d);
            }
            let rows = match &sample.inputs[ci] {
                ChannelInput::Rows(rows) => Some(rows),
                ChannelInput::Matrix(_) => None,
            };
            let grad_input = self.channels[ci]
                .conv
                .backward(&ct.input, &grad_conv, rows.is_some());
            if let (Some(rows), Some(mut gi)) = (rows, grad_input) {
                if let Some(scale) = &ct.drop_scale {
                    for (g, s) in gi.values_mut().iter_mut().zip(scale) {
                        *g *= s;
                    }
                }
                let table = self.frame_table.as_mut().expect("rows imply a frame table");
                let param = table.param_mut();
                for (r, idx) in rows.iter().enumerate() {
                    if let Some(i) = idx {
                        for (acc, g) in param.grad.row_mut(*i).iter_mut().zip(gi.row(r)) {
                            *acc += g;
                        }
                    }
                }
            }
        }
    }

    /// Every learnable tensor, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for ch in &mut self.channels {
            out.push(&mut ch.conv.params.weight);
            out.push(&mut ch.conv.params.bias);
        }
        out.push(&mut self.hidden.params.weight);
        out.push(&mut self.hidden.params.bias);
        out.push(&mut self.output.params.weight);
        out.push(&mut self.output.params.bias);
        if let Some(table) = self.frame_table.as_mut() {
            out.push(table.param_mut());
        }
        out
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Eval-mode class probabilities for an encoded sample.
    pub fn predict_encoded(&self, sample: &EncodedSample) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward(sample, Mode::Eval, &mut rng)?;
        Ok(softmax(&trace.logits))
    }

    fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| {
                Error::LabelMismatch(format!(
                    "label {label:?} is not in the model vocabulary {:?}",
                    self.labels
                ))
            })
    }

    fn encode_corpus(&self, corpus: &Corpus, emb: &Embeddings) -> Result<Vec<(EncodedSample, usize)>> {
        corpus
            .utterances()
            .iter()
            .map(|u| Ok((self.encode(u, emb)?, self.label_index(&u.label)?)))
            .collect()
    }

    fn checkpoint_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for ch in &self.channels {
            names.push(format!("{}.conv.weight", ch.kind.name()));
            names.push(format!("{}.conv.bias", ch.kind.name()));
        }
        names.extend(
            ["hidden.weight", "hidden.bias", "output.weight", "output.bias"]
                .iter()
                .map(|s| s.to_string()),
        );
        if self.frame_table.is_some() {
            names.push("frame.embedding".into());
        }
        names
    }

    pub fn to_checkpoint(&self) -> ModelFile {
        let mut clone = self.clone();
        let names = self.checkpoint_names();
        let mut checkpoint = Checkpoint::new();
        for (name, p) in names.iter().zip(clone.params_mut()) {
            checkpoint.push(name.clone(), &p.value);
        }
        ModelFile {
            header: ModelHeader {
                fingerprint: self.fingerprint(),
                config: self.config.clone(),
                labels: self.labels.clone(),
                frame_symbols: self.frame_table.as_ref().map(|t| t.symbols().to_vec()),
            },
            checkpoint,
        }
    }

    pub fn from_checkpoint(file: &ModelFile) -> Result<Self> {
        file.checkpoint.check_header()?;
        let header = &file.header;
        if header.fingerprint != header.config.fingerprint() {
            return Err(Error::Checkpoint("config fingerprint does not match".into()));
        }
        let symbols = header.frame_symbols.clone().unwrap_or_default();
        let mut model = build_model(&header.config, &header.labels, &symbols, 0)?;
        if let (Some(stored), Some(table)) = (&header.frame_symbols, &model.frame_table) {
            if stored.as_slice() != table.symbols() {
                return Err(Error::Checkpoint("frame symbol list is malformed".into()));
            }
        }
        let names = model.checkpoint_names();
        if names.len() != file.checkpoint.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                file.checkpoint.tensors.len()
            )));
        }
        for (name, p) in names.iter().zip(model.params_mut()) {
            file.checkpoint.restore(name, &mut p.value)?;
            p.zero_grad();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(&self.to_checkpoint())?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_slice(&bytes)?;
        Self::from_checkpoint(&file)
    }
}

/// JSON config header describing how to rebuild the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub fingerprint: String,
    pub config: ModelConfig,
    pub labels: Vec<String>,
    pub frame_symbols: Option<Vec<String>>,
}

/// On-disk model: config header plus the flat parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub header: ModelHeader,
    pub checkpoint: Checkpoint,
}

impl Differentiable for TrainedModel {
    type Input = EncodedSample;
    type Reference = ReferencePoint;

    fn params_mut(&mut self) -> Vec<&mut Param> {
        TrainedModel::params_mut(self)
    }

    fn loss(&self, input: &EncodedSample, target: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward(input, Mode::Eval, &mut rng)?;
        Ok(softmax_cross_entropy(&trace.logits, target)?.loss)
    }

    fn reference(&self, input: &EncodedSample) -> Result<ReferencePoint> {
        if input.inputs.len() != self.channels.len() {
            return Err(Error::Shape("sample encoded for a different variant".into()));
        }
        let inputs: Vec<Vec<DoubleF64>> = input
            .inputs
            .iter()
            .map(|i| self.materialize(i).values().iter().map(|&v| v.into()).collect())
            .collect();
        let mut concat = Vec::with_capacity(self.head_width());
        for (c, x) in inputs.iter().enumerate() {
            for f in 0..self.channels[c].conv.filters() {
                concat.push(self.pooled_dd(c, x, f)?);
            }
        }
        let hidden_pre = (0..self.hidden.output_width())
            .map(|k| self.hidden_pre_dd(&concat, k))
            .collect();
        Ok(ReferencePoint {
            inputs,
            concat,
            hidden_pre,
        })
    }

    /// Recomputes only what the perturbed scalar feeds: one filter, one
    /// hidden unit, the logits, or (for frame embeddings) everything.
    fn reference_loss(
        &self,
        base: &ReferencePoint,
        input: &EncodedSample,
        target: usize,
        param: usize,
        index: usize,
    ) -> Result<DoubleF64> {
        let conv_params = 2 * self.channels.len();
        let hidden_pre = if param < conv_params {
            let c = param / 2;
            let conv = &self.channels[c].conv;
            let filter = if param.is_multiple_of(2) {
                index / (conv.kernel_size * conv.in_dim)
            } else {
                index
            };
            let column: usize =
                self.channels[..c].iter().map(|ch| ch.conv.filters()).sum::<usize>() + filter;
            let delta = self.pooled_dd(c, &base.inputs[c], filter)? - base.concat[column];
            let w = &self.hidden.params.weight.value;
            base.hidden_pre
                .iter()
                .enumerate()
                .map(|(k, &h)| h + delta.mul_f64(w.get(k, column)))
                .collect()
        } else if param < conv_params + 2 {
            let unit = if param == conv_params {
                index / self.head_width()
            } else {
                index
            };
            let mut h = base.hidden_pre.clone();
            h[unit] = self.hidden_pre_dd(&base.concat, unit);
            h
        } else if param < conv_params + 4 {
            base.hidden_pre.clone()
        } else {
            Differentiable::reference(self, input)?.hidden_pre
        };
        self.loss_from_hidden_dd(&hidden_pre, target)
    }

    fn loss_and_grad(&mut self, input: &EncodedSample, target: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward(input, Mode::Eval, &mut rng)?;
        let ce = softmax_cross_entropy(&trace.logits, target)?;
        self.backward(input, &trace, &ce.grad_logits);
        Ok(ce.loss)
    }

    fn kink_signature(&self, input: &EncodedSample) -> Result<Vec<u32>> {
        if self.config.activation != Activation::Relu {
            // tanh is smooth; only pooling switches remain
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let trace = self.forward(input, Mode::Eval, &mut rng)?;
            return Ok(trace
                .channels
                .iter()
                .flat_map(|c| c.pooled.argmax.iter().map(|&a| a as u32))
                .collect());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward(input, Mode::Eval, &mut rng)?;
        let mut sig = Vec::new();
        for c in &trace.channels {
            sig.extend(c.pooled.argmax.iter().map(|&a| a as u32));
            sig.extend(c.conv_pre.values().iter().map(|&v| u32::from(v > 0.0)));
        }
        sig.extend(trace.hidden_pre.iter().map(|&v| u32::from(v > 0.0)));
        Ok(sig)
    }

    fn tied_columns(&self, input: &EncodedSample) -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward(input, Mode::Eval, &mut rng)?;
        Ok(trace
            .channels
            .iter()
            .map(|c| c.pooled.tied.iter().filter(|&&t| t).count())
            .sum())
    }
}

fn accuracy_of(model: &TrainedModel, samples: &[(EncodedSample, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (s, target) in samples {
        if argmax(&model.predict_encoded(s)?) == *target {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / samples.len() as f64)
}

/// Mini-batch training with per-epoch shuffling and validation-based model
/// selection. Returns the parameters of the best validation epoch; with an
/// empty validation set the last epoch is kept and early stopping is off.
pub fn train(
    mut model: TrainedModel,
    train_set: &Corpus,
    val_set: &Corpus,
    emb: &Embeddings,
    tc: &TrainConfig,
) -> Result<(TrainedModel, TrainingLog)> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "training set {:?} is empty",
            train_set.name()
        )));
    }
    let train_samples = model.encode_corpus(train_set, emb)?;
    let val_samples = model.encode_corpus(val_set, emb)?;

    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, "batch-order"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, "dropout"));
    let mut optimizer = OptimizerState::new(tc.optimizer);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();

    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, TrainedModel)> = None;
    let mut since_best = 0;

    model.zero_grads();
    for epoch in 0..tc.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (sample, target) = &train_samples[i];
                let trace = model.forward(sample, Mode::Train, &mut dropout_rng)?;
                let ce = softmax_cross_entropy(&trace.logits, *target)?;
                loss_sum += ce.loss;
                let grad: Vec<f64> = ce.grad_logits.iter().map(|g| g * scale).collect();
                model.backward(sample, &trace, &grad);
            }
            optimizer.step(&mut model.params_mut());
        }
        let train_loss = loss_sum / train_samples.len() as f64;
        let val_accuracy = accuracy_of(&model, &val_samples)?;
        debug!("epoch {epoch}: loss {train_loss:.5} val {val_accuracy:.3}");
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy,
        });

        if val_samples.is_empty() {
            continue;
        }
        match &best {
            Some((acc, _)) if val_accuracy <= *acc => {
                since_best += 1;
                if since_best >= tc.early_stop_patience {
                    log.stopped_early = epoch + 1 < tc.epochs;
                    break;
                }
            }
            _ => {
                best = Some((val_accuracy, model.clone()));
                log.best_epoch = epoch;
                since_best = 0;
            }
        }
    }
    if val_samples.is_empty() {
        log.best_epoch = log.epochs.len() - 1;
        return Ok((model, log));
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, log))
}

/// Eval-mode class probabilities for one utterance.
pub fn predict(model: &TrainedModel, utterance: &Utterance, emb: &Embeddings) -> Result<Vec<f64>> {
    model.predict_encoded(&model.encode(utterance, emb)?)
}
