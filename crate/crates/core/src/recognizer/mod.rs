//! Phoneme recognizer: subsampling self-attention encoder with a CTC head and
//! an attention decoder, trained on the hybrid objective.

pub mod ctc;
mod decode;
mod train;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PhonemeInventory, PhonemeSequence};
use crate::error::{Error, Result};
use crate::features::{utterance_mvn, MelSpectrogram};
use crate::nn::layers::{causal_mask, sinusoid_positions, Conv1d, Embedding, LayerNorm, Linear, MultiHeadAttention};
use crate::nn::{Graph, Mat, ParamSet, Var};

pub use decode::{ctc_force_align, recognize, Recognition, DEFAULT_BEAM};
pub use train::{train_recognizer, RecognizerExample, RecognizerLogRow, RecognizerSchedule};

pub const CHECKPOINT_FORMAT: &str = "stylevc-recognizer/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerConfig {
    pub lambda: f64,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub attention_heads: usize,
    pub model_width: usize,
    pub subsample_factor: usize,
    pub ffn_width: usize,
    /// Channels of the convolutional subsampling frontend.
    pub conv_channels: usize,
    pub n_mels: usize,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            encoder_blocks: 12,
            decoder_blocks: 6,
            attention_heads: 8,
            model_width: 256,
            subsample_factor: 4,
            ffn_width: 1024,
            conv_channels: 64,
            n_mels: 80,
        }
    }
}

impl RecognizerConfig {
    /// Small model that trains in seconds on the synthetic corpus.
    pub fn toy() -> Self {
        Self {
            encoder_blocks: 2,
            decoder_blocks: 1,
            attention_heads: 4,
            model_width: 64,
            ffn_width: 128,
            conv_channels: 64,
            ..Self::default()
        }
    }

    pub fn micro(n_mels: usize) -> Self {
        Self {
            encoder_blocks: 1,
            decoder_blocks: 1,
            attention_heads: 2,
            model_width: 8,
            ffn_width: 16,
            conv_channels: 4,
            n_mels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.subsample_factor < 1 {
            return bad("subsample_factor must be at least 1");
        }
        if self.attention_heads == 0 || !self.model_width.is_multiple_of(self.attention_heads) {
            return bad("attention_heads must divide model_width");
        }
        if self.model_width == 0 || self.ffn_width == 0 || self.conv_channels == 0 || self.n_mels == 0 {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    /// Time strides of the conv-pool stages; their product is the
    /// subsampling factor.
    pub fn pool_strides(&self) -> Vec<usize> {
        let mut f = self.subsample_factor;
        let mut out = Vec::new();
        while f > 1 && f.is_multiple_of(2) {
            out.push(2);
            f /= 2;
        }
        if f > 1 {
            out.push(f);
        }
        out
    }

    pub fn encoded_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.subsample_factor)
    }
}

#[derive(Clone, Debug)]
struct ConvStage {
    a: Conv1d,
    b: Conv1d,
    stride: usize,
}

#[derive(Clone, Debug)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(ps: &mut ParamSet, name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            up: Linear::new(ps, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(ps, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.up.forward(g, x);
        let h = g.relu(h);
        self.down.forward(g, h)
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    ln_att: LayerNorm,
    att: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    ln_self: LayerNorm,
    self_att: MultiHeadAttention,
    ln_src: LayerNorm,
    src_att: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct Layers {
    stages: Vec<ConvStage>,
    input: Linear,
    encoder: Vec<EncoderBlock>,
    encoder_ln: LayerNorm,
    ctc_head: Linear,
    embed: Embedding,
    decoder: Vec<DecoderBlock>,
    decoder_ln: LayerNorm,
    att_head: Linear,
}

/// Trained (or freshly initialized) recognizer: parameters, configuration
/// and the inventory they are bound to.
#[derive(Clone, Debug)]
pub struct Recognizer {
    pub config: RecognizerConfig,
    pub inventory: PhonemeInventory,
    pub params: ParamSet,
    /// Number of optimizer steps applied so far.
    pub step: usize,
    layers: Layers,
}

/// Loss value with its two components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HybridLoss {
    pub total: f64,
    pub ctc_term: f64,
    pub att_term: f64,
}

pub fn combine_terms(ctc_term: f64, att_term: f64, lambda: f64) -> f64 {
    lambda * ctc_term + (1.0 - lambda) * att_term
}

impl Recognizer {
    pub fn new(config: RecognizerConfig, inventory: PhonemeInventory, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let c = &config;
        let d = c.model_width;
        let v = inventory.vocab_size();
        let mut stages = Vec::new();
        let mut in_ch = c.n_mels;
        for (i, stride) in c.pool_strides().into_iter().enumerate() {
            stages.push(ConvStage {
                a: Conv1d::new(&mut ps, &format!("frontend.s{i}a"), in_ch, c.conv_channels, 3, &mut rng),
                b: Conv1d::new(&mut ps, &format!("frontend.s{i}b"), c.conv_channels, c.conv_channels, 3, &mut rng),
                stride,
            });
            in_ch = c.conv_channels;
        }
        let input = Linear::new(&mut ps, "frontend.proj", in_ch, d, &mut rng);
        let encoder = (0..c.encoder_blocks)
            .map(|i| {
                let n = format!("encoder.b{i}");
                EncoderBlock {
                    ln_att: LayerNorm::new(&mut ps, &format!("{n}.ln_att"), d),
                    att: MultiHeadAttention::new(&mut ps, &format!("{n}.att"), d, c.attention_heads, &mut rng),
                    ln_ff: LayerNorm::new(&mut ps, &format!("{n}.ln_ff"), d),
                    ff: FeedForward::new(&mut ps, &format!("{n}.ff"), d, c.ffn_width, &mut rng),
                }
            })
            .collect();
        let encoder_ln = LayerNorm::new(&mut ps, "encoder.ln", d);
        let ctc_head = Linear::new(&mut ps, "ctc.head", d, v, &mut rng);
        let embed = Embedding::new(&mut ps, "decoder.embed", v, d, &mut rng);
        let decoder = (0..c.decoder_blocks)
            .map(|i| {
                let n = format!("decoder.b{i}");
                DecoderBlock {
                    ln_self: LayerNorm::new(&mut ps, &format!("{n}.ln_self"), d),
                    self_att: MultiHeadAttention::new(&mut ps, &format!("{n}.self"), d, c.attention_heads, &mut rng),
                    ln_src: LayerNorm::new(&mut ps, &format!("{n}.ln_src"), d),
                    src_att: MultiHeadAttention::new(&mut ps, &format!("{n}.src"), d, c.attention_heads, &mut rng),
                    ln_ff: LayerNorm::new(&mut ps, &format!("{n}.ln_ff"), d),
                    ff: FeedForward::new(&mut ps, &format!("{n}.ff"), d, c.ffn_width, &mut rng),
                }
            })
            .collect();
        let decoder_ln = LayerNorm::new(&mut ps, "decoder.ln", d);
        let att_head = Linear::new(&mut ps, "decoder.head", d, v, &mut rng);
        Ok(Self {
            config,
            inventory,
            params: ps,
            step: 0,
            layers: Layers {
                stages,
                input,
                encoder,
                encoder_ln,
                ctc_head,
                embed,
                decoder,
                decoder_ln,
                att_head,
            },
        })
    }

    fn check_mel(&self, mel: &Mat) -> Result<()> {
        let (t, m) = mel.dim();
        if m != self.config.n_mels {
            return Err(Error::InvalidInput(format!(
                "mel has {m} bins, recognizer expects {}",
                self.config.n_mels
            )));
        }
        if t < self.config.subsample_factor.max(1) {
            return Err(Error::InputTooShort {
                frames: t,
                min: self.config.subsample_factor.max(1),
            });
        }
        if mel.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("mel contains non-finite values".into()));
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        self.inventory.check(&PhonemeSequence(labels.to_vec()))
    }

    /// Encoder graph. The input is normalized per utterance first; the
    /// normalization is idempotent so pre-normalized input is unaffected.
    fn encode_graph(&self, g: &mut Graph, mel: &Mat) -> Result<Var> {
        self.check_mel(mel)?;
        let normed = normalize(mel);
        let mut x = g.constant(normed);
        for st in &self.layers.stages {
            x = st.a.forward(g, x);
            x = g.relu(x);
            x = st.b.forward(g, x);
            x = g.relu(x);
            x = g.max_pool_rows(x, st.stride, st.stride);
        }
        let x = self.layers.input.forward(g, x);
        let (len, d) = g.shape(x);
        let pos = g.constant(sinusoid_positions(len, d));
        let mut x = g.add(x, pos);
        for b in &self.layers.encoder {
            let h = b.ln_att.forward(g, x);
            let h = b.att.forward(g, h, h, None);
            x = g.add(x, h);
            let h = b.ln_ff.forward(g, x);
            let h = b.ff.forward(g, h);
            x = g.add(x, h);
        }
        Ok(self.layers.encoder_ln.forward(g, x))
    }

    fn ctc_graph(&self, g: &mut Graph, enc: Var) -> Var {
        let logits = self.layers.ctc_head.forward(g, enc);
        g.log_softmax_rows(logits)
    }

    /// Attention decoder log-probabilities for every position of `input`
    /// (which starts with `<sos>`).
    fn decoder_graph(&self, g: &mut Graph, enc: Var, input: &[usize]) -> Var {
        let mut y = self.layers.embed.lookup(g, input);
        let d = self.config.model_width;
        let pos = g.constant(sinusoid_positions(input.len(), d));
        y = g.add(y, pos);
        let mask = causal_mask(input.len());
        for b in &self.layers.decoder {
            let h = b.ln_self.forward(g, y);
            let h = b.self_att.forward(g, h, h, Some(&mask));
            y = g.add(y, h);
            let h = b.ln_src.forward(g, y);
            let h = b.src_att.forward(g, h, enc, None);
            y = g.add(y, h);
            let h = b.ln_ff.forward(g, y);
            let h = b.ff.forward(g, h);
            y = g.add(y, h);
        }
        let y = self.layers.decoder_ln.forward(g, y);
        let logits = self.layers.att_head.forward(g, y);
        g.log_softmax_rows(logits)
    }

    /// Encoded hidden states, `ceil(T / subsample_factor) × model_width`.
    pub fn encode(&self, mel: &MelSpectrogram) -> Result<Mat> {
        let mut g = Graph::new(&self.params);
        let v = self.encode_graph(&mut g, &mel.frames)?;
        Ok(g.value(v).clone())
    }

    /// Per-frame CTC log-probabilities over the full vocabulary.
    pub fn ctc_log_probs(&self, mel: &MelSpectrogram) -> Result<Mat> {
        let mut g = Graph::new(&self.params);
        let enc = self.encode_graph(&mut g, &mel.frames)?;
        let lp = self.ctc_graph(&mut g, enc);
        Ok(g.value(lp).clone())
    }

    /// Builds the hybrid loss on `g`; returns the loss node and the two
    /// component values.
    pub fn loss_graph(&self, g: &mut Graph, mel: &Mat, labels: &[usize], lambda: f64) -> Result<(Var, HybridLoss)> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
        }
        self.check_labels(labels)?;
        self.check_mel(mel)?;
        ctc::check_feasible(labels, self.config.encoded_len(mel.nrows()))?;
        let enc = self.encode_graph(g, mel)?;
        let lp = self.ctc_graph(g, enc);
        let (ctc_nll, ctc_grad) = ctc::ctc_loss(g.value(lp), labels, self.inventory.blank())?;
        let ctc_var = g.fused_scalar(lp, ctc_nll, ctc_grad);

        let mut input = vec![self.inventory.sos()];
        input.extend_from_slice(labels);
        let att_lp = self.decoder_graph(g, enc, &input);
        let targets: Vec<(usize, usize)> = labels
            .iter()
            .copied()
            .chain(std::iter::once(self.inventory.eos()))
            .enumerate()
            .collect();
        let picked = g.select_sum(att_lp, &targets);
        let att_var = g.scale(picked, -1.0);
        let att_nll = g.scalar(att_var);

        let a = g.scale(ctc_var, lambda);
        let b = g.scale(att_var, 1.0 - lambda);
        let total = g.add(a, b);
        let loss = HybridLoss {
            total: g.scalar(total),
            ctc_term: ctc_nll,
            att_term: att_nll,
        };
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                detail: format!("non-finite loss (ctc {ctc_nll}, att {att_nll})"),
            });
        }
        Ok((total, loss))
    }

    pub fn hybrid_loss(&self, mel: &MelSpectrogram, phonemes: &PhonemeSequence, lambda: f64) -> Result<HybridLoss> {
        let mut g = Graph::new(&self.params);
        Ok(self.loss_graph(&mut g, &mel.frames, phonemes.tokens(), lambda)?.1)
    }

    /// Joint decoding score of a complete hypothesis (negated hybrid loss at
    /// the configured λ).
    pub fn joint_score(&self, mel: &MelSpectrogram, phonemes: &PhonemeSequence) -> Result<f64> {
        Ok(-self.hybrid_loss(mel, phonemes, self.config.lambda)?.total)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_string(),
            step: self.step,
            inventory_hash: self.inventory.hash(),
            model: self.config.clone(),
        };
        let text = toml::to_string_pretty(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        write(&dir.join("checkpoint.toml"), text.as_bytes())?;
        write(&dir.join("inventory.txt"), self.inventory.to_text().as_bytes())?;
        write(&dir.join("params.safetensors"), &self.params.to_safetensors()?)
    }

    /// Loads a checkpoint using the inventory stored alongside it.
    pub fn load(dir: &Path) -> Result<Self> {
        let inv = PhonemeInventory::load(&dir.join("inventory.txt"))?;
        Self::load_with_inventory(dir, &inv)
    }

    /// Loads a checkpoint and verifies it was trained against `inventory`.
    pub fn load_with_inventory(dir: &Path, inventory: &PhonemeInventory) -> Result<Self> {
        let path = dir.join("checkpoint.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?} (expected {CHECKPOINT_FORMAT})",
                meta.format
            )));
        }
        if meta.inventory_hash != inventory.hash() {
            return Err(Error::Checkpoint("inventory hash mismatch".into()));
        }
        let mut model = Self::new(meta.model, inventory.clone(), 0)?;
        let p = dir.join("params.safetensors");
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        model.params.load_safetensors(&bytes)?;
        model.step = meta.step;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    step: usize,
    inventory_hash: String,
    model: RecognizerConfig,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn normalize(mel: &Mat) -> Mat {
    utterance_mvn(&MelSpectrogram {
        frames: mel.clone(),
        frame_shift_ms: 0.0,
        frame_length_ms: 0.0,
    })
    .frames
}

#[cfg(test)]
mod tests;
