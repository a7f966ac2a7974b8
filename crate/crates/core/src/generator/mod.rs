//! Speech generator: CBHG phoneme encoder, GST style encoder, speaker table,
//! rhythm module, state expansion and an autoregressive mel decoder.

mod train;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DurationSequence, PhonemeInventory, PhonemeSequence};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::layers::{BiGru, BiLstm, Conv1d, Embedding, Gru, Highway, Linear, Lstm, LstmState};
use crate::nn::{Graph, Mat, ParamSet, Var};

pub use train::{adapt_generator, train_generator, GeneratorLogRow, GeneratorSchedule, GeneratorUtterance};

pub const CHECKPOINT_FORMAT: &str = "stylevc-generator/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_mels: usize,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
    pub phoneme_embed: usize,
    pub encoder_prenet: [usize; 2],
    /// Largest kernel width of the convolution bank.
    pub bank_size: usize,
    pub bank_channels: usize,
    pub highway_layers: usize,
    /// Per-direction width of the encoder GRU.
    pub encoder_gru: usize,
    pub reference_channels: Vec<usize>,
    pub reference_gru: usize,
    pub style_tokens: usize,
    pub style_heads: usize,
    pub style_dim: usize,
    pub speaker_dim: usize,
    pub rhythm_layers: usize,
    pub rhythm_hidden: usize,
    pub decoder_fc: usize,
    pub decoder_prenet: [usize; 2],
    /// Drop probability on decoder prenet units while teacher forcing in
    /// training.
    pub prenet_dropout: f64,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    /// Frames emitted per decoder step.
    pub reduction: usize,
    pub postnet_layers: usize,
    pub postnet_channels: usize,
    pub postnet_kernel: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            frame_shift_ms: 12.5,
            frame_length_ms: 50.0,
            phoneme_embed: 64,
            encoder_prenet: [64, 32],
            bank_size: 16,
            bank_channels: 32,
            highway_layers: 4,
            encoder_gru: 32,
            reference_channels: vec![32, 32, 64],
            reference_gru: 32,
            style_tokens: 10,
            style_heads: 4,
            style_dim: 256,
            speaker_dim: 256,
            rhythm_layers: 3,
            rhythm_hidden: 128,
            decoder_fc: 64,
            decoder_prenet: [64, 32],
            prenet_dropout: 0.5,
            decoder_layers: 2,
            decoder_hidden: 128,
            reduction: 2,
            postnet_layers: 5,
            postnet_channels: 128,
            postnet_kernel: 5,
        }
    }
}

impl GeneratorConfig {
    /// Layer sizes of the original system.
    pub fn full() -> Self {
        Self {
            phoneme_embed: 256,
            encoder_prenet: [256, 128],
            bank_channels: 128,
            encoder_gru: 128,
            reference_channels: vec![32, 32, 64, 64, 128, 128],
            reference_gru: 128,
            rhythm_hidden: 512,
            decoder_fc: 256,
            decoder_prenet: [256, 128],
            decoder_hidden: 512,
            postnet_channels: 512,
            ..Self::default()
        }
    }

    /// Small model for the synthetic corpus.
    pub fn toy() -> Self {
        Self {
            phoneme_embed: 32,
            encoder_prenet: [32, 32],
            bank_size: 4,
            bank_channels: 32,
            highway_layers: 2,
            encoder_gru: 32,
            reference_channels: vec![32, 32],
            reference_gru: 32,
            rhythm_layers: 2,
            rhythm_hidden: 32,
            decoder_fc: 64,
            decoder_prenet: [32, 32],
            decoder_hidden: 128,
            postnet_layers: 3,
            postnet_channels: 64,
            ..Self::default()
        }
    }

    pub fn micro(n_mels: usize) -> Self {
        Self {
            n_mels,
            phoneme_embed: 8,
            encoder_prenet: [8, 8],
            bank_size: 2,
            bank_channels: 8,
            highway_layers: 1,
            encoder_gru: 4,
            reference_channels: vec![8],
            reference_gru: 8,
            style_tokens: 2,
            style_heads: 2,
            style_dim: 8,
            speaker_dim: 8,
            rhythm_layers: 1,
            rhythm_hidden: 8,
            decoder_fc: 8,
            decoder_prenet: [8, 8],
            decoder_layers: 2,
            decoder_hidden: 16,
            reduction: 2,
            postnet_layers: 2,
            postnet_channels: 8,
            postnet_kernel: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let widths = [
            self.n_mels,
            self.phoneme_embed,
            self.encoder_prenet[0],
            self.encoder_prenet[1],
            self.bank_size,
            self.bank_channels,
            self.encoder_gru,
            self.reference_gru,
            self.style_tokens,
            self.style_dim,
            self.speaker_dim,
            self.rhythm_layers,
            self.rhythm_hidden,
            self.decoder_fc,
            self.decoder_prenet[0],
            self.decoder_prenet[1],
            self.decoder_layers,
            self.decoder_hidden,
            self.reduction,
            self.postnet_kernel,
        ];
        if widths.contains(&0) || self.reference_channels.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if self.style_heads == 0 || !self.style_dim.is_multiple_of(self.style_heads) {
            return bad("style_heads must divide style_dim");
        }
        if self.postnet_layers > 0 && self.postnet_channels == 0 {
            return bad("postnet_channels must be positive");
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return bad("prenet_dropout must lie in [0, 1)");
        }
        if !(self.frame_shift_ms > 0.0 && self.frame_length_ms > 0.0) {
            return bad("frame timing must be positive");
        }
        Ok(())
    }

    fn encoder_dim(&self) -> usize {
        2 * self.encoder_gru
    }
}

/// Index into the speaker table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpeakerId(pub usize);

/// Style vector with the per-head attention weights over the token bank.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleEmbedding {
    pub vector: Vec<f64>,
    /// `heads × tokens`, rows sum to one.
    pub weights: Mat,
}

/// Per-bin statistics used to standardize mel frames inside the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MelStats {
    pub fn identity(n_mels: usize) -> Self {
        Self {
            mean: vec![0.0; n_mels],
            std: vec![1.0; n_mels],
        }
    }

    /// Pooled statistics over all frames of `mels`.
    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a Mat>, n_mels: usize) -> Self {
        let mut sum = vec![0.0; n_mels];
        let mut sq = vec![0.0; n_mels];
        let mut n = 0usize;
        for m in mels {
            for row in m.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(n_mels);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(1e-4).sqrt())
            .collect();
        Self { mean, std }
    }

    fn normalize(&self, m: &Mat) -> Mat {
        let mut out = m.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    fn row(v: &[f64]) -> Mat {
        Mat::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
    }
}

#[derive(Clone, Debug)]
struct Cbhg {
    embed: Embedding,
    prenet: [Linear; 2],
    bank: Vec<Conv1d>,
    proj1: Conv1d,
    proj2: Conv1d,
    highways: Vec<Highway>,
    gru: BiGru,
}

#[derive(Clone, Debug)]
struct Gst {
    convs: Vec<Conv1d>,
    gru: Gru,
    query: Linear,
    tokens: crate::nn::ParamId,
}

#[derive(Clone, Debug)]
struct Decoder {
    fc: Linear,
    prenet: [Linear; 2],
    lstms: Vec<Lstm>,
    out: Linear,
    postnet: Vec<Conv1d>,
}

#[derive(Clone, Debug)]
struct Layers {
    cbhg: Cbhg,
    gst: Gst,
    speakers: Embedding,
    rhythm: Vec<BiLstm>,
    rhythm_out: Linear,
    decoder: Decoder,
}

/// Loss value with its two components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLoss {
    pub total: f64,
    pub recon_term: f64,
    pub rhythm_term: f64,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub inventory: PhonemeInventory,
    /// Speaker names; row `i` of the speaker table belongs to `speakers[i]`.
    pub speakers: Vec<String>,
    pub mel_stats: MelStats,
    pub params: ParamSet,
    pub step: usize,
    layers: Layers,
}

/// Repeats row `i` of `encoded` `durations[i]` times.
pub fn state_expand(encoded: &Mat, durations: &[usize]) -> Result<Mat> {
    let idx = expansion_index(encoded.nrows(), durations)?;
    Ok(encoded.select(ndarray::Axis(0), &idx))
}

/// Owning phoneme of every output frame.
pub fn expansion_index(n: usize, durations: &[usize]) -> Result<Vec<usize>> {
    if durations.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} encoded vectors but {} durations",
            durations.len()
        )));
    }
    if let Some(i) = durations.iter().position(|&d| d < 1) {
        return Err(Error::InvalidInput(format!("duration {i} is below 1")));
    }
    Ok(durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
        .collect())
}

/// Rounds to the nearest integer and clamps to at least one frame.
pub fn quantize_durations(real: &[f64]) -> Result<DurationSequence> {
    if let Some(v) = real.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite duration {v}")));
    }
    DurationSequence::new(real.iter().map(|v| (v.round().max(1.0)) as usize).collect())
}

impl Generator {
    pub fn new(config: GeneratorConfig, inventory: PhonemeInventory, speakers: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        if speakers.is_empty() {
            return Err(Error::InvalidConfig("speaker table must not be empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let c = &config;
        let rng = &mut rng;

        let [p1, p2] = c.encoder_prenet;
        let embed = Embedding::new(&mut ps, "encoder.embed", inventory.n_symbols(), c.phoneme_embed, rng);
        let prenet = [
            Linear::new(&mut ps, "encoder.prenet0", c.phoneme_embed, p1, rng),
            Linear::new(&mut ps, "encoder.prenet1", p1, p2, rng),
        ];
        let bank = (1..=c.bank_size)
            .map(|k| Conv1d::new(&mut ps, &format!("encoder.bank{k}"), p2, c.bank_channels, k, rng))
            .collect();
        let proj1 = Conv1d::new(&mut ps, "encoder.proj1", c.bank_size * c.bank_channels, c.bank_channels, 3, rng);
        let proj2 = Conv1d::new(&mut ps, "encoder.proj2", c.bank_channels, p2, 3, rng);
        let highways = (0..c.highway_layers)
            .map(|i| Highway::new(&mut ps, &format!("encoder.highway{i}"), p2, rng))
            .collect();
        let gru = BiGru::new(&mut ps, "encoder.gru", p2, c.encoder_gru, rng);
        let cbhg = Cbhg {
            embed,
            prenet,
            bank,
            proj1,
            proj2,
            highways,
            gru,
        };

        let mut convs = Vec::new();
        let mut ch = c.n_mels;
        for (i, &out) in c.reference_channels.iter().enumerate() {
            convs.push(Conv1d::new(&mut ps, &format!("gst.conv{i}"), ch, out, 3, rng));
            ch = out;
        }
        let gst = Gst {
            convs,
            gru: Gru::new(&mut ps, "gst.gru", ch, c.reference_gru, rng),
            query: Linear::new(&mut ps, "gst.query", c.reference_gru, c.style_dim, rng),
            tokens: ps.add_uniform("gst.tokens", c.style_tokens, c.style_dim, 0.5, rng),
        };

        let speakers_table = Embedding::new(&mut ps, "speaker.table", speakers.len(), c.speaker_dim, rng);

        let cond = c.style_dim + c.speaker_dim;
        let mut rhythm = Vec::new();
        let mut in_dim = c.encoder_dim() + cond;
        for i in 0..c.rhythm_layers {
            rhythm.push(BiLstm::new(&mut ps, &format!("rhythm.blstm{i}"), in_dim, c.rhythm_hidden, rng));
            in_dim = 2 * c.rhythm_hidden;
        }
        let rhythm_out = Linear::new(&mut ps, "rhythm.out", in_dim, 1, rng);
        rhythm_out.fill_bias(&mut ps, 1.5);

        let [d1, d2] = c.decoder_prenet;
        let fc = Linear::new(&mut ps, "decoder.fc", c.reduction * c.encoder_dim(), c.decoder_fc, rng);
        let dprenet = [
            Linear::new(&mut ps, "decoder.prenet0", c.n_mels, d1, rng),
            Linear::new(&mut ps, "decoder.prenet1", d1, d2, rng),
        ];
        let mut lstms = Vec::new();
        let mut in_dim = c.decoder_fc + cond + d2;
        for i in 0..c.decoder_layers {
            lstms.push(Lstm::new(&mut ps, &format!("decoder.lstm{i}"), in_dim, c.decoder_hidden, rng));
            in_dim = c.decoder_hidden;
        }
        let out = Linear::new(&mut ps, "decoder.out", c.decoder_hidden, c.reduction * c.n_mels, rng);
        let mut postnet = Vec::new();
        let mut ch = c.n_mels;
        for i in 0..c.postnet_layers {
            let last = i + 1 == c.postnet_layers;
            let out_ch = if last { c.n_mels } else { c.postnet_channels };
            postnet.push(Conv1d::new(&mut ps, &format!("postnet.conv{i}"), ch, out_ch, c.postnet_kernel, rng));
            ch = out_ch;
        }
        let decoder = Decoder {
            fc,
            prenet: dprenet,
            lstms,
            out,
            postnet,
        };
        let mel_stats = MelStats::identity(c.n_mels);
        Ok(Self {
            config,
            inventory,
            speakers,
            mel_stats,
            params: ps,
            step: 0,
            layers: Layers {
                cbhg,
                gst,
                speakers: speakers_table,
                rhythm,
                rhythm_out,
                decoder,
            },
        })
    }

    pub fn speaker_id(&self, name: &str) -> Option<SpeakerId> {
        self.speakers.iter().position(|s| s == name).map(SpeakerId)
    }

    fn check_speaker(&self, s: SpeakerId) -> Result<()> {
        if s.0 >= self.speakers.len() {
            return Err(Error::InvalidInput(format!(
                "speaker index {} outside table of {}",
                s.0,
                self.speakers.len()
            )));
        }
        Ok(())
    }

    fn check_mel(&self, mel: &Mat) -> Result<()> {
        if mel.ncols() != self.config.n_mels {
            return Err(Error::InvalidInput(format!(
                "mel has {} bins, generator expects {}",
                mel.ncols(),
                self.config.n_mels
            )));
        }
        if mel.nrows() == 0 {
            return Err(Error::InvalidInput("mel has no frames".into()));
        }
        if mel.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mel contains non-finite values".into()));
        }
        Ok(())
    }

    fn check_phonemes(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty phoneme sequence".into()));
        }
        self.inventory.check(&PhonemeSequence(tokens.to_vec()))
    }

    fn cbhg_graph(&self, g: &mut Graph, tokens: &[usize]) -> Var {
        let c = &self.layers.cbhg;
        let mut x = c.embed.lookup(g, tokens);
        for l in &c.prenet {
            x = l.forward(g, x);
            x = g.relu(x);
        }
        let pre = x;
        let outs: Vec<Var> = c
            .bank
            .iter()
            .map(|conv| {
                let y = conv.forward(g, pre);
                g.relu(y)
            })
            .collect();
        let bank = g.concat_cols(&outs);
        let pooled = g.max_pool_rows(bank, 2, 1);
        let y = c.proj1.forward(g, pooled);
        let y = g.relu(y);
        let y = c.proj2.forward(g, y);
        let mut y = g.add(y, pre);
        for h in &c.highways {
            y = h.forward(g, y);
        }
        c.gru.forward(g, y)
    }

    /// Returns the `1 × style_dim` style node and per-head attention weights.
    fn gst_graph(&self, g: &mut Graph, mel: &Mat) -> (Var, Vec<Var>) {
        let s = &self.layers.gst;
        let mut x = g.constant(self.mel_stats.normalize(mel));
        for conv in &s.convs {
            x = conv.forward(g, x);
            x = g.relu(x);
            x = g.max_pool_rows(x, 2, 2);
        }
        let states = s.gru.forward(g, x, false);
        let last = g.shape(states).0 - 1;
        let summary = g.slice_rows(states, last, 1);
        let q = s.query.forward(g, summary);
        let tokens = g.param(s.tokens);
        let values = g.tanh(tokens);
        let heads = self.config.style_heads;
        let dh = self.config.style_dim / heads;
        let mut outs = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let vh = g.slice_cols(values, h * dh, dh);
            let vt = g.transpose(vh);
            let scores = g.matmul(qh, vt);
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let w = g.softmax_rows(scores);
            outs.push(g.matmul(w, vh));
            weights.push(w);
        }
        (g.concat_cols(&outs), weights)
    }

    fn speaker_graph(&self, g: &mut Graph, s: SpeakerId) -> Var {
        self.layers.speakers.lookup(g, &[s.0])
    }

    /// Log-duration per phoneme, `N × 1`.
    fn rhythm_graph(&self, g: &mut Graph, enc: Var, style: Var, spk: Var) -> Var {
        let n = g.shape(enc).0;
        let st = g.broadcast_row(style, n);
        let sp = g.broadcast_row(spk, n);
        let mut x = g.concat_cols(&[enc, st, sp]);
        for l in &self.layers.rhythm {
            x = l.forward(g, x);
        }
        self.layers.rhythm_out.forward(g, x)
    }

    /// Per-step decoder inputs that do not depend on previous outputs,
    /// `ceil(R / r) × (fc + style + speaker)`.
    fn step_inputs(&self, g: &mut Graph, expanded: Var, style: Var, spk: Var) -> Var {
        let r = self.config.reduction;
        let frames = g.shape(expanded).0;
        let steps = frames.div_ceil(r);
        let groups: Vec<Var> = (0..r)
            .map(|j| {
                let idx: Vec<usize> = (0..steps).map(|k| (k * r + j).min(frames - 1)).collect();
                g.gather_rows(expanded, &idx)
            })
            .collect();
        let x = g.concat_cols(&groups);
        let x = self.layers.decoder.fc.forward(g, x);
        let x = g.relu(x);
        let st = g.broadcast_row(style, steps);
        let sp = g.broadcast_row(spk, steps);
        g.concat_cols(&[x, st, sp])
    }

    fn prenet(&self, g: &mut Graph, prev: Var, mut drop: Option<&mut ChaCha8Rng>) -> Var {
        let p = self.config.prenet_dropout;
        let mut x = prev;
        for l in &self.layers.decoder.prenet {
            x = l.forward(g, x);
            x = g.relu(x);
            if let Some(rng) = drop.as_deref_mut().filter(|_| p > 0.0) {
                let (rows, cols) = g.shape(x);
                let keep = 1.0 / (1.0 - p);
                let mask = Mat::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < p { 0.0 } else { keep });
                let mask = g.constant(mask);
                x = g.mul(x, mask);
            }
        }
        x
    }

    /// Rearranges `steps × (r · n_mels)` step outputs into the first
    /// `frames` mel frames.
    fn unstack(&self, g: &mut Graph, out: Var, frames: usize) -> Var {
        let r = self.config.reduction;
        let n = self.config.n_mels;
        let steps = g.shape(out).0;
        let blocks: Vec<Var> = (0..r).map(|j| g.slice_cols(out, j * n, n)).collect();
        let stacked = g.concat_rows(&blocks);
        let idx: Vec<usize> = (0..frames).map(|f| (f % r) * steps + f / r).collect();
        g.gather_rows(stacked, &idx)
    }

    /// Normalized mel before and after the postnet, both `frames × n_mels`.
    fn decoder_graph(
        &self,
        g: &mut Graph,
        expanded: Var,
        style: Var,
        spk: Var,
        teacher: Option<&Mat>,
        dropout_seed: Option<u64>,
    ) -> (Var, Var) {
        let r = self.config.reduction;
        let n = self.config.n_mels;
        let frames = g.shape(expanded).0;
        let steps = frames.div_ceil(r);
        let inputs = self.step_inputs(g, expanded, style, spk);
        let dec = &self.layers.decoder;
        let out = match teacher {
            Some(t) => {
                let tn = self.mel_stats.normalize(t);
                let mut prev = Mat::zeros((steps, n));
                for k in 1..steps {
                    prev.row_mut(k).assign(&tn.row(k * r - 1));
                }
                let prev = g.constant(prev);
                let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
                let p = self.prenet(g, prev, rng.as_mut());
                let mut x = g.concat_cols(&[inputs, p]);
                for l in &dec.lstms {
                    x = l.forward(g, x, false);
                }
                dec.out.forward(g, x)
            }
            None => {
                let mut states: Vec<Option<LstmState>> = vec![None; dec.lstms.len()];
                let mut prev = g.zeros(1, n);
                let mut rows = Vec::with_capacity(steps);
                for k in 0..steps {
                    let p = self.prenet(g, prev, None);
                    let inp = g.slice_rows(inputs, k, 1);
                    let mut x = g.concat_cols(&[inp, p]);
                    for (l, st) in dec.lstms.iter().zip(states.iter_mut()) {
                        let proj = l.project(g, x);
                        let s = l.step(g, proj, *st);
                        x = s.0;
                        *st = Some(s);
                    }
                    let o = dec.out.forward(g, x);
                    prev = g.slice_cols(o, (r - 1) * n, n);
                    rows.push(o);
                }
                g.concat_rows(&rows)
            }
        };
        let pre = self.unstack(g, out, frames);
        let mut y = pre;
        let last = dec.postnet.len();
        for (i, conv) in dec.postnet.iter().enumerate() {
            y = conv.forward(g, y);
            if i + 1 < last {
                y = g.tanh(y);
            }
        }
        let post = if last > 0 { g.add(pre, y) } else { pre };
        (pre, post)
    }

    fn denormalize(&self, g: &mut Graph, x: Var) -> Var {
        let std = g.constant(MelStats::row(&self.mel_stats.std));
        let mean = g.constant(MelStats::row(&self.mel_stats.mean));
        let y = g.mul_row(x, std);
        g.add_row(y, mean)
    }

    /// One encoded vector per phoneme, `N × 2·encoder_gru`.
    pub fn cbhg_encode(&self, phonemes: &PhonemeSequence) -> Result<Mat> {
        self.check_phonemes(phonemes.tokens())?;
        let mut g = Graph::new(&self.params);
        let v = self.cbhg_graph(&mut g, phonemes.tokens());
        Ok(g.value(v).clone())
    }

    pub fn gst_encode(&self, mel: &MelSpectrogram) -> Result<StyleEmbedding> {
        self.check_mel(&mel.frames)?;
        let mut g = Graph::new(&self.params);
        let (style, weights) = self.gst_graph(&mut g, &mel.frames);
        let rows: Vec<Mat> = weights.iter().map(|w| g.value(*w).clone()).collect();
        let views: Vec<_> = rows.iter().map(|m| m.view()).collect();
        Ok(StyleEmbedding {
            vector: g.value(style).iter().copied().collect(),
            weights: ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"),
        })
    }

    fn style_const(&self, g: &mut Graph, style: &StyleEmbedding) -> Result<Var> {
        if style.vector.len() != self.config.style_dim || style.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "style vector must hold {} finite values",
                self.config.style_dim
            )));
        }
        Ok(g.constant(MelStats::row(&style.vector)))
    }

    fn encoded_const(&self, g: &mut Graph, encoded: &Mat) -> Result<Var> {
        if encoded.nrows() == 0 || encoded.ncols() != self.config.encoder_dim() {
            return Err(Error::InvalidInput(format!(
                "encoded sequence must be non-empty with width {}",
                self.config.encoder_dim()
            )));
        }
        Ok(g.constant(encoded.clone()))
    }

    /// Predicted duration in frames (positive reals) for every phoneme.
    pub fn predict_rhythm(&self, encoded: &Mat, style: &StyleEmbedding, speaker: SpeakerId) -> Result<Vec<f64>> {
        self.check_speaker(speaker)?;
        let mut g = Graph::new(&self.params);
        let enc = self.encoded_const(&mut g, encoded)?;
        let st = self.style_const(&mut g, style)?;
        let sp = self.speaker_graph(&mut g, speaker);
        let v = self.rhythm_graph(&mut g, enc, st, sp);
        Ok(g.value(v).iter().map(|x| x.exp()).collect())
    }

    /// Generates exactly `expanded.nrows()` frames. With `teacher`, every
    /// step is conditioned on the ground-truth previous frame.
    pub fn decode_mel(
        &self,
        expanded: &Mat,
        style: &StyleEmbedding,
        speaker: SpeakerId,
        teacher: Option<&MelSpectrogram>,
    ) -> Result<MelSpectrogram> {
        self.check_speaker(speaker)?;
        if let Some(t) = teacher {
            self.check_mel(&t.frames)?;
            if t.num_frames() != expanded.nrows() {
                return Err(Error::InvalidInput(format!(
                    "teacher has {} frames, expanded input has {}",
                    t.num_frames(),
                    expanded.nrows()
                )));
            }
        }
        let mut g = Graph::new(&self.params);
        let exp = self.encoded_const(&mut g, expanded)?;
        let st = self.style_const(&mut g, style)?;
        let sp = self.speaker_graph(&mut g, speaker);
        let (_, post) = self.decoder_graph(&mut g, exp, st, sp, teacher.map(|t| &t.frames), None);
        let out = self.denormalize(&mut g, post);
        Ok(MelSpectrogram {
            frames: g.value(out).clone(),
            frame_shift_ms: self.config.frame_shift_ms,
            frame_length_ms: self.config.frame_length_ms,
        })
    }

    /// Builds the training objective on `g`. `dropout_seed` enables prenet
    /// dropout with a mask drawn from that seed.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        mel: &Mat,
        tokens: &[usize],
        durations: &[usize],
        speaker: SpeakerId,
        dropout_seed: Option<u64>,
    ) -> Result<(Var, GeneratorLoss)> {
        self.check_phonemes(tokens)?;
        self.check_mel(mel)?;
        self.check_speaker(speaker)?;
        let idx = expansion_index(tokens.len(), durations)?;
        if idx.len() != mel.nrows() {
            return Err(Error::InvalidInput(format!(
                "durations sum to {} but the mel has {} frames",
                idx.len(),
                mel.nrows()
            )));
        }
        let enc = self.cbhg_graph(g, tokens);
        let (style, _) = self.gst_graph(g, mel);
        let spk = self.speaker_graph(g, speaker);

        let log_d = self.rhythm_graph(g, enc, style, spk);
        let target = Mat::from_shape_fn((durations.len(), 1), |(i, _)| (durations[i] as f64).ln());
        let target = g.constant(target);
        let diff = g.sub(log_d, target);
        let sq = g.square(diff);
        let rhythm = g.mean(sq);

        let expanded = g.gather_rows(enc, &idx);
        let (_, post) = self.decoder_graph(g, expanded, style, spk, Some(mel), dropout_seed);
        let out = self.denormalize(g, post);
        let truth = g.constant(mel.clone());
        let diff = g.sub(out, truth);
        let sq = g.square(diff);
        let recon = g.mean(sq);

        let total = g.add(recon, rhythm);
        let loss = GeneratorLoss {
            total: g.scalar(total),
            recon_term: g.scalar(recon),
            rhythm_term: g.scalar(rhythm),
        };
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                detail: format!("non-finite loss (recon {}, rhythm {})", loss.recon_term, loss.rhythm_term),
            });
        }
        Ok((total, loss))
    }

    pub fn generator_loss(
        &self,
        mel: &MelSpectrogram,
        phonemes: &PhonemeSequence,
        durations: &DurationSequence,
        speaker: SpeakerId,
    ) -> Result<GeneratorLoss> {
        let mut g = Graph::new(&self.params);
        Ok(self
            .loss_graph(&mut g, &mel.frames, phonemes.tokens(), durations.as_slice(), speaker, None)?
            .1)
    }

    /// Appends a speaker row initialized to the mean of the existing rows.
    pub fn add_speaker(&mut self, name: &str) -> Result<SpeakerId> {
        if self.speaker_id(name).is_some() {
            return Err(Error::InvalidInput(format!("speaker {name} already present")));
        }
        let id = self.layers.speakers.table;
        let table = self.params.value(id);
        let mean = table.mean_axis(ndarray::Axis(0)).expect("table is non-empty");
        let mut grown = Mat::zeros((table.nrows() + 1, table.ncols()));
        grown.slice_mut(ndarray::s![..table.nrows(), ..]).assign(table);
        grown.row_mut(table.nrows()).assign(&mean);
        self.params.replace(id, grown);
        self.speakers.push(name.to_string());
        Ok(SpeakerId(self.speakers.len() - 1))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_string(),
            step: self.step,
            inventory_hash: self.inventory.hash(),
            model: self.config.clone(),
            mel_stats: self.mel_stats.clone(),
        };
        let text = toml::to_string_pretty(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        write(&dir.join("checkpoint.toml"), text.as_bytes())?;
        write(&dir.join("inventory.txt"), self.inventory.to_text().as_bytes())?;
        let mut names = self.speakers.join("\n");
        names.push('\n');
        write(&dir.join("speakers.txt"), names.as_bytes())?;
        write(&dir.join("params.safetensors"), &self.params.to_safetensors()?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let inv = PhonemeInventory::load(&dir.join("inventory.txt"))?;
        Self::load_with_inventory(dir, &inv)
    }

    pub fn load_with_inventory(dir: &Path, inventory: &PhonemeInventory) -> Result<Self> {
        let path = dir.join("checkpoint.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta =
            toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?} (expected {CHECKPOINT_FORMAT})",
                meta.format
            )));
        }
        if meta.inventory_hash != inventory.hash() {
            return Err(Error::Checkpoint("inventory hash mismatch".into()));
        }
        let sp = dir.join("speakers.txt");
        let speakers: Vec<String> = fs::read_to_string(&sp)
            .map_err(|e| Error::io(&sp, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if meta.mel_stats.mean.len() != meta.model.n_mels || meta.mel_stats.std.len() != meta.model.n_mels {
            return Err(Error::Checkpoint("mel statistics do not match n_mels".into()));
        }
        let mut model = Self::new(meta.model, inventory.clone(), speakers, 0)?;
        let p = dir.join("params.safetensors");
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        model.params.load_safetensors(&bytes)?;
        model.mel_stats = meta.mel_stats;
        model.step = meta.step;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    step: usize,
    inventory_hash: String,
    model: GeneratorConfig,
    mel_stats: MelStats,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
