//! Building blocks shared by the recognizer and the generator.

use rand::Rng;

use super::graph::{Graph, Mat, Var};
use super::params::{ParamId, ParamSet};

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let w = ps.add_xavier(format!("{name}.w"), in_dim, out_dim, rng);
        let b = Some(ps.add_const(format!("{name}.b"), 1, out_dim, 0.0));
        Self { w, b, in_dim, out_dim }
    }

    pub fn no_bias<R: Rng>(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let w = ps.add_xavier(format!("{name}.w"), in_dim, out_dim, rng);
        Self { w, b: None, in_dim, out_dim }
    }

    /// Sets every bias entry to `v`.
    pub fn fill_bias(&self, ps: &mut ParamSet, v: f64) {
        if let Some(b) = self.b {
            ps.value_mut(b).fill(v);
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// 1-D convolution along the time (row) axis with "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    proj: Linear,
    kernel: usize,
}

impl Conv1d {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            proj: Linear::new(ps, name, in_ch * kernel, out_ch, rng),
            kernel,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let u = if self.kernel == 1 {
            x
        } else {
            g.unfold(x, self.kernel, (self.kernel - 1) / 2)
        };
        self.proj.forward(g, u)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        Self {
            gain: ps.add_const(format!("{name}.gain"), 1, dim, 1.0),
            bias: ps.add_const(format!("{name}.bias"), 1, dim, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm(x, 1e-5);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, rows: usize, dim: usize, rng: &mut R) -> Self {
        let limit = (3.0 / dim as f64).sqrt();
        Self {
            table: ps.add_uniform(format!("{name}.table"), rows, dim, limit, rng),
            dim,
        }
    }

    pub fn lookup(&self, g: &mut Graph, idx: &[usize]) -> Var {
        let t = g.param(self.table);
        g.gather_rows(t, idx)
    }
}

/// Unidirectional LSTM layer.
#[derive(Clone, Debug)]
pub struct Lstm {
    input: Linear,
    recurrent: ParamId,
    pub hidden: usize,
}

/// `(h, c)`, each 1×hidden.
pub type LstmState = (Var, Var);

impl Lstm {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let input = Linear::new(ps, &format!("{name}.input"), in_dim, 4 * hidden, rng);
        // forget-gate bias starts at 1
        if let Some(b) = input.b {
            ps.value_mut(b)
                .slice_mut(ndarray::s![.., hidden..2 * hidden])
                .fill(1.0);
        }
        let recurrent = ps.add_xavier(format!("{name}.recurrent"), hidden, 4 * hidden, rng);
        Self { input, recurrent, hidden }
    }

    /// Input projection for every row at once; feed rows to [`Lstm::step`].
    pub fn project(&self, g: &mut Graph, x: Var) -> Var {
        self.input.forward(g, x)
    }

    pub fn step(&self, g: &mut Graph, projected_row: Var, state: Option<LstmState>) -> LstmState {
        let h = self.hidden;
        let gates = match state {
            Some((hp, _)) => {
                let u = g.param(self.recurrent);
                let r = g.matmul(hp, u);
                g.add(projected_row, r)
            }
            None => projected_row,
        };
        let sig = g.sigmoid(gates);
        let i = g.slice_cols(sig, 0, h);
        let f = g.slice_cols(sig, h, h);
        let o = g.slice_cols(sig, 3 * h, h);
        let cand = g.slice_cols(gates, 2 * h, h);
        let cand = g.tanh(cand);
        let ic = g.mul(i, cand);
        let c = match state {
            Some((_, cp)) => {
                let fc = g.mul(f, cp);
                g.add(fc, ic)
            }
            None => ic,
        };
        let tc = g.tanh(c);
        let hn = g.mul(o, tc);
        (hn, c)
    }

    /// Runs over all rows of `x`; output row `t` is the hidden state at `t`.
    pub fn forward(&self, g: &mut Graph, x: Var, reverse: bool) -> Var {
        let t_len = g.shape(x).0;
        let xp = self.project(g, x);
        let mut state = None;
        let mut outs = vec![None; t_len];
        let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        for t in order {
            let row = g.slice_rows(xp, t, 1);
            let s = self.step(g, row, state);
            outs[t] = Some(s.0);
            state = Some(s);
        }
        let outs: Vec<Var> = outs.into_iter().map(|o| o.unwrap()).collect();
        g.concat_rows(&outs)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fwd: Lstm::new(ps, &format!("{name}.fwd"), in_dim, hidden, rng),
            bwd: Lstm::new(ps, &format!("{name}.bwd"), in_dim, hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let f = self.fwd.forward(g, x, false);
        let b = self.bwd.forward(g, x, true);
        g.concat_cols(&[f, b])
    }
}

/// Unidirectional GRU layer.
#[derive(Clone, Debug)]
pub struct Gru {
    input: Linear,
    recurrent: Linear,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            input: Linear::new(ps, &format!("{name}.input"), in_dim, 3 * hidden, rng),
            recurrent: Linear::new(ps, &format!("{name}.recurrent"), hidden, 3 * hidden, rng),
            hidden,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, reverse: bool) -> Var {
        let hd = self.hidden;
        let t_len = g.shape(x).0;
        let xp = self.input.forward(g, x);
        let mut h: Option<Var> = None;
        let mut outs = vec![None; t_len];
        let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        for t in order {
            let xr = g.slice_rows(xp, t, 1);
            let hp = match h {
                Some(h) => h,
                None => g.zeros(1, hd),
            };
            let hr = self.recurrent.forward(g, hp);
            let xrz = g.slice_cols(xr, 0, 2 * hd);
            let hrz = g.slice_cols(hr, 0, 2 * hd);
            let rz = g.add(xrz, hrz);
            let rz = g.sigmoid(rz);
            let r = g.slice_cols(rz, 0, hd);
            let z = g.slice_cols(rz, hd, hd);
            let xn = g.slice_cols(xr, 2 * hd, hd);
            let hn = g.slice_cols(hr, 2 * hd, hd);
            let rhn = g.mul(r, hn);
            let n = g.add(xn, rhn);
            let n = g.tanh(n);
            // h' = n + z * (h - n)
            let d = g.sub(hp, n);
            let zd = g.mul(z, d);
            let hnew = g.add(n, zd);
            outs[t] = Some(hnew);
            h = Some(hnew);
        }
        let outs: Vec<Var> = outs.into_iter().map(|o| o.unwrap()).collect();
        g.concat_rows(&outs)
    }
}

#[derive(Clone, Debug)]
pub struct BiGru {
    fwd: Gru,
    bwd: Gru,
}

impl BiGru {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fwd: Gru::new(ps, &format!("{name}.fwd"), in_dim, hidden, rng),
            bwd: Gru::new(ps, &format!("{name}.bwd"), in_dim, hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let f = self.fwd.forward(g, x, false);
        let b = self.bwd.forward(g, x, true);
        g.concat_cols(&[f, b])
    }
}

/// Highway layer: `x + T(x) * (H(x) - x)`.
#[derive(Clone, Debug)]
pub struct Highway {
    h: Linear,
    t: Linear,
}

impl Highway {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, dim: usize, rng: &mut R) -> Self {
        let h = Linear::new(ps, &format!("{name}.h"), dim, dim, rng);
        let t = Linear::new(ps, &format!("{name}.t"), dim, dim, rng);
        t.fill_bias(ps, -1.0);
        Self { h, t }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.h.forward(g, x);
        let h = g.relu(h);
        let t = self.t.forward(g, x);
        let t = g.sigmoid(t);
        let d = g.sub(h, x);
        let td = g.mul(t, d);
        g.add(x, td)
    }
}

/// Scaled dot-product multi-head attention.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "heads must divide width");
        Self {
            q: Linear::new(ps, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(ps, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(ps, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(ps, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        }
    }

    /// `mask` is added to the pre-softmax scores (use large negatives to block).
    pub fn forward(&self, g: &mut Graph, query: Var, memory: Var, mask: Option<&Mat>) -> Var {
        let dk = self.dim / self.heads;
        let q = self.q.forward(g, query);
        let k = self.k.forward(g, memory);
        let v = self.v.forward(g, memory);
        let mask = mask.map(|m| g.constant(m.clone()));
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk);
            let kh = g.slice_cols(k, h * dk, dk);
            let vh = g.slice_cols(v, h * dk, dk);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add(scores, m);
            }
            let w = g.softmax_rows(scores);
            outs.push(g.matmul(w, vh));
        }
        let cat = g.concat_cols(&outs);
        self.o.forward(g, cat)
    }
}

/// Additive sinusoidal position table, `len × dim`.
pub fn sinusoid_positions(len: usize, dim: usize) -> Mat {
    let mut m = Mat::zeros((len, dim));
    for p in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = p as f64 * rate;
            m[[p, i]] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    m
}

/// Lower-triangular additive mask: position `i` may see `j <= i`.
pub fn causal_mask(len: usize) -> Mat {
    Mat::from_shape_fn((len, len), |(i, j)| if j > i { -1e9 } else { 0.0 })
}
