use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::FeatureConfig;

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Mirror index into `0..len` (edge sample not repeated), periodic beyond one
/// reflection.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

pub fn num_frames(num_samples: usize, hop: usize) -> usize {
    num_samples.div_ceil(hop)
}

/// Short-time Fourier transform with the centered framing used throughout.
pub struct Stft {
    pub hop: usize,
    pub win: usize,
    pub n_fft: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let n_fft = cfg.n_fft();
        let mut planner = FftPlanner::new();
        Self {
            hop: cfg.hop_length(),
            win: cfg.win_length(),
            n_fft,
            window: hann_window(cfg.win_length()),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Windowed samples of frame `t`, reflect padded at the edges.
    pub fn frame(&self, samples: &[f64], t: usize) -> Vec<f64> {
        let start = (t * self.hop) as isize - (self.win / 2) as isize;
        (0..self.win)
            .map(|j| samples[reflect_index(start + j as isize, samples.len())] * self.window[j])
            .collect()
    }

    /// Complex spectrum, `frames × n_bins`.
    pub fn forward(&self, samples: &[f64]) -> Array2<Complex64> {
        let t_len = num_frames(samples.len(), self.hop);
        let bins = self.n_bins();
        let mut out = Array2::zeros((t_len, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for t in 0..t_len {
            buf.fill(Complex64::new(0.0, 0.0));
            for (b, v) in buf.iter_mut().zip(self.frame(samples, t)) {
                b.re = v;
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                out[[t, k]] = buf[k];
            }
        }
        out
    }

    /// Weighted overlap-add inverse producing `frames * hop` samples.
    pub fn inverse(&self, spec: &Array2<Complex64>) -> Vec<f64> {
        let (t_len, bins) = spec.dim();
        let n_out = t_len * self.hop;
        let mut out = vec![0.0; n_out];
        let mut norm = vec![0.0; n_out];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let scale = 1.0 / self.n_fft as f64;
        for t in 0..t_len {
            for k in 0..bins {
                buf[k] = spec[[t, k]];
            }
            for k in bins..self.n_fft {
                buf[k] = spec[[t, self.n_fft - k]].conj();
            }
            self.inverse.process(&mut buf);
            let start = (t * self.hop) as isize - (self.win / 2) as isize;
            for j in 0..self.win {
                let n = start + j as isize;
                if n < 0 || n as usize >= n_out {
                    continue;
                }
                let w = self.window[j];
                out[n as usize] += buf[j].re * scale * w;
                norm[n as usize] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(norm) {
            if n > 1e-8 {
                *o /= n;
            }
        }
        out
    }
}
