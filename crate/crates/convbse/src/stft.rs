//! Forward/inverse short-time Fourier transform with overlap-add synthesis.

use std::sync::Arc;

use ndarray::Array3;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::io::MultichannelSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Square root of the periodic Hann window, applied at analysis and
    /// synthesis.  Satisfies constant overlap-add whenever `hop` divides
    /// `frame_len`.
    SqrtHann,
    /// Periodic Hann analysis window with rectangular synthesis.
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize, window: Window) -> Result<Self> {
        if frame_len == 0 || hop == 0 || hop > frame_len || !frame_len.is_multiple_of(hop) {
            return Err(Error::Config(format!(
                "frame_len {frame_len} must be a positive multiple of hop {hop}"
            )));
        }
        Ok(Self {
            frame_len,
            hop,
            window,
        })
    }

    /// Paper-protocol default: 2048-sample frames with a 512-sample shift.
    pub fn default_16k() -> Self {
        Self {
            frame_len: 2048,
            hop: 512,
            window: Window::SqrtHann,
        }
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    fn analysis_window(&self) -> Vec<f64> {
        let n = self.frame_len as f64;
        (0..self.frame_len)
            .map(|i| {
                let hann = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos());
                match self.window {
                    Window::SqrtHann => hann.sqrt(),
                    Window::Hann => hann,
                }
            })
            .collect()
    }

    fn synthesis_window(&self) -> Vec<f64> {
        match self.window {
            Window::SqrtHann => self.analysis_window(),
            Window::Hann => vec![1.0; self.frame_len],
        }
    }
}

/// One-sided complex STFT, indexed `(frequency, frame, channel)`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
    /// Length of the time-domain signal that produced this spectrogram;
    /// `synthesize` crops its output back to this length.
    pub orig_len: usize,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }
}

fn fft_pair(frame_len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (
        planner.plan_fft_forward(frame_len),
        planner.plan_fft_inverse(frame_len),
    )
}

pub fn analyze(signal: &MultichannelSignal, config: &StftConfig) -> Result<Spectrogram> {
    let n = signal.len();
    if n < config.frame_len {
        return Err(Error::SignalTooShort {
            got: n,
            need: config.frame_len,
        });
    }
    let frame_len = config.frame_len;
    let hop = config.hop;
    let pad = frame_len;
    let padded_len = n + 2 * pad;
    let frames = (padded_len - frame_len) / hop + 1;
    let bins = config.bins();
    let window = config.analysis_window();
    let (fwd, _) = fft_pair(frame_len);

    let mut data = Array3::zeros((bins, frames, signal.channels()));
    let mut buf = vec![Complex64::default(); frame_len];
    for m in 0..signal.channels() {
        let ch = signal.samples.row(m);
        for t in 0..frames {
            let start = t * hop;
            for i in 0..frame_len {
                let idx = start + i;
                let x = if idx >= pad && idx < pad + n {
                    ch[idx - pad]
                } else {
                    0.0
                };
                buf[i] = Complex64::new(x * window[i], 0.0);
            }
            fwd.process(&mut buf);
            for f in 0..bins {
                data[[f, t, m]] = buf[f];
            }
        }
    }
    Ok(Spectrogram {
        data,
        config: *config,
        sample_rate: signal.sample_rate,
        orig_len: n,
    })
}

pub fn synthesize(spec: &Spectrogram) -> MultichannelSignal {
    let config = &spec.config;
    let frame_len = config.frame_len;
    let hop = config.hop;
    let bins = spec.bins();
    let frames = spec.frames();
    let channels = spec.channels();
    let pad = frame_len;
    let padded_len = (frames - 1) * hop + frame_len;
    let window = config.synthesis_window();
    let analysis = config.analysis_window();
    let (_, inv) = fft_pair(frame_len);
    let scale = 1.0 / frame_len as f64;

    // Accumulated analysis*synthesis window product; dividing by it makes the
    // overlap-add exact even where the overlap depth is not yet constant.
    let mut norm = vec![0.0f64; padded_len];
    for t in 0..frames {
        for i in 0..frame_len {
            norm[t * hop + i] += analysis[i] * window[i];
        }
    }

    let mut samples = ndarray::Array2::zeros((channels, spec.orig_len));
    let mut buf = vec![Complex64::default(); frame_len];
    for m in 0..channels {
        let mut acc = vec![0.0f64; padded_len];
        for t in 0..frames {
            buf[0] = spec.data[[0, t, m]];
            for f in 1..bins {
                buf[f] = spec.data[[f, t, m]];
                if frame_len - f > bins - 1 {
                    buf[frame_len - f] = spec.data[[f, t, m]].conj();
                }
            }
            inv.process(&mut buf);
            for i in 0..frame_len {
                acc[t * hop + i] += buf[i].re * scale * window[i];
            }
        }
        for i in 0..spec.orig_len {
            let w = norm[pad + i];
            samples[[m, i]] = if w > 1e-12 { acc[pad + i] / w } else { 0.0 };
        }
    }
    MultichannelSignal::new(samples, spec.sample_rate)
}
