//! Synthetic noisy reverberant mixtures and oracle reference images.

use ndarray::Array2;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::MultichannelSignal;

/// Room impulse responses for a set of point sources.
#[derive(Debug, Clone)]
pub struct RirSet {
    /// `(sources, channels, taps)` flattened as a Vec of per-source matrices.
    pub rirs: Vec<Array2<f64>>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Target source count.
    pub k: usize,
    pub noise_count: usize,
    pub target_snr_db: f64,
    pub seed: u64,
}

/// Linear convolution of each RIR row with the source, truncated to the
/// source length.
pub fn convolve_rir(source: &[f64], rir: &Array2<f64>) -> MultichannelSignal {
    let m = rir.nrows();
    let n = source.len();
    let mut samples = Array2::zeros((m, n));
    for ch in 0..m {
        let row: Vec<f64> = rir.row(ch).to_vec();
        let full = fft_convolve(source, &row);
        for i in 0..n {
            samples[[ch, i]] = full[i];
        }
    }
    MultichannelSignal::new(samples, 16_000)
}

/// FFT-based full linear convolution.
fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex64> = a
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::default()))
        .take(size)
        .collect();
    let mut fb: Vec<Complex64> = b
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::default()))
        .take(size)
        .collect();
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Scales the summed noise images by one scalar gain so that
/// `10 log10( mean(speech variances) / sum(noise variances) )`, measured on
/// the first channel, equals `target_snr_db`; returns the mixture and the
/// applied gain.
pub fn mix_at_snr(
    speech_images: &[MultichannelSignal],
    noise_images: &[MultichannelSignal],
    target_snr_db: f64,
) -> Result<(MultichannelSignal, f64)> {
    if speech_images.is_empty() {
        return Err(Error::Degenerate("need at least one speech image".into()));
    }
    if noise_images.is_empty() {
        return Err(Error::Degenerate(
            "noise gain undefined without noise images".into(),
        ));
    }
    let m = speech_images[0].channels();
    let n = speech_images[0].len();
    for img in speech_images.iter().chain(noise_images) {
        if img.channels() != m || img.len() != n {
            return Err(Error::Degenerate("all images must share shape".into()));
        }
    }
    let variance = |sig: &MultichannelSignal| -> f64 {
        let row = sig.samples.row(0);
        let len = row.len() as f64;
        let mean = row.sum() / len;
        row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len
    };
    let speech_mean = speech_images.iter().map(variance).sum::<f64>() / speech_images.len() as f64;
    let noise_sum: f64 = noise_images.iter().map(variance).sum();
    if speech_mean <= 0.0 {
        return Err(Error::Degenerate("zero-variance speech".into()));
    }
    if noise_sum <= 0.0 {
        return Err(Error::Degenerate("zero-variance noise".into()));
    }
    let gain = (speech_mean / noise_sum / 10f64.powf(target_snr_db / 10.0)).sqrt();
    let mut samples = Array2::zeros((m, n));
    for img in speech_images {
        samples += &img.samples;
    }
    for img in noise_images {
        samples.scaled_add(gain, &img.samples);
    }
    Ok((
        MultichannelSignal::new(samples, speech_images[0].sample_rate),
        gain,
    ))
}

/// Measured mixing SNR of already-scaled images, for verification.
pub fn measured_snr_db(
    speech_images: &[MultichannelSignal],
    scaled_noise_images: &[MultichannelSignal],
) -> f64 {
    let variance = |sig: &MultichannelSignal| -> f64 {
        let row = sig.samples.row(0);
        let len = row.len() as f64;
        let mean = row.sum() / len;
        row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len
    };
    let speech_mean = speech_images.iter().map(variance).sum::<f64>() / speech_images.len() as f64;
    let noise_sum: f64 = scaled_noise_images.iter().map(variance).sum();
    10.0 * (speech_mean / noise_sum).log10()
}

/// Reference spatial image: convolution with the RIR truncated after
/// `truncate_ms` (late taps zeroed).
pub fn oracle_image(
    source: &[f64],
    rir: &Array2<f64>,
    truncate_ms: f64,
    sample_rate: u32,
) -> MultichannelSignal {
    assert!(truncate_ms > 0.0);
    let cut = ((truncate_ms / 1000.0) * sample_rate as f64).round() as usize;
    let mut truncated = rir.clone();
    if cut < truncated.ncols() {
        truncated.slice_mut(ndarray::s![.., cut..]).fill(0.0);
    }
    convolve_rir(source, &truncated)
}

/// Synthesizes an `M`-channel RIR: a direct-path impulse with a random
/// sub-frame delay per channel, followed by an exponentially decaying
/// Gaussian tail whose energy envelope reaches -60 dB at `rt60_ms`.
pub fn synth_rir(rt60_ms: f64, m: usize, seed: u64, sample_rate: u32) -> Array2<f64> {
    assert!(rt60_ms > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n60 = (rt60_ms / 1000.0 * sample_rate as f64).round() as usize;
    // amplitude envelope exp(-alpha n): energy -60 dB at n60
    let alpha = 3.0 * std::f64::consts::LN_10 / n60 as f64;
    let n_rir = n60 + n60 / 2;
    let mut rirs = Array2::zeros((m, n_rir));
    for ch in 0..m {
        let delay = rng.gen_range(0..32usize);
        rirs[[ch, delay]] = 1.0;
        for n in (delay + 1)..n_rir {
            let g: f64 = rng.sample(StandardNormal);
            rirs[[ch, n]] = 0.35 * g * (-alpha * n as f64).exp();
        }
    }
    rirs
}

/// Pink (1/f power) noise with unit variance.
pub fn pink_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = len.next_power_of_two();
    let mut spectrum = vec![Complex64::default(); size];
    for (k, s) in spectrum.iter_mut().enumerate().take(size / 2 + 1) {
        if k == 0 {
            continue;
        }
        let mag = 1.0 / (k as f64).sqrt();
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        *s = Complex64::from_polar(mag, phase);
    }
    for k in 1..size / 2 {
        spectrum[size - k] = spectrum[k].conj();
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(size).process(&mut spectrum);
    let mut out: Vec<f64> = spectrum[..len].iter().map(|c| c.re).collect();
    normalize_variance(&mut out);
    out
}

/// A nonstationary speech-like test source: pink-noise carrier with a
/// syllabic-rate random amplitude envelope and occasional low-energy gaps.
pub fn speech_like(len: usize, seed: u64, sample_rate: u32) -> Vec<f64> {
    let carrier = pink_noise(len, seed.wrapping_mul(2654435761).wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // random envelope with ~4 Hz fluctuations, built from a slow random walk
    // smoothed by a one-pole filter
    let hop = (sample_rate as f64 / 100.0) as usize; // 10 ms control rate
    let n_ctl = len / hop + 2;
    let mut ctl = vec![0.0f64; n_ctl];
    let mut state: f64 = 0.0;
    let pole = 0.92; // ~4 Hz at the 100 Hz control rate
    for c in ctl.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        state = pole * state + (1.0 - pole * pole).sqrt() * g;
        *c = state;
    }
    let mut out = vec![0.0f64; len];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = i as f64 / hop as f64;
        let idx = pos as usize;
        let frac = pos - idx as f64;
        let e = ctl[idx] * (1.0 - frac) + ctl[idx + 1] * frac;
        // squashing makes loud syllables and near-silent gaps
        let env = (e.max(0.0)).powi(2) + 0.05;
        *o = carrier[i] * env;
    }
    normalize_variance(&mut out);
    out
}

fn normalize_variance(x: &mut [f64]) {
    let len = x.len() as f64;
    let mean = x.iter().sum::<f64>() / len;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
    if var > 0.0 {
        let s = 1.0 / var.sqrt();
        for v in x.iter_mut() {
            *v = (*v - mean) * s;
        }
    }
}

/// A fully synthesized scene: mixture, oracle target images, and the
/// bookkeeping needed to replay it bit-exactly.
pub struct Scene {
    pub mixture: MultichannelSignal,
    /// Oracle spatial images of the `K` targets (truncated-RIR references).
    pub references: Vec<MultichannelSignal>,
    /// Full reverberant target images (pre-truncation), for inspection.
    pub target_images: Vec<MultichannelSignal>,
    pub noise_gain: f64,
    pub spec: MixtureSpec,
}

pub struct SceneParams {
    pub m: usize,
    pub duration_s: f64,
    pub rt60_ms: f64,
    pub truncate_ms: f64,
    pub sample_rate: u32,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            m: 4,
            duration_s: 12.0,
            rt60_ms: 400.0,
            truncate_ms: 32.0,
            sample_rate: 16_000,
        }
    }
}

/// Builds a synthetic scene from generated sources, or from user-supplied
/// speech signals when `speech` is non-empty.
pub fn make_scene(spec: &MixtureSpec, params: &SceneParams, speech: &[Vec<f64>]) -> Result<Scene> {
    if spec.k < 1 {
        return Err(Error::Config("need at least one target source".into()));
    }
    if spec.noise_count == 0 {
        return Err(Error::Degenerate(
            "noise gain undefined with noise_count = 0".into(),
        ));
    }
    if !speech.is_empty() && speech.len() != spec.k {
        return Err(Error::Config(format!(
            "got {} speech signals for K = {}",
            speech.len(),
            spec.k
        )));
    }
    let len = (params.duration_s * params.sample_rate as f64) as usize;
    let mut sources: Vec<Vec<f64>> = Vec::with_capacity(spec.k);
    for i in 0..spec.k {
        if speech.is_empty() {
            sources.push(speech_like(
                len,
                spec.seed.wrapping_add(1000 + i as u64),
                params.sample_rate,
            ));
        } else {
            let mut s = speech[i].clone();
            s.truncate(len);
            if s.len() < len {
                return Err(Error::SignalTooShort {
                    got: s.len(),
                    need: len,
                });
            }
            sources.push(s);
        }
    }

    let mut target_images = Vec::with_capacity(spec.k);
    let mut references = Vec::with_capacity(spec.k);
    for (i, src) in sources.iter().enumerate() {
        let rir = synth_rir(
            params.rt60_ms,
            params.m,
            spec.seed.wrapping_add(2000 + i as u64),
            params.sample_rate,
        );
        target_images.push(convolve_rir(src, &rir));
        references.push(oracle_image(
            src,
            &rir,
            params.truncate_ms,
            params.sample_rate,
        ));
    }

    let mut noise_images = Vec::with_capacity(spec.noise_count);
    for j in 0..spec.noise_count {
        let noise = pink_noise(len, spec.seed.wrapping_add(3000 + j as u64));
        let rir = synth_rir(
            params.rt60_ms,
            params.m,
            spec.seed.wrapping_add(4000 + j as u64),
            params.sample_rate,
        );
        noise_images.push(convolve_rir(&noise, &rir));
    }

    let (mixture, noise_gain) = mix_at_snr(&target_images, &noise_images, spec.target_snr_db)?;
    Ok(Scene {
        mixture,
        references,
        target_images,
        noise_gain,
        spec: spec.clone(),
    })
}
