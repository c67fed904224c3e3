//! Multichannel WAV input/output and run-log serialization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A multichannel time-domain signal, channels-major.
///
/// Samples are kept as `f64` end-to-end; quantization happens only when a
/// file is written at an integer bit depth.
#[derive(Debug, Clone)]
pub struct MultichannelSignal {
    /// `(channels, samples)`, values nominally within `[-1, 1]`.
    pub samples: Array2<f64>,
    pub sample_rate: u32,
}

impl MultichannelSignal {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample_rate must be positive");
        assert!(samples.nrows() >= 1, "need at least one channel");
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    /// Single-channel view as a contiguous slice.
    pub fn channel(&self, m: usize) -> Vec<f64> {
        self.samples.row(m).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Int16,
    Int24,
    Float32,
}

pub fn read_wav<P: AsRef<Path>>(path: P) -> Result<MultichannelSignal> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.sample_rate != 16_000 {
        eprintln!(
            "warning: {} has sample rate {} Hz (16 kHz expected); no resampling is applied",
            path.as_ref().display(),
            spec.sample_rate
        );
    }
    let channels = spec.channels as usize;
    let mut interleaved: Vec<f64> = Vec::new();
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => {
            for s in reader.samples::<f32>() {
                interleaved.push(s? as f64);
            }
        }
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1i64 << (bits - 1)) as f64;
            for s in reader.samples::<i32>() {
                interleaved.push(s? as f64 * scale);
            }
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!("{fmt:?} {bits}-bit")));
        }
    }
    let frames = interleaved.len() / channels;
    let mut samples = Array2::zeros((channels, frames));
    for t in 0..frames {
        for m in 0..channels {
            samples[[m, t]] = interleaved[t * channels + m];
        }
    }
    Ok(MultichannelSignal::new(samples, spec.sample_rate))
}

/// Writes `signal` at the requested bit depth, returning the number of
/// samples that had to be clipped to `[-1, 1]`.
pub fn write_wav<P: AsRef<Path>>(
    signal: &MultichannelSignal,
    path: P,
    bit_depth: BitDepth,
) -> Result<usize> {
    if signal.samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("write_wav input"));
    }
    let (sample_format, bits) = match bit_depth {
        BitDepth::Int16 => (hound::SampleFormat::Int, 16),
        BitDepth::Int24 => (hound::SampleFormat::Int, 24),
        BitDepth::Float32 => (hound::SampleFormat::Float, 32),
    };
    let spec = hound::WavSpec {
        channels: signal.channels() as u16,
        sample_rate: signal.sample_rate,
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    let mut clipped = 0usize;
    let frames = signal.len();
    for t in 0..frames {
        for m in 0..signal.channels() {
            let mut x = signal.samples[[m, t]];
            if !(-1.0..=1.0).contains(&x) {
                clipped += 1;
                x = x.clamp(-1.0, 1.0);
            }
            match bit_depth {
                BitDepth::Float32 => writer.write_sample(x as f32)?,
                BitDepth::Int16 | BitDepth::Int24 => {
                    let full = (1i64 << (bits - 1)) as f64;
                    let q = (x * full).round().min(full - 1.0).max(-full) as i32;
                    writer.write_sample(q)?;
                }
            }
        }
    }
    writer.finalize()?;
    Ok(clipped)
}

/// One line of the optimizer run log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iteration: usize,
    pub objective: f64,
    pub elapsed_s: f64,
    /// Per-source SDR in dB, when evaluation ran alongside the optimizer.
    pub sdr_db: Option<Vec<f64>>,
}

pub fn write_run_log<P: AsRef<Path>>(records: &[RunRecord], path: P) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Degenerate(
            "run log needs at least one record".into(),
        ));
    }
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    let k = records[0].sdr_db.as_ref().map_or(0, Vec::len);
    let sdr_header: String = (1..=k).map(|i| format!("\tsdr_{i}")).collect();
    writeln!(out, "# iter\tobjective\telapsed_s{sdr_header}")?;
    for r in records {
        write!(
            out,
            "{}\t{:.17e}\t{:.6}",
            r.iteration, r.objective, r.elapsed_s
        )?;
        if let Some(sdrs) = &r.sdr_db {
            for s in sdrs {
                write!(out, "\t{s:.17e}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_run_log<P: AsRef<Path>>(path: P) -> Result<Vec<RunRecord>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::RunLogParse {
                line: idx + 1,
                msg: e.to_string(),
            })
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::RunLogParse {
                line: idx + 1,
                msg: format!("expected at least 3 fields, got {}", fields.len()),
            });
        }
        let iteration = fields[0].parse::<usize>().map_err(|e| Error::RunLogParse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let objective = parse(fields[1])?;
        let elapsed_s = parse(fields[2])?;
        let sdr_db = if fields.len() > 3 {
            Some(
                fields[3..]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        records.push(RunRecord {
            iteration,
            objective,
            elapsed_s,
            sdr_db,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_signal(channels: usize, len: usize, seed: u64) -> MultichannelSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = Array2::from_shape_fn((channels, len), |_| rng.gen_range(-0.9..0.9));
        MultichannelSignal::new(samples, 16_000)
    }

    #[test]
    fn zero_wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        let sig = MultichannelSignal::new(Array2::zeros((2, 1000)), 16_000);
        let clipped = write_wav(&sig, &path, BitDepth::Int16).unwrap();
        assert_eq!(clipped, 0);
        let back = read_wav(&path).unwrap();
        assert_eq!(back.channels(), 2);
        assert_eq!(back.len(), 1000);
        assert_eq!(back.sample_rate, 16_000);
        assert!(back.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn round_trip_within_quantization_step() {
        let dir = tempfile::tempdir().unwrap();
        for (depth, bits) in [(BitDepth::Int16, 16u32), (BitDepth::Int24, 24)] {
            let path = dir.path().join(format!("rt{bits}.wav"));
            let sig = random_signal(3, 2048, bits as u64);
            write_wav(&sig, &path, depth).unwrap();
            let back = read_wav(&path).unwrap();
            let step = 1.0 / (1u64 << (bits - 1)) as f64;
            let max_err = (&back.samples - &sig.samples)
                .iter()
                .fold(0f64, |a, &e| a.max(e.abs()));
            assert!(max_err <= step, "{bits}-bit error {max_err} > step {step}");
        }
    }

    #[test]
    fn float32_impulse_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imp.wav");
        let mut samples = Array2::zeros((2, 64));
        samples[[0, 0]] = 1.0;
        samples[[1, 5]] = -0.5;
        let sig = MultichannelSignal::new(samples, 16_000);
        write_wav(&sig, &path, BitDepth::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples, sig.samples);
    }

    #[test]
    fn clipping_is_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let mut samples = Array2::zeros((1, 16));
        samples[[0, 3]] = 1.5;
        let sig = MultichannelSignal::new(samples, 16_000);
        let clipped = write_wav(&sig, &path, BitDepth::Float32).unwrap();
        assert!(clipped >= 1);
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples[[0, 3]], 1.0);
    }

    #[test]
    fn channel_order_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ord.wav");
        let mut samples = Array2::zeros((4, 8));
        for m in 0..4 {
            samples[[m, 0]] = 0.1 * (m + 1) as f64;
        }
        let sig = MultichannelSignal::new(samples, 16_000);
        write_wav(&sig, &path, BitDepth::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        for m in 0..4 {
            assert!((back.samples[[m, 0]] - 0.1 * (m + 1) as f64).abs() < 1e-7);
        }
    }

    #[test]
    fn run_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.tsv");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let records: Vec<RunRecord> = (0..100)
            .map(|i| RunRecord {
                iteration: i,
                objective: rng.gen_range(-1e3..1e3),
                elapsed_s: i as f64 * 0.125,
                sdr_db: Some(vec![rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)]),
            })
            .collect();
        write_run_log(&records, &path).unwrap();
        let back = read_run_log(&path).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.objective, b.objective);
            assert_eq!(a.sdr_db, b.sdr_db);
        }
        // header plus one line per record
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert!(text.starts_with("# iter\tobjective\telapsed_s\tsdr_1\tsdr_2"));
    }

    #[test]
    fn run_log_single_record_without_sdr() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log1.tsv");
        let records = vec![RunRecord {
            iteration: 0,
            objective: 1.5,
            elapsed_s: 0.0,
            sdr_db: None,
        }];
        write_run_log(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = read_run_log(&path).unwrap();
        assert_eq!(back, records);
    }
}
