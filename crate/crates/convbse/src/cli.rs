use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use convbse::bench::{measure_iteration, op_count, ProblemSize};
use convbse::error::{Error, Result};
use convbse::eval::{pair_sources, AllowFilter};
use convbse::io::{read_wav, write_run_log, write_wav, BitDepth, MultichannelSignal};
use convbse::separator::{project_back, project_back_noise, run_bcd, BcdConfig, Variant};
use convbse::stats::{stack, StackedSpectrogram};
use convbse::stft::{analyze, synthesize, Spectrogram, StftConfig, Window};
use convbse::synth::{make_scene, MixtureSpec, SceneParams};

use crate::{BenchArgs, EvalArgs, SeparateArgs, SynthArgs};

#[derive(Serialize, Deserialize)]
struct ManifestConfig {
    kind: String,
    spec: MixtureSpec,
    m: usize,
    duration_s: f64,
    rt60_ms: f64,
    truncate_ms: f64,
    sample_rate: u32,
    speech: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestResult {
    kind: String,
    noise_gain: f64,
}

pub fn cmd_synth(args: SynthArgs) -> Result<()> {
    let (spec, params, speech_paths) = if let Some(manifest) = &args.replay {
        read_manifest(manifest)?
    } else {
        (
            MixtureSpec {
                k: args.k,
                noise_count: args.noise_count,
                target_snr_db: args.snr_db,
                seed: args.seed,
            },
            SceneParams {
                m: args.mics,
                duration_s: args.duration_s,
                rt60_ms: args.rt60_ms,
                truncate_ms: 32.0,
                sample_rate: 16_000,
            },
            args.speech
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>(),
        )
    };

    let mut speech = Vec::new();
    for p in &speech_paths {
        let sig = read_wav(p)?;
        if sig.sample_rate != params.sample_rate {
            return Err(Error::Config(format!(
                "{} has rate {}, scene wants {}",
                p, sig.sample_rate, params.sample_rate
            )));
        }
        speech.push(sig.channel(0));
    }

    let scene = make_scene(&spec, &params, &speech)?;
    std::fs::create_dir_all(&args.out)?;
    write_wav(
        &scene.mixture,
        args.out.join("mixture.wav"),
        BitDepth::Float32,
    )?;
    for (i, r) in scene.references.iter().enumerate() {
        write_wav(
            r,
            args.out.join(format!("reference_{}.wav", i + 1)),
            BitDepth::Float32,
        )?;
    }

    let mut manifest = File::create(args.out.join("manifest.jsonl"))?;
    let cfg = ManifestConfig {
        kind: "config".into(),
        spec: spec.clone(),
        m: params.m,
        duration_s: params.duration_s,
        rt60_ms: params.rt60_ms,
        truncate_ms: params.truncate_ms,
        sample_rate: params.sample_rate,
        speech: speech_paths,
    };
    writeln!(
        manifest,
        "{}",
        serde_json::to_string(&cfg).expect("serialize manifest")
    )?;
    let res = ManifestResult {
        kind: "result".into(),
        noise_gain: scene.noise_gain,
    };
    writeln!(
        manifest,
        "{}",
        serde_json::to_string(&res).expect("serialize manifest")
    )?;

    println!(
        "wrote mixture ({} ch, {:.1} s) and {} references to {} (noise gain {:.6e})",
        scene.mixture.channels(),
        scene.mixture.len() as f64 / params.sample_rate as f64,
        scene.references.len(),
        args.out.display(),
        scene.noise_gain,
    );
    Ok(())
}

fn read_manifest(path: &Path) -> Result<(MixtureSpec, SceneParams, Vec<String>)> {
    let reader = BufReader::new(File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if line.contains("\"config\"") {
            let cfg: ManifestConfig =
                serde_json::from_str(&line).map_err(|e| Error::Manifest(e.to_string()))?;
            let params = SceneParams {
                m: cfg.m,
                duration_s: cfg.duration_s,
                rt60_ms: cfg.rt60_ms,
                truncate_ms: cfg.truncate_ms,
                sample_rate: cfg.sample_rate,
            };
            return Ok((cfg.spec, params, cfg.speech));
        }
    }
    Err(Error::Manifest("no config record found".into()))
}

fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "ive" => Ok(Variant::Ive),
        "iva-conv" => Ok(Variant::IvaConv),
        "ive-conv-alg1" => Ok(Variant::IveConvAlg1),
        "ive-conv-alg2" => Ok(Variant::IveConvAlg2),
        other => Err(Error::Config(format!(
            "unknown variant '{other}' (expected ive, iva-conv, ive-conv-alg1, ive-conv-alg2)"
        ))),
    }
}

pub fn cmd_separate(args: SeparateArgs) -> Result<()> {
    let variant = parse_variant(&args.variant)?;
    let mixture = read_wav(&args.input)?;
    let m = mixture.channels();
    let k = if variant == Variant::IvaConv {
        m
    } else {
        args.k
    };
    if k > m {
        return Err(Error::Config(format!("K = {k} exceeds channel count {m}")));
    }
    let stft_config = StftConfig::new(args.frame_len, args.hop, Window::SqrtHann)?;
    let spec = analyze(&mixture, &stft_config)?;
    let stacked = build_stacked(&spec, variant, args.d1, args.d2)?;
    let config = BcdConfig {
        variant,
        k,
        d1: args.d1,
        d2: args.d2,
        outer_iterations: args.iters,
        alg2_g_period: args.g_period,
        rel_tol: Some(1e-6),
    };

    let out = run_bcd(&stacked, &config, None)?;
    std::fs::create_dir_all(&args.outdir)?;
    for i in 0..k {
        let image = project_back(&out.state, &stacked, i)?;
        let sig = image_to_signal(&image, &spec);
        write_wav(
            &sig,
            args.outdir.join(format!("source_{}.wav", i + 1)),
            BitDepth::Float32,
        )?;
    }
    if args.noise_image && k < m {
        let image = project_back_noise(&out.state, &stacked)?;
        let sig = image_to_signal(&image, &spec);
        write_wav(&sig, args.outdir.join("noise.wav"), BitDepth::Float32)?;
    }
    write_run_log(&out.log, args.outdir.join("run_log.tsv"))?;
    let last = out.log.last().expect("at least one iteration");
    println!(
        "{}: {} iterations, objective {:.6}, {:.2} s",
        variant.as_str(),
        out.log.len(),
        last.objective,
        last.elapsed_s
    );
    Ok(())
}

fn build_stacked(
    spec: &Spectrogram,
    variant: Variant,
    d1: usize,
    d2: usize,
) -> Result<StackedSpectrogram> {
    match variant {
        Variant::Ive => Ok(StackedSpectrogram::without_delays(spec)),
        _ => stack(spec, d1, d2),
    }
}

/// Converts a per-bin spatial image `(F, T, M)` back to the time domain.
fn image_to_signal(
    image: &ndarray::Array3<num_complex::Complex64>,
    template: &Spectrogram,
) -> MultichannelSignal {
    let out_spec = Spectrogram {
        data: image.clone(),
        config: template.config,
        sample_rate: template.sample_rate,
        orig_len: template.orig_len,
    };
    synthesize(&out_spec)
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    if args.estimates.len() != args.references.len() {
        return Err(Error::Config(
            "need matching estimate/reference counts".into(),
        ));
    }
    let allow = if args.short_filter {
        AllowFilter::ShortFilter
    } else {
        AllowFilter::GainOnly
    };
    let mut ests = Vec::new();
    let mut refs = Vec::new();
    for (e, r) in args.estimates.iter().zip(&args.references) {
        // first channel carries the evaluation image
        let est = read_wav(e)?;
        let refr = read_wav(r)?;
        let n = est.len().min(refr.len());
        ests.push(est.channel(0)[..n].to_vec());
        refs.push(refr.channel(0)[..n].to_vec());
    }
    let sdrs = pair_sources(&ests, &refs, allow)?;
    for (i, s) in sdrs.iter().enumerate() {
        println!("source {}: SDR {:.2} dB", i + 1, s);
    }
    if let Some(csv) = &args.csv {
        let mut f = File::create(csv)?;
        writeln!(f, "method,mixture,source,sdr_db,elapsed_s")?;
        for (i, s) in sdrs.iter().enumerate() {
            writeln!(f, "{},{},{},{:.4},0.0", args.method, args.mixture, i + 1, s)?;
        }
    }
    Ok(())
}

pub fn cmd_bench(args: BenchArgs) -> Result<()> {
    println!("variant        M  K   L    F    T    modeled_ops      s/iter");
    for &m in &args.mics {
        let size = ProblemSize {
            m,
            k: args.k.min(m),
            d1: args.d1,
            d2: args.d2,
            f: args.f,
            t: args.t,
        };
        let mut variants = vec![Variant::Ive, Variant::IveConvAlg1, Variant::IveConvAlg2];
        variants.push(Variant::IvaConv);
        let mut alg1_time = None;
        let mut iva_time = None;
        for variant in variants {
            let row = measure_iteration(variant, &size, args.iters, 0)?;
            println!(
                "{:<13} {:>2} {:>2} {:>3} {:>4} {:>4} {:>14} {:>10.4}",
                variant.as_str(),
                m,
                if variant == Variant::IvaConv {
                    m
                } else {
                    size.k
                },
                size.tail_dim(),
                size.f,
                size.t,
                row.modeled_ops,
                row.seconds_per_iteration
            );
            match variant {
                Variant::IveConvAlg1 => alg1_time = Some(row.seconds_per_iteration),
                Variant::IvaConv => iva_time = Some(row.seconds_per_iteration),
                _ => {}
            }
        }
        if let (Some(a), Some(b)) = (alg1_time, iva_time) {
            let modeled = op_count(Variant::IveConvAlg1, &size) as f64
                / op_count(Variant::IvaConv, &size) as f64;
            println!(
                "M={m}: alg1/iva-conv wall-clock ratio {:.3} (modeled {:.3})",
                a / b,
                modeled
            );
        }
    }
    Ok(())
}
