//! Separation quality metrics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// SDR values are capped to this magnitude in dB.
pub const SDR_CAP_DB: f64 = 60.0;
/// Distortion-filter length for [`AllowFilter::ShortFilter`].
pub const SHORT_FILTER_TAPS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllowFilter {
    /// Least-squares scalar gain on the reference.
    GainOnly,
    /// Least-squares FIR of [`SHORT_FILTER_TAPS`] taps on the reference.
    ShortFilter,
}

#[derive(Debug, Clone)]
pub struct SdrReport {
    pub method: String,
    pub mixture: String,
    /// Per-source SDR in dB, after best-match pairing.
    pub sdr_db: Vec<f64>,
    pub elapsed_s: f64,
    pub iteration: usize,
}

/// Signal-to-distortion ratio in dB between a single-channel estimate and
/// its reference, allowing the reference a gain (or short filter) fitted by
/// least squares.
pub fn sdr(estimate: &[f64], reference: &[f64], allow: AllowFilter) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Degenerate(format!(
            "length mismatch: estimate {} vs reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|x| x * x).sum();
    if ref_energy == 0.0 {
        return Err(Error::Degenerate("all-zero reference".into()));
    }
    let (target, target_energy) = match allow {
        AllowFilter::GainOnly => {
            let dot: f64 = estimate.iter().zip(reference).map(|(e, r)| e * r).sum();
            let alpha = dot / ref_energy;
            let target: Vec<f64> = reference.iter().map(|r| alpha * r).collect();
            let energy = alpha * alpha * ref_energy;
            (target, energy)
        }
        AllowFilter::ShortFilter => {
            let h = fit_fir(reference, estimate, SHORT_FILTER_TAPS.min(reference.len()));
            let target = filter(reference, &h);
            let energy = target.iter().map(|x| x * x).sum();
            (target, energy)
        }
    };
    let err_energy: f64 = estimate
        .iter()
        .zip(&target)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    let ratio = if err_energy > 0.0 {
        target_energy / err_energy
    } else {
        f64::INFINITY
    };
    Ok((10.0 * ratio.log10()).clamp(-SDR_CAP_DB, SDR_CAP_DB))
}

/// Least-squares FIR fit of `x` to `y` via Toeplitz normal equations.
fn fit_fir(x: &[f64], y: &[f64], taps: usize) -> Vec<f64> {
    let n = x.len();
    // autocorrelation lags 0..taps-1 and cross-correlation
    let mut r = vec![0.0; taps];
    for lag in 0..taps {
        let mut acc = 0.0;
        for i in lag..n {
            acc += x[i] * x[i - lag];
        }
        r[lag] = acc;
    }
    let mut p = vec![0.0; taps];
    for lag in 0..taps {
        let mut acc = 0.0;
        for i in lag..n {
            acc += y[i] * x[i - lag];
        }
        p[lag] = acc;
    }
    let ridge = 1e-9 * r[0].max(f64::MIN_POSITIVE);
    let a = DMatrix::from_fn(taps, taps, |i, j| {
        r[i.abs_diff(j)] + if i == j { ridge } else { 0.0 }
    });
    let gain = p[0] / r[0];
    let b = DVector::from_vec(p);
    match nalgebra::Cholesky::new(a) {
        Some(chol) => chol.solve(&b).iter().copied().collect(),
        None => {
            // fall back to plain gain
            let mut h = vec![0.0; taps];
            h[0] = gain;
            h
        }
    }
}

fn filter(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut y = vec![0.0; n];
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, hj) in h.iter().enumerate() {
            if i >= j {
                acc += hj * x[i - j];
            }
        }
        *yi = acc;
    }
    y
}

/// Resolves the source permutation by maximizing the summed SDR over all
/// assignments (sources are few; the factorial search is exact).
pub fn pair_sources(
    estimates: &[Vec<f64>],
    references: &[Vec<f64>],
    allow: AllowFilter,
) -> Result<Vec<f64>> {
    let k = estimates.len();
    if k != references.len() {
        return Err(Error::Degenerate(
            "estimate/reference count mismatch".into(),
        ));
    }
    let mut table = vec![vec![0.0; k]; k];
    for (i, est) in estimates.iter().enumerate() {
        for (j, refr) in references.iter().enumerate() {
            table[i][j] = sdr(est, refr, allow)?;
        }
    }
    let mut best: Option<Vec<f64>> = None;
    let mut best_sum = f64::NEG_INFINITY;
    let mut perm: Vec<usize> = (0..k).collect();
    permute(&mut perm, 0, &mut |p| {
        let sum: f64 = (0..k).map(|i| table[i][p[i]]).sum();
        if sum > best_sum {
            best_sum = sum;
            best = Some((0..k).map(|i| table[i][p[i]]).collect());
        }
    });
    Ok(best.expect("at least one permutation"))
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}
