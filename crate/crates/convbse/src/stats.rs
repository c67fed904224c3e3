//! Stacked (delayed) observations and the weighted covariance statistics
//! consumed by the optimizer.

use nalgebra::DMatrix;
use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

/// Relative weight floor applied before any `1/v` weighting.
pub const WEIGHT_FLOOR_REL: f64 = 1e-6;
/// Relative ridge added to Hermitian solves, scaled by `trace/dim`.
pub const RIDGE_REL: f64 = 1e-10;

/// Per-`(f,t)` observation vector of dimension `M + L` stacking the current
/// frame on top of the delayed frames `t - D1 ..= t - D2`.
#[derive(Debug, Clone)]
pub struct StackedSpectrogram {
    /// `(F, T, M + L)`; delayed entries with `t - d < 0` are zero.
    pub data: Array3<Complex64>,
    pub channels: usize,
    /// `None` for the instantaneous (`L = 0`) corner.
    pub delays: Option<(usize, usize)>,
}

impl StackedSpectrogram {
    pub fn bins(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[2]
    }

    /// Tap count `L = M (D2 - D1 + 1)`.
    pub fn tail_dim(&self) -> usize {
        self.dim() - self.channels
    }

    /// The stacked observations of one frequency bin as a `(M+L) x T` matrix.
    pub fn bin_matrix(&self, f: usize) -> DMatrix<Complex64> {
        let (t_frames, dim) = (self.frames(), self.dim());
        DMatrix::from_fn(dim, t_frames, |d, t| self.data[[f, t, d]])
    }

    /// Instantaneous stacking: `x̂ = x`, `L = 0`.
    pub fn without_delays(spec: &Spectrogram) -> Self {
        Self {
            data: spec.data.clone(),
            channels: spec.channels(),
            delays: None,
        }
    }
}

pub fn stack(spec: &Spectrogram, d1: usize, d2: usize) -> Result<StackedSpectrogram> {
    if d1 < 1 || d2 < d1 {
        return Err(Error::Config(format!(
            "need 0 < D1 <= D2, got D1={d1}, D2={d2}"
        )));
    }
    let (bins, frames, m) = (spec.bins(), spec.frames(), spec.channels());
    if frames <= d2 {
        return Err(Error::TooFewFrames {
            got: frames,
            need: d2,
        });
    }
    let taps = d2 - d1 + 1;
    let dim = m * (taps + 1);
    let mut data = Array3::zeros((bins, frames, dim));
    for f in 0..bins {
        for t in 0..frames {
            for mm in 0..m {
                data[[f, t, mm]] = spec.data[[f, t, mm]];
            }
            for (j, d) in (d1..=d2).enumerate() {
                if t >= d {
                    for mm in 0..m {
                        data[[f, t, m + j * m + mm]] = spec.data[[f, t - d, mm]];
                    }
                }
            }
        }
    }
    Ok(StackedSpectrogram {
        data,
        channels: m,
        delays: Some((d1, d2)),
    })
}

/// Weighted covariance of one frequency bin with its block partition:
/// top-left `M x M` spatial block `R`, bottom-left `L x M` cross block
/// `P̄`, bottom-right `L x L` tail block `R̄`.
#[derive(Debug, Clone)]
pub struct CovarianceStats {
    pub full: DMatrix<Complex64>,
    pub channels: usize,
}

impl CovarianceStats {
    pub fn dim(&self) -> usize {
        self.full.nrows()
    }

    pub fn tail_dim(&self) -> usize {
        self.dim() - self.channels
    }

    pub fn spatial(&self) -> DMatrix<Complex64> {
        self.full
            .view((0, 0), (self.channels, self.channels))
            .into()
    }

    pub fn cross(&self) -> DMatrix<Complex64> {
        let m = self.channels;
        self.full.view((m, 0), (self.tail_dim(), m)).into()
    }

    pub fn tail(&self) -> DMatrix<Complex64> {
        let m = self.channels;
        let l = self.tail_dim();
        self.full.view((m, m), (l, l)).into()
    }
}

pub(crate) fn hermitize(a: &mut DMatrix<Complex64>) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
        for j in 0..i {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}

/// `R̂ = (1/T) Σ_t x̂(t) x̂(t)^H / v(t)` for one frequency bin.
///
/// Accumulation runs over a scaled copy of the data matrix so that the result
/// does not depend on summation order beyond one `gemm`.
pub fn weighted_covariance(bin: &DMatrix<Complex64>, weights: &[f64]) -> Result<CovarianceStats> {
    weighted_covariance_partitioned(bin, weights, bin.nrows())
}

pub fn weighted_covariance_partitioned(
    bin: &DMatrix<Complex64>,
    weights: &[f64],
    channels: usize,
) -> Result<CovarianceStats> {
    let t_frames = bin.ncols();
    assert_eq!(weights.len(), t_frames, "one weight per frame");
    if weights.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::NonFinite("covariance weights"));
    }
    let mut scaled = bin.clone();
    for (t, w) in weights.iter().enumerate() {
        let s = Complex64::new(1.0 / (w * t_frames as f64).sqrt(), 0.0);
        for r in 0..scaled.nrows() {
            scaled[(r, t)] *= s;
        }
    }
    let mut full = &scaled * scaled.adjoint();
    hermitize(&mut full);
    Ok(CovarianceStats { full, channels })
}

fn ridge_of(a: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let tr: f64 = (0..n).map(|i| a[(i, i)].re).sum();
    RIDGE_REL * tr / n as f64
}

fn condition_estimate(a: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..n {
        let d = a[(i, i)].re;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Cholesky-based Hermitian solve `A X = B` with the module ridge policy.
pub(crate) fn hpd_solve(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    what: &'static str,
) -> Result<DMatrix<Complex64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let ridge = ridge_of(a);
    let mut ridged = a.clone();
    for i in 0..n {
        ridged[(i, i)] += Complex64::new(ridge, 0.0);
    }
    let cond = condition_estimate(&ridged);
    let chol = nalgebra::Cholesky::new(ridged).ok_or(Error::Singular { what, cond })?;
    Ok(chol.solve(b))
}

/// Schur complement of the tail block, plus the lower-filter backfill map
/// `B = R̄⁻¹ P̄` that produces it.
#[derive(Debug, Clone)]
pub struct SchurFactors {
    /// `V = R - P̄^H R̄⁻¹ P̄`, Hermitian `M x M`.
    pub complement: DMatrix<Complex64>,
    /// `R̄⁻¹ P̄`, `L x M`.
    pub backfill: DMatrix<Complex64>,
}

pub fn schur_factors(stats: &CovarianceStats) -> Result<SchurFactors> {
    let cross = stats.cross();
    let backfill = hpd_solve(&stats.tail(), &cross, "schur tail solve")?;
    let mut complement = stats.spatial() - cross.adjoint() * &backfill;
    hermitize(&mut complement);
    Ok(SchurFactors {
        complement,
        backfill,
    })
}

/// `V = R - P̄^H R̄⁻¹ P̄` for one source's statistics.
pub fn schur_complement(stats: &CovarianceStats) -> Result<DMatrix<Complex64>> {
    Ok(schur_factors(stats)?.complement)
}

/// `V' = [I; -G]^H R̂ [I; -G]`: the spatial covariance after applying the
/// prediction matrix `G`, without assuming `G` is optimal.
pub fn dereverbed_covariance(
    stats: &CovarianceStats,
    g: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let cross = stats.cross();
    let mut v = stats.spatial() - cross.adjoint() * g - g.adjoint() * &cross
        + g.adjoint() * stats.tail() * g;
    hermitize(&mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::{Spectrogram, StftConfig, Window};
    use ndarray::Array3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spec(bins: usize, frames: usize, m: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((bins, frames, m), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        Spectrogram {
            data,
            // the framing parameters never matter here, any valid config will do
            config: StftConfig::new(8, 2, Window::SqrtHann).unwrap(),
            sample_rate: 16_000,
            orig_len: 0,
        }
    }

    fn random_cov(m: usize, l: usize, seed: u64) -> CovarianceStats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = m + l;
        // HPD by construction, with enough samples to be well conditioned
        let a = DMatrix::from_fn(dim, 3 * dim, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut full = &a * a.adjoint();
        hermitize(&mut full);
        CovarianceStats { full, channels: m }
    }

    #[test]
    fn stack_boundary_single_channel() {
        let spec = random_spec(3, 6, 1, 1);
        let stacked = stack(&spec, 1, 1).unwrap();
        assert_eq!(stacked.dim(), 2);
        for f in 0..3 {
            assert_eq!(stacked.data[[f, 0, 0]], spec.data[[f, 0, 0]]);
            assert_eq!(stacked.data[[f, 0, 1]], Complex64::default());
            for t in 1..6 {
                assert_eq!(stacked.data[[f, t, 1]], spec.data[[f, t - 1, 0]]);
            }
        }
    }

    #[test]
    fn stack_dimension_formula() {
        let spec = random_spec(2, 10, 4, 2);
        let stacked = stack(&spec, 2, 5).unwrap();
        assert_eq!(stacked.tail_dim(), 16);
        assert_eq!(stacked.dim(), 20);
    }

    #[test]
    fn stack_index_oracle() {
        let spec = random_spec(3, 9, 2, 3);
        let (d1, d2, m) = (2, 4, 2);
        let stacked = stack(&spec, d1, d2).unwrap();
        for f in 0..3 {
            for t in 0..9 {
                for d in d1..=d2 {
                    for mm in 0..m {
                        let got = stacked.data[[f, t, m + (d - d1) * m + mm]];
                        let want = if t >= d {
                            spec.data[[f, t - d, mm]]
                        } else {
                            Complex64::default()
                        };
                        assert_eq!(got, want, "f={f} t={t} d={d} m={mm}");
                    }
                }
            }
        }
    }

    #[test]
    fn stack_too_few_frames() {
        let spec = random_spec(2, 4, 1, 4);
        assert!(matches!(
            stack(&spec, 2, 5),
            Err(Error::TooFewFrames { .. })
        ));
    }

    #[test]
    fn covariance_single_frame_basis_vector() {
        let mut bin = DMatrix::zeros(3, 1);
        bin[(0, 0)] = Complex64::new(1.0, 0.0);
        let stats = weighted_covariance(&bin, &[1.0]).unwrap();
        let mut want = DMatrix::zeros(3, 3);
        want[(0, 0)] = Complex64::new(1.0, 0.0);
        assert!((stats.full.clone() - want).norm() < 1e-15);
    }

    #[test]
    fn covariance_naive_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 3;
        let t_frames = 8;
        let bin = DMatrix::from_fn(dim, t_frames, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let weights: Vec<f64> = (0..t_frames).map(|_| rng.gen_range(0.1..2.0)).collect();
        let stats = weighted_covariance(&bin, &weights).unwrap();

        let mut naive: DMatrix<Complex64> = DMatrix::zeros(dim, dim);
        for (t, w) in weights.iter().enumerate() {
            let x = bin.column(t);
            naive += (x * x.adjoint()) / Complex64::new(w * t_frames as f64, 0.0);
        }
        let rel = (stats.full.clone() - &naive).norm() / naive.norm();
        assert!(rel < 1e-12, "rel {rel}");

        // unit weights give the plain sample covariance
        let stats1 = weighted_covariance(&bin, &vec![1.0; t_frames]).unwrap();
        let plain = (&bin * bin.adjoint()) / Complex64::new(t_frames as f64, 0.0);
        assert!((stats1.full.clone() - plain).norm() / stats1.full.norm() < 1e-12);
    }

    #[test]
    fn covariance_is_hermitian_psd() {
        let stats = random_cov(2, 4, 9);
        let h = stats.full.adjoint();
        assert!((stats.full.clone() - h).norm() < 1e-12);
        let eig = stats.full.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|e| *e > -1e-10));
    }

    #[test]
    fn schur_block_diagonal_case() {
        let mut stats = random_cov(2, 3, 11);
        // zero out the cross block
        for i in 2..5 {
            for j in 0..2 {
                stats.full[(i, j)] = Complex64::default();
                stats.full[(j, i)] = Complex64::default();
            }
        }
        let v = schur_complement(&stats).unwrap();
        assert!((v - stats.spatial()).norm() < 1e-9);
    }

    #[test]
    fn schur_scalar_formula() {
        let mut full = DMatrix::zeros(2, 2);
        full[(0, 0)] = Complex64::new(2.0, 0.0);
        full[(0, 1)] = Complex64::new(1.0, 0.0);
        full[(1, 0)] = Complex64::new(1.0, 0.0);
        full[(1, 1)] = Complex64::new(1.0, 0.0);
        let stats = CovarianceStats { full, channels: 1 };
        let v = schur_complement(&stats).unwrap();
        // the solver's relative ridge perturbs the exact value at the 1e-10 level
        assert!((v[(0, 0)].re - 1.0).abs() < 1e-9);
    }

    #[test]
    fn schur_block_inverse_identity() {
        let stats = random_cov(3, 5, 13);
        let v = schur_complement(&stats).unwrap();
        let v_inv = v.try_inverse().unwrap();
        let full_inv = stats.full.clone().try_inverse().unwrap();
        let top: DMatrix<Complex64> = full_inv.view((0, 0), (3, 3)).into();
        let rel = (v_inv.clone() - &top).norm() / top.norm();
        assert!(rel < 1e-9, "rel {rel}");
    }

    #[test]
    fn dereverbed_matches_triple_product_and_schur() {
        let stats = random_cov(3, 6, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let g = DMatrix::from_fn(6, 3, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });

        // direct triple product oracle
        let mut stacked_map = DMatrix::zeros(9, 3);
        for i in 0..3 {
            stacked_map[(i, i)] = Complex64::new(1.0, 0.0);
        }
        for r in 0..6 {
            for c in 0..3 {
                stacked_map[(3 + r, c)] = -g[(r, c)];
            }
        }
        let direct = stacked_map.adjoint() * &stats.full * &stacked_map;
        let v = dereverbed_covariance(&stats, &g);
        assert!((v.clone() - &direct).norm() / direct.norm() < 1e-12);

        // G = 0 recovers the spatial block
        let v0 = dereverbed_covariance(&stats, &DMatrix::zeros(6, 3));
        assert!((v0 - stats.spatial()).norm() < 1e-12);

        // optimal G recovers the Schur complement
        let f = schur_factors(&stats).unwrap();
        let v_opt = dereverbed_covariance(&stats, &f.backfill);
        let rel = (v_opt - &f.complement).norm() / f.complement.norm();
        assert!(rel < 1e-9, "rel {rel}");
    }

    #[test]
    fn schur_is_loewner_minimal_over_g() {
        let stats = random_cov(2, 4, 23);
        let f = schur_factors(&stats).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..10 {
            let g = DMatrix::from_fn(4, 2, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let diff = dereverbed_covariance(&stats, &g) - &f.complement;
            let eig = diff.symmetric_eigenvalues();
            assert!(eig.iter().all(|e| *e > -1e-9), "V' - V not PSD");
        }
    }
}
