//! Closed-form per-frequency block updates and objective evaluation.
//!
//! All functions here are pure with respect to frequency: they touch one
//! bin's matrices and can run concurrently across bins.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stats::{hermitize, StackedSpectrogram, WEIGHT_FLOOR_REL};

use super::{FilterState, SourceModel};

/// Rank-1 iterative-projection update of target column `i`:
/// `u = (W^H V_i)^{-1} e_i`, `w_i = u (u^H V_i u)^{-1/2}`.
///
/// Leaves every other column untouched and normalizes so that
/// `w_i^H V_i w_i = 1`.
pub fn ip1_target_update(
    w: &mut DMatrix<Complex64>,
    i: usize,
    v_i: &DMatrix<Complex64>,
) -> Result<()> {
    let m = w.nrows();
    let a = w.adjoint() * v_i;
    let lu = a.lu();
    let mut e_i = DMatrix::zeros(m, 1);
    e_i[(i, 0)] = Complex64::new(1.0, 0.0);
    let u = lu.solve(&e_i).ok_or(Error::Singular {
        what: "target filter system W^H V_i",
        cond: f64::INFINITY,
    })?;
    let quad = (u.adjoint() * v_i * &u)[(0, 0)].re;
    if !(quad.is_finite() && quad > 0.0) {
        return Err(Error::Singular {
            what: "target filter normalization",
            cond: 1.0 / quad,
        });
    }
    let scale = Complex64::new(1.0 / quad.sqrt(), 0.0);
    for r in 0..m {
        w[(r, i)] = u[(r, 0)] * scale;
    }
    Ok(())
}

/// Closed-form noise-subspace update: writes columns `K..M` of `W` as
/// `W_z = [(W_s^H V_z E_s)^{-1} (W_s^H V_z E_z); -I]` and returns the noise
/// covariance `Ω = W_z^H V_z W_z`.
pub fn noise_block_update(
    w: &mut DMatrix<Complex64>,
    v_z: &DMatrix<Complex64>,
    k: usize,
) -> Result<DMatrix<Complex64>> {
    let m = w.nrows();
    let nz = m - k;
    if nz == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let w_s = w.view((0, 0), (m, k));
    let a = w_s.adjoint() * v_z; // K x M
    let a_s: DMatrix<Complex64> = a.view((0, 0), (k, k)).into();
    let a_z: DMatrix<Complex64> = a.view((0, k), (k, nz)).into();
    let lu = a_s.lu();
    let top = lu.solve(&a_z).ok_or(Error::Singular {
        what: "noise block system W_s^H V_z E_s",
        cond: f64::INFINITY,
    })?;
    for c in 0..nz {
        for r in 0..m {
            w[(r, k + c)] = if r < k {
                top[(r, c)]
            } else if r - k == c {
                Complex64::new(-1.0, 0.0)
            } else {
                Complex64::default()
            };
        }
    }
    let w_z = w.view((0, k), (m, nz));
    let mut omega = w_z.adjoint() * v_z * w_z;
    hermitize(&mut omega);
    Ok(omega)
}

/// Global optimum of the prediction-matrix subproblem:
/// `G = [B_1 w_1 | ... | B_K w_K | B_z W_z] W^{-1}`, where `B_i = R̄_i^{-1} P̄_i`.
pub fn prediction_matrix(
    w: &DMatrix<Complex64>,
    target_backfills: &[DMatrix<Complex64>],
    noise_backfill: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let m = w.nrows();
    let k = target_backfills.len();
    let nz = m - k;
    let l = target_backfills
        .first()
        .map_or_else(|| noise_backfill.nrows(), DMatrix::nrows);
    let mut c = DMatrix::zeros(l, m);
    for (i, b) in target_backfills.iter().enumerate() {
        let col = b * w.column(i);
        c.set_column(i, &col);
    }
    if nz > 0 {
        let cols = noise_backfill * w.view((0, k), (m, nz));
        c.view_mut((0, k), (l, nz)).copy_from(&cols);
    }
    let w_inv = w.clone().try_inverse().ok_or(Error::Singular {
        what: "separation matrix in prediction update",
        cond: f64::INFINITY,
    })?;
    Ok(c * w_inv)
}

/// Applies the full convolutional filter: output row `i` is
/// `s_i(f,t) = ŵ_i(f)^H x̂(f,t)`, rows `K..M` are the noise subspace signal.
///
/// Returned layout is `(M, F, T)`.
pub fn separate_all(state: &FilterState, stacked: &StackedSpectrogram) -> Array3<Complex64> {
    let (f_bins, t_frames) = (stacked.bins(), stacked.frames());
    let m = state.m;
    let mut out = Array3::zeros((m, f_bins, t_frames));
    for f in 0..f_bins {
        let what = state.conv_filter(f);
        let xh = stacked.bin_matrix(f);
        let s = what.adjoint() * xh;
        for i in 0..m {
            for t in 0..t_frames {
                out[[i, f, t]] = s[(i, t)];
            }
        }
    }
    out
}

/// Maximum-likelihood variance update `v_i(t) = (1/F) Σ_f |s_i(f,t)|²`,
/// floored at `1e-6` of each source's temporal mean.
pub fn update_variances(separated_targets: &Array3<Complex64>) -> Array2<f64> {
    let (k, f_bins, t_frames) = (
        separated_targets.shape()[0],
        separated_targets.shape()[1],
        separated_targets.shape()[2],
    );
    let mut v = Array2::zeros((k, t_frames));
    for i in 0..k {
        for t in 0..t_frames {
            let mut acc = 0.0;
            for f in 0..f_bins {
                acc += separated_targets[[i, f, t]].norm_sqr();
            }
            v[[i, t]] = acc / f_bins as f64;
        }
        let mean = v.row(i).mean().unwrap_or(0.0);
        let floor = if mean > 0.0 {
            WEIGHT_FLOOR_REL * mean
        } else {
            f64::MIN_POSITIVE.sqrt()
        };
        for t in 0..t_frames {
            if v[[i, t]] < floor {
                v[[i, t]] = floor;
            }
        }
    }
    v
}

/// Negative log-likelihood per frame (up to an additive constant): the sum
/// over frequencies of the weighted source energies, the whitened noise
/// energy, and the log-determinant terms, plus the frequency-replicated
/// `log v` penalty.
pub fn objective(
    state: &FilterState,
    model: &SourceModel,
    stacked: &StackedSpectrogram,
) -> Result<f64> {
    let (f_bins, t_frames) = (stacked.bins(), stacked.frames());
    let (m, k) = (state.m, state.k);
    let nz = m - k;
    let t_norm = 1.0 / t_frames as f64;
    let mut total = 0.0;
    for f in 0..f_bins {
        let what = state.conv_filter(f);
        let xh = stacked.bin_matrix(f);
        let s = what.adjoint() * xh; // M x T

        for i in 0..k {
            let mut acc = 0.0;
            for t in 0..t_frames {
                acc += s[(i, t)].norm_sqr() / model.v[[i, t]];
            }
            total += acc * t_norm;
        }

        let det_w = state.w[f].clone().lu().determinant();
        let abs_det = det_w.norm();
        if !(abs_det.is_finite() && abs_det > 0.0) {
            return Err(Error::Singular {
                what: "separation matrix in objective",
                cond: f64::INFINITY,
            });
        }

        let mut logdet_omega = 0.0;
        if nz > 0 {
            let omega = &model.omega[f];
            let chol = nalgebra::Cholesky::new(omega.clone()).ok_or(Error::Singular {
                what: "noise covariance in objective",
                cond: f64::INFINITY,
            })?;
            let z: DMatrix<Complex64> = s.view((k, 0), (nz, t_frames)).into();
            let y = chol.solve(&z);
            let mut acc = 0.0;
            for t in 0..t_frames {
                for r in 0..nz {
                    acc += (z[(r, t)].conj() * y[(r, t)]).re;
                }
            }
            total += acc * t_norm;
            for i in 0..nz {
                logdet_omega += 2.0 * chol.l_dirty()[(i, i)].re.ln();
            }
        }
        total -= 2.0 * abs_det.ln() - logdet_omega;
    }
    let mut log_v = 0.0;
    for i in 0..k {
        for t in 0..t_frames {
            log_v += model.v[[i, t]].ln();
        }
    }
    total += f_bins as f64 * t_norm * log_v;
    Ok(total)
}

/// Projection-back spatial image of target `i`:
/// `(W^{-H} e_i) (ŵ_i^H x̂)` per `(f, t)`, shaped `(F, T, M)`.
pub fn project_back(
    state: &FilterState,
    stacked: &StackedSpectrogram,
    source: usize,
) -> Result<Array3<Complex64>> {
    let (f_bins, t_frames) = (stacked.bins(), stacked.frames());
    let m = state.m;
    let mut out = Array3::zeros((f_bins, t_frames, m));
    for f in 0..f_bins {
        let steering = steering_vector(&state.w[f], source)?;
        let what = state.conv_filter(f);
        let xh = stacked.bin_matrix(f);
        let wi = what.column(source);
        for t in 0..t_frames {
            let s = (wi.adjoint() * xh.column(t))[(0, 0)];
            for mm in 0..m {
                out[[f, t, mm]] = steering[mm] * s;
            }
        }
    }
    Ok(out)
}

/// Noise-subspace spatial image `(W^{-H} E_z)(W_z^H-side signal)`, `(F, T, M)`.
pub fn project_back_noise(
    state: &FilterState,
    stacked: &StackedSpectrogram,
) -> Result<Array3<Complex64>> {
    let (f_bins, t_frames) = (stacked.bins(), stacked.frames());
    let (m, k) = (state.m, state.k);
    let nz = m - k;
    let mut out = Array3::zeros((f_bins, t_frames, m));
    if nz == 0 {
        return Ok(out);
    }
    for f in 0..f_bins {
        let mut steering = DMatrix::zeros(m, nz);
        for (c, j) in (k..m).enumerate() {
            steering.set_column(c, &steering_vector(&state.w[f], j)?);
        }
        let what = state.conv_filter(f);
        let xh = stacked.bin_matrix(f);
        let wz = what.view((0, k), (what.nrows(), nz));
        let z = wz.adjoint() * xh; // Nz x T
        let img = steering * z; // M x T
        for t in 0..t_frames {
            for mm in 0..m {
                out[[f, t, mm]] = img[(mm, t)];
            }
        }
    }
    Ok(out)
}

fn steering_vector(w: &DMatrix<Complex64>, i: usize) -> Result<nalgebra::DVector<Complex64>> {
    let m = w.nrows();
    let mut e_i = nalgebra::DVector::zeros(m);
    e_i[i] = Complex64::new(1.0, 0.0);
    w.adjoint().lu().solve(&e_i).ok_or(Error::Singular {
        what: "steering solve",
        cond: f64::INFINITY,
    })
}
