//! The joint separation/dereverberation estimator: objective evaluation,
//! closed-form block updates, and the block coordinate descent schedules.

mod scheduler;
mod updates;

pub use scheduler::{initialize, run_bcd, BlockEvent, RunOutput, Separator};
pub use updates::{
    ip1_target_update, noise_block_update, objective, prediction_matrix, project_back,
    project_back_noise, separate_all, update_variances,
};

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Instantaneous extraction, `L = 0`.
    Ive,
    /// Full-rank separation, `K = M`, no noise subspace.
    IvaConv,
    /// Convolutional extraction, each stacked filter column updated one by one.
    IveConvAlg1,
    /// Convolutional extraction alternating prediction-matrix and
    /// separation-matrix updates.
    IveConvAlg2,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Ive => "ive",
            Variant::IvaConv => "iva-conv",
            Variant::IveConvAlg1 => "ive-conv-alg1",
            Variant::IveConvAlg2 => "ive-conv-alg2",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcdConfig {
    pub variant: Variant,
    /// Number of target sources.
    pub k: usize,
    pub d1: usize,
    pub d2: usize,
    pub outer_iterations: usize,
    /// Alg2 only: update the prediction matrix every this many outer
    /// iterations.
    pub alg2_g_period: usize,
    /// Optional early stop on relative objective change.
    pub rel_tol: Option<f64>,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self {
            variant: Variant::IveConvAlg1,
            k: 2,
            d1: 2,
            d2: 5,
            outer_iterations: 50,
            alg2_g_period: 5,
            rel_tol: Some(1e-6),
        }
    }
}

impl BcdConfig {
    /// Checks cross-field constraints against the channel count.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.k < 1 || self.k > m {
            return Err(Error::Config(format!(
                "need 1 <= K <= M, got K={} M={m}",
                self.k
            )));
        }
        if self.variant == Variant::IvaConv && self.k != m {
            return Err(Error::Config(format!(
                "iva-conv requires K = M, got K={} M={m}",
                self.k
            )));
        }
        if self.uses_delays() && (self.d1 < 1 || self.d2 < self.d1) {
            return Err(Error::Config(format!(
                "need 0 < D1 <= D2, got D1={} D2={}",
                self.d1, self.d2
            )));
        }
        if self.variant == Variant::IveConvAlg2 && self.alg2_g_period == 0 {
            return Err(Error::Config("alg2_g_period must be positive".into()));
        }
        if self.outer_iterations == 0 {
            return Err(Error::Config("outer_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Whether the variant stacks delayed frames (`L > 0`).
    pub fn uses_delays(&self) -> bool {
        self.variant != Variant::Ive
    }
}

/// Per-frequency separation matrix `W` plus the lower (delayed-tap) filter
/// block `W̄`, so that the full convolutional filter is `Ŵ = [W; W̄]` with
/// `W̄ = -G W`.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub m: usize,
    pub k: usize,
    /// `M x M` per frequency; columns `0..K` are target filters, the rest
    /// span the noise subspace.
    pub w: Vec<DMatrix<Complex64>>,
    /// `L x M` per frequency (zero rows when `L = 0`).
    pub wbar: Vec<DMatrix<Complex64>>,
}

impl FilterState {
    pub fn bins(&self) -> usize {
        self.w.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.m - self.k
    }

    pub fn tail_dim(&self) -> usize {
        self.wbar.first().map_or(0, DMatrix::nrows)
    }

    /// `Ŵ(f) = [W; W̄]`, `(M+L) x M`.
    pub fn conv_filter(&self, f: usize) -> DMatrix<Complex64> {
        let m = self.m;
        let l = self.tail_dim();
        let mut out = DMatrix::zeros(m + l, m);
        out.view_mut((0, 0), (m, m)).copy_from(&self.w[f]);
        out.view_mut((m, 0), (l, m)).copy_from(&self.wbar[f]);
        out
    }

    /// The prediction matrix `G(f) = -W̄(f) W(f)^{-1}`.
    pub fn prediction_matrix(&self, f: usize) -> Result<DMatrix<Complex64>> {
        let w_inv = self.w[f].clone().try_inverse().ok_or(Error::Singular {
            what: "separation matrix",
            cond: f64::INFINITY,
        })?;
        Ok(-(&self.wbar[f] * w_inv))
    }
}

/// Target source variances (shared across frequencies) and the per-frequency
/// noise covariance.
#[derive(Debug, Clone)]
pub struct SourceModel {
    /// `(K, T)`, floored away from zero.
    pub v: Array2<f64>,
    /// `N_z x N_z` Hermitian positive definite per frequency.
    pub omega: Vec<DMatrix<Complex64>>,
}
