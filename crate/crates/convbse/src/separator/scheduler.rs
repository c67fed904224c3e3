//! Block coordinate descent schedules over the per-frequency subproblems.

use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::RunRecord;
use crate::stats::{
    dereverbed_covariance, schur_factors, weighted_covariance_partitioned, CovarianceStats,
    StackedSpectrogram,
};

use super::updates::{ip1_target_update, noise_block_update, objective, update_variances};
use super::{BcdConfig, FilterState, SourceModel, Variant};

/// Which parameter block a schedule just finished updating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockEvent {
    Initialized,
    Variances,
    TargetFilter(usize),
    NoiseBlock,
    Prediction,
}

pub type BlockCallback<'a> = &'a mut dyn FnMut(BlockEvent, &FilterState, &SourceModel);

pub struct RunOutput {
    pub state: FilterState,
    pub model: SourceModel,
    pub log: Vec<RunRecord>,
}

/// Per-frequency working set.  All fields are owned by one bin so the block
/// updates can run in parallel across frequencies without shared state.
struct FreqWork {
    xhat: DMatrix<Complex64>, // (M+L) x T
    w: DMatrix<Complex64>,    // M x M
    wbar: DMatrix<Complex64>, // L x M
    g: DMatrix<Complex64>,    // L x M prediction matrix (Alg2)
    omega: DMatrix<Complex64>,
    /// Full noise statistic (time-invariant weights), computed once.
    rz: Option<CovarianceStats>,
    /// Cached Schur complement of `rz` and its backfill map.
    vz: DMatrix<Complex64>,
    bz: DMatrix<Complex64>,
    /// Alg2 cache: `[I; -G]^H R̂_z [I; -G]`, refreshed whenever `G` changes.
    vz_prime: DMatrix<Complex64>,
}

pub struct Separator {
    config: BcdConfig,
    work: Vec<FreqWork>,
    v: Array2<f64>,
    m: usize,
    k: usize,
    l: usize,
    t_frames: usize,
}

impl Separator {
    pub fn new(stacked: &StackedSpectrogram, config: &BcdConfig) -> Result<Self> {
        let m = stacked.channels;
        config.validate(m)?;
        let l = stacked.tail_dim();
        if config.uses_delays() {
            let expect = m * (config.d2 - config.d1 + 1);
            if l != expect || stacked.delays != Some((config.d1, config.d2)) {
                return Err(Error::Config(format!(
                    "stacked input has delays {:?} (L={l}), config wants D1={} D2={}",
                    stacked.delays, config.d1, config.d2
                )));
            }
        } else if l != 0 {
            return Err(Error::Config(
                "instantaneous variant requires an unstacked input (L = 0)".into(),
            ));
        }
        let k = config.k;
        let nz = m - k;
        let (f_bins, t_frames) = (stacked.bins(), stacked.frames());

        let ones = vec![1.0; t_frames];
        let mut work: Vec<FreqWork> = (0..f_bins)
            .map(|f| FreqWork {
                xhat: stacked.bin_matrix(f),
                w: DMatrix::identity(m, m) * Complex64::new(-1.0, 0.0),
                wbar: DMatrix::zeros(l, m),
                g: DMatrix::zeros(l, m),
                omega: DMatrix::identity(nz, nz),
                rz: None,
                vz: DMatrix::zeros(0, 0),
                bz: DMatrix::zeros(0, 0),
                vz_prime: DMatrix::zeros(0, 0),
            })
            .collect();

        // noise statistics are time-invariant (unit weights): compute once,
        // then apply the one-shot noise-subspace update of the init protocol
        if nz > 0 {
            work.par_iter_mut().try_for_each(|fw| -> Result<()> {
                let rz = weighted_covariance_partitioned(&fw.xhat, &ones, m)?;
                let f = schur_factors(&rz)?;
                fw.omega = noise_block_update(&mut fw.w, &f.complement, k)?;
                fw.vz = f.complement;
                fw.bz = f.backfill;
                fw.vz_prime = fw.vz.clone();
                fw.rz = Some(rz);
                Ok(())
            })?;
        }

        let mut sep = Self {
            config: config.clone(),
            work,
            v: Array2::zeros((k, t_frames)),
            m,
            k,
            l,
            t_frames,
        };
        sep.v = sep.current_variances();
        Ok(sep)
    }

    fn current_variances(&self) -> Array2<f64> {
        let per_bin: Vec<Array2<f64>> = self
            .work
            .par_iter()
            .map(|fw| {
                let mut acc = Array2::zeros((self.k, self.t_frames));
                for i in 0..self.k {
                    let wi_full = self.conv_column(fw, i);
                    let s = wi_full.adjoint() * &fw.xhat;
                    for t in 0..self.t_frames {
                        acc[[i, t]] = s[(0, t)].norm_sqr();
                    }
                }
                acc
            })
            .collect();
        // sequential reduction in bin order keeps the result deterministic
        let mut energy = Array2::zeros((self.k, self.t_frames));
        for a in per_bin {
            energy += &a;
        }
        let f_bins = self.work.len() as f64;
        let sep = energy.mapv(|e| Complex64::new((e / f_bins).sqrt(), 0.0));
        let shaped = Array3::from_shape_fn((self.k, 1, self.t_frames), |(i, _, t)| sep[[i, t]]);
        update_variances(&shaped)
    }

    fn conv_column(&self, fw: &FreqWork, i: usize) -> DMatrix<Complex64> {
        let mut col = DMatrix::zeros(self.m + self.l, 1);
        for r in 0..self.m {
            col[(r, 0)] = fw.w[(r, i)];
        }
        for r in 0..self.l {
            col[(self.m + r, 0)] = fw.wbar[(r, i)];
        }
        col
    }

    pub fn state(&self) -> FilterState {
        FilterState {
            m: self.m,
            k: self.k,
            w: self.work.iter().map(|fw| fw.w.clone()).collect(),
            wbar: self.work.iter().map(|fw| fw.wbar.clone()).collect(),
        }
    }

    pub fn model(&self) -> SourceModel {
        SourceModel {
            v: self.v.clone(),
            omega: self.work.iter().map(|fw| fw.omega.clone()).collect(),
        }
    }

    fn weights_of(&self, i: usize) -> Vec<f64> {
        (0..self.t_frames).map(|t| self.v[[i, t]]).collect()
    }

    /// Runs the configured schedule, returning one log record per outer
    /// iteration.  `on_block` fires after every individual block update.
    pub fn run(
        &mut self,
        stacked: &StackedSpectrogram,
        mut on_block: Option<BlockCallback<'_>>,
    ) -> Result<Vec<RunRecord>> {
        let nz = self.m - self.k;
        let start = Instant::now();
        let mut log = Vec::with_capacity(self.config.outer_iterations);
        let mut prev_obj = f64::INFINITY;
        if let Some(cb) = on_block.as_deref_mut() {
            cb(BlockEvent::Initialized, &self.state(), &self.model());
        }
        for iter in 0..self.config.outer_iterations {
            self.v = self.current_variances();
            self.emit(&mut on_block, BlockEvent::Variances);

            match self.config.variant {
                Variant::Ive | Variant::IvaConv | Variant::IveConvAlg1 => {
                    self.iterate_alg1(nz, &mut on_block)?;
                }
                Variant::IveConvAlg2 => {
                    let update_g = iter % self.config.alg2_g_period == 0;
                    self.iterate_alg2(nz, update_g, &mut on_block)?;
                }
            }

            let obj = objective(&self.state(), &self.model(), stacked)?;
            log.push(RunRecord {
                iteration: iter,
                objective: obj,
                elapsed_s: start.elapsed().as_secs_f64(),
                sdr_db: None,
            });
            if let Some(tol) = self.config.rel_tol {
                if (prev_obj - obj).abs() <= tol * obj.abs() {
                    break;
                }
            }
            prev_obj = obj;
        }
        Ok(log)
    }

    /// One outer pass of the column-wise schedule:
    /// `ŵ_1 → (Ŵ_z, Ω) → ... → ŵ_K → (Ŵ_z, Ω)`.
    fn iterate_alg1(&mut self, nz: usize, on_block: &mut Option<BlockCallback<'_>>) -> Result<()> {
        let m = self.m;
        let k = self.k;
        for i in 0..k {
            let weights = self.weights_of(i);
            self.work.par_iter_mut().try_for_each(|fw| -> Result<()> {
                let stats = weighted_covariance_partitioned(&fw.xhat, &weights, m)?;
                let factors = schur_factors(&stats)?;
                ip1_target_update(&mut fw.w, i, &factors.complement)?;
                let lower = -(&factors.backfill * fw.w.column(i));
                fw.wbar.set_column(i, &lower);
                Ok(())
            })?;
            self.emit(on_block, BlockEvent::TargetFilter(i));

            if nz > 0 {
                self.work.par_iter_mut().try_for_each(|fw| -> Result<()> {
                    fw.omega = noise_block_update(&mut fw.w, &fw.vz, k)?;
                    let lower = -(&fw.bz * fw.w.view((0, k), (m, nz)));
                    fw.wbar
                        .view_mut((0, k), (fw.wbar.nrows(), nz))
                        .copy_from(&lower);
                    Ok(())
                })?;
                self.emit(on_block, BlockEvent::NoiseBlock);
            }
        }
        Ok(())
    }

    /// One outer pass of the alternating schedule:
    /// `[G →] w_1 → (W_z, Ω) → ... → w_K → (W_z, Ω)`, with the lower filter
    /// blocks always slaved to `W̄ = -G W`.
    fn iterate_alg2(
        &mut self,
        nz: usize,
        update_g: bool,
        on_block: &mut Option<BlockCallback<'_>>,
    ) -> Result<()> {
        let m = self.m;
        let k = self.k;
        let l = self.l;
        if update_g && l > 0 {
            let all_weights: Vec<Vec<f64>> = (0..k).map(|i| self.weights_of(i)).collect();
            self.work.par_iter_mut().try_for_each(|fw| -> Result<()> {
                let mut c = DMatrix::zeros(l, m);
                for (i, weights) in all_weights.iter().enumerate() {
                    let stats = weighted_covariance_partitioned(&fw.xhat, weights, m)?;
                    let factors = schur_factors(&stats)?;
                    let col = &factors.backfill * fw.w.column(i);
                    c.set_column(i, &col);
                }
                if nz > 0 {
                    let cols = &fw.bz * fw.w.view((0, k), (m, nz));
                    c.view_mut((0, k), (l, nz)).copy_from(&cols);
                }
                let w_inv = fw.w.clone().try_inverse().ok_or(Error::Singular {
                    what: "separation matrix in prediction update",
                    cond: f64::INFINITY,
                })?;
                fw.g = c * w_inv;
                fw.wbar = -(&fw.g * &fw.w);
                if let Some(rz) = &fw.rz {
                    fw.vz_prime = dereverbed_covariance(rz, &fw.g);
                }
                Ok(())
            })?;
            self.emit(on_block, BlockEvent::Prediction);
        }

        for i in 0..k {
            let weights = self.weights_of(i);
            self.work.par_iter_mut().try_for_each(|fw| -> Result<()> {
                let stats = weighted_covariance_partitioned(&fw.xhat, &weights, m)?;
                let v_prime = if l > 0 {
                    dereverbed_covariance(&stats, &fw.g)
                } else {
                    stats.spatial()
                };
                ip1_target_update(&mut fw.w, i, &v_prime)?;
                let lower = -(&fw.g * fw.w.column(i));
                fw.wbar.set_column(i, &lower);
                Ok(())
            })?;
            self.emit(on_block, BlockEvent::TargetFilter(i));

            if nz > 0 {
                self.work.par_iter_mut().try_for_each(|fw| -> Result<()> {
                    fw.omega = noise_block_update(&mut fw.w, &fw.vz_prime, k)?;
                    let lower = -(&fw.g * fw.w.view((0, k), (m, nz)));
                    fw.wbar
                        .view_mut((0, k), (fw.wbar.nrows(), nz))
                        .copy_from(&lower);
                    Ok(())
                })?;
                self.emit(on_block, BlockEvent::NoiseBlock);
            }
        }
        Ok(())
    }

    fn emit(&self, on_block: &mut Option<BlockCallback<'_>>, event: BlockEvent) {
        if let Some(cb) = on_block.as_deref_mut() {
            cb(event, &self.state(), &self.model());
        }
    }
}

/// Initial state of the optimization protocol: `W = -I`, `G = 0`, one
/// noise-subspace update, variances from the resulting separation.
pub fn initialize(
    stacked: &StackedSpectrogram,
    config: &BcdConfig,
) -> Result<(FilterState, SourceModel)> {
    let sep = Separator::new(stacked, config)?;
    Ok((sep.state(), sep.model()))
}

/// Runs the configured block coordinate descent schedule to completion.
pub fn run_bcd(
    stacked: &StackedSpectrogram,
    config: &BcdConfig,
    on_block: Option<BlockCallback<'_>>,
) -> Result<RunOutput> {
    let mut sep = Separator::new(stacked, config)?;
    let log = sep.run(stacked, on_block)?;
    Ok(RunOutput {
        state: sep.state(),
        model: sep.model(),
        log,
    })
}
