//! Toy dynamical systems, trajectory simulation, standardization, and
//! dataset persistence.
//!
//! Three systems cover three verification roles: a linear-Gaussian state
//! space model (exact posterior oracles), Lorenz-96 (chaotic benchmark), and
//! a stochastically forced advection-diffusion field on a periodic 2-D grid
//! (spatial fields with a known stationary power spectrum).

use crate::container::{Container, ContainerError};
use crate::rng::stream;
use crate::tensor::Tensor;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SystemsError {
    #[error("invalid system spec: {0}")]
    BadSpec(String),
    #[error("non-finite state at integration step {step}")]
    NonFinite { step: usize },
    #[error("channel {channel} has zero standard deviation; cannot standardize")]
    DegenerateChannel { channel: usize },
    #[error("initial state has length {got}, system expects {expected}")]
    BadInitialState { expected: usize, got: usize },
    #[error("dataset has zero-length trajectories")]
    EmptyTrajectories,
    #[error("dataset header field `{0}` is malformed")]
    BadHeader(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Which split a dataset belongs to. Statistics always come from `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Per-step state layout: `channels x height x width`, row-major.
/// Vector-valued systems use `height = dim, width = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl StateLayout {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_of(&self, flat: usize) -> usize {
        flat / (self.height * self.width)
    }

    /// True when the spatial grid is periodic in both axes.
    pub fn is_grid(&self) -> bool {
        self.height > 1 && self.width > 1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemParams {
    /// x' = A x + w, w ~ N(0, Q); exact Gaussian transitions.
    LinearGaussian {
        dim: usize,
        /// Row-major dim x dim transition matrix.
        transition: Vec<f64>,
        /// Row-major dim x dim process-noise covariance (PSD).
        process_noise: Vec<f64>,
        init_mean: Vec<f64>,
        /// Row-major dim x dim initial covariance (PSD).
        init_cov: Vec<f64>,
    },
    /// dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F, integrated with RK4.
    Lorenz96 { dim: usize, forcing: f64 },
    /// Stochastically forced advection-diffusion on a periodic grid, stepped
    /// semi-implicitly in spectral space: advection as an exact phase shift,
    /// diffusion implicit, plus spectral noise shaped to keep the field
    /// statistically stationary with spectrum ~ (1 + |k|^2)^(-slope/2).
    Advection2d {
        height: usize,
        width: usize,
        velocity: [f64; 2],
        diffusivity: f64,
        spectral_slope: f64,
        noise_amp: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub params: SystemParams,
    pub dt: f64,
}

impl SystemSpec {
    pub fn layout(&self) -> StateLayout {
        match &self.params {
            SystemParams::LinearGaussian { dim, .. } => StateLayout {
                channels: 1,
                height: *dim,
                width: 1,
            },
            SystemParams::Lorenz96 { dim, .. } => StateLayout {
                channels: 1,
                height: *dim,
                width: 1,
            },
            SystemParams::Advection2d { height, width, .. } => StateLayout {
                channels: 1,
                height: *height,
                width: *width,
            },
        }
    }

    pub fn state_len(&self) -> usize {
        self.layout().len()
    }

    pub fn validate(&self) -> Result<(), SystemsError> {
        if self.dt <= 0.0 {
            return Err(SystemsError::BadSpec("dt must be positive".into()));
        }
        match &self.params {
            SystemParams::LinearGaussian {
                dim,
                transition,
                process_noise,
                init_mean,
                init_cov,
            } => {
                if *dim == 0 {
                    return Err(SystemsError::BadSpec("dim must be >= 1".into()));
                }
                for (name, v, want) in [
                    ("transition", transition.len(), dim * dim),
                    ("process_noise", process_noise.len(), dim * dim),
                    ("init_mean", init_mean.len(), *dim),
                    ("init_cov", init_cov.len(), dim * dim),
                ] {
                    if v != want {
                        return Err(SystemsError::BadSpec(format!(
                            "{name} has {v} entries, expected {want}"
                        )));
                    }
                }
                // PSD check via Cholesky of the (jittered) covariances.
                psd_chol(process_noise, *dim, "process_noise")?;
                psd_chol(init_cov, *dim, "init_cov")?;
            }
            SystemParams::Lorenz96 { dim, .. } => {
                if *dim < 4 {
                    return Err(SystemsError::BadSpec(
                        "lorenz96 needs dim >= 4 for its cyclic coupling".into(),
                    ));
                }
            }
            SystemParams::Advection2d {
                height,
                width,
                diffusivity,
                noise_amp,
                ..
            } => {
                if *height < 2 || *width < 2 {
                    return Err(SystemsError::BadSpec("grid must be at least 2x2".into()));
                }
                if *diffusivity < 0.0 || *noise_amp < 0.0 {
                    return Err(SystemsError::BadSpec(
                        "diffusivity and noise_amp must be non-negative".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Symmetric square root of a PSD matrix; exact zero for a zero matrix.
fn psd_chol(cov: &[f64], dim: usize, name: &str) -> Result<DMatrix<f64>, SystemsError> {
    let m = DMatrix::from_row_slice(dim, dim, cov);
    let eig = m.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale) {
        return Err(SystemsError::BadSpec(format!(
            "{name} is not positive semi-definite"
        )));
    }
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt)
}

// ---- simulation ----

/// Simulate a length-`l` trajectory. `x0 = None` draws a system-appropriate
/// initial state from the seeded stream.
pub fn simulate(
    spec: &SystemSpec,
    x0: Option<&[f64]>,
    l: usize,
    seed: u64,
) -> Result<Tensor<f64>, SystemsError> {
    spec.validate()?;
    if l == 0 {
        return Err(SystemsError::EmptyTrajectories);
    }
    if let Some(x0) = x0 {
        if x0.len() != spec.state_len() {
            return Err(SystemsError::BadInitialState {
                expected: spec.state_len(),
                got: x0.len(),
            });
        }
    }
    let mut rng = stream(seed, 0x51);
    match &spec.params {
        SystemParams::LinearGaussian {
            dim,
            transition,
            process_noise,
            init_mean,
            init_cov,
        } => {
            let a = DMatrix::from_row_slice(*dim, *dim, transition);
            let q_chol = psd_chol(process_noise, *dim, "process_noise")?;
            let p0_chol = psd_chol(init_cov, *dim, "init_cov")?;
            let mut x = match x0 {
                Some(v) => nalgebra::DVector::from_row_slice(v),
                None => {
                    let eps = nalgebra::DVector::from_fn(*dim, |_, _| normal(&mut rng));
                    nalgebra::DVector::from_row_slice(init_mean) + &p0_chol * eps
                }
            };
            let mut out = Vec::with_capacity(l * dim);
            out.extend(x.iter().copied());
            for step in 1..l {
                let eps = nalgebra::DVector::from_fn(*dim, |_, _| normal(&mut rng));
                x = &a * &x + &q_chol * eps;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(SystemsError::NonFinite { step });
                }
                out.extend(x.iter().copied());
            }
            Ok(Tensor::from_vec(vec![l, *dim], out).expect("lgssm shape"))
        }
        SystemParams::Lorenz96 { dim, forcing } => {
            let mut x: Vec<f64> = match x0 {
                Some(v) => v.to_vec(),
                None => (0..*dim)
                    .map(|_| forcing + 0.01 * normal(&mut rng))
                    .collect(),
            };
            let mut out = Vec::with_capacity(l * dim);
            out.extend_from_slice(&x);
            for step in 1..l {
                rk4_lorenz96(&mut x, *forcing, spec.dt);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(SystemsError::NonFinite { step });
                }
                out.extend_from_slice(&x);
            }
            Ok(Tensor::from_vec(vec![l, *dim], out).expect("l96 shape"))
        }
        SystemParams::Advection2d {
            height,
            width,
            velocity,
            diffusivity,
            spectral_slope,
            noise_amp,
        } => {
            let (h, w) = (*height, *width);
            let n = h * w;
            let fft = Fft2::new(h, w);
            // Per-mode stationary std and one-step decay.
            let mut sigma_k = vec![0.0; n];
            let mut decay = vec![0.0; n];
            let mut phase = vec![Complex::new(0.0, 0.0); n];
            for iy in 0..h {
                for ix in 0..w {
                    let ky = signed_freq(iy, h);
                    let kx = signed_freq(ix, w);
                    let k2 = kx * kx + ky * ky;
                    sigma_k[iy * w + ix] = noise_amp * (1.0 + k2).powf(-spectral_slope / 2.0);
                    let d = 1.0 / (1.0 + diffusivity * k2 * spec.dt);
                    decay[iy * w + ix] = d;
                    let arg = -(kx * velocity[0] + ky * velocity[1]) * spec.dt;
                    phase[iy * w + ix] = Complex::from_polar(1.0, arg);
                }
            }
            // Injection std keeping each mode variance constant over time.
            let inject: Vec<f64> = sigma_k
                .iter()
                .zip(&decay)
                .map(|(s, d)| s * (1.0 - d * d).max(0.0).sqrt())
                .collect();

            let mut spec_state: Vec<Complex<f64>> = match x0 {
                Some(v) => fft.forward(v),
                None => {
                    let white: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
                    let mut f = fft.forward(&white);
                    for (fk, s) in f.iter_mut().zip(&sigma_k) {
                        *fk *= *s;
                    }
                    f
                }
            };
            let mut out = Vec::with_capacity(l * n);
            out.extend(fft.inverse(&spec_state));
            for step in 1..l {
                let white: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
                let mut noise = fft.forward(&white);
                for ((nk, s), (ph, d)) in noise
                    .iter_mut()
                    .zip(&inject)
                    .zip(phase.iter().zip(&decay))
                {
                    *nk *= *s;
                    let _ = (ph, d);
                }
                for i in 0..n {
                    spec_state[i] = spec_state[i] * phase[i] * decay[i] + noise[i];
                }
                let phys = fft.inverse(&spec_state);
                if phys.iter().any(|v| !v.is_finite()) {
                    return Err(SystemsError::NonFinite { step });
                }
                out.extend(phys);
            }
            Ok(Tensor::from_vec(vec![l, n], out).expect("advection shape"))
        }
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

fn lorenz96_deriv(x: &[f64], forcing: f64, out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let ip1 = (i + 1) % n;
        let im1 = (i + n - 1) % n;
        let im2 = (i + n - 2) % n;
        out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
    }
}

fn rk4_lorenz96(x: &mut [f64], forcing: f64, dt: f64) {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    lorenz96_deriv(x, forcing, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    lorenz96_deriv(&tmp, forcing, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    lorenz96_deriv(&tmp, forcing, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    lorenz96_deriv(&tmp, forcing, &mut k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Row-first 2-D FFT over a real field, plus the real-part inverse.
struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    row_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            col_fwd: planner.plan_fft_forward(h),
            row_inv: planner.plan_fft_inverse(w),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn forward(&self, field: &[f64]) -> Vec<Complex<f64>> {
        let (h, w) = (self.h, self.w);
        let mut buf: Vec<Complex<f64>> =
            field.iter().map(|&v| Complex::new(v, 0.0)).collect();
        for r in 0..h {
            self.row_fwd.process(&mut buf[r * w..(r + 1) * w]);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = buf[r * w + c];
            }
            self.col_fwd.process(&mut col);
            for r in 0..h {
                buf[r * w + c] = col[r];
            }
        }
        buf
    }

    fn inverse(&self, spec: &[Complex<f64>]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut buf = spec.to_vec();
        for r in 0..h {
            self.row_inv.process(&mut buf[r * w..(r + 1) * w]);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = buf[r * w + c];
            }
            self.col_inv.process(&mut col);
            for r in 0..h {
                buf[r * w + c] = col[r];
            }
        }
        let norm = 1.0 / (h * w) as f64;
        buf.iter().map(|z| z.re * norm).collect()
    }
}

// ---- standardization ----

/// Per-channel statistics computed on the train split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-channel mean/std over `[n, l, state]` raw trajectories, ignoring NaNs.
pub fn compute_stats(raw: &Tensor<f64>, layout: &StateLayout) -> Result<ChannelStats, SystemsError> {
    let c = layout.channels;
    let per = layout.height * layout.width;
    let mut count = vec![0u64; c];
    let mut mean = vec![0.0; c];
    let mut m2 = vec![0.0; c];
    let state = layout.len();
    for (i, &v) in raw.data().iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        let ch = (i % state) / per;
        count[ch] += 1;
        let delta = v - mean[ch];
        mean[ch] += delta / count[ch] as f64;
        m2[ch] += delta * (v - mean[ch]);
    }
    let mut std = vec![0.0; c];
    for ch in 0..c {
        if count[ch] < 2 {
            return Err(SystemsError::DegenerateChannel { channel: ch });
        }
        std[ch] = (m2[ch] / (count[ch] - 1) as f64).sqrt();
        if std[ch] <= 0.0 || !std[ch].is_finite() {
            return Err(SystemsError::DegenerateChannel { channel: ch });
        }
    }
    Ok(ChannelStats { mean, std })
}

/// Standardize in place: `(x - mean) / std` per channel, NaNs replaced by
/// zeros afterwards (a neutral placeholder at exactly the channel mean).
pub fn standardize(raw: &Tensor<f64>, layout: &StateLayout, stats: &ChannelStats) -> Tensor<f64> {
    let per = layout.height * layout.width;
    let state = layout.len();
    let mut out = raw.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = (i % state) / per;
        let s = (*v - stats.mean[ch]) / stats.std[ch];
        *v = if s.is_nan() { 0.0 } else { s };
    }
    out
}

/// Inverse of [`standardize`] for finite data.
pub fn destandardize(std_vals: &Tensor<f64>, layout: &StateLayout, stats: &ChannelStats) -> Tensor<f64> {
    let per = layout.height * layout.width;
    let state = layout.len();
    let mut out = std_vals.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = (i % state) / per;
        *v = *v * stats.std[ch] + stats.mean[ch];
    }
    out
}

// ---- dataset ----

/// Standardized trajectories plus the statistics and spec that produced them.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    pub spec: SystemSpec,
    pub split: Split,
    pub stats: ChannelStats,
    /// `[n_trajectories, length, state_len]`, standardized.
    pub data: Tensor<f64>,
    pub seed: u64,
}

impl TrajectoryDataset {
    pub fn n_trajectories(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn length(&self) -> usize {
        self.data.shape()[1]
    }

    /// One standardized trajectory `[length, state_len]`.
    pub fn trajectory(&self, i: usize) -> Tensor<f64> {
        self.data.slice_rows(i, 1).expect("trajectory index")
            .reshaped(vec![self.length(), self.spec.state_len()])
            .expect("trajectory shape")
    }

    pub fn save(&self, path: &Path) -> Result<(), SystemsError> {
        let meta = serde_json::json!({
            "kind": "dataset",
            "spec": serde_json::to_value(&self.spec).map_err(ContainerError::Header)?,
            "split": serde_json::to_value(self.split).map_err(ContainerError::Header)?,
            "stats": serde_json::to_value(&self.stats).map_err(ContainerError::Header)?,
            "seed": self.seed,
        });
        let mut c = Container::new(meta);
        c.push("trajectories", self.data.clone());
        c.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SystemsError> {
        let c = Container::load(path)?;
        let spec: SystemSpec = serde_json::from_value(c.meta["spec"].clone())
            .map_err(|_| SystemsError::BadHeader("spec".into()))?;
        let split: Split = serde_json::from_value(c.meta["split"].clone())
            .map_err(|_| SystemsError::BadHeader("split".into()))?;
        let stats: ChannelStats = serde_json::from_value(c.meta["stats"].clone())
            .map_err(|_| SystemsError::BadHeader("stats".into()))?;
        let seed = c.meta["seed"].as_u64().unwrap_or(0);
        let data = c.get("trajectories")?.clone();
        if data.shape().len() != 3 {
            return Err(SystemsError::BadHeader("trajectories".into()));
        }
        if data.shape()[1] == 0 || data.shape()[0] == 0 {
            return Err(SystemsError::EmptyTrajectories);
        }
        if data.shape()[2] != spec.state_len() {
            return Err(SystemsError::BadHeader("trajectories".into()));
        }
        if stats.mean.len() != spec.layout().channels {
            return Err(SystemsError::BadHeader("stats".into()));
        }
        Ok(Self {
            spec,
            split,
            stats,
            data,
            seed,
        })
    }
}

/// Simulate `n` independent raw trajectories of length `l` (after `burn_in`
/// discarded steps), stacked as `[n, l, state_len]`.
pub fn simulate_many(
    spec: &SystemSpec,
    n: usize,
    l: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Tensor<f64>, SystemsError> {
    let state = spec.state_len();
    let mut out = Vec::with_capacity(n * l * state);
    for i in 0..n {
        let full = simulate(spec, None, burn_in + l, seed.wrapping_add(i as u64))?;
        out.extend_from_slice(&full.data()[burn_in * state..]);
    }
    Ok(Tensor::from_vec(vec![n, l, state], out).expect("dataset shape"))
}

/// Build standardized train/val/test datasets with statistics from the train
/// split only.
pub fn build_datasets(
    spec: &SystemSpec,
    n_per_split: [usize; 3],
    l: usize,
    burn_in: usize,
    seed: u64,
) -> Result<[TrajectoryDataset; 3], SystemsError> {
    let layout = spec.layout();
    let raw_train = simulate_many(spec, n_per_split[0], l, burn_in, seed)?;
    let stats = compute_stats(&raw_train, &layout)?;
    let mk = |raw: Tensor<f64>, split: Split| TrajectoryDataset {
        spec: spec.clone(),
        split,
        stats: stats.clone(),
        data: standardize(&raw, &layout, &stats),
        seed,
    };
    let raw_val = simulate_many(spec, n_per_split[1], l, burn_in, seed ^ 0x56414c)?;
    let raw_test = simulate_many(spec, n_per_split[2], l, burn_in, seed ^ 0x544553)?;
    Ok([
        mk(raw_train, Split::Train),
        mk(raw_val, Split::Val),
        mk(raw_test, Split::Test),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_lgssm(dim: usize) -> SystemSpec {
        // Stable rotation-and-decay dynamics with mild process noise.
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 0.9;
            a[i * dim + (i + 1) % dim] = 0.05;
        }
        let mut q = vec![0.0; dim * dim];
        for i in 0..dim {
            q[i * dim + i] = 0.04;
        }
        let mut p0 = vec![0.0; dim * dim];
        for i in 0..dim {
            p0[i * dim + i] = 0.25;
        }
        SystemSpec {
            params: SystemParams::LinearGaussian {
                dim,
                transition: a,
                process_noise: q,
                init_mean: vec![0.0; dim],
                init_cov: p0,
            },
            dt: 1.0,
        }
    }

    #[test]
    fn lorenz96_fixed_point_is_exact() {
        let spec = SystemSpec {
            params: SystemParams::Lorenz96 {
                dim: 8,
                forcing: 8.0,
            },
            dt: 0.05,
        };
        let x0 = vec![8.0; 8];
        let traj = simulate(&spec, Some(&x0), 1000, 0).unwrap();
        for &v in traj.data() {
            assert_eq!(v, 8.0);
        }
    }

    #[test]
    fn lgssm_identity_no_noise_is_constant() {
        let dim = 3;
        let spec = SystemSpec {
            params: SystemParams::LinearGaussian {
                dim,
                transition: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                process_noise: vec![0.0; 9],
                init_mean: vec![1.0, 2.0, 3.0],
                init_cov: vec![0.0; 9],
            },
            dt: 1.0,
        };
        let traj = simulate(&spec, Some(&[1.0, 2.0, 3.0]), 10, 0).unwrap();
        for step in 0..10 {
            assert_eq!(&traj.data()[step * dim..(step + 1) * dim], &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn standardize_roundtrip() {
        let layout = StateLayout {
            channels: 2,
            height: 3,
            width: 1,
        };
        let raw = Tensor::from_fn(&[4, 5, 6], |i| (i as f64 * 0.713).sin() * 3.0 + 1.0);
        let stats = compute_stats(&raw, &layout).unwrap();
        let std = standardize(&raw, &layout, &stats);
        let back = destandardize(&std, &layout, &stats);
        for (a, b) in raw.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_becomes_zero_after_standardization() {
        let layout = StateLayout {
            channels: 1,
            height: 2,
            width: 1,
        };
        let mut raw = Tensor::from_fn(&[3, 4, 2], |i| i as f64);
        raw.data_mut()[5] = f64::NAN;
        let stats = compute_stats(&raw, &layout).unwrap();
        let std = standardize(&raw, &layout, &stats);
        assert_eq!(std.data()[5], 0.0);
        assert!(std.all_finite());
    }

    #[test]
    fn zero_std_channel_is_rejected() {
        let layout = StateLayout {
            channels: 1,
            height: 1,
            width: 1,
        };
        let raw = Tensor::full(&[2, 3, 1], 7.0);
        assert!(matches!(
            compute_stats(&raw, &layout),
            Err(SystemsError::DegenerateChannel { channel: 0 })
        ));
    }

    #[test]
    fn dataset_roundtrip_bitwise() {
        let spec = small_lgssm(3);
        let [train, _, _] = build_datasets(&spec, [2, 1, 1], 5, 0, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ldac");
        train.save(&path).unwrap();
        let back = TrajectoryDataset::load(&path).unwrap();
        assert_eq!(back.data, train.data);
        assert_eq!(back.stats, train.stats);
        assert_eq!(back.split, Split::Train);
    }

    #[test]
    fn advection_field_is_finite_and_varies() {
        let spec = SystemSpec {
            params: SystemParams::Advection2d {
                height: 8,
                width: 8,
                velocity: [1.0, 0.5],
                diffusivity: 0.02,
                spectral_slope: 3.0,
                noise_amp: 1.0,
            },
            dt: 0.2,
        };
        let traj = simulate(&spec, None, 20, 3).unwrap();
        assert!(traj.all_finite());
        let first = traj.slice_rows(0, 1).unwrap();
        let last = traj.slice_rows(19, 1).unwrap();
        assert!(first.sub(&last).unwrap().norm() > 1e-6);
    }
}
