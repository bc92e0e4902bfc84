//! Posterior sampling over latent trajectories and the assimilation tasks:
//! reanalysis, filtering, and (observational or full-state) forecasting.
//!
//! The likelihood score follows moment-matching posterior sampling: with
//! `zhat = E[z | z_t]` from the (composed) denoiser and `A` the Jacobian of
//! the decode-and-measure operator at `zhat`, the perturbed likelihood is
//! `N(y | A(zhat), Sigma_y + A V A^T)`. The covariance solve is matrix-free
//! conjugate gradient using JVP/VJP products through the decoder and masks;
//! the resulting gradient flows back through the denoiser by one VJP sweep.

use crate::autoencoder::AutoencoderModel;
use crate::diffusion::{
    sample_prior, DiffusionError, DiffusionSchedule, TrajectoryDenoise, TrajectoryDenoiseOn,
    WindowDenoise,
};
use crate::composition::ComposedDenoiser;
use crate::graph::{Graph, GraphError, Var};
use crate::observation::{LatentObservationOperator, ObservationError, ObservationSet};
use crate::rng::stream;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssimilationError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Autoencoder(#[from] crate::autoencoder::AutoencoderError),
    #[error(transparent)]
    Composition(#[from] crate::composition::CompositionError),
    #[error("non-finite residual inside the covariance solve")]
    NonFiniteResidual,
    #[error("forecast slide n = {slide} violates n <= W - K = {max}")]
    SlideTooLarge { slide: usize, max: usize },
    #[error("conditioning length K = {k} must satisfy 1 <= K < W = {w}")]
    BadConditioning { k: usize, w: usize },
}

/// How `V[z | z_t]` enters the MMPS covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum VPosteriorMode {
    /// `V = sigma^2 J_d` with the exact denoiser Jacobian via autodiff.
    /// Exact for linear-Gaussian chains; costs one JVP sweep per CG step.
    JacobianExact,
    /// Hutchinson estimate of `diag(J_d)`, clamped at zero.
    Diagonal { probes: usize },
    /// `V = sigma^2 I`, the standard cheap proxy.
    ScalarProxy,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub guidance_scale: f64,
    pub vposterior: VPosteriorMode,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            cg_iters: 32,
            cg_tol: 1e-8,
            guidance_scale: 1.0,
            vposterior: VPosteriorMode::ScalarProxy,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub churn: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 64,
            churn: 0.0,
        }
    }
}

/// Observations of a latent trajectory, as seen by the guidance term.
pub enum TrajObservation<'a> {
    /// Physical observations through decoder + masks.
    Decoded(&'a LatentObservationOperator<'a>),
    /// Direct pinning of latent states (used to condition forecasts):
    /// pseudo-observations of whole latent steps with a small noise std.
    LatentPin {
        steps: Vec<usize>,
        /// Row-major `[steps.len(), latent_dim]` target latents.
        values: Vec<f64>,
        noise_std: f64,
        latent_dim: usize,
    },
}

impl TrajObservation<'_> {
    pub fn count(&self) -> usize {
        match self {
            TrajObservation::Decoded(op) => op.total_obs(),
            TrajObservation::LatentPin {
                steps, latent_dim, ..
            } => steps.len() * latent_dim,
        }
    }

    fn y(&self) -> Result<Vec<f64>, AssimilationError> {
        match self {
            TrajObservation::Decoded(op) => Ok(op.set.y_flat()?),
            TrajObservation::LatentPin { values, .. } => Ok(values.clone()),
        }
    }

    fn noise_var(&self) -> Vec<f64> {
        match self {
            TrajObservation::Decoded(op) => op.set.noise_var_flat(),
            TrajObservation::LatentPin {
                steps,
                noise_std,
                latent_dim,
                ..
            } => vec![noise_std * noise_std; steps.len() * latent_dim],
        }
    }

    fn apply_on(&self, g: &mut Graph<f64>, z: Var) -> Result<Var, GraphError> {
        match self {
            TrajObservation::Decoded(op) => op.apply_on(g, z),
            TrajObservation::LatentPin {
                steps, latent_dim, ..
            } => {
                let l = g.value(z).shape()[0];
                let d = *latent_dim;
                let flat = g.reshape(z, vec![l * d])?;
                let mut idx = Vec::with_capacity(steps.len() * d);
                for &s in steps {
                    for j in 0..d {
                        idx.push(s * d + j);
                    }
                }
                g.index_select(flat, idx)
            }
        }
    }
}

/// Convergence report from the covariance solve.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iters: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Matrix-free conjugate gradient for a symmetric positive definite operator.
/// On non-convergence the best iterate seen is returned with a warning.
pub fn conjugate_gradient(
    mut matvec: impl FnMut(&[f64]) -> Result<Vec<f64>, AssimilationError>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport), AssimilationError> {
    let n = b.len();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgReport {
                iters: 0,
                rel_residual: 0.0,
                converged: true,
            },
        ));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs_old: f64 = r.iter().map(|v| v * v).sum();
    let mut best = (x.clone(), rs_old.sqrt() / b_norm);
    for it in 0..max_iter {
        let rel = rs_old.sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(AssimilationError::NonFiniteResidual);
        }
        if rel < best.1 {
            best = (x.clone(), rel);
        }
        if rel <= tol {
            return Ok((
                x,
                CgReport {
                    iters: it,
                    rel_residual: rel,
                    converged: true,
                },
            ));
        }
        let ap = matvec(&p)?;
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap.abs() < 1e-300 {
            break;
        }
        let alpha = rs_old / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs_old;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs_old = rs_new;
    }
    let rel = rs_old.sqrt() / b_norm;
    if !rel.is_finite() {
        return Err(AssimilationError::NonFiniteResidual);
    }
    let (bx, brel) = if rel < best.1 { (x, rel) } else { best };
    log::warn!(
        "covariance solve stopped at relative residual {brel:.3e} after {max_iter} iterations"
    );
    Ok((
        bx,
        CgReport {
            iters: max_iter,
            rel_residual: brel,
            converged: false,
        },
    ))
}

struct GuidanceOutput {
    zhat: Tensor<f64>,
    score: Tensor<f64>,
    report: CgReport,
}

/// Shared core of `likelihood_score` and guided denoising: one denoiser graph
/// (`z_t -> zhat`), one observation graph (`zhat -> yhat`), a CG solve of
/// `(Sigma_y + A V A^T) u = y - yhat`, and one VJP back to `z_t`.
fn guidance_core(
    z_t: &Tensor<f64>,
    sigma: f64,
    obs: &TrajObservation,
    prior: &dyn TrajectoryDenoiseOn,
    cfg: &GuidanceConfig,
) -> Result<GuidanceOutput, AssimilationError> {
    if sigma <= 0.0 {
        return Err(AssimilationError::Diffusion(
            DiffusionError::NonPositiveSigma(sigma),
        ));
    }
    // Denoiser graph: z_t -> zhat.
    let mut g1 = Graph::new();
    let z_leaf = g1.leaf(z_t.clone());
    let zhat_var = prior.denoise_on(&mut g1, z_leaf, sigma)?;
    let zhat = g1.value(zhat_var).clone();

    // Observation graph: zhat -> yhat, with zhat as an independent leaf so
    // JVP/VJP products give the Jacobian A alone.
    let mut g2 = Graph::new();
    let zhat_leaf = g2.leaf(zhat.clone());
    let yhat_var = obs.apply_on(&mut g2, zhat_leaf)?;
    let yhat = g2.value(yhat_var).clone();

    let y = obs.y()?;
    let sy = obs.noise_var();
    let resid: Vec<f64> = y
        .iter()
        .zip(yhat.data())
        .map(|(yo, yp)| yo - yp)
        .collect();

    let sigma2 = sigma * sigma;
    // Hutchinson diagonal of the denoiser Jacobian, when requested.
    let diag: Option<Vec<f64>> = match cfg.vposterior {
        VPosteriorMode::Diagonal { probes } => {
            let n = z_t.numel();
            let mut acc = vec![0.0; n];
            for p in 0..probes.max(1) {
                let mut rng = stream(0xd1a6, p as u64);
                let eps = Tensor::from_fn(z_t.shape(), |_| {
                    if rng.next_u64() & 1 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                });
                let adj = g1.vjp_sweep(zhat_var, &eps)?;
                let cot = adj.get_or_zeros(z_leaf, z_t.shape());
                for i in 0..n {
                    acc[i] += eps.data()[i] * cot.data()[i];
                }
            }
            Some(
                acc.iter()
                    .map(|v| (v / probes.max(1) as f64).max(0.0))
                    .collect(),
            )
        }
        _ => None,
    };

    let matvec = |v: &[f64]| -> Result<Vec<f64>, AssimilationError> {
        let vt = Tensor::from_vec(vec![v.len()], v.to_vec()).expect("cg vector");
        // w = A^T v
        let adj2 = g2.vjp_sweep(yhat_var, &vt)?;
        let w = adj2.get_or_zeros(zhat_leaf, zhat.shape());
        // q = V w
        let q = match cfg.vposterior {
            VPosteriorMode::ScalarProxy => w.scale(sigma2),
            VPosteriorMode::Diagonal { .. } => {
                let d = diag.as_ref().expect("diag precomputed");
                let mut q = w.clone();
                for (qi, di) in q.data_mut().iter_mut().zip(d) {
                    *qi *= sigma2 * di;
                }
                q
            }
            VPosteriorMode::JacobianExact => {
                let tans = g1.jvp_sweep(&[(z_leaf, w)])?;
                tans.get_or_zeros(zhat_var, zhat.shape()).scale(sigma2)
            }
        };
        // A q
        let tans2 = g2.jvp_sweep(&[(zhat_leaf, q)])?;
        let aq = tans2.get_or_zeros(yhat_var, yhat.shape());
        Ok(v.iter()
            .zip(&sy)
            .zip(aq.data())
            .map(|((vi, syi), aqi)| syi * vi + aqi)
            .collect())
    };

    let (u, report) = conjugate_gradient(matvec, &resid, cfg.cg_tol, cfg.cg_iters)?;

    // score = J_d^T A^T u, one reverse sweep through each graph.
    let ut = Tensor::from_vec(vec![u.len()], u).expect("cg solution");
    let adj2 = g2.vjp_sweep(yhat_var, &ut)?;
    let c = adj2.get_or_zeros(zhat_leaf, zhat.shape());
    let adj1 = g1.vjp_sweep(zhat_var, &c)?;
    let score = adj1
        .get_or_zeros(z_leaf, z_t.shape())
        .scale(cfg.guidance_scale);

    Ok(GuidanceOutput {
        zhat,
        score,
        report,
    })
}

/// MMPS likelihood score `grad_{z_t} log N(y | A(E[z|z_t]), Sigma_y + A V A^T)`
/// (covariance treated as constant with respect to `z_t`).
pub fn likelihood_score(
    z_t: &Tensor<f64>,
    sigma: f64,
    obs: &TrajObservation,
    prior: &dyn TrajectoryDenoiseOn,
    cfg: &GuidanceConfig,
) -> Result<(Tensor<f64>, CgReport), AssimilationError> {
    let out = guidance_core(z_t, sigma, obs, prior, cfg)?;
    Ok((out.score, out.report))
}

/// Prior denoiser plus likelihood guidance, exposed as a trajectory denoiser
/// so the unconditional reverse sampler doubles as the posterior sampler.
/// With no observations (or zero guidance scale) the prior path is used
/// unchanged, bitwise.
pub struct GuidedDenoiser<'a> {
    pub prior: &'a dyn TrajectoryDenoiseOn,
    pub obs: Option<&'a TrajObservation<'a>>,
    pub cfg: GuidanceConfig,
}

impl TrajectoryDenoise for GuidedDenoiser<'_> {
    fn traj_len(&self) -> usize {
        self.prior.traj_len()
    }

    fn latent_dim(&self) -> usize {
        self.prior.latent_dim()
    }

    fn denoise(&self, z: &Tensor<f64>, sigma: f64) -> Result<Tensor<f64>, GraphError> {
        let obs = match self.obs {
            Some(o) if self.cfg.guidance_scale > 0.0 => o,
            _ => return crate::diffusion::denoise_via_graph(self.prior, z, sigma),
        };
        let out = guidance_core(z, sigma, obs, self.prior, &self.cfg).map_err(|e| {
            GraphError::BadOp {
                op: "guided_denoise",
                msg: e.to_string(),
            }
        })?;
        // d_post = zhat + sigma^2 * likelihood score
        out.zhat
            .add(&out.score.scale(sigma * sigma))
            .map_err(GraphError::from)
    }
}

/// One posterior draw of a latent trajectory given observations.
pub fn posterior_sample(
    prior: &dyn TrajectoryDenoiseOn,
    obs: Option<&TrajObservation>,
    schedule: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Tensor<f64>, AssimilationError> {
    let guided = GuidedDenoiser {
        prior,
        obs,
        cfg: *guidance,
    };
    Ok(sample_prior(
        &guided,
        schedule,
        sampler.n_steps,
        seed,
        sampler.churn,
    )?)
}

/// Ensemble of posterior draws, in latent and decoded form.
pub struct EnsembleRun {
    /// `M x [L, latent_dim]`.
    pub latents: Vec<Tensor<f64>>,
    /// `M x [L, state_len]`, decoded.
    pub decoded: Vec<Tensor<f64>>,
}

fn decode_members(
    ae: &AutoencoderModel,
    latents: Vec<Tensor<f64>>,
) -> Result<EnsembleRun, AssimilationError> {
    let decoded = latents
        .iter()
        .map(|z| {
            if z.shape()[0] == 0 {
                Ok(Tensor::zeros(&[0, ae.state_len()]))
            } else {
                ae.decode(z)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EnsembleRun { latents, decoded })
}

/// Reanalysis: M independent posterior draws over the full window, decoded
/// back to state space. Members are sampled in parallel with per-member
/// seeded streams, so the result does not depend on thread count.
pub fn reanalysis(
    prior: &dyn TrajectoryDenoiseOn,
    ae: &AutoencoderModel,
    obs: &ObservationSet,
    schedule: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    sampler: &SamplerConfig,
    members: usize,
    seed: u64,
) -> Result<EnsembleRun, AssimilationError> {
    let op = LatentObservationOperator::new(ae, obs);
    let traj_obs = TrajObservation::Decoded(&op);
    let latents: Vec<Tensor<f64>> = (0..members)
        .into_par_iter()
        .map(|m| {
            posterior_sample(
                prior,
                Some(&traj_obs),
                schedule,
                guidance,
                sampler,
                seed.wrapping_add(m as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    decode_members(ae, latents)
}

/// Filtering is reanalysis keeping only the last state of each member.
pub fn filtering(run: &EnsembleRun) -> EnsembleRun {
    let last = |t: &Tensor<f64>| {
        let l = t.shape()[0];
        t.slice_rows(l - 1, 1).expect("last state")
    };
    EnsembleRun {
        latents: run.latents.iter().map(&last).collect(),
        decoded: run.decoded.iter().map(&last).collect(),
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// Conditioning length K (latent steps pinned each round).
    pub cond_len: usize,
    /// Steps the window advances per autoregressive round.
    pub slide: usize,
    /// Forecast horizon in steps.
    pub lead: usize,
    /// Noise std of the latent pseudo-observations pinning the conditioning
    /// steps.
    pub pseudo_obs_std: f64,
}

/// Autoregressive sliding-window forecast of one ensemble member, in latent
/// space. `init` holds the K conditioning latents; `t0` is the absolute
/// trajectory time of `init`'s first step (clock features stay aligned as
/// the window slides).
pub fn forecast_member_latents(
    denoiser: &dyn WindowDenoise,
    schedule: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    sampler: &SamplerConfig,
    fc: &ForecastConfig,
    init: &Tensor<f64>,
    t0: usize,
    seed: u64,
) -> Result<Tensor<f64>, AssimilationError> {
    let w = denoiser.window_len();
    let d = denoiser.latent_dim();
    let k = fc.cond_len;
    if k == 0 || k >= w {
        return Err(AssimilationError::BadConditioning { k, w });
    }
    if fc.slide == 0 || fc.slide > w - k {
        return Err(AssimilationError::SlideTooLarge {
            slide: fc.slide,
            max: w - k,
        });
    }
    assert_eq!(init.shape(), &[k, d], "init latents shape");
    if fc.lead == 0 {
        return Ok(Tensor::zeros(&[0, d]));
    }

    // known latent rows, starting with the conditioning block
    let mut known: Vec<f64> = init.data().to_vec();
    let mut rounds = 0u64;
    while known.len() / d < k + fc.lead {
        let have = known.len() / d;
        let cond = if rounds == 0 { k } else { w - fc.slide };
        let start = have - cond;
        let pin_vals = known[start * d..].to_vec();
        let pins = TrajObservation::LatentPin {
            steps: (0..cond).collect(),
            values: pin_vals,
            noise_std: fc.pseudo_obs_std,
            latent_dim: d,
        };
        let mut composed = ComposedDenoiser::new(denoiser, w, w)?;
        composed.t_offset = t0 + start;
        let sample = posterior_sample(
            &composed,
            Some(&pins),
            schedule,
            guidance,
            sampler,
            seed.wrapping_add(0x0f0 + rounds),
        )?;
        // keep the newly generated rows
        let fresh = w - cond;
        let take = fresh.min(k + fc.lead - have);
        known.extend_from_slice(&sample.data()[cond * d..(cond + take) * d]);
        rounds += 1;
    }
    Ok(Tensor::from_vec(vec![fc.lead, d], known[k * d..].to_vec()).expect("forecast shape"))
}

/// How a forecast ensemble is initialized.
pub enum ForecastInit<'a> {
    /// Encode the ground-truth conditioning states (full-state forecasting).
    FullState(&'a Tensor<f64>),
    /// Per-member latents from a previous assimilation run (observational
    /// forecasting conditions on the last states of an assimilated window).
    Assimilated(Vec<Tensor<f64>>),
}

/// Forecast ensemble, decoded to state space. Each member runs its own
/// autoregressive chain concurrently.
pub fn forecast_ensemble(
    denoiser: &dyn WindowDenoise,
    ae: &AutoencoderModel,
    schedule: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    sampler: &SamplerConfig,
    fc: &ForecastConfig,
    init: ForecastInit,
    t0: usize,
    members: usize,
    seed: u64,
) -> Result<EnsembleRun, AssimilationError> {
    let member_init: Vec<Tensor<f64>> = match init {
        ForecastInit::FullState(states) => {
            let z = ae.encode_mean(states)?;
            vec![z; members]
        }
        ForecastInit::Assimilated(latents) => {
            assert_eq!(latents.len(), members, "one init per member");
            latents
        }
    };
    let latents: Vec<Tensor<f64>> = (0..members)
        .into_par_iter()
        .map(|m| {
            forecast_member_latents(
                denoiser,
                schedule,
                guidance,
                sampler,
                fc,
                &member_init[m],
                t0,
                seed.wrapping_add(0xf0 + m as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    decode_members(ae, latents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::GaussianDenoiser;

    #[test]
    fn cg_solves_small_spd_system() {
        // A = [[4, 1], [1, 3]], b = [1, 2]
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let matvec = |v: &[f64]| -> Result<Vec<f64>, AssimilationError> {
            Ok(vec![
                a[0][0] * v[0] + a[0][1] * v[1],
                a[1][0] * v[0] + a[1][1] * v[1],
            ])
        };
        let (x, rep) = conjugate_gradient(matvec, &[1.0, 2.0], 1e-12, 50).unwrap();
        assert!(rep.converged);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-10);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-10);
    }

    #[test]
    fn cg_zero_rhs_returns_zero() {
        let matvec = |v: &[f64]| -> Result<Vec<f64>, AssimilationError> { Ok(v.to_vec()) };
        let (x, rep) = conjugate_gradient(matvec, &[0.0, 0.0], 1e-10, 10).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert!(rep.converged);
        assert_eq!(rep.iters, 0);
    }

    #[test]
    fn zero_residual_scalar_mode_gives_zero_score() {
        // Pin the latent to exactly the denoised value: residual 0 => score 0.
        let den = GaussianDenoiser::standard(2, 2);
        let z = Tensor::from_fn(&[2, 2], |i| 0.1 * i as f64);
        let zhat = crate::diffusion::denoise_via_graph(&den, &z, 0.5).unwrap();
        let pins = TrajObservation::LatentPin {
            steps: vec![0, 1],
            values: zhat.data().to_vec(),
            noise_std: 0.1,
            latent_dim: 2,
        };
        let cfg = GuidanceConfig::default();
        let (score, rep) = likelihood_score(&z, 0.5, &pins, &den, &cfg).unwrap();
        assert!(rep.converged);
        assert_eq!(score.data(), &[0.0; 4]);
    }

    #[test]
    fn near_uninformative_observations_vanishing_score() {
        let den = GaussianDenoiser::standard(2, 2);
        let z = Tensor::from_fn(&[2, 2], |i| 1.0 + i as f64);
        let pins = TrajObservation::LatentPin {
            steps: vec![0, 1],
            values: vec![5.0; 4],
            noise_std: 1e6,
            latent_dim: 2,
        };
        let cfg = GuidanceConfig::default();
        let (score, _) = likelihood_score(&z, 0.5, &pins, &den, &cfg).unwrap();
        assert!(score.norm() < 1e-9, "score norm {}", score.norm());
    }

    #[test]
    fn forecast_lead_zero_returns_empty() {
        let den = GaussianDenoiser::standard(4, 1);
        let schedule = DiffusionSchedule::new(0.01, 10.0).unwrap();
        let fc = ForecastConfig {
            cond_len: 2,
            slide: 2,
            lead: 0,
            pseudo_obs_std: 0.01,
        };
        let init = Tensor::zeros(&[2, 1]);
        let out = forecast_member_latents(
            &den,
            &schedule,
            &GuidanceConfig::default(),
            &SamplerConfig::default(),
            &fc,
            &init,
            0,
            7,
        )
        .unwrap();
        assert_eq!(out.shape(), &[0, 1]);
    }
}
