//! Encoder/decoder pair compressing states into latents.
//!
//! Encoding is stochastic, `z = E(x) + sigma_z * eps`, which regularizes the
//! latent space during training; `encode_mean` is the deterministic part.
//! Three architectures: `Identity` (oracle tests), `Mlp` (vector systems),
//! and `Conv` (periodic grids; fully convolutional, so encodings commute
//! with cyclic shifts that are multiples of the total stride).

use crate::container::Container;
use crate::graph::{Graph, GraphError, Pad, Var};
use crate::optim::Adam;
use crate::rng::stream;
use crate::systems::{StateLayout, TrajectoryDataset};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutoencoderError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("loss weights must be positive and finite")]
    NonPositiveWeight,
    #[error("invalid architecture: {0}")]
    BadArch(String),
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },
    #[error("checkpoint is malformed: {0}")]
    BadCheckpoint(String),
}

/// Architecture description; parameters live in the model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "arch", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AeArch {
    /// Latent is the flattened state; exact round trip.
    Identity { layout: StateLayout },
    /// Dense encoder/decoder for vector states.
    Mlp {
        layout: StateLayout,
        hidden: Vec<usize>,
        latent_dim: usize,
    },
    /// Strided periodic convolutions for grid states. Each stage halves both
    /// spatial dimensions; `channels` lists the stage output channels.
    Conv {
        layout: StateLayout,
        channels: Vec<usize>,
        latent_channels: usize,
    },
}

impl AeArch {
    pub fn layout(&self) -> &StateLayout {
        match self {
            AeArch::Identity { layout } => layout,
            AeArch::Mlp { layout, .. } => layout,
            AeArch::Conv { layout, .. } => layout,
        }
    }

    pub fn state_len(&self) -> usize {
        self.layout().len()
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            AeArch::Identity { layout } => layout.len(),
            AeArch::Mlp { latent_dim, .. } => *latent_dim,
            AeArch::Conv {
                layout,
                channels,
                latent_channels,
            } => {
                let f = 1 << channels.len();
                latent_channels * (layout.height / f) * (layout.width / f)
            }
        }
    }

    /// Total spatial downsampling factor of the encoder.
    pub fn total_stride(&self) -> usize {
        match self {
            AeArch::Conv { channels, .. } => 1 << channels.len(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<(), AutoencoderError> {
        match self {
            AeArch::Identity { .. } => Ok(()),
            AeArch::Mlp {
                layout, latent_dim, ..
            } => {
                if *latent_dim == 0 || layout.len() == 0 {
                    return Err(AutoencoderError::BadArch(
                        "latent_dim and state length must be >= 1".into(),
                    ));
                }
                Ok(())
            }
            AeArch::Conv {
                layout, channels, ..
            } => {
                let f = 1 << channels.len();
                if channels.is_empty() {
                    return Err(AutoencoderError::BadArch(
                        "conv autoencoder needs at least one stage".into(),
                    ));
                }
                if layout.height % f != 0 || layout.width % f != 0 {
                    return Err(AutoencoderError::BadArch(format!(
                        "grid {}x{} not divisible by total stride {f}",
                        layout.height, layout.width
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Per-channel and per-grid-row reconstruction loss weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub channel: Vec<f64>,
    pub row: Vec<f64>,
}

impl LossWeights {
    pub fn uniform(layout: &StateLayout) -> Self {
        Self {
            channel: vec![1.0; layout.channels],
            row: vec![1.0; layout.height],
        }
    }

    /// Flat per-state-entry weights `w[c, r, col] = channel[c] * row[r]`.
    pub fn flat(&self, layout: &StateLayout) -> Result<Vec<f64>, AutoencoderError> {
        if self.channel.len() != layout.channels || self.row.len() != layout.height {
            return Err(AutoencoderError::BadArch(format!(
                "weights ({} channels, {} rows) do not match layout ({}, {})",
                self.channel.len(),
                self.row.len(),
                layout.channels,
                layout.height
            )));
        }
        if self
            .channel
            .iter()
            .chain(&self.row)
            .any(|&w| !(w > 0.0) || !w.is_finite())
        {
            return Err(AutoencoderError::NonPositiveWeight);
        }
        let mut out = Vec::with_capacity(layout.len());
        for &wc in &self.channel {
            for &wr in &self.row {
                for _ in 0..layout.width {
                    out.push(wc * wr);
                }
            }
        }
        Ok(out)
    }
}

/// Weighted mean squared error `sum w (a - b)^2 / sum w`, averaged over any
/// leading batch dimension. Uniform weights reduce to the plain MSE exactly.
pub fn weighted_mse(
    a: &Tensor<f64>,
    b: &Tensor<f64>,
    weights: &LossWeights,
    layout: &StateLayout,
) -> Result<f64, AutoencoderError> {
    let w = weights.flat(layout)?;
    let wsum: f64 = w.iter().sum();
    if a.shape() != b.shape() {
        return Err(AutoencoderError::Tensor(
            crate::tensor::TensorError::ShapeMismatch {
                op: "weighted_mse",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            },
        ));
    }
    let n = a.numel();
    assert_eq!(n % w.len(), 0, "state length must divide tensor size");
    let batches = n / w.len();
    let mut acc = 0.0;
    for bi in 0..batches {
        for (i, wi) in w.iter().enumerate() {
            let d = a.data()[bi * w.len() + i] - b.data()[bi * w.len() + i];
            acc += wi * d * d;
        }
    }
    Ok(acc / (wsum * batches as f64))
}

/// Trained (or identity) autoencoder.
#[derive(Debug, Clone)]
pub struct AutoencoderModel {
    pub arch: AeArch,
    pub sigma_z: f64,
    pub weights: LossWeights,
    pub enc_params: Vec<Tensor<f64>>,
    pub dec_params: Vec<Tensor<f64>>,
}

fn he_init(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let scale = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let x: f64 = StandardNormal.sample(rng);
        x * scale
    })
}

impl AutoencoderModel {
    /// Fresh random initialization (no parameters for `Identity`).
    pub fn init(
        arch: AeArch,
        sigma_z: f64,
        weights: LossWeights,
        seed: u64,
    ) -> Result<Self, AutoencoderError> {
        arch.validate()?;
        weights.flat(arch.layout())?;
        let mut rng = stream(seed, 0xae);
        let (enc_params, dec_params) = match &arch {
            AeArch::Identity { .. } => (vec![], vec![]),
            AeArch::Mlp {
                layout,
                hidden,
                latent_dim,
            } => {
                let mut enc = Vec::new();
                let mut dims = vec![layout.len()];
                dims.extend_from_slice(hidden);
                dims.push(*latent_dim);
                for win in dims.windows(2) {
                    enc.push(he_init(&[win[0], win[1]], win[0], &mut rng));
                    enc.push(Tensor::zeros(&[win[1]]));
                }
                let mut dec = Vec::new();
                let rev: Vec<usize> = dims.iter().rev().copied().collect();
                for win in rev.windows(2) {
                    dec.push(he_init(&[win[0], win[1]], win[0], &mut rng));
                    dec.push(Tensor::zeros(&[win[1]]));
                }
                (enc, dec)
            }
            AeArch::Conv {
                layout,
                channels,
                latent_channels,
            } => {
                let mut enc = Vec::new();
                let mut prev = layout.channels;
                for &c in channels {
                    enc.push(he_init(&[c, prev, 3, 3], prev * 9, &mut rng));
                    enc.push(Tensor::zeros(&[c]));
                    prev = c;
                }
                enc.push(he_init(&[*latent_channels, prev, 3, 3], prev * 9, &mut rng));
                enc.push(Tensor::zeros(&[*latent_channels]));

                let mut dec = Vec::new();
                let mut dprev = *latent_channels;
                for &c in channels.iter().rev() {
                    dec.push(he_init(&[c, dprev, 3, 3], dprev * 9, &mut rng));
                    dec.push(Tensor::zeros(&[c]));
                    dprev = c;
                }
                dec.push(he_init(&[layout.channels, dprev, 3, 3], dprev * 9, &mut rng));
                dec.push(Tensor::zeros(&[layout.channels]));
                (enc, dec)
            }
        };
        Ok(Self {
            arch,
            sigma_z,
            weights,
            enc_params,
            dec_params,
        })
    }

    pub fn identity(layout: StateLayout, sigma_z: f64) -> Self {
        let weights = LossWeights::uniform(&layout);
        Self::init(AeArch::Identity { layout }, sigma_z, weights, 0).expect("identity arch")
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim()
    }

    pub fn state_len(&self) -> usize {
        self.arch.state_len()
    }

    /// Batched encoder on the graph: `x [B, state_len] -> [B, latent_dim]`.
    pub fn encode_forward(
        &self,
        g: &mut Graph<f64>,
        x: Var,
        params: &[Var],
    ) -> Result<Var, GraphError> {
        let b = g.value(x).shape()[0];
        match &self.arch {
            AeArch::Identity { .. } => Ok(x),
            AeArch::Mlp { hidden, .. } => {
                let mut h = x;
                let n_layers = hidden.len() + 1;
                for i in 0..n_layers {
                    h = g.affine(h, params[2 * i], params[2 * i + 1])?;
                    if i + 1 < n_layers {
                        h = g.gelu(h)?;
                    }
                }
                Ok(h)
            }
            AeArch::Conv {
                layout, channels, ..
            } => {
                let mut h = g.reshape(x, vec![b, layout.channels, layout.height, layout.width])?;
                for i in 0..channels.len() {
                    h = g.conv2d(h, params[2 * i], 2, Pad::Periodic)?;
                    h = g.bias_chan(h, params[2 * i + 1])?;
                    h = g.gelu(h)?;
                }
                let i = channels.len();
                h = g.conv2d(h, params[2 * i], 1, Pad::Periodic)?;
                h = g.bias_chan(h, params[2 * i + 1])?;
                g.reshape(h, vec![b, self.latent_dim()])
            }
        }
    }

    /// Batched decoder on the graph: `z [B, latent_dim] -> [B, state_len]`.
    pub fn decode_forward(
        &self,
        g: &mut Graph<f64>,
        z: Var,
        params: &[Var],
    ) -> Result<Var, GraphError> {
        let b = g.value(z).shape()[0];
        match &self.arch {
            AeArch::Identity { .. } => Ok(z),
            AeArch::Mlp { hidden, .. } => {
                let mut h = z;
                let n_layers = hidden.len() + 1;
                for i in 0..n_layers {
                    h = g.affine(h, params[2 * i], params[2 * i + 1])?;
                    if i + 1 < n_layers {
                        h = g.gelu(h)?;
                    }
                }
                Ok(h)
            }
            AeArch::Conv {
                layout,
                channels,
                latent_channels,
            } => {
                let f = 1 << channels.len();
                let (lh, lw) = (layout.height / f, layout.width / f);
                let mut h = g.reshape(z, vec![b, *latent_channels, lh, lw])?;
                for i in 0..channels.len() {
                    h = g.conv2d(h, params[2 * i], 1, Pad::Periodic)?;
                    h = g.bias_chan(h, params[2 * i + 1])?;
                    h = g.gelu(h)?;
                    h = g.upsample2d(h, 2)?;
                }
                let i = channels.len();
                h = g.conv2d(h, params[2 * i], 1, Pad::Periodic)?;
                h = g.bias_chan(h, params[2 * i + 1])?;
                g.reshape(h, vec![b, self.arch.state_len()])
            }
        }
    }

    fn enc_constants(&self, g: &mut Graph<f64>) -> Vec<Var> {
        self.enc_params
            .iter()
            .map(|p| g.constant(p.clone()))
            .collect()
    }

    /// Decoder parameters pinned as constants, for inference-time graphs.
    pub fn dec_constants(&self, g: &mut Graph<f64>) -> Vec<Var> {
        self.dec_params
            .iter()
            .map(|p| g.constant(p.clone()))
            .collect()
    }

    /// Deterministic encoding of a batch `[B, state_len]` (or a trajectory).
    pub fn encode_mean(&self, x: &Tensor<f64>) -> Result<Tensor<f64>, AutoencoderError> {
        let mut g = Graph::new();
        let params = self.enc_constants(&mut g);
        let xv = g.constant(x.clone());
        let out = self.encode_forward(&mut g, xv, &params)?;
        Ok(g.value(out).clone())
    }

    /// Stochastic encoding: `encode_mean + sigma_z * eps` with seeded noise.
    pub fn encode(&self, x: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>, AutoencoderError> {
        let mean = self.encode_mean(x)?;
        let mut rng = stream(seed, 0xe2c);
        let eps = Tensor::randn(mean.shape(), &mut rng);
        Ok(mean.add(&eps.scale(self.sigma_z))?)
    }

    /// Deterministic reconstruction of a batch `[B, latent_dim]`.
    pub fn decode(&self, z: &Tensor<f64>) -> Result<Tensor<f64>, AutoencoderError> {
        let mut g = Graph::new();
        let params = self.dec_constants(&mut g);
        let zv = g.constant(z.clone());
        let out = self.decode_forward(&mut g, zv, &params)?;
        Ok(g.value(out).clone())
    }

    /// Encode a whole standardized trajectory `[L, state_len] -> [L, latent]`.
    pub fn encode_trajectory(&self, traj: &Tensor<f64>) -> Result<Tensor<f64>, AutoencoderError> {
        self.encode_mean(traj)
    }

    pub fn save(
        &self,
        path: &std::path::Path,
        extra_meta: serde_json::Value,
    ) -> Result<(), AutoencoderError> {
        let meta = serde_json::json!({
            "kind": "autoencoder",
            "arch": serde_json::to_value(&self.arch).unwrap(),
            "sigma_z": self.sigma_z,
            "weights": serde_json::to_value(&self.weights).unwrap(),
            "extra": extra_meta,
        });
        let mut c = Container::new(meta);
        for (i, p) in self.enc_params.iter().enumerate() {
            c.push(format!("enc_{i}"), p.clone());
        }
        for (i, p) in self.dec_params.iter().enumerate() {
            c.push(format!("dec_{i}"), p.clone());
        }
        c.save(path)
            .map_err(|e| AutoencoderError::BadCheckpoint(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AutoencoderError> {
        let c =
            Container::load(path).map_err(|e| AutoencoderError::BadCheckpoint(e.to_string()))?;
        let arch: AeArch = serde_json::from_value(c.meta["arch"].clone())
            .map_err(|_| AutoencoderError::BadCheckpoint("arch".into()))?;
        let sigma_z = c.meta["sigma_z"]
            .as_f64()
            .ok_or_else(|| AutoencoderError::BadCheckpoint("sigma_z".into()))?;
        let weights: LossWeights = serde_json::from_value(c.meta["weights"].clone())
            .map_err(|_| AutoencoderError::BadCheckpoint("weights".into()))?;
        let mut enc_params = Vec::new();
        let mut dec_params = Vec::new();
        for (name, t) in c.tensors() {
            if name.starts_with("enc_") {
                enc_params.push(t.clone());
            } else if name.starts_with("dec_") {
                dec_params.push(t.clone());
            }
        }
        Ok(Self {
            arch,
            sigma_z,
            weights,
            enc_params,
            dec_params,
        })
    }
}

/// Autoencoder training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeTrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 2000,
            batch: 16,
            seed: 0,
        }
    }
}

/// Reconstruction training with latent-noise regularization: the decoder sees
/// `encode_mean(x) + sigma_z * eps`, and the loss is the weighted MSE against
/// the original state. Returns the per-step loss curve.
pub fn train_autoencoder(
    model: &mut AutoencoderModel,
    dataset: &TrajectoryDataset,
    cfg: &AeTrainConfig,
) -> Result<Vec<f64>, AutoencoderError> {
    let layout = *model.arch.layout();
    let wflat = model.weights.flat(&layout)?;
    let wsum: f64 = wflat.iter().sum();
    let len = layout.len();
    let wnorm: Vec<f64> = wflat.iter().map(|w| w * len as f64 / wsum).collect();

    let n_traj = dataset.n_trajectories();
    let l = dataset.length();
    let mut rng = stream(cfg.seed, 0xa37);
    let mut params: Vec<Tensor<f64>> = model
        .enc_params
        .iter()
        .chain(&model.dec_params)
        .cloned()
        .collect();
    let n_enc = model.enc_params.len();
    let mut opt = Adam::for_params(cfg.lr, &params);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch * len);
        for _ in 0..cfg.batch {
            let ti = rng.random_range(0..n_traj);
            let si = rng.random_range(0..l);
            let start = (ti * l + si) * len;
            batch.extend_from_slice(&dataset.data.data()[start..start + len]);
        }
        let x = Tensor::from_vec(vec![cfg.batch, len], batch).expect("batch shape");
        let noise =
            Tensor::randn(&[cfg.batch, model.latent_dim()], &mut rng).scale(model.sigma_z);

        let mut g = Graph::new();
        let pvars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
        let (enc_vars, dec_vars) = pvars.split_at(n_enc);
        let result = (|| -> Result<Var, GraphError> {
            let xv = g.constant(x.clone());
            let nv = g.constant(noise.clone());
            let wv = g.constant(Tensor::from_vec(vec![1, len], wnorm.clone()).expect("weights"));
            let z_mean = model.encode_forward(&mut g, xv, enc_vars)?;
            let z = g.add(z_mean, nv)?;
            let xhat = model.decode_forward(&mut g, z, dec_vars)?;
            let resid = g.sub(xhat, xv)?;
            let sq = g.mul(resid, resid)?;
            // broadcast the per-entry weights over the batch by tiling
            let tiles = vec![wv; cfg.batch];
            let wfull = g.concat_rows(&tiles)?;
            let weighted = g.mul(sq, wfull)?;
            g.mean(weighted)
        })();
        let loss_var = result.map_err(|e| match e {
            GraphError::NonFinite { .. } => AutoencoderError::Diverged { step },
            other => AutoencoderError::Graph(other),
        })?;
        let loss = g.value(loss_var).data()[0];
        if !loss.is_finite() {
            return Err(AutoencoderError::Diverged { step });
        }
        losses.push(loss);
        let adj = g.backward(loss_var)?;
        let grads: Vec<Tensor<f64>> = pvars
            .iter()
            .zip(&params)
            .map(|(v, p)| adj.get_or_zeros(*v, p.shape()))
            .collect();
        opt.step(&mut params, &grads)?;
    }

    model.enc_params = params[..n_enc].to_vec();
    model.dec_params = params[n_enc..].to_vec();
    Ok(losses)
}

/// Unweighted reconstruction RMSE over every state of a dataset.
pub fn reconstruction_rmse(
    model: &AutoencoderModel,
    dataset: &TrajectoryDataset,
) -> Result<f64, AutoencoderError> {
    let len = model.state_len();
    let n = dataset.n_trajectories();
    let l = dataset.length();
    let flat = dataset.data.clone().reshaped(vec![n * l, len])?;
    let z = model.encode_mean(&flat)?;
    let xhat = model.decode(&z)?;
    let resid = xhat.sub(&flat)?;
    Ok((resid.data().iter().map(|r| r * r).sum::<f64>() / resid.numel() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(c: usize, h: usize, w: usize) -> StateLayout {
        StateLayout {
            channels: c,
            height: h,
            width: w,
        }
    }

    #[test]
    fn identity_mode_roundtrips_exactly() {
        let model = AutoencoderModel::identity(layout(1, 4, 1), 0.0);
        let x = Tensor::from_fn(&[2, 4], |i| i as f64);
        let z = model.encode(&x, 3).unwrap();
        assert_eq!(z, x);
        let back = model.decode(&model.encode_mean(&x).unwrap()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn encode_noise_std_matches_sigma_z() {
        let model = AutoencoderModel::identity(layout(1, 8, 1), 0.01);
        let x = Tensor::zeros(&[1, 8]);
        let mut acc = 0.0;
        let n = 10_000;
        for seed in 0..n {
            let z = model.encode(&x, seed as u64).unwrap();
            acc += z.data().iter().map(|v| v * v).sum::<f64>();
        }
        let std = (acc / (n * 8) as f64).sqrt();
        assert!(
            (std - 0.01).abs() < 0.01 * 0.01,
            "empirical std {std} should be 0.01 +- 1%"
        );
    }

    #[test]
    fn encode_is_seed_reproducible() {
        let model = AutoencoderModel::identity(layout(1, 4, 1), 0.5);
        let x = Tensor::from_fn(&[1, 4], |i| i as f64);
        assert_eq!(model.encode(&x, 7).unwrap(), model.encode(&x, 7).unwrap());
        assert_ne!(model.encode(&x, 7).unwrap(), model.encode(&x, 8).unwrap());
    }

    #[test]
    fn uniform_weights_reduce_to_plain_mse() {
        let lo = layout(2, 3, 2);
        let w = LossWeights::uniform(&lo);
        let a = Tensor::from_fn(&[2, 12], |i| (i as f64).cos());
        let b = Tensor::from_fn(&[2, 12], |i| (i as f64).sin());
        let wm = weighted_mse(&a, &b, &w, &lo).unwrap();
        let plain = a.sub(&b).unwrap().data().iter().map(|d| d * d).sum::<f64>() / 24.0;
        assert!((wm - plain).abs() < 1e-15);
    }

    #[test]
    fn weighted_mse_zero_for_equal_inputs() {
        let lo = layout(1, 2, 2);
        let w = LossWeights::uniform(&lo);
        let a = Tensor::from_fn(&[1, 4], |i| i as f64);
        assert_eq!(weighted_mse(&a, &a, &w, &lo).unwrap(), 0.0);
    }

    #[test]
    fn doubling_channel_weight_doubles_its_contribution() {
        let lo = layout(2, 1, 2);
        // channel 1 differs, channel 0 matches
        let a = Tensor::from_vec(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 4], vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        let w1 = LossWeights {
            channel: vec![1.0, 1.0],
            row: vec![1.0],
        };
        let w2 = LossWeights {
            channel: vec![1.0, 2.0],
            row: vec![1.0],
        };
        let m1 = weighted_mse(&a, &b, &w1, &lo).unwrap();
        let m2 = weighted_mse(&a, &b, &w2, &lo).unwrap();
        // only channel 1 contributes; its numerator doubles while the weight
        // total goes from 4 to 6
        assert!((m2 - m1 * 2.0 * 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn non_positive_weights_rejected() {
        let lo = layout(1, 1, 2);
        let w = LossWeights {
            channel: vec![0.0],
            row: vec![1.0],
        };
        let a = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            weighted_mse(&a, &a, &w, &lo),
            Err(AutoencoderError::NonPositiveWeight)
        ));
    }

    #[test]
    fn zero_latent_decodes_finite() {
        let lo = layout(1, 8, 8);
        let model = AutoencoderModel::init(
            AeArch::Conv {
                layout: lo,
                channels: vec![4],
                latent_channels: 2,
            },
            0.01,
            LossWeights::uniform(&lo),
            1,
        )
        .unwrap();
        let z = Tensor::zeros(&[1, model.latent_dim()]);
        let x = model.decode(&z).unwrap();
        assert!(x.all_finite());
        assert_eq!(x.shape(), &[1, 64]);
    }

    #[test]
    fn conv_encoding_commutes_with_stride_multiple_shifts() {
        let lo = layout(1, 8, 8);
        let model = AutoencoderModel::init(
            AeArch::Conv {
                layout: lo,
                channels: vec![4],
                latent_channels: 3,
            },
            0.0,
            LossWeights::uniform(&lo),
            2,
        )
        .unwrap();
        let x = Tensor::from_fn(&[1, 64], |i| ((i * 37 % 64) as f64).sin());
        // shift along the x-axis (columns) by the total stride (2)
        let shift = model.arch.total_stride();
        let mut shifted = vec![0.0; 64];
        for r in 0..8 {
            for c in 0..8 {
                shifted[r * 8 + (c + shift) % 8] = x.data()[r * 8 + c];
            }
        }
        let z = model.encode_mean(&x).unwrap();
        let z_shift = model
            .encode_mean(&Tensor::from_vec(vec![1, 64], shifted).unwrap())
            .unwrap();
        // latent grid is 4x4 with 3 channels; a stride shift in x is one
        // latent column
        let (lh, lw, lc) = (4, 4, 3);
        for ch in 0..lc {
            for r in 0..lh {
                for c in 0..lw {
                    let a = z.data()[ch * lh * lw + r * lw + c];
                    let b = z_shift.data()[ch * lh * lw + r * lw + (c + 1) % lw];
                    assert!(
                        (a - b).abs() < 1e-6,
                        "latent shift equivariance violated at ({ch},{r},{c}): {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let lo = layout(1, 4, 1);
        let model = AutoencoderModel::init(
            AeArch::Mlp {
                layout: lo,
                hidden: vec![6],
                latent_dim: 2,
            },
            0.01,
            LossWeights::uniform(&lo),
            3,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.ldac");
        model.save(&path, serde_json::json!({})).unwrap();
        let back = AutoencoderModel::load(&path).unwrap();
        assert_eq!(back.arch, model.arch);
        assert_eq!(back.enc_params, model.enc_params);
        assert_eq!(back.dec_params, model.dec_params);
    }
}
