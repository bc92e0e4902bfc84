//! Observation processes `y = M(x) + eta` and the latent-space operator
//! `A = M o D` (decode, then measure).
//!
//! Masks are flat index lists into the per-step state vector. Station masks
//! are a fixed random subset of grid points shared by every step; swath
//! masks are a column band sweeping across the (periodic) grid over time.

use crate::autoencoder::{AutoencoderError, AutoencoderModel};
use crate::graph::{Graph, GraphError, Var};
use crate::rng::stream;
use crate::systems::StateLayout;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error("observation fraction {fraction} selects zero grid points")]
    EmptyMask { fraction: f64 },
    #[error("swath width {width} exceeds grid width {grid}")]
    SwathTooWide { width: usize, grid: usize },
    #[error("mask index {index} out of bounds for state length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("observation set has {masks} mask steps but trajectory has {steps}")]
    StepMismatch { masks: usize, steps: usize },
    #[error("noise std must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("values not yet drawn; call observe() first")]
    NoValues,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autoencoder(#[from] AutoencoderError),
    #[error("container error: {0}")]
    Container(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Stations,
    Swath,
    Full,
    Custom,
}

/// Station mask: `floor(fraction * H * W)` distinct grid points drawn without
/// replacement; every channel is observed at each selected point. The same
/// mask applies at every time step.
pub fn station_mask(
    layout: &StateLayout,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>, ObservationError> {
    let v = layout.height * layout.width;
    let count = (fraction * v as f64).floor() as usize;
    if count == 0 {
        return Err(ObservationError::EmptyMask { fraction });
    }
    let mut points: Vec<usize> = (0..v).collect();
    let mut rng = stream(seed, 0x57a);
    points.shuffle(&mut rng);
    points.truncate(count);
    points.sort_unstable();
    let mut out = Vec::with_capacity(count * layout.channels);
    for c in 0..layout.channels {
        for &p in &points {
            out.push(c * v + p);
        }
    }
    Ok(out)
}

/// Swath mask at time step `t`: a band of `width` contiguous columns whose
/// left edge advances by `speed` columns per step, wrapping periodically.
pub fn swath_mask(
    layout: &StateLayout,
    t: usize,
    width: usize,
    speed: usize,
) -> Result<Vec<usize>, ObservationError> {
    let (h, w) = (layout.height, layout.width);
    if width > w {
        return Err(ObservationError::SwathTooWide { width, grid: w });
    }
    let left = (t * speed) % w;
    let mut out = Vec::with_capacity(layout.channels * h * width);
    for c in 0..layout.channels {
        for r in 0..h {
            for dx in 0..width {
                let col = (left + dx) % w;
                out.push(c * h * w + r * w + col);
            }
        }
    }
    Ok(out)
}

pub fn full_mask(layout: &StateLayout) -> Vec<usize> {
    (0..layout.len()).collect()
}

/// Masks, drawn values and noise levels for one observed trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationSet {
    pub kind: MaskKind,
    pub layout: StateLayout,
    /// Per-step flat indices into the state vector.
    pub masks: Vec<Vec<usize>>,
    /// Per-step observed values; empty until [`ObservationSet::observe`].
    pub values: Vec<Vec<f64>>,
    /// Noise std in standardized units, one per step (applied to every
    /// observation of that step).
    pub noise_std: Vec<f64>,
}

impl ObservationSet {
    pub fn stations(
        layout: StateLayout,
        steps: usize,
        fraction: f64,
        noise_std: f64,
        seed: u64,
    ) -> Result<Self, ObservationError> {
        let mask = station_mask(&layout, fraction, seed)?;
        Self::from_masks(MaskKind::Stations, layout, vec![mask; steps], noise_std)
    }

    pub fn swath(
        layout: StateLayout,
        steps: usize,
        width: usize,
        speed: usize,
        noise_std: f64,
    ) -> Result<Self, ObservationError> {
        let masks = (0..steps)
            .map(|t| swath_mask(&layout, t, width, speed))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_masks(MaskKind::Swath, layout, masks, noise_std)
    }

    pub fn full(
        layout: StateLayout,
        steps: usize,
        noise_std: f64,
    ) -> Result<Self, ObservationError> {
        let mask = full_mask(&layout);
        Self::from_masks(MaskKind::Full, layout, vec![mask; steps], noise_std)
    }

    pub fn from_masks(
        kind: MaskKind,
        layout: StateLayout,
        masks: Vec<Vec<usize>>,
        noise_std: f64,
    ) -> Result<Self, ObservationError> {
        if !(noise_std > 0.0) {
            return Err(ObservationError::NonPositiveNoise(noise_std));
        }
        let len = layout.len();
        for m in &masks {
            for &ix in m {
                if ix >= len {
                    return Err(ObservationError::IndexOutOfBounds { index: ix, len });
                }
            }
        }
        let steps = masks.len();
        Ok(Self {
            kind,
            layout,
            masks,
            values: Vec::new(),
            noise_std: vec![noise_std; steps],
        })
    }

    pub fn steps(&self) -> usize {
        self.masks.len()
    }

    pub fn total_obs(&self) -> usize {
        self.masks.iter().map(|m| m.len()).sum()
    }

    /// Draw `y = x[mask] + noise_std * eps` from a standardized trajectory
    /// `[L, state_len]`.
    pub fn observe(&mut self, truth: &Tensor<f64>, seed: u64) -> Result<(), ObservationError> {
        let steps = truth.shape()[0];
        if steps != self.steps() {
            return Err(ObservationError::StepMismatch {
                masks: self.steps(),
                steps,
            });
        }
        let len = self.layout.len();
        let mut rng = stream(seed, 0x0b5);
        self.values = self
            .masks
            .iter()
            .enumerate()
            .map(|(t, mask)| {
                mask.iter()
                    .map(|&ix| {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        truth.data()[t * len + ix] + self.noise_std[t] * eps
                    })
                    .collect()
            })
            .collect();
        Ok(())
    }

    /// All observed values concatenated in step order.
    pub fn y_flat(&self) -> Result<Vec<f64>, ObservationError> {
        if self.values.len() != self.masks.len() {
            return Err(ObservationError::NoValues);
        }
        Ok(self.values.iter().flatten().copied().collect())
    }

    /// Per-observation noise variance, aligned with [`ObservationSet::y_flat`].
    pub fn noise_var_flat(&self) -> Vec<f64> {
        self.masks
            .iter()
            .zip(&self.noise_std)
            .flat_map(|(m, s)| std::iter::repeat_n(s * s, m.len()))
            .collect()
    }

    /// Flat indices into the flattened `[L * state_len]` trajectory.
    pub fn trajectory_indices(&self) -> Vec<usize> {
        let len = self.layout.len();
        self.masks
            .iter()
            .enumerate()
            .flat_map(|(t, m)| m.iter().map(move |&ix| t * len + ix))
            .collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ObservationError> {
        use crate::container::Container;
        let meta = serde_json::json!({
            "kind": "observations",
            "mask_kind": serde_json::to_value(self.kind).unwrap(),
            "layout": serde_json::to_value(self.layout).unwrap(),
            "masks": self.masks,
            "noise_std": self.noise_std,
        });
        let mut c = Container::new(meta);
        let flat: Vec<f64> = self.values.iter().flatten().copied().collect();
        c.push(
            "values",
            Tensor::from_vec(vec![flat.len()], flat).expect("values"),
        );
        c.save(path)
            .map_err(|e| ObservationError::Container(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ObservationError> {
        use crate::container::Container;
        let c = Container::load(path).map_err(|e| ObservationError::Container(e.to_string()))?;
        let kind: MaskKind = serde_json::from_value(c.meta["mask_kind"].clone())
            .map_err(|e| ObservationError::Container(e.to_string()))?;
        let layout: StateLayout = serde_json::from_value(c.meta["layout"].clone())
            .map_err(|e| ObservationError::Container(e.to_string()))?;
        let masks: Vec<Vec<usize>> = serde_json::from_value(c.meta["masks"].clone())
            .map_err(|e| ObservationError::Container(e.to_string()))?;
        let noise_std: Vec<f64> = serde_json::from_value(c.meta["noise_std"].clone())
            .map_err(|e| ObservationError::Container(e.to_string()))?;
        let flat = c
            .get("values")
            .map_err(|e| ObservationError::Container(e.to_string()))?;
        let mut values = Vec::with_capacity(masks.len());
        let mut off = 0;
        for m in &masks {
            values.push(flat.data()[off..off + m.len()].to_vec());
            off += m.len();
        }
        Ok(Self {
            kind,
            layout,
            masks,
            values,
            noise_std,
        })
    }
}

/// The latent observation operator: decode each latent state, apply each
/// step's measurement mask, and concatenate. Differentiable end to end.
pub struct LatentObservationOperator<'a> {
    pub ae: &'a AutoencoderModel,
    pub set: &'a ObservationSet,
}

impl<'a> LatentObservationOperator<'a> {
    pub fn new(ae: &'a AutoencoderModel, set: &'a ObservationSet) -> Self {
        Self { ae, set }
    }

    pub fn total_obs(&self) -> usize {
        self.set.total_obs()
    }

    /// Record `A(z) = (M^1(D(z^1)) ... M^L(D(z^L)))` on the graph.
    /// `z` is `[L, latent_dim]`; the output is the flat observation vector.
    pub fn apply_on(&self, g: &mut Graph<f64>, z: Var) -> Result<Var, GraphError> {
        let steps = g.value(z).shape()[0];
        if steps != self.set.steps() {
            return Err(GraphError::BadOp {
                op: "apply_observation",
                msg: format!(
                    "trajectory has {steps} steps, observation set has {}",
                    self.set.steps()
                ),
            });
        }
        let dec_params = self.ae.dec_constants(g);
        let decoded = self.ae.decode_forward(g, z, &dec_params)?; // [L, state_len]
        let len = self.ae.state_len();
        let flat = g.reshape(decoded, vec![steps * len])?;
        let gidx = self.set.trajectory_indices();
        g.index_select(flat, gidx)
    }

    /// Predicted observations for a latent trajectory.
    pub fn apply(&self, z: &Tensor<f64>) -> Result<Tensor<f64>, ObservationError> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let out = self.apply_on(&mut g, zv)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> StateLayout {
        StateLayout {
            channels: 1,
            height: h,
            width: w,
        }
    }

    #[test]
    fn full_fraction_station_mask_covers_everything() {
        let lo = grid(4, 4);
        let m = station_mask(&lo, 1.0, 0).unwrap();
        assert_eq!(m, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn one_percent_of_100x100_is_exactly_100_points() {
        let lo = grid(100, 100);
        let m = station_mask(&lo, 0.01, 7).unwrap();
        assert_eq!(m.len(), 100);
    }

    #[test]
    fn station_mask_is_seed_stable() {
        let lo = grid(10, 10);
        assert_eq!(
            station_mask(&lo, 0.2, 3).unwrap(),
            station_mask(&lo, 0.2, 3).unwrap()
        );
        assert_ne!(
            station_mask(&lo, 0.2, 3).unwrap(),
            station_mask(&lo, 0.2, 4).unwrap()
        );
    }

    #[test]
    fn zero_point_fraction_is_error() {
        let lo = grid(4, 4);
        assert!(matches!(
            station_mask(&lo, 0.001, 0),
            Err(ObservationError::EmptyMask { .. })
        ));
    }

    #[test]
    fn full_width_swath_is_all_true() {
        let lo = grid(3, 5);
        let m = swath_mask(&lo, 2, 5, 1).unwrap();
        let mut sorted = m.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn swath_wraps_with_period_width_over_speed() {
        let lo = grid(2, 8);
        let a = swath_mask(&lo, 1, 3, 2).unwrap();
        let b = swath_mask(&lo, 1 + 4, 3, 2).unwrap(); // 8 / 2 = 4 steps per wrap
        assert_eq!(a, b);
    }

    #[test]
    fn swath_union_over_period_covers_every_column() {
        let lo = grid(1, 12);
        let mut seen = vec![false; 12];
        for t in 0..6 {
            for ix in swath_mask(&lo, t, 2, 2).unwrap() {
                seen[ix % 12] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn swath_width_equal_speed_tiles_exactly_once() {
        let lo = grid(1, 12);
        let mut count = vec![0usize; 12];
        for t in 0..4 {
            for ix in swath_mask(&lo, t, 3, 3).unwrap() {
                count[ix % 12] += 1;
            }
        }
        assert!(count.iter().all(|&c| c == 1));
    }

    #[test]
    fn observe_full_mask_zero_noise_equals_truth() {
        let lo = grid(2, 2);
        let truth = Tensor::from_fn(&[3, 4], |i| i as f64);
        let mut set = ObservationSet::full(lo, 3, 1e-300).unwrap();
        set.observe(&truth, 5).unwrap();
        let y = set.y_flat().unwrap();
        for (a, b) in y.iter().zip(truth.data()) {
            assert!((a - b).abs() < 1e-290);
        }
    }

    #[test]
    fn observed_noise_std_matches_configuration() {
        let lo = grid(20, 20);
        let truth = Tensor::zeros(&[250, 400]);
        for (noise, tol) in [(0.01, 0.0002), (0.10, 0.002)] {
            let mut set = ObservationSet::full(lo, 250, noise).unwrap();
            set.observe(&truth, 11).unwrap();
            let y = set.y_flat().unwrap();
            let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
            let std = var.sqrt();
            assert!(
                (std - noise).abs() < tol,
                "empirical std {std} for configured {noise}"
            );
        }
    }

    #[test]
    fn apply_identity_decoder_full_mask_is_flatten() {
        let lo = grid(2, 3);
        let ae = AutoencoderModel::identity(lo, 0.0);
        let mut set = ObservationSet::full(lo, 4, 0.1).unwrap();
        let z = Tensor::from_fn(&[4, 6], |i| (i as f64).cos());
        set.observe(&z, 0).unwrap();
        let op = LatentObservationOperator::new(&ae, &set);
        let out = op.apply(&z).unwrap();
        assert_eq!(out.data(), z.data());
    }

    #[test]
    fn apply_station_mask_gathers_masked_entries() {
        let lo = grid(3, 3);
        let ae = AutoencoderModel::identity(lo, 0.0);
        let mut set = ObservationSet::stations(lo, 2, 0.5, 0.1, 3).unwrap();
        let z = Tensor::from_fn(&[2, 9], |i| i as f64);
        set.observe(&z, 0).unwrap();
        let op = LatentObservationOperator::new(&ae, &set);
        let out = op.apply(&z).unwrap();
        let mut expect = Vec::new();
        for (t, m) in set.masks.iter().enumerate() {
            for &ix in m {
                expect.push(z.data()[t * 9 + ix]);
            }
        }
        assert_eq!(out.data(), &expect[..]);
    }

    #[test]
    fn observation_set_roundtrips_through_container() {
        let lo = grid(4, 4);
        let mut set = ObservationSet::swath(lo, 5, 2, 1, 0.1).unwrap();
        let truth = Tensor::from_fn(&[5, 16], |i| (i as f64).sin());
        set.observe(&truth, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.ldac");
        set.save(&path).unwrap();
        let back = ObservationSet::load(&path).unwrap();
        assert_eq!(back.masks, set.masks);
        assert_eq!(back.values, set.values);
        assert_eq!(back.noise_std, set.noise_std);
    }
}
