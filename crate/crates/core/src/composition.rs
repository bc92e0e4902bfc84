//! Window-score composition with a time stride.
//!
//! A denoiser trained on length-`W` windows is stitched into a denoiser over
//! length-`L` trajectories: the first window contributes its leading
//! `a = (W - delta) / 2` entries, interior windows (starting every `delta`
//! steps) contribute their central `delta` entries, and the last window
//! contributes its trailing `a` entries. The destination slices tile `0..L`
//! exactly, so every output entry comes from exactly one window evaluation.

use crate::diffusion::{TrajectoryDenoise, TrajectoryDenoiseOn, WindowDenoise};
use crate::graph::{Graph, GraphError, Var};
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompositionError {
    #[error("window length {w} exceeds trajectory length {l}")]
    WindowTooLong { w: usize, l: usize },
    #[error("stride {delta} exceeds window length {w}")]
    StrideTooLong { delta: usize, w: usize },
    #[error("stride must be >= 1")]
    ZeroStride,
    #[error("(W - delta) = {diff} must be even so the kept block is centered")]
    OddOverlap { diff: usize },
    #[error("(L - W) = {diff} must be divisible by stride {delta} to tile the trajectory")]
    Indivisible { diff: usize, delta: usize },
    #[error("trajectory has {got} steps, plan expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One window evaluation: where the window sits and which in-window slice
/// lands where in the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    /// Window start in the trajectory (0-based).
    pub window_start: usize,
    /// Half-open in-window source range.
    pub src: (usize, usize),
    /// Half-open destination range in the trajectory.
    pub dst: (usize, usize),
}

/// Tiling plan for composing a `W`-window denoiser over `L` steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionPlan {
    pub w: usize,
    pub delta: usize,
    pub len: usize,
    pub segments: Vec<Segment>,
}

impl CompositionPlan {
    /// Build the plan. Requires `W <= L`, `1 <= delta <= W`, `(W - delta)`
    /// even and `(L - W)` divisible by `delta`. `W == L` yields one segment.
    pub fn new(w: usize, delta: usize, l: usize) -> Result<Self, CompositionError> {
        if delta == 0 {
            return Err(CompositionError::ZeroStride);
        }
        if w > l {
            return Err(CompositionError::WindowTooLong { w, l });
        }
        if delta > w {
            return Err(CompositionError::StrideTooLong { delta, w });
        }
        if w == l {
            return Ok(Self {
                w,
                delta,
                len: l,
                segments: vec![Segment {
                    window_start: 0,
                    src: (0, w),
                    dst: (0, w),
                }],
            });
        }
        if (w - delta) % 2 != 0 {
            return Err(CompositionError::OddOverlap { diff: w - delta });
        }
        if (l - w) % delta != 0 {
            return Err(CompositionError::Indivisible {
                diff: l - w,
                delta,
            });
        }
        let a = (w - delta) / 2;
        let b = a + delta;
        let n_last = (l - w) / delta;
        let mut segments = Vec::with_capacity(n_last + 1);
        for n in 0..=n_last {
            let start = n * delta;
            let (src, dst) = if n == 0 {
                // Leading edge plus this window's central block.
                ((0, b), (0, b))
            } else if n == n_last {
                // Central block plus trailing edge.
                ((a, w), (start + a, l))
            } else {
                ((a, b), (start + a, start + b))
            };
            segments.push(Segment {
                window_start: start,
                src,
                dst,
            });
        }
        Ok(Self {
            w,
            delta,
            len: l,
            segments,
        })
    }

    /// Number of window evaluations one composed call costs.
    pub fn calls(&self) -> usize {
        self.segments.len()
    }

    /// Destination slices must partition `0..len` in order with no gaps.
    pub fn check_tiling(&self) -> bool {
        let mut cursor = 0;
        for s in &self.segments {
            if s.dst.0 != cursor || s.dst.1 <= s.dst.0 {
                return false;
            }
            if s.src.1 - s.src.0 != s.dst.1 - s.dst.0 {
                return false;
            }
            if s.window_start + self.w > self.len {
                return false;
            }
            // Source slice must map onto the destination through the window
            // placement.
            if s.window_start + s.src.0 != s.dst.0 {
                return false;
            }
            cursor = s.dst.1;
        }
        cursor == self.len
    }
}

/// Apply the composed denoiser on a recording graph: slice windows out of the
/// `[L, D]` trajectory, denoise each, and concatenate the destination blocks.
pub fn composed_denoise_on(
    g: &mut Graph<f64>,
    denoiser: &dyn WindowDenoise,
    z: Var,
    sigma: f64,
    plan: &CompositionPlan,
    t_offset: usize,
) -> Result<Var, CompositionError> {
    let steps = g.value(z).shape()[0];
    if steps != plan.len {
        return Err(CompositionError::LengthMismatch {
            expected: plan.len,
            got: steps,
        });
    }
    let mut parts = Vec::with_capacity(plan.segments.len());
    for seg in &plan.segments {
        let window = g.slice_rows(z, seg.window_start, plan.w)?;
        let denoised = denoiser.denoise_window_on(g, window, sigma, t_offset + seg.window_start)?;
        let kept = g.slice_rows(denoised, seg.src.0, seg.src.1 - seg.src.0)?;
        parts.push(kept);
    }
    Ok(g.concat_rows(&parts)?)
}

/// Composed denoiser evaluation without gradient bookkeeping.
pub fn composed_denoise(
    denoiser: &dyn WindowDenoise,
    z: &Tensor<f64>,
    sigma: f64,
    plan: &CompositionPlan,
    t_offset: usize,
) -> Result<Tensor<f64>, CompositionError> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let out = composed_denoise_on(&mut g, denoiser, zv, sigma, plan, t_offset)?;
    Ok(g.value(out).clone())
}

/// A window denoiser plus a plan, viewed as a trajectory denoiser. With
/// `W == L` the plan is a single segment and this reduces bitwise to the raw
/// window call.
pub struct ComposedDenoiser<'a> {
    pub denoiser: &'a dyn WindowDenoise,
    pub plan: CompositionPlan,
    /// Absolute trajectory index of step 0, for clock conditioning.
    pub t_offset: usize,
}

impl<'a> ComposedDenoiser<'a> {
    pub fn new(
        denoiser: &'a dyn WindowDenoise,
        delta: usize,
        len: usize,
    ) -> Result<Self, CompositionError> {
        let plan = CompositionPlan::new(denoiser.window_len(), delta, len)?;
        Ok(Self {
            denoiser,
            plan,
            t_offset: 0,
        })
    }
}

impl TrajectoryDenoise for ComposedDenoiser<'_> {
    fn traj_len(&self) -> usize {
        self.plan.len
    }

    fn latent_dim(&self) -> usize {
        self.denoiser.latent_dim()
    }

    fn denoise(&self, z: &Tensor<f64>, sigma: f64) -> Result<Tensor<f64>, GraphError> {
        crate::diffusion::denoise_via_graph(self, z, sigma)
    }
}

impl TrajectoryDenoiseOn for ComposedDenoiser<'_> {
    fn denoise_on(&self, g: &mut Graph<f64>, z: Var, sigma: f64) -> Result<Var, GraphError> {
        composed_denoise_on(g, self.denoiser, z, sigma, &self.plan, self.t_offset).map_err(|e| {
            match e {
                CompositionError::Graph(ge) => ge,
                other => GraphError::BadOp {
                    op: "composed_denoise",
                    msg: other.to_string(),
                },
            }
        })
    }
}

/// Composed trajectory score `(E - z) / sigma^2`.
pub fn composed_score(
    denoiser: &dyn WindowDenoise,
    z: &Tensor<f64>,
    sigma: f64,
    plan: &CompositionPlan,
    t_offset: usize,
) -> Result<Tensor<f64>, CompositionError> {
    let e = composed_denoise(denoiser, z, sigma, plan, t_offset)?;
    let inv = 1.0 / (sigma * sigma);
    Ok(e.sub(z).expect("score shape").scale(inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_plan_when_w_equals_l() {
        let p = CompositionPlan::new(6, 2, 6).unwrap();
        assert_eq!(p.segments.len(), 1);
        assert_eq!(p.segments[0].dst, (0, 6));
        assert!(p.check_tiling());
    }

    #[test]
    fn hand_enumerated_w4_d2_l8() {
        // a = 1, b = 3; destinations {0}, {1,2}, {3,4}, {5,6}, {7} in 0-based
        // half-open form: [0,3) from the first window includes its center.
        let p = CompositionPlan::new(4, 2, 8).unwrap();
        let dsts: Vec<(usize, usize)> = p.segments.iter().map(|s| s.dst).collect();
        assert_eq!(dsts, vec![(0, 3), (3, 5), (5, 8)]);
        assert!(p.check_tiling());
    }

    #[test]
    fn odd_overlap_rejected() {
        assert!(matches!(
            CompositionPlan::new(4, 3, 8),
            Err(CompositionError::OddOverlap { diff: 1 })
        ));
    }

    #[test]
    fn larger_stride_means_fewer_calls() {
        let c2 = CompositionPlan::new(8, 2, 24).unwrap().calls();
        let c4 = CompositionPlan::new(8, 4, 24).unwrap().calls();
        assert!(c2 > c4, "calls: {c2} vs {c4}");
    }
}
