//! Ensemble container: sampled trajectories plus ground truth.

use crate::container::Container;
use crate::systems::StateLayout;
use crate::tensor::Tensor;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("member/truth shape mismatch: member {member:?} vs truth {truth:?}")]
    ShapeMismatch {
        member: Vec<usize>,
        truth: Vec<usize>,
    },
    #[error("container error: {0}")]
    Container(String),
}

/// `K` cases of `M` sampled trajectories each, with ground truth, in decoded
/// (state) space. `leads` maps trajectory rows to lead/step labels.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub layout: StateLayout,
    pub var_names: Vec<String>,
    /// cases x members x `[L, state_len]`
    pub members: Vec<Vec<Tensor<f64>>>,
    /// cases x `[L, state_len]`
    pub truth: Vec<Tensor<f64>>,
    /// Lead labels for the L rows (steps for reanalysis, lead times for
    /// forecasts).
    pub leads: Vec<usize>,
    /// Per-case reference state for the persistence baseline (the last
    /// conditioning state), when the task defines one.
    pub persistence: Option<Vec<Tensor<f64>>>,
    pub meta: serde_json::Value,
}

impl Ensemble {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.members.is_empty() || self.members.iter().any(|m| m.is_empty()) {
            return Err(EnsembleError::NoMembers);
        }
        for (case, truth) in self.members.iter().zip(&self.truth) {
            for m in case {
                if m.shape() != truth.shape() {
                    return Err(EnsembleError::ShapeMismatch {
                        member: m.shape().to_vec(),
                        truth: truth.shape().to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n_cases(&self) -> usize {
        self.members.len()
    }

    pub fn n_members(&self) -> usize {
        self.members[0].len()
    }

    pub fn n_leads(&self) -> usize {
        self.leads.len()
    }

    /// Wrap a single case.
    pub fn single_case(
        layout: StateLayout,
        members: Vec<Tensor<f64>>,
        truth: Tensor<f64>,
    ) -> Result<Self, EnsembleError> {
        let l = truth.shape()[0];
        let ens = Self {
            layout,
            var_names: (0..layout.channels).map(|c| format!("var{c}")).collect(),
            members: vec![members],
            truth: vec![truth],
            leads: (0..l).collect(),
            persistence: None,
            meta: serde_json::Value::Null,
        };
        ens.validate()?;
        Ok(ens)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnsembleError> {
        self.validate()?;
        let (k, m) = (self.n_cases(), self.n_members());
        let l = self.truth[0].shape()[0];
        let len = self.layout.len();
        let meta = serde_json::json!({
            "kind": "ensemble",
            "layout": serde_json::to_value(self.layout).unwrap(),
            "var_names": self.var_names,
            "leads": self.leads,
            "meta": self.meta,
            "has_persistence": self.persistence.is_some(),
        });
        let mut c = Container::new(meta);
        let mut flat = Vec::with_capacity(k * m * l * len);
        for case in &self.members {
            for member in case {
                flat.extend_from_slice(member.data());
            }
        }
        c.push(
            "members",
            Tensor::from_vec(vec![k, m, l, len], flat).expect("members shape"),
        );
        let mut tflat = Vec::with_capacity(k * l * len);
        for t in &self.truth {
            tflat.extend_from_slice(t.data());
        }
        c.push(
            "truth",
            Tensor::from_vec(vec![k, l, len], tflat).expect("truth shape"),
        );
        if let Some(p) = &self.persistence {
            let mut pflat = Vec::with_capacity(k * len);
            for t in p {
                pflat.extend_from_slice(t.data());
            }
            c.push(
                "persistence",
                Tensor::from_vec(vec![k, len], pflat).expect("persistence shape"),
            );
        }
        c.save(path).map_err(|e| EnsembleError::Container(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EnsembleError> {
        let c = Container::load(path).map_err(|e| EnsembleError::Container(e.to_string()))?;
        let layout: StateLayout = serde_json::from_value(c.meta["layout"].clone())
            .map_err(|e| EnsembleError::Container(e.to_string()))?;
        let var_names: Vec<String> = serde_json::from_value(c.meta["var_names"].clone())
            .map_err(|e| EnsembleError::Container(e.to_string()))?;
        let leads: Vec<usize> = serde_json::from_value(c.meta["leads"].clone())
            .map_err(|e| EnsembleError::Container(e.to_string()))?;
        let members_t = c
            .get("members")
            .map_err(|e| EnsembleError::Container(e.to_string()))?;
        let truth_t = c
            .get("truth")
            .map_err(|e| EnsembleError::Container(e.to_string()))?;
        let [k, m, l, len] = [
            members_t.shape()[0],
            members_t.shape()[1],
            members_t.shape()[2],
            members_t.shape()[3],
        ];
        let mut members = Vec::with_capacity(k);
        for ki in 0..k {
            let mut case = Vec::with_capacity(m);
            for mi in 0..m {
                let off = ((ki * m) + mi) * l * len;
                case.push(
                    Tensor::from_vec(vec![l, len], members_t.data()[off..off + l * len].to_vec())
                        .expect("member shape"),
                );
            }
            members.push(case);
        }
        let mut truth = Vec::with_capacity(k);
        for ki in 0..k {
            let off = ki * l * len;
            truth.push(
                Tensor::from_vec(vec![l, len], truth_t.data()[off..off + l * len].to_vec())
                    .expect("truth shape"),
            );
        }
        let persistence = if c.meta["has_persistence"].as_bool().unwrap_or(false) {
            let p = c
                .get("persistence")
                .map_err(|e| EnsembleError::Container(e.to_string()))?;
            Some(
                (0..k)
                    .map(|ki| {
                        Tensor::from_vec(
                            vec![1, len],
                            p.data()[ki * len..(ki + 1) * len].to_vec(),
                        )
                        .expect("persistence shape")
                    })
                    .collect(),
            )
        } else {
            None
        };
        let ens = Self {
            layout,
            var_names,
            members,
            truth,
            leads,
            persistence,
            meta: c.meta["meta"].clone(),
        };
        ens.validate()?;
        Ok(ens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let layout = StateLayout {
            channels: 1,
            height: 2,
            width: 2,
        };
        let mk = |s: f64| Tensor::from_fn(&[3, 4], |i| i as f64 + s);
        let ens = Ensemble::single_case(layout, vec![mk(0.1), mk(0.2)], mk(0.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.ldac");
        ens.save(&path).unwrap();
        let back = Ensemble::load(&path).unwrap();
        assert_eq!(back.members[0][1], ens.members[0][1]);
        assert_eq!(back.truth[0], ens.truth[0]);
        assert_eq!(back.leads, ens.leads);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let layout = StateLayout {
            channels: 1,
            height: 2,
            width: 1,
        };
        let ens = Ensemble::single_case(
            layout,
            vec![Tensor::zeros(&[3, 2])],
            Tensor::zeros(&[4, 2]),
        );
        assert!(matches!(ens, Err(EnsembleError::ShapeMismatch { .. })));
    }
}
