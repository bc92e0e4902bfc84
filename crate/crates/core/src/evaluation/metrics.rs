//! Skill, Spread, spread-skill ratio and CRPS over ensembles.
//!
//! All four follow the standard ensemble-verification formulas: skill is the
//! RMSE of the ensemble mean, spread the root mean ensemble variance (with
//! the M-1 denominator), the ratio carries the sqrt((M+1)/M) finite-ensemble
//! correction, and CRPS uses the fair pairwise term with denominator
//! 2M(M-1), so a single-member ensemble reduces exactly to the MAE.

use super::ensemble::Ensemble;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("{metric} needs at least {needed} members, got {got}")]
    TooFewMembers {
        metric: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("spread-skill ratio undefined at zero skill")]
    ZeroSkill,
    #[error("lead index {lead} out of range ({max} leads)")]
    BadLead { lead: usize, max: usize },
    #[error("channel index {channel} out of range ({max} channels)")]
    BadChannel { channel: usize, max: usize },
}

fn check(ens: &Ensemble, channel: usize, lead: usize) -> Result<(), MetricsError> {
    if ens.members.is_empty() || ens.members.iter().any(|c| c.is_empty()) {
        return Err(MetricsError::EmptyEnsemble);
    }
    if lead >= ens.n_leads() {
        return Err(MetricsError::BadLead {
            lead,
            max: ens.n_leads(),
        });
    }
    if channel >= ens.layout.channels {
        return Err(MetricsError::BadChannel {
            channel,
            max: ens.layout.channels,
        });
    }
    Ok(())
}

/// Flat index range of one channel's grid points at one lead.
fn channel_slice(ens: &Ensemble, channel: usize, lead: usize) -> std::ops::Range<usize> {
    let per = ens.layout.height * ens.layout.width;
    let len = ens.layout.len();
    let base = lead * len + channel * per;
    base..base + per
}

/// RMSE of the ensemble mean against truth, over cases and grid points.
pub fn skill(ens: &Ensemble, channel: usize, lead: usize) -> Result<f64, MetricsError> {
    check(ens, channel, lead)?;
    let m = ens.n_members() as f64;
    let per = (ens.layout.height * ens.layout.width) as f64;
    let k = ens.n_cases() as f64;
    let mut acc = 0.0;
    for (case, truth) in ens.members.iter().zip(&ens.truth) {
        let range = channel_slice(ens, channel, lead);
        for i in range {
            let mean: f64 = case.iter().map(|mem| mem.data()[i]).sum::<f64>() / m;
            let d = truth.data()[i] - mean;
            acc += d * d;
        }
    }
    Ok((acc / (k * per)).sqrt())
}

/// Root mean ensemble variance (sample variance with M - 1).
pub fn spread(ens: &Ensemble, channel: usize, lead: usize) -> Result<f64, MetricsError> {
    check(ens, channel, lead)?;
    let m = ens.n_members();
    if m < 2 {
        return Err(MetricsError::TooFewMembers {
            metric: "spread",
            needed: 2,
            got: m,
        });
    }
    let per = (ens.layout.height * ens.layout.width) as f64;
    let k = ens.n_cases() as f64;
    let mut acc = 0.0;
    for (case, truth) in ens.members.iter().zip(&ens.truth) {
        let range = channel_slice(ens, channel, lead);
        for i in range {
            let mean: f64 = case.iter().map(|mem| mem.data()[i]).sum::<f64>() / m as f64;
            let var: f64 = case
                .iter()
                .map(|mem| {
                    let d = mem.data()[i] - mean;
                    d * d
                })
                .sum::<f64>()
                / (m - 1) as f64;
            acc += var;
        }
    }
    Ok((acc / (k * per)).sqrt())
}

/// `sqrt((M+1)/M) * spread / skill`; 1 indicates a calibrated ensemble,
/// below 1 overconfidence.
pub fn spread_skill_ratio(ens: &Ensemble, channel: usize, lead: usize) -> Result<f64, MetricsError> {
    let sk = skill(ens, channel, lead)?;
    if sk == 0.0 {
        return Err(MetricsError::ZeroSkill);
    }
    let sp = spread(ens, channel, lead)?;
    let m = ens.n_members() as f64;
    Ok(((m + 1.0) / m).sqrt() * sp / sk)
}

/// Fair CRPS with per-point-mean L1 norms. The pairwise term is defined as 0
/// for M = 1, so a deterministic forecast scores exactly its MAE.
pub fn crps(ens: &Ensemble, channel: usize, lead: usize) -> Result<f64, MetricsError> {
    check(ens, channel, lead)?;
    let m = ens.n_members();
    let per = (ens.layout.height * ens.layout.width) as f64;
    let k = ens.n_cases() as f64;
    let mut total = 0.0;
    for (case, truth) in ens.members.iter().zip(&ens.truth) {
        let range = channel_slice(ens, channel, lead);
        let mut first = 0.0;
        for mem in case {
            let mut l1 = 0.0;
            for i in range.clone() {
                l1 += (mem.data()[i] - truth.data()[i]).abs();
            }
            first += l1 / per;
        }
        first /= m as f64;
        let mut second = 0.0;
        if m > 1 {
            let mut pair = 0.0;
            for a in case {
                for b in case {
                    let mut l1 = 0.0;
                    for i in range.clone() {
                        l1 += (a.data()[i] - b.data()[i]).abs();
                    }
                    pair += l1 / per;
                }
            }
            second = pair / (2.0 * m as f64 * (m - 1) as f64);
        }
        total += first - second;
    }
    Ok(total / k)
}

/// One metric value for one variable at one lead.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub variable: String,
    pub lead: usize,
    pub metric: String,
    pub value: f64,
}

/// Full metric table: variables x leads x {skill, spread, ssr, crps}.
/// Spread and SSR are NaN-free: for M = 1 those rows are omitted.
pub fn metric_table(ens: &Ensemble) -> Result<Vec<MetricRow>, MetricsError> {
    let mut rows = Vec::new();
    let multi = ens.n_members() >= 2;
    for (c, name) in ens.var_names.iter().enumerate() {
        for (li, &lead) in ens.leads.iter().enumerate() {
            rows.push(MetricRow {
                variable: name.clone(),
                lead,
                metric: "skill".into(),
                value: skill(ens, c, li)?,
            });
            if multi {
                rows.push(MetricRow {
                    variable: name.clone(),
                    lead,
                    metric: "spread".into(),
                    value: spread(ens, c, li)?,
                });
                let sk = skill(ens, c, li)?;
                rows.push(MetricRow {
                    variable: name.clone(),
                    lead,
                    metric: "ssr".into(),
                    value: if sk == 0.0 {
                        0.0
                    } else {
                        spread_skill_ratio(ens, c, li)?
                    },
                });
            }
            rows.push(MetricRow {
                variable: name.clone(),
                lead,
                metric: "crps".into(),
                value: crps(ens, c, li)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::StateLayout;
    use crate::tensor::Tensor;

    fn point_ensemble(members: &[f64], truth: f64) -> Ensemble {
        let layout = StateLayout {
            channels: 1,
            height: 1,
            width: 1,
        };
        Ensemble::single_case(
            layout,
            members
                .iter()
                .map(|&v| Tensor::from_vec(vec![1, 1], vec![v]).unwrap())
                .collect(),
            Tensor::from_vec(vec![1, 1], vec![truth]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_ensemble_scores_zero() {
        let ens = point_ensemble(&[1.0, 1.0, 1.0], 1.0);
        assert_eq!(skill(&ens, 0, 0).unwrap(), 0.0);
        assert_eq!(spread(&ens, 0, 0).unwrap(), 0.0);
        assert_eq!(crps(&ens, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn single_member_skill_is_plain_rmse() {
        let ens = point_ensemble(&[3.0], 1.0);
        assert_eq!(skill(&ens, 0, 0).unwrap(), 2.0);
    }

    #[test]
    fn hand_case_members_zero_two_truth_one() {
        let ens = point_ensemble(&[0.0, 2.0], 1.0);
        // ensemble mean 1 -> skill 0
        assert_eq!(skill(&ens, 0, 0).unwrap(), 0.0);
        // sample std with M-1 denominator: sqrt(((0-1)^2 + (2-1)^2) / 1) = sqrt 2
        assert!((spread(&ens, 0, 0).unwrap() - 2.0f64.sqrt()).abs() < 1e-15);
        // CRPS: first term 1, pairwise term (1/(2*2*1)) * (2 + 2) = 1
        assert_eq!(crps(&ens, 0, 0).unwrap(), 0.0);
        // ratio errors at zero skill
        assert!(matches!(
            spread_skill_ratio(&ens, 0, 0),
            Err(MetricsError::ZeroSkill)
        ));
    }

    #[test]
    fn crps_single_member_is_mae() {
        let layout = StateLayout {
            channels: 1,
            height: 2,
            width: 2,
        };
        let member = Tensor::from_vec(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let truth = Tensor::from_vec(vec![1, 4], vec![2.0, 2.0, 1.0, 8.0]).unwrap();
        let ens = Ensemble::single_case(layout, vec![member], truth).unwrap();
        // MAE = (1 + 0 + 2 + 4) / 4 = 1.75
        assert_eq!(crps(&ens, 0, 0).unwrap(), 1.75);
    }

    #[test]
    fn spread_requires_two_members() {
        let ens = point_ensemble(&[1.0], 0.0);
        assert!(matches!(
            spread(&ens, 0, 0),
            Err(MetricsError::TooFewMembers { .. })
        ));
    }

    #[test]
    fn ssr_correction_vanishes_for_large_m() {
        for m in [2usize, 16, 256] {
            let corr = ((m as f64 + 1.0) / m as f64).sqrt();
            assert!(corr > 1.0);
            if m == 256 {
                assert!((corr - 1.0) < 0.002);
            }
        }
    }
}
