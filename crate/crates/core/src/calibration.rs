//! Loss calibration from measured channel shares.
//!
//! The chain follows the laboratory procedure: `theta` is measured on its own,
//! the ratio statistic `H_{k+1} / (H_k H_1)` gives the loop transmission
//! through `2 theta tl - 1`, and `T / eta` then fixes the input coupling via
//! the leading term `t0 (2 tl theta - 1) / tl`.
//!
//! Because the leading-term approximation drifts by a few percent when the
//! loop is lossy, the result also carries an exact inversion for the
//! idealized coupler that additionally uses the geometric channel ratio
//! `H_{k+1} / H_k = theta tl r`.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// `tl = (ratio + 1) / (2 theta)`.
pub fn infer_tl(ratio_stat: f64, theta: f64) -> Result<f64> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(ModelError::ModelDomain(format!("theta must be positive, got {theta}")));
    }
    if ratio_stat.is_nan() || ratio_stat <= -1.0 {
        return Err(ModelError::ModelDomain(format!(
            "ratio statistic must exceed -1, got {ratio_stat}"
        )));
    }
    let tl = (ratio_stat + 1.0) / (2.0 * theta);
    if !(0.0..=1.0).contains(&tl) {
        return Err(ModelError::InconsistentMeasurement { name: "tl", value: tl });
    }
    Ok(tl)
}

/// `t0 = (T / eta) * tl / (2 tl theta - 1)`.
pub fn infer_t0(t_over_eta: f64, tl: f64, theta: f64) -> Result<f64> {
    let denom = 2.0 * tl * theta - 1.0;
    if denom <= 0.0 {
        return Err(ModelError::ModelDomain(format!(
            "2 tl theta - 1 = {denom} must be positive"
        )));
    }
    let t0 = t_over_eta * tl / denom;
    if !(0.0..=1.0).contains(&t0) {
        return Err(ModelError::InconsistentMeasurement { name: "t0", value: t0 });
    }
    Ok(t0)
}

/// One measured normalized channel probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeasurement {
    /// 1-based channel index.
    pub k: usize,
    pub share: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    /// Channels `k` whose ratio `H_{k+1} / (H_k H_1)` enters the statistic.
    pub ratio_ks: RangeInclusive<usize>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        // ratios over channels 2..6
        Self { ratio_ks: 2..=5 }
    }
}

/// Inversion that does not drop the second term of the total transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactEstimate {
    pub tl: f64,
    pub t0: f64,
    pub r: f64,
    /// Mean of `H_{k+1} / H_k`.
    pub geometric_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tl_hat: f64,
    pub t0_hat: f64,
    pub ratio_stat: f64,
    pub t_over_eta: f64,
    /// `(k, ratio_k - ratio_stat)` for every ratio used.
    pub residuals: Vec<(usize, f64)>,
    pub ratio_sigma: f64,
    pub tl_sigma: f64,
    pub t0_sigma: f64,
    pub exact: Option<ExactEstimate>,
    pub warnings: Vec<String>,
}

/// Runs the calibration chain on measured shares.
///
/// `t_over_eta` is `(value, sigma)`; `theta` is taken as known.
pub fn calibrate_from_channels(
    measured: &[ChannelMeasurement],
    t_over_eta: (f64, f64),
    theta: f64,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    let mut warnings = Vec::new();
    let mut by_k: BTreeMap<usize, ChannelMeasurement> = BTreeMap::new();
    for m in measured {
        if m.k == 0 {
            return Err(ModelError::InsufficientData("channel indices start at 1".into()));
        }
        if !(m.share.is_finite() && m.share >= 0.0 && m.sigma >= 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "H_k",
                value: m.share,
                reason: "shares and their errors must be finite and non-negative",
            });
        }
        if by_k.insert(m.k, *m).is_some() {
            warnings.push(format!("channel {} listed twice; last value kept", m.k));
        }
    }
    let usable = by_k.values().filter(|m| m.share > 0.0).count();
    if usable < 3 {
        return Err(ModelError::InsufficientData(format!(
            "need at least 3 channels with positive share, got {usable}"
        )));
    }
    let first = match by_k.get(&1) {
        Some(m) if m.share > 0.0 => *m,
        _ => {
            return Err(ModelError::InsufficientData(
                "channel 1 share is missing or zero".into(),
            ))
        }
    };

    // (k, ratio, geometric ratio)
    let mut used = Vec::new();
    for k in cfg.ratio_ks.clone() {
        let (Some(hk), Some(hn)) = (by_k.get(&k), by_k.get(&(k + 1))) else {
            continue;
        };
        if hk.share <= 0.0 || hn.share <= 0.0 {
            let zero = if hk.share <= 0.0 { k } else { k + 1 };
            warnings.push(format!("channel {zero} has zero share; ratio at k={k} skipped"));
            continue;
        }
        used.push((k, hn.share / (hk.share * first.share), hn.share / hk.share));
    }
    if used.is_empty() {
        return Err(ModelError::InsufficientData(format!(
            "no usable channel ratio in k = {:?}",
            cfg.ratio_ks
        )));
    }
    let n = used.len() as f64;
    let ratio_stat = used.iter().map(|u| u.1).sum::<f64>() / n;
    let geometric = used.iter().map(|u| u.2).sum::<f64>() / n;
    let residuals = used.iter().map(|&(k, v, _)| (k, v - ratio_stat)).collect();

    // d(ratio_stat)/d(H_j), linearized
    let mut grad: BTreeMap<usize, f64> = BTreeMap::new();
    for &(k, v, _) in &used {
        *grad.entry(1).or_default() -= v / first.share / n;
        *grad.entry(k).or_default() -= v / by_k[&k].share / n;
        *grad.entry(k + 1).or_default() += v / by_k[&(k + 1)].share / n;
    }
    let ratio_sigma = grad
        .iter()
        .map(|(j, d)| (d * by_k[j].sigma).powi(2))
        .sum::<f64>()
        .sqrt();

    let (te, te_sigma) = t_over_eta;
    let tl_hat = infer_tl(ratio_stat, theta)?;
    let t0_hat = infer_t0(te, tl_hat, theta)?;
    let tl_sigma = ratio_sigma / (2.0 * theta);
    let denom = 2.0 * tl_hat * theta - 1.0;
    let t0_sigma = ((tl_hat / denom * te_sigma).powi(2) + (te / denom.powi(2) * tl_sigma).powi(2)).sqrt();

    let exact = exact_inversion(ratio_stat, geometric, te, theta);
    if exact.is_none() {
        warnings.push("exact inversion has no physical solution for these inputs".into());
    }

    Ok(CalibrationResult {
        tl_hat,
        t0_hat,
        ratio_stat,
        t_over_eta: te,
        residuals,
        ratio_sigma,
        tl_sigma,
        t0_sigma,
        exact,
        warnings,
    })
}

/// Solves `x^2 - 2 g x + g - s (1 - g) = 0` for `x = theta tl`, where `s` is
/// the ratio statistic and `g = theta tl r` the geometric channel ratio; then
/// `t0 = tl (T/eta) / s`.
fn exact_inversion(s: f64, g: f64, t_over_eta: f64, theta: f64) -> Option<ExactEstimate> {
    let disc = g * g - g + s * (1.0 - g);
    if disc < 0.0 || s <= 0.0 || theta <= 0.0 {
        return None;
    }
    let x = g + disc.sqrt();
    let tl = x / theta;
    let t0 = tl * t_over_eta / s;
    let r = if x > 0.0 { g / x } else { return None };
    let unit = |v: f64| (0.0..=1.0 + 1e-12).contains(&v);
    (unit(tl) && unit(t0) && unit(r)).then_some(ExactEstimate {
        tl,
        t0,
        r,
        geometric_ratio: g,
    })
}
