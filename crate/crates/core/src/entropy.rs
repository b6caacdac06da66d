//! Shannon entropy of the channel profile and the search for the coupler
//! ratio that maximizes it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit, ModelError, Result};
use crate::model::{channel_transmissions, normalized_channels, ChannelProfile, DeviceParams};

/// Channel truncation for entropy evaluation.
pub const ENTROPY_CHANNELS: usize = 60;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// `E = -sum_k h_k ln h_k` over the listed channels (nats). The values are
/// used as given, without renormalizing to unit sum.
pub fn shannon_entropy(profile: &ChannelProfile) -> f64 {
    -profile.h.iter().map(|&h| xlnx(h)).sum::<f64>()
}

/// Entropy of the lossless idealized coupler, `-2 r ln r - 2 (1-r) ln(1-r)`.
pub fn ideal_entropy(r: f64) -> Result<f64> {
    check_unit("r", r)?;
    Ok(-2.0 * xlnx(r) - 2.0 * xlnx(1.0 - r))
}

/// Which channel values the entropy is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EntropyConvention {
    /// Raw transmissions `h_k`.
    #[default]
    Unnormalized,
    /// Shares `H_k = h_k / T`.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub grid_step: f64,
    pub tolerance: f64,
    pub n_channels: usize,
    pub convention: EntropyConvention,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            grid_step: 1e-3,
            tolerance: 1e-5,
            n_channels: ENTROPY_CHANNELS,
            convention: EntropyConvention::Unnormalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyScan {
    pub r_grid: Vec<f64>,
    pub entropy: Vec<f64>,
    pub r_star: f64,
    pub e_star: f64,
    pub convention: EntropyConvention,
}

/// Entropy of the device with its coupler set to ratio `r`.
pub fn entropy_at(params: &DeviceParams, r: f64, cfg: &OptimizeConfig) -> Result<f64> {
    let profile = channel_transmissions(&params.with_ratio(r), cfg.n_channels)?;
    match cfg.convention {
        EntropyConvention::Unnormalized => Ok(shannon_entropy(&profile)),
        EntropyConvention::Normalized => {
            let shares = normalized_channels(&profile)?.shares;
            Ok(shannon_entropy(&ChannelProfile {
                h: shares,
                remainder: 0.0,
            }))
        }
    }
}

/// Golden-section search for the maximum of `f` on `[lo, hi]`.
pub fn golden_section_max<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok((x, f(x)?))
}

/// Scans the division ratio over `[0, 1]` and refines the best grid point by
/// golden-section search. The coupler setting in `params` is ignored.
pub fn optimize_ratio(params: &DeviceParams, cfg: &OptimizeConfig) -> Result<EntropyScan> {
    if !(cfg.grid_step > 0.0 && cfg.grid_step <= 0.5) {
        return Err(ModelError::InvalidParameter {
            name: "grid_step",
            value: cfg.grid_step,
            reason: "must lie in (0, 0.5]",
        });
    }
    let n = (1.0 / cfg.grid_step).round() as usize;
    let r_grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let entropy = r_grid
        .par_iter()
        .map(|&r| entropy_at(params, r, cfg))
        .collect::<Result<Vec<_>>>()?;

    let (best, &e_grid) = entropy
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    let e_min = entropy.iter().cloned().fold(f64::INFINITY, f64::min);
    if e_grid - e_min <= 0.0 {
        return Err(ModelError::NoMaximum);
    }

    let lo = r_grid[best.saturating_sub(1)];
    let hi = r_grid[(best + 1).min(n)];
    let (r_ref, e_ref) = golden_section_max(|r| entropy_at(params, r, cfg), lo, hi, cfg.tolerance)?;
    let (r_star, e_star) = if e_ref >= e_grid {
        (r_ref, e_ref)
    } else {
        (r_grid[best], e_grid)
    };

    Ok(EntropyScan {
        r_grid,
        entropy,
        r_star,
        e_star,
        convention: cfg.convention,
    })
}
