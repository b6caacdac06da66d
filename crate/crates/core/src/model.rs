//! Analytic transmission model of the coupler + fiber loop + detector chain.
//!
//! A photon entering port 1 of the variable-ratio coupler either leaves
//! through port 3 towards the detector (channel 1) or is sent through port 4
//! into the delay loop. Each loop pass re-enters at port 2 and again exits to
//! the detector (port 3) or re-circulates (port 4). Channel `k` therefore
//! collects the light that made `k - 1` round trips:
//!
//! ```text
//! h_1 = t0 * theta * t13 * eta
//! h_k = t0 * t14 * theta^k * tl^(k-1) * t23 * t24^(k-2) * eta     (k >= 2)
//! ```
//!
//! For `k >= 2` the sequence is geometric with ratio `theta * tl * t24`, so
//! both the total transmission and the mass beyond any truncation have closed
//! forms.

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, check_unit, ModelError, Result};

/// Channel truncation used for analytic work unless stated otherwise.
pub const DEFAULT_CHANNELS: usize = 30;

/// The loop series is rejected when its ratio gets this close to one.
const CONVERGENCE_MARGIN: f64 = 1e-9;

/// Coupler configuration, either as the four port-to-port intensity
/// transmissions or as a single division ratio of an idealized coupler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CouplerSetting {
    Full { t13: f64, t14: f64, t23: f64, t24: f64 },
    Ideal { r: f64 },
}

/// Port transmissions of a coupler, resolved from either setting form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortTransmissions {
    pub t13: f64,
    pub t14: f64,
    pub t23: f64,
    pub t24: f64,
}

impl CouplerSetting {
    /// Ideal coupler: `t13 = t24 = r`, `t14 = t23 = 1 - r`.
    pub fn ports(&self) -> PortTransmissions {
        match *self {
            CouplerSetting::Full { t13, t14, t23, t24 } => PortTransmissions { t13, t14, t23, t24 },
            CouplerSetting::Ideal { r } => PortTransmissions {
                t13: r,
                t14: 1.0 - r,
                t23: 1.0 - r,
                t24: r,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CouplerSetting::Full { t13, t14, t23, t24 } => {
                check_unit("t13", t13)?;
                check_unit("t14", t14)?;
                check_unit("t23", t23)?;
                check_unit("t24", t24)
            }
            CouplerSetting::Ideal { r } => check_unit("r", r),
        }
    }
}

/// Physical coefficients of the loop detector.
///
/// Transmissions and probabilities are dimensionless; all times are in ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Input connector transmission.
    pub t0: f64,
    /// Coupler excess-loss transmission, applied on every coupler pass.
    pub theta: f64,
    /// Fiber loop transmission per round trip.
    pub tl: f64,
    /// Port 3 to detector transmission including quantum efficiency.
    pub eta: f64,
    pub coupler: CouplerSetting,
    pub dark_prob_per_bin: f64,
    /// Total afterpulse probability per registered detection.
    pub afterpulse_prob: f64,
    pub afterpulse_decay_ns: f64,
    /// Minimum delay between a detection and its afterpulse.
    pub afterpulse_holdoff_ns: f64,
    pub dead_time_ns: f64,
    pub loop_delay_ns: f64,
    pub bin_width_ns: f64,
    /// Channel window width as a fraction of the channel spacing.
    pub duty_factor_q: f64,
}

impl DeviceParams {
    /// The laboratory device: Si APD with eta = 0.6, dark counts 2e-7 per
    /// 5 ns bin, afterpulse probability 8e-3, 50 ns dead time, a 10 m loop
    /// (about 60 ns), connector losses t0 = 0.92 and tl = 0.94, coupler
    /// excess loss theta = 0.955 and a duty factor of 0.17. The coupler is
    /// set to the entropy-optimal ratio.
    pub fn lab_device() -> Self {
        Self {
            t0: 0.92,
            theta: 0.955,
            tl: 0.94,
            eta: 0.6,
            coupler: CouplerSetting::Ideal { r: 0.446 },
            dark_prob_per_bin: 2e-7,
            afterpulse_prob: 8e-3,
            afterpulse_decay_ns: 200.0,
            afterpulse_holdoff_ns: 60.0,
            dead_time_ns: 50.0,
            loop_delay_ns: 60.0,
            bin_width_ns: 5.0,
            duty_factor_q: 0.17,
        }
    }

    /// Lossless idealized coupler with a perfect detector and no noise.
    pub fn lossless(r: f64) -> Self {
        Self {
            t0: 1.0,
            theta: 1.0,
            tl: 1.0,
            eta: 1.0,
            coupler: CouplerSetting::Ideal { r },
            ..Self::lab_device().without_noise()
        }
    }

    pub fn with_ratio(mut self, r: f64) -> Self {
        self.coupler = CouplerSetting::Ideal { r };
        self
    }

    pub fn with_losses(mut self, t0: f64, theta: f64, tl: f64, eta: f64) -> Self {
        self.t0 = t0;
        self.theta = theta;
        self.tl = tl;
        self.eta = eta;
        self
    }

    pub fn without_noise(mut self) -> Self {
        self.dark_prob_per_bin = 0.0;
        self.afterpulse_prob = 0.0;
        self
    }

    /// Division ratio, when the coupler is idealized.
    pub fn ratio(&self) -> Option<f64> {
        match self.coupler {
            CouplerSetting::Ideal { r } => Some(r),
            CouplerSetting::Full { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("t0", self.t0)?;
        check_unit("theta", self.theta)?;
        check_unit("tl", self.tl)?;
        check_unit("eta", self.eta)?;
        self.coupler.validate()?;
        check_unit("dark_prob_per_bin", self.dark_prob_per_bin)?;
        check_unit("afterpulse_prob", self.afterpulse_prob)?;
        check_unit("duty_factor_q", self.duty_factor_q)?;
        check_positive("afterpulse_decay_ns", self.afterpulse_decay_ns)?;
        check_positive("dead_time_ns", self.dead_time_ns)?;
        check_positive("bin_width_ns", self.bin_width_ns)?;
        check_positive("loop_delay_ns", self.loop_delay_ns)?;
        if !(self.afterpulse_holdoff_ns.is_finite() && self.afterpulse_holdoff_ns >= 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "afterpulse_holdoff_ns",
                value: self.afterpulse_holdoff_ns,
                reason: "must be non-negative",
            });
        }
        if self.loop_delay_ns <= self.dead_time_ns {
            return Err(ModelError::InvalidParameter {
                name: "loop_delay_ns",
                value: self.loop_delay_ns,
                reason: "loop delay must exceed the detector dead time",
            });
        }
        Ok(())
    }

    /// Per-pass ratio of the loop tail, `theta * tl * t24`.
    pub fn loop_ratio(&self) -> f64 {
        self.theta * self.tl * self.coupler.ports().t24
    }

    /// True when light can reach channels beyond the first.
    fn has_tail(&self) -> bool {
        let p = self.coupler.ports();
        p.t14 * p.t23 * self.tl * self.theta > 0.0
    }

    fn check_convergence(&self) -> Result<()> {
        let g = self.loop_ratio();
        if self.has_tail() && g >= 1.0 - CONVERGENCE_MARGIN {
            return Err(ModelError::DivergentSeries(g));
        }
        Ok(())
    }

    /// Transmission of channel `k` (1-based).
    fn channel(&self, k: usize) -> f64 {
        let p = self.coupler.ports();
        if k == 1 {
            self.t0 * self.theta * p.t13 * self.eta
        } else {
            let k = k as i32;
            self.t0 * p.t14 * self.theta.powi(k) * self.tl.powi(k - 1) * p.t23 * p.t24.powi(k - 2) * self.eta
        }
    }

    /// Mass of all channels beyond `n`, summed in closed form.
    fn tail_beyond(&self, n: usize) -> f64 {
        if !self.has_tail() {
            return 0.0;
        }
        self.channel(n + 1) / (1.0 - self.loop_ratio())
    }
}

/// Per-channel detection transmissions for a truncated set of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub h: Vec<f64>,
    /// Transmission into channels beyond the last one listed.
    pub remainder: f64,
}

impl ChannelProfile {
    /// Builds a profile from explicit channel values with nothing beyond them.
    pub fn from_channels(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() {
            return Err(ModelError::InsufficientData(
                "profile needs at least one channel".into(),
            ));
        }
        for &v in &h {
            check_unit("h_k", v)?;
        }
        let profile = Self { h, remainder: 0.0 };
        if profile.total() > 1.0 + 1e-12 {
            return Err(ModelError::InvalidParameter {
                name: "sum(h_k)",
                value: profile.total(),
                reason: "channel transmissions cannot sum above 1",
            });
        }
        Ok(profile)
    }

    pub fn n_channels(&self) -> usize {
        self.h.len()
    }

    /// Total transmission `T = sum(h) + remainder`.
    pub fn total(&self) -> f64 {
        self.h.iter().sum::<f64>() + self.remainder
    }

    /// Probability that a photon is not registered in any listed channel.
    pub fn loss(&self) -> f64 {
        (1.0 - self.h.iter().sum::<f64>()).max(0.0)
    }

    /// Keeps the first `m` channels and folds the rest into the remainder.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.clamp(1, self.h.len());
        let folded: f64 = self.h[m..].iter().sum();
        Self {
            h: self.h[..m].to_vec(),
            remainder: self.remainder + folded,
        }
    }
}

/// Channel transmissions `h_1..h_N` and the closed-form tail beyond `N`.
pub fn channel_transmissions(params: &DeviceParams, n_channels: usize) -> Result<ChannelProfile> {
    if n_channels == 0 {
        return Err(ModelError::InsufficientData("n_channels must be at least 1".into()));
    }
    params.validate()?;
    params.check_convergence()?;
    let h = (1..=n_channels).map(|k| params.channel(k)).collect();
    Ok(ChannelProfile {
        h,
        remainder: params.tail_beyond(n_channels),
    })
}

/// Total transmission of the device summed over all channels.
///
/// Uses `eta * t0 * theta * [t13 + t14 * t23 * theta * tl / (1 - theta * tl * t24)]`,
/// which is the usual closed form rearranged so it stays finite at `t24 = 0`.
pub fn total_transmission(params: &DeviceParams) -> Result<f64> {
    params.validate()?;
    params.check_convergence()?;
    Ok(params.channel(1) + params.tail_beyond(1))
}

/// Total transmission of an idealized coupler of ratio `r` that keeps the
/// device's `t0`, `theta`, `tl` and `eta`:
///
/// `T = eta*t0*(2*tl*theta - 1)/tl - eta*t0*(tl*theta - 1)^2 / (tl*(r*tl*theta - 1))`
pub fn total_transmission_simplified(r: f64, params: &DeviceParams) -> Result<f64> {
    check_unit("r", r)?;
    let p = params.with_ratio(r);
    p.validate()?;
    check_positive("tl", p.tl)?;
    let x = p.tl * p.theta;
    if r * x >= 1.0 - CONVERGENCE_MARGIN {
        return Err(ModelError::DivergentSeries(r * x));
    }
    Ok(p.eta * p.t0 * (2.0 * x - 1.0) / p.tl - p.eta * p.t0 * (x - 1.0).powi(2) / (p.tl * (r * x - 1.0)))
}

/// Leading term of [`total_transmission_simplified`], independent of `r`:
/// `eta * t0 * (2 * tl * theta - 1) / tl`.
pub fn total_transmission_first_term(params: &DeviceParams) -> Result<f64> {
    params.validate()?;
    check_positive("tl", params.tl)?;
    Ok(params.eta * params.t0 * (2.0 * params.tl * params.theta - 1.0) / params.tl)
}

/// Channel shares `H_k = h_k / T` of a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedChannels {
    pub shares: Vec<f64>,
    pub remainder: f64,
}

impl NormalizedChannels {
    pub fn sum(&self) -> f64 {
        self.shares.iter().sum::<f64>() + self.remainder
    }
}

pub fn normalized_channels(profile: &ChannelProfile) -> Result<NormalizedChannels> {
    let total = profile.total();
    if total <= 0.0 {
        return Err(ModelError::DegenerateDevice);
    }
    Ok(NormalizedChannels {
        shares: profile.h.iter().map(|h| h / total).collect(),
        remainder: profile.remainder / total,
    })
}

/// Per-channel ratios `H_{k+1} / (H_k * H_1)` for 1-based `k` in `ks`.
///
/// Returns `(k, ratio)` pairs.
pub fn channel_ratios(shares: &[f64], ks: std::ops::RangeInclusive<usize>) -> Result<Vec<(usize, f64)>> {
    let first = *shares.first().ok_or(ModelError::UndefinedRatio(1))?;
    if first <= 0.0 {
        return Err(ModelError::UndefinedRatio(1));
    }
    ks.map(|k| {
        let hk = shares[k - 1];
        if hk <= 0.0 {
            return Err(ModelError::UndefinedRatio(k));
        }
        Ok((k, shares[k] / (hk * first)))
    })
    .collect()
}

/// Mean over `k >= 2` of `H_{k+1} / (H_k * H_1)`. For the idealized coupler
/// this is close to `2 * theta * tl - 1`.
pub fn channel_ratio_statistic(shares: &[f64]) -> Result<f64> {
    if shares.len() < 3 {
        return Err(ModelError::InsufficientData(format!(
            "ratio statistic needs at least 3 channels, got {}",
            shares.len()
        )));
    }
    let ratios = channel_ratios(shares, 2..=shares.len() - 1)?;
    Ok(ratios.iter().map(|(_, v)| v).sum::<f64>() / ratios.len() as f64)
}
