//! Heralded postselection with correlated photon pairs.
//!
//! One beam of a perfectly correlated pair source is measured with the loop
//! detector; the other beam is kept only when the herald outcome is
//! accepted. With `n` photons per pair the conditioned signal pmf is
//! `pmf(n) * P(accept | n)` renormalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit, ModelError, Result};
use crate::mc::{simulate_pulse, ChannelWindows, PulseStreams, SimConfig};
use crate::model::{channel_transmissions, ChannelProfile, DeviceParams};
use crate::stats::{fock_click_distribution, poisson_cutoff, source_multi_photon_content, PhotonSource};

/// Herald outcomes that release the signal pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptRule {
    /// Exactly one channel clicked.
    #[default]
    ExactlyOne,
    /// Any click at all (a plain binary herald).
    AtLeastOne,
    /// Only channel 1 clicked.
    FirstChannelOnly,
}

impl AcceptRule {
    /// Applies the rule to the sorted list of clicked channels.
    pub fn accepts(&self, clicked: &[usize]) -> bool {
        match self {
            AcceptRule::ExactlyOne => clicked.len() == 1,
            AcceptRule::AtLeastOne => !clicked.is_empty(),
            AcceptRule::FirstChannelOnly => clicked == [1],
        }
    }
}

impl std::str::FromStr for AcceptRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exactly-one" => Ok(Self::ExactlyOne),
            "at-least-one" => Ok(Self::AtLeastOne),
            "first-channel-only" => Ok(Self::FirstChannelOnly),
            other => Err(format!(
                "unknown accept rule `{other}` (expected exactly-one|at-least-one|first-channel-only)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostselectConfig {
    pub rule: AcceptRule,
    /// Probability that the partner of a signal photon reaches the herald
    /// detector. Values below 1 model imperfect pair coupling.
    pub pair_coupling: f64,
}

impl Default for PostselectConfig {
    fn default() -> Self {
        Self {
            rule: AcceptRule::ExactlyOne,
            pair_coupling: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostselectResult {
    pub cm_in: f64,
    pub cm_out: f64,
    /// `cm_out / cm_in`; `None` when the source has no multi-photon content.
    pub w_m: Option<f64>,
    pub herald_rate: f64,
    pub conditioned_pmf: Vec<f64>,
}

/// `P(accept | n)` for `n = 0..=n_max` from exact Fock click statistics.
pub fn acceptance_probabilities(profile: &ChannelProfile, rule: AcceptRule, n_max: usize) -> Vec<f64> {
    let loss = profile.loss();
    let not_later = 1.0 - profile.h.iter().skip(1).sum::<f64>();
    (0..=n_max)
        .map(|n| match rule {
            AcceptRule::ExactlyOne => fock_click_distribution(n, profile).p1(),
            AcceptRule::AtLeastOne => 1.0 - fock_click_distribution(n, profile).p0(),
            AcceptRule::FirstChannelOnly => {
                let n = n as i32;
                (not_later.powi(n) - loss.powi(n)).max(0.0)
            }
        })
        .collect()
}

/// `P(accept | n)` estimated by simulating Fock-state heralds with the
/// device's noise. Each photon number uses its own block of trial indices.
pub fn acceptance_probabilities_mc(
    params: &DeviceParams,
    sim: &SimConfig,
    rule: AcceptRule,
    n_max: usize,
) -> Result<Vec<f64>> {
    params.validate()?;
    sim.validate()?;
    let windows = ChannelWindows::from_params(params, sim);
    let work = || {
        (0..=n_max)
            .map(|n| {
                let source = PhotonSource::Fock { n };
                let base = n as u64 * sim.n_trials;
                let hits = (0..sim.n_trials)
                    .into_par_iter()
                    .filter(|i| {
                        let mut s = PulseStreams::for_trial(sim.seed, base + i);
                        let o = simulate_pulse(&source, params, sim, &mut s);
                        rule.accepts(&windows.clicked(&o))
                    })
                    .count();
                hits as f64 / sim.n_trials as f64
            })
            .collect::<Vec<_>>()
    };
    if sim.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(sim.workers)
            .build()
            .map_err(|e| ModelError::ModelDomain(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(work))
    } else {
        Ok(work())
    }
}

/// Conditions a source pmf on precomputed acceptance probabilities.
pub fn postselect_with_acceptance(source: &PhotonSource, acceptance: &[f64]) -> Result<PostselectResult> {
    source.validate()?;
    let pmf = source.pmf();
    if acceptance.len() < pmf.len() {
        return Err(ModelError::ModelDomain(format!(
            "acceptance known up to n = {}, source reaches n = {}",
            acceptance.len() - 1,
            pmf.len() - 1
        )));
    }
    let joint: Vec<f64> = pmf.iter().zip(acceptance).map(|(p, a)| p * a).collect();
    let herald_rate: f64 = joint.iter().sum();
    if herald_rate <= 0.0 {
        return Err(ModelError::NoAcceptance);
    }
    let conditioned_pmf: Vec<f64> = joint.iter().map(|j| j / herald_rate).collect();
    let cm_in = source_multi_photon_content(source)?;
    let cm_out = source_multi_photon_content(&PhotonSource::Custom {
        pmf: conditioned_pmf.clone(),
    })?;
    let w_m = (cm_in > 0.0).then(|| cm_out / cm_in);
    Ok(PostselectResult {
        cm_in,
        cm_out,
        w_m,
        herald_rate,
        conditioned_pmf,
    })
}

fn herald_profile(profile: &ChannelProfile, pair_coupling: f64) -> Result<ChannelProfile> {
    check_unit("pair_coupling", pair_coupling)?;
    Ok(ChannelProfile {
        h: profile.h.iter().map(|h| h * pair_coupling).collect(),
        remainder: profile.remainder * pair_coupling,
    })
}

fn source_cutoff(source: &PhotonSource) -> usize {
    source.pmf().len() - 1
}

/// Analytic postselection of `source` heralded by a detector with profile
/// `herald`.
pub fn postselect(source: &PhotonSource, herald: &ChannelProfile, cfg: &PostselectConfig) -> Result<PostselectResult> {
    source.validate()?;
    let herald = herald_profile(herald, cfg.pair_coupling)?;
    let acceptance = acceptance_probabilities(&herald, cfg.rule, source_cutoff(source));
    postselect_with_acceptance(source, &acceptance)
}

/// One point of a `w_M` curve. Failures are kept as gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct WmPoint {
    pub mu: f64,
    pub result: Result<PostselectResult>,
}

/// Where herald acceptance probabilities come from.
#[derive(Debug, Clone, PartialEq)]
pub enum HeraldModel {
    /// Exact Fock statistics of the noiseless channel model.
    Analytic,
    /// Monte Carlo including the device's dark counts and afterpulses.
    MonteCarlo(SimConfig),
}

/// Postselection summaries over a grid of Poissonian means.
pub fn wm_curve(
    mu_grid: &[f64],
    params: &DeviceParams,
    n_channels: usize,
    cfg: &PostselectConfig,
    model: &HeraldModel,
) -> Result<Vec<WmPoint>> {
    if mu_grid.is_empty() {
        return Err(ModelError::InsufficientData("empty mean-photon-number grid".into()));
    }
    let n_max = mu_grid
        .iter()
        .filter(|m| m.is_finite() && **m >= 0.0)
        .map(|&m| poisson_cutoff(m))
        .max()
        .unwrap_or(0);
    let acceptance = match model {
        HeraldModel::Analytic => {
            let herald = herald_profile(&channel_transmissions(params, n_channels)?, cfg.pair_coupling)?;
            acceptance_probabilities(&herald, cfg.rule, n_max)
        }
        HeraldModel::MonteCarlo(sim) => {
            check_unit("pair_coupling", cfg.pair_coupling)?;
            let mut p = *params;
            p.t0 *= cfg.pair_coupling;
            let sim = SimConfig {
                n_channels,
                ..sim.clone()
            };
            acceptance_probabilities_mc(&p, &sim, cfg.rule, n_max)?
        }
    };
    Ok(mu_grid
        .iter()
        .map(|&mu| WmPoint {
            mu,
            result: postselect_with_acceptance(&PhotonSource::Poissonian { mu }, &acceptance),
        })
        .collect())
}
