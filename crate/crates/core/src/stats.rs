//! Click-number statistics of the loop detector.
//!
//! A channel "clicks" when at least one photon is registered in it; the
//! detector cannot tell how many. The statistics here are distributions of
//! the number of distinct channels that clicked in one pulse.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::ChannelProfile;

/// Photon-number statistics of the light entering the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PhotonSource {
    Poissonian { mu: f64 },
    Fock { n: usize },
    Custom { pmf: Vec<f64> },
}

/// Photon number beyond which a Poissonian pmf is truncated.
pub fn poisson_cutoff(mu: f64) -> usize {
    (mu + 10.0 * mu.sqrt() + 20.0).ceil() as usize
}

fn poisson_pmf(mu: f64, n_max: usize) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(n_max + 1);
    let mut term = (-mu).exp();
    pmf.push(term);
    for n in 1..=n_max {
        term *= mu / n as f64;
        pmf.push(term);
    }
    pmf
}

impl PhotonSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            PhotonSource::Poissonian { mu } if !(mu.is_finite() && *mu >= 0.0) => Err(ModelError::InvalidSource(
                format!("mean photon number {mu} must be finite and >= 0"),
            )),
            PhotonSource::Custom { pmf } => {
                if pmf.is_empty() {
                    return Err(ModelError::InvalidSource("empty pmf".into()));
                }
                if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(ModelError::InvalidSource(
                        "pmf has negative or non-finite entries".into(),
                    ));
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(ModelError::InvalidSource(format!("pmf sums to {total}, not 1")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Photon-number pmf over `n = 0..=n_max`. Poissonian sources are
    /// truncated at [`poisson_cutoff`].
    pub fn pmf(&self) -> Vec<f64> {
        match self {
            PhotonSource::Poissonian { mu } => poisson_pmf(*mu, poisson_cutoff(*mu)),
            PhotonSource::Fock { n } => {
                let mut pmf = vec![0.0; n + 1];
                pmf[*n] = 1.0;
                pmf
            }
            PhotonSource::Custom { pmf } => pmf.clone(),
        }
    }

    /// Source after a beam splitter of transmission `t` (binomial thinning).
    pub fn thinned(&self, t: f64) -> PhotonSource {
        match self {
            PhotonSource::Poissonian { mu } => PhotonSource::Poissonian { mu: mu * t },
            other => {
                let pmf = other.pmf();
                let lf = ln_factorials(pmf.len());
                let mut out = vec![0.0; pmf.len()];
                for (n, &w) in pmf.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (k, o) in out.iter_mut().enumerate().take(n + 1) {
                        *o += w * binomial_pmf(&lf, n, k, t);
                    }
                }
                PhotonSource::Custom { pmf: out }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            PhotonSource::Poissonian { mu } => {
                if *mu <= 0.0 {
                    0
                } else {
                    Poisson::new(*mu).expect("validated mean").sample(rng) as usize
                }
            }
            PhotonSource::Fock { n } => *n,
            PhotonSource::Custom { pmf } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (n, p) in pmf.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return n;
                    }
                }
                pmf.len() - 1
            }
        }
    }
}

/// Distribution of the number of distinct channels clicked per pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickDistribution {
    /// Probability of exactly `m` clicked channels, `m = 0..=N`.
    pub p_click: Vec<f64>,
    /// Binomial standard errors, present for empirical distributions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_err: Option<Vec<f64>>,
}

impl ClickDistribution {
    pub fn new(p_click: Vec<f64>) -> Self {
        Self { p_click, std_err: None }
    }

    pub fn p0(&self) -> f64 {
        self.p_click[0]
    }

    pub fn p1(&self) -> f64 {
        self.p_click.get(1).copied().unwrap_or(0.0)
    }

    pub fn p_multi(&self) -> f64 {
        self.p_click.iter().skip(2).sum()
    }

    pub fn sum(&self) -> f64 {
        self.p_click.iter().sum()
    }
}

pub(crate) fn ln_factorials(n: usize) -> Vec<f64> {
    let mut lf = Vec::with_capacity(n + 1);
    lf.push(0.0);
    for i in 1..=n {
        lf.push(lf[i - 1] + (i as f64).ln());
    }
    lf
}

fn binomial_pmf(lf: &[f64], n: usize, k: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    (lf[n] - lf[k] - lf[n - k] + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()).exp()
}

/// Probability that exactly `m` of the independent events occur, for
/// event probabilities `probs` (Poisson-binomial recursion).
pub fn poisson_binomial(probs: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; probs.len() + 1];
    d[0] = 1.0;
    for (i, &q) in probs.iter().enumerate() {
        for m in (1..=i + 1).rev() {
            d[m] = d[m] * (1.0 - q) + d[m - 1] * q;
        }
        d[0] *= 1.0 - q;
    }
    d
}

/// Click distribution for a Poissonian input of mean `mu`. Poissonian
/// thinning makes the channels independent, each clicking with probability
/// `1 - exp(-mu * h_k)`.
pub fn poisson_click_distribution(mu: f64, profile: &ChannelProfile) -> Result<ClickDistribution> {
    PhotonSource::Poissonian { mu }.validate()?;
    let probs: Vec<f64> = profile.h.iter().map(|h| -(-mu * h).exp_m1()).collect();
    Ok(ClickDistribution::new(poisson_binomial(&probs)))
}

/// Pushes a photon-number distribution through the channels one at a time.
///
/// `remaining[j]` holds the probability that `j` photons are still to be
/// placed; each channel takes a binomial share of them with its probability
/// conditioned on the photon not having landed earlier. Photons left at the
/// end are lost. Returns the distribution over distinct clicked channels.
fn sequential_occupancy(pmf: &[f64], profile: &ChannelProfile) -> Vec<f64> {
    let n_max = pmf.len().saturating_sub(1);
    let n_ch = profile.n_channels();
    let lf = ln_factorials(n_max);
    let loss = profile.loss();

    // state[j][m]
    let width = n_ch + 1;
    let mut state = vec![0.0; (n_max + 1) * width];
    for (j, &w) in pmf.iter().enumerate() {
        state[j * width] = w;
    }
    let mut rest: f64 = profile.h.iter().sum::<f64>() + loss;
    let mut next = vec![0.0; state.len()];
    for (k, &h) in profile.h.iter().enumerate() {
        let p = if rest > 0.0 { (h / rest).min(1.0) } else { 0.0 };
        next.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..=n_max {
            for m in 0..=k.min(n_max) {
                let w = state[j * width + m];
                if w == 0.0 {
                    continue;
                }
                for c in 0..=j {
                    let b = binomial_pmf(&lf, j, c, p);
                    if b == 0.0 {
                        continue;
                    }
                    let m2 = if c > 0 { m + 1 } else { m };
                    next[(j - c) * width + m2] += w * b;
                }
            }
        }
        std::mem::swap(&mut state, &mut next);
        rest -= h;
    }
    let mut out = vec![0.0; width];
    for j in 0..=n_max {
        for (m, o) in out.iter_mut().enumerate() {
            *o += state[j * width + m];
        }
    }
    out
}

/// Exact click distribution for a Fock state of `n` photons: every photon
/// independently lands in channel `k` with probability `h_k` or is lost.
pub fn fock_click_distribution(n: usize, profile: &ChannelProfile) -> ClickDistribution {
    let mut pmf = vec![0.0; n + 1];
    pmf[n] = 1.0;
    ClickDistribution::new(sequential_occupancy(&pmf, profile))
}

/// Same quantity as [`fock_click_distribution`] by inclusion-exclusion over
/// channel subsets:
/// `P(m) = sum_{|U| <= m} (-1)^(m-|U|) C(N-|U|, m-|U|) (loss + h_U)^n`.
/// Cost grows as `2^N`; limited to `N <= 20`.
pub fn fock_click_distribution_inclusion_exclusion(n: usize, profile: &ChannelProfile) -> Result<ClickDistribution> {
    let n_ch = profile.n_channels();
    if n_ch > 20 {
        return Err(ModelError::ModelDomain(format!(
            "inclusion-exclusion limited to 20 channels, got {n_ch}"
        )));
    }
    let loss = profile.loss();
    let mut binom = vec![vec![0.0f64; n_ch + 1]; n_ch + 1];
    for a in 0..=n_ch {
        binom[a][0] = 1.0;
        for b in 1..=a {
            binom[a][b] = binom[a - 1][b - 1] + if b < a { binom[a - 1][b] } else { 0.0 };
        }
    }
    let mut out = vec![0.0; n_ch + 1];
    for mask in 0u32..(1u32 << n_ch) {
        let size = mask.count_ones() as usize;
        let h_u: f64 = (0..n_ch).filter(|i| mask & (1 << i) != 0).map(|i| profile.h[i]).sum();
        let term = (loss + h_u).powi(n as i32);
        for (m, o) in out.iter_mut().enumerate().skip(size) {
            let sign = if (m - size).is_multiple_of(2) { 1.0 } else { -1.0 };
            *o += sign * binom[n_ch - size][m - size] * term;
        }
    }
    Ok(ClickDistribution::new(out))
}

/// Mixture of Fock click distributions weighted by an explicit pmf.
pub fn mixture_click_distribution(pmf: &[f64], profile: &ChannelProfile) -> Result<ClickDistribution> {
    PhotonSource::Custom { pmf: pmf.to_vec() }.validate()?;
    Ok(ClickDistribution::new(sequential_occupancy(pmf, profile)))
}

/// Click distribution for any source. Poissonian sources use the
/// independent-channel form; the others are Fock mixtures.
pub fn click_distribution(source: &PhotonSource, profile: &ChannelProfile) -> Result<ClickDistribution> {
    source.validate()?;
    match source {
        PhotonSource::Poissonian { mu } => poisson_click_distribution(*mu, profile),
        PhotonSource::Fock { n } => Ok(fock_click_distribution(*n, profile)),
        PhotonSource::Custom { pmf } => mixture_click_distribution(pmf, profile),
    }
}

/// Multi-photon content `p_M / (p_1 + p_M)` of a click distribution.
pub fn multi_photon_content(d: &ClickDistribution) -> Result<f64> {
    let (p1, pm) = (d.p1(), d.p_multi());
    if p1 + pm <= 0.0 {
        return Err(ModelError::UndefinedContent);
    }
    Ok(pm / (p1 + pm))
}

/// Multi-photon content `P(n >= 2) / P(n >= 1)` of the source itself.
pub fn source_multi_photon_content(source: &PhotonSource) -> Result<f64> {
    source.validate()?;
    match source {
        PhotonSource::Poissonian { mu } => {
            if *mu <= 0.0 {
                return Err(ModelError::UndefinedContent);
            }
            // 1 - e^-mu and 1 - e^-mu - mu e^-mu, written to survive small mu
            let nonvac = -(-mu).exp_m1();
            let multi = nonvac - mu * (-mu).exp();
            let multi = if *mu < 1e-3 {
                let m = *mu;
                m * m / 2.0 - m * m * m / 3.0 + m.powi(4) / 8.0
            } else {
                multi
            };
            Ok(multi / nonvac)
        }
        other => {
            let pmf = other.pmf();
            let nonvac: f64 = pmf.iter().skip(1).sum();
            if nonvac <= 0.0 {
                return Err(ModelError::UndefinedContent);
            }
            Ok(pmf.iter().skip(2).sum::<f64>() / nonvac)
        }
    }
}

/// Where the reference multi-photon content of the source is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReferencePlane {
    /// In front of the device.
    #[default]
    Input,
    /// After the device's total transmission `T`.
    Detected,
}

impl std::str::FromStr for ReferencePlane {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "input" => Ok(Self::Input),
            "detected" => Ok(Self::Detected),
            other => Err(format!("unknown reference plane `{other}` (expected input|detected)")),
        }
    }
}

impl std::fmt::Display for ReferencePlane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Input => "input",
            Self::Detected => "detected",
        })
    }
}

/// Source multi-photon content at the chosen reference plane.
pub fn reference_multi_photon_content(
    source: &PhotonSource,
    total_transmission: f64,
    plane: ReferencePlane,
) -> Result<f64> {
    match plane {
        ReferencePlane::Input => source_multi_photon_content(source),
        ReferencePlane::Detected => source_multi_photon_content(&source.thinned(total_transmission)),
    }
}

/// Mean photon number from the probability of a non-vacuum detection,
/// `mu = -ln(1 - p) / T`.
pub fn infer_mu(p_nonvacuum: f64, total_transmission: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_nonvacuum) {
        return Err(ModelError::InvalidParameter {
            name: "p_nonvacuum",
            value: p_nonvacuum,
            reason: "must lie in [0, 1)",
        });
    }
    if p_nonvacuum == 1.0 {
        return Err(ModelError::InfiniteMean);
    }
    if total_transmission <= 0.0 {
        return Err(ModelError::DegenerateDevice);
    }
    Ok(-(-p_nonvacuum).ln_1p() / total_transmission)
}
