//! Pulse-by-pulse Monte Carlo of the physical loop detector.
//!
//! Photons are routed through the coupler and loop one pass at a time, the
//! detector registers at most one click per arrival and is blind for its dead
//! time afterwards, dark counts are injected per time bin, and every real
//! detection may be followed by one afterpulse.
//!
//! Each pulse draws from two named random streams keyed by `(seed, trial)`:
//! one for photon generation and routing, one for detector noise. Results do
//! not depend on how trials are scheduled across threads, and a run with
//! noise disabled sees exactly the same photons as the noisy run.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, ModelError, Result};
use crate::model::DeviceParams;
use crate::stats::{ClickDistribution, PhotonSource};

/// Trials handled by one work unit. Fixed so that the split does not depend
/// on the worker count.
const CHUNK: u64 = 8192;

/// Round trips after which a photon still circulating is dropped.
const MAX_PASSES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_trials: u64,
    pub n_bins: usize,
    /// Arrival time of channel 1 after the trigger.
    pub first_peak_ns: f64,
    /// Channels counted when classifying clicks.
    pub n_channels: usize,
    /// Worker threads; 0 uses the global pool.
    #[serde(skip)]
    pub workers: usize,
    /// Let afterpulses trigger further afterpulses.
    pub afterpulse_chaining: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_trials: 100_000,
            n_bins: 1024,
            first_peak_ns: 22.5,
            n_channels: 15,
            workers: 0,
            afterpulse_chaining: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(ModelError::InsufficientData("n_trials must be at least 1".into()));
        }
        if self.n_bins == 0 || self.n_channels == 0 {
            return Err(ModelError::InsufficientData(
                "n_bins and n_channels must be at least 1".into(),
            ));
        }
        if !(self.first_peak_ns.is_finite() && self.first_peak_ns >= 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "first_peak_ns",
                value: self.first_peak_ns,
                reason: "must be non-negative",
            });
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn named_key(seed: u64, name: &str) -> [u8; 32] {
    let mut h = seed;
    for b in name.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        h = splitmix64(h.wrapping_add(i as u64));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    key
}

/// Random streams for one pulse.
pub struct PulseStreams {
    pub photons: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl PulseStreams {
    pub fn for_trial(seed: u64, trial: u64) -> Self {
        let mut photons = ChaCha8Rng::from_seed(named_key(seed, "photons"));
        photons.set_stream(trial);
        let mut noise = ChaCha8Rng::from_seed(named_key(seed, "noise"));
        noise.set_stream(trial);
        Self { photons, noise }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClickOrigin {
    Signal,
    Dark,
    Afterpulse,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseOutcome {
    pub click_times_ns: Vec<f64>,
    /// Channel of each click; 0 marks dark counts and afterpulses.
    pub click_channels: Vec<usize>,
    pub click_origins: Vec<ClickOrigin>,
    pub n_photons_generated: usize,
}

struct Event {
    time: f64,
    channel: usize,
    origin: ClickOrigin,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.channel.cmp(&self.channel))
    }
}

/// Channel (1-based) in which one photon is detected, or `None` if lost.
fn route_photon<R: Rng>(params: &DeviceParams, rng: &mut R) -> Option<usize> {
    let p = params.coupler.ports();
    if !rng.random_bool(params.t0) {
        return None;
    }
    // first coupler pass, from port 1
    let u: f64 = rng.random();
    let channel = if u < params.theta * p.t13 {
        1
    } else if u < params.theta * (p.t13 + p.t14) {
        loop_passes(params, rng)?
    } else {
        return None;
    };
    rng.random_bool(params.eta).then_some(channel)
}

/// Follows a photon inside the loop; returns the channel it exits to.
fn loop_passes<R: Rng>(params: &DeviceParams, rng: &mut R) -> Option<usize> {
    let p = params.coupler.ports();
    for pass in 1..=MAX_PASSES {
        if !rng.random_bool(params.tl) {
            return None;
        }
        // from port 2
        let u: f64 = rng.random();
        if u < params.theta * p.t23 {
            return Some(pass + 1);
        } else if u >= params.theta * (p.t23 + p.t24) {
            return None;
        }
    }
    None
}

/// Simulates one pulse.
pub fn simulate_pulse(
    source: &PhotonSource,
    params: &DeviceParams,
    sim: &SimConfig,
    streams: &mut PulseStreams,
) -> PulseOutcome {
    let n = source.sample(&mut streams.photons);
    let mut arrived: Vec<usize> = (0..n)
        .filter_map(|_| route_photon(params, &mut streams.photons))
        .collect();
    arrived.sort_unstable();
    arrived.dedup();

    let mut queue: BinaryHeap<Event> = arrived
        .into_iter()
        .map(|k| Event {
            time: sim.first_peak_ns + (k - 1) as f64 * params.loop_delay_ns,
            channel: k,
            origin: ClickOrigin::Signal,
        })
        .collect();

    let noise = &mut streams.noise;
    let p_dark = params.dark_prob_per_bin;
    if p_dark > 0.0 {
        let geo = Geometric::new(p_dark).expect("validated probability");
        let mut bin = geo.sample(noise);
        while bin < sim.n_bins as u64 {
            let u: f64 = noise.random();
            queue.push(Event {
                time: (bin as f64 + u) * params.bin_width_ns,
                channel: 0,
                origin: ClickOrigin::Dark,
            });
            bin = bin.saturating_add(1).saturating_add(geo.sample(noise));
        }
    }

    let ap_delay = Exp::new(1.0 / params.afterpulse_decay_ns).expect("validated decay");
    let mut out = PulseOutcome {
        n_photons_generated: n,
        ..Default::default()
    };
    let mut dead_until = f64::NEG_INFINITY;
    while let Some(ev) = queue.pop() {
        if ev.time < dead_until {
            continue;
        }
        dead_until = ev.time + params.dead_time_ns;
        out.click_times_ns.push(ev.time);
        out.click_channels.push(ev.channel);
        out.click_origins.push(ev.origin);

        let may_trigger = ev.origin != ClickOrigin::Afterpulse || sim.afterpulse_chaining;
        if may_trigger && params.afterpulse_prob > 0.0 && noise.random_bool(params.afterpulse_prob) {
            let delay = params.afterpulse_holdoff_ns + ap_delay.sample(noise);
            // an afterpulse inside the parent's dead time is never registered
            if delay >= params.dead_time_ns {
                queue.push(Event {
                    time: ev.time + delay,
                    channel: 0,
                    origin: ClickOrigin::Afterpulse,
                });
            }
        }
    }
    out
}

/// Acceptance windows around each channel peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelWindows {
    pub first_peak_ns: f64,
    pub spacing_ns: f64,
    pub half_width_ns: f64,
    pub n_channels: usize,
}

impl ChannelWindows {
    /// Windows of width `q * loop_delay` centered on the channel peaks.
    pub fn from_params(params: &DeviceParams, sim: &SimConfig) -> Self {
        Self {
            first_peak_ns: sim.first_peak_ns,
            spacing_ns: params.loop_delay_ns,
            half_width_ns: 0.5 * params.duty_factor_q * params.loop_delay_ns,
            n_channels: sim.n_channels,
        }
    }

    pub fn classify(&self, t: f64) -> Option<usize> {
        let idx = ((t - self.first_peak_ns) / self.spacing_ns).round();
        if idx < 0.0 || idx >= self.n_channels as f64 {
            return None;
        }
        let center = self.first_peak_ns + idx * self.spacing_ns;
        ((t - center).abs() <= self.half_width_ns).then_some(idx as usize + 1)
    }

    /// Sorted distinct channels with at least one click in their window.
    pub fn clicked(&self, outcome: &PulseOutcome) -> Vec<usize> {
        let mut ks: Vec<usize> = outcome
            .click_times_ns
            .iter()
            .filter_map(|&t| self.classify(t))
            .collect();
        ks.dedup();
        ks
    }
}

/// Binned click times accumulated over many pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TofHistogram {
    pub bin_width_ns: f64,
    pub n_bins: usize,
    pub counts: Vec<u64>,
    /// Part of `counts` produced by afterpulses.
    pub afterpulse_counts: Vec<u64>,
    /// Part of `counts` produced by dark counts.
    pub dark_counts: Vec<u64>,
    pub n_trials: u64,
    /// Clicks later than the last bin.
    pub overflow: u64,
}

impl TofHistogram {
    pub fn new(bin_width_ns: f64, n_bins: usize) -> Self {
        Self {
            bin_width_ns,
            n_bins,
            counts: vec![0; n_bins],
            afterpulse_counts: vec![0; n_bins],
            dark_counts: vec![0; n_bins],
            n_trials: 0,
            overflow: 0,
        }
    }

    pub fn add(&mut self, outcome: &PulseOutcome) {
        self.n_trials += 1;
        for (&t, &origin) in outcome.click_times_ns.iter().zip(&outcome.click_origins) {
            let bin = (t / self.bin_width_ns).floor();
            if bin < 0.0 || bin >= self.n_bins as f64 {
                self.overflow += 1;
                continue;
            }
            let bin = bin as usize;
            self.counts[bin] += 1;
            match origin {
                ClickOrigin::Afterpulse => self.afterpulse_counts[bin] += 1,
                ClickOrigin::Dark => self.dark_counts[bin] += 1,
                ClickOrigin::Signal => {}
            }
        }
    }

    pub fn merge(&mut self, other: &TofHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.afterpulse_counts.iter_mut().zip(&other.afterpulse_counts) {
            *a += b;
        }
        for (a, b) in self.dark_counts.iter_mut().zip(&other.dark_counts) {
            *a += b;
        }
        self.n_trials += other.n_trials;
        self.overflow += other.overflow;
    }

    pub fn bin_start_ns(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width_ns
    }

    /// Detection probability per pulse in `bin`.
    pub fn probability(&self, bin: usize) -> f64 {
        if self.n_trials == 0 {
            0.0
        } else {
            self.counts[bin] as f64 / self.n_trials as f64
        }
    }

    /// Bins that are local maxima holding at least `min_count` counts.
    pub fn peaks(&self, min_count: u64) -> Vec<usize> {
        (0..self.n_bins)
            .filter(|&i| {
                let c = self.counts[i];
                let left = if i > 0 { self.counts[i - 1] } else { 0 };
                let right = self.counts.get(i + 1).copied().unwrap_or(0);
                c >= min_count && c > left && c >= right
            })
            .collect()
    }

    /// CSV with header
    /// `bin_index,time_ns,count,probability,afterpulse_count,dark_count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_index,time_ns,count,probability,afterpulse_count,dark_count")?;
        for i in 0..self.n_bins {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                i,
                self.bin_start_ns(i),
                self.counts[i],
                self.probability(i),
                self.afterpulse_counts[i],
                self.dark_counts[i]
            )?;
        }
        Ok(())
    }
}

/// Bins the click times of `outcomes`.
pub fn accumulate_histogram<'a, I>(outcomes: I, params: &DeviceParams, sim: &SimConfig) -> TofHistogram
where
    I: IntoIterator<Item = &'a PulseOutcome>,
{
    let mut hist = TofHistogram::new(params.bin_width_ns, sim.n_bins);
    for o in outcomes {
        hist.add(o);
    }
    hist
}

/// Per-pulse counts of distinct clicked channel windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickTally {
    /// Pulses with exactly `m` clicked windows, `m = 0..=N`.
    pub counts: Vec<u64>,
    pub n_trials: u64,
    /// Pulses with clicks in two consecutive channel windows.
    pub consecutive_doubles: u64,
}

impl ClickTally {
    pub fn new(n_channels: usize) -> Self {
        Self {
            counts: vec![0; n_channels + 1],
            n_trials: 0,
            consecutive_doubles: 0,
        }
    }

    pub fn add(&mut self, outcome: &PulseOutcome, windows: &ChannelWindows) {
        let ks = windows.clicked(outcome);
        self.counts[ks.len()] += 1;
        self.n_trials += 1;
        if ks.windows(2).any(|w| w[1] == w[0] + 1) {
            self.consecutive_doubles += 1;
        }
    }

    pub fn merge(&mut self, other: &ClickTally) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_trials += other.n_trials;
        self.consecutive_doubles += other.consecutive_doubles;
    }

    /// Empirical distribution with binomial standard errors.
    pub fn distribution(&self) -> ClickDistribution {
        let n = self.n_trials.max(1) as f64;
        let p: Vec<f64> = self.counts.iter().map(|&c| c as f64 / n).collect();
        let se = p.iter().map(|&q| (q * (1.0 - q) / n).sqrt()).collect();
        ClickDistribution {
            p_click: p,
            std_err: Some(se),
        }
    }
}

/// Empirical click statistics of a set of simulated pulses.
pub fn empirical_click_distribution<'a, I>(outcomes: I, windows: &ChannelWindows) -> Result<ClickDistribution>
where
    I: IntoIterator<Item = &'a PulseOutcome>,
{
    let mut tally = ClickTally::new(windows.n_channels);
    for o in outcomes {
        tally.add(o, windows);
    }
    if tally.n_trials == 0 {
        return Err(ModelError::InsufficientData("no simulated pulses".into()));
    }
    Ok(tally.distribution())
}

/// Upper bounds on false multi-channel detections caused by afterpulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalseDetectionBound {
    /// Bound on the multi-photon content, `p_ap * q`.
    pub cm_bound: f64,
    /// Bound on `p_M`, `p1 * p_ap * q`.
    pub pm_bound: f64,
}

pub fn false_cm_bound(params: &DeviceParams, p1: f64) -> FalseDetectionBound {
    let cm_bound = params.afterpulse_prob * params.duty_factor_q;
    FalseDetectionBound {
        cm_bound,
        pm_bound: p1 * cm_bound,
    }
}

/// Aggregated result of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub histogram: TofHistogram,
    pub tally: ClickTally,
    /// Smallest separation between two clicks of the same pulse.
    pub min_click_separation_ns: f64,
}

impl SimulationRun {
    fn empty(params: &DeviceParams, sim: &SimConfig) -> Self {
        Self {
            histogram: TofHistogram::new(params.bin_width_ns, sim.n_bins),
            tally: ClickTally::new(sim.n_channels),
            min_click_separation_ns: f64::INFINITY,
        }
    }

    fn merge(&mut self, other: &SimulationRun) {
        self.histogram.merge(&other.histogram);
        self.tally.merge(&other.tally);
        self.min_click_separation_ns = self.min_click_separation_ns.min(other.min_click_separation_ns);
    }
}

/// Runs `sim.n_trials` pulses in parallel and aggregates them.
pub fn run_simulation(source: &PhotonSource, params: &DeviceParams, sim: &SimConfig) -> Result<SimulationRun> {
    source.validate()?;
    params.validate()?;
    sim.validate()?;
    check_positive("first channel spacing", params.loop_delay_ns)?;

    let windows = ChannelWindows::from_params(params, sim);
    let n_chunks = sim.n_trials.div_ceil(CHUNK);
    let work = || {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut part = SimulationRun::empty(params, sim);
                let end = ((c + 1) * CHUNK).min(sim.n_trials);
                for trial in c * CHUNK..end {
                    let mut streams = PulseStreams::for_trial(sim.seed, trial);
                    let o = simulate_pulse(source, params, sim, &mut streams);
                    part.histogram.add(&o);
                    part.tally.add(&o, &windows);
                    for w in o.click_times_ns.windows(2) {
                        part.min_click_separation_ns = part.min_click_separation_ns.min(w[1] - w[0]);
                    }
                }
                part
            })
            .collect::<Vec<_>>()
    };
    let parts = if sim.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(sim.workers)
            .build()
            .map_err(|e| ModelError::ModelDomain(format!("cannot start worker pool: {e}")))?
            .install(work)
    } else {
        work()
    };
    let mut run = SimulationRun::empty(params, sim);
    for p in &parts {
        run.merge(p);
    }
    Ok(run)
}
