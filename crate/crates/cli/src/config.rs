//! Run configuration files.
//!
//! The format is TOML restricted to the sections below; every key is
//! optional and falls back to the laboratory device profile. Unknown
//! sections or keys are rejected.
//!
//! ```toml
//! [device]        # t0 theta tl eta, r or t13 t14 t23 t24, noise and timing
//! [source]        # kind = "poissonian" | "fock" | "custom"; mu, n, pmf
//! [simulation]    # seed n_trials n_bins first_peak_ns afterpulse_chaining workers
//! [output]        # format = "csv" | "json"; path; reference_plane
//! [scan]          # r grid, entropy search and mean-photon-number grid
//! [calibration]   # input CSV, t_over_eta, ratio_stat, ratio window
//! [postselect]    # rule, pair_coupling, herald = "analytic" | "monte-carlo"
//! ```

use std::path::{Path, PathBuf};

use loopdet::entropy::EntropyConvention;
use loopdet::mc::SimConfig;
use loopdet::model::{CouplerSetting, DeviceParams};
use loopdet::postselect::AcceptRule;
use loopdet::{PhotonSource, ReferencePlane};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub device: DeviceSection,
    pub source: SourceSection,
    pub simulation: SimulationSection,
    pub output: OutputSection,
    pub scan: ScanSection,
    pub calibration: CalibrationSection,
    pub postselect: PostselectSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSection {
    pub t0: Option<f64>,
    pub theta: Option<f64>,
    pub tl: Option<f64>,
    pub eta: Option<f64>,
    pub r: Option<f64>,
    pub t13: Option<f64>,
    pub t14: Option<f64>,
    pub t23: Option<f64>,
    pub t24: Option<f64>,
    pub dark_prob_per_bin: Option<f64>,
    pub afterpulse_prob: Option<f64>,
    pub afterpulse_decay_ns: Option<f64>,
    pub afterpulse_holdoff_ns: Option<f64>,
    pub dead_time_ns: Option<f64>,
    pub loop_delay_ns: Option<f64>,
    pub bin_width_ns: Option<f64>,
    pub duty_factor_q: Option<f64>,
    /// Channels counted by the detector.
    pub n_channels: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    Poissonian,
    Fock,
    Custom,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSection {
    pub kind: SourceKind,
    pub mu: Option<f64>,
    pub n: Option<usize>,
    pub pmf: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub seed: Option<u64>,
    pub n_trials: Option<u64>,
    pub n_bins: Option<usize>,
    pub first_peak_ns: Option<f64>,
    pub afterpulse_chaining: Option<bool>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub format: Option<Format>,
    pub path: Option<PathBuf>,
    pub reference_plane: Option<ReferencePlane>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Log,
    Linear,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    /// Emit the division-ratio sweep from `channels`.
    pub sweep: Option<bool>,
    pub r_step: Option<f64>,
    pub grid_step: Option<f64>,
    pub tolerance: Option<f64>,
    pub entropy_channels: Option<usize>,
    pub convention: Option<EntropyConvention>,
    /// Explicit mean photon numbers; overrides the generated grid.
    pub mu: Option<Vec<f64>>,
    pub mu_min: Option<f64>,
    pub mu_max: Option<f64>,
    pub mu_points: Option<usize>,
    pub mu_spacing: Option<Spacing>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    /// CSV with columns `k,H_k,sigma_k`, relative to the config file.
    pub input: Option<PathBuf>,
    pub theta: Option<f64>,
    pub t_over_eta: Option<f64>,
    pub t_over_eta_sigma: Option<f64>,
    pub ratio_stat: Option<f64>,
    pub ratio_k_min: Option<usize>,
    pub ratio_k_max: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum HeraldKind {
    #[default]
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostselectSection {
    pub rule: Option<AcceptRule>,
    pub pair_coupling: Option<f64>,
    pub herald: Option<HeraldKind>,
}

fn unit(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} = {v} must lie in [0, 1]")))
    }
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} = {v} must be positive")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let (Some(input), Some(dir)) = (cfg.calibration.input.as_mut(), path.parent()) {
            if input.is_relative() {
                *input = dir.join(&*input);
            }
        }
        Ok(cfg)
    }

    /// Range checks every value present in the file.
    fn check(&self) -> CliResult<()> {
        self.device_params()?;
        self.source()?;
        if let Some(n) = self.device.n_channels {
            if n == 0 {
                return Err(CliError::Config("device.n_channels must be at least 1".into()));
            }
        }
        let s = &self.simulation;
        if s.n_trials == Some(0) {
            return Err(CliError::Config("simulation.n_trials must be at least 1".into()));
        }
        if s.n_bins == Some(0) {
            return Err(CliError::Config("simulation.n_bins must be at least 1".into()));
        }
        if let Some(v) = s.first_peak_ns {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Config(format!(
                    "simulation.first_peak_ns = {v} must be non-negative"
                )));
            }
        }
        let sc = &self.scan;
        if let Some(v) = sc.r_step {
            positive("scan.r_step", v)?;
            unit("scan.r_step", v)?;
        }
        if let Some(v) = sc.grid_step {
            positive("scan.grid_step", v)?;
            unit("scan.grid_step", v)?;
        }
        if let Some(v) = sc.tolerance {
            positive("scan.tolerance", v)?;
        }
        if sc.entropy_channels == Some(0) {
            return Err(CliError::Config("scan.entropy_channels must be at least 1".into()));
        }
        for &m in sc.mu.iter().flatten() {
            positive("scan.mu", m)?;
        }
        if let Some(v) = sc.mu_min {
            positive("scan.mu_min", v)?;
        }
        if let Some(v) = sc.mu_max {
            positive("scan.mu_max", v)?;
        }
        let c = &self.calibration;
        if let Some(v) = c.theta {
            positive("calibration.theta", v)?;
            unit("calibration.theta", v)?;
        }
        if let Some(v) = c.t_over_eta {
            positive("calibration.t_over_eta", v)?;
        }
        if let Some(v) = c.t_over_eta_sigma {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Config(format!(
                    "calibration.t_over_eta_sigma = {v} must be non-negative"
                )));
            }
        }
        if let Some(v) = self.postselect.pair_coupling {
            unit("postselect.pair_coupling", v)?;
        }
        Ok(())
    }

    pub fn device_params(&self) -> CliResult<DeviceParams> {
        let d = &self.device;
        let mut p = DeviceParams::lab_device();
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.t0, d.t0);
        set(&mut p.theta, d.theta);
        set(&mut p.tl, d.tl);
        set(&mut p.eta, d.eta);
        set(&mut p.dark_prob_per_bin, d.dark_prob_per_bin);
        set(&mut p.afterpulse_prob, d.afterpulse_prob);
        set(&mut p.afterpulse_decay_ns, d.afterpulse_decay_ns);
        set(&mut p.afterpulse_holdoff_ns, d.afterpulse_holdoff_ns);
        set(&mut p.dead_time_ns, d.dead_time_ns);
        set(&mut p.loop_delay_ns, d.loop_delay_ns);
        set(&mut p.bin_width_ns, d.bin_width_ns);
        set(&mut p.duty_factor_q, d.duty_factor_q);

        let ports = [d.t13, d.t14, d.t23, d.t24];
        match (d.r, ports) {
            (Some(_), p4) if p4.iter().any(Option::is_some) => {
                return Err(CliError::Config(
                    "device.r cannot be combined with t13/t14/t23/t24".into(),
                ));
            }
            (Some(r), _) => p.coupler = CouplerSetting::Ideal { r },
            (None, [Some(t13), Some(t14), Some(t23), Some(t24)]) => {
                p.coupler = CouplerSetting::Full { t13, t14, t23, t24 };
            }
            (None, p4) if p4.iter().any(Option::is_some) => {
                return Err(CliError::Config(
                    "a full coupler needs all of t13, t14, t23 and t24".into(),
                ));
            }
            _ => {}
        }
        p.validate().map_err(|e| CliError::Config(format!("[device] {e}")))?;
        Ok(p)
    }

    pub fn n_channels(&self) -> usize {
        self.device.n_channels.unwrap_or(15)
    }

    pub fn source(&self) -> CliResult<PhotonSource> {
        let s = &self.source;
        let src = match s.kind {
            SourceKind::Poissonian => PhotonSource::Poissonian {
                mu: s.mu.unwrap_or(4.26),
            },
            SourceKind::Fock => PhotonSource::Fock {
                n: s.n
                    .ok_or_else(|| CliError::Config("source.n is required for a Fock source".into()))?,
            },
            SourceKind::Custom => PhotonSource::Custom {
                pmf: s
                    .pmf
                    .clone()
                    .ok_or_else(|| CliError::Config("source.pmf is required for a custom source".into()))?,
            },
        };
        src.validate().map_err(|e| CliError::Config(format!("[source] {e}")))?;
        Ok(src)
    }

    /// Simulation settings; fails when no seed is given anywhere.
    pub fn sim_config(&self, seed: Option<u64>, trials: Option<u64>, workers: Option<usize>) -> CliResult<SimConfig> {
        let s = &self.simulation;
        let seed = seed.or(s.seed).ok_or_else(|| {
            CliError::Config("a seed is mandatory for Monte Carlo commands (simulation.seed or --seed)".into())
        })?;
        let base = SimConfig::default();
        let sim = SimConfig {
            seed,
            n_trials: trials.or(s.n_trials).unwrap_or(base.n_trials),
            n_bins: s.n_bins.unwrap_or(base.n_bins),
            first_peak_ns: s.first_peak_ns.unwrap_or(base.first_peak_ns),
            n_channels: self.n_channels(),
            workers: workers.or(s.workers).unwrap_or(0),
            afterpulse_chaining: s.afterpulse_chaining.unwrap_or(false),
        };
        if sim.n_trials == 0 {
            return Err(CliError::Config("n_trials must be at least 1".into()));
        }
        Ok(sim)
    }

    /// Mean photon numbers from an explicit list or a generated grid.
    pub fn mu_grid(&self) -> CliResult<Vec<f64>> {
        let sc = &self.scan;
        if let Some(list) = &sc.mu {
            return Ok(list.clone());
        }
        let lo = sc.mu_min.unwrap_or(0.01);
        let hi = sc.mu_max.unwrap_or(10.0);
        let n = sc.mu_points.unwrap_or(31);
        if n == 0 {
            return Ok(Vec::new());
        }
        if hi < lo {
            return Err(CliError::Config(format!(
                "scan.mu_max = {hi} is below scan.mu_min = {lo}"
            )));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        let step = (n - 1) as f64;
        Ok(match sc.mu_spacing.unwrap_or_default() {
            Spacing::Linear => (0..n).map(|i| lo + (hi - lo) * i as f64 / step).collect(),
            Spacing::Log => {
                let (a, b) = (lo.ln(), hi.ln());
                (0..n).map(|i| (a + (b - a) * i as f64 / step).exp()).collect()
            }
        })
    }
}
