//! One function per subcommand; each returns the report to emit.

use std::path::Path;

use loopdet::calibration::{calibrate_from_channels, infer_t0, infer_tl, CalibrationConfig, ChannelMeasurement};
use loopdet::entropy::{optimize_ratio, EntropyConvention, OptimizeConfig, ENTROPY_CHANNELS};
use loopdet::mc::run_simulation;
use loopdet::model::{channel_transmissions, normalized_channels, total_transmission};
use loopdet::postselect::{wm_curve, AcceptRule, HeraldModel, PostselectConfig};
use loopdet::stats::{multi_photon_content, poisson_click_distribution, reference_multi_photon_content};
use loopdet::{ModelError, PhotonSource, ReferencePlane};
use serde::Deserialize;

use crate::config::{HeraldKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Report};

/// Channels shown individually in the division-ratio sweep.
const SWEEP_SHOWN: usize = 6;

pub struct ChannelsArgs {
    pub r: Option<f64>,
    pub sweep: bool,
    pub r_step: Option<f64>,
    pub channels: Option<usize>,
}

pub fn channels(cfg: &RunConfig, args: &ChannelsArgs) -> CliResult<Report> {
    let mut params = cfg.device_params()?;
    if let Some(r) = args.r {
        if !(0.0..=1.0).contains(&r) {
            return Err(CliError::Usage(format!("--r {r} must lie in [0, 1]")));
        }
        params = params.with_ratio(r);
    }
    let n = args.channels.unwrap_or_else(|| cfg.n_channels());
    if n == 0 {
        return Err(CliError::Usage("--channels must be at least 1".into()));
    }

    if args.sweep || cfg.scan.sweep.unwrap_or(false) {
        let step = args.r_step.or(cfg.scan.r_step).unwrap_or(0.01);
        if !(step > 0.0 && step <= 1.0) {
            return Err(CliError::Usage(format!("r step {step} must lie in (0, 1]")));
        }
        let points = (1.0 / step).round() as usize;
        let mut cols = vec!["r".to_string()];
        cols.extend((1..=SWEEP_SHOWN).map(|k| format!("H_{k}")));
        cols.push("H_rest".into());
        let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        let mut rep = Report::new("channels", &col_refs);
        for i in 0..=points {
            let r = i as f64 / points as f64;
            let prof = channel_transmissions(&params.with_ratio(r), SWEEP_SHOWN)?;
            let shares = normalized_channels(&prof)?;
            let mut row: Vec<Cell> = vec![r.into()];
            row.extend(shares.shares.iter().map(|&h| Cell::from(h)));
            row.push(shares.remainder.into());
            rep.push(row);
        }
        rep.meta("device", params);
        rep.meta("r_step", 1.0 / points as f64);
        return Ok(rep);
    }

    let prof = channel_transmissions(&params, n)?;
    let shares = normalized_channels(&prof)?;
    let mut rep = Report::new("channels", &["k", "h_k", "H_k"]);
    for (k, (&h, &s)) in prof.h.iter().zip(&shares.shares).enumerate() {
        rep.push(vec![(k + 1).into(), h.into(), s.into()]);
    }
    rep.push(vec!["rest".into(), prof.remainder.into(), shares.remainder.into()]);
    rep.meta("device", params);
    rep.meta("n_channels", n);
    rep.meta("total_transmission", prof.total());
    rep.meta("loss", prof.loss());
    Ok(rep)
}

pub struct OptimizeArgs {
    pub grid_step: Option<f64>,
    pub tolerance: Option<f64>,
    pub convention: Option<EntropyConvention>,
}

pub fn optimize(cfg: &RunConfig, args: &OptimizeArgs) -> CliResult<Report> {
    let params = cfg.device_params()?;
    let base = OptimizeConfig::default();
    let opt = OptimizeConfig {
        grid_step: args.grid_step.or(cfg.scan.grid_step).unwrap_or(base.grid_step),
        tolerance: args.tolerance.or(cfg.scan.tolerance).unwrap_or(base.tolerance),
        n_channels: cfg.scan.entropy_channels.unwrap_or(ENTROPY_CHANNELS),
        convention: args.convention.or(cfg.scan.convention).unwrap_or_default(),
    };
    let scan = optimize_ratio(&params, &opt)?;
    eprintln!(
        "optimal division ratio r* = {:.5}, entropy E* = {:.6} nats ({} grid points)",
        scan.r_star,
        scan.e_star,
        scan.r_grid.len()
    );
    let mut rep = Report::new("optimize", &["r", "entropy"]);
    for (&r, &e) in scan.r_grid.iter().zip(&scan.entropy) {
        rep.push(vec![r.into(), e.into()]);
    }
    rep.meta("device", params);
    rep.meta("search", opt);
    rep.meta("r_star", scan.r_star);
    rep.meta("e_star", scan.e_star);
    Ok(rep)
}

fn require_grid(mu: Vec<f64>) -> CliResult<Vec<f64>> {
    if mu.is_empty() {
        return Err(CliError::Usage("the mean-photon-number grid is empty".into()));
    }
    if let Some(bad) = mu.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(CliError::Usage(format!("mean photon number {bad} must be positive")));
    }
    Ok(mu)
}

pub fn cm_curve(cfg: &RunConfig, mu: Option<Vec<f64>>, plane: ReferencePlane) -> CliResult<Report> {
    let params = cfg.device_params()?;
    let grid = require_grid(match mu {
        Some(m) => m,
        None => cfg.mu_grid()?,
    })?;
    let n = cfg.n_channels();
    let prof = channel_transmissions(&params, n)?;
    let t = total_transmission(&params)?;
    let shares = normalized_channels(&prof)?;
    let sum_sq: f64 = shares.shares.iter().map(|h| h * h).sum();

    let mut rep = Report::new("cm-curve", &["mu", "cm_device", "cm_source", "ratio"]);
    for &m in &grid {
        let device = multi_photon_content(&poisson_click_distribution(m, &prof)?)?;
        let source = reference_multi_photon_content(&PhotonSource::Poissonian { mu: m }, t, plane)?;
        rep.push(vec![m.into(), device.into(), source.into(), (device / source).into()]);
    }
    let limit = match plane {
        ReferencePlane::Input => t * (1.0 - sum_sq),
        ReferencePlane::Detected => 1.0 - sum_sq,
    };
    rep.meta("device", params);
    rep.meta("n_channels", n);
    rep.meta("reference_plane", plane);
    rep.meta("total_transmission", t);
    rep.meta("small_mu_ratio", limit);
    Ok(rep)
}

pub fn simulate_tof(
    cfg: &RunConfig,
    seed: Option<u64>,
    trials: Option<u64>,
    workers: Option<usize>,
) -> CliResult<Report> {
    let params = cfg.device_params()?;
    let source = cfg.source()?;
    let sim = cfg.sim_config(seed, trials, workers)?;
    let run = run_simulation(&source, &params, &sim)?;
    let h = &run.histogram;
    let mut rep = Report::new(
        "simulate-tof",
        &[
            "bin_index",
            "time_ns",
            "count",
            "probability",
            "afterpulse_count",
            "dark_count",
        ],
    );
    for i in 0..h.n_bins {
        rep.push(vec![
            i.into(),
            h.bin_start_ns(i).into(),
            h.counts[i].into(),
            h.probability(i).into(),
            h.afterpulse_counts[i].into(),
            h.dark_counts[i].into(),
        ]);
    }
    let dist = run.tally.distribution();
    rep.meta("seed", sim.seed);
    rep.meta("n_trials", sim.n_trials);
    rep.meta("simulation", &sim);
    rep.meta("device", params);
    rep.meta("source", &source);
    rep.meta("overflow", h.overflow);
    rep.meta("click_counts", &run.tally.counts);
    rep.meta("consecutive_doubles", run.tally.consecutive_doubles);
    rep.meta("p_click", &dist.p_click);
    rep.meta("cm", multi_photon_content(&dist).ok());
    rep.meta(
        "min_click_separation_ns",
        run.min_click_separation_ns
            .is_finite()
            .then_some(run.min_click_separation_ns),
    );
    Ok(rep)
}

pub struct CalibrateArgs<'a> {
    pub input: Option<&'a Path>,
    pub ratio_stat: Option<f64>,
    pub t_over_eta: Option<f64>,
    pub t_over_eta_sigma: Option<f64>,
    pub theta: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct MeasurementRow {
    k: usize,
    #[serde(rename = "H_k")]
    share: f64,
    #[serde(rename = "sigma_k")]
    sigma: f64,
}

/// Reads `k,H_k,sigma_k` rows.
pub fn read_measurements(path: &Path) -> CliResult<Vec<ChannelMeasurement>> {
    let file = std::fs::File::open(path)?;
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    rd.deserialize::<MeasurementRow>()
        .map(|row| {
            let row = row.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok(ChannelMeasurement {
                k: row.k,
                share: row.share,
                sigma: row.sigma,
            })
        })
        .collect()
}

pub fn calibrate(cfg: &RunConfig, args: &CalibrateArgs) -> CliResult<Report> {
    let c = &cfg.calibration;
    let theta = match args.theta.or(c.theta) {
        Some(v) => v,
        None => cfg.device_params()?.theta,
    };
    let te = args
        .t_over_eta
        .or(c.t_over_eta)
        .ok_or_else(|| CliError::Usage("calibration needs T/eta (--t-over-eta or calibration.t_over_eta)".into()))?;
    let te_sigma = args.t_over_eta_sigma.or(c.t_over_eta_sigma).unwrap_or(0.0);
    let input = args.input.or(c.input.as_deref());
    let ratio_stat = args.ratio_stat.or(c.ratio_stat);

    let mut rep = Report::new("calibrate", &["quantity", "value", "sigma"]);
    rep.meta("theta", theta);
    match (input, ratio_stat) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "give either channel data or a ratio statistic, not both".into(),
        )),
        (None, None) => Err(CliError::Usage(
            "calibration needs channel data (--input) or a ratio statistic (--ratio-stat)".into(),
        )),
        (None, Some(s)) => {
            let tl = infer_tl(s, theta)?;
            let t0 = infer_t0(te, tl, theta)?;
            rep.push(vec!["ratio_stat".into(), s.into(), Cell::Empty]);
            rep.push(vec!["t_over_eta".into(), te.into(), te_sigma.into()]);
            rep.push(vec!["tl_hat".into(), tl.into(), Cell::Empty]);
            rep.push(vec!["t0_hat".into(), t0.into(), Cell::Empty]);
            Ok(rep)
        }
        (Some(path), None) => {
            let data = read_measurements(path)?;
            let ks = CalibrationConfig::default().ratio_ks;
            let lo = c.ratio_k_min.unwrap_or(*ks.start());
            let hi = c.ratio_k_max.unwrap_or(*ks.end());
            if lo < 1 || hi < lo {
                return Err(CliError::Config(format!(
                    "calibration ratio window {lo}..={hi} is empty"
                )));
            }
            let res = calibrate_from_channels(&data, (te, te_sigma), theta, &CalibrationConfig { ratio_ks: lo..=hi })?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            rep.push(vec!["ratio_stat".into(), res.ratio_stat.into(), res.ratio_sigma.into()]);
            rep.push(vec!["t_over_eta".into(), res.t_over_eta.into(), te_sigma.into()]);
            rep.push(vec!["tl_hat".into(), res.tl_hat.into(), res.tl_sigma.into()]);
            rep.push(vec!["t0_hat".into(), res.t0_hat.into(), res.t0_sigma.into()]);
            if let Some(ex) = res.exact {
                rep.push(vec!["tl_exact".into(), ex.tl.into(), Cell::Empty]);
                rep.push(vec!["t0_exact".into(), ex.t0.into(), Cell::Empty]);
                rep.push(vec!["r_exact".into(), ex.r.into(), Cell::Empty]);
                rep.push(vec!["geometric_ratio".into(), ex.geometric_ratio.into(), Cell::Empty]);
            }
            for &(k, v) in &res.residuals {
                rep.push(vec![Cell::Text(format!("residual_{k}")), v.into(), Cell::Empty]);
            }
            rep.meta("input", path.display().to_string());
            rep.meta("ratio_window", [lo, hi]);
            rep.meta("warnings", &res.warnings);
            Ok(rep)
        }
    }
}

pub struct PostselectArgs {
    pub mu: Option<Vec<f64>>,
    pub rule: Option<AcceptRule>,
    pub pair_coupling: Option<f64>,
    pub herald: Option<HeraldKind>,
}

pub fn postselect(
    cfg: &RunConfig,
    args: &PostselectArgs,
    seed: Option<u64>,
    trials: Option<u64>,
    workers: Option<usize>,
) -> CliResult<Report> {
    let params = cfg.device_params()?;
    let grid = require_grid(match args.mu.clone() {
        Some(m) => m,
        None => cfg.mu_grid()?,
    })?;
    let ps = PostselectConfig {
        rule: args.rule.or(cfg.postselect.rule).unwrap_or_default(),
        pair_coupling: args.pair_coupling.or(cfg.postselect.pair_coupling).unwrap_or(1.0),
    };
    let herald = args.herald.or(cfg.postselect.herald).unwrap_or_default();
    let model = match herald {
        HeraldKind::Analytic => HeraldModel::Analytic,
        HeraldKind::MonteCarlo => HeraldModel::MonteCarlo(cfg.sim_config(seed, trials, workers)?),
    };
    let n = cfg.n_channels();
    let points = wm_curve(&grid, &params, n, &ps, &model)?;

    let mut rep = Report::new("postselect", &["mu", "cm_in", "cm_out", "w_M", "herald_rate"]);
    for p in &points {
        match &p.result {
            Ok(r) => rep.push(vec![
                p.mu.into(),
                r.cm_in.into(),
                r.cm_out.into(),
                r.w_m.into(),
                r.herald_rate.into(),
            ]),
            Err(ModelError::NoAcceptance) => {
                eprintln!("warning: no accepted herald events at mu = {}", p.mu);
                rep.push(vec![p.mu.into(), Cell::Empty, Cell::Empty, Cell::Empty, 0.0.into()]);
            }
            Err(e) => return Err(e.clone().into()),
        }
    }
    rep.meta("device", params);
    rep.meta("n_channels", n);
    rep.meta("postselect", &ps);
    match &model {
        HeraldModel::Analytic => rep.meta("herald", "analytic"),
        HeraldModel::MonteCarlo(sim) => {
            rep.meta("herald", "monte-carlo");
            rep.meta("seed", sim.seed);
            rep.meta("n_trials", sim.n_trials);
            rep.meta("simulation", sim);
        }
    }
    Ok(rep)
}
