//! Configuration files, parameter sweeps and CSV output.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SimConfig;
use crate::protocols::Protocol;
use crate::sim::{build_network, collect, run, MetricsReport};

/// Calls `f(key, value)` for every `key = value` line; `#` starts a comment.
fn for_each_entry(
    text: &str,
    mut f: impl FnMut(&str, &str) -> std::result::Result<(), String>,
) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        f(key.trim(), value.trim())
            .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
    }
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment. Unknown keys and
/// malformed values are errors. Unset keys keep their defaults.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let mut config = SimConfig::default();
    for_each_entry(text, |k, v| set_field(&mut config, k, v))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &std::path::Path) -> Result<SimConfig> {
    parse_config(&read(path)?)
}

fn read(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Experiment settings a configuration file may carry next to the
/// simulation parameters. `None` means "not given".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub sweep: Option<SweepParam>,
    pub values: Option<Vec<f64>>,
    pub protocols: Option<Vec<Protocol>>,
    pub seeds: Option<usize>,
}

/// Keys accepted by [`parse_experiment`] in addition to [`CONFIG_KEYS`].
pub const RUN_KEYS: &[&str] = &["sweep", "sweep_values", "protocols", "seeds"];

/// Like [`parse_config`], also accepting the [`RUN_KEYS`].
pub fn parse_experiment(text: &str) -> Result<(SimConfig, RunOptions)> {
    let mut config = SimConfig::default();
    let mut opts = RunOptions::default();
    for_each_entry(text, |k, v| {
        let text_err = |e: Error| match e {
            Error::InvalidConfig(m) | Error::InvalidSweep(m) => m,
            other => other.to_string(),
        };
        match k {
            "sweep" => opts.sweep = Some(v.parse().map_err(text_err)?),
            "sweep_values" => opts.values = Some(parse_values(v).map_err(text_err)?),
            "protocols" => opts.protocols = Some(parse_protocols(v).map_err(text_err)?),
            "seeds" => opts.seeds = Some(parse(k, v)?),
            _ => set_field(&mut config, k, v)?,
        }
        Ok(())
    })?;
    config.validate()?;
    Ok((config, opts))
}

pub fn load_experiment(path: &std::path::Path) -> Result<(SimConfig, RunOptions)> {
    parse_experiment(&read(path)?)
}

/// Comma-separated sweep values.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::InvalidSweep(format!("bad value `{}`", v.trim())))
        })
        .collect()
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

/// Invokes `$m!` with every configuration field name, in file order.
macro_rules! config_fields {
    ($m:ident) => {
        $m!(
            num_sus,
            num_pus,
            num_channels,
            num_flows,
            area_side,
            su_range,
            pu_range,
            bandwidth,
            packet_size,
            pu_activity,
            beta,
            tau,
            switch_cost_c,
            hello_period,
            reselect_period,
            sim_duration,
            rng_seed,
            data_rate,
            max_power,
            path_loss_exponent,
            snr_ref_distance,
            snr_ref_db,
            max_group_size,
            max_helpers,
            channels_per_node,
            interference_factor,
            carrier_sense_factor,
            sense_delay,
            queue_capacity,
            max_retries,
            backoff_min,
            backoff_max,
            ttl,
            pu_mean_on,
            pu_jitter,
            flow_start_window,
        )
    };
}

/// Every key accepted by [`set_field`] and [`get_field`], in file order.
pub const CONFIG_KEYS: &[&str] = {
    macro_rules! names {
        ($($name:ident),* $(,)?) => {
            &[$(stringify!($name)),*]
        };
    }
    config_fields!(names)
};

/// Sets one configuration field by name.
pub fn set_field(c: &mut SimConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    macro_rules! set {
        ($($name:ident),* $(,)?) => {
            match key {
                $(stringify!($name) => c.$name = parse(key, value)?,)*
                _ => return Err(format!("unknown key `{key}`")),
            }
        };
    }
    config_fields!(set);
    Ok(())
}

/// One configuration field formatted so that [`set_field`] reads it back
/// exactly; `None` for unknown keys.
pub fn get_field(c: &SimConfig, key: &str) -> Option<String> {
    macro_rules! get {
        ($($name:ident),* $(,)?) => {
            match key {
                $(stringify!($name) => Some(c.$name.to_string()),)*
                _ => None,
            }
        };
    }
    config_fields!(get)
}

/// The whole configuration in the `key = value` file format.
pub fn format_config(c: &SimConfig) -> String {
    CONFIG_KEYS
        .iter()
        .map(|k| format!("{k} = {}\n", get_field(c, k).expect("listed key")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    NumSus,
    NumPus,
    PuActivity,
    NumChannels,
    NumFlows,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [
        SweepParam::NumSus,
        SweepParam::NumPus,
        SweepParam::PuActivity,
        SweepParam::NumChannels,
        SweepParam::NumFlows,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::NumSus => "num_sus",
            SweepParam::NumPus => "num_pus",
            SweepParam::PuActivity => "pu_activity",
            SweepParam::NumChannels => "num_channels",
            SweepParam::NumFlows => "num_flows",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::NumSus => vec![10.0, 15.0, 20.0, 25.0, 30.0],
            SweepParam::NumPus => vec![0.0, 4.0, 8.0, 12.0, 16.0],
            SweepParam::PuActivity => vec![0.2, 0.4, 0.6, 0.8],
            SweepParam::NumChannels => vec![3.0, 5.0, 7.0, 9.0],
            SweepParam::NumFlows => vec![1.0, 4.0, 8.0, 12.0, 16.0],
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &SimConfig, value: f64) -> Result<SimConfig> {
        let mut c = base.clone();
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidSweep(format!(
                    "{} needs a non-negative integer, got {value}",
                    self.name()
                )))
            }
        };
        match self {
            SweepParam::NumSus => c.num_sus = count()?,
            SweepParam::NumPus => c.num_pus = count()?,
            SweepParam::PuActivity => c.pu_activity = value,
            SweepParam::NumChannels => c.num_channels = count()?,
            SweepParam::NumFlows => c.num_flows = count()?,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidSweep(format!("unknown sweep parameter `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// `None` runs the base configuration only.
    pub param: Option<SweepParam>,
    pub values: Vec<f64>,
    pub protocols: Vec<Protocol>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Default values for `param`, and `num_seeds` consecutive seeds starting at
    /// the base configuration's seed.
    pub fn new(base: &SimConfig, param: Option<SweepParam>, protocols: Vec<Protocol>, num_seeds: usize) -> Self {
        Self {
            param,
            values: param.map(SweepParam::default_values).unwrap_or_default(),
            protocols,
            seeds: (0..num_seeds as u64).map(|i| base.rng_seed + i).collect(),
        }
    }
}

/// Aggregate over seeds for one protocol and sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub protocol: Protocol,
    pub sweep_param: String,
    pub sweep_value: Option<f64>,
    pub seed_count: usize,
    pub goodput_bps_mean: f64,
    pub goodput_bps_std: f64,
    pub delay_s_mean: f64,
    pub delay_s_std: f64,
    pub pdr_mean: f64,
    pub pdr_std: f64,
    pub group_size_mean: f64,
    pub overhead_pkts_mean: f64,
    /// Per-seed reports, in seed order.
    pub runs: Vec<MetricsReport>,
}

pub const CSV_HEADER: &str = "protocol,sweep_param,sweep_value,seed_count,goodput_bps_mean,goodput_bps_std,delay_s_mean,delay_s_std,pdr_mean,pdr_std,group_size_mean,overhead_pkts_mean";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.protocol.name(),
            self.sweep_param,
            self.sweep_value.map(|v| v.to_string()).unwrap_or_default(),
            self.seed_count,
            self.goodput_bps_mean,
            self.goodput_bps_std,
            self.delay_s_mean,
            self.delay_s_std,
            self.pdr_mean,
            self.pdr_std,
            self.group_size_mean,
            self.overhead_pkts_mean
        )
    }
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one sample).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(protocol: Protocol, param: Option<SweepParam>, value: Option<f64>, runs: Vec<MetricsReport>) -> SweepRow {
    let col = |f: fn(&MetricsReport) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let (goodput_bps_mean, goodput_bps_std) = mean_std(&col(|r| r.goodput_bps));
    // Delay is only defined for runs that delivered something.
    let delays: Vec<f64> = runs.iter().filter(|r| r.delivered > 0).map(|r| r.avg_delay_s).collect();
    let (delay_s_mean, delay_s_std) = mean_std(&delays);
    let (pdr_mean, pdr_std) = mean_std(&col(|r| r.pdr));
    let (group_size_mean, _) = mean_std(&col(|r| r.avg_group_size));
    let (overhead_pkts_mean, _) = mean_std(&col(|r| r.overhead_pkts as f64));
    SweepRow {
        protocol,
        sweep_param: param.map_or("none", SweepParam::name).to_string(),
        sweep_value: value,
        seed_count: runs.len(),
        goodput_bps_mean,
        goodput_bps_std,
        delay_s_mean,
        delay_s_std,
        pdr_mean,
        pdr_std,
        group_size_mean,
        overhead_pkts_mean,
        runs,
    }
}

/// Runs every `(value, seed)` network under every protocol. Each network is
/// built once and shared by the protocols, so comparisons are paired. Runs
/// execute in parallel; rows come out ordered by value, then protocol.
pub fn run_sweep(base: &SimConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.protocols.is_empty() {
        return Err(Error::InvalidSweep("no protocols given".into()));
    }
    if spec.seeds.is_empty() {
        return Err(Error::InvalidSweep("no seeds given".into()));
    }
    let points: Vec<Option<f64>> = match spec.param {
        Some(_) if spec.values.is_empty() => {
            return Err(Error::InvalidSweep("no sweep values given".into()))
        }
        Some(_) => spec.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut configs = Vec::with_capacity(points.len());
    for &value in &points {
        let config = match (spec.param, value) {
            (Some(p), Some(v)) => p.apply(base, v)?,
            _ => {
                base.validate()?;
                base.clone()
            }
        };
        configs.push(config);
    }

    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| spec.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<Vec<MetricsReport>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let config = SimConfig {
                rng_seed: seed,
                ..configs[i].clone()
            };
            let (state, model) = build_network(&config)?;
            Ok(spec
                .protocols
                .iter()
                .map(|&p| collect(&run(state.clone(), &model, p, false)))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (i, &value) in points.iter().enumerate() {
        for (k, &protocol) in spec.protocols.iter().enumerate() {
            let runs = jobs
                .iter()
                .zip(&results)
                .filter(|((j, _), _)| *j == i)
                .map(|(_, r)| r[k].clone())
                .collect();
            rows.push(aggregate(protocol, spec.param, value, runs));
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_line())?;
    }
    Ok(())
}

pub fn csv_string(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Parses a comma-separated protocol list such as `cscr,launch`.
pub fn parse_protocols(s: &str) -> Result<Vec<Protocol>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<Protocol>()
                .map_err(|_| Error::InvalidConfig(format!("unknown protocol `{}`", p.trim())))
        })
        .collect()
}
