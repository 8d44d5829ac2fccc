//! Python bindings for `cscr_core`: configuration, the metric building
//! blocks, topology inspection, single runs and parameter sweeps.

use num_complex::Complex64;
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cscr_core::experiment::{self, SweepParam, SweepSpec, CONFIG_KEYS, CSV_HEADER};
use cscr_core::metric::{lc_metric as core_lc, switching_delay_from_channels, MetricInputs};
use cscr_core::model::{ChannelId, NetworkState, NodeId};
use cscr_core::radio::{self, ChannelModel};
use cscr_core::{sim, Protocol, SimConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn protocol(name: &str) -> PyResult<Protocol> {
    name.parse().map_err(value_err)
}

/// Simulation parameters. Keyword arguments override the nominal defaults.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SimConfig,
}

impl PyConfig {
    fn set_any(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let text = value.str()?.to_string();
        experiment::set_field(&mut self.inner, key, &text).map_err(|e| {
            if CONFIG_KEYS.contains(&key) {
                PyValueError::new_err(e)
            } else {
                PyKeyError::new_err(e)
            }
        })
    }
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut c = PyConfig {
            inner: SimConfig::default(),
        };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                c.set_any(&k.extract::<String>()?, &v)?;
            }
        }
        c.inner.validate().map_err(value_err)?;
        Ok(c)
    }

    /// Parses the `key = value` file format.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        experiment::parse_config(text)
            .map(|inner| PyConfig { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        CONFIG_KEYS.to_vec()
    }

    /// Field value as int or float.
    fn get<'py>(&self, py: Python<'py>, key: &str) -> PyResult<Bound<'py, PyAny>> {
        let text = experiment::get_field(&self.inner, key)
            .ok_or_else(|| PyKeyError::new_err(key.to_string()))?;
        Ok(match text.parse::<u64>() {
            Ok(i) => i.into_pyobject(py)?.into_any(),
            Err(_) => text.parse::<f64>().map_err(value_err)?.into_pyobject(py)?.into_any(),
        })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let previous = self.inner.clone();
        self.set_any(key, value)?;
        if let Err(e) = self.inner.validate() {
            self.inner = previous;
            return Err(value_err(e));
        }
        Ok(())
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for k in CONFIG_KEYS {
            d.set_item(k, self.get(py, k)?)?;
        }
        Ok(d)
    }

    fn to_text(&self) -> String {
        experiment::format_config(&self.inner)
    }

    fn __eq__(&self, other: &PyConfig) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Config(num_sus={}, num_pus={}, num_channels={}, num_flows={}, sim_duration={}, rng_seed={})",
            c.num_sus, c.num_pus, c.num_channels, c.num_flows, c.sim_duration, c.rng_seed
        )
    }
}

/// Aggregate metrics of one run.
#[pyclass(name = "Metrics", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyMetrics {
    goodput_bps: f64,
    avg_delay_s: f64,
    pdr: f64,
    pdr_zero_sample: bool,
    avg_group_size: f64,
    overhead_pkts: u64,
    generated: u64,
    delivered: u64,
    dropped: u64,
    in_flight: u64,
    collisions: u64,
    blocked_by_pu: u64,
    groups_per_flow: f64,
}

impl From<&sim::MetricsReport> for PyMetrics {
    fn from(m: &sim::MetricsReport) -> Self {
        PyMetrics {
            goodput_bps: m.goodput_bps,
            avg_delay_s: m.avg_delay_s,
            pdr: m.pdr,
            pdr_zero_sample: m.pdr_zero_sample,
            avg_group_size: m.avg_group_size,
            overhead_pkts: m.overhead_pkts,
            generated: m.generated,
            delivered: m.delivered,
            dropped: m.dropped,
            in_flight: m.in_flight,
            collisions: m.collisions,
            blocked_by_pu: m.blocked_by_pu,
            groups_per_flow: m.groups_per_flow,
        }
    }
}

#[pymethods]
impl PyMetrics {
    fn __repr__(&self) -> String {
        format!(
            "Metrics(goodput_bps={:.1}, avg_delay_s={:.6}, pdr={:.4}, generated={}, delivered={})",
            self.goodput_bps, self.avg_delay_s, self.pdr, self.generated, self.delivered
        )
    }
}

/// Result of one simulation run.
#[pyclass(name = "RunResult", get_all, skip_from_py_object)]
struct PyRunResult {
    protocol: String,
    metrics: PyMetrics,
    trace_hash: String,
    events: u64,
    overlay_violations: usize,
    trace: Option<Vec<String>>,
}

/// One aggregated CSV row.
#[pyclass(name = "SweepRow", get_all, skip_from_py_object)]
struct PySweepRow {
    protocol: String,
    sweep_param: String,
    sweep_value: Option<f64>,
    seed_count: usize,
    goodput_bps_mean: f64,
    goodput_bps_std: f64,
    delay_s_mean: f64,
    delay_s_std: f64,
    pdr_mean: f64,
    pdr_std: f64,
    group_size_mean: f64,
    overhead_pkts_mean: f64,
    csv_line: String,
}

/// Outcome of channel selection for one hop.
#[pyclass(name = "Selection", get_all, skip_from_py_object)]
struct PySelection {
    group: Vec<u32>,
    channel: u16,
    score: f64,
    capacity: f64,
    plain_capacity: f64,
    nulled_pus: Vec<u32>,
    p_pu: f64,
    t_switch: f64,
    fallback: bool,
}

#[pymethods]
impl PySelection {
    fn __repr__(&self) -> String {
        format!(
            "Selection(group={:?}, channel={}, score={:.4e}, fallback={})",
            self.group, self.channel, self.score, self.fallback
        )
    }
}

/// A generated topology with its channel coefficients.
#[pyclass(name = "Network", skip_from_py_object)]
struct PyNetwork {
    state: NetworkState,
    model: ChannelModel,
}

impl PyNetwork {
    fn node(&self, i: u32) -> PyResult<NodeId> {
        let id = NodeId(i);
        self.state.su(id).map_err(value_err)?;
        Ok(id)
    }
}

#[pymethods]
impl PyNetwork {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        let (state, model) = sim::build_network(&config.inner).map_err(value_err)?;
        Ok(PyNetwork { state, model })
    }

    #[getter]
    fn num_sus(&self) -> usize {
        self.state.sus.len()
    }

    #[getter]
    fn num_pus(&self) -> usize {
        self.state.pus.len()
    }

    fn su_positions(&self) -> Vec<(f64, f64)> {
        self.state.sus.iter().map(|s| (s.position.x, s.position.y)).collect()
    }

    fn pu_positions(&self) -> Vec<(f64, f64)> {
        self.state.pus.iter().map(|p| (p.position.x, p.position.y)).collect()
    }

    fn neighbors(&self, node: u32) -> PyResult<Vec<u32>> {
        let n = self.state.neighbors(self.node(node)?).map_err(value_err)?;
        Ok(n.into_iter().map(|m| m.0).collect())
    }

    /// `(source, destination)` of every flow.
    fn flows(&self) -> Vec<(u32, u32)> {
        self.state.flows.iter().map(|f| (f.source.0, f.destination.0)).collect()
    }

    /// Achievable capacity (bits/s) of `group` toward `receiver` on `channel`,
    /// nulling every listed PU.
    #[pyo3(signature = (group, receiver, channel, nulled_pus = Vec::new()))]
    fn capacity(&self, group: Vec<u32>, receiver: u32, channel: u16, nulled_pus: Vec<u32>) -> PyResult<f64> {
        let group: Vec<NodeId> = group.into_iter().map(|g| self.node(g)).collect::<PyResult<_>>()?;
        let receiver = self.node(receiver)?;
        if usize::from(channel) >= self.state.num_channels() {
            return Err(PyValueError::new_err(format!("no channel {channel}")));
        }
        let pus: Vec<_> = nulled_pus.into_iter().map(cscr_core::PuId).collect();
        if let Some(p) = pus.iter().find(|p| p.index() >= self.state.pus.len()) {
            return Err(PyValueError::new_err(format!("no primary user {}", p.0)));
        }
        Ok(radio::achievable_capacity(
            &group,
            receiver,
            ChannelId(channel),
            &self.model,
            &pus,
            self.state.config.max_power,
        ))
    }

    /// Full channel selection for `relay` sending to `receiver`.
    fn select(&self, relay: u32, receiver: u32) -> PyResult<PySelection> {
        let r = cscr_core::select::select(
            &self.state,
            self.node(relay)?,
            self.node(receiver)?,
            &self.model,
            &self.state.config,
        )
        .map_err(value_err)?;
        Ok(PySelection {
            group: r.group.iter().map(|g| g.0).collect(),
            channel: r.channel.0,
            score: r.score,
            capacity: r.capacity,
            plain_capacity: r.plain_capacity,
            nulled_pus: r.nulled_pus.iter().map(|p| p.0).collect(),
            p_pu: r.p_pu,
            t_switch: r.t_switch,
            fallback: r.fallback,
        })
    }

    /// Runs `protocol` on this network.
    #[pyo3(signature = (protocol = "cscr", trace = false))]
    fn simulate(&self, py: Python<'_>, protocol: &str, trace: bool) -> PyResult<PyRunResult> {
        let p = self::protocol(protocol)?;
        let raw = py.detach(|| sim::run(self.state.clone(), &self.model, p, trace));
        Ok(run_result(&raw))
    }
}

fn run_result(raw: &sim::RawResults) -> PyRunResult {
    PyRunResult {
        protocol: raw.protocol.to_string(),
        metrics: PyMetrics::from(&sim::collect(raw)),
        trace_hash: raw.trace_hash.clone(),
        events: raw.events,
        overlay_violations: sim::overlay_violations(raw).len(),
        trace: raw.trace.clone(),
    }
}

/// Builds the network for `config` and runs `protocol` on it.
#[pyfunction]
#[pyo3(signature = (config, protocol = "cscr", trace = false))]
fn simulate(py: Python<'_>, config: &PyConfig, protocol: &str, trace: bool) -> PyResult<PyRunResult> {
    let p = self::protocol(protocol)?;
    let raw = py
        .detach(|| sim::simulate(&config.inner, p, trace))
        .map_err(value_err)?;
    Ok(run_result(&raw))
}

/// Runs every protocol over `seeds` consecutive seeds at each value of
/// `param` (or only the base configuration when `param` is None).
#[pyfunction]
#[pyo3(signature = (config, param = None, values = None, protocols = vec!["cscr".to_string(), "undercover".to_string(), "launch".to_string()], seeds = 10))]
fn sweep(
    py: Python<'_>,
    config: &PyConfig,
    param: Option<&str>,
    values: Option<Vec<f64>>,
    protocols: Vec<String>,
    seeds: usize,
) -> PyResult<Vec<PySweepRow>> {
    let param = param.map(str::parse::<SweepParam>).transpose().map_err(value_err)?;
    let protocols = protocols.iter().map(|p| protocol(p)).collect::<PyResult<Vec<_>>>()?;
    let mut spec = SweepSpec::new(&config.inner, param, protocols, seeds);
    if let Some(v) = values {
        spec.values = v;
    }
    let rows = py
        .detach(|| experiment::run_sweep(&config.inner, &spec))
        .map_err(value_err)?;
    Ok(rows
        .iter()
        .map(|r| PySweepRow {
            protocol: r.protocol.to_string(),
            sweep_param: r.sweep_param.clone(),
            sweep_value: r.sweep_value,
            seed_count: r.seed_count,
            goodput_bps_mean: r.goodput_bps_mean,
            goodput_bps_std: r.goodput_bps_std,
            delay_s_mean: r.delay_s_mean,
            delay_s_std: r.delay_s_std,
            pdr_mean: r.pdr_mean,
            pdr_std: r.pdr_std,
            group_size_mean: r.group_size_mean,
            overhead_pkts_mean: r.overhead_pkts_mean,
            csv_line: r.csv_line(),
        })
        .collect())
}

/// Probability that at least one PU with the given rates turns on within `tau`.
#[pyfunction]
fn p_pu(mus: Vec<f64>, tau: f64) -> PyResult<f64> {
    cscr_core::pu::p_pu_from_rates(mus, tau).map_err(value_err)
}

/// Time for every current channel to retune to `target` at `c` per step.
#[pyfunction]
fn switching_delay(channels: Vec<u16>, target: u16, c: f64) -> f64 {
    switching_delay_from_channels(channels.into_iter().map(ChannelId), ChannelId(target), c)
}

#[pyfunction]
fn lc_metric(capacity: f64, n_n: usize, n_f: usize, beta: f64, p_pu: f64, t_switch: f64) -> f64 {
    core_lc(&MetricInputs {
        capacity,
        n_n,
        n_f,
        beta,
        p_pu,
        t_switch,
    })
}

/// Zero-forcing weights toward `signal` nulling each constraint vector.
/// Returns `(weights, effective_gain, feasible)`.
#[pyfunction]
fn zero_forcing(signal: Vec<Complex64>, constraints: Vec<Vec<Complex64>>) -> PyResult<(Vec<Complex64>, f64, bool)> {
    if constraints.iter().any(|g| g.len() != signal.len()) {
        return Err(PyValueError::new_err("constraint length differs from signal length"));
    }
    let r = radio::zero_forcing(&signal, &constraints);
    Ok((r.weights, r.effective_gain, r.feasible))
}

#[pyfunction]
fn shannon_capacity(bandwidth: f64, snr: f64) -> f64 {
    radio::shannon_capacity(bandwidth, snr)
}

#[pymodule]
fn cscr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMetrics>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PySweepRow>()?;
    m.add_class::<PySelection>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(p_pu, m)?)?;
    m.add_function(wrap_pyfunction!(switching_delay, m)?)?;
    m.add_function(wrap_pyfunction!(lc_metric, m)?)?;
    m.add_function(wrap_pyfunction!(zero_forcing, m)?)?;
    m.add_function(wrap_pyfunction!(shannon_capacity, m)?)?;
    m.add("CSV_HEADER", CSV_HEADER)?;
    m.add("PROTOCOLS", Protocol::ALL.map(|p| p.to_string()).to_vec())?;
    Ok(())
}
