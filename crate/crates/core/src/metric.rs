//! The per-hop routing metric
//!
//! ```text
//! LC = C / ((N_n + beta (N_f - N_n)) * p_pu * T_switch)
//! ```
//!
//! with floors on the three denominator factors so the score stays finite
//! when there are no interfering flows, no surrounding PUs or no switching.

use std::collections::BTreeSet;

use crate::model::{ChannelId, FlowId, NetworkState, NodeId};

/// Floor on the PU activity probability.
pub const EPS_P: f64 = 1e-3;
/// Floor on the switching delay, seconds.
pub const EPS_T: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricInputs {
    /// Achievable capacity, bits/s.
    pub capacity: f64,
    /// Direct neighbors of the group carrying active flows.
    pub n_n: usize,
    /// Flows within interference range of the group.
    pub n_f: usize,
    pub beta: f64,
    pub p_pu: f64,
    /// Seconds.
    pub t_switch: f64,
}

impl MetricInputs {
    pub fn interference_term(&self) -> f64 {
        let n_n = self.n_n as f64;
        let n_f = self.n_f as f64;
        n_n + self.beta * (n_f - n_n)
    }
}

pub fn lc_metric(inputs: &MetricInputs) -> f64 {
    let interference = inputs.interference_term().max(1.0);
    inputs.capacity / (interference * inputs.p_pu.max(EPS_P) * inputs.t_switch.max(EPS_T))
}

/// `(n_n, n_f)` seen by `group`.
///
/// When `channel` is given, only flow hops on that channel count, since
/// transmissions on other channels do not interfere. Flow `exclude` (the flow
/// whose hop is being chosen) is ignored. `n_f` is raised to `n_n` when several
/// neighbors carry the same flow, keeping the interference term monotone.
pub fn count_interference(
    state: &NetworkState,
    group: &[NodeId],
    channel: Option<ChannelId>,
    exclude: Option<FlowId>,
) -> (usize, usize) {
    let interference_range = state.config.interference_range();
    let relevant = |f_channel: ChannelId| channel.is_none_or(|c| c == f_channel);

    let mut carriers: BTreeSet<NodeId> = BTreeSet::new();
    let mut near_flows = 0usize;
    for flow in state.flows.iter().filter(|f| f.active && Some(f.id) != exclude) {
        let mut near = false;
        for hop in flow.hops.iter().filter(|h| relevant(h.channel)) {
            for node in hop.group.iter().copied().chain([hop.receiver]) {
                if !group.contains(&node) && group.iter().any(|&m| state.in_range(m, node)) {
                    carriers.insert(node);
                }
            }
            near |= [hop.sender, hop.receiver].iter().any(|&e| {
                group
                    .iter()
                    .any(|&m| state.distance(m, e) <= interference_range)
            });
        }
        if near {
            near_flows += 1;
        }
    }
    let n_n = carriers.len();
    (n_n, near_flows.max(n_n))
}

/// Per-node precomputation of [`count_interference`] for one channel filter
/// and excluded flow, so that many candidate groups can be counted cheaply.
#[derive(Debug, Clone)]
pub struct InterferenceView {
    words: usize,
    /// Per node: carriers within transmission range.
    carriers: Vec<Vec<u64>>,
    /// Per node: flows with a hop endpoint within interference range.
    near: Vec<Vec<u64>>,
}

fn set_bit(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

impl InterferenceView {
    pub fn new(state: &NetworkState, channel: Option<ChannelId>, exclude: Option<FlowId>) -> Self {
        let n = state.sus.len();
        let words = n.div_ceil(64).max(1);
        let flow_words = state.flows.len().div_ceil(64).max(1);
        let interference_range = state.config.interference_range();
        let mut carriers = vec![vec![0u64; words]; n];
        let mut near = vec![vec![0u64; flow_words]; n];
        for (fi, flow) in state.flows.iter().enumerate() {
            if !flow.active || Some(flow.id) == exclude {
                continue;
            }
            for hop in flow.hops.iter().filter(|h| channel.is_none_or(|c| c == h.channel)) {
                for m in 0..n {
                    let id = NodeId(m as u32);
                    for node in hop.group.iter().copied().chain([hop.receiver]) {
                        if node != id && state.in_range(id, node) {
                            set_bit(&mut carriers[m], node.index());
                        }
                    }
                    if [hop.sender, hop.receiver]
                        .iter()
                        .any(|&e| state.distance(id, e) <= interference_range)
                    {
                        set_bit(&mut near[m], fi);
                    }
                }
            }
        }
        Self {
            words,
            carriers,
            near,
        }
    }

    /// Same result as [`count_interference`] with the view's filter.
    pub fn count(&self, group: &[NodeId]) -> (usize, usize) {
        let mut n_n = 0;
        for w in 0..self.words {
            let mut union = group.iter().fold(0u64, |acc, m| acc | self.carriers[m.index()][w]);
            for m in group.iter().filter(|m| m.index() / 64 == w) {
                union &= !(1 << (m.index() % 64));
            }
            n_n += union.count_ones() as usize;
        }
        let flow_words = self.near.first().map_or(0, Vec::len);
        let mut n_f = 0;
        for w in 0..flow_words {
            let union = group.iter().fold(0u64, |acc, m| acc | self.near[m.index()][w]);
            n_f += union.count_ones() as usize;
        }
        (n_n, n_f.max(n_n))
    }
}

/// `c * max_m |channel_m - target|`.
pub fn switching_delay_from_channels(
    channels: impl IntoIterator<Item = ChannelId>,
    target: ChannelId,
    c: f64,
) -> f64 {
    let steps = channels
        .into_iter()
        .map(|ch| ch.distance(target))
        .max()
        .unwrap_or(0);
    f64::from(steps) * c
}

/// Time for every member of `group` to retune its send channel to `target`.
pub fn switching_delay(state: &NetworkState, group: &[NodeId], target: ChannelId, c: f64) -> f64 {
    switching_delay_from_channels(
        group
            .iter()
            .map(|m| state.sus[m.index()].current_send_channel),
        target,
        c,
    )
}
