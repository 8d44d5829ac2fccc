//! Channel validity, cooperative group enumeration and channel selection.
//!
//! Every `(group, channel)` candidate is scored; a channel is usable for a
//! group only if it is valid at every member. When no candidate is valid the
//! selection falls back to the candidate with the smallest switching delay.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::metric::{lc_metric, switching_delay, InterferenceView, MetricInputs, EPS_T};
use crate::model::{ChannelId, FlowId, NetworkState, NodeId, PuId, SimConfig};
use crate::pu::p_pu_from_rates;
use crate::radio::{achievable_capacity, ChannelModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Transmitting nodes, relay first.
    pub group: Vec<NodeId>,
    pub channel: ChannelId,
    pub score: f64,
    /// Capacity the score was computed with, bits/s.
    pub capacity: f64,
    /// Capacity without any PU nulling, bits/s. Used while no PU is active.
    pub plain_capacity: f64,
    /// PUs the group's beamformer nulls (empty when it does not beamform).
    pub nulled_pus: Vec<PuId>,
    pub p_pu: f64,
    pub t_switch: f64,
    pub fallback: bool,
}

impl SelectionResult {
    pub fn relay(&self) -> NodeId {
        self.group[0]
    }
}

/// A channel is valid at `member` when it carries no active flow other than
/// `exclude`, or when every such flow already transmits from `member` on
/// `channel`.
pub fn is_valid_channel(
    state: &NetworkState,
    member: NodeId,
    channel: ChannelId,
    exclude: Option<FlowId>,
) -> Result<bool> {
    let su = state.su(member)?;
    if !su.available_channels.contains(&channel) {
        return Err(Error::ChannelUnavailable {
            node: member,
            channel,
        });
    }
    Ok(state.send_channels_at(member, exclude, None).all(|c| c == channel))
}

/// Candidate groups for `relay` sending to `receiver`: the singleton first,
/// then the relay plus every subset of up to `max_size - 1` helpers.
///
/// Helpers are common neighbors of relay and receiver, ranked by distance to
/// the receiver (strongest mean channel first) and capped at
/// `config.max_helpers`. Subsets are listed by size, then lexicographically
/// in rank order.
pub fn enumerate_groups(
    state: &NetworkState,
    relay: NodeId,
    receiver: NodeId,
    max_size: usize,
) -> Vec<Vec<NodeId>> {
    let mut helpers = state.common_neighbors(relay, receiver);
    helpers.sort_by(|&a, &b| {
        state
            .distance(a, receiver)
            .total_cmp(&state.distance(b, receiver))
            .then(a.cmp(&b))
    });
    helpers.truncate(state.config.max_helpers);

    let mut groups = vec![vec![relay]];
    let max_helpers = max_size.saturating_sub(1).min(helpers.len());
    for size in 1..=max_helpers {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let mut g = Vec::with_capacity(size + 1);
            g.push(relay);
            g.extend(idx.iter().map(|&i| helpers[i]));
            groups.push(g);
            // Next combination in lexicographic order.
            let mut i = size;
            while i > 0 && idx[i - 1] == helpers.len() - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    groups
}

/// How a candidate is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricForm {
    /// Capacity over interference, PU activity and switching delay.
    Full,
    /// Capacity over interference only.
    CapacityOverInterference,
    /// Capacity over switching delay only.
    CapacityOverSwitching,
}

/// How the winning candidate is picked among the valid ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PickRule {
    /// Largest score; ties by higher capacity, smaller group, lower channel.
    BestScore,
    /// Smallest switching delay; ties by higher capacity, lower channel,
    /// smaller group.
    MinSwitch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRequest {
    pub channels: Vec<ChannelId>,
    pub max_group_size: usize,
    /// Whether groups beamform to null surrounding PUs.
    pub nulling: bool,
    pub form: MetricForm,
    pub rule: PickRule,
    /// Flow whose hop is being (re)selected; it does not count as
    /// interference and, unless `exclude_hop` is set, does not constrain
    /// validity.
    pub exclude: Option<FlowId>,
    /// Index of the hop being re-selected within `exclude`; the flow's other
    /// hops then still constrain validity.
    pub exclude_hop: Option<usize>,
}

impl SelectionRequest {
    /// Full channel selection over every channel.
    pub fn full(config: &SimConfig) -> Self {
        Self {
            channels: config.channels().collect(),
            max_group_size: config.max_group_size,
            nulling: true,
            form: MetricForm::Full,
            rule: PickRule::BestScore,
            exclude: None,
            exclude_hop: None,
        }
    }

    pub fn excluding(mut self, flow: Option<FlowId>) -> Self {
        self.exclude = flow;
        self
    }
}

/// Static, state-independent evaluation of one `(group, channel)` pair.
#[derive(Debug, Clone, Copy)]
struct PairChannel {
    available: bool,
    nulled_capacity: f64,
    plain_capacity: f64,
    /// `None` when the configured window is invalid.
    p_pu: Option<f64>,
}

#[derive(Debug)]
struct PairTable {
    groups: Vec<Vec<NodeId>>,
    /// `[channel][group]`, filled on first use of a channel.
    channels: Vec<Option<Vec<PairChannel>>>,
}

/// Channel selection with the geometry-only parts (candidate groups,
/// beamforming capacities, sensed PU rates) cached per relay/receiver pair.
///
/// The cache is only valid for one topology and one channel model.
pub struct Selector<'m> {
    model: &'m ChannelModel,
    tables: HashMap<(NodeId, NodeId, usize), PairTable>,
    /// Interference views reused while the network state is frozen.
    views: HashMap<(ChannelId, Option<FlowId>), InterferenceView>,
    frozen: bool,
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    group: usize,
    channel: ChannelId,
    capacity: f64,
    plain_capacity: f64,
    p_pu: f64,
    t_switch: f64,
    score: f64,
    valid: bool,
}

impl<'m> Selector<'m> {
    pub fn new(model: &'m ChannelModel) -> Self {
        Self {
            model,
            tables: HashMap::new(),
            views: HashMap::new(),
            frozen: false,
        }
    }

    pub fn model(&self) -> &'m ChannelModel {
        self.model
    }

    /// Promises that the network state passed to [`Selector::choose`] does not
    /// change until [`Selector::thaw`], so derived per-state data is reused.
    pub fn freeze(&mut self) {
        self.views.clear();
        self.frozen = true;
    }

    pub fn thaw(&mut self) {
        self.views.clear();
        self.frozen = false;
    }

    fn table(
        &mut self,
        state: &NetworkState,
        relay: NodeId,
        receiver: NodeId,
        max_size: usize,
        channel: ChannelId,
    ) -> &PairTable {
        let model = self.model;
        let table = self
            .tables
            .entry((relay, receiver, max_size))
            .or_insert_with(|| PairTable {
                groups: enumerate_groups(state, relay, receiver, max_size),
                channels: vec![None; state.num_channels()],
            });
        if table.channels[channel.index()].is_none() {
            let rx_has = state.sus[receiver.index()]
                .available_channels
                .contains(&channel);
            let power = state.sus[relay.index()].max_power;
            let evals = table
                .groups
                .iter()
                .map(|g| {
                    let available = rx_has
                        && g.iter()
                            .all(|m| state.sus[m.index()].available_channels.contains(&channel));
                    if !available {
                        return PairChannel {
                            available,
                            nulled_capacity: 0.0,
                            plain_capacity: 0.0,
                            p_pu: Some(0.0),
                        };
                    }
                    let sensed = state.sensed_pus(g, channel);
                    let mu_sum = sensed.iter().map(|p| state.pus[p.index()].process.mu).sum();
                    let plain_capacity =
                        achievable_capacity(g, receiver, channel, model, &[], power);
                    let nulled_capacity = if sensed.is_empty() {
                        plain_capacity
                    } else {
                        achievable_capacity(g, receiver, channel, model, &sensed, power)
                    };
                    PairChannel {
                        available,
                        nulled_capacity,
                        plain_capacity,
                        p_pu: p_pu_from_rates([mu_sum], state.config.tau).ok(),
                    }
                })
                .collect();
            table.channels[channel.index()] = Some(evals);
        }
        table
    }

    /// Runs the selection described by `request` for one hop.
    pub fn choose(
        &mut self,
        state: &NetworkState,
        relay: NodeId,
        receiver: NodeId,
        request: &SelectionRequest,
    ) -> Result<SelectionResult> {
        state.su(relay)?;
        state.su(receiver)?;
        if !state.in_range(relay, receiver) {
            return Err(Error::Unreachable { relay, receiver });
        }
        let cfg = &state.config;
        let mut scored: Vec<Scored> = Vec::new();
        let n = state.sus.len();
        if !self.frozen {
            self.views.clear();
        }

        for &channel in &request.channels {
            if !matches!(request.form, MetricForm::CapacityOverSwitching) {
                self.views
                    .entry((channel, request.exclude))
                    .or_insert_with(|| InterferenceView::new(state, Some(channel), request.exclude));
            }
            let mut validity: Vec<Option<bool>> = vec![None; n];
            self.table(state, relay, receiver, request.max_group_size, channel);
            let table = &self.tables[&(relay, receiver, request.max_group_size)];
            let view = self.views.get(&(channel, request.exclude));
            let evals = table.channels[channel.index()]
                .as_ref()
                .expect("filled above");
            for (gi, (group, eval)) in table.groups.iter().zip(evals).enumerate() {
                if !eval.available {
                    continue;
                }
                let valid = group.iter().all(|&m| {
                    *validity[m.index()].get_or_insert_with(|| {
                        state
                            .send_channels_at(m, request.exclude, request.exclude_hop)
                            .all(|c| c == channel)
                    })
                });
                let capacity = if request.nulling {
                    eval.nulled_capacity
                } else {
                    eval.plain_capacity
                };
                let t_switch = switching_delay(state, group, channel, cfg.switch_cost_c);
                let (score, p_pu) = match request.form {
                    MetricForm::Full => {
                        let p_pu = eval.p_pu.ok_or(Error::NegativeTau(cfg.tau))?;
                        let (n_n, n_f) = view.expect("built for this form").count(group);
                        let inputs = MetricInputs {
                            capacity,
                            n_n,
                            n_f,
                            beta: cfg.beta,
                            p_pu,
                            t_switch,
                        };
                        (lc_metric(&inputs), p_pu)
                    }
                    MetricForm::CapacityOverInterference => {
                        let (n_n, n_f) = view.expect("built for this form").count(group);
                        let inputs = MetricInputs {
                            capacity,
                            n_n,
                            n_f,
                            beta: cfg.beta,
                            p_pu: 0.0,
                            t_switch: 0.0,
                        };
                        let term = inputs.interference_term().max(1.0);
                        (capacity / term, 0.0)
                    }
                    MetricForm::CapacityOverSwitching => (capacity / t_switch.max(EPS_T), 0.0),
                };
                scored.push(Scored {
                    group: gi,
                    channel,
                    capacity,
                    plain_capacity: eval.plain_capacity,
                    p_pu,
                    t_switch,
                    score,
                    valid,
                });
            }
        }

        let table = &self.tables[&(relay, receiver, request.max_group_size)];
        let size = |s: &Scored| table.groups[s.group].len();
        let valid: Vec<&Scored> = scored.iter().filter(|s| s.valid).collect();
        let (winner, fallback) = if valid.is_empty() {
            (pick_min_switch(scored.iter(), size), true)
        } else {
            match request.rule {
                PickRule::BestScore => (pick_best(valid.into_iter(), size), false),
                PickRule::MinSwitch => (pick_min_switch(valid.into_iter(), size), false),
            }
        };
        let w = winner.ok_or(Error::Unreachable { relay, receiver })?;
        let group = table.groups[w.group].clone();
        let nulled_pus = if request.nulling && w.capacity > 0.0 {
            state.sensed_pus(&group, w.channel)
        } else {
            Vec::new()
        };
        Ok(SelectionResult {
            group,
            channel: w.channel,
            score: w.score,
            capacity: w.capacity,
            plain_capacity: w.plain_capacity,
            nulled_pus,
            p_pu: w.p_pu,
            t_switch: w.t_switch,
            fallback,
        })
    }
}

fn pick_best<'a>(
    items: impl Iterator<Item = &'a Scored>,
    size: impl Fn(&Scored) -> usize,
) -> Option<&'a Scored> {
    items.reduce(|best, s| {
        let better = s
            .score
            .total_cmp(&best.score)
            .then(s.capacity.total_cmp(&best.capacity))
            .then(size(best).cmp(&size(s)))
            .then(best.channel.cmp(&s.channel))
            .then(best.group.cmp(&s.group));
        if better.is_gt() {
            s
        } else {
            best
        }
    })
}

fn pick_min_switch<'a>(
    items: impl Iterator<Item = &'a Scored>,
    size: impl Fn(&Scored) -> usize,
) -> Option<&'a Scored> {
    items.reduce(|best, s| {
        let better = best
            .t_switch
            .total_cmp(&s.t_switch)
            .then(s.capacity.total_cmp(&best.capacity))
            .then(best.channel.cmp(&s.channel))
            .then(size(best).cmp(&size(s)))
            .then(best.group.cmp(&s.group));
        if better.is_gt() {
            s
        } else {
            best
        }
    })
}

/// Full channel selection for `relay` sending to `receiver`.
pub fn select(
    state: &NetworkState,
    relay: NodeId,
    receiver: NodeId,
    model: &ChannelModel,
    config: &SimConfig,
) -> Result<SelectionResult> {
    Selector::new(model).choose(state, relay, receiver, &SelectionRequest::full(config))
}
