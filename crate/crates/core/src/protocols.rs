//! Route discovery, hello exchange and periodic channel re-selection for CSCR
//! and the two baseline variants.
//!
//! - `Cscr`: cooperative groups, full channel selection, periodic re-selection.
//! - `Undercover`: cooperative groups on one uniformly random channel per
//!   relay and discovery, scored by capacity over interference; no
//!   re-selection.
//! - `Launch`: single-node senders without beamforming, the valid channel
//!   with the smallest switching delay, interweave access, channels locked
//!   after discovery.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelId, FlowHop, FlowId, NetworkState, NodeId, PuId};
use crate::radio::ChannelModel;
use crate::select::{MetricForm, PickRule, SelectionRequest, SelectionResult, Selector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    Cscr,
    Undercover,
    Launch,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Cscr, Protocol::Undercover, Protocol::Launch];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Cscr => "CSCR",
            Protocol::Undercover => "UNDERCOVER",
            Protocol::Launch => "LAUNCH",
        }
    }

    pub fn beamforms(self) -> bool {
        !matches!(self, Protocol::Launch)
    }

    pub fn reselects(self) -> bool {
        matches!(self, Protocol::Cscr)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CSCR" => Ok(Protocol::Cscr),
            "UNDERCOVER" => Ok(Protocol::Undercover),
            "LAUNCH" => Ok(Protocol::Launch),
            other => Err(Error::InvalidConfig(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Control packets sent over the common control channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlCount {
    pub hello: u64,
    pub route_request: u64,
    pub route_reply: u64,
    pub group_coordination: u64,
}

impl ControlCount {
    pub fn total(&self) -> u64 {
        self.hello + self.route_request + self.route_reply + self.group_coordination
    }
}

impl std::ops::AddAssign for ControlCount {
    fn add_assign(&mut self, rhs: Self) {
        self.hello += rhs.hello;
        self.route_request += rhs.route_request;
        self.route_reply += rhs.route_reply;
        self.group_coordination += rhs.group_coordination;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub node: NodeId,
    pub available_channels: Vec<ChannelId>,
    /// Coefficient between `node` and the hello sender, per channel.
    pub coefficients: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensedPu {
    pub pu: PuId,
    pub mu: f64,
    pub channel: ChannelId,
    pub coefficient: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelloPayload {
    pub sender: NodeId,
    pub emitted_at: f64,
    pub neighbor_table: Vec<NeighborEntry>,
    pub flow_table: Vec<(FlowId, ChannelId)>,
    pub sensed_pus: Vec<SensedPu>,
}

impl HelloPayload {
    /// Snapshot of `sender`'s neighborhood, flows and currently active PUs.
    pub fn snapshot(state: &NetworkState, model: &ChannelModel, sender: NodeId) -> Self {
        let neighbor_table = state
            .sus
            .iter()
            .filter(|s| state.in_range(sender, s.id))
            .map(|s| NeighborEntry {
                node: s.id,
                available_channels: s.available_channels.iter().copied().collect(),
                coefficients: state
                    .config
                    .channels()
                    .map(|k| model.coeff(s.id, sender, k))
                    .collect(),
            })
            .collect();
        let mut flow_table: Vec<(FlowId, ChannelId)> = state
            .flows
            .iter()
            .filter(|f| f.active)
            .flat_map(|f| {
                f.hops
                    .iter()
                    .filter(|h| h.involves(sender))
                    .map(move |h| (f.id, h.channel))
            })
            .collect();
        flow_table.dedup();
        let sensed_pus = state
            .pus
            .iter()
            .filter(|p| p.process.is_on() && state.pu_in_range(sender, p.id))
            .flat_map(|p| {
                p.active_channels.iter().map(move |&k| SensedPu {
                    pu: p.id,
                    mu: p.process.mu,
                    channel: k,
                    coefficient: model.coeff_pu(sender, p.id, k),
                })
            })
            .collect();
        Self {
            sender,
            emitted_at: state.now,
            neighbor_table,
            flow_table,
            sensed_pus,
        }
    }
}

/// What each node has heard from its neighbors: the latest hello per sender.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Knowledge {
    pub tables: Vec<BTreeMap<NodeId, HelloPayload>>,
}

impl Knowledge {
    pub fn new(num_sus: usize) -> Self {
        Self {
            tables: vec![BTreeMap::new(); num_sus],
        }
    }

    pub fn heard_by(&self, node: NodeId) -> &BTreeMap<NodeId, HelloPayload> {
        &self.tables[node.index()]
    }
}

/// Every SU broadcasts one hello on the control channel; in-range SUs store
/// it. Returns the number of hellos emitted.
pub fn exchange_hello(
    state: &NetworkState,
    model: &ChannelModel,
    knowledge: &mut Knowledge,
) -> u64 {
    if knowledge.tables.len() != state.sus.len() {
        *knowledge = Knowledge::new(state.sus.len());
    }
    for su in &state.sus {
        let payload = HelloPayload::snapshot(state, model, su.id);
        for other in &state.sus {
            if state.in_range(su.id, other.id) {
                knowledge.tables[other.id.index()].insert(su.id, payload.clone());
            }
        }
    }
    state.sus.len() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteHop {
    pub sender: NodeId,
    pub selection: SelectionResult,
    pub receiver: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    pub flow: FlowId,
    pub hops: Vec<RouteHop>,
    pub established_at: f64,
}

impl RouteEntry {
    /// Each hop starts where the previous one ended and its group contains
    /// its sender.
    pub fn is_chained(&self) -> bool {
        self.hops.windows(2).all(|w| w[0].receiver == w[1].sender)
            && self
                .hops
                .iter()
                .all(|h| h.selection.group.first() == Some(&h.sender))
    }

    /// Smallest per-hop score.
    pub fn bottleneck(&self) -> f64 {
        self.hops
            .iter()
            .map(|h| h.selection.score)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn flow_hops(&self) -> Vec<FlowHop> {
        self.hops
            .iter()
            .map(|h| FlowHop {
                sender: h.sender,
                group: h.selection.group.clone(),
                receiver: h.receiver,
                channel: h.selection.channel,
            })
            .collect()
    }
}

/// Installs `route` in the network: the flow becomes active and every group
/// member's send channel becomes its hop's channel.
pub fn apply_route(state: &mut NetworkState, route: &RouteEntry) {
    for hop in &route.hops {
        for &m in &hop.selection.group {
            state.sus[m.index()].current_send_channel = hop.selection.channel;
        }
    }
    let flow = &mut state.flows[route.flow.index()];
    flow.hops = route.flow_hops();
    flow.active = true;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reselection {
    pub route: RouteEntry,
    /// Per hop, how long the hop cannot transmit while members retune.
    pub downtime: Vec<f64>,
    pub control: ControlCount,
    /// Hops whose group or channel changed.
    pub changed: usize,
}

/// Per-protocol hop selection and route discovery over one topology.
pub struct Router<'m> {
    pub protocol: Protocol,
    selector: Selector<'m>,
    rng: ChaCha8Rng,
    /// Channels evaluated per relay during the most recent discovery.
    pub evaluated_channels: BTreeMap<NodeId, BTreeSet<ChannelId>>,
}

impl<'m> Router<'m> {
    pub fn new(protocol: Protocol, model: &'m ChannelModel, seed: u64) -> Self {
        Self {
            protocol,
            selector: Selector::new(model),
            rng: ChaCha8Rng::seed_from_u64(seed),
            evaluated_channels: BTreeMap::new(),
        }
    }

    fn request(&mut self, state: &NetworkState, relay: NodeId, exclude: Option<FlowId>) -> SelectionRequest {
        let cfg = &state.config;
        match self.protocol {
            Protocol::Cscr => SelectionRequest::full(cfg).excluding(exclude),
            Protocol::Undercover => {
                let channel = match self.evaluated_channels.get(&relay) {
                    Some(set) => *set.iter().next().expect("non-empty"),
                    None => {
                        let available: Vec<ChannelId> = state.sus[relay.index()]
                            .available_channels
                            .iter()
                            .copied()
                            .collect();
                        available[self.rng.random_range(0..available.len())]
                    }
                };
                SelectionRequest {
                    channels: vec![channel],
                    max_group_size: cfg.max_group_size,
                    nulling: true,
                    form: MetricForm::CapacityOverInterference,
                    rule: PickRule::BestScore,
                    exclude,
                    exclude_hop: None,
                }
            }
            Protocol::Launch => SelectionRequest {
                channels: cfg.channels().collect(),
                max_group_size: 1,
                nulling: false,
                form: MetricForm::CapacityOverSwitching,
                rule: PickRule::MinSwitch,
                exclude,
                exclude_hop: None,
            },
        }
    }

    /// Selection for one hop under this router's protocol.
    pub fn hop_selection(
        &mut self,
        state: &NetworkState,
        sender: NodeId,
        receiver: NodeId,
        exclude: Option<FlowId>,
    ) -> Result<SelectionResult> {
        self.hop_selection_at(state, sender, receiver, exclude, None)
    }

    fn hop_selection_at(
        &mut self,
        state: &NetworkState,
        sender: NodeId,
        receiver: NodeId,
        exclude: Option<FlowId>,
        hop: Option<usize>,
    ) -> Result<SelectionResult> {
        let mut request = self.request(state, sender, exclude);
        request.exclude_hop = hop;
        self.evaluated_channels
            .entry(sender)
            .or_default()
            .extend(request.channels.iter().copied());
        self.selector.choose(state, sender, receiver, &request)
    }

    /// On-demand discovery for `flow`: the request floods the control
    /// channel up to the TTL, every traversed link is scored with the hop
    /// selection, and the destination answers along the path with the
    /// largest bottleneck score (fewest hops on ties).
    ///
    /// Control packets are counted whether or not a route is found.
    pub fn discover(
        &mut self,
        state: &NetworkState,
        flow: FlowId,
        now: f64,
    ) -> (Result<RouteEntry>, ControlCount) {
        let f = &state.flows[flow.index()];
        let (source, dest) = (f.source, f.destination);
        self.discover_between(state, flow, source, dest, now)
    }

    pub fn discover_between(
        &mut self,
        state: &NetworkState,
        flow: FlowId,
        source: NodeId,
        dest: NodeId,
        now: f64,
    ) -> (Result<RouteEntry>, ControlCount) {
        self.selector.freeze();
        let out = self.discover_frozen(state, flow, source, dest, now);
        self.selector.thaw();
        out
    }

    fn discover_frozen(
        &mut self,
        state: &NetworkState,
        flow: FlowId,
        source: NodeId,
        dest: NodeId,
        now: f64,
    ) -> (Result<RouteEntry>, ControlCount) {
        let mut control = ControlCount::default();
        if source == dest {
            return (Err(Error::SelfRoute(source)), control);
        }
        if let Err(e) = state.su(source).and(state.su(dest)) {
            return (Err(e), control);
        }
        self.evaluated_channels.clear();
        let ttl = state.config.ttl;
        let n = state.sus.len();
        let adjacency: Vec<Vec<NodeId>> = (0..n)
            .map(|i| {
                state
                    .neighbors(NodeId(i as u32))
                    .map(|s| s.into_iter().collect())
                    .unwrap_or_default()
            })
            .collect();

        // Flood: every reached node except the destination rebroadcasts once
        // if its hop count is below the TTL.
        let mut depth = vec![usize::MAX; n];
        depth[source.index()] = 0;
        let mut frontier = vec![source];
        while let Some(next) = {
            let mut next = Vec::new();
            for &u in &frontier {
                if u == dest || depth[u.index()] >= ttl {
                    continue;
                }
                control.route_request += 1;
                for &v in &adjacency[u.index()] {
                    if depth[v.index()] == usize::MAX {
                        depth[v.index()] = depth[u.index()] + 1;
                        next.push(v);
                    }
                }
            }
            (!next.is_empty()).then_some(next)
        } {
            frontier = next;
        }
        if depth[dest.index()] == usize::MAX {
            return (
                Err(Error::NoRoute {
                    from: source,
                    destination: dest,
                    ttl,
                }),
                control,
            );
        }

        // Widest path over walks of exactly k hops; the smallest k reaching
        // the overall best bottleneck yields a simple path.
        let mut scores: HashMap<(NodeId, NodeId), Option<SelectionResult>> = HashMap::new();
        let mut best = vec![f64::NEG_INFINITY; n];
        best[source.index()] = f64::INFINITY;
        let mut parents: Vec<Vec<Option<NodeId>>> = Vec::with_capacity(ttl);
        let mut dest_best: Option<(f64, usize)> = None;
        for k in 1..=ttl {
            let mut next = vec![f64::NEG_INFINITY; n];
            let mut parent = vec![None; n];
            for u in 0..n {
                let bu = best[u];
                let un = NodeId(u as u32);
                if bu == f64::NEG_INFINITY || un == dest {
                    continue;
                }
                for &v in &adjacency[u] {
                    if v == source {
                        continue;
                    }
                    let entry = scores.entry((un, v)).or_insert_with(|| {
                        self.hop_selection(state, un, v, Some(flow)).ok()
                    });
                    let Some(sel) = entry else { continue };
                    let val = bu.min(sel.score);
                    if val > next[v.index()] {
                        next[v.index()] = val;
                        parent[v.index()] = Some(un);
                    }
                }
            }
            parents.push(parent);
            let d = next[dest.index()];
            if d > f64::NEG_INFINITY && dest_best.is_none_or(|(b, _)| d > b) {
                dest_best = Some((d, k));
            }
            best = next;
        }
        let Some((_, hops)) = dest_best else {
            return (
                Err(Error::NoRoute {
                    from: source,
                    destination: dest,
                    ttl,
                }),
                control,
            );
        };

        let mut path = vec![dest];
        let mut v = dest;
        for k in (0..hops).rev() {
            v = parents[k][v.index()].expect("parent on optimal walk");
            path.push(v);
        }
        path.reverse();
        debug_assert_eq!(path[0], source);

        let route_hops: Vec<RouteHop> = path
            .windows(2)
            .map(|w| RouteHop {
                sender: w[0],
                selection: scores[&(w[0], w[1])].clone().expect("scored edge"),
                receiver: w[1],
            })
            .collect();
        control.route_reply += route_hops.len() as u64;
        if self.protocol.beamforms() {
            control.group_coordination += route_hops
                .iter()
                .map(|h| h.selection.group.len() as u64)
                .sum::<u64>();
        }
        let route = RouteEntry {
            flow,
            hops: route_hops,
            established_at: now,
        };
        (Ok(route), control)
    }

    /// Re-runs the hop selection of every hop of an active route. Only CSCR
    /// re-selects; the baselines return the route unchanged.
    pub fn reselect(&mut self, state: &NetworkState, route: &RouteEntry, _now: f64) -> Reselection {
        let mut out = Reselection {
            route: route.clone(),
            downtime: vec![0.0; route.hops.len()],
            control: ControlCount::default(),
            changed: 0,
        };
        if !self.protocol.reselects() {
            return out;
        }
        self.selector.freeze();
        for (i, hop) in out.route.hops.iter_mut().enumerate() {
            let Ok(sel) =
                self.hop_selection_at(state, hop.sender, hop.receiver, Some(route.flow), Some(i))
            else {
                continue;
            };
            if sel.group != hop.selection.group || sel.channel != hop.selection.channel {
                out.downtime[i] = sel.t_switch;
                out.control.group_coordination += sel.group.len() as u64;
                out.changed += 1;
            }
            hop.selection = sel;
        }
        self.selector.thaw();
        out
    }
}

/// One-shot discovery with a fresh router.
pub fn discover_route(
    state: &NetworkState,
    model: &ChannelModel,
    source: NodeId,
    dest: NodeId,
    protocol: Protocol,
    seed: u64,
) -> Result<RouteEntry> {
    let flow = FlowId(state.flows.len() as u32);
    Router::new(protocol, model, seed)
        .discover_between(state, flow, source, dest, state.now)
        .0
}

/// One round of re-selection for `route` with a fresh router.
pub fn reselect_channels(
    state: &NetworkState,
    model: &ChannelModel,
    route: &RouteEntry,
    protocol: Protocol,
    now: f64,
) -> Reselection {
    Router::new(protocol, model, 0).reselect(state, route, now)
}
