//! Deterministic discrete-event simulation of one network under one protocol.
//!
//! The MAC is an abstract contention model: a hop transmits once its group
//! and receiver are idle and the group's send radios are tuned to the hop
//! channel (retuning costs `c` seconds per channel step). Transmitters defer
//! (random backoff) while a same-channel transmission is audible within the
//! carrier-sense range; a transmission becomes audible `sense_delay` after
//! it starts. Same-channel transmissions where a transmitter of one lies
//! within interference range of the other's receiver collide, are retried after a
//! random backoff and dropped after `max_retries`. A hop may only transmit
//! while every active in-range PU on its channel is nulled by its
//! beamformer; otherwise it waits (interweave). A PU that turns ON aborts
//! every ongoing transmission it is not protected from.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::model::{build_topology, ChannelId, FlowId, NetworkState, NodeId, Packet, PuId, SimConfig};
use crate::protocols::{apply_route, exchange_hello, ControlCount, Knowledge, Protocol, RouteEntry, Router};
use crate::pu::PuState;
use crate::radio::{sample_coefficients, ChannelModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Source starts its flow and runs route discovery.
    DiscoveryStep(FlowId),
    PacketArrival(FlowId),
    /// A node tries to send the head of its queue.
    MacAttempt(NodeId),
    TransmissionEnd(u64),
    PuTransition(PuId),
    HelloTimer,
    ReselectTimer,
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::DiscoveryStep(_) => "discovery-step",
            EventKind::PacketArrival(_) => "packet-arrival",
            EventKind::MacAttempt(_) => "mac-attempt",
            EventKind::TransmissionEnd(_) => "transmission-end",
            EventKind::PuTransition(_) => "pu-transition",
            EventKind::HelloTimer => "hello-timer",
            EventKind::ReselectTimer => "reselect-timer",
        }
    }

    fn actor(&self) -> String {
        match self {
            EventKind::DiscoveryStep(f) | EventKind::PacketArrival(f) => f.to_string(),
            EventKind::MacAttempt(n) => n.to_string(),
            EventKind::TransmissionEnd(t) => format!("tx{t}"),
            EventKind::PuTransition(p) => p.to_string(),
            EventKind::HelloTimer | EventKind::ReselectTimer => "-".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub sequence: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.sequence.cmp(&other.sequence))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Future event set ordered by `(time, sequence)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_sequence: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, kind: EventKind) -> u64 {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(Event {
            time,
            sequence,
            kind,
        }));
        sequence
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Delivered,
    BlockedByPu,
    Collided,
    /// The hop succeeded but the receiver's queue was full.
    DroppedQueueOverflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionAttempt {
    pub id: u64,
    pub flow: FlowId,
    pub seq: u64,
    pub size_bits: u32,
    pub group: Vec<NodeId>,
    pub receiver: NodeId,
    pub channel: ChannelId,
    pub nulled_pus: Vec<PuId>,
    pub capacity: f64,
    pub start: f64,
    pub end: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub generated: u64,
    pub delivered: u64,
    pub delivered_bits: u64,
    pub delay_sum: f64,
    pub dropped_no_route: u64,
    pub dropped_overflow: u64,
    pub dropped_retries: u64,
    /// Packets held by a node that is no longer on the flow's route.
    pub dropped_stale: u64,
    /// Packets still queued when the simulation ended.
    pub in_flight: u64,
    /// Group (re)selections made for this flow.
    pub selections: u64,
}

impl FlowStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_no_route + self.dropped_overflow + self.dropped_retries + self.dropped_stale
    }
}

/// A delivered packet: creation and delivery times plus its total air time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub flow: FlowId,
    pub seq: u64,
    pub created: f64,
    pub delivered: f64,
    pub air_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawResults {
    pub protocol: Protocol,
    pub sim_duration: f64,
    /// Network at the end of the run (queues hold the in-flight packets).
    pub state: NetworkState,
    pub flows: Vec<FlowStats>,
    pub attempts: Vec<TransmissionAttempt>,
    pub deliveries: Vec<Delivery>,
    /// Closed ON intervals per PU, clipped to the simulation horizon.
    pub pu_on_intervals: Vec<Vec<(f64, f64)>>,
    pub control: ControlCount,
    pub routes: Vec<Option<RouteEntry>>,
    /// Hello tables held by each node at the end of the run.
    pub knowledge: Knowledge,
    pub pu_deferrals: u64,
    pub carrier_deferrals: u64,
    pub events: u64,
    /// SHA-256 over the event trace, hex encoded.
    pub trace_hash: String,
    /// Tab-separated `(time, kind, actor, detail)` lines when recording.
    pub trace: Option<Vec<String>>,
}

struct Ongoing {
    attempt: TransmissionAttempt,
    sender: NodeId,
    collided: bool,
}

struct Engine<'m> {
    state: NetworkState,
    model: &'m ChannelModel,
    protocol: Protocol,
    router: Router<'m>,
    routes: Vec<Option<RouteEntry>>,
    /// Per flow, per hop: earliest time the hop may transmit.
    hop_ready: Vec<Vec<f64>>,
    events: EventQueue,
    mac_rng: ChaCha8Rng,
    pu_rngs: Vec<ChaCha8Rng>,
    busy_until: Vec<f64>,
    tuned: Vec<ChannelId>,
    mac_pending: Vec<bool>,
    ongoing: BTreeMap<u64, Ongoing>,
    next_tx: u64,
    knowledge: Knowledge,
    control: ControlCount,
    flows: Vec<FlowStats>,
    attempts: Vec<TransmissionAttempt>,
    deliveries: Vec<Delivery>,
    pu_on_since: Vec<Option<f64>>,
    pu_on_intervals: Vec<Vec<(f64, f64)>>,
    pu_deferrals: u64,
    carrier_deferrals: u64,
    hasher: Sha256,
    trace: Option<Vec<String>>,
    processed: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_TOPOLOGY: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_MAC: u64 = 2;
const STREAM_ROUTER: u64 = 3;
const STREAM_PU_BASE: u64 = 1 << 32;

/// Builds the topology and channel model for `config.rng_seed`. Both depend
/// only on the configuration, so every protocol sees the same network.
pub fn build_network(config: &SimConfig) -> Result<(NetworkState, ChannelModel)> {
    let state = build_topology(config, &mut stream_rng(config.rng_seed, STREAM_TOPOLOGY))?;
    let model = sample_coefficients(&state, &mut stream_rng(config.rng_seed, STREAM_CHANNEL));
    Ok((state, model))
}

/// Builds the network for `config` and runs `protocol` on it.
pub fn simulate(config: &SimConfig, protocol: Protocol, record_trace: bool) -> Result<RawResults> {
    let (state, model) = build_network(config)?;
    Ok(run(state, &model, protocol, record_trace))
}

/// Runs the event loop until `sim_duration`.
pub fn run(state: NetworkState, model: &ChannelModel, protocol: Protocol, record_trace: bool) -> RawResults {
    let seed = state.config.rng_seed;
    let n = state.sus.len();
    let num_flows = state.flows.len();
    let num_pus = state.pus.len();
    let tuned = state.sus.iter().map(|s| s.current_send_channel).collect();
    let pu_on_since = state
        .pus
        .iter()
        .map(|p| p.process.is_on().then_some(0.0))
        .collect();
    let router_seed = stream_rng(seed, STREAM_ROUTER).random();
    let mut engine = Engine {
        model,
        protocol,
        router: Router::new(protocol, model, router_seed),
        routes: vec![None; num_flows],
        hop_ready: vec![Vec::new(); num_flows],
        events: EventQueue::new(),
        mac_rng: stream_rng(seed, STREAM_MAC),
        pu_rngs: (0..num_pus)
            .map(|i| stream_rng(seed, STREAM_PU_BASE + i as u64))
            .collect(),
        busy_until: vec![0.0; n],
        tuned,
        mac_pending: vec![false; n],
        ongoing: BTreeMap::new(),
        next_tx: 0,
        knowledge: Knowledge::new(n),
        control: ControlCount::default(),
        flows: vec![FlowStats::default(); num_flows],
        attempts: Vec::new(),
        deliveries: Vec::new(),
        pu_on_since,
        pu_on_intervals: vec![Vec::new(); num_pus],
        pu_deferrals: 0,
        carrier_deferrals: 0,
        hasher: Sha256::new(),
        trace: record_trace.then(Vec::new),
        processed: 0,
        state,
    };
    engine.run();
    engine.finish()
}

impl<'m> Engine<'m> {
    fn cfg(&self) -> &SimConfig {
        &self.state.config
    }

    fn run(&mut self) {
        let duration = self.cfg().sim_duration;
        for f in 0..self.state.flows.len() {
            let t = self.state.flows[f].start_time;
            self.events.push(t, EventKind::DiscoveryStep(FlowId(f as u32)));
        }
        for p in 0..self.state.pus.len() {
            let t = self.state.pus[p].process.next_transition;
            if t <= duration {
                self.events.push(t, EventKind::PuTransition(PuId(p as u32)));
            }
        }
        self.events.push(0.0, EventKind::HelloTimer);
        let reselect = self.cfg().reselect_period;
        if reselect < duration {
            self.events.push(reselect, EventKind::ReselectTimer);
        }

        while let Some(event) = self.events.pop() {
            if event.time > duration {
                break;
            }
            self.state.now = event.time;
            let detail = self.handle(event.kind);
            self.record(&event, &detail);
        }
        self.state.now = duration;
    }

    fn record(&mut self, event: &Event, detail: &str) {
        self.processed += 1;
        let line = format!(
            "{:.9}\t{}\t{}\t{}",
            event.time,
            event.kind.label(),
            event.kind.actor(),
            detail
        );
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        if let Some(trace) = &mut self.trace {
            trace.push(line);
        }
    }

    fn handle(&mut self, kind: EventKind) -> String {
        match kind {
            EventKind::DiscoveryStep(f) => self.on_discovery(f),
            EventKind::PacketArrival(f) => self.on_arrival(f),
            EventKind::MacAttempt(n) => self.on_mac(n),
            EventKind::TransmissionEnd(id) => self.on_tx_end(id),
            EventKind::PuTransition(p) => self.on_pu(p),
            EventKind::HelloTimer => self.on_hello(),
            EventKind::ReselectTimer => self.on_reselect(),
        }
    }

    fn backoff(&mut self) -> f64 {
        let (lo, hi) = (self.cfg().backoff_min, self.cfg().backoff_max);
        if hi > lo {
            self.mac_rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    fn schedule_mac(&mut self, node: NodeId, at: f64) {
        if !self.mac_pending[node.index()] {
            self.mac_pending[node.index()] = true;
            self.events.push(at, EventKind::MacAttempt(node));
        }
    }

    fn discover(&mut self, f: FlowId) -> String {
        let now = self.state.now;
        let (result, control) = self.router.discover(&self.state, f, now);
        self.control += control;
        match result {
            Ok(route) => {
                apply_route(&mut self.state, &route);
                self.flows[f.index()].selections += route.hops.len() as u64;
                self.hop_ready[f.index()] = vec![now; route.hops.len()];
                let detail = format!(
                    "route {} hops bottleneck {:.6e} ctrl {}",
                    route.hops.len(),
                    route.bottleneck(),
                    control.total()
                );
                self.routes[f.index()] = Some(route);
                detail
            }
            Err(e) => format!("failed: {e} ctrl {}", control.total()),
        }
    }

    fn on_discovery(&mut self, f: FlowId) -> String {
        let detail = self.discover(f);
        let now = self.state.now;
        self.events.push(now, EventKind::PacketArrival(f));
        detail
    }

    fn on_arrival(&mut self, f: FlowId) -> String {
        let now = self.state.now;
        let bits = self.cfg().packet_bits();
        let interval = f64::from(bits) / self.state.flows[f.index()].rate;
        self.events.push(now + interval, EventKind::PacketArrival(f));

        let cap = self.cfg().queue_capacity;
        let stats = &mut self.flows[f.index()];
        let seq = stats.generated;
        stats.generated += 1;
        if self.routes[f.index()].is_none() {
            stats.dropped_no_route += 1;
            return format!("pkt {seq} dropped no-route");
        }
        let source = self.state.flows[f.index()].source;
        let queue = &mut self.state.sus[source.index()].queue;
        if queue.len() >= cap {
            stats.dropped_overflow += 1;
            return format!("pkt {seq} dropped overflow");
        }
        queue.push_back(Packet {
            flow: f,
            seq,
            created: now,
            size_bits: bits,
            retries: 0,
            air_time: 0.0,
        });
        self.schedule_mac(source, now);
        format!("pkt {seq} queued at {source}")
    }

    fn on_mac(&mut self, n: NodeId) -> String {
        let now = self.state.now;
        self.mac_pending[n.index()] = false;
        if self.busy_until[n.index()] > now {
            let at = self.busy_until[n.index()];
            self.schedule_mac(n, at);
            return "busy".into();
        }
        let Some(packet) = self.state.sus[n.index()].queue.front().cloned() else {
            return "idle".into();
        };
        let f = packet.flow;
        let hop_index = self.routes[f.index()]
            .as_ref()
            .and_then(|r| r.hops.iter().position(|h| h.sender == n));
        let Some(hop_index) = hop_index else {
            self.state.sus[n.index()].queue.pop_front();
            self.flows[f.index()].dropped_stale += 1;
            self.schedule_mac(n, now);
            return format!("pkt {} dropped stale route", packet.seq);
        };
        let hop = self.routes[f.index()].as_ref().expect("route").hops[hop_index].clone();
        let ready = self.hop_ready[f.index()][hop_index];
        if ready > now {
            self.schedule_mac(n, ready);
            return "hop retuning".into();
        }
        let sel = &hop.selection;
        let channel = sel.channel;
        let participants: Vec<NodeId> = sel.group.iter().copied().chain([hop.receiver]).collect();

        let busy = participants
            .iter()
            .map(|p| self.busy_until[p.index()])
            .fold(now, f64::max);
        if busy > now {
            self.schedule_mac(n, busy);
            return "participants busy".into();
        }

        let c = self.cfg().switch_cost_c;
        // Only send channels are retuned; a receiver listens on any channel.
        let steps = sel
            .group
            .iter()
            .map(|p| self.tuned[p.index()].distance(channel))
            .max()
            .unwrap_or(0);
        if steps > 0 {
            let done = now + c * f64::from(steps);
            for p in &sel.group {
                self.tuned[p.index()] = channel;
                self.busy_until[p.index()] = done;
            }
            self.schedule_mac(n, done);
            return format!("retune {steps} steps to {channel}");
        }

        let sense_range = self.cfg().carrier_sense_range();
        let sensed_before = now - self.cfg().sense_delay;
        let audible = self.ongoing.values().any(|o| {
            o.attempt.channel == channel
                && o.attempt.start <= sensed_before
                && o.attempt.group.iter().any(|&t| {
                    sel.group
                        .iter()
                        .any(|&m| self.state.distance(t, m) <= sense_range)
                })
        });
        if audible {
            self.carrier_deferrals += 1;
            let at = now + self.backoff();
            self.schedule_mac(n, at);
            return "carrier busy".into();
        }

        let (capacity, nulled) = if sel.capacity > 0.0 {
            (sel.capacity, sel.nulled_pus.clone())
        } else {
            (sel.plain_capacity, Vec::new())
        };
        let exposed = self.state.pus.iter().any(|p| {
            p.process.is_on()
                && p.operates_on(channel)
                && !nulled.contains(&p.id)
                && sel.group.iter().any(|&m| self.state.pu_in_range(m, p.id))
        });
        if exposed || capacity <= 0.0 {
            self.pu_deferrals += 1;
            let at = now + self.backoff();
            self.schedule_mac(n, at);
            return "pu active".into();
        }

        let airtime = f64::from(packet.size_bits) / capacity;
        let end = now + airtime;
        let id = self.next_tx;
        self.next_tx += 1;
        let interference = self.cfg().interference_range();
        let mut collided = false;
        for o in self.ongoing.values_mut() {
            if o.attempt.channel != channel {
                continue;
            }
            // A transmitter of either hop within interference range of the
            // other hop's receiver.
            let hits = |senders: &[NodeId], receiver: NodeId| {
                senders
                    .iter()
                    .any(|&t| self.state.distance(t, receiver) <= interference)
            };
            if hits(&sel.group, o.attempt.receiver) || hits(&o.attempt.group, hop.receiver) {
                o.collided = true;
                collided = true;
            }
        }
        for p in &participants {
            self.busy_until[p.index()] = end;
        }
        self.ongoing.insert(
            id,
            Ongoing {
                attempt: TransmissionAttempt {
                    id,
                    flow: f,
                    seq: packet.seq,
                    size_bits: packet.size_bits,
                    group: sel.group.clone(),
                    receiver: hop.receiver,
                    channel,
                    nulled_pus: nulled,
                    capacity,
                    start: now,
                    end,
                    outcome: Outcome::Delivered,
                },
                sender: n,
                collided,
            },
        );
        self.events.push(end, EventKind::TransmissionEnd(id));
        format!(
            "tx{id} start pkt {} {} -> {} on {channel} group {}{}",
            packet.seq,
            n,
            hop.receiver,
            sel.group.len(),
            if collided { " collision" } else { "" }
        )
    }

    fn on_tx_end(&mut self, id: u64) -> String {
        let now = self.state.now;
        let Some(o) = self.ongoing.remove(&id) else {
            return "aborted earlier".into();
        };
        let Ongoing {
            mut attempt,
            sender,
            collided,
        } = o;
        let f = attempt.flow;
        let max_retries = self.cfg().max_retries;
        let detail;
        if collided {
            attempt.outcome = Outcome::Collided;
            let queue = &mut self.state.sus[sender.index()].queue;
            let head = queue.front_mut().expect("packet in transmission");
            head.retries += 1;
            if head.retries > max_retries {
                queue.pop_front();
                self.flows[f.index()].dropped_retries += 1;
                self.schedule_mac(sender, now);
                detail = format!("tx{id} collided, dropped");
            } else {
                let at = now + self.backoff();
                self.schedule_mac(sender, at);
                detail = format!("tx{id} collided, retry");
            }
        } else {
            let mut packet = self.state.sus[sender.index()]
                .queue
                .pop_front()
                .expect("packet in transmission");
            packet.retries = 0;
            packet.air_time += attempt.end - attempt.start;
            let rx = attempt.receiver;
            let dest = self.state.flows[f.index()].destination;
            if rx == dest {
                let stats = &mut self.flows[f.index()];
                stats.delivered += 1;
                stats.delivered_bits += u64::from(packet.size_bits);
                stats.delay_sum += now - packet.created;
                self.deliveries.push(Delivery {
                    flow: f,
                    seq: packet.seq,
                    created: packet.created,
                    delivered: now,
                    air_time: packet.air_time,
                });
                detail = format!("tx{id} delivered pkt {} end-to-end", packet.seq);
            } else if self.state.sus[rx.index()].queue.len() >= self.cfg().queue_capacity {
                attempt.outcome = Outcome::DroppedQueueOverflow;
                self.flows[f.index()].dropped_overflow += 1;
                detail = format!("tx{id} pkt {} dropped overflow at {rx}", packet.seq);
            } else {
                self.state.sus[rx.index()].queue.push_back(packet);
                self.schedule_mac(rx, now);
                detail = format!("tx{id} forwarded to {rx}");
            }
            self.schedule_mac(sender, now);
        }
        self.attempts.push(attempt);
        detail
    }

    fn on_pu(&mut self, p: PuId) -> String {
        let now = self.state.now;
        let duration = self.cfg().sim_duration;
        let changes = self.state.pus[p.index()]
            .process
            .advance(now, &mut self.pu_rngs[p.index()])
            .expect("events are processed in time order");
        for &(t, s) in &changes {
            match s {
                PuState::On => self.pu_on_since[p.index()] = Some(t),
                PuState::Off => {
                    if let Some(start) = self.pu_on_since[p.index()].take() {
                        self.pu_on_intervals[p.index()].push((start, t));
                    }
                }
            }
        }
        let next = self.state.pus[p.index()].process.next_transition;
        if next <= duration {
            self.events.push(next, EventKind::PuTransition(p));
        }
        if !self.state.pus[p.index()].process.is_on() {
            return "off".into();
        }

        // Abort every ongoing transmission exposed to this PU.
        let exposed: Vec<u64> = self
            .ongoing
            .iter()
            .filter(|(_, o)| {
                self.state.pus[p.index()].operates_on(o.attempt.channel)
                    && !o.attempt.nulled_pus.contains(&p)
                    && o.attempt
                        .group
                        .iter()
                        .any(|&m| self.state.pu_in_range(m, p))
            })
            .map(|(&id, _)| id)
            .collect();
        for id in &exposed {
            let mut o = self.ongoing.remove(id).expect("listed above");
            o.attempt.outcome = Outcome::BlockedByPu;
            o.attempt.end = now;
            for m in o.attempt.group.iter().chain([&o.attempt.receiver]) {
                self.busy_until[m.index()] = now;
            }
            let at = now + self.backoff();
            self.schedule_mac(o.sender, at);
            self.attempts.push(o.attempt);
        }
        format!("on, aborted {}", exposed.len())
    }

    fn on_hello(&mut self) -> String {
        let emitted = exchange_hello(&self.state, self.model, &mut self.knowledge);
        self.control.hello += emitted;
        let next = self.state.now + self.cfg().hello_period;
        if next < self.cfg().sim_duration {
            self.events.push(next, EventKind::HelloTimer);
        }
        format!("{emitted} hellos")
    }

    fn on_reselect(&mut self) -> String {
        let now = self.state.now;
        let mut rediscovered = 0;
        let mut changed = 0;
        for f in 0..self.state.flows.len() {
            let fid = FlowId(f as u32);
            if self.state.flows[f].start_time > now {
                continue;
            }
            let Some(route) = self.routes[f].clone() else {
                self.discover(fid);
                rediscovered += 1;
                continue;
            };
            if !self.protocol.reselects() {
                continue;
            }
            let out = self.router.reselect(&self.state, &route, now);
            self.control += out.control;
            self.flows[f].selections += route.hops.len() as u64;
            changed += out.changed;
            for (i, (old, new)) in route.hops.iter().zip(&out.route.hops).enumerate() {
                let moved = old.selection.group != new.selection.group
                    || old.selection.channel != new.selection.channel;
                if !moved {
                    continue;
                }
                let ready = now + out.downtime[i];
                self.hop_ready[f][i] = self.hop_ready[f][i].max(ready);
                for &m in &new.selection.group {
                    if self.tuned[m.index()] != new.selection.channel {
                        self.tuned[m.index()] = new.selection.channel;
                        self.busy_until[m.index()] = self.busy_until[m.index()].max(ready);
                    }
                }
            }
            apply_route(&mut self.state, &out.route);
            self.routes[f] = Some(out.route);
        }
        let next = now + self.cfg().reselect_period;
        if next < self.cfg().sim_duration {
            self.events.push(next, EventKind::ReselectTimer);
        }
        format!("{changed} hops changed, {rediscovered} rediscoveries")
    }

    fn finish(mut self) -> RawResults {
        let duration = self.cfg().sim_duration;
        for (p, since) in self.pu_on_since.iter().enumerate() {
            if let Some(start) = since {
                self.pu_on_intervals[p].push((*start, duration));
            }
        }
        for su in &self.state.sus {
            for packet in &su.queue {
                self.flows[packet.flow.index()].in_flight += 1;
            }
        }
        let digest = self.hasher.finalize();
        let mut trace_hash = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(trace_hash, "{b:02x}");
        }
        RawResults {
            protocol: self.protocol,
            sim_duration: duration,
            state: self.state,
            flows: self.flows,
            attempts: self.attempts,
            deliveries: self.deliveries,
            pu_on_intervals: self.pu_on_intervals,
            control: self.control,
            routes: self.routes,
            knowledge: self.knowledge,
            pu_deferrals: self.pu_deferrals,
            carrier_deferrals: self.carrier_deferrals,
            events: self.processed,
            trace_hash,
            trace: self.trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub goodput_bps: f64,
    pub avg_delay_s: f64,
    pub pdr: f64,
    /// No packet was generated; `pdr` is reported as 1.0.
    pub pdr_zero_sample: bool,
    pub avg_group_size: f64,
    pub overhead_pkts: u64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub collisions: u64,
    pub blocked_by_pu: u64,
    /// Mean number of group (re)selections per flow.
    pub groups_per_flow: f64,
}

pub fn collect(raw: &RawResults) -> MetricsReport {
    let generated: u64 = raw.flows.iter().map(|f| f.generated).sum();
    let delivered: u64 = raw.flows.iter().map(|f| f.delivered).sum();
    let bits: u64 = raw.flows.iter().map(|f| f.delivered_bits).sum();
    let delay_sum: f64 = raw.flows.iter().map(|f| f.delay_sum).sum();
    let (pdr, pdr_zero_sample) = if generated == 0 {
        (1.0, true)
    } else {
        (delivered as f64 / generated as f64, false)
    };
    let avg_group_size = if raw.attempts.is_empty() {
        0.0
    } else {
        raw.attempts.iter().map(|a| a.group.len() as f64).sum::<f64>() / raw.attempts.len() as f64
    };
    let count = |o: Outcome| raw.attempts.iter().filter(|a| a.outcome == o).count() as u64;
    MetricsReport {
        goodput_bps: bits as f64 / raw.sim_duration,
        avg_delay_s: if delivered == 0 {
            0.0
        } else {
            delay_sum / delivered as f64
        },
        pdr,
        pdr_zero_sample,
        avg_group_size,
        overhead_pkts: raw.control.total(),
        generated,
        delivered,
        dropped: raw.flows.iter().map(|f| f.dropped()).sum(),
        in_flight: raw.flows.iter().map(|f| f.in_flight).sum(),
        collisions: count(Outcome::Collided),
        blocked_by_pu: count(Outcome::BlockedByPu),
        groups_per_flow: if raw.flows.is_empty() {
            0.0
        } else {
            raw.flows.iter().map(|f| f.selections as f64).sum::<f64>() / raw.flows.len() as f64
        },
    }
}

/// Delivered transmissions that overlap an ON interval of an in-range PU on
/// their channel which their beamformer does not null.
pub fn overlay_violations(raw: &RawResults) -> Vec<(u64, PuId)> {
    let state = &raw.state;
    let mut out = Vec::new();
    for a in raw.attempts.iter().filter(|a| {
        matches!(a.outcome, Outcome::Delivered | Outcome::DroppedQueueOverflow)
    }) {
        for pu in &state.pus {
            if !pu.operates_on(a.channel)
                || a.nulled_pus.contains(&pu.id)
                || !a.group.iter().any(|&m| state.pu_in_range(m, pu.id))
            {
                continue;
            }
            let overlaps = raw.pu_on_intervals[pu.id.index()]
                .iter()
                .any(|&(on, off)| on < a.end && a.start < off);
            if overlaps {
                out.push((a.id, pu.id));
            }
        }
    }
    out
}
