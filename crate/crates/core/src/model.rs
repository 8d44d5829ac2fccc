//! Identifiers, network entities, global configuration and topology generation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pu::PuProcess;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $inner:ty, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        pub struct $name(pub $inner);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Secondary user identifier, dense over `0..num_sus`.
    NodeId,
    u32,
    "su"
);
id_type!(
    /// Primary user identifier, dense over `0..num_pus`.
    PuId,
    u32,
    "pu"
);
id_type!(
    /// Channel index. Adjacent indices are adjacent frequencies.
    ChannelId,
    u16,
    "ch"
);
id_type!(FlowId, u32, "flow");

impl ChannelId {
    /// Number of channel steps between two channels.
    pub fn distance(self, other: ChannelId) -> u32 {
        u32::from(self.0.abs_diff(other.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }
}

/// A data packet buffered at a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub flow: FlowId,
    pub seq: u64,
    /// Creation time at the source, seconds.
    pub created: f64,
    pub size_bits: u32,
    /// Failed (collided) attempts on the current hop.
    pub retries: u32,
    /// Accumulated air time along the route so far, seconds.
    pub air_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondaryUser {
    pub id: NodeId,
    pub position: Point,
    pub tx_range: f64,
    pub current_send_channel: ChannelId,
    pub available_channels: BTreeSet<ChannelId>,
    /// Watts.
    pub max_power: f64,
    pub queue: VecDeque<Packet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimaryUser {
    pub id: PuId,
    pub position: Point,
    pub tx_range: f64,
    pub active_channels: BTreeSet<ChannelId>,
    pub process: PuProcess,
}

impl PrimaryUser {
    pub fn new(
        id: PuId,
        position: Point,
        tx_range: f64,
        channel: ChannelId,
        process: PuProcess,
    ) -> Self {
        Self {
            id,
            position,
            tx_range,
            active_channels: BTreeSet::from([channel]),
            process,
        }
    }

    pub fn operates_on(&self, channel: ChannelId) -> bool {
        self.active_channels.contains(&channel)
    }
}

/// One hop of an established flow: `group` (sender first) transmits to
/// `receiver` on `channel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowHop {
    pub sender: NodeId,
    pub group: Vec<NodeId>,
    pub receiver: NodeId,
    pub channel: ChannelId,
}

impl FlowHop {
    pub fn involves(&self, node: NodeId) -> bool {
        self.receiver == node || self.group.contains(&node)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub id: FlowId,
    pub source: NodeId,
    pub destination: NodeId,
    /// Bits per second offered by the source.
    pub rate: f64,
    /// Time at which the source starts generating traffic.
    pub start_time: f64,
    pub hops: Vec<FlowHop>,
    pub active: bool,
}

impl Flow {
    pub fn channel_in_use_per_hop(&self) -> BTreeMap<usize, ChannelId> {
        self.hops
            .iter()
            .enumerate()
            .map(|(i, h)| (i, h.channel))
            .collect()
    }
}

/// Simulation parameters. Defaults are the nominal evaluation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_sus: usize,
    pub num_pus: usize,
    pub num_channels: usize,
    pub num_flows: usize,
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    pub su_range: f64,
    pub pu_range: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Bytes.
    pub packet_size: usize,
    /// Long-run fraction of time a primary user is ON.
    pub pu_activity: f64,
    pub beta: f64,
    /// Look-ahead window of the PU activity probability, seconds.
    pub tau: f64,
    /// Seconds per channel step.
    pub switch_cost_c: f64,
    pub hello_period: f64,
    pub reselect_period: f64,
    pub sim_duration: f64,
    pub rng_seed: u64,

    /// Bits per second per source.
    pub data_rate: f64,
    /// Watts, total transmit power of a hop.
    pub max_power: f64,
    pub path_loss_exponent: f64,
    /// A single-node link at this distance has SNR `snr_ref_db`.
    pub snr_ref_distance: f64,
    pub snr_ref_db: f64,
    pub max_group_size: usize,
    /// Helpers considered per hop, strongest first.
    pub max_helpers: usize,
    /// 0 gives every node all channels; otherwise a random subset of this size.
    pub channels_per_node: usize,
    /// Interference range as a multiple of the SU transmission range.
    pub interference_factor: f64,
    /// Carrier-sense range as a multiple of the SU transmission range.
    pub carrier_sense_factor: f64,
    /// Seconds before a starting transmission can be sensed by others.
    pub sense_delay: f64,
    pub queue_capacity: usize,
    pub max_retries: u32,
    pub backoff_min: f64,
    pub backoff_max: f64,
    pub ttl: usize,
    /// Mean ON period of a primary user before jitter, seconds.
    pub pu_mean_on: f64,
    /// Relative jitter applied to both PU period means.
    pub pu_jitter: f64,
    /// Flows start uniformly within `[0, flow_start_window)`.
    pub flow_start_window: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_sus: 25,
            num_pus: 8,
            num_channels: 5,
            num_flows: 8,
            area_side: 250.0,
            su_range: 125.0,
            pu_range: 140.0,
            bandwidth: 1.5e6,
            packet_size: 512,
            pu_activity: 0.4,
            beta: 0.5,
            tau: 0.1,
            switch_cost_c: 1e-3,
            hello_period: 1.0,
            reselect_period: 1.0,
            sim_duration: 20.0,
            rng_seed: 1,
            data_rate: 100e3,
            max_power: 0.1,
            path_loss_exponent: 3.0,
            snr_ref_distance: 60.0,
            snr_ref_db: 10.0,
            max_group_size: 6,
            max_helpers: 8,
            channels_per_node: 0,
            interference_factor: 2.0,
            carrier_sense_factor: 2.0,
            sense_delay: 20e-6,
            queue_capacity: 50,
            max_retries: 4,
            backoff_min: 1e-3,
            backoff_max: 10e-3,
            ttl: 10,
            pu_mean_on: 1.0,
            pu_jitter: 0.5,
            flow_start_window: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(msg: String) -> Result<()> {
            Err(Error::InvalidConfig(msg))
        }
        let positive = [
            ("area_side", self.area_side),
            ("su_range", self.su_range),
            ("pu_range", self.pu_range),
            ("bandwidth", self.bandwidth),
            ("tau", self.tau),
            ("switch_cost_c", self.switch_cost_c),
            ("hello_period", self.hello_period),
            ("reselect_period", self.reselect_period),
            ("sim_duration", self.sim_duration),
            ("data_rate", self.data_rate),
            ("max_power", self.max_power),
            ("path_loss_exponent", self.path_loss_exponent),
            ("snr_ref_distance", self.snr_ref_distance),
            ("interference_factor", self.interference_factor),
            ("carrier_sense_factor", self.carrier_sense_factor),
            ("backoff_min", self.backoff_min),
            ("pu_mean_on", self.pu_mean_on),
            ("flow_start_window", self.flow_start_window),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return bad(format!("{name} must be positive and finite, got {value}"));
            }
        }
        if self.num_channels == 0 || self.num_channels > usize::from(u16::MAX) {
            return bad(format!("num_channels out of range: {}", self.num_channels));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        if !(self.pu_activity > 0.0 && self.pu_activity < 1.0) {
            return bad(format!("pu_activity must lie in (0, 1), got {}", self.pu_activity));
        }
        if !(0.0..1.0).contains(&self.pu_jitter) {
            return bad(format!("pu_jitter must lie in [0, 1), got {}", self.pu_jitter));
        }
        if self.packet_size == 0 {
            return bad("packet_size must be positive".into());
        }
        if self.max_group_size == 0 {
            return bad("max_group_size must be at least 1".into());
        }
        if self.channels_per_node > self.num_channels {
            return bad(format!(
                "channels_per_node {} exceeds num_channels {}",
                self.channels_per_node, self.num_channels
            ));
        }
        if !(self.sense_delay >= 0.0 && self.sense_delay.is_finite()) {
            return bad(format!("sense_delay must be non-negative, got {}", self.sense_delay));
        }
        if self.backoff_max < self.backoff_min {
            return bad("backoff_max must not be below backoff_min".into());
        }
        if self.ttl == 0 {
            return bad("ttl must be at least 1".into());
        }
        if self.num_flows > 0 && self.num_sus < 2 {
            return bad(format!(
                "{} flows need at least two secondary users, have {}",
                self.num_flows, self.num_sus
            ));
        }
        Ok(())
    }

    pub fn interference_range(&self) -> f64 {
        self.su_range * self.interference_factor
    }

    pub fn carrier_sense_range(&self) -> f64 {
        self.su_range * self.carrier_sense_factor
    }

    pub fn packet_bits(&self) -> u32 {
        (self.packet_size * 8) as u32
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelId> {
        (0..self.num_channels as u16).map(ChannelId)
    }
}

/// Everything that exists in one simulated network, plus the event clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub config: SimConfig,
    pub sus: Vec<SecondaryUser>,
    pub pus: Vec<PrimaryUser>,
    pub flows: Vec<Flow>,
    /// Simulation clock, seconds.
    pub now: f64,
}

/// Places nodes uniformly in the square area, assigns one licensed channel
/// per primary user and picks flow endpoints uniformly.
pub fn build_topology<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<NetworkState> {
    config.validate()?;
    let side = config.area_side;
    let k = config.num_channels;

    let mut sus = Vec::with_capacity(config.num_sus);
    for i in 0..config.num_sus {
        let position = Point::new(rng.random_range(0.0..side), rng.random_range(0.0..side));
        let available: BTreeSet<ChannelId> = if config.channels_per_node == 0 {
            config.channels().collect()
        } else {
            sample(rng, k, config.channels_per_node)
                .into_iter()
                .map(|c| ChannelId(c as u16))
                .collect()
        };
        let pick = rng.random_range(0..available.len());
        let current = *available.iter().nth(pick).expect("non-empty channel set");
        sus.push(SecondaryUser {
            id: NodeId(i as u32),
            position,
            tx_range: config.su_range,
            current_send_channel: current,
            available_channels: available,
            max_power: config.max_power,
            queue: VecDeque::new(),
        });
    }

    let mut pus = Vec::with_capacity(config.num_pus);
    for i in 0..config.num_pus {
        let position = Point::new(rng.random_range(0.0..side), rng.random_range(0.0..side));
        let channel = ChannelId(rng.random_range(0..k) as u16);
        let process = PuProcess::from_activity(
            config.pu_activity,
            config.pu_mean_on,
            config.pu_jitter,
            rng,
        )?;
        pus.push(PrimaryUser::new(
            PuId(i as u32),
            position,
            config.pu_range,
            channel,
            process,
        ));
    }

    let mut flows = Vec::with_capacity(config.num_flows);
    for i in 0..config.num_flows {
        let n = config.num_sus;
        let source = rng.random_range(0..n);
        let mut destination = rng.random_range(0..n - 1);
        if destination >= source {
            destination += 1;
        }
        flows.push(Flow {
            id: FlowId(i as u32),
            source: NodeId(source as u32),
            destination: NodeId(destination as u32),
            rate: config.data_rate,
            start_time: rng.random_range(0.0..config.flow_start_window),
            hops: Vec::new(),
            active: false,
        });
    }

    Ok(NetworkState {
        config: config.clone(),
        sus,
        pus,
        flows,
        now: 0.0,
    })
}

impl NetworkState {
    /// A hand-placed network with every SU holding all channels and starting
    /// on channel 0. Intended for tests and small scenarios.
    pub fn from_positions(
        config: &SimConfig,
        su_positions: &[Point],
        pus: Vec<PrimaryUser>,
    ) -> Result<Self> {
        let sus = su_positions
            .iter()
            .enumerate()
            .map(|(i, &position)| SecondaryUser {
                id: NodeId(i as u32),
                position,
                tx_range: config.su_range,
                current_send_channel: ChannelId(0),
                available_channels: config.channels().collect(),
                max_power: config.max_power,
                queue: VecDeque::new(),
            })
            .collect();
        let mut config = config.clone();
        config.num_sus = su_positions.len();
        config.num_pus = pus.len();
        config.num_flows = 0;
        Ok(Self {
            config,
            sus,
            pus,
            flows: Vec::new(),
            now: 0.0,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.config.num_channels
    }

    pub fn su(&self, id: NodeId) -> Result<&SecondaryUser> {
        self.sus.get(id.index()).ok_or(Error::UnknownNode(id))
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.sus[a.index()]
            .position
            .distance(&self.sus[b.index()].position)
    }

    pub fn pu_distance(&self, su: NodeId, pu: PuId) -> f64 {
        self.sus[su.index()]
            .position
            .distance(&self.pus[pu.index()].position)
    }

    pub fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.distance(a, b) <= self.sus[a.index()].tx_range
    }

    /// Whether `su` lies inside the protection region of `pu`.
    pub fn pu_in_range(&self, su: NodeId, pu: PuId) -> bool {
        self.pu_distance(su, pu) <= self.pus[pu.index()].tx_range
    }

    pub fn neighbors(&self, n: NodeId) -> Result<BTreeSet<NodeId>> {
        self.su(n)?;
        Ok(self
            .sus
            .iter()
            .map(|s| s.id)
            .filter(|&m| self.in_range(n, m))
            .collect())
    }

    /// Neighbors of both `a` and `b`, excluding `a` and `b`.
    pub fn common_neighbors(&self, a: NodeId, b: NodeId) -> Vec<NodeId> {
        self.sus
            .iter()
            .map(|s| s.id)
            .filter(|&m| m != a && m != b && self.in_range(a, m) && self.in_range(b, m))
            .collect()
    }

    /// Primary users licensed on `channel` whose protection region covers
    /// at least one of `members`, in id order.
    pub fn sensed_pus(&self, members: &[NodeId], channel: ChannelId) -> Vec<PuId> {
        self.pus
            .iter()
            .filter(|p| p.operates_on(channel))
            .filter(|p| members.iter().any(|&m| self.pu_in_range(m, p.id)))
            .map(|p| p.id)
            .collect()
    }

    /// Active flows, other than `exclude`, in which `node` transmits or receives.
    pub fn flows_at(&self, node: NodeId, exclude: Option<FlowId>) -> impl Iterator<Item = &Flow> {
        self.flows.iter().filter(move |f| {
            f.active && Some(f.id) != exclude && f.hops.iter().any(|h| h.involves(node))
        })
    }

    /// Channels used by `node` as a transmitter on active flows other than `exclude`.
    ///
    /// With `skip_hop`, only that hop of flow `exclude` is ignored; otherwise
    /// the whole flow is.
    pub fn send_channels_at(
        &self,
        node: NodeId,
        exclude: Option<FlowId>,
        skip_hop: Option<usize>,
    ) -> impl Iterator<Item = ChannelId> + '_ {
        self.flows
            .iter()
            .filter(move |f| f.active && (skip_hop.is_some() || Some(f.id) != exclude))
            .flat_map(move |f| {
                f.hops
                    .iter()
                    .enumerate()
                    .filter(move |&(i, _)| Some(f.id) != exclude || Some(i) != skip_hop)
                    .map(|(_, h)| h)
            })
            .filter(move |h| h.group.contains(&node))
            .map(|h| h.channel)
    }
}
