//! Channel selection for cooperative (beamforming) routing in cognitive radio
//! networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: identifiers, nodes, flows, configuration and topology generation.
//! - [`radio`]: slow-fading channel coefficients, zero-forcing beamforming with
//!   primary-user nulling, and Shannon capacity of a cooperative hop.
//! - [`pu`]: ON-OFF primary-user activity processes and the probability that a
//!   surrounding primary user becomes active within a time window.
//! - [`metric`]: the per-hop routing metric and its interference and
//!   channel-switching terms.
//! - [`select`]: channel validity, cooperative group enumeration and the
//!   channel selection procedure (including the minimum-switching fallback).
//! - [`protocols`]: route discovery, hello exchange and periodic re-selection
//!   for CSCR and the two baseline variants.
//! - [`sim`]: the deterministic discrete-event engine and metric collection.
//! - [`experiment`]: configuration files, parameter sweeps and CSV output.

pub mod error;
pub mod experiment;
pub mod metric;
pub mod model;
pub mod protocols;
pub mod pu;
pub mod radio;
pub mod select;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    build_topology, ChannelId, Flow, FlowHop, FlowId, NetworkState, NodeId, Point, PrimaryUser,
    PuId, SecondaryUser, SimConfig,
};
pub use protocols::{Protocol, RouteEntry};
pub use select::SelectionResult;
pub use sim::{collect, run, MetricsReport, RawResults};
