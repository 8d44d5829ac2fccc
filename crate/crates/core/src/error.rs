use thiserror::Error;

use crate::model::{ChannelId, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("cooperative group is empty")]
    EmptyGroup,

    #[error("receiver {0} is a member of the transmitting group")]
    ReceiverInGroup(NodeId),

    #[error("negative time window tau = {0}")]
    NegativeTau(f64),

    #[error("time regression: now = {now} precedes last transition at {last}")]
    TimeRegression { now: f64, last: f64 },

    #[error("channel {channel} is not available at node {node}")]
    ChannelUnavailable { node: NodeId, channel: ChannelId },

    #[error("receiver {receiver} is unreachable from relay {relay}")]
    Unreachable { relay: NodeId, receiver: NodeId },

    #[error("source and destination are both {0}")]
    SelfRoute(NodeId),

    #[error("no route from {from} to {destination} within {ttl} hops")]
    NoRoute {
        from: NodeId,
        destination: NodeId,
        ttl: usize,
    },

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
