//! Domain types for the channel graph and the payment script.
//!
//! Amounts are integer satoshi, fees are integer millisatoshi (base) and
//! parts-per-million (proportional), times are simulated milliseconds and
//! timelocks are counted in blocks.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in milliseconds.
pub type SimTime = u64;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_newtype!(
    /// Dense peer identifier, also the peer's index in [`Network::peers`].
    PeerId
);
id_newtype!(
    /// Dense channel identifier, also the channel's index in [`Network::channels`].
    ChannelId
);
id_newtype!(
    /// Payment identifier as it appears in `payments.csv`.
    PaymentId
);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("peer {peer} is not an endpoint of channel {channel}")]
    NotAnEndpoint { channel: ChannelId, peer: PeerId },
    #[error("channel {channel}: endpoint of peer {peer} holds {balance} sat, cannot lock {amount} sat")]
    InsufficientBalance {
        channel: ChannelId,
        peer: PeerId,
        balance: u64,
        amount: u64,
    },
    #[error("channel {channel}: no pending HTLC of payment {payment} from peer {peer}")]
    NoPendingHtlc {
        channel: ChannelId,
        payment: PaymentId,
        peer: PeerId,
    },
    #[error("channel {channel}: pending HTLC of payment {payment} holds {locked} sat, not {amount} sat")]
    HtlcAmountMismatch {
        channel: ChannelId,
        payment: PaymentId,
        locked: u64,
        amount: u64,
    },
    #[error("unknown peer {0}")]
    UnknownPeer(PeerId),
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid payment {id}: {reason}")]
    InvalidPayment { id: PaymentId, reason: String },
}

/// Forwarding policy of one channel endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointPolicy {
    pub base_fee_msat: u64,
    pub prop_fee_ppm: u64,
    /// Blocks added to the HTLC timelock by this endpoint. Always at least 1.
    pub timelock_delta: u32,
    pub min_htlc: u64,
}

impl Default for EndpointPolicy {
    fn default() -> Self {
        Self {
            base_fee_msat: 1000,
            prop_fee_ppm: 1000,
            timelock_delta: 144,
            min_htlc: 1,
        }
    }
}

/// One side of a channel: who owns it, how much it can send, and its policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelEndpoint {
    pub owner: PeerId,
    pub balance: u64,
    pub policy: EndpointPolicy,
}

/// Funds locked on a channel while an HTLC is unresolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingHtlc {
    pub payment: PaymentId,
    /// Peer whose endpoint was debited when the HTLC was established.
    pub from: PeerId,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Channel {
    pub id: ChannelId,
    pub peer1: PeerId,
    pub peer2: PeerId,
    pub capacity: u64,
    /// Direction peer1 -> peer2, owned by peer1.
    pub endpoint1: ChannelEndpoint,
    /// Direction peer2 -> peer1, owned by peer2.
    pub endpoint2: ChannelEndpoint,
    pub closed: bool,
    pub pending: Vec<PendingHtlc>,
}

impl Channel {
    /// Builds an open channel with no pending HTLCs; capacity is the sum of the two balances.
    pub fn new(id: ChannelId, endpoint1: ChannelEndpoint, endpoint2: ChannelEndpoint) -> Self {
        Self {
            id,
            peer1: endpoint1.owner,
            peer2: endpoint2.owner,
            capacity: endpoint1.balance + endpoint2.balance,
            endpoint1,
            endpoint2,
            closed: false,
            pending: Vec::new(),
        }
    }

    pub fn has_peer(&self, peer: PeerId) -> bool {
        self.peer1 == peer || self.peer2 == peer
    }

    /// The other endpoint's peer, if `peer` is on this channel.
    pub fn counterparty(&self, peer: PeerId) -> Option<PeerId> {
        if peer == self.peer1 {
            Some(self.peer2)
        } else if peer == self.peer2 {
            Some(self.peer1)
        } else {
            None
        }
    }

    /// The endpoint used to send from `from_peer` towards its counterparty.
    pub fn endpoint_for_direction(&self, from_peer: PeerId) -> Result<&ChannelEndpoint, ModelError> {
        if from_peer == self.peer1 {
            Ok(&self.endpoint1)
        } else if from_peer == self.peer2 {
            Ok(&self.endpoint2)
        } else {
            Err(self.not_an_endpoint(from_peer))
        }
    }

    pub fn endpoint_for_direction_mut(
        &mut self,
        from_peer: PeerId,
    ) -> Result<&mut ChannelEndpoint, ModelError> {
        if from_peer == self.peer1 {
            Ok(&mut self.endpoint1)
        } else if from_peer == self.peer2 {
            Ok(&mut self.endpoint2)
        } else {
            Err(self.not_an_endpoint(from_peer))
        }
    }

    fn not_an_endpoint(&self, peer: PeerId) -> ModelError {
        ModelError::NotAnEndpoint {
            channel: self.id,
            peer,
        }
    }

    pub fn pending_total(&self) -> u64 {
        self.pending.iter().map(|h| h.amount).sum()
    }

    /// Balance plus locked funds equals capacity.
    pub fn is_conserved(&self) -> bool {
        self.endpoint1.balance + self.endpoint2.balance + self.pending_total() == self.capacity
    }

    pub fn pending_htlc(&self, payment: PaymentId, from: PeerId) -> Option<&PendingHtlc> {
        self.pending
            .iter()
            .find(|h| h.payment == payment && h.from == from)
    }

    /// Establishes an HTLC: debits `from_peer`'s endpoint and records the locked amount.
    pub fn lock_htlc(
        &mut self,
        payment: PaymentId,
        from_peer: PeerId,
        amount: u64,
    ) -> Result<(), ModelError> {
        let id = self.id;
        let endpoint = self.endpoint_for_direction_mut(from_peer)?;
        if endpoint.balance < amount {
            return Err(ModelError::InsufficientBalance {
                channel: id,
                peer: from_peer,
                balance: endpoint.balance,
                amount,
            });
        }
        endpoint.balance -= amount;
        self.pending.push(PendingHtlc {
            payment,
            from: from_peer,
            amount,
        });
        Ok(())
    }

    fn take_htlc(&mut self, payment: PaymentId, from_peer: PeerId) -> Result<PendingHtlc, ModelError> {
        self.endpoint_for_direction(from_peer)?;
        let pos = self
            .pending
            .iter()
            .position(|h| h.payment == payment && h.from == from_peer)
            .ok_or(ModelError::NoPendingHtlc {
                channel: self.id,
                payment,
                peer: from_peer,
            })?;
        Ok(self.pending.remove(pos))
    }

    /// Fulfils a pending HTLC: the locked amount moves to the counterparty's balance.
    ///
    /// `amount` must equal the locked amount; the debit already happened at
    /// [`Channel::lock_htlc`].
    pub fn apply_hop_settlement(
        &mut self,
        payment: PaymentId,
        from_peer: PeerId,
        amount: u64,
    ) -> Result<(), ModelError> {
        let locked = self
            .pending_htlc(payment, from_peer)
            .map(|h| h.amount)
            .ok_or(ModelError::NoPendingHtlc {
                channel: self.id,
                payment,
                peer: from_peer,
            })?;
        if locked != amount {
            return Err(ModelError::HtlcAmountMismatch {
                channel: self.id,
                payment,
                locked,
                amount,
            });
        }
        self.settle_htlc(payment, from_peer).map(|_| ())
    }

    /// Fulfils the HTLC of `payment` sent by `from_peer` and returns the settled amount.
    pub fn settle_htlc(&mut self, payment: PaymentId, from_peer: PeerId) -> Result<u64, ModelError> {
        let htlc = self.take_htlc(payment, from_peer)?;
        let to = self
            .counterparty(from_peer)
            .ok_or_else(|| self.not_an_endpoint(from_peer))?;
        self.endpoint_for_direction_mut(to)?.balance += htlc.amount;
        Ok(htlc.amount)
    }

    /// Fails the HTLC of `payment` sent by `from_peer`, returning the funds to the sender side.
    pub fn refund_htlc(&mut self, payment: PaymentId, from_peer: PeerId) -> Result<u64, ModelError> {
        let htlc = self.take_htlc(payment, from_peer)?;
        self.endpoint_for_direction_mut(from_peer)?.balance += htlc.amount;
        Ok(htlc.amount)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Peer {
    pub id: PeerId,
    /// Channels incident to this peer, in ascending id order.
    pub open_channel_ids: Vec<ChannelId>,
}

/// The channel graph: dense peers and channels indexed by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Network {
    pub peers: Vec<Peer>,
    pub channels: Vec<Channel>,
}

impl Network {
    /// Assembles a network from `n_peers` peers and channels whose ids are `0..channels.len()`.
    pub fn new(n_peers: usize, channels: Vec<Channel>) -> Result<Self, ModelError> {
        let mut peers: Vec<Peer> = (0..n_peers)
            .map(|i| Peer {
                id: PeerId(i),
                open_channel_ids: Vec::new(),
            })
            .collect();
        for (i, ch) in channels.iter().enumerate() {
            if ch.id.index() != i {
                return Err(ModelError::InvalidNetwork(format!(
                    "channel at position {i} has id {}; ids must be dense and ordered",
                    ch.id
                )));
            }
            if ch.peer1 == ch.peer2 {
                return Err(ModelError::InvalidNetwork(format!(
                    "channel {} connects peer {} to itself",
                    ch.id, ch.peer1
                )));
            }
            for p in [ch.peer1, ch.peer2] {
                let peer = peers.get_mut(p.index()).ok_or(ModelError::UnknownPeer(p))?;
                peer.open_channel_ids.push(ch.id);
            }
            if ch.endpoint1.owner != ch.peer1 || ch.endpoint2.owner != ch.peer2 {
                return Err(ModelError::InvalidNetwork(format!(
                    "channel {}: endpoint owners do not match channel peers",
                    ch.id
                )));
            }
            if ch.endpoint1.policy.timelock_delta == 0 || ch.endpoint2.policy.timelock_delta == 0 {
                return Err(ModelError::InvalidNetwork(format!(
                    "channel {}: timelock_delta must be at least 1",
                    ch.id
                )));
            }
            if !ch.is_conserved() {
                return Err(ModelError::InvalidNetwork(format!(
                    "channel {}: balances do not add up to capacity {}",
                    ch.id, ch.capacity
                )));
            }
        }
        Ok(Self { peers, channels })
    }

    pub fn n_peers(&self) -> usize {
        self.peers.len()
    }

    pub fn peer(&self, id: PeerId) -> Result<&Peer, ModelError> {
        self.peers.get(id.index()).ok_or(ModelError::UnknownPeer(id))
    }

    pub fn channel(&self, id: ChannelId) -> Result<&Channel, ModelError> {
        self.channels
            .get(id.index())
            .ok_or(ModelError::UnknownChannel(id))
    }

    pub fn channel_mut(&mut self, id: ChannelId) -> Result<&mut Channel, ModelError> {
        self.channels
            .get_mut(id.index())
            .ok_or(ModelError::UnknownChannel(id))
    }

    /// Every satoshi in the graph: endpoint balances plus locked HTLC amounts.
    pub fn total_funds(&self) -> u128 {
        self.channels
            .iter()
            .map(|c| {
                c.endpoint1.balance as u128 + c.endpoint2.balance as u128 + c.pending_total() as u128
            })
            .sum()
    }

    pub fn is_conserved(&self) -> bool {
        self.channels.iter().all(Channel::is_conserved)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentResult {
    Pending,
    Success,
    Fail,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    None,
    NoRoute,
    Unbalanced,
    Uncooperative,
    Timeout,
}

impl PaymentResult {
    pub fn as_str(self) -> &'static str {
        match self {
            PaymentResult::Pending => "pending",
            PaymentResult::Success => "success",
            PaymentResult::Fail => "fail",
            PaymentResult::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pending" => PaymentResult::Pending,
            "success" => PaymentResult::Success,
            "fail" => PaymentResult::Fail,
            "unknown" => PaymentResult::Unknown,
            _ => return None,
        })
    }
}

impl FailReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailReason::None => "none",
            FailReason::NoRoute => "no_route",
            FailReason::Unbalanced => "unbalanced",
            FailReason::Uncooperative => "uncooperative",
            FailReason::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => FailReason::None,
            "no_route" => FailReason::NoRoute,
            "unbalanced" => FailReason::Unbalanced,
            "uncooperative" => FailReason::Uncooperative,
            "timeout" => FailReason::Timeout,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteHop {
    pub channel: ChannelId,
    pub from_peer: PeerId,
    pub to_peer: PeerId,
    /// Amount entering this hop, downstream fees included.
    pub forward_amount: u64,
    pub cumulative_timelock: u32,
}

/// A path proven viable for an amount, ordered sender to receiver.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Route {
    pub hops: Vec<RouteHop>,
}

impl Route {
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn channel_ids(&self) -> Vec<ChannelId> {
        self.hops.iter().map(|h| h.channel).collect()
    }

    /// What the sender pays in total: the amount plus every intermediary fee.
    pub fn sender_debit(&self) -> u64 {
        self.hops.first().map_or(0, |h| h.forward_amount)
    }

    pub fn total_fees(&self) -> u64 {
        match (self.hops.first(), self.hops.last()) {
            (Some(first), Some(last)) => first.forward_amount - last.forward_amount,
            _ => 0,
        }
    }
}

/// Channels and peers excluded from route searches of one payment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Blacklist {
    pub excluded_channel_ids: BTreeSet<ChannelId>,
    pub excluded_peer_ids: BTreeSet<PeerId>,
}

impl Blacklist {
    pub fn is_empty(&self) -> bool {
        self.excluded_channel_ids.is_empty() && self.excluded_peer_ids.is_empty()
    }

    pub fn contains_channel(&self, id: ChannelId) -> bool {
        self.excluded_channel_ids.contains(&id)
    }

    pub fn contains_peer(&self, id: PeerId) -> bool {
        self.excluded_peer_ids.contains(&id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payment {
    pub id: PaymentId,
    pub sender: PeerId,
    pub receiver: PeerId,
    pub amount: u64,
    pub start_time: SimTime,
    pub end_time: Option<SimTime>,
    pub result: PaymentResult,
    pub fail_reason: FailReason,
    pub attempts: u32,
    pub encountered_uncooperative: bool,
    /// Route of the latest attempt.
    pub route: Option<Route>,
    pub blacklist: Blacklist,
}

impl Payment {
    pub fn new(id: PaymentId, sender: PeerId, receiver: PeerId, amount: u64, start_time: SimTime) -> Self {
        Self {
            id,
            sender,
            receiver,
            amount,
            start_time,
            end_time: None,
            result: PaymentResult::Pending,
            fail_reason: FailReason::None,
            attempts: 0,
            encountered_uncooperative: false,
            route: None,
            blacklist: Blacklist::default(),
        }
    }

    pub fn validate(&self, n_peers: usize) -> Result<(), ModelError> {
        let invalid = |reason: String| ModelError::InvalidPayment {
            id: self.id,
            reason,
        };
        if self.sender.index() >= n_peers {
            return Err(invalid(format!("unknown sender {}", self.sender)));
        }
        if self.receiver.index() >= n_peers {
            return Err(invalid(format!("unknown receiver {}", self.receiver)));
        }
        if self.sender == self.receiver {
            return Err(invalid("sender equals receiver".into()));
        }
        if self.amount == 0 {
            return Err(invalid("amount must be positive".into()));
        }
        Ok(())
    }

    pub fn is_pending(&self) -> bool {
        self.result == PaymentResult::Pending
    }

    /// Adds a peer to the blacklist unless it is this payment's sender or receiver.
    pub fn blacklist_peer(&mut self, peer: PeerId) -> bool {
        if peer == self.sender || peer == self.receiver {
            return false;
        }
        self.blacklist.excluded_peer_ids.insert(peer)
    }

    pub fn blacklist_channel(&mut self, channel: ChannelId) -> bool {
        self.blacklist.excluded_channel_ids.insert(channel)
    }
}
