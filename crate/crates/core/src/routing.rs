//! Source routing: a Dijkstra search over fee/timelock distance followed by
//! route construction with per-hop amounts and timelocks.
//!
//! # Distance
//!
//! Traversing channel `c` from peer `u` costs
//! `fee_weight * fee(u's endpoint, amount) + timelock_weight * timelock_delta`,
//! evaluated at the payment amount. The sender charges itself nothing, so
//! the first hop of every path costs zero. A path's distance is the sum of
//! its hop costs.
//!
//! Paths are totally ordered by `(distance, hop count, channel ids from the
//! sender side)`, which makes [`find_path`] deterministic. The search runs
//! backwards from the receiver, so each peer's label is the best suffix to
//! the receiver and ties reduce to comparing the first channel id.
//!
//! # Viability
//!
//! A hop from `u` over `c` is usable for amount `a` when `c` is open, `a`
//! reaches `u`'s `min_htlc`, and `a` fits in the channel capacity (or, for
//! the sender's own first hop, in the sender's local balance). The search
//! checks this at the payment amount; [`new_route`] re-checks every hop at
//! its fee-inclusive amount.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::model::{Blacklist, ChannelEndpoint, ChannelId, Network, Payment, PeerId, Route, RouteHop};

/// Relative weight of fees (per msat) and timelocks (per block) in the path distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceWeights {
    pub fee_weight: f64,
    pub timelock_weight: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        Self {
            fee_weight: 1.0,
            timelock_weight: 10.0,
        }
    }
}

impl DistanceWeights {
    pub fn new(fee_weight: f64, timelock_weight: f64) -> Result<Self, String> {
        let w = Self {
            fee_weight,
            timelock_weight,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.fee_weight) || !ok(self.timelock_weight) {
            return Err("distance weights must be finite and non-negative".into());
        }
        if self.fee_weight == 0.0 && self.timelock_weight == 0.0 {
            return Err("distance weights cannot both be zero".into());
        }
        Ok(())
    }
}

/// Fee in millisatoshi that `endpoint` withholds for forwarding `amount` satoshi.
pub fn fee(endpoint: &ChannelEndpoint, amount: u64) -> u64 {
    let policy = &endpoint.policy;
    // ppm of an msat amount: prop * amount * 1000 / 1e6
    let proportional = match policy.prop_fee_ppm.checked_mul(amount) {
        Some(x) => x / 1000,
        None => ((policy.prop_fee_ppm as u128 * amount as u128) / 1000).min(u64::MAX as u128) as u64,
    };
    policy.base_fee_msat.saturating_add(proportional)
}

/// The fee rounded up to whole satoshi, as charged on a route hop.
pub fn fee_sat_ceil(endpoint: &ChannelEndpoint, amount: u64) -> u64 {
    fee(endpoint, amount).div_ceil(1000)
}

pub fn edge_distance(endpoint: &ChannelEndpoint, amount: u64, weights: &DistanceWeights) -> f64 {
    weights.fee_weight * fee(endpoint, amount) as f64
        + weights.timelock_weight * endpoint.policy.timelock_delta as f64
}

/// Distance of `path` starting at `source`, under the same cost model as [`find_path`].
///
/// Returns `None` if the channels do not chain from `source`.
pub fn path_distance(
    network: &Network,
    source: PeerId,
    path: &[ChannelId],
    amount: u64,
    weights: &DistanceWeights,
) -> Option<f64> {
    let mut at = source;
    let mut costs = Vec::with_capacity(path.len());
    for &cid in path {
        let ch = network.channel(cid).ok()?;
        let next = ch.counterparty(at)?;
        if at != source {
            costs.push(edge_distance(ch.endpoint_for_direction(at).ok()?, amount, weights));
        }
        at = next;
    }
    // Summed receiver-side first, matching the accumulation order of the search.
    Some(costs.iter().rev().fold(0.0, |acc, c| acc + c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Label {
    distance: f64,
    hops: u32,
    /// First channel of the best path from this peer to the target.
    next: ChannelId,
}

impl Label {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.hops.cmp(&other.hops))
            .then(self.next.cmp(&other.next))
    }
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    label: Label,
    peer: PeerId,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .label
            .cmp_key(&self.label)
            .then(other.peer.cmp(&self.peer))
    }
}

/// Whether `from` may push `amount` through channel `cid` during path search.
fn hop_usable<'n>(
    network: &'n Network,
    cid: ChannelId,
    from: PeerId,
    source: PeerId,
    amount: u64,
    blacklist: &Blacklist,
) -> Option<&'n ChannelEndpoint> {
    let ch = network.channel(cid).ok()?;
    if ch.closed || blacklist.contains_channel(cid) {
        return None;
    }
    let endpoint = ch.endpoint_for_direction(from).ok()?;
    let bound = if from == source {
        endpoint.balance
    } else {
        ch.capacity
    };
    (bound >= amount && amount >= endpoint.policy.min_htlc).then_some(endpoint)
}

/// Minimum-distance path from `source` to `target`, as a list of channel ids.
///
/// Returns `None` when the target is unreachable over usable hops, or when
/// either end is blacklisted.
pub fn find_path(
    network: &Network,
    source: PeerId,
    target: PeerId,
    amount: u64,
    blacklist: &Blacklist,
    weights: &DistanceWeights,
) -> Option<Vec<ChannelId>> {
    let n = network.n_peers();
    if source == target || source.index() >= n || target.index() >= n {
        return None;
    }
    if blacklist.contains_peer(source) || blacklist.contains_peer(target) {
        return None;
    }

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    let origin = Label {
        distance: 0.0,
        hops: 0,
        next: ChannelId(usize::MAX),
    };
    labels[target.index()] = Some(origin);
    heap.push(HeapEntry {
        label: origin,
        peer: target,
    });

    while let Some(HeapEntry { label, peer: v }) = heap.pop() {
        if settled[v.index()] || labels[v.index()] != Some(label) {
            continue;
        }
        settled[v.index()] = true;
        if v == source {
            break;
        }
        for &cid in &network.peers[v.index()].open_channel_ids {
            let ch = &network.channels[cid.index()];
            let Some(u) = ch.counterparty(v) else { continue };
            if settled[u.index()] || blacklist.contains_peer(u) {
                continue;
            }
            let Some(endpoint) = hop_usable(network, cid, u, source, amount, blacklist) else {
                continue;
            };
            let cost = if u == source {
                0.0
            } else {
                edge_distance(endpoint, amount, weights)
            };
            let candidate = Label {
                distance: label.distance + cost,
                hops: label.hops + 1,
                next: cid,
            };
            let better = labels[u.index()]
                .is_none_or(|cur| candidate.cmp_key(&cur) == Ordering::Less);
            if better {
                labels[u.index()] = Some(candidate);
                heap.push(HeapEntry {
                    label: candidate,
                    peer: u,
                });
            }
        }
    }

    if !settled[source.index()] {
        return None;
    }
    let mut path = Vec::new();
    let mut at = source;
    while at != target {
        let cid = labels[at.index()]?.next;
        path.push(cid);
        at = network.channels[cid.index()].counterparty(at)?;
    }
    Some(path)
}

/// Turns a path into a route for `amount`, or `None` if some hop cannot carry it.
///
/// Amounts and timelocks are filled in from the receiver backwards: the last
/// hop carries exactly `amount` with `final_timelock`; every earlier hop adds
/// the fee (rounded up to satoshi) and timelock delta of the peer forwarding
/// the next hop.
pub fn new_route(
    network: &Network,
    source: PeerId,
    path: &[ChannelId],
    amount: u64,
    final_timelock: u32,
) -> Option<Route> {
    if path.is_empty() {
        return None;
    }
    let mut hops = Vec::with_capacity(path.len());
    let mut at = source;
    for &cid in path {
        let ch = network.channel(cid).ok()?;
        let to = ch.counterparty(at)?;
        hops.push(RouteHop {
            channel: cid,
            from_peer: at,
            to_peer: to,
            forward_amount: 0,
            cumulative_timelock: 0,
        });
        at = to;
    }

    let mut forward = amount;
    let mut timelock = final_timelock;
    for i in (0..hops.len()).rev() {
        hops[i].forward_amount = forward;
        hops[i].cumulative_timelock = timelock;

        let ch = &network.channels[hops[i].channel.index()];
        let endpoint = ch.endpoint_for_direction(hops[i].from_peer).ok()?;
        let bound = if i == 0 { endpoint.balance } else { ch.capacity };
        if bound < forward || forward < endpoint.policy.min_htlc {
            return None;
        }
        if i > 0 {
            forward = forward.checked_add(fee_sat_ceil(endpoint, forward))?;
            timelock = timelock.checked_add(endpoint.policy.timelock_delta)?;
        }
    }
    Some(Route { hops })
}

/// Finds a route for `payment`, avoiding everything in `blacklist`.
pub fn find_route(
    payment: &Payment,
    network: &Network,
    blacklist: &Blacklist,
    weights: &DistanceWeights,
    final_timelock: u32,
) -> Option<Route> {
    let path = find_path(
        network,
        payment.sender,
        payment.receiver,
        payment.amount,
        blacklist,
        weights,
    )?;
    new_route(network, payment.sender, &path, payment.amount, final_timelock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Channel, EndpointPolicy, PaymentId};

    fn policy(base: u64, ppm: u64, delta: u32) -> EndpointPolicy {
        EndpointPolicy {
            base_fee_msat: base,
            prop_fee_ppm: ppm,
            timelock_delta: delta,
            min_htlc: 1,
        }
    }

    fn ep(owner: usize, balance: u64, policy: EndpointPolicy) -> ChannelEndpoint {
        ChannelEndpoint {
            owner: PeerId(owner),
            balance,
            policy,
        }
    }

    /// Channels given as (peer1, peer2, balance each side, policy for both sides).
    fn network(n: usize, edges: &[(usize, usize, u64, EndpointPolicy)]) -> Network {
        let channels = edges
            .iter()
            .enumerate()
            .map(|(i, &(a, b, bal, pol))| Channel::new(ChannelId(i), ep(a, bal, pol), ep(b, bal, pol)))
            .collect();
        Network::new(n, channels).unwrap()
    }

    #[test]
    fn fee_formula() {
        assert_eq!(fee(&ep(0, 0, policy(0, 0, 1)), 123_456), 0);
        assert_eq!(fee(&ep(0, 0, policy(1000, 100, 1)), 1_000_000), 101_000);
        assert_eq!(fee(&ep(0, 0, policy(1000, 1000, 1)), 100_000), 101_000);
        assert_eq!(fee_sat_ceil(&ep(0, 0, policy(1000, 1000, 1)), 100_101), 102);
    }

    #[test]
    fn edge_distance_projections() {
        let e = ep(0, 0, policy(1000, 100, 144));
        let fee_only = DistanceWeights::new(1.0, 0.0).unwrap();
        let lock_only = DistanceWeights::new(0.0, 1.0).unwrap();
        assert_eq!(edge_distance(&e, 1_000_000, &fee_only), 101_000.0);
        assert_eq!(edge_distance(&e, 1_000_000, &lock_only), 144.0);
        let both = DistanceWeights::new(1.0, 10.0).unwrap();
        assert_eq!(edge_distance(&e, 1_000_000, &both), 102_440.0);
        assert!(DistanceWeights::new(0.0, 0.0).is_err());
        assert!(DistanceWeights::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn line_graph_has_unique_path() {
        let p = EndpointPolicy::default();
        let net = network(4, &[(0, 1, 1_000_000, p), (1, 2, 1_000_000, p), (2, 3, 1_000_000, p)]);
        let path = find_path(&net, PeerId(0), PeerId(3), 1000, &Blacklist::default(), &DistanceWeights::default());
        assert_eq!(path, Some(vec![ChannelId(0), ChannelId(1), ChannelId(2)]));
    }

    #[test]
    fn cheaper_branch_wins() {
        let cheap = policy(0, 0, 10);
        let pricey = policy(50_000, 0, 10);
        // 0-1-3 through an expensive forwarder, 0-2-3 through a cheap one.
        let net = network(
            5,
            &[
                (0, 1, 1_000_000, pricey),
                (1, 3, 1_000_000, pricey),
                (0, 2, 1_000_000, cheap),
                (2, 3, 1_000_000, cheap),
                (3, 4, 1_000_000, cheap),
            ],
        );
        let path = find_path(&net, PeerId(0), PeerId(4), 1000, &Blacklist::default(), &DistanceWeights::default());
        assert_eq!(path, Some(vec![ChannelId(2), ChannelId(3), ChannelId(4)]));
    }

    #[test]
    fn blacklisted_target_or_channel_blocks() {
        let p = EndpointPolicy::default();
        let net = network(3, &[(0, 1, 1_000_000, p), (1, 2, 1_000_000, p)]);
        let mut bl = Blacklist::default();
        bl.excluded_peer_ids.insert(PeerId(2));
        assert_eq!(find_path(&net, PeerId(0), PeerId(2), 10, &bl, &DistanceWeights::default()), None);
        let mut bl = Blacklist::default();
        bl.excluded_channel_ids.insert(ChannelId(1));
        assert_eq!(find_path(&net, PeerId(0), PeerId(2), 10, &bl, &DistanceWeights::default()), None);
        let mut bl = Blacklist::default();
        bl.excluded_peer_ids.insert(PeerId(1));
        assert_eq!(find_path(&net, PeerId(0), PeerId(2), 10, &bl, &DistanceWeights::default()), None);
    }

    #[test]
    fn ties_prefer_fewer_hops_then_lower_channel_id() {
        let free = policy(0, 0, 1);
        let w = DistanceWeights::new(1.0, 0.0).unwrap();
        // Two direct parallel channels 0-1 (ids 1 and 2), plus a zero-cost 2-hop detour.
        let net = network(3, &[(0, 2, 100, free), (0, 1, 100, free), (0, 1, 100, free), (2, 1, 100, free)]);
        let path = find_path(&net, PeerId(0), PeerId(1), 10, &Blacklist::default(), &w);
        assert_eq!(path, Some(vec![ChannelId(1)]));
    }

    #[test]
    fn new_route_accumulates_fees_and_timelocks() {
        let p = policy(1000, 1000, 144);
        let net = network(4, &[(0, 1, 1_000_000, p), (1, 2, 1_000_000, p), (2, 3, 1_000_000, p)]);
        let route = new_route(&net, PeerId(0), &[ChannelId(0), ChannelId(1), ChannelId(2)], 100_000, 144).unwrap();
        let amounts: Vec<u64> = route.hops.iter().map(|h| h.forward_amount).collect();
        assert_eq!(amounts, vec![100_203, 100_101, 100_000]);
        let locks: Vec<u32> = route.hops.iter().map(|h| h.cumulative_timelock).collect();
        assert_eq!(locks, vec![432, 288, 144]);
        assert_eq!(route.total_fees(), 203);
    }

    #[test]
    fn timelocks_count_down_towards_the_receiver() {
        // One "day" per hop: 3, 2, 1 from sender to receiver.
        let p = policy(0, 0, 1);
        let net = network(4, &[(0, 1, 10, p), (1, 2, 10, p), (2, 3, 10, p)]);
        let route = new_route(&net, PeerId(0), &[ChannelId(0), ChannelId(1), ChannelId(2)], 5, 1).unwrap();
        let locks: Vec<u32> = route.hops.iter().map(|h| h.cumulative_timelock).collect();
        assert_eq!(locks, vec![3, 2, 1]);
    }

    #[test]
    fn single_hop_route_has_no_fee() {
        let p = EndpointPolicy::default();
        let net = network(2, &[(0, 1, 1_000_000, p)]);
        let route = new_route(&net, PeerId(0), &[ChannelId(0)], 5000, 144).unwrap();
        assert_eq!(route.hops.len(), 1);
        assert_eq!(route.hops[0].forward_amount, 5000);
        assert_eq!(route.total_fees(), 0);
    }

    #[test]
    fn new_route_rejects_hops_that_cannot_carry_the_fees() {
        let p = policy(1000, 1000, 144);
        // Capacity 200_200 on the first hop: enough for 100_000 but the sender's
        // balance (100_100) falls short of the fee-inclusive 100_203.
        let net = network(3, &[(0, 1, 100_100, p), (1, 2, 1_000_000, p)]);
        assert!(new_route(&net, PeerId(0), &[ChannelId(0), ChannelId(1)], 100_000, 144).is_none());
    }

    #[test]
    fn find_route_fails_when_capacity_is_short() {
        let p = EndpointPolicy::default();
        let net = network(3, &[(0, 1, 100, p), (1, 2, 100, p)]);
        let payment = Payment::new(PaymentId(0), PeerId(0), PeerId(2), 500, 0);
        assert!(find_route(&payment, &net, &Blacklist::default(), &DistanceWeights::default(), 144).is_none());
        let disconnected = network(4, &[(0, 1, 1000, p), (2, 3, 1000, p)]);
        let payment = Payment::new(PaymentId(0), PeerId(0), PeerId(3), 5, 0);
        assert!(find_route(&payment, &disconnected, &Blacklist::default(), &DistanceWeights::default(), 144).is_none());
    }

    #[test]
    fn sender_hop_is_bounded_by_local_balance() {
        let p = EndpointPolicy::default();
        let mut net = network(2, &[(0, 1, 1_000, p)]);
        net.channels[0].endpoint1.balance = 10;
        net.channels[0].endpoint2.balance = 1_990;
        let bl = Blacklist::default();
        let w = DistanceWeights::default();
        assert!(find_path(&net, PeerId(0), PeerId(1), 11, &bl, &w).is_none());
        assert!(find_path(&net, PeerId(0), PeerId(1), 10, &bl, &w).is_some());
        assert!(find_path(&net, PeerId(1), PeerId(0), 1_990, &bl, &w).is_some());
    }
}
