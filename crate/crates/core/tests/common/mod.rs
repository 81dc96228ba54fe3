//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use htlcsim::engine::{BalanceMove, BalanceOp};
use htlcsim::model::{
    Blacklist, Channel, ChannelEndpoint, ChannelId, EndpointPolicy, Network, Payment, PaymentId, PaymentResult,
    PeerId, Route, RouteHop,
};
use htlcsim::routing::DistanceWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn policy(base: u64, ppm: u64, delta: u32) -> EndpointPolicy {
    EndpointPolicy {
        base_fee_msat: base,
        prop_fee_ppm: ppm,
        timelock_delta: delta,
        min_htlc: 1,
    }
}

pub fn endpoint(owner: usize, balance: u64, policy: EndpointPolicy) -> ChannelEndpoint {
    ChannelEndpoint {
        owner: PeerId(owner),
        balance,
        policy,
    }
}

/// Builds a network from `(peer1, balance1, peer2, balance2)` with one policy everywhere.
pub fn network(n_peers: usize, channels: &[(usize, u64, usize, u64)], pol: EndpointPolicy) -> Network {
    let chans = channels
        .iter()
        .enumerate()
        .map(|(i, &(a, ba, b, bb))| Channel::new(ChannelId(i), endpoint(a, ba, pol), endpoint(b, bb, pol)))
        .collect();
    Network::new(n_peers, chans).unwrap()
}

/// Line 0 - 1 - ... - (n-1), each side holding `balance`.
pub fn line(n_peers: usize, balance: u64, pol: EndpointPolicy) -> Network {
    let chans: Vec<_> = (0..n_peers - 1).map(|i| (i, balance, i + 1, balance)).collect();
    network(n_peers, &chans, pol)
}

pub fn payment(id: usize, sender: usize, receiver: usize, amount: u64, start: u64) -> Payment {
    Payment::new(PaymentId(id), PeerId(sender), PeerId(receiver), amount, start)
}

/// Fee in msat, written out independently of the library.
pub fn oracle_fee_msat(p: &EndpointPolicy, amount: u64) -> u128 {
    p.base_fee_msat as u128 + (p.prop_fee_ppm as u128 * amount as u128 * 1000) / 1_000_000
}

fn forwarding_endpoint(ch: &Channel, from: PeerId) -> &ChannelEndpoint {
    if ch.peer1 == from {
        &ch.endpoint1
    } else {
        &ch.endpoint2
    }
}

fn other_end(ch: &Channel, from: PeerId) -> PeerId {
    if ch.peer1 == from {
        ch.peer2
    } else {
        ch.peer1
    }
}

/// Every simple path from `source` to `target` whose hops each pass the search filter at `amount`.
pub fn enumerate_paths(
    net: &Network,
    source: PeerId,
    target: PeerId,
    amount: u64,
    blacklist: &Blacklist,
) -> Vec<Vec<ChannelId>> {
    let mut out = Vec::new();
    if source == target
        || blacklist.excluded_peer_ids.contains(&source)
        || blacklist.excluded_peer_ids.contains(&target)
    {
        return out;
    }
    let mut visited = vec![false; net.n_peers()];
    let mut path = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn dfs(
        net: &Network,
        at: PeerId,
        source: PeerId,
        target: PeerId,
        amount: u64,
        blacklist: &Blacklist,
        visited: &mut Vec<bool>,
        path: &mut Vec<ChannelId>,
        out: &mut Vec<Vec<ChannelId>>,
    ) {
        if at == target {
            out.push(path.clone());
            return;
        }
        visited[at.0] = true;
        for ch in &net.channels {
            if ch.closed || blacklist.excluded_channel_ids.contains(&ch.id) {
                continue;
            }
            if ch.peer1 != at && ch.peer2 != at {
                continue;
            }
            let next = other_end(ch, at);
            if visited[next.0] || blacklist.excluded_peer_ids.contains(&next) {
                continue;
            }
            let ep = forwarding_endpoint(ch, at);
            let bound = if at == source { ep.balance } else { ch.capacity };
            if bound < amount || amount < ep.policy.min_htlc {
                continue;
            }
            path.push(ch.id);
            dfs(net, next, source, target, amount, blacklist, visited, path, out);
            path.pop();
        }
        visited[at.0] = false;
    }
    dfs(net, source, source, target, amount, blacklist, &mut visited, &mut path, &mut out);
    out
}

/// Path distance: the sender's own hop is free; costs are added receiver-side first.
pub fn oracle_distance(net: &Network, source: PeerId, path: &[ChannelId], amount: u64, w: &DistanceWeights) -> f64 {
    let mut at = source;
    let mut costs = Vec::new();
    for (i, cid) in path.iter().enumerate() {
        let ch = &net.channels[cid.0];
        if i > 0 {
            let p = &forwarding_endpoint(ch, at).policy;
            costs.push(w.fee_weight * oracle_fee_msat(p, amount) as f64 + w.timelock_weight * p.timelock_delta as f64);
        }
        at = other_end(ch, at);
    }
    let mut d = 0.0;
    for c in costs.iter().rev() {
        d += c;
    }
    d
}

/// Best path by (distance, hops, channel ids from the sender), by exhaustive enumeration.
pub fn oracle_best_path(
    net: &Network,
    source: PeerId,
    target: PeerId,
    amount: u64,
    blacklist: &Blacklist,
    w: &DistanceWeights,
) -> Option<(f64, Vec<ChannelId>)> {
    enumerate_paths(net, source, target, amount, blacklist)
        .into_iter()
        .map(|p| (oracle_distance(net, source, &p, amount, w), p))
        .min_by(|(da, pa), (db, pb)| {
            da.total_cmp(db)
                .then(pa.len().cmp(&pb.len()))
                .then(pa.cmp(pb))
        })
}

/// Route with fees and timelocks filled in receiver-first, or `None` if a hop cannot carry its amount.
pub fn oracle_route(net: &Network, source: PeerId, path: &[ChannelId], amount: u64, final_timelock: u32) -> Option<Route> {
    let mut froms = Vec::new();
    let mut at = source;
    for cid in path {
        froms.push(at);
        at = other_end(&net.channels[cid.0], at);
    }
    let k = path.len();
    let mut amounts = vec![0u64; k];
    let mut locks = vec![0u32; k];
    amounts[k - 1] = amount;
    locks[k - 1] = final_timelock;
    for i in (0..k - 1).rev() {
        let next_ep = forwarding_endpoint(&net.channels[path[i + 1].0], froms[i + 1]);
        let fee = oracle_fee_msat(&next_ep.policy, amounts[i + 1]);
        let fee_sat = fee.div_ceil(1000) as u64;
        amounts[i] = amounts[i + 1] + fee_sat;
        locks[i] = locks[i + 1] + next_ep.policy.timelock_delta;
    }
    let mut hops = Vec::new();
    for i in 0..k {
        let ch = &net.channels[path[i].0];
        let ep = forwarding_endpoint(ch, froms[i]);
        let bound = if i == 0 { ep.balance } else { ch.capacity };
        if amounts[i] > bound || amounts[i] < ep.policy.min_htlc {
            return None;
        }
        hops.push(RouteHop {
            channel: path[i],
            from_peer: froms[i],
            to_peer: other_end(ch, froms[i]),
            forward_amount: amounts[i],
            cumulative_timelock: locks[i],
        });
    }
    Some(Route { hops })
}

/// A random small graph with random policies, balances, closures and a random payment.
pub struct RoutingCase {
    pub network: Network,
    pub payment: Payment,
}

pub fn random_routing_case(seed: u64, max_peers: usize, max_channels: usize) -> RoutingCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_peers);
    let m = rng.random_range(1..=max_channels);
    let mut chans = Vec::with_capacity(m);
    for i in 0..m {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let cap: u64 = rng.random_range(1..=200_000);
        let b1 = rng.random_range(0..=cap);
        let mut pol = || EndpointPolicy {
            base_fee_msat: rng.random_range(0..=2000),
            prop_fee_ppm: rng.random_range(0..=5000),
            timelock_delta: rng.random_range(1..=200),
            min_htlc: if rng.random_bool(0.2) { rng.random_range(1..=5000) } else { 1 },
        };
        let (p1, p2) = (pol(), pol());
        let mut ch = Channel::new(ChannelId(i), endpoint(a, b1, p1), endpoint(b, cap - b1, p2));
        ch.closed = rng.random_bool(0.05);
        chans.push(ch);
    }
    let network = Network::new(n, chans).unwrap();
    let s = rng.random_range(0..n);
    let mut r = rng.random_range(0..n - 1);
    if r >= s {
        r += 1;
    }
    let amount = rng.random_range(1..=100_000);
    let mut payment = payment(0, s, r, amount, 0);
    if rng.random_bool(0.3) {
        for _ in 0..rng.random_range(1..=3) {
            if rng.random_bool(0.5) {
                payment.blacklist_channel(ChannelId(rng.random_range(0..m)));
            } else {
                payment.blacklist_peer(PeerId(rng.random_range(0..n)));
            }
        }
    }
    RoutingCase { network, payment }
}

/// (payment, attempt, channel, side), keying (locked, settled, refunded) totals.
type AttemptSide = (usize, u32, usize, usize);

/// Replays a balance journal over `initial` and checks it against the simulated outcome:
/// final balances agree, every failed attempt nets to zero on every channel direction it
/// touched, and a successful attempt settles every HTLC it locked.
pub fn check_journal(initial: &Network, final_net: &Network, payments: &[Payment], journal: &[BalanceMove]) -> Result<(), String> {
    let mut balances: Vec<[u64; 2]> = initial
        .channels
        .iter()
        .map(|c| [c.endpoint1.balance, c.endpoint2.balance])
        .collect();
    let mut per_attempt: BTreeMap<AttemptSide, (u128, u128, u128)> = BTreeMap::new();
    let mut last_time = 0;
    for m in journal {
        if m.time < last_time {
            return Err(format!("journal time went backwards at {m:?}"));
        }
        last_time = m.time;
        let ch = &initial.channels[m.channel.0];
        let side = if ch.peer1 == m.from { 0 } else { 1 };
        let entry = per_attempt.entry((m.payment, m.attempt, m.channel.0, side)).or_default();
        let b = &mut balances[m.channel.0];
        match m.op {
            BalanceOp::Lock => {
                b[side] = b[side].checked_sub(m.amount).ok_or(format!("overdraw at {m:?}"))?;
                entry.0 += m.amount as u128;
            }
            BalanceOp::Settle => {
                b[1 - side] += m.amount;
                entry.1 += m.amount as u128;
            }
            BalanceOp::Refund => {
                b[side] += m.amount;
                entry.2 += m.amount as u128;
            }
        }
    }
    for (c, b) in final_net.channels.iter().zip(&balances) {
        if [c.endpoint1.balance, c.endpoint2.balance] != *b {
            return Err(format!("channel {} replays to {b:?}, simulation has ({}, {})", c.id, c.endpoint1.balance, c.endpoint2.balance));
        }
        if !c.pending.is_empty() {
            return Err(format!("channel {} still holds HTLCs at run end", c.id));
        }
    }
    for (&(pi, attempt, channel, _), &(locked, settled, refunded)) in &per_attempt {
        let p = &payments[pi];
        let winning = p.result == PaymentResult::Success && attempt == p.attempts;
        if winning {
            if settled != locked || refunded != 0 {
                return Err(format!("payment {} attempt {attempt} channel {channel}: success left lock {locked} settle {settled} refund {refunded}", p.id));
            }
        } else if settled != 0 || refunded != locked {
            return Err(format!("payment {} attempt {attempt} channel {channel}: failed attempt not restored (lock {locked} settle {settled} refund {refunded})", p.id));
        }
    }
    if initial.total_funds() != final_net.total_funds() {
        return Err(format!("funds {} became {}", initial.total_funds(), final_net.total_funds()));
    }
    Ok(())
}
