//! Discrete-event execution of a payment script over a channel graph.
//!
//! Every payment starts with a `FindRoute` event at its start time. The
//! event kinds and who processes them:
//!
//! | kind              | processed by               | effect                                               |
//! |-------------------|----------------------------|------------------------------------------------------|
//! | `FindRoute`       | sender                     | search a route, or finalize the payment as failed    |
//! | `SendPayment`     | sender                     | lock the first-hop HTLC                              |
//! | `ForwardPayment`  | intermediary `hops[i].from`| cooperation draw, lock the HTLC on hop `i`           |
//! | `ReceivePayment`  | receiver                   | cooperation draw, settle the last HTLC               |
//! | `ForwardSuccess`  | intermediary `hops[i].from`| settle the HTLC on hop `i - 1`                       |
//! | `ForwardFail`     | intermediary `hops[i].from`| refund the HTLC on hop `i`                           |
//! | `ReceiveSuccess`  | sender                     | finalize as success                                  |
//! | `ReceiveFail`     | sender                     | refund hop 0, blacklist the culprit, search again    |
//!
//! Each message between peers takes a latency drawn uniformly from
//! `[latency_min_ms, latency_max_ms]`. Route search and local failures are
//! instantaneous.
//!
//! A peer that is uncooperative *after* establishing its outgoing HTLC stays
//! silent until that HTLC's timelock expires; the refund then fires
//! `cumulative_timelock * block_interval_ms` after establishment and the
//! outgoing channel is closed.
//!
//! A payment whose events are still firing more than `validity_window_ms`
//! after its start is classified `unknown`; its HTLCs still resolve, but it
//! is not re-attempted.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelId, FailReason, Network, Payment, PaymentResult, PeerId, SimTime};
use crate::routing::{find_route, DistanceWeights};

/// Stream of the shared seed reserved for the simulation phase.
const SIMULATION_STREAM: u64 = 0x51_4d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub payment_timeout_ms: u64,
    pub block_interval_ms: u64,
    pub validity_window_ms: u64,
    pub p_uncoop_before: f64,
    pub p_uncoop_after: f64,
    pub weights: DistanceWeights,
    pub final_timelock: u32,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            latency_min_ms: 10,
            latency_max_ms: 100,
            payment_timeout_ms: 60_000,
            block_interval_ms: 600_000,
            validity_window_ms: 900_000,
            p_uncoop_before: 0.0,
            p_uncoop_after: 0.0,
            weights: DistanceWeights::default(),
            final_timelock: 144,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.latency_min_ms > self.latency_max_ms {
            return fail("latency_min_ms must not exceed latency_max_ms".into());
        }
        if self.payment_timeout_ms == 0 {
            return fail("payment_timeout_ms must be positive".into());
        }
        for (name, p) in [
            ("p_uncoop_before", self.p_uncoop_before),
            ("p_uncoop_after", self.p_uncoop_after),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.p_uncoop_before + self.p_uncoop_after > 1.0 {
            return fail("p_uncoop_before + p_uncoop_after must not exceed 1".into());
        }
        if self.final_timelock == 0 {
            return fail("final_timelock must be at least 1".into());
        }
        self.weights.validate().map_err(Error::Config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FindRoute,
    SendPayment,
    ForwardPayment,
    ReceivePayment,
    ForwardSuccess,
    ForwardFail,
    ReceiveSuccess,
    ReceiveFail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: SimTime,
    /// Insertion sequence number; orders events that share a timestamp.
    pub id: u64,
    pub kind: EventKind,
    /// Index of the payment in the simulation's payment list.
    pub payment: usize,
    /// Route hop the event refers to; unused for `FindRoute`.
    pub hop: usize,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.id).cmp(&(other.time, other.id))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue of events keyed by `(time, insertion order)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_id: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, kind: EventKind, payment: usize, hop: usize) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.heap.push(Reverse(Event {
            time,
            id,
            kind,
            payment,
            hop,
        }));
        id
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn peek(&self) -> Option<&Event> {
        self.heap.peek().map(|Reverse(e)| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cooperation {
    Cooperative,
    UncoopBefore,
    UncoopAfter,
}

/// One Bernoulli-style draw: before with `p_before`, after with `p_after`, else cooperative.
pub fn sample_uncooperative<R: Rng + ?Sized>(p_before: f64, p_after: f64, rng: &mut R) -> Cooperation {
    let u: f64 = rng.random();
    if u < p_before {
        Cooperation::UncoopBefore
    } else if u < p_before + p_after {
        Cooperation::UncoopAfter
    } else {
        Cooperation::Cooperative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceOp {
    /// Debit of the sending endpoint into a pending HTLC.
    Lock,
    /// Pending HTLC credited to the receiving endpoint.
    Settle,
    /// Pending HTLC credited back to the sending endpoint.
    Refund,
}

/// A single balance movement, recorded when the journal is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceMove {
    pub time: SimTime,
    pub payment: usize,
    pub attempt: u32,
    pub channel: ChannelId,
    /// Sender side of the HTLC.
    pub from: PeerId,
    pub amount: u64,
    pub op: BalanceOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Culprit {
    Channel(ChannelId),
    Peer(PeerId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Failure {
    culprit: Culprit,
    reason: FailReason,
}

/// Per-payment bookkeeping for the attempt currently in flight.
#[derive(Debug, Clone, Default)]
struct AttemptState {
    failure: Option<Failure>,
    last_failure_reason: Option<FailReason>,
    /// Hop whose channel closes when its delayed refund fires.
    delayed_close: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub events_processed: u64,
    pub route_searches: u64,
    pub final_time: SimTime,
}

/// Final state of a completed run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub network: Network,
    pub payments: Vec<Payment>,
    pub stats: RunStats,
}

pub struct Simulation {
    network: Network,
    payments: Vec<Payment>,
    attempts: Vec<AttemptState>,
    config: SimConfig,
    rng: ChaCha8Rng,
    queue: EventQueue,
    now: SimTime,
    stats: RunStats,
    journal: Option<Vec<BalanceMove>>,
}

impl Simulation {
    /// Validates inputs and schedules one `FindRoute` per payment.
    ///
    /// Payments must be sorted by start time.
    pub fn new(network: Network, payments: Vec<Payment>, config: SimConfig) -> Result<Self> {
        config.validate()?;
        if !network.is_conserved() {
            return Err(Error::Config("input network violates balance conservation".into()));
        }
        for p in &payments {
            p.validate(network.n_peers())?;
        }
        if payments.windows(2).any(|w| w[0].start_time > w[1].start_time) {
            return Err(Error::Config("payments must be sorted by start time".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SIMULATION_STREAM);
        let mut queue = EventQueue::new();
        for (i, p) in payments.iter().enumerate() {
            queue.push(p.start_time, EventKind::FindRoute, i, 0);
        }
        Ok(Self {
            attempts: vec![AttemptState::default(); payments.len()],
            network,
            payments,
            config,
            rng,
            queue,
            now: 0,
            stats: RunStats::default(),
            journal: None,
        })
    }

    /// Records every lock/settle/refund from now on.
    pub fn with_journal(mut self) -> Self {
        self.journal = Some(Vec::new());
        self
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn payments(&self) -> &[Payment] {
        &self.payments
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn journal(&self) -> Option<&[BalanceMove]> {
        self.journal.as_deref()
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Processes the next event and returns it, or `None` once the queue is drained.
    pub fn step(&mut self) -> Option<Event> {
        let event = self.queue.pop()?;
        debug_assert!(event.time >= self.now);
        self.now = event.time;
        self.stats.events_processed += 1;
        self.stats.final_time = self.now;
        self.expire_if_outside_window(event.payment);
        match event.kind {
            EventKind::FindRoute => self.handle_find_route(event.payment),
            EventKind::SendPayment => self.handle_send_payment(event.payment),
            EventKind::ForwardPayment => self.handle_forward_payment(event.payment, event.hop),
            EventKind::ReceivePayment => self.handle_receive_payment(event.payment, event.hop),
            EventKind::ForwardSuccess => self.handle_forward_success(event.payment, event.hop),
            EventKind::ForwardFail => self.handle_forward_fail(event.payment, event.hop),
            EventKind::ReceiveSuccess => self.handle_receive_success(event.payment),
            EventKind::ReceiveFail => self.handle_receive_fail(event.payment),
        }
        Some(event)
    }

    pub fn run_to_end(&mut self) {
        while self.step().is_some() {}
    }

    pub fn into_output(self) -> SimOutput {
        SimOutput {
            network: self.network,
            payments: self.payments,
            stats: self.stats,
        }
    }

    fn latency(&mut self) -> u64 {
        let (lo, hi) = (self.config.latency_min_ms, self.config.latency_max_ms);
        self.rng.random_range(lo..=hi)
    }

    fn schedule_after_latency(&mut self, kind: EventKind, payment: usize, hop: usize) {
        let at = self.now + self.latency();
        self.queue.push(at, kind, payment, hop);
    }

    /// Sends a fail for the HTLC on `hop` back to that hop's sending peer.
    fn fail_back(&mut self, payment: usize, hop: usize) {
        let kind = if hop == 0 {
            EventKind::ReceiveFail
        } else {
            EventKind::ForwardFail
        };
        self.schedule_after_latency(kind, payment, hop);
    }

    fn record_failure(&mut self, payment: usize, culprit: Culprit, reason: FailReason) {
        self.attempts[payment].failure = Some(Failure { culprit, reason });
        if reason == FailReason::Uncooperative {
            self.payments[payment].encountered_uncooperative = true;
        }
    }

    fn finalize(&mut self, payment: usize, result: PaymentResult, reason: FailReason) {
        let p = &mut self.payments[payment];
        p.result = result;
        p.fail_reason = reason;
        p.end_time = Some(self.now);
    }

    fn expire_if_outside_window(&mut self, payment: usize) {
        let p = &mut self.payments[payment];
        if p.is_pending() && self.now - p.start_time > self.config.validity_window_ms {
            p.result = PaymentResult::Unknown;
            p.fail_reason = FailReason::None;
            p.end_time = None;
        }
    }

    fn journal_push(&mut self, payment: usize, channel: ChannelId, from: PeerId, amount: u64, op: BalanceOp) {
        if let Some(journal) = self.journal.as_mut() {
            journal.push(BalanceMove {
                time: self.now,
                payment,
                attempt: self.payments[payment].attempts,
                channel,
                from,
                amount,
                op,
            });
        }
    }

    /// Tries to lock `amount` from `from` on `channel`. Closed channels refuse.
    fn try_lock(&mut self, payment: usize, channel: ChannelId, from: PeerId, amount: u64) -> bool {
        let id = self.payments[payment].id;
        let ch = &mut self.network.channels[channel.index()];
        if ch.closed {
            return false;
        }
        let min_htlc = match ch.endpoint_for_direction(from) {
            Ok(e) => e.policy.min_htlc,
            Err(_) => return false,
        };
        if amount < min_htlc || ch.lock_htlc(id, from, amount).is_err() {
            return false;
        }
        self.journal_push(payment, channel, from, amount, BalanceOp::Lock);
        true
    }

    fn settle(&mut self, payment: usize, hop: usize) {
        let h = self.hop(payment, hop);
        let id = self.payments[payment].id;
        let amount = self.network.channels[h.channel.index()]
            .settle_htlc(id, h.from_peer)
            .expect("settling an HTLC that was never locked");
        self.journal_push(payment, h.channel, h.from_peer, amount, BalanceOp::Settle);
    }

    fn refund(&mut self, payment: usize, hop: usize) -> bool {
        let h = self.hop(payment, hop);
        let id = self.payments[payment].id;
        match self.network.channels[h.channel.index()].refund_htlc(id, h.from_peer) {
            Ok(amount) => {
                self.journal_push(payment, h.channel, h.from_peer, amount, BalanceOp::Refund);
                true
            }
            Err(_) => false,
        }
    }

    fn hop(&self, payment: usize, hop: usize) -> crate::model::RouteHop {
        self.payments[payment]
            .route
            .as_ref()
            .expect("event for a payment without a route")
            .hops[hop]
    }

    fn route_len(&self, payment: usize) -> usize {
        self.payments[payment].route.as_ref().map_or(0, |r| r.len())
    }

    fn handle_find_route(&mut self, pi: usize) {
        if !self.payments[pi].is_pending() {
            return;
        }
        if self.now - self.payments[pi].start_time > self.config.payment_timeout_ms {
            self.finalize(pi, PaymentResult::Fail, FailReason::Timeout);
            return;
        }
        self.payments[pi].attempts += 1;
        self.stats.route_searches += 1;
        let p = &self.payments[pi];
        let route = find_route(
            p,
            &self.network,
            &p.blacklist,
            &self.config.weights,
            self.config.final_timelock,
        );
        match route {
            Some(route) => {
                self.payments[pi].route = Some(route);
                self.attempts[pi].failure = None;
                self.attempts[pi].delayed_close = None;
                self.queue.push(self.now, EventKind::SendPayment, pi, 0);
            }
            None => {
                let reason = self.attempts[pi]
                    .last_failure_reason
                    .unwrap_or(FailReason::NoRoute);
                self.finalize(pi, PaymentResult::Fail, reason);
            }
        }
    }

    fn handle_send_payment(&mut self, pi: usize) {
        let first = self.hop(pi, 0);
        if self.try_lock(pi, first.channel, first.from_peer, first.forward_amount) {
            if self.route_len(pi) > 1 {
                self.schedule_after_latency(EventKind::ForwardPayment, pi, 1);
            } else {
                self.schedule_after_latency(EventKind::ReceivePayment, pi, 0);
            }
        } else {
            self.record_failure(pi, Culprit::Channel(first.channel), FailReason::Unbalanced);
            self.queue.push(self.now, EventKind::ReceiveFail, pi, 0);
        }
    }

    fn handle_forward_payment(&mut self, pi: usize, i: usize) {
        let h = self.hop(pi, i);
        let (pb, pa) = (self.config.p_uncoop_before, self.config.p_uncoop_after);
        match sample_uncooperative(pb, pa, &mut self.rng) {
            Cooperation::UncoopBefore => {
                self.record_failure(pi, Culprit::Peer(h.from_peer), FailReason::Uncooperative);
                self.fail_back(pi, i - 1);
            }
            Cooperation::UncoopAfter => {
                if self.try_lock(pi, h.channel, h.from_peer, h.forward_amount) {
                    self.record_failure(pi, Culprit::Peer(h.from_peer), FailReason::Uncooperative);
                    self.attempts[pi].delayed_close = Some(i);
                    let delay = h.cumulative_timelock as u64 * self.config.block_interval_ms;
                    self.queue.push(self.now + delay, EventKind::ForwardFail, pi, i);
                } else {
                    self.record_failure(pi, Culprit::Channel(h.channel), FailReason::Unbalanced);
                    self.fail_back(pi, i - 1);
                }
            }
            Cooperation::Cooperative => {
                if self.try_lock(pi, h.channel, h.from_peer, h.forward_amount) {
                    if i + 1 < self.route_len(pi) {
                        self.schedule_after_latency(EventKind::ForwardPayment, pi, i + 1);
                    } else {
                        self.schedule_after_latency(EventKind::ReceivePayment, pi, i);
                    }
                } else {
                    self.record_failure(pi, Culprit::Channel(h.channel), FailReason::Unbalanced);
                    self.fail_back(pi, i - 1);
                }
            }
        }
    }

    fn handle_receive_payment(&mut self, pi: usize, last: usize) {
        let h = self.hop(pi, last);
        // The receiver holds the preimage, so "after" is indistinguishable from "before".
        match sample_uncooperative(self.config.p_uncoop_before, 0.0, &mut self.rng) {
            Cooperation::Cooperative => {
                self.settle(pi, last);
                if last == 0 {
                    self.schedule_after_latency(EventKind::ReceiveSuccess, pi, 0);
                } else {
                    self.schedule_after_latency(EventKind::ForwardSuccess, pi, last);
                }
            }
            _ => {
                self.record_failure(pi, Culprit::Channel(h.channel), FailReason::Uncooperative);
                self.fail_back(pi, last);
            }
        }
    }

    fn handle_forward_success(&mut self, pi: usize, i: usize) {
        self.settle(pi, i - 1);
        if i - 1 == 0 {
            self.schedule_after_latency(EventKind::ReceiveSuccess, pi, 0);
        } else {
            self.schedule_after_latency(EventKind::ForwardSuccess, pi, i - 1);
        }
    }

    fn handle_forward_fail(&mut self, pi: usize, i: usize) {
        self.refund(pi, i);
        if self.attempts[pi].delayed_close == Some(i) {
            let channel = self.hop(pi, i).channel;
            self.network.channels[channel.index()].closed = true;
            self.attempts[pi].delayed_close = None;
        }
        self.fail_back(pi, i - 1);
    }

    fn handle_receive_success(&mut self, pi: usize) {
        if self.payments[pi].is_pending() {
            self.finalize(pi, PaymentResult::Success, FailReason::None);
        }
    }

    fn handle_receive_fail(&mut self, pi: usize) {
        // A local send failure never locked hop 0.
        self.refund(pi, 0);
        if let Some(failure) = self.attempts[pi].failure.take() {
            let p = &mut self.payments[pi];
            match failure.culprit {
                Culprit::Channel(c) => {
                    p.blacklist_channel(c);
                }
                Culprit::Peer(peer) => {
                    p.blacklist_peer(peer);
                }
            }
            self.attempts[pi].last_failure_reason = Some(failure.reason);
        }
        if self.payments[pi].is_pending() {
            self.queue.push(self.now, EventKind::FindRoute, pi, 0);
        }
    }
}

/// Runs a whole simulation and returns the final graph and payment records.
pub fn run(network: Network, payments: Vec<Payment>, config: SimConfig) -> Result<SimOutput> {
    let mut sim = Simulation::new(network, payments, config)?;
    sim.run_to_end();
    Ok(sim.into_output())
}
