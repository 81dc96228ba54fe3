//! Random network and payment-script generation from statistical parameters.
//!
//! Each generation step draws from its own ChaCha stream of the shared seed,
//! so changing a payment parameter leaves the generated topology untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::model::{
    Channel, ChannelEndpoint, ChannelId, EndpointPolicy, Network, Payment, PaymentId, PeerId, SimTime,
};

const TOPOLOGY_STREAM: u64 = 1;
const CAPACITY_STREAM: u64 = 2;
const ENDPOINT_STREAM: u64 = 3;
const PAYMENT_STREAM: u64 = 4;

/// Redraws allowed when the topology Gaussian lands on the initiating peer itself.
const SELF_LOOP_REDRAWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub n_peers: usize,
    pub avg_channels_per_peer: f64,
    /// Width of the Gaussian choosing channel counterparties; 0 makes peer 0 a hub.
    pub topology_sigma: f64,
    pub p_uncoop_before: f64,
    pub p_uncoop_after: f64,
    pub avg_channel_capacity: u64,
    pub capacity_gini: f64,
    /// Payments per second.
    pub payment_rate: f64,
    pub n_payments: usize,
    /// Width of the Gaussian whose tail picks the payment amount's order of magnitude.
    pub amount_sigma: f64,
    pub same_recipient_fraction: f64,
    pub policy: EndpointPolicy,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            n_peers: 1000,
            avg_channels_per_peer: 5.0,
            topology_sigma: 100.0,
            p_uncoop_before: 0.0,
            p_uncoop_after: 0.0,
            avg_channel_capacity: 1_000_000,
            capacity_gini: 0.5,
            payment_rate: 100.0,
            n_payments: 10_000,
            amount_sigma: 3.0,
            same_recipient_fraction: 0.0,
            policy: EndpointPolicy::default(),
            seed: 42,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_peers < 2 {
            return fail("at least two peers are required".into());
        }
        if !(self.avg_channels_per_peer.is_finite() && self.avg_channels_per_peer > 0.0) {
            return fail("avg_channels_per_peer must be positive".into());
        }
        if !(self.topology_sigma.is_finite() && self.topology_sigma >= 0.0) {
            return fail("topology_sigma must be non-negative".into());
        }
        for (name, p) in [
            ("p_uncoop_before", self.p_uncoop_before),
            ("p_uncoop_after", self.p_uncoop_after),
            ("same_recipient_fraction", self.same_recipient_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.p_uncoop_before + self.p_uncoop_after > 1.0 {
            return fail("p_uncoop_before + p_uncoop_after must not exceed 1".into());
        }
        if self.avg_channel_capacity == 0 {
            return fail("avg_channel_capacity must be positive".into());
        }
        if !(0.0..1.0).contains(&self.capacity_gini) {
            return fail(format!("capacity_gini must be in [0, 1), got {}", self.capacity_gini));
        }
        if !(self.payment_rate.is_finite() && self.payment_rate > 0.0) {
            return fail("payment_rate must be positive".into());
        }
        if !(self.amount_sigma.is_finite() && self.amount_sigma >= 0.0) {
            return fail("amount_sigma must be non-negative".into());
        }
        if self.policy.timelock_delta == 0 {
            return fail("timelock_delta must be at least 1".into());
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Channel endpoints as `(initiator, counterparty)` pairs, before funding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub n_peers: usize,
    pub pairs: Vec<(PeerId, PeerId)>,
}

impl Topology {
    pub fn initiated_per_peer(&self) -> f64 {
        self.pairs.len() as f64 / self.n_peers as f64
    }

    /// Mean number of channels touching a peer (twice the initiated mean).
    pub fn incident_per_peer(&self) -> f64 {
        2.0 * self.initiated_per_peer()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_peers];
        for &(a, b) in &self.pairs {
            deg[a.index()] += 1;
            deg[b.index()] += 1;
        }
        deg
    }
}

/// Number of channels one peer initiates: at least one, with the requested mean.
fn initiated_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    // 1 + Poisson(mean - 1) keeps the mean exact while ruling out isolated peers.
    let extra = Poisson::new(mean - 1.0).expect("positive Poisson mean").sample(rng);
    1 + extra as usize
}

/// `round(|x|) mod n` for a Gaussian draw `x`.
fn gaussian_index<R: Rng + ?Sized>(sigma: f64, n: usize, rng: &mut R) -> usize {
    if sigma == 0.0 {
        return 0;
    }
    let x: f64 = Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
    (x.abs().round() % n as f64) as usize
}

pub fn generate_topology(params: &GenerationParams) -> Topology {
    let mut rng = stream_rng(params.seed, TOPOLOGY_STREAM);
    let n = params.n_peers;
    let mut pairs = Vec::new();
    for i in 0..n {
        let k = initiated_count(params.avg_channels_per_peer, &mut rng);
        for _ in 0..k {
            let mut other = i;
            for _ in 0..SELF_LOOP_REDRAWS {
                other = gaussian_index(params.topology_sigma, n, &mut rng);
                if other != i {
                    break;
                }
            }
            if other == i {
                // The anchor itself (or an unlucky streak): any other peer.
                other = (i + 1 + rng.random_range(0..n - 1)) % n;
            }
            pairs.push((PeerId(i), PeerId(other)));
        }
    }
    Topology { n_peers: n, pairs }
}

/// Log-normal shape parameter whose Gini index is `gini`: `sqrt(2) * Phi^-1((G + 1) / 2)`.
pub fn lognormal_sigma_for_gini(gini: f64) -> f64 {
    if gini <= 0.0 {
        return 0.0;
    }
    let std_normal = StdNormal::new(0.0, 1.0).expect("standard normal");
    std::f64::consts::SQRT_2 * std_normal.inverse_cdf((gini + 1.0) / 2.0)
}

/// `n` capacities, log-normal with Gini `gini`, normalised so the sample mean is `mean`.
pub fn generate_capacities(n: usize, mean: u64, gini: f64, seed: u64) -> Vec<u64> {
    if n == 0 {
        return Vec::new();
    }
    let sigma = lognormal_sigma_for_gini(gini);
    if sigma == 0.0 {
        return vec![mean; n];
    }
    let mut rng = stream_rng(seed, CAPACITY_STREAM);
    let mu = (mean as f64).ln() - sigma * sigma / 2.0;
    let dist = LogNormal::new(mu, sigma).expect("valid log-normal");
    let raw: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
    // Gini is scale-free: rescaling pins the sample mean without touching the shape.
    let scale = mean as f64 * n as f64 / raw.iter().sum::<f64>();
    raw.iter()
        .map(|x| ((x * scale).round() as u64).max(1))
        .collect()
}

/// Gini index of non-negative values: `sum_ij |x_i - x_j| / (2 n^2 mean)`.
///
/// Computed in O(n log n) from the sorted values.
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Config("gini of an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config("gini needs finite non-negative values".into()));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("gini is undefined when every value is zero".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok(weighted / (n * total))
}

/// Splits each capacity between the two endpoints at a uniform random fraction.
pub fn generate_endpoints(
    topology: &Topology,
    capacities: &[u64],
    policy: EndpointPolicy,
    seed: u64,
) -> Vec<Channel> {
    let mut rng = stream_rng(seed, ENDPOINT_STREAM);
    topology
        .pairs
        .iter()
        .zip(capacities)
        .enumerate()
        .map(|(i, (&(a, b), &cap))| {
            let fraction: f64 = rng.random();
            let (b1, b2) = split_capacity(cap, fraction);
            Channel::new(
                ChannelId(i),
                ChannelEndpoint {
                    owner: a,
                    balance: b1,
                    policy,
                },
                ChannelEndpoint {
                    owner: b,
                    balance: b2,
                    policy,
                },
            )
        })
        .collect()
}

/// `(round(fraction * capacity), rest)`.
pub fn split_capacity(capacity: u64, fraction: f64) -> (u64, u64) {
    let first = ((capacity as f64 * fraction.clamp(0.0, 1.0)).round() as u64).min(capacity);
    (first, capacity - first)
}

/// The payment script, sorted by start time.
pub fn generate_payments(params: &GenerationParams) -> Vec<Payment> {
    let mut rng = stream_rng(params.seed, PAYMENT_STREAM);
    let n = params.n_peers;
    let designated = rng.random_range(0..n);
    let gap = Exp::new(params.payment_rate).expect("positive rate");
    let magnitude = (params.amount_sigma > 0.0)
        .then(|| Normal::new(0.0, params.amount_sigma).expect("finite sigma"));

    let mut clock_s = 0.0f64;
    let mut payments = Vec::with_capacity(params.n_payments);
    for k in 0..params.n_payments {
        clock_s += gap.sample(&mut rng);
        let start: SimTime = (clock_s * 1000.0).floor() as SimTime;

        let receiver = if rng.random::<f64>() < params.same_recipient_fraction {
            designated
        } else {
            rng.random_range(0..n)
        };
        // Uniform over the other n - 1 peers.
        let sender = (receiver + 1 + rng.random_range(0..n - 1)) % n;

        let exponent = match &magnitude {
            Some(d) => d.sample(&mut rng).abs().floor().min(18.0) as u32,
            None => 0,
        };
        let mantissa: u64 = rng.random_range(1..10);
        let amount = mantissa.saturating_mul(10u64.pow(exponent));

        payments.push(Payment::new(PaymentId(k), PeerId(sender), PeerId(receiver), amount, start));
    }
    payments
}

/// Generated network, payment script and topology summary.
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub network: Network,
    pub payments: Vec<Payment>,
    pub initiated_per_peer: f64,
    pub incident_per_peer: f64,
}

pub fn generate(params: &GenerationParams) -> Result<GeneratedInstance> {
    params.validate()?;
    let topology = generate_topology(params);
    let capacities = generate_capacities(
        topology.pairs.len(),
        params.avg_channel_capacity,
        params.capacity_gini,
        params.seed,
    );
    let channels = generate_endpoints(&topology, &capacities, params.policy, params.seed);
    let network = Network::new(params.n_peers, channels)?;
    Ok(GeneratedInstance {
        network,
        payments: generate_payments(params),
        initiated_per_peer: topology.initiated_per_peer(),
        incident_per_peer: topology.incident_per_peer(),
    })
}
