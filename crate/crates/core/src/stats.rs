//! Batch-means output analysis of per-payment records.
//!
//! Records (in start-time order) are cut into `warmup_batches + n_batches`
//! contiguous batches of equal size; trailing records that do not fill a
//! batch are dropped, and so are the warm-up batches. Every measure is
//! computed per batch, and the across-batch mean, sample variance and
//! Student-t 95% interval are reported.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::{ChannelId, FailReason, Payment, PaymentId, PaymentResult, PeerId, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("payment {0} is still pending; the simulation did not finalize it")]
    PendingRecord(PaymentId),
    #[error("payment {0} failed without a failure reason")]
    MissingFailReason(PaymentId),
    #[error("{records} records cannot fill {batches} batches ({n_batches} measured + {warmup} warm-up)", batches = n_batches + warmup)]
    TooFewRecords {
        records: usize,
        n_batches: usize,
        warmup: usize,
    },
    #[error("at least two batches are required, got {0}")]
    TooFewBatches(usize),
    #[error("records are not sorted by start time")]
    Unsorted,
}

/// One row of the raw per-payment output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentRecord {
    pub id: PaymentId,
    pub sender: PeerId,
    pub receiver: PeerId,
    pub amount: u64,
    pub start_time_ms: SimTime,
    pub end_time_ms: Option<SimTime>,
    pub result: PaymentResult,
    pub fail_reason: FailReason,
    pub attempts: u32,
    pub uncooperative_encountered: bool,
    pub route: Vec<ChannelId>,
}

impl From<&Payment> for PaymentRecord {
    fn from(p: &Payment) -> Self {
        Self {
            id: p.id,
            sender: p.sender,
            receiver: p.receiver,
            amount: p.amount,
            start_time_ms: p.start_time,
            end_time_ms: p.end_time,
            result: p.result,
            fail_reason: p.fail_reason,
            attempts: p.attempts,
            uncooperative_encountered: p.encountered_uncooperative,
            route: p.route.as_ref().map(|r| r.channel_ids()).unwrap_or_default(),
        }
    }
}

/// Records sorted by start time (then id), as the batch-means analysis expects.
pub fn records_from_payments(payments: &[Payment]) -> Vec<PaymentRecord> {
    let mut records: Vec<PaymentRecord> = payments.iter().map(PaymentRecord::from).collect();
    records.sort_by_key(|r| (r.start_time_ms, r.id));
    records
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    FailNoRoute,
    FailUnbalanced,
    FailUncooperative,
    FailTimeout,
    Unknown,
}

impl Outcome {
    pub const ALL: [Outcome; 6] = [
        Outcome::Success,
        Outcome::FailNoRoute,
        Outcome::FailUnbalanced,
        Outcome::FailUncooperative,
        Outcome::FailTimeout,
        Outcome::Unknown,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

pub fn classify(record: &PaymentRecord) -> Result<Outcome, StatsError> {
    Ok(match (record.result, record.fail_reason) {
        (PaymentResult::Pending, _) => return Err(StatsError::PendingRecord(record.id)),
        (PaymentResult::Success, _) => Outcome::Success,
        (PaymentResult::Unknown, _) => Outcome::Unknown,
        (PaymentResult::Fail, FailReason::NoRoute) => Outcome::FailNoRoute,
        (PaymentResult::Fail, FailReason::Unbalanced) => Outcome::FailUnbalanced,
        (PaymentResult::Fail, FailReason::Uncooperative) => Outcome::FailUncooperative,
        (PaymentResult::Fail, FailReason::Timeout) => Outcome::FailTimeout,
        (PaymentResult::Fail, FailReason::None) => return Err(StatsError::MissingFailReason(record.id)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsParams {
    pub n_batches: usize,
    pub warmup_batches: usize,
    /// Average attempts over successful payments only instead of all finalized ones.
    pub attempts_over_successes_only: bool,
}

impl Default for StatsParams {
    fn default() -> Self {
        Self {
            n_batches: 30,
            warmup_batches: 1,
            attempts_over_successes_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureStats {
    pub mean: f64,
    pub variance: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub n_batches: usize,
}

/// Two-sided 95% Student-t multiplier with `df` degrees of freedom.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Mean, sample variance and Student-t 95% interval of per-batch values.
pub fn summarize(values: &[f64]) -> Result<MeasureStats, StatsError> {
    let n = values.len();
    if n < 2 {
        return Err(StatsError::TooFewBatches(n));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let half = t_quantile_975(n - 1) * (variance / nf).sqrt();
    Ok(MeasureStats {
        mean,
        variance,
        ci95_low: mean - half,
        ci95_high: mean + half,
        n_batches: n,
    })
}

fn clamp_probability(mut m: MeasureStats) -> MeasureStats {
    m.ci95_low = m.ci95_low.max(0.0);
    m.ci95_high = m.ci95_high.min(1.0);
    m
}

/// Measures of a single batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeasures {
    pub size: usize,
    /// Outcome counts in [`Outcome::ALL`] order; they always sum to `size`.
    pub counts: [usize; 6],
    pub fractions: [f64; 6],
    /// Mean completion time of successful payments, if any succeeded.
    pub payment_time_ms: Option<f64>,
    pub attempts: Option<f64>,
    /// Mean hop count of successful payments, if any succeeded.
    pub route_length: Option<f64>,
}

pub fn measure_batch(records: &[PaymentRecord], params: &StatsParams) -> Result<BatchMeasures, StatsError> {
    let mut counts = [0usize; 6];
    let (mut time_sum, mut route_sum) = (0.0, 0.0);
    let (mut attempt_sum, mut attempt_n) = (0.0, 0usize);
    for r in records {
        let outcome = classify(r)?;
        counts[outcome.slot()] += 1;
        let success = outcome == Outcome::Success;
        if success {
            let end = r.end_time_ms.unwrap_or(r.start_time_ms);
            time_sum += end.saturating_sub(r.start_time_ms) as f64;
            route_sum += r.route.len() as f64;
        }
        if success || !params.attempts_over_successes_only {
            attempt_sum += r.attempts as f64;
            attempt_n += 1;
        }
    }
    let size = records.len();
    let successes = counts[Outcome::Success.slot()];
    let mean_or_none = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
    Ok(BatchMeasures {
        size,
        counts,
        fractions: counts.map(|c| c as f64 / size as f64),
        payment_time_ms: mean_or_none(time_sum, successes),
        attempts: mean_or_none(attempt_sum, attempt_n),
        route_length: mean_or_none(route_sum, successes),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStatistics {
    pub p_success: MeasureStats,
    pub p_fail_no_route: MeasureStats,
    pub p_fail_unbalanced: MeasureStats,
    pub p_fail_uncooperative: MeasureStats,
    pub p_fail_timeout: MeasureStats,
    pub p_unknown: MeasureStats,
    /// `None` when fewer than two batches contain a successful payment.
    pub payment_time_ms: Option<MeasureStats>,
    pub attempts: Option<MeasureStats>,
    pub route_length: Option<MeasureStats>,
}

impl SimStatistics {
    pub fn probabilities(&self) -> [&MeasureStats; 6] {
        [
            &self.p_success,
            &self.p_fail_no_route,
            &self.p_fail_unbalanced,
            &self.p_fail_uncooperative,
            &self.p_fail_timeout,
            &self.p_unknown,
        ]
    }
}

/// Full batch-means result: the per-batch measures and their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeansReport {
    pub batches: Vec<BatchMeasures>,
    pub statistics: SimStatistics,
}

pub fn batch_means(records: &[PaymentRecord], params: &StatsParams) -> Result<BatchMeansReport, StatsError> {
    if params.n_batches < 2 {
        return Err(StatsError::TooFewBatches(params.n_batches));
    }
    if records
        .windows(2)
        .any(|w| w[0].start_time_ms > w[1].start_time_ms)
    {
        return Err(StatsError::Unsorted);
    }
    let total = params.n_batches + params.warmup_batches;
    if records.len() < total {
        return Err(StatsError::TooFewRecords {
            records: records.len(),
            n_batches: params.n_batches,
            warmup: params.warmup_batches,
        });
    }
    let size = records.len() / total;
    let batches = records
        .chunks_exact(size)
        .skip(params.warmup_batches)
        .take(params.n_batches)
        .map(|chunk| measure_batch(chunk, params))
        .collect::<Result<Vec<_>, _>>()?;

    let probability = |slot: usize| -> Result<MeasureStats, StatsError> {
        let values: Vec<f64> = batches.iter().map(|b| b.fractions[slot]).collect();
        summarize(&values).map(clamp_probability)
    };
    let optional = |pick: fn(&BatchMeasures) -> Option<f64>| {
        let values: Vec<f64> = batches.iter().filter_map(pick).collect();
        summarize(&values).ok()
    };

    let statistics = SimStatistics {
        p_success: probability(Outcome::Success.slot())?,
        p_fail_no_route: probability(Outcome::FailNoRoute.slot())?,
        p_fail_unbalanced: probability(Outcome::FailUnbalanced.slot())?,
        p_fail_uncooperative: probability(Outcome::FailUncooperative.slot())?,
        p_fail_timeout: probability(Outcome::FailTimeout.slot())?,
        p_unknown: probability(Outcome::Unknown.slot())?,
        payment_time_ms: optional(|b| b.payment_time_ms),
        attempts: optional(|b| b.attempts),
        route_length: optional(|b| b.route_length),
    };
    Ok(BatchMeansReport { batches, statistics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: usize, result: PaymentResult, reason: FailReason) -> PaymentRecord {
        PaymentRecord {
            id: PaymentId(id),
            sender: PeerId(0),
            receiver: PeerId(1),
            amount: 10,
            start_time_ms: id as u64,
            end_time_ms: Some(id as u64 + 100),
            result,
            fail_reason: reason,
            attempts: 1,
            uncooperative_encountered: false,
            route: vec![ChannelId(0)],
        }
    }

    #[test]
    fn classify_maps_every_terminal_state() {
        use FailReason as F;
        use PaymentResult as R;
        assert_eq!(classify(&record(0, R::Success, F::None)).unwrap(), Outcome::Success);
        assert_eq!(classify(&record(0, R::Fail, F::Unbalanced)).unwrap(), Outcome::FailUnbalanced);
        assert_eq!(classify(&record(0, R::Fail, F::NoRoute)).unwrap(), Outcome::FailNoRoute);
        assert_eq!(classify(&record(0, R::Fail, F::Uncooperative)).unwrap(), Outcome::FailUncooperative);
        assert_eq!(classify(&record(0, R::Fail, F::Timeout)).unwrap(), Outcome::FailTimeout);
        assert_eq!(classify(&record(0, R::Unknown, F::None)).unwrap(), Outcome::Unknown);
        assert!(classify(&record(0, R::Pending, F::None)).is_err());
        assert!(classify(&record(0, R::Fail, F::None)).is_err());
    }

    #[test]
    fn identical_batches_have_zero_variance() {
        let s = summarize(&[0.7; 5]).unwrap();
        assert_eq!((s.mean, s.variance, s.ci95_low, s.ci95_high), (0.7, 0.0, 0.7, 0.7));
    }

    #[test]
    fn too_few_records_is_an_error() {
        let recs: Vec<_> = (0..5).map(|i| record(i, PaymentResult::Success, FailReason::None)).collect();
        let params = StatsParams {
            n_batches: 5,
            warmup_batches: 1,
            ..StatsParams::default()
        };
        assert!(matches!(batch_means(&recs, &params), Err(StatsError::TooFewRecords { .. })));
    }

    #[test]
    fn time_and_route_length_use_successes_only() {
        let mut recs = vec![
            record(0, PaymentResult::Success, FailReason::None),
            record(1, PaymentResult::Fail, FailReason::NoRoute),
        ];
        recs[1].end_time_ms = Some(1_000_000);
        recs[1].route = vec![ChannelId(0), ChannelId(1), ChannelId(2)];
        recs[1].attempts = 3;
        let b = measure_batch(&recs, &StatsParams::default()).unwrap();
        assert_eq!(b.payment_time_ms, Some(100.0));
        assert_eq!(b.route_length, Some(1.0));
        assert_eq!(b.attempts, Some(2.0));
        let only_success = StatsParams {
            attempts_over_successes_only: true,
            ..StatsParams::default()
        };
        assert_eq!(measure_batch(&recs, &only_success).unwrap().attempts, Some(1.0));
    }
}
