//! C ABI for the `htlcsim` simulator.
//!
//! A simulation is an opaque `HtlcSimulation*` created by
//! [`htlc_simulation_generate`] or [`htlc_simulation_load`] and released with
//! [`htlc_simulation_free`]. Every fallible call returns an [`HtlcStatus`];
//! on failure [`htlc_last_error_message`] describes what went wrong on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use htlcsim::engine::{self, SimConfig, SimOutput};
use htlcsim::io;
use htlcsim::model::{EndpointPolicy, Network, Payment};
use htlcsim::netgen::{self, GenerationParams};
use htlcsim::routing::DistanceWeights;
use htlcsim::stats::{self, MeasureStats, Outcome, StatsError, StatsParams};
use htlcsim::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HtlcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    InvalidInput = 4,
    Stats = 5,
    NotRun = 6,
    Panic = 7,
}

/// Parameters of the random network and payment generator.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HtlcGenerationParams {
    pub n_peers: usize,
    pub avg_channels_per_peer: f64,
    pub topology_sigma: f64,
    pub avg_channel_capacity: u64,
    pub capacity_gini: f64,
    /// Payments per second.
    pub payment_rate: f64,
    pub n_payments: usize,
    pub amount_sigma: f64,
    pub same_recipient_fraction: f64,
    pub base_fee_msat: u64,
    pub prop_fee_ppm: u64,
    pub timelock_delta: u32,
    pub min_htlc: u64,
    pub seed: u64,
}

/// Simulation settings.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HtlcSimConfig {
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub payment_timeout_ms: u64,
    pub block_interval_ms: u64,
    pub validity_window_ms: u64,
    pub p_uncoop_before: f64,
    pub p_uncoop_after: f64,
    pub fee_weight: f64,
    pub timelock_weight: f64,
    pub final_timelock: u32,
    pub seed: u64,
}

/// Number of payments in each final state.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HtlcOutcomeCounts {
    pub success: usize,
    pub fail_no_route: usize,
    pub fail_unbalanced: usize,
    pub fail_uncooperative: usize,
    pub fail_timeout: usize,
    pub unknown: usize,
    pub pending: usize,
}

/// Batch-means summary of one measure. `present` is false when there were too few batches with a value.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HtlcMeasure {
    pub present: bool,
    pub mean: f64,
    pub variance: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub n_batches: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HtlcStatistics {
    pub p_success: HtlcMeasure,
    pub p_fail_no_route: HtlcMeasure,
    pub p_fail_unbalanced: HtlcMeasure,
    pub p_fail_uncooperative: HtlcMeasure,
    pub p_fail_timeout: HtlcMeasure,
    pub p_unknown: HtlcMeasure,
    pub payment_time_ms: HtlcMeasure,
    pub attempts: HtlcMeasure,
    pub route_length: HtlcMeasure,
}

/// Opaque simulation handle.
pub struct HtlcSimulation {
    network: Network,
    payments: Vec<Payment>,
    config: SimConfig,
    output: Option<SimOutput>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let msg = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(HtlcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(io::IoError::Io { .. }) => HtlcStatus::Io,
            Error::Io(_) | Error::Model(_) => HtlcStatus::InvalidInput,
            Error::Stats(_) => HtlcStatus::Stats,
            Error::Config(_) => HtlcStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Self {
        Error::from(e).into()
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        Error::from(e).into()
    }
}

fn null(what: &str) -> Failure {
    Failure(HtlcStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, converting errors and panics into a status and the thread's last error.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> HtlcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            clear_last_error();
            HtlcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {msg}"));
            HtlcStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(HtlcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle_ref<'a>(h: *const HtlcSimulation) -> Result<&'a HtlcSimulation, Failure> {
    h.as_ref().ok_or_else(|| null("simulation handle"))
}

impl From<&HtlcGenerationParams> for GenerationParams {
    fn from(p: &HtlcGenerationParams) -> Self {
        GenerationParams {
            n_peers: p.n_peers,
            avg_channels_per_peer: p.avg_channels_per_peer,
            topology_sigma: p.topology_sigma,
            avg_channel_capacity: p.avg_channel_capacity,
            capacity_gini: p.capacity_gini,
            payment_rate: p.payment_rate,
            n_payments: p.n_payments,
            amount_sigma: p.amount_sigma,
            same_recipient_fraction: p.same_recipient_fraction,
            policy: EndpointPolicy {
                base_fee_msat: p.base_fee_msat,
                prop_fee_ppm: p.prop_fee_ppm,
                timelock_delta: p.timelock_delta,
                min_htlc: p.min_htlc,
            },
            seed: p.seed,
            ..GenerationParams::default()
        }
    }
}

impl From<&HtlcSimConfig> for SimConfig {
    fn from(c: &HtlcSimConfig) -> Self {
        SimConfig {
            latency_min_ms: c.latency_min_ms,
            latency_max_ms: c.latency_max_ms,
            payment_timeout_ms: c.payment_timeout_ms,
            block_interval_ms: c.block_interval_ms,
            validity_window_ms: c.validity_window_ms,
            p_uncoop_before: c.p_uncoop_before,
            p_uncoop_after: c.p_uncoop_after,
            weights: DistanceWeights {
                fee_weight: c.fee_weight,
                timelock_weight: c.timelock_weight,
            },
            final_timelock: c.final_timelock,
            seed: c.seed,
        }
    }
}

impl From<Option<&MeasureStats>> for HtlcMeasure {
    fn from(m: Option<&MeasureStats>) -> Self {
        match m {
            Some(m) => HtlcMeasure {
                present: true,
                mean: m.mean,
                variance: m.variance,
                ci95_low: m.ci95_low,
                ci95_high: m.ci95_high,
                n_batches: m.n_batches,
            },
            None => HtlcMeasure::default(),
        }
    }
}

fn to_statistics(s: &stats::SimStatistics) -> HtlcStatistics {
    HtlcStatistics {
        p_success: Some(&s.p_success).into(),
        p_fail_no_route: Some(&s.p_fail_no_route).into(),
        p_fail_unbalanced: Some(&s.p_fail_unbalanced).into(),
        p_fail_uncooperative: Some(&s.p_fail_uncooperative).into(),
        p_fail_timeout: Some(&s.p_fail_timeout).into(),
        p_unknown: Some(&s.p_unknown).into(),
        payment_time_ms: s.payment_time_ms.as_ref().into(),
        attempts: s.attempts.as_ref().into(),
        route_length: s.route_length.as_ref().into(),
    }
}

fn analyze_records(
    records: &[stats::PaymentRecord],
    n_batches: usize,
    warmup_batches: usize,
) -> Result<HtlcStatistics, Failure> {
    let params = StatsParams {
        n_batches,
        warmup_batches,
        ..StatsParams::default()
    };
    let report = stats::batch_means(records, &params)?;
    Ok(to_statistics(&report.statistics))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn htlc_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => c"unknown",
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or null if the last call succeeded.
///
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn htlc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn htlc_generation_params_default() -> HtlcGenerationParams {
    let p = GenerationParams::default();
    HtlcGenerationParams {
        n_peers: p.n_peers,
        avg_channels_per_peer: p.avg_channels_per_peer,
        topology_sigma: p.topology_sigma,
        avg_channel_capacity: p.avg_channel_capacity,
        capacity_gini: p.capacity_gini,
        payment_rate: p.payment_rate,
        n_payments: p.n_payments,
        amount_sigma: p.amount_sigma,
        same_recipient_fraction: p.same_recipient_fraction,
        base_fee_msat: p.policy.base_fee_msat,
        prop_fee_ppm: p.policy.prop_fee_ppm,
        timelock_delta: p.policy.timelock_delta,
        min_htlc: p.policy.min_htlc,
        seed: p.seed,
    }
}

#[no_mangle]
pub extern "C" fn htlc_sim_config_default() -> HtlcSimConfig {
    let c = SimConfig::default();
    HtlcSimConfig {
        latency_min_ms: c.latency_min_ms,
        latency_max_ms: c.latency_max_ms,
        payment_timeout_ms: c.payment_timeout_ms,
        block_interval_ms: c.block_interval_ms,
        validity_window_ms: c.validity_window_ms,
        p_uncoop_before: c.p_uncoop_before,
        p_uncoop_after: c.p_uncoop_after,
        fee_weight: c.weights.fee_weight,
        timelock_weight: c.weights.timelock_weight,
        final_timelock: c.final_timelock,
        seed: c.seed,
    }
}

fn new_handle(network: Network, payments: Vec<Payment>, config: SimConfig) -> Result<*mut HtlcSimulation, Failure> {
    config.validate()?;
    Ok(Box::into_raw(Box::new(HtlcSimulation {
        network,
        payments,
        config,
        output: None,
    })))
}

/// Generates a random network and payment script.
///
/// # Safety
/// `params` and `config` must be null or point to valid structs; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_generate(
    params: *const HtlcGenerationParams,
    config: *const HtlcSimConfig,
    out: *mut *mut HtlcSimulation,
) -> HtlcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let instance = netgen::generate(&params.into())?;
        *out = new_handle(instance.network, instance.payments, config.into())?;
        Ok(())
    })
}

/// Loads the network and payment files from directory `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string, `config` a valid struct, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_load(
    dir: *const c_char,
    config: *const HtlcSimConfig,
    out: *mut *mut HtlcSimulation,
) -> HtlcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let dir = path_arg(dir, "dir")?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let network = io::read_network(&dir)?;
        let payments = io::read_payments(&dir.join(io::PAYMENTS_FILE), network.n_peers())?;
        *out = new_handle(network, payments, config.into())?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_free(sim: *mut HtlcSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Writes the network and payment files into directory `dir`, which must exist.
///
/// # Safety
/// `sim` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_write_inputs(sim: *const HtlcSimulation, dir: *const c_char) -> HtlcStatus {
    guard(|| {
        let sim = handle_ref(sim)?;
        let dir = path_arg(dir, "dir")?;
        io::write_network(&dir, &sim.network)?;
        io::write_payments(&dir.join(io::PAYMENTS_FILE), &sim.payments)?;
        Ok(())
    })
}

/// Runs the simulation to completion. Running again starts over from the loaded inputs.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_run(sim: *mut HtlcSimulation) -> HtlcStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("simulation handle"))?;
        sim.output = Some(engine::run(sim.network.clone(), sim.payments.clone(), sim.config)?);
        Ok(())
    })
}

fn output(sim: &HtlcSimulation) -> Result<&SimOutput, Failure> {
    sim.output
        .as_ref()
        .ok_or_else(|| Failure(HtlcStatus::NotRun, "simulation has not been run".into()))
}

/// Number of payments, whether or not the simulation has run.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_payment_count(sim: *const HtlcSimulation, out: *mut usize) -> HtlcStatus {
    guard(|| {
        let sim = handle_ref(sim)?;
        *out_arg(out, "out")? = sim.payments.len();
        Ok(())
    })
}

/// Final-state counts after [`htlc_simulation_run`].
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_outcomes(
    sim: *const HtlcSimulation,
    out: *mut HtlcOutcomeCounts,
) -> HtlcStatus {
    guard(|| {
        let sim = handle_ref(sim)?;
        let out = out_arg(out, "out")?;
        let mut counts = HtlcOutcomeCounts::default();
        for record in stats::records_from_payments(&output(sim)?.payments) {
            match stats::classify(&record) {
                Ok(Outcome::Success) => counts.success += 1,
                Ok(Outcome::FailNoRoute) => counts.fail_no_route += 1,
                Ok(Outcome::FailUnbalanced) => counts.fail_unbalanced += 1,
                Ok(Outcome::FailUncooperative) => counts.fail_uncooperative += 1,
                Ok(Outcome::FailTimeout) => counts.fail_timeout += 1,
                Ok(Outcome::Unknown) => counts.unknown += 1,
                Err(_) => counts.pending += 1,
            }
        }
        *out = counts;
        Ok(())
    })
}

/// Number of route searches performed by the last run.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_route_searches(sim: *const HtlcSimulation, out: *mut u64) -> HtlcStatus {
    guard(|| {
        let sim = handle_ref(sim)?;
        *out_arg(out, "out")? = output(sim)?.stats.route_searches;
        Ok(())
    })
}

/// Writes the raw per-payment results of the last run into directory `dir`.
///
/// # Safety
/// `sim` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_write_results(sim: *const HtlcSimulation, dir: *const c_char) -> HtlcStatus {
    guard(|| {
        let sim = handle_ref(sim)?;
        let dir = path_arg(dir, "dir")?;
        let records = stats::records_from_payments(&output(sim)?.payments);
        io::write_records(&dir.join(io::RAW_OUTPUT_FILE), &records)?;
        Ok(())
    })
}

/// Batch-means statistics of the last run.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htlc_simulation_analyze(
    sim: *const HtlcSimulation,
    n_batches: usize,
    warmup_batches: usize,
    out: *mut HtlcStatistics,
) -> HtlcStatus {
    guard(|| {
        let sim = handle_ref(sim)?;
        let out = out_arg(out, "out")?;
        let records = stats::records_from_payments(&output(sim)?.payments);
        *out = analyze_records(&records, n_batches, warmup_batches)?;
        Ok(())
    })
}

/// Batch-means statistics of a raw per-payment file in directory `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htlc_analyze_dir(
    dir: *const c_char,
    n_batches: usize,
    warmup_batches: usize,
    out: *mut HtlcStatistics,
) -> HtlcStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let out = out_arg(out, "out")?;
        let records = io::read_records(&dir.join(io::RAW_OUTPUT_FILE))?;
        *out = analyze_records(&records, n_batches, warmup_batches)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_into_core_types() {
        let p = htlc_generation_params_default();
        assert_eq!(GenerationParams::from(&p), GenerationParams::default());
        let c = htlc_sim_config_default();
        assert_eq!(SimConfig::from(&c), SimConfig::default());
    }

    #[test]
    fn panics_become_status_codes() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, HtlcStatus::Panic);
        let msg = unsafe { CStr::from_ptr(htlc_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("boom"));
    }

    #[test]
    fn interior_nul_in_message_is_dropped() {
        set_last_error("a\0b");
        let msg = unsafe { CStr::from_ptr(htlc_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "ab");
    }
}
