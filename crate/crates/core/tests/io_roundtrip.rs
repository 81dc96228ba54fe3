use std::fs;
use std::path::Path;

use htlcsim::io::{self, IoError};
use htlcsim::model::{ChannelId, FailReason, PaymentId, PaymentResult, PeerId};
use htlcsim::netgen::{self, GenerationParams};
use htlcsim::stats::PaymentRecord;
use proptest::prelude::*;

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

/// A valid two-peer network with one channel, as text.
fn tiny_network(dir: &Path) {
    write(dir, io::PEERS_FILE, "id\n0\n1\n");
    write(dir, io::CHANNELS_FILE, "id,peer1,peer2,capacity\n0,0,1,100\n");
    write(
        dir,
        io::ENDPOINTS_FILE,
        "channel_id,owner_peer,balance,base_fee_msat,prop_fee_ppm,timelock_delta,min_htlc\n\
         0,0,60,1000,1000,144,1\n\
         0,1,40,1000,1000,144,1\n",
    );
}

#[test]
fn generated_instance_survives_a_round_trip() {
    let params = GenerationParams {
        n_peers: 200,
        n_payments: 500,
        seed: 3,
        ..GenerationParams::default()
    };
    let inst = netgen::generate(&params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    io::write_network(dir.path(), &inst.network).unwrap();
    io::write_payments(&dir.path().join(io::PAYMENTS_FILE), &inst.payments).unwrap();

    let network = io::read_network(dir.path()).unwrap();
    assert_eq!(network, inst.network);
    let payments = io::read_payments(&dir.path().join(io::PAYMENTS_FILE), network.n_peers()).unwrap();
    assert_eq!(payments, inst.payments);

    // Writing what was read gives the same bytes.
    let again = tempfile::tempdir().unwrap();
    io::write_network(again.path(), &network).unwrap();
    for f in [io::PEERS_FILE, io::CHANNELS_FILE, io::ENDPOINTS_FILE] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn hand_written_network_loads() {
    let dir = tempfile::tempdir().unwrap();
    tiny_network(dir.path());
    let net = io::read_network(dir.path()).unwrap();
    assert_eq!(net.n_peers(), 2);
    let ch = &net.channels[0];
    assert_eq!((ch.capacity, ch.endpoint1.balance, ch.endpoint2.balance), (100, 60, 40));
    assert_eq!(ch.endpoint2.owner, PeerId(1));
}

fn network_error(edit: impl FnOnce(&Path)) -> IoError {
    let dir = tempfile::tempdir().unwrap();
    tiny_network(dir.path());
    edit(dir.path());
    io::read_network(dir.path()).unwrap_err()
}

#[test]
fn balances_must_add_up_to_capacity() {
    let err = network_error(|d| write(d, io::CHANNELS_FILE, "id,peer1,peer2,capacity\n0,0,1,101\n"));
    assert!(matches!(err, IoError::Inconsistent { .. }), "{err}");
    assert!(err.to_string().contains("101"));
}

#[test]
fn each_channel_needs_both_endpoints() {
    let err = network_error(|d| {
        write(
            d,
            io::ENDPOINTS_FILE,
            "channel_id,owner_peer,balance,base_fee_msat,prop_fee_ppm,timelock_delta,min_htlc\n0,0,60,1000,1000,144,1\n",
        )
    });
    assert!(matches!(err, IoError::Inconsistent { .. }), "{err}");
}

#[test]
fn malformed_network_files_are_rejected() {
    let dup = network_error(|d| write(d, io::PEERS_FILE, "id\n0\n0\n"));
    assert!(matches!(dup, IoError::Invalid { line: 3, .. }), "{dup}");

    let unknown = network_error(|d| write(d, io::CHANNELS_FILE, "id,peer1,peer2,capacity\n0,0,7,100\n"));
    assert!(matches!(unknown, IoError::Malformed { ref column, .. } if column == "peer2"), "{unknown}");

    let header = network_error(|d| write(d, io::CHANNELS_FILE, "id,a,b,capacity\n0,0,1,100\n"));
    assert!(matches!(header, IoError::Header { .. }), "{header}");

    let signed = network_error(|d| write(d, io::CHANNELS_FILE, "id,peer1,peer2,capacity\n0,0,1,-100\n"));
    assert!(matches!(signed, IoError::Malformed { line: 2, .. }), "{signed}");

    let stranger = network_error(|d| {
        write(
            d,
            io::ENDPOINTS_FILE,
            "channel_id,owner_peer,balance,base_fee_msat,prop_fee_ppm,timelock_delta,min_htlc\n\
             0,0,60,1000,1000,144,1\n0,0,40,1000,1000,144,1\n",
        )
    });
    assert!(matches!(stranger, IoError::Invalid { .. }), "{stranger}");

    let missing = tempfile::tempdir().unwrap();
    assert!(matches!(io::read_network(missing.path()).unwrap_err(), IoError::Io { .. }));
}

#[test]
fn payment_files_are_validated() {
    let read = |text: &str| io::read_payments_from(text.as_bytes(), "payments.csv", 3);
    let header = "id,sender,receiver,amount,start_time_ms\n";
    assert!(read(header).unwrap().is_empty());
    assert!(matches!(read("").unwrap_err(), IoError::Header { .. }));
    assert!(matches!(read(&format!("{header}0,0,1,5,0\n0,1,2,5,1\n")).unwrap_err(), IoError::Invalid { .. }));
    assert!(matches!(read(&format!("{header}0,0,9,5,0\n")).unwrap_err(), IoError::Malformed { .. }));
    assert!(matches!(read(&format!("{header}0,1,1,5,0\n")).unwrap_err(), IoError::Invalid { .. }));
    assert!(matches!(read(&format!("{header}0,0,1,0,0\n")).unwrap_err(), IoError::Malformed { .. }));
    assert!(read(&format!("{header}0,0,1,5\n")).is_err());

    let sorted = read(&format!("{header}0,0,1,5,30\n1,1,2,5,10\n2,2,0,5,10\n")).unwrap();
    let ids: Vec<usize> = sorted.iter().map(|p| p.id.0).collect();
    assert_eq!(ids, vec![1, 2, 0]);
}

#[test]
fn statistics_document_round_trips() {
    let params = GenerationParams {
        n_peers: 50,
        n_payments: 400,
        ..GenerationParams::default()
    };
    let inst = netgen::generate(&params).unwrap();
    let out = htlcsim::engine::run(inst.network, inst.payments, Default::default()).unwrap();
    let records = htlcsim::stats::records_from_payments(&out.payments);
    let sp = htlcsim::stats::StatsParams {
        n_batches: 4,
        ..Default::default()
    };
    let report = htlcsim::stats::batch_means(&records, &sp).unwrap();
    let mut config = std::collections::BTreeMap::new();
    config.insert("seed".to_string(), serde_json::json!(42));
    let doc = io::StatisticsDocument::new(report.statistics, &sp, config);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(io::STATISTICS_FILE);
    io::write_statistics(&path, &doc).unwrap();
    assert_eq!(io::read_statistics(&path).unwrap(), doc);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.ends_with("}\n"));
    assert!(text.contains("\"p_success\""));
}

fn arb_record() -> impl Strategy<Value = PaymentRecord> {
    (
        0usize..1000,
        0usize..50,
        1u64..u64::MAX,
        0u64..1u64 << 40,
        prop::option::of(0u64..1u64 << 20),
        0usize..6,
        0u32..20,
        any::<bool>(),
        prop::collection::vec(0usize..100_000, 0..8),
    )
        .prop_map(|(id, sender, amount, start, dt, kind, attempts, uncoop, route)| {
            let (result, fail_reason) = [
                (PaymentResult::Success, FailReason::None),
                (PaymentResult::Fail, FailReason::NoRoute),
                (PaymentResult::Fail, FailReason::Unbalanced),
                (PaymentResult::Fail, FailReason::Uncooperative),
                (PaymentResult::Fail, FailReason::Timeout),
                (PaymentResult::Unknown, FailReason::None),
            ][kind];
            PaymentRecord {
                id: PaymentId(id),
                sender: PeerId(sender),
                receiver: PeerId(sender + 1),
                amount,
                start_time_ms: start,
                end_time_ms: dt.map(|d| start + d),
                result,
                fail_reason,
                attempts,
                uncooperative_encountered: uncoop,
                route: route.into_iter().map(ChannelId).collect(),
            }
        })
}

proptest! {
    #[test]
    fn records_round_trip(mut records in prop::collection::vec(arb_record(), 0..40)) {
        records.sort_by_key(|r| r.id);
        records.dedup_by_key(|r| r.id);
        let mut buf = Vec::new();
        io::write_records_to(&mut buf, &records).unwrap();
        let back = io::read_records_from(buf.as_slice(), "raw").unwrap();
        records.sort_by_key(|r| (r.start_time_ms, r.id));
        prop_assert_eq!(back, records);
    }

    #[test]
    fn payments_round_trip(seed in any::<u64>(), peers in 2usize..40, n in 0usize..200) {
        let params = GenerationParams { n_peers: peers, n_payments: n, seed, ..GenerationParams::default() };
        let payments = netgen::generate_payments(&params);
        let mut buf = Vec::new();
        io::write_payments_to(&mut buf, &payments).unwrap();
        let back = io::read_payments_from(buf.as_slice(), "payments", peers).unwrap();
        prop_assert_eq!(back, payments);
    }
}
