use std::io::Write;

use pgrtb_core::bidlog::{
    aggregate, ingest, synthesize, write_bids, BidDist, BidDistKind, BidderCount, ColumnMap, MarketSpec, SlotSpec,
    TimeWindow, SECONDS_PER_DAY,
};
use pgrtb_core::evaluation::{cluster_slots, run_slot_pipeline, PipelineConfig, PipelineReport};
use pgrtb_core::rlwr::MarketCurves;
use pgrtb_core::Error;
use proptest::prelude::*;

fn spec() -> MarketSpec {
    let slot = |id: &str, bidders: f64| SlotSpec {
        slot_id: id.into(),
        impressions: 600 * 6,
        bidders_mean: bidders,
        bid_dist: BidDist {
            kind: BidDistKind::LogNormal,
            mu: 0.0,
            sigma: 0.5,
        },
        start: 0,
        end: 6 * SECONDS_PER_DAY,
        bidders: BidderCount::Poisson,
        diurnal_amplitude: 0.6,
        advertisers: 100,
    };
    MarketSpec {
        slots: vec![slot("a", 3.0), slot("b", 3.4), slot("c", 9.0)],
    }
}

fn day(from: i64, to: i64) -> TimeWindow {
    TimeWindow::new(from * SECONDS_PER_DAY, to * SECONDS_PER_DAY).unwrap()
}

fn pipeline(records: &[pgrtb_core::bidlog::BidRecord], slot: &str) -> PipelineReport {
    let mut config = PipelineConfig::new(slot, day(0, 5), day(5, 6));
    config.m = 60;
    config.seed = 4;
    run_slot_pipeline(records, &config).unwrap()
}

#[test]
fn bid_log_round_trips_through_disk() {
    let records = synthesize(&spec(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bids.csv");
    let mut file = std::fs::File::create(&path).unwrap();
    write_bids(&mut file, &records).unwrap();
    file.flush().unwrap();
    assert_eq!(ingest(&path, &ColumnMap::default()).unwrap(), records);
}

#[test]
fn malformed_row_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "timestamp,slot_id,advertiser_id,impression_id,bid_cpm\n1,s,a,i,1.0\n2,s,a,j,abc\n").unwrap();
    match ingest(&path, &ColumnMap::default()) {
        Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn pipeline_artifacts_round_trip() {
    let records = synthesize(&spec(), 3).unwrap();
    let report = pipeline(&records, "c");
    let json = serde_json::to_string(&report).unwrap();
    let back: PipelineReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    let curves: MarketCurves = serde_json::from_str(&serde_json::to_string(&report.curves).unwrap()).unwrap();
    assert_eq!(curves, report.curves);
    assert!(report.forward_sold as f64 <= report.solution.contracted() + 1e-9);
}

#[test]
fn slots_cluster_by_competition() {
    let records = synthesize(&spec(), 3).unwrap();
    let stats: Vec<_> = aggregate(&records, day(0, 6)).into_values().collect();
    let c = cluster_slots(&stats, 2).unwrap();
    let members: Vec<Vec<String>> = c.clusters.iter().map(|c| c.member_slots.clone()).collect();
    assert_eq!(members, vec![vec!["a".to_string(), "b".into()], vec!["c".to_string()]]);
}

#[test]
fn higher_competition_prices_higher() {
    let records = synthesize(&spec(), 3).unwrap();
    let (low, high) = (pipeline(&records, "a"), pipeline(&records, "c"));
    assert!(high.solution.p0 > low.solution.p0);
    assert!(high.report.b2 > low.report.b2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn pipeline_invariants(seed in 0u64..1000) {
        let records = synthesize(&spec(), seed).unwrap();
        let r = pipeline(&records, "b");
        prop_assert!(r.report.b2 <= r.report.b1);
        prop_assert!(r.forward_sold as f64 <= r.solution.gamma_star * r.solution.total_supply + 1e-9);
        prop_assert_eq!(r.solution.contracted() + r.solution.auctioned(), r.solution.total_supply);
        let sched = &r.solution.schedule;
        prop_assert!(sched[1..].windows(2).all(|w| w[1].price <= w[0].price));
    }
}
