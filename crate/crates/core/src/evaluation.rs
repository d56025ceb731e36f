//! Experimental harness: slot clustering by competition, replay of the
//! guaranteed sale against held-out bids, revenue accounting, parameter
//! sweeps and the per-slot train/solve/test pipeline.

use std::collections::HashSet;
use std::io::Write;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::bidlog::{resolve_auctions, slot_stats, AuctionOutcome, BidRecord, Resolution, SlotStats, TimeWindow, SECONDS_PER_HOUR};
use crate::demand::{bid_quantile, calibrate_alpha, calibrate_zeta, default_price_grid, DemandModel, DEFAULT_BETA, DEFAULT_ETA, DEFAULT_GRID_POINTS};
use crate::error::{Error, Result};
use crate::pricing::{inner_solve, pg_solve, solve_at, Candidate, PGSolution, PricingProblem, Sampling, DEFAULT_KAPPA, DEFAULT_LAMBDA, DEFAULT_OMEGA, DEFAULT_SAMPLES};
use crate::rlwr::{build_market_curves_with, MarketCurves, DEFAULT_DEGREE, DEFAULT_SPAN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotCluster {
    pub cluster_id: usize,
    pub member_slots: Vec<String>,
    pub mean_xi: f64,
}

/// Average-linkage merge tree over slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dendrogram {
    Leaf { slot_id: String, xi: f64 },
    Merge { height: f64, left: Box<Dendrogram>, right: Box<Dendrogram> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<SlotCluster>,
    pub dendrogram: Dendrogram,
}

/// Agglomerative clustering of slots on their per-impression demand with
/// average linkage, cut to `k` clusters. Clusters are numbered by
/// increasing mean demand.
pub fn cluster_slots(stats: &[SlotStats], k: usize) -> Result<Clustering> {
    if k == 0 || k > stats.len() {
        return Err(Error::invalid(format!("cannot cut {} slots into {k} clusters", stats.len())));
    }
    let mut slots: Vec<(f64, String)> = stats
        .iter()
        .map(|s| {
            s.xi.map(|xi| (xi, s.slot_id.clone()))
                .ok_or_else(|| Error::InsufficientData(format!("slot `{}` has no supply", s.slot_id)))
        })
        .collect::<Result<_>>()?;
    slots.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    struct Group {
        members: Vec<usize>,
        tree: Dendrogram,
    }
    let mut groups: Vec<Group> = slots
        .iter()
        .enumerate()
        .map(|(i, (xi, id))| Group {
            members: vec![i],
            tree: Dendrogram::Leaf {
                slot_id: id.clone(),
                xi: *xi,
            },
        })
        .collect();
    let xis: Vec<f64> = slots.iter().map(|s| s.0).collect();
    let xis = &xis;
    let linkage = |a: &Group, b: &Group| {
        let total: f64 = a
            .members
            .iter()
            .flat_map(|&i| b.members.iter().map(move |&j| (xis[i] - xis[j]).abs()))
            .sum();
        total / (a.members.len() * b.members.len()) as f64
    };

    let mut cut: Option<Vec<Vec<usize>>> = None;
    while groups.len() > 1 {
        if groups.len() == k {
            cut = Some(groups.iter().map(|g| g.members.clone()).collect());
        }
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let d = linkage(&groups[i], &groups[j]);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (height, i, j) = best;
        let right = groups.remove(j);
        let left = groups.remove(i);
        let mut members = left.members;
        members.extend(right.members);
        members.sort_unstable();
        let merged = Group {
            members,
            tree: Dendrogram::Merge {
                height,
                left: Box::new(left.tree),
                right: Box::new(right.tree),
            },
        };
        // Keep groups ordered by their first member so ties resolve the
        // same way whatever the input order.
        let pos = groups.partition_point(|g| g.members[0] < merged.members[0]);
        groups.insert(pos, merged);
    }
    let parts = cut.unwrap_or_else(|| vec![(0..slots.len()).collect()]);
    let mut clusters: Vec<SlotCluster> = parts
        .into_iter()
        .map(|members| SlotCluster {
            cluster_id: 0,
            mean_xi: members.iter().map(|&i| slots[i].0).sum::<f64>() / members.len() as f64,
            member_slots: members.iter().map(|&i| slots[i].1.clone()).collect(),
        })
        .collect();
    clusters.sort_by(|a, b| a.mean_xi.total_cmp(&b.mean_xi).then_with(|| a.member_slots.cmp(&b.member_slots)));
    for (i, c) in clusters.iter_mut().enumerate() {
        c.cluster_id = i;
    }
    let dendrogram = groups.pop().expect("at least one slot").tree;
    Ok(Clustering { clusters, dendrogram })
}

/// Decides whether a bid converts into a forward purchase at a price.
pub trait WillingnessRule: Sync {
    fn willing(&self, bid: f64, price: f64) -> bool;
}

/// Buys when the observed bid is at least `threshold` times the price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidCoversPrice {
    pub threshold: f64,
}

impl Default for BidCoversPrice {
    fn default() -> Self {
        BidCoversPrice { threshold: 1.0 }
    }
}

impl WillingnessRule for BidCoversPrice {
    fn willing(&self, bid: f64, price: f64) -> bool {
        bid >= price * self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayDay {
    pub tau: f64,
    pub price: f64,
    pub capacity: f64,
    pub sold: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub sold: u64,
    pub forward_revenue: f64,
    pub days: Vec<ReplayDay>,
    /// Test bids left for the delivery-date auctions.
    pub residual: Vec<BidRecord>,
}

fn check_slot(expected: Option<&str>, found: &str) -> Result<()> {
    match expected {
        Some(e) if e != found => Err(Error::SlotMismatch {
            expected: e.to_string(),
            found: found.to_string(),
        }),
        _ => Ok(()),
    }
}

/// Replays the guaranteed sale against held-out bids. Selling days run from
/// the start of the horizon towards delivery. Each day may sell up to the
/// cumulative modelled demand, never more than the contracted amount in
/// total. Buyers are the highest willing bids on impressions still in the
/// pool. A purchase takes the buyer's impression out of the auction along
/// with every bid on it.
pub fn replay_guaranteed_sale(solution: &PGSolution, test_bids: &[BidRecord], rule: &dyn WillingnessRule) -> Result<Replay> {
    let slot = solution.slot_id.as_deref().or(test_bids.first().map(|b| b.slot_id.as_str()));
    for b in test_bids {
        check_slot(slot, &b.slot_id)?;
    }
    let mut order: Vec<usize> = (0..test_bids.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&test_bids[a], &test_bids[b]);
        y.bid
            .total_cmp(&x.bid)
            .then_with(|| x.advertiser_id.cmp(&y.advertiser_id))
            .then_with(|| x.impression_id.cmp(&y.impression_id))
    });

    let contracted = (solution.contracted() + 1e-9).floor() as u64;
    let mut taken: HashSet<&str> = HashSet::new();
    let mut cursor = 0;
    let mut cumulative = 0.0;
    let mut sold = 0u64;
    let mut revenue = 0.0;
    let mut days = Vec::with_capacity(solution.schedule.len());
    for row in solution.schedule.iter().rev() {
        cumulative += row.expected_sales;
        let allowed = ((cumulative + 1e-9).floor() as u64).min(contracted);
        let mut today = 0;
        while sold < allowed {
            while cursor < order.len() && taken.contains(test_bids[order[cursor]].impression_id.as_str()) {
                cursor += 1;
            }
            let Some(&idx) = order.get(cursor) else { break };
            if !rule.willing(test_bids[idx].bid, row.price) {
                break;
            }
            taken.insert(test_bids[idx].impression_id.as_str());
            sold += 1;
            today += 1;
            revenue += row.price;
        }
        days.push(ReplayDay {
            tau: row.tau,
            price: row.price,
            capacity: row.expected_sales,
            sold: today,
        });
    }
    let residual = test_bids
        .iter()
        .filter(|b| !taken.contains(b.impression_id.as_str()))
        .cloned()
        .collect();
    Ok(Replay {
        sold,
        forward_revenue: revenue,
        days,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueReport {
    /// Optimal total revenue estimated by the model.
    pub r1: f64,
    /// Optimal total revenue replayed against actual bids.
    pub r2: f64,
    /// Actual first-price auction revenue.
    pub b1: f64,
    /// Actual second-price auction revenue.
    pub b2: f64,
    /// Auction revenue estimated from the fitted curves.
    pub b3: f64,
    pub forward_revenue: f64,
    pub residual_revenue: f64,
    pub estimated_increase_vs_b2: f64,
    pub estimated_increase_vs_b3: f64,
    pub actual_increase_vs_b2: f64,
    pub actual_increase_vs_b3: f64,
}

fn check_outcome_slots(expected: Option<&str>, outcomes: &[AuctionOutcome]) -> Result<()> {
    let slot = expected.or(outcomes.first().map(|o| o.slot_id.as_str()));
    outcomes.iter().try_for_each(|o| check_slot(slot, &o.slot_id))
}

pub fn compute_revenues(
    solution: &PGSolution,
    test_outcomes: &[AuctionOutcome],
    forward_revenue: f64,
    residual_outcomes: &[AuctionOutcome],
    curves: &MarketCurves,
) -> Result<RevenueReport> {
    let slot = solution
        .slot_id
        .as_deref()
        .or(test_outcomes.first().map(|o| o.slot_id.as_str()));
    check_outcome_slots(slot, test_outcomes)?;
    check_outcome_slots(slot, residual_outcomes)?;
    let b1: f64 = test_outcomes.iter().map(|o| o.first_price).sum();
    let b2: f64 = test_outcomes.iter().map(|o| o.second_price).sum();
    let b3 = solution.total_supply * curves.phi.value(solution.total_demand / solution.total_supply);
    let residual_revenue: f64 = residual_outcomes.iter().map(|o| o.second_price).sum();
    let r1 = solution.total_revenue;
    let r2 = forward_revenue + residual_revenue;
    let rel = |a: f64, b: f64| if b != 0.0 { a / b - 1.0 } else { f64::NAN };
    Ok(RevenueReport {
        r1,
        r2,
        b1,
        b2,
        b3,
        forward_revenue,
        residual_revenue,
        estimated_increase_vs_b2: rel(r1, b2),
        estimated_increase_vs_b3: rel(r1, b3),
        actual_increase_vs_b2: rel(r2, b2),
        actual_increase_vs_b3: rel(r2, b3),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Alpha,
    Beta,
    Zeta,
    Eta,
    OmegaKappa,
    Gamma,
    #[serde(rename = "T")]
    Horizon,
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => SweepParameter::Alpha,
            "beta" => SweepParameter::Beta,
            "zeta" => SweepParameter::Zeta,
            "eta" => SweepParameter::Eta,
            "omega_kappa" => SweepParameter::OmegaKappa,
            "gamma" => SweepParameter::Gamma,
            "T" => SweepParameter::Horizon,
            other => return Err(Error::UnknownParameter(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub feasible: bool,
    pub gamma_star: f64,
    #[serde(rename = "R")]
    pub total_revenue: f64,
    pub lambda_tilde: f64,
    pub p0: f64,
    /// Price at the start of the selling period.
    pub price_at_horizon: f64,
    /// Price one step before delivery.
    pub price_near_delivery: f64,
    /// Mean grid price after the delivery date.
    pub mean_price: f64,
}

impl SweepRow {
    fn from_schedule(value: f64, gamma: f64, r: f64, lambda_tilde: f64, prices: &[(f64, f64)]) -> Self {
        let after: Vec<f64> = prices.iter().skip(1).map(|p| p.1).collect();
        SweepRow {
            value,
            feasible: true,
            gamma_star: gamma,
            total_revenue: r,
            lambda_tilde,
            p0: prices[0].1,
            price_at_horizon: prices[prices.len() - 1].1,
            price_near_delivery: prices.get(1).map_or(f64::NAN, |p| p.1),
            mean_price: after.iter().sum::<f64>() / after.len().max(1) as f64,
        }
    }
}

fn candidate_row(value: f64, c: &Candidate) -> SweepRow {
    if !c.feasible {
        return SweepRow {
            value,
            feasible: false,
            gamma_star: c.gamma,
            total_revenue: f64::NEG_INFINITY,
            lambda_tilde: f64::NAN,
            p0: f64::NAN,
            price_at_horizon: f64::NAN,
            price_near_delivery: f64::NAN,
            mean_price: f64::NAN,
        };
    }
    let prices: Vec<(f64, f64)> = c.schedule.iter().map(|r| (r.tau, r.price)).collect();
    let lambda = c.multiplier.map_or(f64::NAN, |m| m.lagrange);
    SweepRow::from_schedule(value, c.gamma, c.total_revenue, lambda, &prices)
}

/// Re-solves `problem` for each value of `parameter`. With `gamma` set,
/// every point is priced at that forward fraction; otherwise the fraction
/// is searched for again at each point. The `gamma` sweep always prices at
/// the swept fraction.
pub fn sensitivity_sweep(
    problem: &PricingProblem,
    parameter: SweepParameter,
    values: &[f64],
    gamma: Option<f64>,
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&v| {
            let mut p = problem.clone();
            match parameter {
                SweepParameter::Alpha => p.demand.alpha = v,
                SweepParameter::Beta => p.demand.beta = v,
                SweepParameter::Zeta => p.demand.zeta = v,
                SweepParameter::Eta => p.demand.eta = v,
                SweepParameter::Horizon => p.demand.horizon = v,
                SweepParameter::OmegaKappa => {
                    if p.kappa > 0.0 {
                        p.omega = v / p.kappa;
                    } else {
                        p.kappa = 1.0;
                        p.omega = v;
                    }
                }
                SweepParameter::Gamma => return Ok(candidate_row(v, &inner_solve(&p, v)?)),
            }
            if let Some(g) = gamma {
                return Ok(candidate_row(v, &inner_solve(&p, g)?));
            }
            let sol = pg_solve(&p)?;
            let prices: Vec<(f64, f64)> = sol.schedule.iter().map(|r| (r.tau, r.price)).collect();
            Ok(SweepRow::from_schedule(v, sol.gamma_star, sol.total_revenue, sol.lambda_tilde, &prices))
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<sweep writer>", e))?;
    Ok(())
}

/// Settings for the per-slot train, solve and test pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub slot_id: String,
    /// Bids used for curves and demand calibration.
    pub train: TimeWindow,
    /// Window whose supply and demand feed the optimiser. Defaults to the
    /// test window.
    #[serde(default)]
    pub dev: Option<TimeWindow>,
    /// Delivery window used for the revenue comparison.
    pub test: TimeWindow,
    #[serde(default = "default_span")]
    pub span: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Width of the curve training windows in seconds.
    #[serde(default = "default_curve_window")]
    pub curve_window: i64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Selling period in days; defaults to the length of the training window.
    #[serde(default, rename = "T")]
    pub horizon: Option<f64>,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
    /// Quantile of training bids used as the reference price for zeta.
    #[serde(default = "default_reference_quantile")]
    pub reference_quantile: f64,
    #[serde(default)]
    pub floor: f64,
    #[serde(default = "default_threshold")]
    pub willingness_threshold: f64,
    #[serde(default)]
    pub supply: Option<f64>,
    #[serde(default)]
    pub demand: Option<f64>,
    /// Forces the forward fraction instead of searching for it.
    #[serde(default)]
    pub fixed_gamma: Option<f64>,
}

fn default_span() -> f64 {
    DEFAULT_SPAN
}
fn default_degree() -> usize {
    DEFAULT_DEGREE
}
fn default_curve_window() -> i64 {
    SECONDS_PER_HOUR
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_eta() -> f64 {
    DEFAULT_ETA
}
fn default_omega() -> f64 {
    DEFAULT_OMEGA
}
fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_m() -> usize {
    DEFAULT_SAMPLES
}
fn default_reference_quantile() -> f64 {
    0.99
}
fn default_threshold() -> f64 {
    1.0
}

impl PipelineConfig {
    pub fn new(slot_id: impl Into<String>, train: TimeWindow, test: TimeWindow) -> Self {
        PipelineConfig {
            slot_id: slot_id.into(),
            train,
            dev: None,
            test,
            span: DEFAULT_SPAN,
            degree: DEFAULT_DEGREE,
            curve_window: SECONDS_PER_HOUR,
            alpha: None,
            zeta: None,
            beta: DEFAULT_BETA,
            eta: DEFAULT_ETA,
            horizon: None,
            omega: DEFAULT_OMEGA,
            kappa: DEFAULT_KAPPA,
            lambda: DEFAULT_LAMBDA,
            m: DEFAULT_SAMPLES,
            seed: 0,
            sampling: Sampling::Uniform,
            reference_quantile: 0.99,
            floor: 0.0,
            willingness_threshold: 1.0,
            supply: None,
            demand: None,
            fixed_gamma: None,
        }
    }
}

fn slot_bids(records: &[BidRecord], slot: &str, window: TimeWindow) -> Vec<BidRecord> {
    records
        .iter()
        .filter(|r| r.slot_id == slot && window.contains(r.timestamp))
        .cloned()
        .collect()
}

/// Fits market curves for one slot from auctions in consecutive windows of
/// `width` seconds.
pub fn estimate_curves(records: &[BidRecord], slot: &str, train: TimeWindow, width: i64, span: f64, degree: usize, floor: f64) -> Result<MarketCurves> {
    let bids = slot_bids(records, slot, train);
    let resolved = resolve_auctions(&bids, floor)?;
    let windows: Vec<Vec<AuctionOutcome>> = train
        .split(width)
        .iter()
        .map(|w| resolved.outcomes.iter().filter(|o| w.contains(o.timestamp)).cloned().collect())
        .collect();
    build_market_curves_with(&windows, span, degree)
}

/// Calibrated demand model for one slot. Explicit `alpha` or `zeta` in the
/// config bypass calibration.
pub fn calibrate_demand(train_bids: &[f64], total_demand: f64, config: &PipelineConfig) -> Result<DemandModel> {
    let alpha = match config.alpha {
        Some(a) => a,
        None => calibrate_alpha(train_bids, &default_price_grid(train_bids, DEFAULT_GRID_POINTS))?,
    };
    let zeta = match config.zeta {
        Some(z) => z,
        None => {
            let reference = bid_quantile(train_bids, config.reference_quantile)?;
            calibrate_zeta(total_demand, train_bids, reference, alpha)?
        }
    };
    let model = DemandModel {
        alpha,
        beta: config.beta,
        zeta,
        eta: config.eta,
        horizon: config.horizon.unwrap_or_else(|| config.train.days()),
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub slot_id: String,
    pub curves: MarketCurves,
    pub demand: DemandModel,
    pub solution: PGSolution,
    pub forward_sold: u64,
    pub report: RevenueReport,
}

/// Runs curves, calibration, optimisation and replay for one slot.
pub fn run_slot_pipeline(records: &[BidRecord], config: &PipelineConfig) -> Result<PipelineReport> {
    let slot = config.slot_id.as_str();
    let curves = estimate_curves(records, slot, config.train, config.curve_window, config.span, config.degree, config.floor)?;
    let train_bids: Vec<f64> = slot_bids(records, slot, config.train).iter().map(|b| b.bid).collect();

    let plan = slot_stats(records, slot, config.dev.unwrap_or(config.test));
    let supply = config.supply.unwrap_or(plan.supply as f64);
    let total_demand = config.demand.unwrap_or(plan.demand as f64);
    let demand = calibrate_demand(&train_bids, total_demand, config)?;
    info!("slot {slot}: S {supply}, Q {total_demand}, demand model {demand:?}");

    let problem = PricingProblem {
        total_demand,
        total_supply: supply,
        omega: config.omega,
        kappa: config.kappa,
        lambda: config.lambda,
        curves: curves.clone(),
        demand,
        m: config.m,
        seed: config.seed,
        sampling: config.sampling,
        slot_id: Some(slot.to_string()),
    };
    let solution = match config.fixed_gamma {
        None => pg_solve(&problem)?,
        Some(g) => solve_at(&problem, g)?,
    };

    let test_bids = slot_bids(records, slot, config.test);
    let test: Resolution = resolve_auctions(&test_bids, config.floor)?;
    let rule = BidCoversPrice {
        threshold: config.willingness_threshold,
    };
    let replay = replay_guaranteed_sale(&solution, &test_bids, &rule)?;
    let residual = resolve_auctions(&replay.residual, config.floor)?;
    let report = compute_revenues(&solution, &test.outcomes, replay.forward_revenue, &residual.outcomes, &curves)?;
    Ok(PipelineReport {
        slot_id: slot.to_string(),
        curves,
        demand,
        solution,
        forward_sold: replay.sold,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{mc_order_stats, LogNormalParams};
    use crate::bidlog::{synthesize, BidDist, BidDistKind, BidderCount, MarketSpec, SlotSpec};
    use crate::pricing::{Diagnostics, ScheduleRow, TerminalRule};
    use crate::rlwr::MarketCurves;
    use proptest::prelude::*;

    fn stats(xs: &[(&str, f64)]) -> Vec<SlotStats> {
        xs.iter()
            .map(|(id, xi)| SlotStats {
                slot_id: id.to_string(),
                supply: 100,
                demand: (xi * 100.0) as u64,
                xi: Some(*xi),
            })
            .collect()
    }

    fn members(c: &Clustering) -> Vec<Vec<String>> {
        c.clusters.iter().map(|c| c.member_slots.clone()).collect()
    }

    #[test]
    fn average_linkage_two_groups() {
        let s = stats(&[("a", 5.0), ("b", 5.1), ("c", 4.9), ("d", 9.0), ("e", 9.2)]);
        let c = cluster_slots(&s, 2).unwrap();
        assert_eq!(members(&c), vec![vec!["c", "a", "b"], vec!["d", "e"]]);
        assert!((c.clusters[1].mean_xi - 9.1).abs() < 1e-12);
        let json = serde_json::to_value(&c.dendrogram).unwrap();
        assert!(json["height"].as_f64().unwrap() > 3.9);
    }

    #[test]
    fn clustering_edge_cases() {
        let one = cluster_slots(&stats(&[("only", 3.0)]), 1).unwrap();
        assert_eq!(members(&one), vec![vec!["only"]]);
        assert!(cluster_slots(&stats(&[("a", 1.0)]), 2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn clustering_is_permutation_invariant_and_nested(
            xs in prop::collection::vec(0.0f64..20.0, 2..12), rot in 0usize..11, k in 1usize..6,
        ) {
            let named: Vec<(String, f64)> = xs.iter().enumerate().map(|(i, &x)| (format!("s{i:02}"), x)).collect();
            let k = k.min(named.len() - 1).max(1);
            let refs: Vec<(&str, f64)> = named.iter().map(|(n, x)| (n.as_str(), *x)).collect();
            let mut rotated = refs.clone();
            rotated.rotate_left(rot % refs.len());
            let a = cluster_slots(&stats(&refs), k).unwrap();
            let b = cluster_slots(&stats(&rotated), k).unwrap();
            prop_assert_eq!(members(&a), members(&b));
            // Every (k+1)-cluster lies inside one k-cluster.
            let finer = cluster_slots(&stats(&refs), k + 1).unwrap();
            for f in &finer.clusters {
                prop_assert!(a.clusters.iter().any(|c| f.member_slots.iter().all(|m| c.member_slots.contains(m))));
            }
        }
    }

    fn solution(gamma: f64, supply: f64, rows: &[(f64, f64, f64)]) -> PGSolution {
        PGSolution {
            slot_id: Some("s".into()),
            gamma_star: gamma,
            lambda_tilde: 0.0,
            price_level: 0.0,
            p0: rows[0].1,
            schedule: rows
                .iter()
                .map(|&(tau, price, expected_sales)| ScheduleRow { tau, price, expected_sales })
                .collect(),
            guaranteed_revenue: 0.0,
            rtb_revenue: 0.0,
            total_revenue: 0.0,
            xi_remaining: 0.0,
            total_supply: supply,
            total_demand: supply * 3.0,
            diagnostics: Diagnostics {
                candidates: 1,
                infeasible_candidates: 0,
                sampling: Sampling::Uniform,
                seed: 0,
                terminal_rule: TerminalRule::RiskAdjusted,
                curve_clamped: false,
                multiplier_iterations: 0,
                forward_sales: rows.iter().map(|r| r.2).sum(),
            },
        }
    }

    fn bid(imp: usize, adv: usize, b: f64) -> BidRecord {
        BidRecord {
            timestamp: 0,
            slot_id: "s".into(),
            advertiser_id: format!("a{adv}"),
            impression_id: format!("i{imp}"),
            bid: b,
        }
    }

    fn pool() -> Vec<BidRecord> {
        (0..20).flat_map(|i| (0..3).map(move |a| bid(i, a, 0.1 * (i + a) as f64 + 0.5))).collect()
    }

    #[test]
    fn prices_above_all_bids_sell_nothing() {
        let sol = solution(0.5, 20.0, &[(0.0, 99.0, 3.0), (1.0, 99.0, 3.0), (2.0, 99.0, 3.0)]);
        let r = replay_guaranteed_sale(&sol, &pool(), &BidCoversPrice::default()).unwrap();
        assert_eq!(r.sold, 0);
        assert_eq!(r.residual, pool());
    }

    #[test]
    fn zero_price_is_capacity_limited() {
        let sol = solution(0.5, 20.0, &[(0.0, 0.0, 2.0), (1.0, 0.0, 1.5), (2.0, 0.0, 1.5)]);
        let r = replay_guaranteed_sale(&sol, &pool(), &BidCoversPrice::default()).unwrap();
        // Days run from tau = 2 to 0: cumulative 1.5, 3.0, 5.0.
        assert_eq!(r.days.iter().map(|d| d.sold).collect::<Vec<_>>(), vec![1, 2, 2]);
        assert_eq!(r.sold, 5);
        assert_eq!(r.residual.len(), 60 - 5 * 3);
        assert_eq!(r.forward_revenue, 0.0);
    }

    #[test]
    fn empty_pool() {
        let sol = solution(0.5, 20.0, &[(0.0, 0.0, 2.0), (1.0, 0.0, 1.5)]);
        let r = replay_guaranteed_sale(&sol, &[], &BidCoversPrice::default()).unwrap();
        assert_eq!((r.sold, r.residual.len()), (0, 0));
    }

    #[test]
    fn mismatched_slot_is_rejected() {
        let sol = solution(0.5, 20.0, &[(0.0, 0.0, 2.0), (1.0, 0.0, 1.5)]);
        let mut bids = pool();
        bids[4].slot_id = "other".into();
        assert!(matches!(
            replay_guaranteed_sale(&sol, &bids, &BidCoversPrice::default()),
            Err(Error::SlotMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn forward_sales_bounded_by_contract(
            gamma in 0.0f64..0.99, caps in prop::collection::vec(0.0f64..10.0, 2..8), price in 0.0f64..3.0,
        ) {
            let rows: Vec<(f64, f64, f64)> = caps.iter().enumerate().map(|(k, &c)| (k as f64, price, c)).collect();
            let sol = solution(gamma, 20.0, &rows);
            let r = replay_guaranteed_sale(&sol, &pool(), &BidCoversPrice::default()).unwrap();
            prop_assert!(r.sold as f64 <= gamma * 20.0 + 1e-9);
            prop_assert!(r.residual.iter().all(|b| pool().contains(b)));
            // Removing bidders never raises a surviving auction's price.
            let before = resolve_auctions(&pool(), 0.0).unwrap();
            let after = resolve_auctions(&r.residual, 0.0).unwrap();
            for o in &after.outcomes {
                let old = before.outcomes.iter().find(|x| x.impression_id == o.impression_id).unwrap();
                prop_assert!(o.second_price <= old.second_price);
            }
        }
    }

    fn lognormal_market(bidders: f64, impressions: u64, seed: u64) -> Vec<BidRecord> {
        let spec = MarketSpec {
            slots: vec![SlotSpec {
                slot_id: "s".into(),
                impressions,
                bidders_mean: bidders,
                bid_dist: BidDist {
                    kind: BidDistKind::LogNormal,
                    mu: 0.0,
                    sigma: 0.5,
                },
                start: 0,
                end: SECONDS_PER_DAY_TEST,
                bidders: BidderCount::Fixed,
                diurnal_amplitude: 0.0,
                advertisers: 50,
            }],
        };
        synthesize(&spec, seed).unwrap()
    }

    const SECONDS_PER_DAY_TEST: i64 = 86_400;

    #[test]
    fn null_allocation_replays_to_second_price_revenue() {
        let bids = lognormal_market(5.0, 2000, 1);
        let sol = solution(0.0, 2000.0, &[(0.0, 1.0, 0.0), (1.0, 1.0, 0.0)]);
        let replay = replay_guaranteed_sale(&sol, &bids, &BidCoversPrice::default()).unwrap();
        let test = resolve_auctions(&bids, 0.0).unwrap();
        let residual = resolve_auctions(&replay.residual, 0.0).unwrap();
        let p = LogNormalParams::new(0.0, 0.5).unwrap();
        let grid: Vec<f64> = (0..=16).map(|i| 2.0 + 0.5 * i as f64).collect();
        let curves = MarketCurves::from_lognormal(&p, &grid, 0.3, 2).unwrap();
        let report = compute_revenues(&sol, &test.outcomes, replay.forward_revenue, &residual.outcomes, &curves).unwrap();
        assert_eq!(report.r2, report.b2);
        assert!(report.b2 <= report.b1);
    }

    #[test]
    fn revenue_ratio_matches_order_statistics() {
        let bids = lognormal_market(5.0, 20_000, 2);
        let test = resolve_auctions(&bids, 0.0).unwrap();
        let ratio = test.second_price_revenue() / test.first_price_revenue();
        let mc = mc_order_stats(&LogNormalParams::new(0.0, 0.5).unwrap(), 5, 400_000, 3).unwrap();
        let oracle = mc.second.mean / mc.first.mean;
        assert!((ratio - oracle).abs() < 0.01 * oracle, "{ratio} vs {oracle}");
    }

    #[test]
    fn outcome_slot_mismatch() {
        let sol = solution(0.0, 10.0, &[(0.0, 1.0, 0.0), (1.0, 1.0, 0.0)]);
        let mut o = resolve_auctions(&pool(), 0.0).unwrap().outcomes;
        o[0].slot_id = "x".into();
        let p = LogNormalParams::new(0.0, 0.5).unwrap();
        let curves = MarketCurves::from_lognormal(&p, &[2.0, 3.0, 4.0, 5.0], 1.0, 2).unwrap();
        assert!(matches!(compute_revenues(&sol, &o, 0.0, &[], &curves), Err(Error::SlotMismatch { .. })));
    }

    #[test]
    fn sweep_parameter_names() {
        assert_eq!("T".parse::<SweepParameter>().unwrap(), SweepParameter::Horizon);
        assert_eq!("omega_kappa".parse::<SweepParameter>().unwrap(), SweepParameter::OmegaKappa);
        assert!(matches!("delta".parse::<SweepParameter>(), Err(Error::UnknownParameter(_))));
    }

    fn sweep_problem() -> PricingProblem {
        let p = LogNormalParams::new(0.0, 0.5).unwrap();
        let grid: Vec<f64> = (0..=56).map(|i| 2.0 + 0.5 * i as f64).collect();
        PricingProblem {
            total_demand: 5000.0,
            total_supply: 1000.0,
            omega: 0.05,
            kappa: 1.0,
            lambda: 1.0,
            curves: MarketCurves::from_lognormal(&p, &grid, 0.1, 2).unwrap(),
            demand: DemandModel {
                alpha: 0.86,
                beta: 0.2,
                zeta: 400.0,
                eta: 0.2,
                horizon: 10.0,
            },
            m: 40,
            seed: 1,
            sampling: Sampling::Stratified,
            slot_id: None,
        }
    }

    #[test]
    fn single_value_sweep() {
        let rows = sensitivity_sweep(&sweep_problem(), SweepParameter::Alpha, &[0.9], None).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].feasible);
        let mut out = Vec::new();
        write_sweep_csv(&mut out, &rows).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 2);
    }

    #[test]
    fn fixed_fraction_sweeps() {
        let p = sweep_problem();
        let alpha = sensitivity_sweep(&p, SweepParameter::Alpha, &[0.8, 1.0], Some(0.2)).unwrap();
        assert!(alpha[1].mean_price < alpha[0].mean_price);
        assert!(alpha.iter().all(|r| r.gamma_star == 0.2));
        let horizon = sensitivity_sweep(&p, SweepParameter::Horizon, &[4.0, 8.0], Some(0.2)).unwrap();
        assert!(horizon[1].price_near_delivery > horizon[0].price_near_delivery);
        let infeasible = sensitivity_sweep(&p, SweepParameter::Gamma, &[0.99], None).unwrap();
        assert!(!infeasible[0].feasible);
    }
}
