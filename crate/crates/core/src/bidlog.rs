//! Bid-log data model: CSV ingestion, second-price auction resolution,
//! supply/demand aggregation and seedable synthetic markets.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_HOUR: i64 = 3_600;

/// Header of the bid-log CSV, in column order.
pub const CSV_HEADER: [&str; 5] = ["timestamp", "slot_id", "advertiser_id", "impression_id", "bid_cpm"];

/// One advertiser bid on one impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidRecord {
    pub timestamp: i64,
    pub slot_id: String,
    pub advertiser_id: String,
    pub impression_id: String,
    #[serde(rename = "bid_cpm")]
    pub bid: f64,
}

/// Result of one sealed-bid second-price auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub impression_id: String,
    pub slot_id: String,
    pub timestamp: i64,
    pub winner_id: String,
    pub first_price: f64,
    pub second_price: f64,
    pub n_bidders: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub outcomes: Vec<AuctionOutcome>,
    /// Impressions where no bid reached the floor.
    pub unsold: usize,
}

impl Resolution {
    pub fn first_price_revenue(&self) -> f64 {
        self.outcomes.iter().map(|o| o.first_price).sum()
    }

    pub fn second_price_revenue(&self) -> f64 {
        self.outcomes.iter().map(|o| o.second_price).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub slot_id: String,
    #[serde(rename = "S")]
    pub supply: u64,
    #[serde(rename = "Q")]
    pub demand: u64,
    pub xi: Option<f64>,
}

/// Half-open interval `[start, end)` of epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: i64,
    pub end: i64,
}

impl TimeWindow {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end <= start {
            return Err(Error::invalid(format!("empty time window [{start}, {end})")));
        }
        Ok(TimeWindow { start, end })
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.start && t < self.end
    }

    pub fn days(&self) -> f64 {
        (self.end - self.start) as f64 / SECONDS_PER_DAY as f64
    }

    /// Consecutive sub-windows of `width` seconds; the last one is truncated.
    pub fn split(&self, width: i64) -> Vec<TimeWindow> {
        let mut out = Vec::new();
        let mut t = self.start;
        while t < self.end {
            let e = (t + width).min(self.end);
            out.push(TimeWindow { start: t, end: e });
            t = e;
        }
        out
    }
}

/// Maps logical fields onto CSV column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub timestamp: String,
    pub slot_id: String,
    pub advertiser_id: String,
    pub impression_id: String,
    pub bid: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            timestamp: CSV_HEADER[0].into(),
            slot_id: CSV_HEADER[1].into(),
            advertiser_id: CSV_HEADER[2].into(),
            impression_id: CSV_HEADER[3].into(),
            bid: CSV_HEADER[4].into(),
        }
    }
}

/// Reads a bid log from disk. Records are returned in file order; the first
/// malformed row aborts ingestion with an error naming its line.
pub fn ingest(path: impl AsRef<Path>, schema: &ColumnMap) -> Result<Vec<BidRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_bids(file, schema, path)
}

pub fn read_bids<R: Read>(reader: R, schema: &ColumnMap, origin: &Path) -> Result<Vec<BidRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        None => return Ok(Vec::new()),
        Some(h) => h?,
    };
    let find = |name: &str| -> Result<usize> {
        header.iter().position(|c| c.trim() == name).ok_or_else(|| Error::MalformedRow {
            path: origin.to_path_buf(),
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let cols = [
        find(&schema.timestamp)?,
        find(&schema.slot_id)?,
        find(&schema.advertiser_id)?,
        find(&schema.impression_id)?,
        find(&schema.bid)?,
    ];

    let mut out = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::MalformedRow {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let field = |i: usize| -> Result<&str> {
            row.get(cols[i])
                .map(str::trim)
                .ok_or_else(|| bad(format!("missing field `{}`", CSV_HEADER[i])))
        };
        let ts_raw = field(0)?;
        let timestamp: i64 = ts_raw
            .parse()
            .map_err(|_| bad(format!("unparseable timestamp `{ts_raw}`")))?;
        let bid_raw = field(4)?;
        let bid: f64 = bid_raw.parse().map_err(|_| bad(format!("unparseable bid `{bid_raw}`")))?;
        if !bid.is_finite() || bid < 0.0 {
            return Err(bad(format!("bid must be a non-negative number, got `{bid_raw}`")));
        }
        out.push(BidRecord {
            timestamp,
            slot_id: field(1)?.to_string(),
            advertiser_id: field(2)?.to_string(),
            impression_id: field(3)?.to_string(),
            bid,
        });
    }
    Ok(out)
}

pub fn write_bids<W: Write>(writer: W, records: &[BidRecord]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(true).from_writer(writer);
    for r in records {
        wtr.serialize(r)?;
    }
    if records.is_empty() {
        wtr.write_record(CSV_HEADER)?;
    }
    wtr.flush().map_err(|e| Error::io("<bid log writer>", e))?;
    Ok(())
}

/// Groups bids by impression and runs a sealed-bid second-price auction on
/// each. Equal top bids go to the lexicographically smallest advertiser id;
/// the price paid does not depend on the tie-break. Bids below `floor` do
/// not participate and a lone bidder pays the floor.
pub fn resolve_auctions(records: &[BidRecord], floor: f64) -> Result<Resolution> {
    if !(floor >= 0.0 && floor.is_finite()) {
        return Err(Error::invalid(format!("floor must be non-negative, got {floor}")));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&BidRecord>> = HashMap::new();
    for r in records {
        let group = groups.entry(r.impression_id.as_str()).or_insert_with(|| {
            order.push(r.impression_id.as_str());
            Vec::new()
        });
        if let Some(first) = group.first() {
            if first.slot_id != r.slot_id || first.timestamp != r.timestamp {
                return Err(Error::invalid(format!(
                    "impression `{}` appears with inconsistent slot or timestamp",
                    r.impression_id
                )));
            }
        }
        group.push(r);
    }

    let mut resolution = Resolution::default();
    for id in order {
        let mut bids: Vec<&BidRecord> = groups[id].iter().copied().filter(|b| b.bid >= floor).collect();
        if bids.is_empty() {
            resolution.unsold += 1;
            continue;
        }
        bids.sort_by(|a, b| b.bid.total_cmp(&a.bid).then_with(|| a.advertiser_id.cmp(&b.advertiser_id)));
        let top = bids[0];
        let second_price = bids.get(1).map_or(floor, |b| b.bid.max(floor));
        resolution.outcomes.push(AuctionOutcome {
            impression_id: top.impression_id.clone(),
            slot_id: top.slot_id.clone(),
            timestamp: top.timestamp,
            winner_id: top.advertiser_id.clone(),
            first_price: top.bid,
            second_price,
            n_bidders: bids.len(),
        });
    }
    Ok(resolution)
}

/// Per-slot supply (distinct impressions) and demand (bids) inside `window`.
/// Slots are keyed in lexicographic order.
pub fn aggregate(records: &[BidRecord], window: TimeWindow) -> BTreeMap<String, SlotStats> {
    let mut impressions: BTreeMap<&str, std::collections::HashSet<&str>> = BTreeMap::new();
    let mut bids: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records.iter().filter(|r| window.contains(r.timestamp)) {
        impressions.entry(&r.slot_id).or_default().insert(&r.impression_id);
        *bids.entry(&r.slot_id).or_default() += 1;
    }
    impressions
        .into_iter()
        .map(|(slot, imps)| {
            let supply = imps.len() as u64;
            let demand = bids[slot];
            let stats = SlotStats {
                slot_id: slot.to_string(),
                supply,
                demand,
                xi: (supply > 0).then(|| demand as f64 / supply as f64),
            };
            (slot.to_string(), stats)
        })
        .collect()
}

/// Supply and demand for one slot; an empty window yields `S = Q = 0` and
/// no `xi`.
pub fn slot_stats(records: &[BidRecord], slot_id: &str, window: TimeWindow) -> SlotStats {
    aggregate(records, window).remove(slot_id).unwrap_or(SlotStats {
        slot_id: slot_id.to_string(),
        supply: 0,
        demand: 0,
        xi: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BidDistKind {
    #[serde(alias = "log-normal", alias = "log_normal")]
    LogNormal,
    /// Exponential with mean `exp(mu)`; `sigma` is ignored.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidDist {
    #[serde(rename = "type")]
    pub kind: BidDistKind,
    pub mu: f64,
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BidderCount {
    /// `1 + Poisson(mean - 1)`, so the mean is exact and every impression
    /// has at least one bidder.
    #[default]
    Poisson,
    /// Exactly `round(mean)` bidders on every impression.
    Fixed,
}

fn default_advertisers() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub slot_id: String,
    pub impressions: u64,
    pub bidders_mean: f64,
    pub bid_dist: BidDist,
    pub start: i64,
    pub end: i64,
    #[serde(default)]
    pub bidders: BidderCount,
    /// Relative swing of the mean bidder count over the day (0 = flat).
    #[serde(default)]
    pub diurnal_amplitude: f64,
    /// Size of the advertiser pool bidders are drawn from.
    #[serde(default = "default_advertisers")]
    pub advertisers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub slots: Vec<SlotSpec>,
}

impl SlotSpec {
    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("slot `{}`: {m}", self.slot_id)));
        if self.impressions == 0 {
            return fail("supply must be positive".into());
        }
        if !(self.bidders_mean >= 1.0 && self.bidders_mean.is_finite()) {
            return fail(format!("bidders_mean must be >= 1, got {}", self.bidders_mean));
        }
        if self.bid_dist.sigma < 0.0 || !self.bid_dist.sigma.is_finite() || !self.bid_dist.mu.is_finite() {
            return fail(format!(
                "invalid bid distribution (mu {}, sigma {})",
                self.bid_dist.mu, self.bid_dist.sigma
            ));
        }
        if self.end <= self.start {
            return fail("end must be after start".into());
        }
        if !(0.0..1.0).contains(&self.diurnal_amplitude) {
            return fail(format!("diurnal_amplitude must be in [0, 1), got {}", self.diurnal_amplitude));
        }
        if self.advertisers == 0 {
            return fail("advertiser pool must be non-empty".into());
        }
        Ok(())
    }

    fn mean_bidders_at(&self, timestamp: i64) -> f64 {
        let hour = timestamp.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR;
        let phase = 2.0 * std::f64::consts::PI * (hour as f64 + 0.5) / 24.0;
        1.0 + (self.bidders_mean - 1.0) * (1.0 + self.diurnal_amplitude * phase.sin())
    }
}

enum BidSampler {
    LogNormal(LogNormal<f64>),
    Exponential(Exp<f64>),
}

impl BidSampler {
    fn new(dist: &BidDist) -> Result<Self> {
        match dist.kind {
            BidDistKind::LogNormal => LogNormal::new(dist.mu, dist.sigma)
                .map(BidSampler::LogNormal)
                .map_err(|e| Error::invalid(format!("log-normal bid distribution: {e}"))),
            BidDistKind::Exponential => Exp::new((-dist.mu).exp())
                .map(BidSampler::Exponential)
                .map_err(|e| Error::invalid(format!("exponential bid distribution: {e}"))),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            BidSampler::LogNormal(d) => d.sample(rng),
            BidSampler::Exponential(d) => d.sample(rng),
        }
    }
}

/// Generates a synthetic bid log. Output is a pure function of `(spec, seed)`;
/// each slot draws from its own ChaCha stream.
pub fn synthesize(spec: &MarketSpec, seed: u64) -> Result<Vec<BidRecord>> {
    let mut keyed: Vec<(i64, usize, u64, BidRecord)> = Vec::new();
    for (slot_idx, slot) in spec.slots.iter().enumerate() {
        slot.validate()?;
        let sampler = BidSampler::new(&slot.bid_dist)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(slot_idx as u64);

        let mut times: Vec<i64> = (0..slot.impressions)
            .map(|_| rng.random_range(slot.start..slot.end))
            .collect();
        times.sort_unstable();

        for (k, &ts) in times.iter().enumerate() {
            let count = match slot.bidders {
                BidderCount::Fixed => slot.bidders_mean.round() as usize,
                BidderCount::Poisson => {
                    let extra = slot.mean_bidders_at(ts) - 1.0;
                    if extra > 0.0 {
                        let poisson = Poisson::new(extra)
                            .map_err(|e| Error::invalid(format!("bidder count distribution: {e}")))?;
                        1 + poisson.sample(&mut rng) as usize
                    } else {
                        1
                    }
                }
            }
            .clamp(1, slot.advertisers);
            let impression_id = format!("{}-{:07}", slot.slot_id, k);
            for adv in index::sample(&mut rng, slot.advertisers, count).into_iter() {
                keyed.push((
                    ts,
                    slot_idx,
                    k as u64,
                    BidRecord {
                        timestamp: ts,
                        slot_id: slot.slot_id.clone(),
                        advertiser_id: format!("adv{adv:04}"),
                        impression_id: impression_id.clone(),
                        bid: sampler.sample(&mut rng),
                    },
                ));
            }
        }
    }
    keyed.sort_by_key(|(ts, slot, k, _)| (*ts, *slot, *k));
    Ok(keyed.into_iter().map(|(_, _, _, r)| r).collect())
}
