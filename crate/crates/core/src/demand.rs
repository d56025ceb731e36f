//! Forward-purchase demand: the fraction of arriving advertisers willing to
//! buy at a price, their arrival density, and calibration from bids.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{simpson_adaptive, Tolerance};

pub const DEFAULT_BETA: f64 = 0.2;
pub const DEFAULT_ETA: f64 = 0.2;
pub const ALPHA_BOUNDS: (f64, f64) = (0.01, 50.0);
pub const ALPHA_TOLERANCE: f64 = 1e-4;
pub const MIN_CALIBRATION_BIDS: usize = 100;
pub const DEFAULT_GRID_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    /// Price sensitivity.
    pub alpha: f64,
    /// Growth of price sensitivity with time to delivery.
    pub beta: f64,
    /// Arrival density on the delivery date.
    pub zeta: f64,
    /// Decay of arrivals with time to delivery.
    pub eta: f64,
    /// Length of the selling period in days.
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl DemandModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.alpha.is_finite()
            && self.beta >= 0.0
            && self.beta.is_finite()
            && self.zeta >= 0.0
            && self.zeta.is_finite()
            && self.eta >= 0.0
            && self.eta.is_finite()
            && self.horizon > 0.0
            && self.horizon.is_finite();
        if !ok {
            return Err(Error::invalid(format!("invalid demand model {self:?}")));
        }
        Ok(())
    }

    /// Fraction of advertisers arriving `tau` days before delivery who buy
    /// at price `p`.
    pub fn theta(&self, tau: f64, p: f64) -> f64 {
        (-self.alpha * p * (1.0 + self.beta * tau)).exp()
    }

    /// Advertisers arriving per day, `tau` days before delivery.
    pub fn arrival_density(&self, tau: f64) -> f64 {
        self.zeta * (-self.eta * tau).exp()
    }

    /// Expected purchases per day at price `p`.
    pub fn demand_rate(&self, tau: f64, p: f64) -> f64 {
        self.theta(tau, p) * self.arrival_density(tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePoint {
    pub tau: f64,
    pub price: f64,
}

/// How prices between grid points are defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ScheduleShape {
    /// Linear interpolation between grid points.
    Tabulated,
    /// The grid price at `tau = 0` holds for the first step `[0, step)`;
    /// afterwards `level + 1 / (alpha (1 + beta tau))`.
    Optimal { level: f64, alpha: f64, beta: f64, step: f64 },
}

/// Guaranteed price as a function of days to delivery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub points: Vec<SchedulePoint>,
    #[serde(flatten)]
    pub shape: ScheduleShape,
}

impl PriceSchedule {
    pub fn tabulated(points: Vec<SchedulePoint>) -> Result<Self> {
        let s = PriceSchedule {
            points,
            shape: ScheduleShape::Tabulated,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::invalid("price schedule needs at least two grid points"));
        }
        if self.points.windows(2).any(|w| w[1].tau <= w[0].tau) {
            return Err(Error::invalid("schedule grid must be strictly increasing in tau"));
        }
        if self.points.iter().any(|p| !p.price.is_finite() || p.price < 0.0) {
            return Err(Error::invalid("schedule prices must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1].tau
    }

    pub fn p0(&self) -> f64 {
        self.points[0].price
    }

    /// Price at `tau`. For the optimal shape the pinned terminal price holds
    /// on `[0, step)` and the closed form from `step` on.
    pub fn price_at(&self, tau: f64) -> f64 {
        match self.shape {
            ScheduleShape::Optimal { level, alpha, beta, step } => {
                if tau < step {
                    self.p0()
                } else {
                    level + 1.0 / (alpha * (1.0 + beta * tau))
                }
            }
            ScheduleShape::Tabulated => {
                let pts = &self.points;
                let i = pts.partition_point(|p| p.tau <= tau);
                if i == 0 {
                    return pts[0].price;
                }
                if i == pts.len() {
                    return pts[pts.len() - 1].price;
                }
                let (a, b) = (pts[i - 1], pts[i]);
                a.price + (b.price - a.price) * (tau - a.tau) / (b.tau - a.tau)
            }
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["tau", "price"])?;
        for p in &self.points {
            wtr.write_record([p.tau.to_string(), p.price.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<schedule writer>", e))?;
        Ok(())
    }
}

fn quantity_tolerance() -> Tolerance {
    Tolerance {
        relative: 1e-9,
        ..Default::default()
    }
}

/// Expected forward sales under `schedule` over the model's horizon. A
/// tabulated schedule is interpolated linearly; the optimal shape holds the
/// pinned price over its first step.
pub fn sold_quantity(model: &DemandModel, schedule: &PriceSchedule) -> Result<f64> {
    model.validate()?;
    schedule.validate()?;
    let t = model.horizon;
    let first = schedule.points[0].tau;
    if first > 0.0 || schedule.horizon() < t * (1.0 - 1e-12) {
        return Err(Error::invalid(format!(
            "schedule covers [{first}, {}] but the horizon is [0, {t}]",
            schedule.horizon()
        )));
    }
    let mut knots: Vec<f64> = schedule
        .points
        .iter()
        .map(|p| p.tau)
        .filter(|&tau| tau > 0.0 && tau < t)
        .collect();
    if let ScheduleShape::Optimal { step, .. } = schedule.shape {
        // The price jumps at the end of the pinned first step.
        if step < t && !knots.contains(&step) {
            knots.push(step);
            knots.sort_by(f64::total_cmp);
        }
    }
    knots.insert(0, 0.0);
    knots.push(t);
    let rate = |tau: f64| model.demand_rate(tau, schedule.price_at(tau));
    Ok(simpson_adaptive(rate, &knots, quantity_tolerance())?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub tau: f64,
    pub p: f64,
    pub demand: f64,
}

/// Purchase rate `theta * f` on the grid `taus x prices`.
pub fn demand_surface(model: &DemandModel, taus: &[f64], prices: &[f64]) -> Vec<SurfacePoint> {
    taus.iter()
        .flat_map(|&tau| {
            prices.iter().map(move |&p| SurfacePoint {
                tau,
                p,
                demand: model.demand_rate(tau, p),
            })
        })
        .collect()
}

pub fn write_surface_csv<W: Write>(writer: W, surface: &[SurfacePoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for p in surface {
        wtr.serialize(p)?;
    }
    wtr.flush().map_err(|e| Error::io("<surface writer>", e))?;
    Ok(())
}

/// `n` equispaced prices from 0 to the largest bid.
pub fn default_price_grid(bids: &[f64], n: usize) -> Vec<f64> {
    let max = bids.iter().cloned().fold(0.0, f64::max);
    let n = n.max(2);
    (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect()
}

/// Fraction of bids at or above each price in `grid`.
pub fn empirical_survival(bids: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut sorted = bids.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    grid.iter()
        .map(|&p| (sorted.len() - sorted.partition_point(|&b| b < p)) as f64 / n)
        .collect()
}

fn check_bids(bids: &[f64]) -> Result<()> {
    if bids.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::invalid("bids must be finite and non-negative"));
    }
    Ok(())
}

/// Price sensitivity whose exponential curve `exp(-alpha p)` best matches
/// the empirical survival of `bids` on `grid` in RMSE. Searched by golden
/// section over [`ALPHA_BOUNDS`].
pub fn calibrate_alpha(bids: &[f64], grid: &[f64]) -> Result<f64> {
    check_bids(bids)?;
    if bids.len() < MIN_CALIBRATION_BIDS {
        return Err(Error::InsufficientData(format!(
            "alpha calibration needs at least {MIN_CALIBRATION_BIDS} bids, got {}",
            bids.len()
        )));
    }
    let lo = bids.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = bids.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::InsufficientData(
            "all bids are equal; the survival curve is a step, set alpha manually".into(),
        ));
    }
    if grid.is_empty() || grid.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("price grid must be non-empty and non-negative"));
    }
    let survival = empirical_survival(bids, grid);
    let rmse = |alpha: f64| {
        let sse: f64 = grid
            .iter()
            .zip(&survival)
            .map(|(&p, &s)| ((-alpha * p).exp() - s).powi(2))
            .sum();
        (sse / grid.len() as f64).sqrt()
    };
    Ok(golden_section(rmse, ALPHA_BOUNDS.0, ALPHA_BOUNDS.1, ALPHA_TOLERANCE))
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Peak arrival density implied by `demand` bidders when a fraction of the
/// bids reach the reference price `p`: the bidders who would pay `p`,
/// scaled up by the share `exp(-alpha p)` expected to buy at that price.
pub fn calibrate_zeta(demand: f64, bids: &[f64], p: f64, alpha: f64) -> Result<f64> {
    check_bids(bids)?;
    if !(demand > 0.0) || !(alpha > 0.0) || !(p >= 0.0) || !p.is_finite() {
        return Err(Error::invalid(format!(
            "zeta calibration needs Q > 0, alpha > 0 and p >= 0 (Q {demand}, alpha {alpha}, p {p})"
        )));
    }
    if bids.is_empty() {
        return Err(Error::InsufficientData("zeta calibration needs bids".into()));
    }
    let share = empirical_survival(bids, &[p])[0];
    if share == 0.0 {
        warn!("no bid reaches the reference price {p}; zeta set to 0");
        return Ok(0.0);
    }
    Ok(demand * share / (-alpha * p).exp())
}

/// Empirical `q`-quantile of `bids` (nearest rank).
pub fn bid_quantile(bids: &[f64], q: f64) -> Result<f64> {
    if bids.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("quantile needs bids and q in [0, 1]"));
    }
    let mut sorted = bids.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    Ok(sorted[idx])
}
