//! Revenue-maximising forward allocation: the terminal price, the optimal
//! price schedule, the multiplier that makes forward sales hit their
//! target, and the sampled search over the forward fraction.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{DemandModel, PriceSchedule, SchedulePoint, ScheduleShape};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};
use crate::rlwr::MarketCurves;

/// Largest forward fraction considered; keeps the remaining supply positive.
pub const GAMMA_MAX: f64 = 0.99;
pub const DEFAULT_OMEGA: f64 = 0.05;
pub const DEFAULT_KAPPA: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_SAMPLES: usize = 500;

/// Residual tolerance of the multiplier solve, relative to the target.
const ROOT_TOLERANCE: f64 = 1e-10;
const MAX_ROOT_ITERATIONS: usize = 400;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// i.i.d. uniform draws of the forward fraction.
    #[default]
    Uniform,
    /// `m` equispaced fractions on `[0, GAMMA_MAX]`.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingProblem {
    /// Total demanded impressions (bids) in the delivery window.
    #[serde(rename = "Q")]
    pub total_demand: f64,
    /// Total supplied impressions in the delivery window.
    #[serde(rename = "S")]
    pub total_supply: f64,
    /// Probability a guaranteed impression is not delivered.
    pub omega: f64,
    /// Penalty paid on a failed delivery, as a multiple of the price.
    pub kappa: f64,
    /// Advertiser risk aversion.
    pub lambda: f64,
    pub curves: MarketCurves,
    pub demand: DemandModel,
    #[serde(default = "default_samples")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_id: Option<String>,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

impl PricingProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_demand > 0.0 && self.total_supply > 0.0) {
            return Err(Error::invalid(format!(
                "Q and S must be positive (Q {}, S {})",
                self.total_demand, self.total_supply
            )));
        }
        if !(0.0..1.0).contains(&self.omega) || !(self.kappa >= 0.0) || !(self.omega * self.kappa < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 <= omega < 1, kappa >= 0 and omega * kappa < 1 (omega {}, kappa {})",
                self.omega, self.kappa
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.m == 0 {
            return Err(Error::invalid("m must be positive"));
        }
        self.demand.validate()
    }

    /// Share of guaranteed revenue kept after expected penalties.
    pub fn retention(&self) -> f64 {
        1.0 - self.omega * self.kappa
    }

    pub fn grid(&self) -> Grid {
        Grid::daily(self.demand.horizon)
    }

    /// Remaining demand per remaining impression after selling `gamma` forward.
    pub fn remaining_xi(&self, gamma: f64) -> f64 {
        (self.total_demand - gamma * self.total_supply) / (self.total_supply - gamma * self.total_supply)
    }
}

/// Uniform grid over `[0, T]` with `ceil(T)` steps, so one step is a day
/// when `T` is a whole number of days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub horizon: f64,
    pub steps: usize,
}

impl Grid {
    pub fn daily(horizon: f64) -> Grid {
        Grid {
            horizon,
            steps: (horizon.ceil() as usize).max(1),
        }
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn taus(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.tau(k)).collect()
    }

    pub fn tau(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalRule {
    /// Expected payment plus the risk premium.
    RiskAdjusted,
    /// Capped at the expected winning bid.
    WinningBid,
    /// ψ is unreliable at this demand level; the expected winning bid is used.
    LowConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalPrice {
    pub price: f64,
    pub rule: TerminalRule,
    /// A curve was evaluated outside its training range.
    pub clamped: bool,
}

/// Price on the delivery date from the expected payment `phi`, its standard
/// deviation `psi` and the expected winning bid `pi`.
pub fn terminal_price_from(phi: f64, psi: f64, pi: f64, lambda: f64) -> (f64, TerminalRule) {
    let adjusted = phi + lambda * psi;
    if pi >= adjusted {
        (adjusted, TerminalRule::RiskAdjusted)
    } else {
        (pi, TerminalRule::WinningBid)
    }
}

pub fn terminal_price(curves: &MarketCurves, xi: f64, lambda: f64) -> Result<TerminalPrice> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let phi = curves.phi(xi);
    let psi = curves.psi(xi);
    let pi = curves.pi(xi);
    let clamped = phi.clamped || psi.clamped || pi.clamped;
    if curves.psi_low_confidence(xi) {
        return Ok(TerminalPrice {
            price: pi.value.max(0.0),
            rule: TerminalRule::LowConfidence,
            clamped,
        });
    }
    let (price, rule) = terminal_price_from(phi.value, psi.value.max(0.0), pi.value, lambda);
    Ok(TerminalPrice {
        price: price.max(0.0),
        rule,
        clamped,
    })
}

/// Price schedule `p(tau) = lagrange / (1 - omega kappa) + 1 / (alpha (1 + beta tau))`
/// on `grid` for `tau > 0`, with the delivery-date price pinned to `p0`.
pub fn price_schedule(
    demand: &DemandModel,
    lagrange: f64,
    omega: f64,
    kappa: f64,
    grid: &Grid,
    p0: f64,
) -> Result<PriceSchedule> {
    let retention = 1.0 - omega * kappa;
    if !(retention > 0.0) {
        return Err(Error::invalid(format!("omega * kappa must be < 1, got {}", omega * kappa)));
    }
    demand.validate()?;
    let level = lagrange / retention;
    let shape = ScheduleShape::Optimal {
        level,
        alpha: demand.alpha,
        beta: demand.beta,
        step: grid.step(),
    };
    let mut schedule = PriceSchedule {
        points: vec![SchedulePoint { tau: 0.0, price: p0 }],
        shape,
    };
    for k in 1..=grid.steps {
        let tau = grid.tau(k);
        schedule.points.push(SchedulePoint {
            tau,
            price: schedule.price_at(tau),
        });
    }
    Ok(schedule)
}

/// Forward sales as a function of the price level `c = lagrange / (1 - omega kappa)`:
/// the first step sold at `p0`, then `zeta exp(-1 - alpha c) exp(-(alpha beta c + eta) tau)`
/// integrated in closed form over `[step, T]`.
#[derive(Debug, Clone, Copy)]
pub struct ForwardSales {
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub eta: f64,
    pub step: f64,
    pub horizon: f64,
    pub p0: f64,
}

/// `int_0^len exp(-k s) ds`.
fn exp_integral(k: f64, len: f64) -> f64 {
    let x = k * len;
    if x.abs() < 1e-8 {
        len * (1.0 - 0.5 * x)
    } else {
        -(-x).exp_m1() / k
    }
}

/// `int_0^len s exp(-k s) ds`.
fn exp_moment(k: f64, len: f64) -> f64 {
    let x = k * len;
    if x.abs() < 1e-3 {
        let l2 = len * len;
        l2 * (0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0)
    } else {
        (1.0 - (-x).exp() * (1.0 + x)) / (k * k)
    }
}

impl ForwardSales {
    pub fn new(demand: &DemandModel, step: f64, p0: f64) -> Self {
        ForwardSales {
            alpha: demand.alpha,
            beta: demand.beta,
            zeta: demand.zeta,
            eta: demand.eta,
            step: step.min(demand.horizon),
            horizon: demand.horizon,
            p0,
        }
    }

    /// Sale in the first step, at the pinned price.
    pub fn first_step(&self) -> f64 {
        let k = self.alpha * self.beta * self.p0 + self.eta;
        self.zeta * (-self.alpha * self.p0).exp() * exp_integral(k, self.step)
    }

    fn decay(&self, level: f64) -> f64 {
        self.alpha * self.beta * level + self.eta
    }

    /// Sales over `[a, b]` with `step <= a <= b <= T`.
    pub fn tail_between(&self, level: f64, a: f64, b: f64) -> f64 {
        let k = self.decay(level);
        self.zeta * (-1.0 - self.alpha * level).exp() * (-k * a).exp() * exp_integral(k, b - a)
    }

    /// Sales over `[step, T]` at price level `level`.
    pub fn tail(&self, level: f64) -> f64 {
        self.tail_between(level, self.step, self.horizon)
    }

    pub fn total(&self, level: f64) -> f64 {
        self.first_step() + self.tail(level)
    }

    /// Derivative of [`Self::tail`] with respect to the price level.
    pub fn tail_derivative(&self, level: f64) -> f64 {
        let k = self.decay(level);
        let len = self.horizon - self.step;
        let shift = (-k * self.step).exp();
        let plain = exp_integral(k, len);
        let moment = self.step * plain + exp_moment(k, len);
        let weighted = shift * (plain + self.beta * moment);
        -self.alpha * self.zeta * (-1.0 - self.alpha * level).exp() * weighted
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RootMethod {
    /// Newton steps on the analytic derivative, falling back to bisection
    /// whenever a step leaves the bracket.
    #[default]
    Newton,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSolution {
    /// The Lagrange multiplier.
    pub lagrange: f64,
    /// Price level `lagrange / (1 - omega kappa)`.
    pub level: f64,
    /// Forward sales at the solution.
    pub sold: f64,
    pub iterations: usize,
    /// The target was at or below the first-step sale, so the multiplier
    /// sits at its upper clamp.
    pub clamped: bool,
}

/// Solves for the multiplier with the default daily grid and Newton method.
pub fn solve_multiplier(demand: &DemandModel, omega: f64, kappa: f64, target: f64, p0: f64) -> Result<MultiplierSolution> {
    let step = Grid::daily(demand.horizon).step();
    solve_multiplier_with(demand, omega, kappa, target, p0, step, RootMethod::Newton)
}

pub fn solve_multiplier_with(
    demand: &DemandModel,
    omega: f64,
    kappa: f64,
    target: f64,
    p0: f64,
    step: f64,
    method: RootMethod,
) -> Result<MultiplierSolution> {
    demand.validate()?;
    let retention = 1.0 - omega * kappa;
    if !(retention > 0.0) {
        return Err(Error::invalid(format!("omega * kappa must be < 1, got {}", omega * kappa)));
    }
    if !(target >= 0.0) || !target.is_finite() || !(p0 >= 0.0) || !(step > 0.0) {
        return Err(Error::invalid(format!(
            "need target >= 0, p0 >= 0 and step > 0 (target {target}, p0 {p0}, step {step})"
        )));
    }
    let sales = ForwardSales::new(demand, step, p0);
    let first = sales.first_step();
    let maximum = sales.total(0.0);
    let tol = ROOT_TOLERANCE * target.max(1e-12);
    if target > maximum + tol {
        return Err(Error::Infeasible { target, maximum });
    }

    // Bracket: sales decrease in the level, so double until they drop below
    // the target (or until the tail is negligible).
    let floor_tol = tol.min(1e-12 * maximum.max(1e-300));
    let mut hi = 1.0 / demand.alpha;
    let mut bracket_iters = 0;
    while sales.total(hi) - target > 0.0 && sales.tail(hi) > floor_tol && bracket_iters < 200 {
        hi *= 2.0;
        bracket_iters += 1;
    }
    if target <= first || sales.total(hi) - target > 0.0 {
        warn!("forward target {target} is at or below the first-step sale {first}; multiplier clamped");
        return Ok(MultiplierSolution {
            lagrange: hi * retention,
            level: hi,
            sold: sales.total(hi),
            iterations: bracket_iters,
            clamped: true,
        });
    }

    let g = |c: f64| sales.total(c) - target;
    let (mut lo, mut up) = (0.0, hi);
    let mut c = 0.5 * (lo + up);
    let mut iterations = 0;
    if g(0.0).abs() <= tol {
        c = 0.0;
    } else {
        loop {
            iterations += 1;
            let value = g(c);
            if value.abs() <= tol || iterations >= MAX_ROOT_ITERATIONS {
                break;
            }
            if value > 0.0 {
                lo = c;
            } else {
                up = c;
            }
            let bisect = 0.5 * (lo + up);
            let next = match method {
                RootMethod::Bisection => bisect,
                RootMethod::Newton => {
                    let slope = sales.tail_derivative(c);
                    let newton = if slope < 0.0 { c - value / slope } else { f64::NAN };
                    if newton > lo && newton < up {
                        newton
                    } else {
                        bisect
                    }
                }
            };
            if next == c || up - lo <= 4.0 * f64::EPSILON * up.max(1.0) {
                c = next;
                break;
            }
            c = next;
        }
    }
    debug!("multiplier solved in {iterations} iterations ({method:?})");
    Ok(MultiplierSolution {
        lagrange: c * retention,
        level: c,
        sold: sales.total(c),
        iterations,
        clamped: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub tau: f64,
    pub price: f64,
    /// Expected forward sales attributed to this grid point.
    pub expected_sales: f64,
}

/// One evaluated forward fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub gamma: f64,
    pub feasible: bool,
    pub xi_remaining: f64,
    pub terminal: Option<TerminalPrice>,
    pub multiplier: Option<MultiplierSolution>,
    #[serde(rename = "G")]
    pub guaranteed_revenue: f64,
    #[serde(rename = "H")]
    pub rtb_revenue: f64,
    #[serde(rename = "R")]
    pub total_revenue: f64,
    pub schedule: Vec<ScheduleRow>,
}

impl Candidate {
    fn infeasible(gamma: f64, xi_remaining: f64, terminal: Option<TerminalPrice>) -> Self {
        Candidate {
            gamma,
            feasible: false,
            xi_remaining,
            terminal,
            multiplier: None,
            guaranteed_revenue: f64::NEG_INFINITY,
            rtb_revenue: f64::NEG_INFINITY,
            total_revenue: f64::NEG_INFINITY,
            schedule: Vec::new(),
        }
    }
}

fn revenue_tolerance() -> Tolerance {
    Tolerance::relative(1e-10)
}

/// Expected revenue and schedule for a fixed forward fraction `gamma`.
/// Unreachable targets come back as infeasible candidates with `R = -inf`.
pub fn inner_solve(problem: &PricingProblem, gamma: f64) -> Result<Candidate> {
    problem.validate()?;
    if !(0.0..=GAMMA_MAX).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must be in [0, {GAMMA_MAX}], got {gamma}")));
    }
    let s = problem.total_supply;
    let xi = problem.remaining_xi(gamma);
    let grid = problem.grid();
    let rtb = |xi: f64| (1.0 - gamma) * s * problem.curves.phi.value(xi);

    if gamma == 0.0 {
        let terminal = terminal_price(&problem.curves, xi, problem.lambda)?;
        let h = rtb(xi);
        let multiplier = solve_multiplier_with(
            &problem.demand,
            problem.omega,
            problem.kappa,
            0.0,
            terminal.price,
            grid.step(),
            RootMethod::Newton,
        )?;
        let schedule = price_schedule(
            &problem.demand,
            multiplier.lagrange,
            problem.omega,
            problem.kappa,
            &grid,
            terminal.price,
        )?;
        return Ok(Candidate {
            gamma,
            feasible: true,
            xi_remaining: xi,
            terminal: Some(terminal),
            multiplier: Some(multiplier),
            guaranteed_revenue: 0.0,
            rtb_revenue: h,
            total_revenue: h,
            schedule: schedule
                .points
                .iter()
                .map(|p| ScheduleRow {
                    tau: p.tau,
                    price: p.price,
                    expected_sales: 0.0,
                })
                .collect(),
        });
    }
    if !(xi > 0.0) {
        return Ok(Candidate::infeasible(gamma, xi, None));
    }

    let terminal = terminal_price(&problem.curves, xi, problem.lambda)?;
    let target = gamma * s;
    let multiplier = match solve_multiplier_with(
        &problem.demand,
        problem.omega,
        problem.kappa,
        target,
        terminal.price,
        grid.step(),
        RootMethod::Newton,
    ) {
        Ok(m) if !m.clamped => m,
        Ok(_) | Err(Error::Infeasible { .. }) => return Ok(Candidate::infeasible(gamma, xi, Some(terminal))),
        Err(e) => return Err(e),
    };
    let schedule = price_schedule(
        &problem.demand,
        multiplier.lagrange,
        problem.omega,
        problem.kappa,
        &grid,
        terminal.price,
    )?;

    let sales = ForwardSales::new(&problem.demand, grid.step(), terminal.price);
    let first = sales.first_step();
    let level = multiplier.level;
    let tail_value = if grid.horizon > grid.step() {
        let demand = &problem.demand;
        integrate(
            |tau| {
                let p = level + 1.0 / (demand.alpha * (1.0 + demand.beta * tau));
                p * demand.demand_rate(tau, p)
            },
            grid.step(),
            grid.horizon,
            revenue_tolerance(),
        )?
        .value
    } else {
        0.0
    };
    let g = problem.retention() * (terminal.price * first + tail_value);
    let h = rtb(xi);

    let step = grid.step();
    let rows = schedule
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let expected_sales = if k == 0 {
                first
            } else {
                let a = (p.tau - 0.5 * step).max(step);
                let b = (p.tau + 0.5 * step).min(grid.horizon);
                if b > a {
                    sales.tail_between(level, a, b)
                } else {
                    0.0
                }
            };
            ScheduleRow {
                tau: p.tau,
                price: p.price,
                expected_sales,
            }
        })
        .collect();

    Ok(Candidate {
        gamma,
        feasible: true,
        xi_remaining: xi,
        terminal: Some(terminal),
        multiplier: Some(multiplier),
        guaranteed_revenue: g,
        rtb_revenue: h,
        total_revenue: g + h,
        schedule: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub candidates: usize,
    pub infeasible_candidates: usize,
    pub sampling: Sampling,
    pub seed: u64,
    pub terminal_rule: TerminalRule,
    pub curve_clamped: bool,
    pub multiplier_iterations: usize,
    /// Forward sales implied by the schedule.
    pub forward_sales: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PGSolution {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_id: Option<String>,
    pub gamma_star: f64,
    pub lambda_tilde: f64,
    /// Price level of the schedule, `lambda_tilde / (1 - omega kappa)`.
    pub price_level: f64,
    pub p0: f64,
    pub schedule: Vec<ScheduleRow>,
    #[serde(rename = "G")]
    pub guaranteed_revenue: f64,
    #[serde(rename = "H")]
    pub rtb_revenue: f64,
    #[serde(rename = "R")]
    pub total_revenue: f64,
    pub xi_remaining: f64,
    #[serde(rename = "S")]
    pub total_supply: f64,
    #[serde(rename = "Q")]
    pub total_demand: f64,
    pub diagnostics: Diagnostics,
}

impl PGSolution {
    /// Impressions contracted forward.
    pub fn contracted(&self) -> f64 {
        self.gamma_star * self.total_supply
    }

    /// Impressions left for the auction.
    pub fn auctioned(&self) -> f64 {
        self.total_supply - self.contracted()
    }

    pub fn price_at(&self, tau: f64) -> Option<f64> {
        self.schedule.iter().find(|r| (r.tau - tau).abs() < 1e-9).map(|r| r.price)
    }

    pub fn write_schedule_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for row in &self.schedule {
            wtr.serialize(row)?;
        }
        wtr.flush().map_err(|e| Error::io("<schedule writer>", e))?;
        Ok(())
    }
}

/// Forward fractions evaluated by [`pg_solve`]: always 0, then `m` seeded
/// samples clamped to [`GAMMA_MAX`].
pub fn candidate_gammas(m: usize, seed: u64, sampling: Sampling) -> Vec<f64> {
    let mut gammas = vec![0.0];
    match sampling {
        Sampling::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            gammas.extend((0..m).map(|_| rng.random::<f64>().min(GAMMA_MAX)));
        }
        Sampling::Stratified => {
            let denom = m.saturating_sub(1).max(1) as f64;
            gammas.extend((0..m).map(|i| (GAMMA_MAX * i as f64 / denom).min(GAMMA_MAX)));
        }
    }
    gammas
}

/// Sampled search over the forward fraction. Candidates are generated up
/// front and evaluated in parallel; the best revenue wins, ties going to the
/// smaller fraction.
pub fn pg_solve(problem: &PricingProblem) -> Result<PGSolution> {
    problem.validate()?;
    let gammas = candidate_gammas(problem.m, problem.seed, problem.sampling);
    let revenues: Vec<Result<f64>> = gammas
        .par_iter()
        .map(|&g| inner_solve(problem, g).map(|c| c.total_revenue))
        .collect();
    let mut best: Option<(f64, f64)> = None;
    let mut infeasible = 0;
    for (&gamma, r) in gammas.iter().zip(revenues) {
        let r = r?;
        if r == f64::NEG_INFINITY {
            infeasible += 1;
            continue;
        }
        best = match best {
            Some((bg, br)) if br > r || (br == r && bg <= gamma) => Some((bg, br)),
            _ => Some((gamma, r)),
        };
    }
    let (gamma_star, _) = best.ok_or_else(|| Error::invalid("no feasible forward fraction"))?;
    let mut sol = solve_at(problem, gamma_star)?;
    sol.diagnostics.candidates = gammas.len();
    sol.diagnostics.infeasible_candidates = infeasible;
    Ok(sol)
}

/// Full solution payload at a fixed forward fraction.
pub fn solve_at(problem: &PricingProblem, gamma: f64) -> Result<PGSolution> {
    let c = inner_solve(problem, gamma)?;
    let (Some(terminal), Some(multiplier), true) = (c.terminal, c.multiplier, c.feasible) else {
        return Err(Error::Infeasible {
            target: gamma * problem.total_supply,
            maximum: ForwardSales::new(&problem.demand, problem.grid().step(), 0.0).total(0.0),
        });
    };
    let forward_sales = c.schedule.iter().map(|r| r.expected_sales).sum();
    Ok(PGSolution {
        slot_id: problem.slot_id.clone(),
        gamma_star: gamma,
        lambda_tilde: multiplier.lagrange,
        price_level: multiplier.level,
        p0: terminal.price,
        schedule: c.schedule,
        guaranteed_revenue: c.guaranteed_revenue,
        rtb_revenue: c.rtb_revenue,
        total_revenue: c.total_revenue,
        xi_remaining: c.xi_remaining,
        total_supply: problem.total_supply,
        total_demand: problem.total_demand,
        diagnostics: Diagnostics {
            candidates: 1,
            infeasible_candidates: 0,
            sampling: problem.sampling,
            seed: problem.seed,
            terminal_rule: terminal.rule,
            curve_clamped: terminal.clamped,
            multiplier_iterations: multiplier.iterations,
            forward_sales,
        },
    })
}
