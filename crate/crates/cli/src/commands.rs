use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use pgrtb_core::auction::{jb_test, ks_test, DistTestReport, LogNormalParams};
use pgrtb_core::bidlog::{ingest, resolve_auctions, slot_stats, synthesize, write_bids, BidRecord};
use pgrtb_core::demand::DemandModel;
use pgrtb_core::evaluation::{
    calibrate_demand, compute_revenues, estimate_curves, replay_guaranteed_sale, sensitivity_sweep, write_sweep_csv,
    BidCoversPrice,
};
use pgrtb_core::pricing::{pg_solve, solve_at, PGSolution, PricingProblem};
use pgrtb_core::rlwr::MarketCurves;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CURVES_FILE: &str = "curves.json";
pub const DIST_TESTS_FILE: &str = "dist_tests.json";
pub const DEMAND_FILE: &str = "demand.json";
pub const SOLUTION_FILE: &str = "solution.json";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Synthesise a bid log from the market spec.
    Generate,
    /// Fit market curves and run distribution tests on training bids.
    Estimate,
    /// Calibrate the forward demand model.
    Calibrate,
    /// Solve for the forward fraction and price schedule.
    Solve,
    /// Replay the solution against test bids and report revenues.
    Evaluate,
    /// Sensitivity sweep over one model parameter.
    Sweep,
}

/// Writes `contents` through a temporary file in the target directory and
/// renames it into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf)?;
        buf.flush().map_err(|e| CliError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::io(path, e))?;
        writeln!(w).map_err(|e| CliError::io(path, e))
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistTests {
    pub slot_id: String,
    pub n: usize,
    pub fitted: LogNormalParams,
    pub tests: Vec<DistTestReport>,
}

struct Context<'a> {
    config: &'a RunConfig,
    out: PathBuf,
    records: Vec<BidRecord>,
    slots: Vec<String>,
}

impl<'a> Context<'a> {
    fn load(config: &'a RunConfig, slot_filter: Option<&[String]>) -> Result<Self, CliError> {
        let records = ingest(config.bids_path(), &config.columns)?;
        let present: BTreeSet<String> = records.iter().map(|r| r.slot_id.clone()).collect();
        let wanted = slot_filter.map(<[String]>::to_vec).or_else(|| config.slots.clone());
        let slots = match wanted {
            Some(w) => {
                if let Some(missing) = w.iter().find(|s| !present.contains(*s)) {
                    return Err(CliError::config(format!("slot `{missing}` has no bids in the log")));
                }
                w
            }
            None => present.into_iter().collect(),
        };
        Ok(Context {
            config,
            out: config.out_dir(),
            records,
            slots,
        })
    }

    fn dir(&self, slot: &str) -> PathBuf {
        self.out.join(slot)
    }

    fn train_bids(&self, slot: &str) -> Result<Vec<f64>, CliError> {
        let train = self.config.train_window()?;
        Ok(self
            .records
            .iter()
            .filter(|r| r.slot_id == slot && train.contains(r.timestamp))
            .map(|r| r.bid)
            .collect())
    }

    fn test_bids(&self, slot: &str) -> Result<Vec<BidRecord>, CliError> {
        let test = self.config.test_window()?;
        Ok(self
            .records
            .iter()
            .filter(|r| r.slot_id == slot && test.contains(r.timestamp))
            .cloned()
            .collect())
    }

    /// Supply and demand of the planning window, with config overrides.
    fn supply_demand(&self, slot: &str) -> Result<(f64, f64), CliError> {
        let stats = slot_stats(&self.records, slot, self.config.planning_window()?);
        Ok((
            self.config.supply.unwrap_or(stats.supply as f64),
            self.config.demand.unwrap_or(stats.demand as f64),
        ))
    }

    fn problem(&self, slot: &str) -> Result<PricingProblem, CliError> {
        let dir = self.dir(slot);
        let curves: MarketCurves = read_json(&dir.join(CURVES_FILE))?;
        let demand: DemandModel = read_json(&dir.join(DEMAND_FILE))?;
        let (total_supply, total_demand) = self.supply_demand(slot)?;
        let m = &self.config.model;
        let problem = PricingProblem {
            total_demand,
            total_supply,
            omega: m.omega,
            kappa: m.kappa,
            lambda: m.lambda,
            curves,
            demand,
            m: m.m,
            seed: self.config.seed,
            sampling: m.sampling,
            slot_id: Some(slot.to_string()),
        };
        problem.validate()?;
        Ok(problem)
    }
}

pub fn run(command: Command, config: &RunConfig, slots: Option<&[String]>) -> Result<(), CliError> {
    config.validate()?;
    if command == Command::Generate {
        return generate(config);
    }
    let ctx = Context::load(config, slots)?;
    for slot in &ctx.slots {
        info!("{command:?} slot {slot}");
        match command {
            Command::Generate => unreachable!(),
            Command::Estimate => estimate(&ctx, slot)?,
            Command::Calibrate => calibrate(&ctx, slot)?,
            Command::Solve => solve(&ctx, slot)?,
            Command::Evaluate => evaluate(&ctx, slot)?,
            Command::Sweep => sweep(&ctx, slot)?,
        }
    }
    Ok(())
}

fn generate(config: &RunConfig) -> Result<(), CliError> {
    let spec = config
        .market
        .as_ref()
        .ok_or_else(|| CliError::config("`generate` needs a `market` section"))?;
    let records = synthesize(spec, config.seed)?;
    let path = config.bids_path();
    write_atomic(&path, |w| write_bids(w, &records).map_err(CliError::from))
}

fn estimate(ctx: &Context, slot: &str) -> Result<(), CliError> {
    let m = &ctx.config.model;
    let curves = estimate_curves(
        &ctx.records,
        slot,
        ctx.config.train_window()?,
        m.curve_window,
        m.span,
        m.degree,
        m.floor,
    )?;
    let bids: Vec<f64> = ctx.train_bids(slot)?.into_iter().filter(|&b| b > 0.0).collect();
    let fitted = LogNormalParams::fit(&bids)?;
    let tests = DistTests {
        slot_id: slot.to_string(),
        n: bids.len(),
        fitted,
        tests: vec![ks_test(&bids, &fitted)?, jb_test(&bids)?],
    };
    let dir = ctx.dir(slot);
    write_json(&dir.join(CURVES_FILE), &curves)?;
    write_json(&dir.join(DIST_TESTS_FILE), &tests)
}

fn calibrate(ctx: &Context, slot: &str) -> Result<(), CliError> {
    let (_, total_demand) = ctx.supply_demand(slot)?;
    let pc = ctx.config.pipeline(slot)?;
    let model = calibrate_demand(&ctx.train_bids(slot)?, total_demand, &pc)?;
    write_json(&ctx.dir(slot).join(DEMAND_FILE), &model)
}

fn solve(ctx: &Context, slot: &str) -> Result<(), CliError> {
    let problem = ctx.problem(slot)?;
    let solution = match ctx.config.model.fixed_gamma {
        Some(g) => solve_at(&problem, g)?,
        None => pg_solve(&problem)?,
    };
    let dir = ctx.dir(slot);
    write_json(&dir.join(SOLUTION_FILE), &solution)?;
    let path = dir.join(SCHEDULE_FILE);
    write_atomic(&path, |w| solution.write_schedule_csv(w).map_err(CliError::from))
}

fn evaluate(ctx: &Context, slot: &str) -> Result<(), CliError> {
    let dir = ctx.dir(slot);
    let solution: PGSolution = read_json(&dir.join(SOLUTION_FILE))?;
    let curves: MarketCurves = read_json(&dir.join(CURVES_FILE))?;
    let floor = ctx.config.model.floor;
    let test_bids = ctx.test_bids(slot)?;
    let test = resolve_auctions(&test_bids, floor)?;
    let rule = BidCoversPrice {
        threshold: ctx.config.model.willingness_threshold,
    };
    let replay = replay_guaranteed_sale(&solution, &test_bids, &rule)?;
    let residual = resolve_auctions(&replay.residual, floor)?;
    let report = compute_revenues(&solution, &test.outcomes, replay.forward_revenue, &residual.outcomes, &curves)?;
    write_json(&dir.join(REPORT_FILE), &report)
}

fn sweep(ctx: &Context, slot: &str) -> Result<(), CliError> {
    let (parameter, spec) = ctx.config.sweep_parameter()?;
    let problem = ctx.problem(slot)?;
    let rows = sensitivity_sweep(&problem, parameter, &spec.values, spec.gamma)?;
    let path = ctx.dir(slot).join(format!("sweep_{}.csv", spec.parameter));
    write_atomic(&path, |w| write_sweep_csv(w, &rows).map_err(CliError::from))
}
