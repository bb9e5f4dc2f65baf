mod output;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use sharemkt_core::calibration::{fit_exponential_demand, read_transactions, FitOptions};
use sharemkt_core::equilibrium::{solve_equilibrium, sweep, verify_equilibrium, EquilibriumState};
use sharemkt_core::market::require_valid;
use sharemkt_core::oracle::{brute_force_equilibrium, linear_market_solve, LinearMarketSolution};
use sharemkt_core::pricing::{analyze_prices, welfare_gap_bounds, PriceAnalysis};
use sharemkt_core::scenario::{Scenario, ScenarioConfig};
use sharemkt_core::subsidy::{optimize_subsidy, SubsidySearch};
use sharemkt_core::{BenefitFunction, Error, Market, Subsidy, SubsidyModel};

use output::{agents_csv, fmt_g, sweep_csv, to_json, write_file, Seeded};

#[derive(Parser)]
#[command(
    name = "sharemkt",
    version,
    about = "Equilibrium, pricing and subsidy analysis for sharing markets"
)]
struct Cli {
    /// Scenario file (JSON or TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for report files; reports always go to stdout as well.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the scenario's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    PerUnit,
    PerUnitPrice,
}

impl From<ModelArg> for SubsidyModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::PerUnit => SubsidyModel::PerUnit,
            ModelArg::PerUnitPrice => SubsidyModel::PerUnitPrice,
        }
    }
}

#[derive(Args)]
struct SubsidyArgs {
    /// Subsidy level paid to owners per shared unit.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = ModelArg::PerUnit)]
    model: ModelArg,
}

impl SubsidyArgs {
    fn subsidy(&self) -> Subsidy {
        Subsidy::new(self.epsilon, self.model.into())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Owner equilibrium at one price.
    Solve {
        /// Market price per rented unit.
        #[arg(long, allow_negative_numbers = true)]
        price: f64,
        #[command(flatten)]
        subsidy: SubsidyArgs,
    },
    /// Equilibria over an evenly spaced price grid, as CSV.
    Sweep {
        /// Lowest price on the grid.
        #[arg(long, allow_negative_numbers = true)]
        pmin: f64,
        /// Highest price on the grid.
        #[arg(long, allow_negative_numbers = true)]
        pmax: f64,
        /// Number of grid points; 1 solves at `pmin` only.
        #[arg(long)]
        steps: usize,
        /// Replaces the scenario's usage cost.
        #[arg(long)]
        cost: Option<f64>,
        #[command(flatten)]
        subsidy: SubsidyArgs,
    },
    /// Structural prices and revenue/welfare optima.
    PriceOpt {
        /// Rerun with the single owner block resized to each count (CSV output).
        #[arg(long, value_delimiter = ',')]
        owner_counts: Vec<usize>,
    },
    /// Revenue-maximizing uniform subsidy.
    SubsidyOpt {
        #[arg(long, value_enum, default_value_t = ModelArg::PerUnit)]
        model: ModelArg,
        /// Upper end of the subsidy search, relative to the price for `per-unit-price`.
        #[arg(long, default_value_t = 2.0)]
        eps_max: f64,
    },
    /// Exponential demand fit from `price,count` transaction data.
    Fit {
        /// CSV file with a `price,count` header.
        #[arg(long)]
        input: PathBuf,
        /// Minimum charge subtracted from every price before fitting.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        offset: f64,
        /// Add one to every count instead of dropping zero rows.
        #[arg(long)]
        smoothing: bool,
    },
    /// Welfare gap between revenue and welfare pricing with its bounds.
    GapBound,
    /// Compare the solver with the grid oracle on a small market.
    OracleCheck {
        /// Points per axis of the oracle's action grid (2 to 501).
        #[arg(long, default_value_t = 501)]
        grid: usize,
        /// Prices to check (default: five points strictly inside (0, B)).
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SHAREMKT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_numeric() => 2,
        _ => 1,
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Solve { price, subsidy } => cmd_solve(&load(cli)?, out, *price, subsidy.subsidy()),
        Command::Sweep {
            pmin,
            pmax,
            steps,
            cost,
            subsidy,
        } => cmd_sweep(&load(cli)?, out, (*pmin, *pmax, *steps), *cost, subsidy.subsidy()),
        Command::PriceOpt { owner_counts } if owner_counts.is_empty() => cmd_price_opt(&load(cli)?, out),
        Command::PriceOpt { owner_counts } => cmd_price_batch(cli, out, owner_counts),
        Command::SubsidyOpt { model, eps_max } => cmd_subsidy_opt(&load(cli)?, out, (*model).into(), *eps_max),
        Command::Fit {
            input,
            offset,
            smoothing,
        } => cmd_fit(out, input, *offset, *smoothing),
        Command::GapBound => cmd_gap_bound(&load(cli)?, out),
        Command::OracleCheck { grid, prices } => cmd_oracle_check(&load(cli)?, out, *grid, prices),
    }
}

fn config(cli: &Cli) -> anyhow::Result<ScenarioConfig> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("--config is required"))?;
    ScenarioConfig::from_path(path).with_context(|| format!("reading {}", path.display()))
}

fn load(cli: &Cli) -> anyhow::Result<Scenario> {
    let scenario = config(cli)?.build(cli.seed)?;
    info!(
        "scenario: {} owners, {} renters, seed {}",
        scenario.market.n_owners(),
        scenario.market.n_renters(),
        scenario.base_seed
    );
    Ok(scenario)
}

fn seeded<T: Serialize>(sc: &Scenario, result: T) -> Seeded<T> {
    Seeded {
        result,
        seed: sc.base_seed,
        block_seeds: sc.block_seeds.clone(),
    }
}

fn emit_json<T: Serialize>(sc: &Scenario, out: Option<&Path>, name: &str, result: T) -> anyhow::Result<()> {
    let text = to_json(&seeded(sc, result))?;
    write_file(out, name, &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_solve(sc: &Scenario, out: Option<&Path>, price: f64, subsidy: Subsidy) -> anyhow::Result<ExitCode> {
    let m = &sc.market;
    require_valid(m)?;
    let (state, code) = match solve_equilibrium(m, price, subsidy) {
        Ok(state) => (state, ExitCode::SUCCESS),
        Err(Error::NonConvergence { best, iterations, .. }) => {
            warn!("no convergence after {iterations} iterations; reporting the best iterate");
            (*best, ExitCode::from(2))
        }
        Err(e) => return Err(e.into()),
    };
    write_file(out, "agents.csv", &agents_csv(&state))?;
    emit_json(sc, out, "solve.json", &state)?;
    Ok(code)
}

fn price_grid(pmin: f64, pmax: f64, steps: usize) -> anyhow::Result<Vec<f64>> {
    if steps == 0 {
        bail!("--steps must be at least 1");
    }
    if !(pmin.is_finite() && pmax.is_finite() && pmin <= pmax) {
        bail!("need finite --pmin <= --pmax");
    }
    if steps == 1 {
        return Ok(vec![pmin]);
    }
    let h = (pmax - pmin) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|k| if k + 1 == steps { pmax } else { pmin + h * k as f64 })
        .collect())
}

fn cmd_sweep(
    sc: &Scenario,
    out: Option<&Path>,
    (pmin, pmax, steps): (f64, f64, usize),
    cost: Option<f64>,
    subsidy: Subsidy,
) -> anyhow::Result<ExitCode> {
    let m = match cost {
        Some(c) => sc.market.with_cost(c)?,
        None => sc.market.clone(),
    };
    let rows = sweep(&m, &price_grid(pmin, pmax, steps)?, subsidy)?;
    let csv = sweep_csv(&rows);
    write_file(out, "sweep.csv", &csv)?;
    #[derive(Serialize)]
    struct SweepMeta {
        pmin: f64,
        pmax: f64,
        steps: usize,
        cost: f64,
        subsidy: Subsidy,
        failed_rows: usize,
    }
    let meta = SweepMeta {
        pmin,
        pmax,
        steps,
        cost: m.cost(),
        subsidy,
        failed_rows: rows.iter().filter(|r| !r.converged).count(),
    };
    write_file(out, "sweep.meta.json", &to_json(&seeded(sc, meta))?)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_price_opt(sc: &Scenario, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let analysis = analyze_prices(&sc.market)?;
    emit_json(sc, out, "price_opt.json", &analysis)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_price_batch(cli: &Cli, out: Option<&Path>, counts: &[usize]) -> anyhow::Result<ExitCode> {
    let cfg = config(cli)?;
    if cfg.owners.len() != 1 {
        bail!("--owner-counts needs a scenario with exactly one owner block");
    }
    let mut csv = String::from("n_owners,p_c,p_upper,p_potential,p_r,p_sw,revenue_r,welfare_sw,welfare_r,branch\n");
    for &n in counts {
        let mut c = cfg.clone();
        c.owners[0].count = Some(n);
        let sc = c.build(cli.seed)?;
        let PriceAnalysis {
            p_c,
            p_upper,
            p_potential,
            p_r,
            p_sw,
            revenue_r,
            welfare_sw,
            welfare_r,
            branch,
            ..
        } = analyze_prices(&sc.market)?;
        let cols = [p_c, p_upper, p_potential, p_r, p_sw, revenue_r, welfare_sw, welfare_r].map(fmt_g);
        let branch = format!("{branch:?}").to_lowercase();
        csv.push_str(&format!("{n},{},{branch}\n", cols.join(",")));
    }
    write_file(out, "price_batch.csv", &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_subsidy_opt(sc: &Scenario, out: Option<&Path>, model: SubsidyModel, eps_max: f64) -> anyhow::Result<ExitCode> {
    let search = SubsidySearch {
        eps_max,
        ..SubsidySearch::default()
    };
    let opt = optimize_subsidy(&sc.market, model, search)?;
    emit_json(sc, out, "subsidy_opt.json", &opt)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(out: Option<&Path>, input: &Path, offset: f64, smoothing: bool) -> anyhow::Result<ExitCode> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let records = read_transactions(file)?;
    let fit = fit_exponential_demand(
        &records,
        FitOptions {
            p_offset: offset,
            smoothing,
        },
    )?;
    let text = to_json(&fit)?;
    write_file(out, "fit.json", &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_gap_bound(sc: &Scenario, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let analysis = analyze_prices(&sc.market)?;
    let bound = welfare_gap_bounds(&sc.market, analysis.p_sw, analysis.p_r)?;
    emit_json(sc, out, "gap_bound.json", &bound)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct OracleRow {
    price: f64,
    max_action_diff: f64,
    max_diff_cells: f64,
    agree: bool,
    solver_supply: f64,
    oracle_supply: f64,
    oracle_rounds: usize,
    solver_verify_gain: f64,
}

#[derive(Serialize)]
struct OracleReport {
    grid: usize,
    tolerance_cells: f64,
    all_agree: bool,
    rows: Vec<OracleRow>,
    linear: Option<LinearMarketSolution>,
}

const ORACLE_MAX_OWNERS: usize = 6;
const ORACLE_CELLS: f64 = 2.0;

fn action_gap(a: &EquilibriumState, b: &EquilibriumState) -> f64 {
    a.actions
        .iter()
        .zip(&b.actions)
        .map(|(u, v)| (u.x - v.x).abs().max((u.s - v.s).abs()))
        .fold(0.0, f64::max)
}

fn linear_values(m: &Market) -> Option<(Vec<f64>, Vec<f64>)> {
    let alpha = |f: &BenefitFunction| match f {
        BenefitFunction::Linear { alpha } => Some(*alpha),
        _ => None,
    };
    let owners = m
        .owners()
        .iter()
        .map(|o| alpha(&o.benefit))
        .collect::<Option<Vec<_>>>()?;
    let renters = m
        .renters()
        .iter()
        .map(|r| alpha(&r.benefit))
        .collect::<Option<Vec<_>>>()?;
    Some((owners, renters))
}

fn cmd_oracle_check(sc: &Scenario, out: Option<&Path>, grid: usize, prices: &[f64]) -> anyhow::Result<ExitCode> {
    let m = &sc.market;
    if m.n_owners() > ORACLE_MAX_OWNERS {
        bail!("oracle-check supports at most {ORACLE_MAX_OWNERS} owners");
    }
    if !(2..=501).contains(&grid) {
        bail!("--grid must be in [2, 501]");
    }
    let prices = if prices.is_empty() {
        (1..=5).map(|k| m.price_ceiling() * k as f64 / 6.0).collect()
    } else {
        prices.to_vec()
    };
    let cell = 1.0 / (grid - 1) as f64;
    let mut rows = Vec::new();
    for &p in &prices {
        let solved = match solve_equilibrium(m, p, Subsidy::NONE) {
            Ok(s) => s,
            Err(Error::NonConvergence { best, .. }) => *best,
            Err(e) => return Err(e.into()),
        };
        let oracle = brute_force_equilibrium(m, p, Subsidy::NONE, grid)?;
        let diff = action_gap(&solved, &oracle);
        rows.push(OracleRow {
            price: p,
            max_action_diff: diff,
            max_diff_cells: diff / cell,
            agree: diff <= ORACLE_CELLS * cell + 1e-12,
            solver_supply: solved.total_supply,
            oracle_supply: oracle.total_supply,
            oracle_rounds: oracle.iterations,
            solver_verify_gain: verify_equilibrium(m, &solved, grid),
        });
    }
    let linear = match linear_values(m) {
        Some((o, r)) => Some(linear_market_solve(&o, &r, m.cost())?),
        None => None,
    };
    let report = OracleReport {
        grid,
        tolerance_cells: ORACLE_CELLS,
        all_agree: rows.iter().all(|r| r.agree),
        rows,
        linear,
    };
    let agree = report.all_agree;
    emit_json(sc, out, "oracle_check.json", report)?;
    Ok(if agree { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
