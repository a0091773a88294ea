//! The `linerdyn` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{RunConfig, WelfareSource};
use super::data::{
    load_firm_csv, load_route_year_csv, save_firm_csv, save_route_year_csv, write_firms, write_route_years, ObservedTallies,
};
use super::pipeline::{data_path, dynamic_data, environment, estimate_static, generate_synthetic_panel, observed_tallies, solve_market};
use crate::dynamic_game::{DynamicParams, MarketEnvironment};
use crate::error::{Error, Result};
use crate::estimation::{dynamic_log_likelihood, estimate_dynamic, lr_confidence_intervals, EstimateReport, PARAM_NAMES};
use crate::simulation::{
    default_choke_price, run_scenario, welfare_by_regime, welfare_deltas, write_welfare_csv, Ensemble, EnsembleSpec, Scenario,
    ScenarioKind, SimulatedPath, WelfareOptions, WelfareReport,
};

#[derive(Debug, Parser)]
#[command(
    name = "linerdyn",
    version,
    about = "Liner-shipping cartel model: estimation, equilibrium solving and counterfactuals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the demand and supply equations on the route-year CSV.
    EstimateStatic(CommonArgs),
    /// Solve the dynamic game and write the policy.
    Solve(CommonArgs),
    /// Maximum likelihood for the dynamic parameters.
    EstimateDynamic(CommonArgs),
    /// Likelihood-ratio intervals around the configured dynamic parameters.
    Ci(CommonArgs),
    /// Simulate equilibrium paths.
    Simulate(CommonArgs),
    /// Compare a scenario with the baseline.
    Counterfactual(CommonArgs),
    /// Welfare by regime window.
    Welfare(CommonArgs),
    /// Generate a synthetic panel in the input schemas.
    Synth(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "NAME")]
    market: Option<String>,
    #[arg(long, value_name = "SCENARIO", value_parser = ["baseline", "no-cartel", "omega1", "omega2"])]
    scenario: Option<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long = "n-sims", value_name = "N")]
    n_sims: Option<usize>,
    #[arg(long = "out-dir", value_name = "PATH")]
    out_dir: Option<PathBuf>,
}

/// Exit codes of the command line.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const NUMERICAL: i32 = 2;
}

/// Maps an error to its exit code.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        exit::NUMERICAL
    } else {
        exit::VALIDATION
    }
}

/// Runs the command line with `argv` (program name first) and returns the exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::VALIDATION,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Files written by a run, recorded in the manifest.
struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        std::fs::write(self.dir.join(name), &buf)?;
        self.files.insert(name.to_string(), hex::encode(Sha256::digest(&buf)));
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    package: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: Option<u64>,
    market: Option<&'a str>,
    scenario: Option<&'a str>,
    n_sims: Option<usize>,
    outputs: &'a BTreeMap<String, String>,
}

struct Run {
    name: &'static str,
    args: CommonArgs,
    cfg: RunConfig,
    config_hash: String,
    out: Outputs,
    seed: Option<u64>,
}

impl Run {
    fn new(name: &'static str, args: CommonArgs) -> Result<Self> {
        let bytes = std::fs::read(&args.config).map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
        let cfg = RunConfig::load(&args.config)?;
        let dir = args.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
        Ok(Self {
            name,
            config_hash: hex::encode(Sha256::digest(&bytes)),
            out: Outputs::new(dir)?,
            cfg,
            args,
            seed: None,
        })
    }

    fn finish(mut self) -> Result<()> {
        let manifest = Manifest {
            command: self.name,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: self.config_hash.clone(),
            seed: self.seed,
            market: self.args.market.as_deref(),
            scenario: self.args.scenario.as_deref(),
            n_sims: self.args.n_sims,
            outputs: &self.out.files.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        self.out.write("manifest.toml", |b| {
            b.extend_from_slice(text.as_bytes());
            Ok(())
        })
    }

    fn route_records(&self) -> Result<Option<Vec<super::data::RouteYearRecord>>> {
        self.cfg.route_csv.as_deref().map(load_route_year_csv).transpose()
    }

    fn tallies(&self) -> Result<ObservedTallies> {
        let path = self
            .cfg
            .firm_csv
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs firm_csv".into()))?;
        observed_tallies(&self.cfg, &load_firm_csv(path)?)
    }

    fn environment(&self, market: &str) -> Result<MarketEnvironment> {
        let records = self.route_records()?;
        environment(&self.cfg, self.cfg.market(market)?, records.as_deref())
    }

    fn market_name(&self) -> Result<String> {
        Ok(self.cfg.select_market(self.args.market.as_deref())?.name.clone())
    }

    fn scenario(&self, default: ScenarioKind) -> Result<Scenario> {
        let kind = match &self.args.scenario {
            Some(s) => s.parse()?,
            None => default,
        };
        Ok(Scenario::new(kind))
    }

    fn ensemble_spec(&mut self, market: &str) -> Result<EnsembleSpec> {
        let seed = self.args.seed.unwrap_or(self.cfg.simulation.seed);
        self.seed = Some(seed);
        Ok(EnsembleSpec {
            initial: self.cfg.market(market)?.initial(),
            horizon: self.cfg.horizon(),
            n: self.args.n_sims.unwrap_or(self.cfg.simulation.n),
            base_seed: seed,
        })
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::EstimateStatic(a) => estimate_static_cmd(Run::new("estimate-static", a)?),
        Command::Solve(a) => solve_cmd(Run::new("solve", a)?),
        Command::EstimateDynamic(a) => estimate_dynamic_cmd(Run::new("estimate-dynamic", a)?),
        Command::Ci(a) => ci_cmd(Run::new("ci", a)?),
        Command::Simulate(a) => simulate_cmd(Run::new("simulate", a)?),
        Command::Counterfactual(a) => counterfactual_cmd(Run::new("counterfactual", a)?),
        Command::Welfare(a) => welfare_cmd(Run::new("welfare", a)?),
        Command::Synth(a) => synth_cmd(Run::new("synth", a)?),
    }
}

fn f(v: f64) -> String {
    format!("{v:.17e}")
}

fn write_report(report: &EstimateReport, buf: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["name", "coefficient", "std_error"])?;
    for (i, n) in report.names.iter().enumerate() {
        w.write_record([n.clone(), f(report.coefficients[i]), f(report.std_errors[i])])?;
    }
    w.write_record(["r_squared".to_string(), f(report.r_squared), String::new()])?;
    w.flush()?;
    Ok(())
}

fn estimate_static_cmd(mut run: Run) -> Result<()> {
    let records = run
        .route_records()?
        .ok_or_else(|| Error::Config("estimate-static needs route_csv".into()))?;
    let records: Vec<_> = match &run.args.market {
        Some(m) => records.into_iter().filter(|r| super::data::base_market(&r.market) == m).collect(),
        None => records,
    };
    let est = estimate_static(&records, &run.cfg.regimes)?;
    run.out.write("static_demand.csv", |b| write_report(&est.demand_report, b))?;
    run.out.write("static_supply.csv", |b| write_report(&est.supply_report, b))?;
    run.out.write("first_stage.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["equation", "endogenous", "f_stat", "partial_r2", "weak"])?;
        for (eq, rep) in [("demand", &est.demand_report), ("supply", &est.supply_report)] {
            for fs in &rep.first_stage {
                if fs.weak {
                    eprintln!(
                        "warning: weak instruments for {} in the {eq} equation (F = {:.2})",
                        fs.endogenous, fs.f_stat
                    );
                }
                w.write_record([
                    eq.to_string(),
                    fs.endogenous.clone(),
                    f(fs.f_stat),
                    f(fs.partial_r2),
                    fs.weak.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    run.out.write("fixed_effects.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["equation", "route", "effect"])?;
        for (eq, rep) in [("demand", &est.demand_report), ("supply", &est.supply_report)] {
            for (route, v) in &rep.fixed_effects {
                w.write_record([eq.to_string(), route.clone(), f(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    run.finish()
}

fn solve_cmd(mut run: Run) -> Result<()> {
    let market = run.market_name()?;
    let env = run.environment(&market)?;
    let params = run.cfg.dynamic.params();
    let (_, policy) = solve_market(&run.cfg, &env, &params)?;
    run.out.write(&format!("policy_{market}.csv"), |b| policy.write_csv(b))?;
    run.finish()
}

/// Environments for the selected market, or every configured market with observations.
fn estimation_setup(run: &Run) -> Result<(BTreeMap<String, MarketEnvironment>, ObservedTallies)> {
    let tallies = run.tallies()?;
    let records = run.route_records()?;
    let mut envs = BTreeMap::new();
    let wanted: Vec<&str> = match &run.args.market {
        Some(m) => vec![run.cfg.market(m)?.name.as_str()],
        None => run.cfg.markets.iter().map(|m| m.name.as_str()).collect(),
    };
    for name in wanted {
        if tallies.keys().any(|k| super::data::base_market(k) == name) {
            envs.insert(name.to_string(), environment(&run.cfg, run.cfg.market(name)?, records.as_deref())?);
        }
    }
    Ok((envs, tallies))
}

fn estimate_dynamic_cmd(mut run: Run) -> Result<()> {
    let (envs, tallies) = estimation_setup(&run)?;
    let data = dynamic_data(&run.cfg, &envs, &tallies)?;
    let init = run.cfg.dynamic.params();
    let est = estimate_dynamic(
        &data,
        &init,
        &run.cfg.dynamic.free,
        &run.cfg.solver.options(),
        &run.cfg.estimation.nelder_mead,
    )?;
    if !est.converged {
        eprintln!(
            "warning: evaluation budget exhausted after {} evaluations; reporting the best vertex",
            est.evals
        );
    }
    let init_v = natural(&init);
    let est_v = natural(&est.params);
    run.out.write("dynamic_estimates.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["parameter", "initial", "estimate"])?;
        for i in 0..6 {
            w.write_record([PARAM_NAMES[i].to_string(), f(init_v[i]), f(est_v[i])])?;
        }
        w.write_record(["log_likelihood".to_string(), String::new(), f(est.log_likelihood)])?;
        w.write_record(["evaluations".to_string(), String::new(), est.evals.to_string()])?;
        w.write_record(["converged".to_string(), String::new(), est.converged.to_string()])?;
        w.flush()?;
        Ok(())
    })?;
    run.out.write("dynamic_trace.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["evaluations", "log_likelihood"])?;
        for (e, v) in &est.trace {
            w.write_record([e.to_string(), f(*v)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.finish()
}

fn natural(p: &DynamicParams) -> [f64; 6] {
    [
        p.exit_cost,
        p.operation_cost,
        p.entry_cost,
        p.invest_cost_low,
        p.invest_cost_high,
        p.logit_scale,
    ]
}

fn ci_cmd(mut run: Run) -> Result<()> {
    let (envs, tallies) = estimation_setup(&run)?;
    let data = dynamic_data(&run.cfg, &envs, &tallies)?;
    let theta = run.cfg.dynamic.params();
    let solver = run.cfg.solver.options();
    let ll_hat = dynamic_log_likelihood(&theta, &data, &solver)?;
    if ll_hat.penalized {
        return Err(Error::Estimation(
            "the likelihood is not finite at the configured parameters".into(),
        ));
    }
    let intervals = lr_confidence_intervals(&theta, ll_hat.total, &data, &solver, &run.cfg.estimation.intervals)?;
    run.out.write("ci.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record([
            "parameter",
            "estimate",
            "lo",
            "hi",
            "degenerate",
            "open_below",
            "open_above",
            "profiled",
        ])?;
        for (name, iv) in PARAM_NAMES.iter().zip(&intervals) {
            w.write_record([
                name.to_string(),
                f(iv.estimate),
                f(iv.lo),
                f(iv.hi),
                iv.degenerate.to_string(),
                iv.open_below.to_string(),
                iv.open_above.to_string(),
                iv.profiled.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    for (name, iv) in PARAM_NAMES.iter().zip(&intervals) {
        run.out.write(&format!("ci_profile_{name}.dat"), |b| {
            writeln!(b, "# {name} log_likelihood")?;
            for (x, y) in iv.grid.iter().zip(&iv.log_likelihoods) {
                writeln!(b, "{} {}", f(*x), f(*y))?;
            }
            Ok(())
        })?;
    }
    run.finish()
}

fn write_mean_dat(ensemble: &Ensemble, b: &mut Vec<u8>) -> Result<()> {
    writeln!(b, "# year level_1 level_2 level_3 level_4")?;
    for (year, m) in ensemble.years().iter().zip(ensemble.mean_counts()) {
        writeln!(b, "{year} {} {} {} {}", f(m[0]), f(m[1]), f(m[2]), f(m[3]))?;
    }
    Ok(())
}

fn write_ensemble(run: &mut Run, stem: &str, ensemble: &Ensemble) -> Result<()> {
    run.out.write(&format!("{stem}.csv"), |b| ensemble.write_mean_csv(b))?;
    run.out.write(&format!("{stem}.dat"), |b| write_mean_dat(ensemble, b))
}

fn simulate_cmd(mut run: Run) -> Result<()> {
    let market = run.market_name()?;
    let env = run.environment(&market)?;
    let scenario = run.scenario(ScenarioKind::Baseline)?;
    let spec = run.ensemble_spec(&market)?;
    let res = run_scenario(
        &scenario,
        &env,
        &run.cfg.dynamic.params(),
        run.cfg.solver.caps,
        &run.cfg.solver.options(),
        &spec,
    )?;
    write_ensemble(&mut run, &format!("mean_path_{market}_{}", scenario.kind.name()), &res.ensemble)?;
    run.finish()
}

fn welfare_options(run: &Run, env: &MarketEnvironment, baseline: &[SimulatedPath]) -> WelfareOptions {
    WelfareOptions {
        beta: run.cfg.dynamic.discount,
        base_year: run.cfg.welfare.base_year,
        choke_price: run.cfg.welfare.choke_price.unwrap_or_else(|| default_choke_price(baseline)),
        alpha1: env.static_params.alpha1,
        mode: run.cfg.welfare.mode,
    }
}

fn welfare_of(run: &Run, paths: &[SimulatedPath], opts: &WelfareOptions) -> Result<WelfareReport> {
    let params = run.cfg.dynamic.params();
    welfare_by_regime(paths, &run.cfg.welfare.windows, opts, Some(&params))
}

fn counterfactual_cmd(mut run: Run) -> Result<()> {
    let market = run.market_name()?;
    let env = run.environment(&market)?;
    let scenario = run.scenario(ScenarioKind::NoCartel)?;
    let spec = run.ensemble_spec(&market)?;
    let params = run.cfg.dynamic.params();
    let (caps, solver) = (run.cfg.solver.caps, run.cfg.solver.options());
    let base = run_scenario(&Scenario::new(ScenarioKind::Baseline), &env, &params, caps, &solver, &spec)?;
    let alt = run_scenario(&scenario, &env, &params, caps, &solver, &spec)?;
    let opts = welfare_options(&run, &env, &base.ensemble.paths);
    let wb = welfare_of(&run, &base.ensemble.paths, &opts)?;
    let ws = welfare_of(&run, &alt.ensemble.paths, &opts)?;
    let deltas = welfare_deltas(&wb, &ws)?;
    let name = scenario.kind.name();
    run.out
        .write(&format!("welfare_{market}_baseline.csv"), |b| write_welfare_csv(&wb, None, b))?;
    run.out.write(&format!("welfare_{market}_{name}.csv"), |b| {
        write_welfare_csv(&ws, Some(&deltas), b)
    })?;
    write_ensemble(&mut run, &format!("mean_path_{market}_baseline"), &base.ensemble)?;
    write_ensemble(&mut run, &format!("mean_path_{market}_{name}"), &alt.ensemble)?;
    run.finish()
}

fn welfare_cmd(mut run: Run) -> Result<()> {
    let market = run.market_name()?;
    let env = run.environment(&market)?;
    let paths = match run.cfg.welfare.source {
        WelfareSource::Ensemble => {
            let scenario = run.scenario(ScenarioKind::Baseline)?;
            let spec = run.ensemble_spec(&market)?;
            run_scenario(
                &scenario,
                &env,
                &run.cfg.dynamic.params(),
                run.cfg.solver.caps,
                &run.cfg.solver.options(),
                &spec,
            )?
            .ensemble
            .paths
        }
        WelfareSource::DataPath => {
            let tallies = run.tallies()?;
            let recs = tallies
                .get(&market)
                .ok_or_else(|| Error::Consistency(format!("firm_csv has no market '{market}'")))?;
            vec![data_path(&env, recs)?]
        }
    };
    let opts = welfare_options(&run, &env, &paths);
    let report = welfare_of(&run, &paths, &opts)?;
    run.out
        .write(&format!("welfare_{market}.csv"), |b| write_welfare_csv(&report, None, b))?;
    run.finish()
}

fn synth_cmd(mut run: Run) -> Result<()> {
    let markets: Vec<_> = match &run.args.market {
        Some(m) => vec![run.cfg.market(m)?],
        None => run.cfg.markets.iter().collect(),
    };
    if markets.is_empty() {
        return Err(Error::Config("no markets configured".into()));
    }
    let seed = run.args.seed.unwrap_or(run.cfg.synthetic.seed);
    run.seed = Some(seed);
    let panel = generate_synthetic_panel(&run.cfg, &markets, &run.cfg.dynamic.params(), seed)?;
    run.out.write("routes.csv", |b| write_route_years(&panel.routes, b))?;
    run.out.write("firms.csv", |b| write_firms(&panel.firms, b))?;
    run.finish()
}

/// Writes a synthetic panel's two CSVs into `dir`.
pub fn save_panel(panel: &super::pipeline::SyntheticPanel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_route_year_csv(&panel.routes, &dir.join("routes.csv"))?;
    save_firm_csv(&panel.firms, &dir.join("firms.csv"))
}
