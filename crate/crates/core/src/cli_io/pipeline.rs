//! Glue between configuration, data files and the model modules.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{MarketSection, RunConfig, StaticSource};
use super::data::{base_market, derive_tallies, FirmRecord, ObservedTallies, RouteYearRecord};
use crate::dynamic_game::{backward_induction, DynamicParams, MarketEnvironment, PolicySolution, ProfitTable, RouteDemand};
use crate::error::{Error, Result};
use crate::estimation::{
    demand_state, names, supply_intercept, tsls_panel, Column, DemandCoefficients, DynamicData, EstimateReport, MarketTallies,
    SupplyCoefficients, YearObservation,
};
use crate::simulation::{simulate_path, RouteRecord, SimulatedPath, YearRecord};
use crate::state_space::{ActionTally, IndustryState, Level, StateSpace, N_LEVELS};
use crate::static_market::{equilibrium_outcome, Regime, RegimeYears, RouteSnapshot, StaticParams};

fn regime_dummies(years: &[i32], regimes: &RegimeYears) -> (Vec<f64>, Vec<f64>) {
    years
        .iter()
        .map(|&y| match regimes.regime(y) {
            Regime::Collusive79 => (1.0, 0.0),
            Regime::Collusive83 => (0.0, 1.0),
            Regime::Competitive => (0.0, 0.0),
        })
        .unzip()
}

/// Fitted demand and supply equations.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticEstimates {
    pub demand_report: EstimateReport,
    pub supply_report: EstimateReport,
    pub demand: DemandCoefficients,
    pub supply: SupplyCoefficients,
}

pub const SHIFTER_NAMES: [&str; 3] = [names::SHIP_AGE, names::OLD_SHARE, names::SHIP_SIZE];

fn shifters_of(r: &RouteYearRecord) -> BTreeMap<String, f64> {
    [
        (names::SHIP_AGE, r.avg_ship_age),
        (names::OLD_SHARE, r.share_old_ships),
        (names::SHIP_SIZE, r.avg_ship_size),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Log demand by 2SLS with price instrumented by ship age and the share of
/// old ships, then the supply relation with the load factor instrumented by
/// log GDP. Both absorb route effects and cluster by route.
pub fn estimate_static(records: &[RouteYearRecord], regimes: &RegimeYears) -> Result<StaticEstimates> {
    let years: Vec<i32> = records.iter().map(|r| r.year).collect();
    let routes: Vec<String> = records.iter().map(RouteYearRecord::route_key).collect();
    let (pre80, y80) = regime_dummies(&years, regimes);
    let col = |name: &str, f: &dyn Fn(&RouteYearRecord) -> f64| Column::new(name, records.iter().map(f).collect());
    let dummies = [Column::new(names::PRE80, pre80), Column::new(names::Y80_83, y80)];

    let ln_q: Vec<f64> = records.iter().map(|r| r.quantity.ln()).collect();
    let mut exog = vec![col(names::LOG_GDP, &|r| r.log_gdp)];
    exog.extend(dummies.iter().cloned());
    let demand_report = tsls_panel(
        &ln_q,
        &[col(names::LOG_PRICE, &|r| r.price.ln())],
        &exog,
        &[
            col(names::SHIP_AGE, &|r| r.avg_ship_age),
            col(names::OLD_SHARE, &|r| r.share_old_ships),
        ],
        Some(&routes),
        Some(&routes),
    )?;

    let price: Vec<f64> = records.iter().map(|r| r.price).collect();
    let mut exog = vec![
        col(names::SHIP_AGE, &|r| r.avg_ship_age),
        col(names::OLD_SHARE, &|r| r.share_old_ships),
        col(names::SHIP_SIZE, &|r| r.avg_ship_size),
    ];
    exog.extend(dummies.iter().cloned());
    let supply_report = tsls_panel(
        &price,
        &[col(names::LOAD, &|r| r.quantity / r.total_tonnage)],
        &exog,
        &[col(names::LOG_GDP, &|r| r.log_gdp)],
        Some(&routes),
        Some(&routes),
    )?;
    Ok(StaticEstimates {
        demand: DemandCoefficients::from_report(&demand_report)?,
        supply: SupplyCoefficients::from_report(&supply_report, &SHIFTER_NAMES)?,
        demand_report,
        supply_report,
    })
}

/// Static parameters with the cartel effects and slopes of the config.
pub fn configured_static_params(cfg: &RunConfig) -> StaticParams {
    let s = &cfg.static_;
    StaticParams {
        alpha1: s.alpha1,
        gamma0: 1.0,
        gamma1: s.gamma1,
        cartel_effect_pre80: s.cartel_effect_pre80,
        cartel_effect_80_83: s.cartel_effect_80_83,
    }
}

/// Demand state path of a configured route.
fn configured_demand_path(cfg: &RunConfig, market: &MarketSection, route: &super::config::RouteSection) -> Result<Vec<f64>> {
    if let Some(d) = &route.demand_states {
        return Ok(d.clone());
    }
    let effect = route
        .demand_effect
        .ok_or_else(|| Error::config(format!("route '{}' needs demand_states or demand_effect", route.name)))?;
    let gdp = market
        .log_gdp
        .as_ref()
        .ok_or_else(|| Error::config(format!("market '{}' needs log_gdp", market.name)))?;
    let mut effects = BTreeMap::new();
    effects.insert(route.name.clone(), effect);
    let coefs = DemandCoefficients {
        alpha1: cfg.static_.alpha1,
        alpha2: cfg.static_.alpha2,
        alpha3: cfg.static_.alpha3,
        alpha4: cfg.static_.alpha4,
        route_effects: effects,
    };
    cfg.years
        .years()
        .iter()
        .zip(gdp)
        .map(|(&y, &x)| demand_state(&coefs, x, y, &route.name, &cfg.regimes))
        .collect()
}

/// Market environment from configured parameters and routes.
pub fn configured_environment(cfg: &RunConfig, market: &MarketSection) -> Result<MarketEnvironment> {
    let routes = market
        .routes
        .iter()
        .map(|r| {
            Ok(RouteDemand {
                name: r.name.clone(),
                demand_states: configured_demand_path(cfg, market, r)?,
                gamma0: r.gamma0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let env = MarketEnvironment {
        years: cfg.years.years(),
        routes,
        static_params: configured_static_params(cfg),
        representative: market.representative()?,
        allocation: cfg.static_.allocation.rule(),
        regime_years: cfg.regimes,
        cartel: true,
    };
    env.validate()?;
    Ok(env)
}

/// Market environment from estimated static parameters. Routes and demand
/// states come from the records of the market and its replicates; values of
/// the same route and year are averaged over replicates.
pub fn estimated_environment(
    cfg: &RunConfig,
    market: &MarketSection,
    est: &StaticEstimates,
    records: &[RouteYearRecord],
) -> Result<MarketEnvironment> {
    let years = cfg.years.years();
    let mut demand: BTreeMap<String, Vec<(f64, usize)>> = BTreeMap::new();
    let mut intercept: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| base_market(&r.market) == market.name) {
        let t = years
            .iter()
            .position(|&y| y == r.year)
            .ok_or_else(|| Error::consistency(format!("route record year {} outside the configured years", r.year)))?;
        let key = r.route_key();
        let d = demand_state(&est.demand, r.log_gdp, r.year, &key, &cfg.regimes)?;
        let cell = &mut demand.entry(r.route.clone()).or_insert_with(|| vec![(0.0, 0); years.len()])[t];
        cell.0 += d;
        cell.1 += 1;
        let g = supply_intercept(&est.supply, &shifters_of(r), &key)?;
        let acc = intercept.entry(r.route.clone()).or_insert((0.0, 0));
        acc.0 += g;
        acc.1 += 1;
    }
    if demand.is_empty() {
        return Err(Error::consistency(format!("no route records for market '{}'", market.name)));
    }
    let routes = demand
        .into_iter()
        .map(|(name, cells)| {
            let demand_states = cells
                .iter()
                .zip(&years)
                .map(|(&(sum, n), y)| {
                    if n == 0 {
                        Err(Error::consistency(format!("route '{name}' has no record in {y}")))
                    } else {
                        Ok(sum / n as f64)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let (g, n) = intercept[&name];
            Ok(RouteDemand {
                name,
                demand_states,
                gamma0: g / n as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let env = MarketEnvironment {
        years,
        routes,
        static_params: StaticParams {
            alpha1: est.demand.alpha1,
            gamma0: 1.0,
            gamma1: est.supply.gamma1,
            cartel_effect_pre80: est.supply.cartel_pre80,
            cartel_effect_80_83: est.supply.cartel_80_83,
        },
        representative: market.representative()?,
        allocation: cfg.static_.allocation.rule(),
        regime_years: cfg.regimes,
        cartel: true,
    };
    env.validate()?;
    Ok(env)
}

/// Environment of `market` according to `static.source`.
pub fn environment(cfg: &RunConfig, market: &MarketSection, route_records: Option<&[RouteYearRecord]>) -> Result<MarketEnvironment> {
    match cfg.static_.source {
        StaticSource::Config => configured_environment(cfg, market),
        StaticSource::Data => {
            let records = route_records.ok_or_else(|| Error::config("static.source = \"data\" needs route_csv"))?;
            let est = estimate_static(records, &cfg.regimes)?;
            estimated_environment(cfg, market, &est, records)
        }
    }
}

/// Likelihood inputs for the observed markets whose base market is in `envs`.
/// Each base market gets one profit table shared by its replicates; the
/// terminal year carries no decision and is left out.
pub fn dynamic_data(cfg: &RunConfig, envs: &BTreeMap<String, MarketEnvironment>, tallies: &ObservedTallies) -> Result<DynamicData> {
    let space = StateSpace::new(cfg.solver.caps);
    let mut index = BTreeMap::new();
    let mut profits = Vec::new();
    for (name, env) in envs {
        index.insert(name.clone(), profits.len());
        profits.push(env.profit_table(&space)?);
    }
    let start = cfg.years.start;
    let mut markets = Vec::new();
    for (market, recs) in tallies {
        let Some(&profit_index) = index.get(base_market(market)) else {
            continue;
        };
        let periods = profits[profit_index].periods();
        let years = recs
            .iter()
            .map(|r| YearObservation {
                t: (r.year - start) as usize,
                state: r.state,
                tally: r.tally,
            })
            .filter(|o| o.t + 1 < periods)
            .collect();
        markets.push(MarketTallies {
            market: market.clone(),
            profit_index,
            years,
        });
    }
    if markets.is_empty() {
        return Err(Error::consistency("no observed market matches a configured market"));
    }
    Ok(DynamicData { profits, markets })
}

/// Tallies from firm records over the configured years.
pub fn observed_tallies(cfg: &RunConfig, firms: &[FirmRecord]) -> Result<ObservedTallies> {
    derive_tallies(firms, &cfg.solver.level_cutoffs()?, cfg.solver.n_entrants, &cfg.years.years())
}

/// Year records along observed states, for welfare on the data path.
pub fn data_path(env: &MarketEnvironment, tallies: &[super::data::TallyRecord]) -> Result<SimulatedPath> {
    let years = tallies
        .iter()
        .map(|r| {
            let t = env
                .years
                .iter()
                .position(|&y| y == r.year)
                .ok_or_else(|| Error::consistency(format!("year {} outside the environment", r.year)))?;
            let outcomes = env.outcomes(t, &r.state)?;
            Ok(YearRecord {
                t,
                year: r.year,
                state: r.state,
                tally: Some(r.tally),
                routes: outcomes
                    .iter()
                    .zip(&env.routes)
                    .map(|(o, route)| RouteRecord {
                        route: route.name.clone(),
                        demand_state: route.demand_states[t],
                        price: o.price,
                        quantity: o.quantity,
                        profit: o.firm_profits.iter().sum(),
                    })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedPath { seed: 0, years })
}

/// A generated data set in the two load schemas plus the truth behind it.
#[derive(Clone, Debug)]
pub struct SyntheticPanel {
    pub routes: Vec<RouteYearRecord>,
    pub firms: Vec<FirmRecord>,
    /// Simulated paths keyed by replicate market name.
    pub paths: BTreeMap<String, SimulatedPath>,
}

fn replicate_name(market: &str, i: usize) -> String {
    format!("{market}/{:02}", i + 1)
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("positive sd").sample(rng)
}

/// Firm rows of one replicate. Within a level, the earliest-created firms exit
/// first, then build, and the rest keep. When the cap clamps the next state,
/// the latest-created firms at the clamped level leave the sample.
fn firm_rows(market: &str, path: &SimulatedPath, tonnage: &[f64; N_LEVELS]) -> Result<Vec<FirmRecord>> {
    let mut next_id = 0usize;
    let mut new_id = || {
        next_id += 1;
        format!("{market}#{next_id:03}")
    };
    let mut roster: Vec<(String, usize)> = Vec::new();
    for l in (0..N_LEVELS).rev() {
        for _ in 0..path.years[0].state.0[l] {
            roster.push((new_id(), l));
        }
    }
    let mut rows = Vec::new();
    for (k, rec) in path.years.iter().enumerate() {
        let mut next: Vec<(String, usize)> = Vec::new();
        let mut used = [[0u32; 3]; N_LEVELS];
        let tally = rec.tally.unwrap_or_else(|| ActionTally::all_keep(&rec.state, 0));
        for (id, l) in &roster {
            let (code, dest) = if used[*l][0] < tally.exits[*l] {
                used[*l][0] += 1;
                ("x", None)
            } else if used[*l][2] < tally.builds[*l] {
                used[*l][2] += 1;
                ("b", Some((*l + 1).min(N_LEVELS - 1)))
            } else {
                used[*l][1] += 1;
                ("k", Some(*l))
            };
            rows.push(FirmRecord {
                firm_id: id.clone(),
                market: market.to_string(),
                year: rec.year,
                tonnage: tonnage[*l],
                action: code.to_string(),
            });
            if let Some(d) = dest {
                next.push((id.clone(), d));
            }
        }
        for _ in 0..tally.entries {
            let id = new_id();
            rows.push(FirmRecord {
                firm_id: id.clone(),
                market: market.to_string(),
                year: rec.year,
                tonnage: 0.0,
                action: "e".into(),
            });
            next.push((id, 0));
        }
        if let Some(following) = path.years.get(k + 1) {
            for l in 0..N_LEVELS {
                let mut excess = next.iter().filter(|(_, d)| *d == l).count() as i64 - following.state.0[l] as i64;
                if excess < 0 {
                    return Err(Error::consistency(format!(
                        "{market}: roster short of the simulated state in {}",
                        following.year
                    )));
                }
                while excess > 0 {
                    let pos = next.iter().rposition(|(_, d)| *d == l).expect("excess firm exists");
                    next.remove(pos);
                    excess -= 1;
                }
            }
            roster = next;
        }
    }
    Ok(rows)
}

/// Solves each configured market at the configured parameters, simulates
/// `synthetic.n_markets` replicates and writes them in the load schemas.
///
/// Route prices use realized cost shifters and demand shocks; the profit
/// table behind the firms' choices uses the configured route means.
pub fn generate_synthetic_panel(cfg: &RunConfig, markets: &[&MarketSection], params: &DynamicParams, seed: u64) -> Result<SyntheticPanel> {
    let sy = &cfg.synthetic;
    if sy.n_markets == 0 {
        return Err(Error::config("synthetic.n_markets must be positive"));
    }
    let cutoffs = cfg.solver.level_cutoffs()?;
    let firm_tonnage: [f64; N_LEVELS] = std::array::from_fn(|l| cutoffs.interior_log_tonnage(Level::from_index(l)).exp());
    let mean_shift: f64 = [
        (names::SHIP_AGE, 0.5 * (sy.ship_age[0] + sy.ship_age[1])),
        (names::OLD_SHARE, 0.5 * (sy.share_old[0] + sy.share_old[1])),
        (names::SHIP_SIZE, 0.5 * (sy.ship_size[0] + sy.ship_size[1])),
    ]
    .iter()
    .map(|(k, m)| cfg.static_.cost_shifters.get(*k).copied().unwrap_or(0.0) * m)
    .sum();
    let space = StateSpace::new(cfg.solver.caps);
    let mut panel = SyntheticPanel {
        routes: Vec::new(),
        firms: Vec::new(),
        paths: BTreeMap::new(),
    };
    for market in markets {
        let env = configured_environment(cfg, market)?;
        let gdp = market
            .log_gdp
            .as_ref()
            .ok_or_else(|| Error::config(format!("synthetic market '{}' needs log_gdp", market.name)))?;
        let profits = env.profit_table(&space)?;
        let policy = backward_induction(&profits, params, &cfg.solver.options())?;
        for i in 0..sy.n_markets {
            let name = replicate_name(&market.name, i);
            let path_seed = seed.wrapping_add(i as u64);
            let path = simulate_path(&policy, &env, market.initial(), env.years.len(), path_seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed);
            rng.set_stream(1);
            for rec in &path.years {
                let levels = rec.state.firm_levels();
                if levels.is_empty() {
                    continue;
                }
                let tonnages: Vec<f64> = levels.iter().map(|&l| env.representative.tonnage(l)).collect();
                let total: f64 = tonnages.iter().sum();
                for route in &env.routes {
                    let age = uniform(&mut rng, sy.ship_age);
                    let old = uniform(&mut rng, sy.share_old);
                    let size = uniform(&mut rng, sy.ship_size);
                    let xi = normal(&mut rng, sy.demand_noise);
                    let eps = normal(&mut rng, sy.supply_noise);
                    let c = &cfg.static_.cost_shifters;
                    let shift = c.get(names::SHIP_AGE).copied().unwrap_or(0.0) * age
                        + c.get(names::OLD_SHARE).copied().unwrap_or(0.0) * old
                        + c.get(names::SHIP_SIZE).copied().unwrap_or(0.0) * size;
                    let mut p = env.static_params;
                    p.gamma0 = route.gamma0 - mean_shift + shift + eps;
                    let snapshot = RouteSnapshot::with_levels(
                        route.demand_states[rec.t] + xi,
                        tonnages.clone(),
                        levels.clone(),
                        rec.year,
                        env.regime(rec.t),
                    )?;
                    let out = equilibrium_outcome(&snapshot, &p, &env.allocation)?;
                    panel.routes.push(RouteYearRecord {
                        market: name.clone(),
                        route: route.name.clone(),
                        year: rec.year,
                        price: out.price,
                        quantity: out.quantity,
                        total_tonnage: total,
                        log_gdp: gdp[rec.t],
                        avg_ship_age: age,
                        share_old_ships: old,
                        avg_ship_size: size,
                    });
                }
            }
            panel.firms.extend(firm_rows(&name, &path, &firm_tonnage)?);
            panel.paths.insert(name, path);
        }
    }
    Ok(panel)
}

/// Solves the game of `env` under the configured solver.
pub fn solve_market(cfg: &RunConfig, env: &MarketEnvironment, params: &DynamicParams) -> Result<(ProfitTable, PolicySolution)> {
    let profits = env.profit_table(&StateSpace::new(cfg.solver.caps))?;
    let policy = backward_induction(&profits, params, &cfg.solver.options())?;
    Ok((profits, policy))
}

/// The all-empty state, for callers that need a neutral start.
pub fn empty_state() -> IndustryState {
    IndustryState([0; N_LEVELS])
}
