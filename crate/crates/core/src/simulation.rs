//! Equilibrium path simulation, counterfactual scenarios and welfare tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamic_game::{
    backward_induction, per_period_cost, Action, ActorType, DynamicParams, MarketEnvironment, PolicySolution, SolverOptions,
};
use crate::error::{Error, Result};
use crate::state_space::{apply_transition, ActionTally, IndustryState, Level, StateSpace, N_LEVELS};
use crate::static_market::{consumer_surplus, AllocationRule};
use crate::units::{dynamic_to_welfare, usd_to_welfare};

/// Equilibrium of one route in one simulated year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub route: String,
    pub demand_state: f64,
    pub price: f64,
    pub quantity: f64,
    /// Sum of firm profits on the route, USD.
    pub profit: f64,
}

/// One simulated year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearRecord {
    /// Period index from 0.
    pub t: usize,
    pub year: i32,
    pub state: IndustryState,
    /// Realized actions; `None` in the final recorded year.
    pub tally: Option<ActionTally>,
    /// Route equilibria for the realized state; empty when no firm is active.
    pub routes: Vec<RouteRecord>,
}

impl YearRecord {
    pub fn producer_profit(&self) -> f64 {
        self.routes.iter().map(|r| r.profit).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub seed: u64,
    pub years: Vec<YearRecord>,
}

impl SimulatedPath {
    pub fn states(&self) -> Vec<IndustryState> {
        self.years.iter().map(|y| y.state).collect()
    }

    /// Checks every transition against [`apply_transition`].
    pub fn check_consistent(&self, caps: [u32; N_LEVELS]) -> Result<()> {
        for pair in self.years.windows(2) {
            let tally = pair[0]
                .tally
                .as_ref()
                .ok_or_else(|| Error::consistency(format!("year {} has no actions", pair[0].year)))?;
            let next = apply_transition(&pair[0].state, tally, caps)?;
            if next != pair[1].state {
                return Err(Error::consistency(format!(
                    "year {}: {} with recorded actions gives {}, path has {}",
                    pair[0].year, pair[0].state, next, pair[1].state
                )));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative total; take the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples every firm's action at `(t, state)`: level-1 firms first, then up to
/// level 4, then the potential entrants.
pub fn sample_tally(policy: &PolicySolution, t: usize, state: &IndustryState, rng: &mut ChaCha8Rng) -> Result<ActionTally> {
    let s = policy
        .space()
        .index(state)
        .ok_or_else(|| Error::consistency(format!("state {state} is outside the solved state space")))?;
    let ccps = policy.ccps(t, s);
    let mut tally = ActionTally::default();
    for l in 0..N_LEVELS {
        for _ in 0..state.0[l] {
            match draw(rng, &ccps.incumbent[l]) {
                0 => tally.exits[l] += 1,
                1 => tally.keeps[l] += 1,
                _ => tally.builds[l] += 1,
            }
        }
    }
    for _ in 0..policy.n_entrants() {
        if draw(rng, &ccps.entrant) == 1 {
            tally.entries += 1;
        } else {
            tally.entrant_quits += 1;
        }
    }
    Ok(tally)
}

fn year_record(env: &MarketEnvironment, t: usize, state: IndustryState, tally: Option<ActionTally>) -> Result<YearRecord> {
    let outcomes = env.outcomes(t, &state)?;
    let routes = outcomes
        .iter()
        .zip(&env.routes)
        .map(|(o, r)| RouteRecord {
            route: r.name.clone(),
            demand_state: r.demand_states[t],
            price: o.price,
            quantity: o.quantity,
            profit: o.firm_profits.iter().sum(),
        })
        .collect();
    Ok(YearRecord {
        t,
        year: env.years[t],
        state,
        tally,
        routes,
    })
}

/// Simulates `horizon` years from `initial` at period 0.
pub fn simulate_path(
    policy: &PolicySolution,
    env: &MarketEnvironment,
    initial: IndustryState,
    horizon: usize,
    seed: u64,
) -> Result<SimulatedPath> {
    if horizon == 0 || horizon > policy.periods() || horizon > env.years.len() {
        return Err(Error::precondition(format!(
            "horizon {horizon} outside 1..={}",
            policy.periods().min(env.years.len())
        )));
    }
    let caps = policy.space().caps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = initial;
    let mut years = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if t + 1 == horizon {
            if !policy.space().contains(&state) {
                return Err(Error::consistency(format!("state {state} is outside the solved state space")));
            }
            years.push(year_record(env, t, state, None)?);
            break;
        }
        let tally = sample_tally(policy, t, &state, &mut rng)?;
        let next = apply_transition(&state, &tally, caps)?;
        years.push(year_record(env, t, state, Some(tally))?);
        state = next;
    }
    Ok(SimulatedPath { seed, years })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub base_seed: u64,
    pub paths: Vec<SimulatedPath>,
}

impl Ensemble {
    pub fn years(&self) -> Vec<i32> {
        self.paths[0].years.iter().map(|y| y.year).collect()
    }

    /// Mean firm count per level and year.
    pub fn mean_counts(&self) -> Vec<[f64; N_LEVELS]> {
        let horizon = self.paths[0].years.len();
        let n = self.paths.len() as f64;
        (0..horizon)
            .map(|t| {
                let mut sums = [0u64; N_LEVELS];
                for p in &self.paths {
                    for (l, c) in p.years[t].state.0.iter().enumerate() {
                        sums[l] += *c as u64;
                    }
                }
                sums.map(|s| s as f64 / n)
            })
            .collect()
    }

    /// Median firm count per level and year (mean of the two middle runs when even).
    pub fn median_counts(&self) -> Vec<[f64; N_LEVELS]> {
        let horizon = self.paths[0].years.len();
        (0..horizon)
            .map(|t| {
                let mut m = [0.0; N_LEVELS];
                for (l, slot) in m.iter_mut().enumerate() {
                    let mut v: Vec<u32> = self.paths.iter().map(|p| p.years[t].state.0[l]).collect();
                    v.sort_unstable();
                    let k = v.len();
                    *slot = if k % 2 == 1 {
                        v[k / 2] as f64
                    } else {
                        (v[k / 2 - 1] + v[k / 2]) as f64 / 2.0
                    };
                }
                m
            })
            .collect()
    }

    /// Writes `year,level_1,level_2,level_3,level_4` mean counts.
    pub fn write_mean_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["year", "level_1", "level_2", "level_3", "level_4"])?;
        for (year, m) in self.years().iter().zip(self.mean_counts()) {
            let mut row = vec![year.to_string()];
            row.extend(m.iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `n` paths; run `i` uses seed `base_seed + i` (wrapping).
pub fn simulate_ensemble(
    policy: &PolicySolution,
    env: &MarketEnvironment,
    initial: IndustryState,
    horizon: usize,
    n: usize,
    base_seed: u64,
) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::precondition("ensemble needs at least one run"));
    }
    let paths = (0..n)
        .map(|i| simulate_path(policy, env, initial, horizon, base_seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { base_seed, paths })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Baseline,
    NoCartel,
    /// Quota allocation favoring small firms.
    #[serde(rename = "omega1")]
    FavorSmall,
    /// Quota allocation favoring large firms.
    #[serde(rename = "omega2")]
    FavorLarge,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "no-cartel" => Ok(Self::NoCartel),
            "omega1" => Ok(Self::FavorSmall),
            "omega2" => Ok(Self::FavorLarge),
            other => Err(Error::config(format!("unknown scenario '{other}'"))),
        }
    }
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::NoCartel => "no-cartel",
            Self::FavorSmall => "omega1",
            Self::FavorLarge => "omega2",
        }
    }
}

/// Static parameter overrides applied on top of a scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParameterPatch {
    pub alpha1: Option<f64>,
    pub gamma1: Option<f64>,
    pub cartel_effect_pre80: Option<f64>,
    pub cartel_effect_80_83: Option<f64>,
    pub allocation: Option<AllocationRule>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub overrides: ParameterPatch,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            overrides: ParameterPatch::default(),
        }
    }

    /// The environment this scenario prices states in.
    pub fn apply(&self, env: &MarketEnvironment) -> MarketEnvironment {
        let mut out = env.clone();
        match self.kind {
            ScenarioKind::Baseline => {}
            ScenarioKind::NoCartel => {
                out.static_params.cartel_effect_pre80 = 0.0;
                out.static_params.cartel_effect_80_83 = 0.0;
            }
            ScenarioKind::FavorSmall => out.allocation = AllocationRule::favor_small(),
            ScenarioKind::FavorLarge => out.allocation = AllocationRule::favor_large(),
        }
        let p = &self.overrides;
        if let Some(v) = p.alpha1 {
            out.static_params.alpha1 = v;
        }
        if let Some(v) = p.gamma1 {
            out.static_params.gamma1 = v;
        }
        if let Some(v) = p.cartel_effect_pre80 {
            out.static_params.cartel_effect_pre80 = v;
        }
        if let Some(v) = p.cartel_effect_80_83 {
            out.static_params.cartel_effect_80_83 = v;
        }
        if let Some(rule) = p.allocation {
            out.allocation = rule;
        }
        out
    }
}

/// Simulation settings of a scenario run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub initial: IndustryState,
    pub horizon: usize,
    pub n: usize,
    pub base_seed: u64,
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub env: MarketEnvironment,
    pub policy: PolicySolution,
    pub ensemble: Ensemble,
}

/// Rebuilds profits under the scenario, re-solves the game and simulates.
pub fn run_scenario(
    scenario: &Scenario,
    env: &MarketEnvironment,
    params: &DynamicParams,
    caps: [u32; N_LEVELS],
    solver: &SolverOptions,
    spec: &EnsembleSpec,
) -> Result<ScenarioRun> {
    let env = scenario.apply(env);
    let space = StateSpace::new(caps);
    let profits = env.profit_table(&space)?;
    let policy = backward_induction(&profits, params, solver)?;
    let ensemble = simulate_ensemble(&policy, &env, spec.initial, spec.horizon, spec.n, spec.base_seed)?;
    Ok(ScenarioRun {
        scenario: *scenario,
        env,
        policy,
        ensemble,
    })
}

/// An inclusive range of years summed into one welfare row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeWindow {
    pub label: String,
    pub start: i32,
    pub end: i32,
}

impl RegimeWindow {
    pub fn new(label: impl Into<String>, start: i32, end: i32) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn defaults() -> Vec<Self> {
        vec![
            Self::new("1973-1979", 1973, 1979),
            Self::new("1980-1983", 1980, 1983),
            Self::new("1984-1990", 1984, 1990),
        ]
    }
}

/// What producer surplus counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurplusMode {
    /// Static profits only.
    #[default]
    StaticProfit,
    /// Static profits net of exit, operation, investment and entry costs.
    NetDynamicCosts,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelfareOptions {
    pub beta: f64,
    pub base_year: i32,
    pub choke_price: f64,
    pub alpha1: f64,
    pub mode: SurplusMode,
}

/// Discounted CS, PS and SW of one window, billion USD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelfareRow {
    pub label: String,
    pub consumer: f64,
    pub producer: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub rows: Vec<WelfareRow>,
}

/// Ten times the highest simulated price.
pub fn default_choke_price(paths: &[SimulatedPath]) -> f64 {
    10.0 * paths
        .iter()
        .flat_map(|p| p.years.iter().flat_map(|y| y.routes.iter().map(|r| r.price)))
        .fold(0.0, f64::max)
}

/// Dynamic costs paid in one year, dynamic units.
fn dynamic_costs(tally: &ActionTally, params: &DynamicParams) -> Result<f64> {
    let mut total = 0.0;
    for l in Level::all() {
        let a = ActorType::Incumbent(l);
        let i = l.index();
        total += tally.exits[i] as f64 * per_period_cost(a, Action::Exit, params)?;
        total += tally.keeps[i] as f64 * per_period_cost(a, Action::Keep, params)?;
        total += tally.builds[i] as f64 * per_period_cost(a, Action::Build, params)?;
    }
    total += tally.entries as f64 * per_period_cost(ActorType::Entrant, Action::Enter, params)?;
    Ok(total)
}

/// Discounted surplus per window, averaged over `paths`.
///
/// `dynamic` is required when `options.mode` nets dynamic costs.
pub fn welfare_by_regime(
    paths: &[SimulatedPath],
    windows: &[RegimeWindow],
    options: &WelfareOptions,
    dynamic: Option<&DynamicParams>,
) -> Result<WelfareReport> {
    if paths.is_empty() {
        return Err(Error::precondition("welfare needs at least one path"));
    }
    let n = paths.len() as f64;
    let mut rows: Vec<WelfareRow> = windows
        .iter()
        .map(|w| WelfareRow {
            label: w.label.clone(),
            consumer: 0.0,
            producer: 0.0,
            total: 0.0,
        })
        .collect();
    for path in paths {
        for rec in &path.years {
            let Some(k) = windows.iter().position(|w| w.start <= rec.year && rec.year <= w.end) else {
                continue;
            };
            let discount = options.beta.powi(rec.year - options.base_year);
            let mut cs = 0.0;
            for r in &rec.routes {
                cs += consumer_surplus(r.price, r.demand_state, options.alpha1, options.choke_price)?;
            }
            let mut ps = usd_to_welfare(rec.producer_profit());
            if options.mode == SurplusMode::NetDynamicCosts {
                let params = dynamic.ok_or_else(|| Error::config("netting dynamic costs needs dynamic parameters"))?;
                if let Some(tally) = &rec.tally {
                    ps -= dynamic_to_welfare(dynamic_costs(tally, params)?);
                }
            }
            rows[k].consumer += discount * usd_to_welfare(cs) / n;
            rows[k].producer += discount * ps / n;
        }
    }
    for r in &mut rows {
        r.total = r.consumer + r.producer;
    }
    Ok(WelfareReport { rows })
}

/// Proportional change of each scenario entry against the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelfareDelta {
    pub label: String,
    pub consumer: f64,
    pub producer: f64,
    pub total: f64,
}

fn ratio_change(scenario: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        if scenario == 0.0 {
            0.0
        } else {
            f64::NAN
        }
    } else {
        (scenario - baseline) / baseline.abs()
    }
}

pub fn welfare_deltas(baseline: &WelfareReport, scenario: &WelfareReport) -> Result<Vec<WelfareDelta>> {
    if baseline.rows.len() != scenario.rows.len() {
        return Err(Error::consistency("welfare reports cover different windows"));
    }
    Ok(baseline
        .rows
        .iter()
        .zip(&scenario.rows)
        .map(|(b, s)| WelfareDelta {
            label: b.label.clone(),
            consumer: ratio_change(s.consumer, b.consumer),
            producer: ratio_change(s.producer, b.producer),
            total: ratio_change(s.total, b.total),
        })
        .collect())
}

/// Writes `window,cs,ps,sw` rows, with proportional changes when `deltas` is given.
pub fn write_welfare_csv<W: std::io::Write>(report: &WelfareReport, deltas: Option<&[WelfareDelta]>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if deltas.is_some() {
        w.write_record(["window", "cs", "ps", "sw", "cs_change", "ps_change", "sw_change"])?;
    } else {
        w.write_record(["window", "cs", "ps", "sw"])?;
    }
    for (k, r) in report.rows.iter().enumerate() {
        let mut row = vec![
            r.label.clone(),
            format!("{:.17e}", r.consumer),
            format!("{:.17e}", r.producer),
            format!("{:.17e}", r.total),
        ];
        if let Some(d) = deltas {
            row.push(format!("{:.17e}", d[k].consumer));
            row.push(format!("{:.17e}", d[k].producer));
            row.push(format!("{:.17e}", d[k].total));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamic_game::RouteDemand;
    use crate::state_space::{Market, RepresentativeTonnage};
    use crate::static_market::{RegimeYears, StaticParams};
    use approx::assert_relative_eq;

    fn env(years: std::ops::RangeInclusive<i32>) -> MarketEnvironment {
        let years: Vec<i32> = years.collect();
        MarketEnvironment {
            routes: vec![RouteDemand {
                name: "r".into(),
                demand_states: vec![12.0; years.len()],
                gamma0: 300.0,
            }],
            years,
            static_params: StaticParams {
                alpha1: -0.869,
                gamma0: 300.0,
                gamma1: 180.190,
                cartel_effect_pre80: 1106.208,
                cartel_effect_80_83: 440.663,
            },
            representative: RepresentativeTonnage::for_market(Market::Transpacific),
            allocation: AllocationRule::tonnage_share(),
            regime_years: RegimeYears::default(),
            cartel: true,
        }
    }

    fn solve(env: &MarketEnvironment, caps: [u32; 4], params: &DynamicParams, n_entrants: u32) -> PolicySolution {
        let profits = env.profit_table(&StateSpace::new(caps)).unwrap();
        let options = SolverOptions {
            n_entrants,
            ..Default::default()
        };
        backward_induction(&profits, params, &options).unwrap()
    }

    #[test]
    fn keep_only_policy_gives_constant_path() {
        let e = env(1973..=1978);
        // prohibitive exit, build and entry costs
        let params = DynamicParams {
            exit_cost: 1e3,
            operation_cost: 0.0,
            entry_cost: 1e3,
            invest_cost_low: 1e3,
            invest_cost_high: 1e3,
            logit_scale: 0.1,
            discount: 0.9,
        };
        let policy = solve(&e, [2, 1, 0, 0], &params, 1);
        let start = IndustryState([2, 1, 0, 0]);
        let path = simulate_path(&policy, &e, start, 6, 3).unwrap();
        assert!(path.states().iter().all(|s| *s == start));
        assert!(path.years[5].tally.is_none());
        path.check_consistent([2, 1, 0, 0]).unwrap();
    }

    #[test]
    fn certain_exit_empties_the_market() {
        let e = env(1985..=1989);
        let params = DynamicParams {
            exit_cost: -1e3,
            operation_cost: 0.0,
            entry_cost: 1e3,
            invest_cost_low: 0.0,
            invest_cost_high: 0.0,
            logit_scale: 0.1,
            discount: 0.9,
        };
        let policy = solve(&e, [2, 1, 1, 0], &params, 1);
        let path = simulate_path(&policy, &e, IndustryState([2, 1, 1, 0]), 5, 11).unwrap();
        for rec in &path.years[1..] {
            assert_eq!(rec.state, IndustryState([0; 4]));
            assert!(rec.routes.is_empty());
        }
    }

    #[test]
    fn ensemble_of_one_is_a_path() {
        let e = env(1976..=1982);
        let policy = solve(&e, [2, 1, 1, 0], &DynamicParams::transpacific(), 1);
        let start = IndustryState([1, 1, 0, 0]);
        let one = simulate_ensemble(&policy, &e, start, 7, 1, 42).unwrap();
        assert_eq!(one.paths[0], simulate_path(&policy, &e, start, 7, 42).unwrap());
        let again = simulate_ensemble(&policy, &e, start, 7, 20, 5).unwrap();
        let twice = simulate_ensemble(&policy, &e, start, 7, 20, 5).unwrap();
        assert_eq!(again, twice);
        for p in &again.paths {
            p.check_consistent([2, 1, 1, 0]).unwrap();
        }
    }

    #[test]
    fn empirical_frequencies_match_ccps() {
        let e = env(1980..=1982);
        let policy = solve(&e, [2, 1, 1, 0], &DynamicParams::transpacific(), 2);
        let state = IndustryState([2, 1, 0, 0]);
        let s = policy.space().index(&state).unwrap();
        let row = policy.ccps(0, s).incumbent[0];
        let entrant = policy.ccps(0, s).entrant;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let mut counts = [0u64; 3];
        let mut entries = 0u64;
        for _ in 0..draws {
            let t = sample_tally(&policy, 0, &state, &mut rng).unwrap();
            counts[0] += t.exits[0] as u64;
            counts[1] += t.keeps[0] as u64;
            counts[2] += t.builds[0] as u64;
            entries += t.entries as u64;
        }
        let trials = 2.0 * draws as f64;
        for a in 0..3 {
            let se = (row[a] * (1.0 - row[a]) / trials).sqrt();
            assert!((counts[a] as f64 / trials - row[a]).abs() <= 3.0 * se + 1e-12, "action {a}");
        }
        let se = (entrant[1] * (1.0 - entrant[1]) / trials).sqrt();
        assert!((entries as f64 / trials - entrant[1]).abs() <= 3.0 * se + 1e-12);
    }

    #[test]
    fn no_cartel_lowers_collusive_prices() {
        let base = env(1976..=1985);
        let nc = Scenario::new(ScenarioKind::NoCartel).apply(&base);
        let space = StateSpace::new([2, 1, 1, 1]);
        for t in 0..base.years.len() {
            for state in space.states() {
                let b = base.outcomes(t, &state).unwrap();
                let c = nc.outcomes(t, &state).unwrap();
                for (x, y) in b.iter().zip(&c) {
                    if base.regime(t).is_collusive() {
                        assert!(y.price < x.price);
                    } else {
                        assert_eq!(y.price, x.price);
                    }
                }
            }
        }
        assert_eq!(Scenario::new(ScenarioKind::Baseline).apply(&base), base);
    }

    fn record(year: i32, price: f64, demand_state: f64, profit: f64) -> YearRecord {
        YearRecord {
            t: 0,
            year,
            state: IndustryState([1, 0, 0, 0]),
            tally: None,
            routes: vec![RouteRecord {
                route: "r".into(),
                demand_state,
                price,
                quantity: 1.0,
                profit,
            }],
        }
    }

    #[test]
    fn welfare_examples() {
        let w = [RegimeWindow::new("all", 1973, 1973)];
        let zero = SimulatedPath {
            seed: 0,
            years: vec![record(1973, 5.0, 0.0, 0.0)],
        };
        let opts = WelfareOptions {
            beta: 0.9,
            base_year: 1973,
            choke_price: 5.0,
            alpha1: -0.5,
            mode: SurplusMode::StaticProfit,
        };
        let r = welfare_by_regime(&[zero], &w, &opts, None).unwrap();
        assert_eq!((r.rows[0].consumer, r.rows[0].producer, r.rows[0].total), (0.0, 0.0, 0.0));

        // CS of 2 bn with exponent 1/2: D chosen so e^D (sqrt(c) - sqrt(p)) / 0.5 = 2e9
        let d = (1e9f64 / (3.0 - 2.0)).ln();
        let path = SimulatedPath {
            seed: 0,
            years: vec![record(1973, 4.0, d, 1e9)],
        };
        let opts = WelfareOptions { choke_price: 9.0, ..opts };
        let r = welfare_by_regime(&[path.clone()], &w, &opts, None).unwrap();
        assert_relative_eq!(r.rows[0].consumer, 2.0, max_relative = 1e-12);
        assert_relative_eq!(r.rows[0].producer, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.rows[0].total, 3.0, max_relative = 1e-12);

        let mut later = path;
        later.years[0].year = 1975;
        let w = [RegimeWindow::new("all", 1973, 1979)];
        let r = welfare_by_regime(&[later], &w, &opts, None).unwrap();
        assert_relative_eq!(r.rows[0].producer, 0.81, max_relative = 1e-12);
    }

    #[test]
    fn net_mode_subtracts_dynamic_costs() {
        let mut rec = record(1973, 4.0, 0.0, 1e9);
        let state = rec.state;
        rec.tally = Some(ActionTally::all_keep(&state, 0));
        let path = SimulatedPath { seed: 0, years: vec![rec] };
        let opts = WelfareOptions {
            beta: 0.9,
            base_year: 1973,
            choke_price: 40.0,
            alpha1: -0.5,
            mode: SurplusMode::NetDynamicCosts,
        };
        let w = RegimeWindow::defaults();
        assert!(welfare_by_regime(&[path.clone()], &w, &opts, None).is_err());
        let p = DynamicParams::transpacific();
        let r = welfare_by_regime(&[path], &w, &opts, Some(&p)).unwrap();
        assert_relative_eq!(r.rows[0].producer, 1.0 - 0.103 * 100.0, max_relative = 1e-12);
    }

    #[test]
    fn deltas_are_proportional() {
        let row = |c, p| WelfareRow {
            label: "w".into(),
            consumer: c,
            producer: p,
            total: c + p,
        };
        let b = WelfareReport { rows: vec![row(2.0, 4.0)] };
        let s = WelfareReport { rows: vec![row(3.0, 2.0)] };
        let d = welfare_deltas(&b, &s).unwrap();
        assert_relative_eq!(d[0].consumer, 0.5);
        assert_relative_eq!(d[0].producer, -0.5);
        assert_relative_eq!(d[0].total, -1.0 / 6.0);
    }
}
