//! Finite-horizon entry, exit and investment game.
//!
//! Each year incumbents of level `l` choose exit (`x`), keep (`k`) or build
//! (`b`) and potential entrants choose quit (`x`) or enter (`e`). Choices carry
//! i.i.d. type-one extreme value shocks with scale `sigma`, so behavior is
//! summarized by logit CCPs over the deterministic choice-specific values
//!
//! ```text
//! x: -psi
//! k: -phi + beta EV(l)
//! b: -phi - I(l) + beta EV(l + 1)      (zero for level 4)
//! e: -kappa + beta EV(1)
//! ```
//!
//! where `EV(l') = sum_s' P(s' | s) V_{t+1}(l', s')` and `P` is the joint
//! transition of the whole industry under the current CCPs. Within a period
//! the CCPs at each state are found by a damped fixed-point sweep over the
//! actor types; periods are solved backward from the terminal value
//! `pi / (1 - beta)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state_space::{
    binomial, CcpRows, IndustryState, KernelWorkspace, Level, RepresentativeTonnage, StateSpace, TransitionDistribution, N_LEVELS,
};
use crate::static_market::{equilibrium_outcome, AllocationRule, EquilibriumOutcome, Regime, RegimeYears, RouteSnapshot, StaticParams};
use crate::units::{usd_to_dynamic, EULER_GAMMA};

/// Dynamic cost parameters, in units of 100 billion USD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicParams {
    /// psi
    pub exit_cost: f64,
    /// phi
    pub operation_cost: f64,
    /// kappa
    pub entry_cost: f64,
    /// Investment cost of levels 1 and 2.
    pub invest_cost_low: f64,
    /// Investment cost of levels 3 and up.
    pub invest_cost_high: f64,
    /// Scale of the choice shocks.
    pub logit_scale: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_discount() -> f64 {
    0.9
}

impl DynamicParams {
    /// Point estimates for the transpacific market.
    pub fn transpacific() -> Self {
        Self {
            exit_cost: 0.200,
            operation_cost: 0.103,
            entry_cost: 0.055,
            invest_cost_low: 0.152,
            invest_cost_high: 0.162,
            logit_scale: 0.101,
            discount: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.logit_scale > 0.0) || !self.logit_scale.is_finite() {
            return Err(Error::domain(format!("logit scale must be positive, got {}", self.logit_scale)));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            // a zero discount is allowed for myopic runs
            if self.discount != 0.0 {
                return Err(Error::domain(format!("discount must be in (0, 1), got {}", self.discount)));
            }
        }
        let costs = [
            self.exit_cost,
            self.operation_cost,
            self.entry_cost,
            self.invest_cost_low,
            self.invest_cost_high,
        ];
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("dynamic costs must be finite"));
        }
        Ok(())
    }

    /// Investment cost of a level-`level` builder.
    pub fn invest_cost(&self, level: Level) -> f64 {
        if level.get() <= 2 {
            self.invest_cost_low
        } else {
            self.invest_cost_high
        }
    }

    /// `(psi, phi, kappa, iota1, iota2, ln sigma)`, the estimation coordinates.
    pub fn to_vector(&self) -> [f64; 6] {
        [
            self.exit_cost,
            self.operation_cost,
            self.entry_cost,
            self.invest_cost_low,
            self.invest_cost_high,
            self.logit_scale.ln(),
        ]
    }

    pub fn from_vector(v: &[f64; 6], discount: f64) -> Self {
        Self {
            exit_cost: v[0],
            operation_cost: v[1],
            entry_cost: v[2],
            invest_cost_low: v[3],
            invest_cost_high: v[4],
            logit_scale: v[5].exp(),
            discount,
        }
    }
}

/// Who is choosing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActorType {
    Incumbent(Level),
    Entrant,
}

impl ActorType {
    /// All actor types; index order L1..L4 then the entrant.
    pub fn all() -> [ActorType; 5] {
        let l = Level::all();
        [
            ActorType::Incumbent(l[0]),
            ActorType::Incumbent(l[1]),
            ActorType::Incumbent(l[2]),
            ActorType::Incumbent(l[3]),
            ActorType::Entrant,
        ]
    }

    pub fn index(self) -> usize {
        match self {
            ActorType::Incumbent(l) => l.index(),
            ActorType::Entrant => N_LEVELS,
        }
    }

    pub fn label(self) -> String {
        match self {
            ActorType::Incumbent(l) => format!("L{l}"),
            ActorType::Entrant => "PE".to_string(),
        }
    }

    /// Actions in row order.
    pub fn actions(self) -> &'static [Action] {
        match self {
            ActorType::Incumbent(_) => &[Action::Exit, Action::Keep, Action::Build],
            ActorType::Entrant => &[Action::Exit, Action::Enter],
        }
    }
}

/// A discrete action. For entrants `Exit` means staying out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Exit,
    Keep,
    Build,
    Enter,
}

impl Action {
    pub fn code(self) -> char {
        match self {
            Action::Exit => 'x',
            Action::Keep => 'k',
            Action::Build => 'b',
            Action::Enter => 'e',
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        match code.trim() {
            "x" => Ok(Action::Exit),
            "k" => Ok(Action::Keep),
            "b" => Ok(Action::Build),
            "e" => Ok(Action::Enter),
            other => Err(Error::domain(format!("unknown action code '{other}'"))),
        }
    }
}

/// Flow cost paid when `actor` takes `action`.
pub fn per_period_cost(actor: ActorType, action: Action, params: &DynamicParams) -> Result<f64> {
    match (actor, action) {
        (ActorType::Incumbent(_), Action::Exit) => Ok(params.exit_cost),
        (ActorType::Incumbent(_), Action::Keep) => Ok(params.operation_cost),
        (ActorType::Incumbent(l), Action::Build) => Ok(params.operation_cost + params.invest_cost(l)),
        (ActorType::Entrant, Action::Exit) => Ok(0.0),
        (ActorType::Entrant, Action::Enter) => Ok(params.entry_cost),
        (actor, action) => Err(Error::domain(format!(
            "action {} is not available to {}",
            action.code(),
            actor.label()
        ))),
    }
}

/// Value of receiving `profit` forever from the last year on.
pub fn terminal_value(profit: f64, beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain(format!("discount must be in [0, 1), got {beta}")));
    }
    Ok(profit / (1.0 - beta))
}

fn log_sum_exp_scaled(values: &[f64], sigma: f64) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = values.iter().map(|v| ((v - m) / sigma).exp()).sum();
    m / sigma + s.ln()
}

/// Expected maximum of `v_a + sigma eps_a` over actions.
pub fn integrated_value(csvfs: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    if csvfs.is_empty() {
        return Err(Error::domain("integrated value needs at least one action"));
    }
    let lse = log_sum_exp_scaled(csvfs, sigma);
    if lse == f64::NEG_INFINITY {
        return Err(Error::domain("every action has value -inf"));
    }
    Ok(sigma * (EULER_GAMMA + lse))
}

/// Logit choice probabilities.
pub fn ccp_from_csvf(csvfs: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    let m = csvfs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return Err(Error::domain("no action has a finite value"));
    }
    let mut p: Vec<f64> = csvfs.iter().map(|v| ((v - m) / sigma).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Treatment of the level-4 build action.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level4Build {
    /// Present, with a deterministic value of exactly zero.
    #[default]
    Zero,
    /// Not available.
    Exclude,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stop once the summed absolute CCP change of a sweep falls below this.
    pub tolerance: f64,
    pub max_iters: usize,
    pub level4_build: Level4Build,
    /// Number of potential entrants each year.
    pub n_entrants: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iters: 10_000,
            level4_build: Level4Build::Zero,
            n_entrants: 4,
        }
    }
}

/// Expected next-period values `EV(l')` for each own next level `l'`.
///
/// `next_values[s][l']` is `V_{t+1}(l', s)` indexed by state-space position.
pub fn expected_continuation(
    kernel: &TransitionDistribution,
    space: &StateSpace,
    next_values: &[[f64; N_LEVELS]],
    own_next: Level,
) -> Result<f64> {
    let mut ev = 0.0;
    for (state, p) in &kernel.entries {
        let idx = space
            .index(state)
            .ok_or_else(|| Error::precondition(format!("kernel state {state} outside the state space")))?;
        ev += p * next_values[idx][own_next.index()];
    }
    Ok(ev)
}

/// Deterministic choice-specific value of `action` for `actor`, given `ev[l']`.
pub fn csvf(actor: ActorType, action: Action, ev: &[f64; N_LEVELS], params: &DynamicParams, level4: Level4Build) -> Result<f64> {
    let beta = params.discount;
    let cost = per_period_cost(actor, action, params)?;
    Ok(match (actor, action) {
        (ActorType::Incumbent(_), Action::Exit) => -cost,
        (ActorType::Incumbent(l), Action::Keep) => -cost + beta * ev[l.index()],
        (ActorType::Incumbent(l), Action::Build) => {
            if l.index() + 1 < N_LEVELS {
                -cost + beta * ev[l.index() + 1]
            } else {
                match level4 {
                    Level4Build::Zero => 0.0,
                    Level4Build::Exclude => f64::NEG_INFINITY,
                }
            }
        }
        (ActorType::Entrant, Action::Exit) => 0.0,
        (ActorType::Entrant, Action::Enter) => -cost + beta * ev[0],
        _ => unreachable!("per_period_cost rejects invalid pairs"),
    })
}

/// Static profit of a level-`l` firm at every `(t, state)`, in 100 bn USD.
///
/// For a level absent from the state the profit is that of a firm joining it.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfitTable {
    space: StateSpace,
    periods: usize,
    values: Vec<[f64; N_LEVELS]>,
}

impl ProfitTable {
    pub fn from_fn(
        space: &StateSpace,
        periods: usize,
        mut f: impl FnMut(usize, &IndustryState) -> Result<[f64; N_LEVELS]>,
    ) -> Result<Self> {
        if periods == 0 {
            return Err(Error::precondition("profit table needs at least one period"));
        }
        let mut values = Vec::with_capacity(periods * space.len());
        for t in 0..periods {
            for state in space.states() {
                let row = f(t, &state)?;
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::domain(format!("non-finite profit at t={t}, state {state}")));
                }
                values.push(row);
            }
        }
        Ok(Self {
            space: space.clone(),
            periods,
            values,
        })
    }

    /// Same profits in every period.
    pub fn constant(space: &StateSpace, periods: usize, f: impl Fn(&IndustryState) -> [f64; N_LEVELS]) -> Result<Self> {
        Self::from_fn(space, periods, |_, s| Ok(f(s)))
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    /// Profits at period `t` (0-based) and state index `s`.
    pub fn row(&self, t: usize, s: usize) -> &[f64; N_LEVELS] {
        &self.values[t * self.space.len() + s]
    }

    pub fn get(&self, t: usize, s: usize, level: Level) -> f64 {
        self.row(t, s)[level.index()]
    }

    /// Adds `delta` to every entry.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for row in out.values.iter_mut() {
            row.iter_mut().for_each(|v| *v += delta);
        }
        out
    }

    /// Keeps periods `from..` only.
    pub fn tail(&self, from: usize) -> Result<Self> {
        if from >= self.periods {
            return Err(Error::precondition("tail starts past the last period"));
        }
        Ok(Self {
            space: self.space.clone(),
            periods: self.periods - from,
            values: self.values[from * self.space.len()..].to_vec(),
        })
    }
}

/// Demand path and supply intercept of one route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteDemand {
    pub name: String,
    /// Demand state per year, aligned with the market's years.
    pub demand_states: Vec<f64>,
    /// Route supply intercept (USD/TEU).
    pub gamma0: f64,
}

/// Everything needed to turn an industry state into static profits.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketEnvironment {
    pub years: Vec<i32>,
    pub routes: Vec<RouteDemand>,
    pub static_params: StaticParams,
    pub representative: RepresentativeTonnage,
    pub allocation: AllocationRule,
    pub regime_years: RegimeYears,
    /// When false every year is priced competitively with no cartel shift.
    pub cartel: bool,
}

impl MarketEnvironment {
    pub fn validate(&self) -> Result<()> {
        self.static_params.validate()?;
        if self.years.is_empty() {
            return Err(Error::config("market environment has no years"));
        }
        if self.routes.is_empty() {
            return Err(Error::config("market environment has no routes"));
        }
        for r in &self.routes {
            if r.demand_states.len() != self.years.len() {
                return Err(Error::consistency(format!(
                    "route {} has {} demand states for {} years",
                    r.name,
                    r.demand_states.len(),
                    self.years.len()
                )));
            }
            if !(r.gamma0 > 0.0) {
                return Err(Error::domain(format!("route {} supply intercept must be positive", r.name)));
            }
        }
        Ok(())
    }

    pub fn regime(&self, t: usize) -> Regime {
        if self.cartel {
            self.regime_years.regime(self.years[t])
        } else {
            Regime::Competitive
        }
    }

    fn route_params(&self, route: &RouteDemand) -> StaticParams {
        let mut p = self.static_params;
        p.gamma0 = route.gamma0;
        if !self.cartel {
            p.cartel_effect_pre80 = 0.0;
            p.cartel_effect_80_83 = 0.0;
        }
        p
    }

    /// Route equilibria at period `t` for the firms of `state`, largest firms first.
    /// Empty markets yield no outcomes.
    pub fn outcomes(&self, t: usize, state: &IndustryState) -> Result<Vec<EquilibriumOutcome>> {
        let levels = state.firm_levels();
        if levels.is_empty() {
            return Ok(Vec::new());
        }
        let tonnages: Vec<f64> = levels.iter().map(|&l| self.representative.tonnage(l)).collect();
        let regime = self.regime(t);
        self.routes
            .iter()
            .map(|route| {
                let snapshot = RouteSnapshot::with_levels(route.demand_states[t], tonnages.clone(), levels.clone(), self.years[t], regime)?;
                equilibrium_outcome(&snapshot, &self.route_params(route), &self.allocation)
            })
            .collect()
    }

    /// Annual profit in USD of one level-`level` firm at `state`, summed over routes.
    pub fn firm_profit_usd(&self, t: usize, state: &IndustryState, level: Level) -> Result<f64> {
        let mut roster = *state;
        if roster.count(level) == 0 {
            roster.0[level.index()] += 1;
        }
        let levels = roster.firm_levels();
        let pos = levels.iter().position(|&l| l == level).expect("roster contains the level");
        Ok(self.outcomes(t, &roster)?.iter().map(|o| o.firm_profits[pos]).sum())
    }

    /// Profit table over `space` for every year of the environment.
    pub fn profit_table(&self, space: &StateSpace) -> Result<ProfitTable> {
        self.validate()?;
        ProfitTable::from_fn(space, self.years.len(), |t, state| {
            let mut row = [0.0; N_LEVELS];
            for l in Level::all() {
                row[l.index()] = usd_to_dynamic(self.firm_profit_usd(t, state, l)?);
            }
            Ok(row)
        })
    }
}

const N_TYPES: usize = N_LEVELS + 1;

/// Equilibrium CCPs and values at one `(t, state)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateSolution {
    pub ccps: CcpRows,
    /// Integrated value per actor type (L1..L4, PE).
    pub values: [f64; N_TYPES],
    /// Expected next-period value for each own next level.
    pub ev: [f64; N_LEVELS],
    /// Sweeps used.
    pub sweeps: usize,
}

/// Solved game over all periods and states.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySolution {
    space: StateSpace,
    periods: usize,
    n_entrants: u32,
    discount: f64,
    solutions: Vec<StateSolution>,
}

impl PolicySolution {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn n_entrants(&self) -> u32 {
        self.n_entrants
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn at(&self, t: usize, s: usize) -> &StateSolution {
        &self.solutions[t * self.space.len() + s]
    }

    pub fn ccps(&self, t: usize, s: usize) -> &CcpRows {
        &self.at(t, s).ccps
    }

    /// CCP row of `actor` padded to three entries (entrants: quit, enter, 0).
    pub fn ccp_row(&self, t: usize, s: usize, actor: ActorType) -> [f64; 3] {
        let c = self.ccps(t, s);
        match actor {
            ActorType::Incumbent(l) => c.incumbent[l.index()],
            ActorType::Entrant => [c.entrant[0], c.entrant[1], 0.0],
        }
    }

    pub fn value(&self, t: usize, s: usize, actor: ActorType) -> f64 {
        self.at(t, s).values[actor.index()]
    }

    /// Expected continuation of each action of `actor`, before discounting.
    pub fn action_ev(&self, t: usize, s: usize, actor: ActorType) -> Vec<f64> {
        let ev = &self.at(t, s).ev;
        match actor {
            ActorType::Incumbent(l) => {
                let up = (l.index() + 1).min(N_LEVELS - 1);
                vec![0.0, ev[l.index()], ev[up]]
            }
            ActorType::Entrant => vec![0.0, ev[0]],
        }
    }

    /// Writes `t,state_index,actor,action,ccp,value` rows; `t` counts from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "state_index", "actor", "action", "ccp", "value"])?;
        for t in 0..self.periods {
            for s in 0..self.space.len() {
                for actor in ActorType::all() {
                    let row = self.ccp_row(t, s, actor);
                    let value = self.value(t, s, actor);
                    for (a, action) in actor.actions().iter().enumerate() {
                        w.write_record([
                            (t + 1).to_string(),
                            s.to_string(),
                            actor.label(),
                            action.code().to_string(),
                            format!("{:.17e}", row[a]),
                            format!("{:.17e}", value),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Action profiles of one symmetric group: the extended-grid offset each
/// profile induces, its multinomial coefficient and exponents.
#[derive(Clone, Debug, Default)]
struct Group {
    offsets: Vec<isize>,
    coefs: Vec<f64>,
    powers: Vec<[i32; 3]>,
    probs: Vec<f64>,
}

impl Group {
    fn reset(&mut self) {
        self.offsets.clear();
        self.coefs.clear();
        self.powers.clear();
        self.probs.clear();
    }

    fn push(&mut self, offset: isize, coef: f64, powers: [i32; 3]) {
        self.offsets.push(offset);
        self.coefs.push(coef);
        self.powers.push(powers);
        self.probs.push(0.0);
    }

    fn build_incumbents(&mut self, n: u32, level: usize, strides: &[usize; N_LEVELS]) {
        self.reset();
        for ex in 0..=n {
            for b in 0..=n - ex {
                let offset = if level + 1 < N_LEVELS {
                    -(((ex + b) as isize) * strides[level] as isize) + b as isize * strides[level + 1] as isize
                } else {
                    -((ex as isize) * strides[level] as isize)
                };
                let coef = binomial(n, ex) * binomial(n - ex, b);
                self.push(offset, coef, [ex as i32, (n - ex - b) as i32, b as i32]);
            }
        }
    }

    fn build_entrants(&mut self, n: u32, stride: usize) {
        self.reset();
        for quits in 0..=n {
            let entries = n - quits;
            self.push(
                (entries as isize) * stride as isize,
                binomial(n, quits),
                [quits as i32, entries as i32, 0],
            );
        }
    }

    fn set_row(&mut self, row: &[f64; 3]) {
        for i in 0..self.offsets.len() {
            let [a, b, c] = self.powers[i];
            self.probs[i] = self.coefs[i] * row[0].powi(a) * row[1].powi(b) * row[2].powi(c);
        }
    }
}

/// Reusable buffers for solving one period.
///
/// The joint kernel at a state is a convolution of independent group factors
/// (entrants, then levels 1 to 4); groups with nobody in them are dropped. A
/// sweep first convolves the factors forward, keeping every partial
/// distribution, and then walks back from level 4, folding each freshly updated
/// factor into a message over next-period values. Each type's expectation is
/// the pairing of the partial distribution below it with the message above it,
/// so every update sees all current rows.
#[derive(Clone, Debug)]
pub struct PeriodWorkspace {
    kernel: KernelWorkspace,
    /// `V_{t+1}(l', clamp(e))` for every extended-grid cell `e`.
    vext: Vec<[f64; N_LEVELS]>,
    /// Factors indexed by chain position: entrants at 0, level `l` at `l`.
    groups: [Group; N_TYPES],
    /// Chain positions with at least one player, ascending.
    active: Vec<usize>,
    /// `partial[k]` is the distribution of the first `k` active factors.
    partial: [Vec<(usize, f64)>; N_TYPES],
    scratch: Vec<f64>,
    seen: Vec<bool>,
    messages: [Vec<[f64; N_LEVELS]>; 2],
}

impl PeriodWorkspace {
    pub fn new(space: &StateSpace, n_entrants: u32) -> Self {
        let kernel = KernelWorkspace::new(space, n_entrants);
        let len = kernel.ext_len();
        Self {
            kernel,
            vext: vec![[0.0; N_LEVELS]; len],
            groups: Default::default(),
            active: Vec::with_capacity(N_TYPES),
            partial: Default::default(),
            scratch: vec![0.0; len],
            seen: vec![false; len],
            messages: [vec![[0.0; N_LEVELS]; len], vec![[0.0; N_LEVELS]; len]],
        }
    }

    fn load_next_values(&mut self, next_values: &[[f64; N_LEVELS]]) {
        for e in 0..self.kernel.ext_len() {
            self.vext[e] = next_values[self.kernel.clamped_index(e)];
        }
    }

    fn prepare(&mut self, state: &IndustryState, rows: &CcpRows) {
        let strides = self.kernel.ext_strides();
        let n_entrants = self.kernel.n_entrants();
        self.groups[0].build_entrants(n_entrants, strides[0]);
        for l in 0..N_LEVELS {
            self.groups[l + 1].build_incumbents(state.0[l], l, &strides);
        }
        self.active.clear();
        for c in 0..N_TYPES {
            let players = if c == 0 { n_entrants } else { state.0[c - 1] };
            if players > 0 {
                self.active.push(c);
                self.groups[c].set_row(&row_of(rows, chain_type(c)));
            }
        }
        let base = self.kernel.ext_index(state);
        self.partial[0].clear();
        self.partial[0].push((base, 1.0));
    }

    /// Number of active factors strictly below chain position `c`.
    fn rank(&self, c: usize) -> usize {
        self.active.iter().take_while(|&&a| a < c).count()
    }

    fn forward(&mut self) {
        for k in 0..self.active.len().saturating_sub(1) {
            let (done, rest) = self.partial.split_at_mut(k + 1);
            let src = &done[k];
            let dst = &mut rest[0];
            dst.clear();
            let g = &self.groups[self.active[k]];
            for &(e, p) in src.iter() {
                for (off, q) in g.offsets.iter().zip(&g.probs) {
                    let j = (e as isize + off) as usize;
                    if !self.seen[j] {
                        self.seen[j] = true;
                        dst.push((j, 0.0));
                    }
                    self.scratch[j] += p * q;
                }
            }
            for entry in dst.iter_mut() {
                entry.1 = self.scratch[entry.0];
                self.scratch[entry.0] = 0.0;
                self.seen[entry.0] = false;
            }
        }
    }

    /// Message of the active factors from rank `k` up, over next values.
    fn message(&self, k: usize) -> &[[f64; N_LEVELS]] {
        if k == self.active.len() {
            &self.vext
        } else {
            &self.messages[k % 2]
        }
    }

    /// Expected next values for a type at chain position `c`.
    fn expectation(&self, c: usize) -> [f64; N_LEVELS] {
        let k = self.rank(c);
        let n = self.active.len();
        if self.active.get(k) == Some(&c) {
            self.pair(k, Some(c), self.message(k + 1))
        } else if k < n {
            self.pair(k, None, self.message(k))
        } else if k > 0 {
            // nothing active above: close the last factor against next values directly
            self.pair(k - 1, Some(self.active[k - 1]), &self.vext)
        } else {
            self.pair(0, None, &self.vext)
        }
    }

    /// `sum_e partial[k](e) sum_i q_i above(e + off_i)`, or without a factor.
    fn pair(&self, k: usize, factor: Option<usize>, above: &[[f64; N_LEVELS]]) -> [f64; N_LEVELS] {
        let mut ev = [0.0; N_LEVELS];
        match factor {
            Some(c) => {
                let g = &self.groups[c];
                for &(e, p) in &self.partial[k] {
                    for (off, q) in g.offsets.iter().zip(&g.probs) {
                        let v = &above[(e as isize + off) as usize];
                        let w = p * q;
                        for l in 0..N_LEVELS {
                            ev[l] += w * v[l];
                        }
                    }
                }
            }
            None => {
                for &(e, p) in &self.partial[k] {
                    let v = &above[e];
                    for l in 0..N_LEVELS {
                        ev[l] += p * v[l];
                    }
                }
            }
        }
        ev
    }

    /// Folds the active factor at chain position `c` into the message above it.
    fn fold(&mut self, c: usize) {
        let k = self.rank(c);
        if self.active.get(k) != Some(&c) {
            return;
        }
        let mut dst = std::mem::take(&mut self.messages[k % 2]);
        {
            let above = self.message(k + 1);
            let g = &self.groups[c];
            for &(e, _) in &self.partial[k] {
                let mut m = [0.0; N_LEVELS];
                for (off, q) in g.offsets.iter().zip(&g.probs) {
                    let v = &above[(e as isize + off) as usize];
                    for l in 0..N_LEVELS {
                        m[l] += q * v[l];
                    }
                }
                dst[e] = m;
            }
        }
        self.messages[k % 2] = dst;
    }

    /// `EV(l')` at `state` with every type playing `rows`.
    #[cfg(test)]
    fn ev(&mut self, state: &IndustryState, rows: &CcpRows) -> [f64; N_LEVELS] {
        self.prepare(state, rows);
        self.forward();
        self.expectation(N_LEVELS)
    }
}

/// Actor type at chain position `c`.
fn chain_type(c: usize) -> usize {
    if c == 0 {
        N_LEVELS
    } else {
        c - 1
    }
}

fn type_csvfs(ty: usize, ev: &[f64; N_LEVELS], params: &DynamicParams, level4: Level4Build) -> Result<([f64; 3], usize)> {
    let actor = ActorType::all()[ty];
    let mut out = [0.0; 3];
    let actions = actor.actions();
    for (a, &action) in actions.iter().enumerate() {
        out[a] = csvf(actor, action, ev, params, level4)?;
    }
    Ok((out, actions.len()))
}

fn row_of(ccps: &CcpRows, ty: usize) -> [f64; 3] {
    if ty < N_LEVELS {
        ccps.incumbent[ty]
    } else {
        [ccps.entrant[0], ccps.entrant[1], 0.0]
    }
}

fn set_row(ccps: &mut CcpRows, ty: usize, row: [f64; 3]) {
    if ty < N_LEVELS {
        ccps.incumbent[ty] = row;
    } else {
        ccps.entrant = [row[0], row[1]];
    }
}

/// Damped CCP fixed point at one state.
///
/// Types are updated in the order L4, L3, L2, L1, PE, each against the joint
/// kernel of the current iterate; the row then moves to the midpoint of its old
/// value and the fresh logit response. The sweep gap is the summed absolute
/// change between successive logit responses.
fn solve_state(
    ws: &mut PeriodWorkspace,
    state: &IndustryState,
    profits: &[f64; N_LEVELS],
    params: &DynamicParams,
    options: &SolverOptions,
    init: &CcpRows,
) -> Result<StateSolution> {
    let sigma = params.logit_scale;
    let mut iterate = *init;
    let mut response = *init;
    let mut csvfs = [[0.0f64; 3]; N_TYPES];
    let mut ev = [0.0; N_LEVELS];
    let mut gap = f64::INFINITY;
    ws.prepare(state, &iterate);
    for sweep in 1..=options.max_iters {
        gap = 0.0;
        ws.forward();
        for c in (0..N_TYPES).rev() {
            let ty = chain_type(c);
            ev = ws.expectation(c);
            let (v, n) = type_csvfs(ty, &ev, params, options.level4_build)?;
            let p = ccp_from_csvf(&v[..n], sigma)?;
            let mut fresh = [0.0; 3];
            fresh[..n].copy_from_slice(&p);
            let prev = row_of(&response, ty);
            gap += (0..n).map(|a| (fresh[a] - prev[a]).abs()).sum::<f64>();
            set_row(&mut response, ty, fresh);
            let old = row_of(&iterate, ty);
            let mut damped = [0.0; 3];
            for a in 0..n {
                damped[a] = 0.5 * (old[a] + fresh[a]);
            }
            set_row(&mut iterate, ty, damped);
            ws.groups[c].set_row(&damped);
            if c > 0 {
                ws.fold(c);
            }
            csvfs[ty] = v;
        }
        if !gap.is_finite() {
            return Err(Error::solver(format!("non-finite CCP gap at state {state}")));
        }
        if gap < options.tolerance {
            let mut values = [0.0; N_TYPES];
            for ty in 0..N_TYPES {
                let n = if ty < N_LEVELS { 3 } else { 2 };
                let iv = integrated_value(&csvfs[ty][..n], sigma)?;
                values[ty] = if ty < N_LEVELS { profits[ty] + iv } else { iv };
            }
            return Ok(StateSolution {
                ccps: response,
                values,
                ev,
                sweeps: sweep,
            });
        }
    }
    Err(Error::solver(format!(
        "CCP iteration at state {state} did not converge in {} sweeps (last gap {gap:.3e})",
        options.max_iters
    )))
}

/// CCPs and values at period `t` for every state, given period `t + 1` values.
///
/// `next_values[s][l']` is `V_{t+1}(l', s)`; `init[s]` seeds the iteration.
pub fn solve_period_fixed_point(
    t: usize,
    profits: &ProfitTable,
    next_values: &[[f64; N_LEVELS]],
    params: &DynamicParams,
    options: &SolverOptions,
    init: &[CcpRows],
    ws: &mut PeriodWorkspace,
) -> Result<Vec<StateSolution>> {
    let space = profits.space();
    if next_values.len() != space.len() || init.len() != space.len() {
        return Err(Error::precondition("period inputs must cover every state"));
    }
    ws.load_next_values(next_values);
    (0..space.len())
        .map(|s| solve_state(ws, &space.state(s), profits.row(t, s), params, options, &init[s]))
        .collect()
}

/// Solves every period backward from the terminal year.
///
/// The last period has no choice: incumbents keep, entrants stay out, and
/// incumbent values are `pi / (1 - beta)`.
pub fn backward_induction(profits: &ProfitTable, params: &DynamicParams, options: &SolverOptions) -> Result<PolicySolution> {
    params.validate()?;
    if !(options.tolerance > 0.0) || options.max_iters == 0 {
        return Err(Error::config("solver tolerance and iteration budget must be positive"));
    }
    let space = profits.space().clone();
    let periods = profits.periods();
    let n = space.len();
    let mut solutions = vec![
        StateSolution {
            ccps: CcpRows::all_keep(),
            values: [0.0; N_TYPES],
            ev: [0.0; N_LEVELS],
            sweeps: 0,
        };
        periods * n
    ];
    let last = periods - 1;
    for s in 0..n {
        let sol = &mut solutions[last * n + s];
        for l in 0..N_LEVELS {
            sol.values[l] = terminal_value(profits.row(last, s)[l], params.discount)?;
        }
    }
    let mut ws = PeriodWorkspace::new(&space, options.n_entrants);
    let mut init = vec![CcpRows::uniform(); n];
    let mut next_values = vec![[0.0; N_LEVELS]; n];
    for t in (0..last).rev() {
        for s in 0..n {
            let v = &solutions[(t + 1) * n + s].values;
            next_values[s].copy_from_slice(&v[..N_LEVELS]);
        }
        let period = solve_period_fixed_point(t, profits, &next_values, params, options, &init, &mut ws)?;
        for (s, sol) in period.into_iter().enumerate() {
            init[s] = sol.ccps;
            solutions[t * n + s] = sol;
        }
    }
    Ok(PolicySolution {
        space,
        periods,
        n_entrants: options.n_entrants,
        discount: params.discount,
        solutions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::transition_distribution;
    use approx::assert_relative_eq;

    fn lvl(l: u8) -> Level {
        Level::new(l).unwrap()
    }

    #[test]
    fn per_period_cost_examples() {
        let p = DynamicParams::transpacific();
        let c = per_period_cost(ActorType::Incumbent(lvl(1)), Action::Build, &p).unwrap();
        assert_relative_eq!(c, 0.255, max_relative = 1e-15);
        assert_eq!(per_period_cost(ActorType::Entrant, Action::Exit, &p).unwrap(), 0.0);
        let c3 = per_period_cost(ActorType::Incumbent(lvl(3)), Action::Build, &p).unwrap();
        assert_relative_eq!(c3, 0.103 + 0.162, max_relative = 1e-15);
        assert!(per_period_cost(ActorType::Entrant, Action::Keep, &p).is_err());
        assert!(per_period_cost(ActorType::Incumbent(lvl(2)), Action::Enter, &p).is_err());
    }

    #[test]
    fn terminal_value_examples() {
        assert_relative_eq!(terminal_value(1.0, 0.9).unwrap(), 10.0, max_relative = 1e-14);
        assert_eq!(terminal_value(0.0, 0.9).unwrap(), 0.0);
        assert_relative_eq!(terminal_value(0.05, 0.96).unwrap(), 1.25, max_relative = 1e-12);
        assert!(terminal_value(1.0, 1.0).is_err());
    }

    #[test]
    fn integrated_value_examples() {
        assert_relative_eq!(integrated_value(&[0.0], 1.0).unwrap(), EULER_GAMMA, max_relative = 1e-15);
        let v = 0.7;
        let sigma = 0.3;
        assert_relative_eq!(
            integrated_value(&[v, v], sigma).unwrap(),
            v + sigma * (EULER_GAMMA + 2f64.ln()),
            max_relative = 1e-14
        );
        // large values do not overflow
        assert!(integrated_value(&[1e5, 1e5 - 1.0], 1e-3).unwrap().is_finite());
        assert!(integrated_value(&[], 1.0).is_err());
        assert!(integrated_value(&[0.0], 0.0).is_err());
    }

    #[test]
    fn ccp_examples() {
        let p = ccp_from_csvf(&[0.2, 0.2, 0.2], 0.5).unwrap();
        for x in p {
            assert_relative_eq!(x, 1.0 / 3.0, max_relative = 1e-15);
        }
        let sigma = 0.4;
        let p = ccp_from_csvf(&[0.0, sigma * 2f64.ln(), 0.0], sigma).unwrap();
        assert_relative_eq!(p[0], 0.25, max_relative = 1e-14);
        assert_relative_eq!(p[1], 0.5, max_relative = 1e-14);
        assert_relative_eq!(p[2], 0.25, max_relative = 1e-14);
        let p = ccp_from_csvf(&[0.0, 1.0], 1e-3).unwrap();
        assert!(p[1] >= 0.999);
        assert!(ccp_from_csvf(&[f64::NEG_INFINITY, f64::NEG_INFINITY], 1.0).is_err());
        let p = ccp_from_csvf(&[0.0, f64::NEG_INFINITY], 1.0).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn csvf_examples() {
        let p = DynamicParams::transpacific();
        let ev = [1.0, 2.0, 3.0, 4.0];
        for l in Level::all() {
            let x = csvf(ActorType::Incumbent(l), Action::Exit, &ev, &p, Level4Build::Zero).unwrap();
            assert_eq!(x, -p.exit_cost);
        }
        assert_eq!(
            csvf(ActorType::Incumbent(lvl(4)), Action::Build, &ev, &p, Level4Build::Zero).unwrap(),
            0.0
        );
        assert_eq!(
            csvf(ActorType::Incumbent(lvl(4)), Action::Build, &ev, &p, Level4Build::Exclude).unwrap(),
            f64::NEG_INFINITY
        );
        let b2 = csvf(ActorType::Incumbent(lvl(2)), Action::Build, &ev, &p, Level4Build::Zero).unwrap();
        assert_relative_eq!(b2, -0.103 - 0.152 + 0.9 * 3.0, max_relative = 1e-14);
        let e = csvf(ActorType::Entrant, Action::Enter, &ev, &p, Level4Build::Zero).unwrap();
        assert_relative_eq!(e, -0.055 + 0.9, max_relative = 1e-14);
    }

    #[test]
    fn expected_continuation_examples() {
        let space = StateSpace::new([1, 0, 0, 0]);
        let values = vec![[0.0; 4], [10.0, 0.0, 0.0, 0.0]];
        let point = TransitionDistribution {
            entries: vec![(IndustryState([1, 0, 0, 0]), 1.0)],
        };
        assert_eq!(expected_continuation(&point, &space, &values, lvl(1)).unwrap(), 10.0);
        let half = TransitionDistribution {
            entries: vec![(IndustryState([0, 0, 0, 0]), 0.5), (IndustryState([1, 0, 0, 0]), 0.5)],
        };
        assert_eq!(expected_continuation(&half, &space, &values, lvl(1)).unwrap(), 5.0);
    }

    #[test]
    fn workspace_ev_matches_distribution() {
        let space = StateSpace::new([3, 2, 2, 1]);
        let values: Vec<[f64; 4]> = (0..space.len())
            .map(|s| [s as f64, (s * s) as f64 * 0.01, -(s as f64), 1.0 + s as f64 * 0.5])
            .collect();
        let mut ws = PeriodWorkspace::new(&space, 2);
        ws.load_next_values(&values);
        let ccps = CcpRows {
            incumbent: [[0.2, 0.5, 0.3], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4], [0.25, 0.5, 0.25]],
            entrant: [0.7, 0.3],
        };
        for state in space.states() {
            let ev = ws.ev(&state, &ccps);
            let dist = transition_distribution(&state, &ccps, 2, &space).unwrap();
            for l in Level::all() {
                let direct = expected_continuation(&dist, &space, &values, l).unwrap();
                assert!((ev[l.index()] - direct).abs() < 1e-12 * (1.0 + direct.abs()), "{state} level {l}");
            }
        }
        let mut bare = PeriodWorkspace::new(&space, 0);
        bare.load_next_values(&values);
        let empty = IndustryState::default();
        assert_eq!(bare.ev(&empty, &ccps), values[0]);
    }

    fn zero_params() -> DynamicParams {
        DynamicParams {
            exit_cost: 0.0,
            operation_cost: 0.0,
            entry_cost: 0.0,
            invest_cost_low: 0.0,
            invest_cost_high: 0.0,
            logit_scale: 1.0,
            discount: 0.9,
        }
    }

    #[test]
    fn zero_everything_gives_uniform_ccps() {
        // with discounting, continuation values break the tie before the last decision year
        let space = StateSpace::new([2, 1, 1, 1]);
        let profits = ProfitTable::constant(&space, 4, |_| [0.0; 4]).unwrap();
        let options = SolverOptions {
            n_entrants: 1,
            ..Default::default()
        };
        let mut myopic = zero_params();
        myopic.discount = 0.0;
        for (params, periods) in [(zero_params(), 2..3), (myopic, 0..3)] {
            let sol = backward_induction(&profits, &params, &options).unwrap();
            for t in periods {
                for s in 0..space.len() {
                    // level-4 build is worth exactly zero, like every other action here
                    for row in sol.ccps(t, s).incumbent {
                        for p in row {
                            assert_relative_eq!(p, 1.0 / 3.0, max_relative = 1e-10);
                        }
                    }
                    for p in sol.ccps(t, s).entrant {
                        assert_relative_eq!(p, 0.5, max_relative = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn myopic_without_discounting() {
        let space = StateSpace::new([2, 1, 1, 0]);
        let profits = ProfitTable::constant(&space, 3, |s| [0.01 * s.total() as f64; 4]).unwrap();
        let mut params = DynamicParams::transpacific();
        params.discount = 0.0;
        let options = SolverOptions {
            n_entrants: 2,
            ..Default::default()
        };
        let sol = backward_induction(&profits, &params, &options).unwrap();
        let ev = [0.0; 4];
        for t in 0..2 {
            for s in 0..space.len() {
                for l in Level::all() {
                    let actor = ActorType::Incumbent(l);
                    let v: Vec<f64> = actor
                        .actions()
                        .iter()
                        .map(|&a| csvf(actor, a, &ev, &params, Level4Build::Zero).unwrap())
                        .collect();
                    let want = ccp_from_csvf(&v, params.logit_scale).unwrap();
                    for a in 0..3 {
                        assert_relative_eq!(sol.ccps(t, s).incumbent[l.index()][a], want[a], max_relative = 1e-12);
                    }
                }
                // first sweep is already the answer, second confirms it
                assert!(sol.at(t, s).sweeps <= 2);
            }
        }
    }

    #[test]
    fn single_incumbent_matches_single_agent_recursion() {
        // one level-1 slot and nothing above it: any move but keep empties the market
        let space = StateSpace::new([1, 0, 0, 0]);
        let pi = [0.08, 0.09, 0.1, 0.12];
        let profits = ProfitTable::constant(&space, 4, |_| pi).unwrap();
        let params = DynamicParams::transpacific();
        let options = SolverOptions {
            n_entrants: 0,
            tolerance: 1e-14,
            ..Default::default()
        };
        let sol = backward_induction(&profits, &params, &options).unwrap();
        let (beta, sigma) = (params.discount, params.logit_scale);
        let (psi, phi) = (params.exit_cost, params.operation_cost);
        let iota = [params.invest_cost_low, params.invest_cost_low, params.invest_cost_high];
        let one = space.index(&IndustryState([1, 0, 0, 0])).unwrap();
        let values_of = |ev: [f64; 4]| -> [f64; 4] {
            let mut v = [0.0; 4];
            for l in 0..4 {
                let b = if l < 3 { -phi - iota[l] + beta * ev[l + 1] } else { 0.0 };
                v[l] = pi[l] + integrated_value(&[-psi, -phi + beta * ev[l], b], sigma).unwrap();
            }
            v
        };
        let mut v_one = pi.map(|p| p / (1.0 - beta));
        let mut v_empty = v_one;
        for t in (0..3).rev() {
            let p = sol.ccps(t, one).incumbent[0];
            let mut ev = [0.0; 4];
            for l in 0..4 {
                ev[l] = p[1] * v_one[l] + (p[0] + p[2]) * v_empty[l];
            }
            let csv = [-psi, -phi + beta * ev[0], -phi - iota[0] + beta * ev[1]];
            let want = ccp_from_csvf(&csv, sigma).unwrap();
            for a in 0..3 {
                assert_relative_eq!(p[a], want[a], max_relative = 1e-9);
            }
            let vo = values_of(ev);
            let ve = values_of(v_empty);
            for l in Level::all() {
                let a = ActorType::Incumbent(l);
                assert_relative_eq!(sol.value(t, one, a), vo[l.index()], max_relative = 1e-10);
                assert_relative_eq!(sol.value(t, 0, a), ve[l.index()], max_relative = 1e-10);
            }
            v_one = vo;
            v_empty = ve;
        }
    }

    #[test]
    fn ccp_rows_sum_to_one_and_extra_sweep_is_idempotent() {
        let space = StateSpace::new([2, 2, 1, 1]);
        let profits = ProfitTable::constant(&space, 5, |s| {
            let n = s.total() as f64;
            [0.03 / (1.0 + n), 0.05 / (1.0 + n), 0.08 / (1.0 + n), 0.1 / (1.0 + n)]
        })
        .unwrap();
        let params = DynamicParams::transpacific();
        let options = SolverOptions {
            n_entrants: 2,
            ..Default::default()
        };
        let sol = backward_induction(&profits, &params, &options).unwrap();
        for t in 0..5 {
            for s in 0..space.len() {
                let c = sol.ccps(t, s);
                for row in c.incumbent {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                assert!((c.entrant.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        // restart period 0 from its own answer: the first sweep already meets the tolerance
        let n = space.len();
        let next: Vec<[f64; 4]> = (0..n)
            .map(|s| {
                let v = sol.at(1, s).values;
                [v[0], v[1], v[2], v[3]]
            })
            .collect();
        let init: Vec<CcpRows> = (0..n).map(|s| *sol.ccps(0, s)).collect();
        let mut ws = PeriodWorkspace::new(&space, 2);
        let again = solve_period_fixed_point(0, &profits, &next, &params, &options, &init, &mut ws).unwrap();
        for s in 0..n {
            let a = again[s].ccps;
            let b = sol.ccps(0, s);
            for l in 0..4 {
                for k in 0..3 {
                    assert!((a.incumbent[l][k] - b.incumbent[l][k]).abs() <= options.tolerance);
                }
            }
        }
    }

    #[test]
    fn solver_reports_non_convergence() {
        let space = StateSpace::new([2, 1, 0, 0]);
        let profits = ProfitTable::constant(&space, 3, |_| [0.05; 4]).unwrap();
        let options = SolverOptions {
            max_iters: 1,
            tolerance: 1e-15,
            n_entrants: 1,
            ..Default::default()
        };
        let err = backward_induction(&profits, &DynamicParams::transpacific(), &options).unwrap_err();
        assert!(matches!(err, Error::Solver(_)));
    }

    #[test]
    fn policy_csv_layout() {
        let space = StateSpace::new([1, 0, 0, 0]);
        let profits = ProfitTable::constant(&space, 2, |_| [0.01; 4]).unwrap();
        let options = SolverOptions {
            n_entrants: 1,
            ..Default::default()
        };
        let sol = backward_induction(&profits, &DynamicParams::transpacific(), &options).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,state_index,actor,action,ccp,value");
        // 2 periods x 2 states x (4 x 3 + 2) rows
        assert_eq!(lines.count(), 2 * 2 * 14);
    }

    #[test]
    fn parameter_vector_round_trip() {
        let p = DynamicParams::transpacific();
        let q = DynamicParams::from_vector(&p.to_vector(), p.discount);
        assert_relative_eq!(q.logit_scale, p.logit_scale, max_relative = 1e-15);
        assert_eq!(q.exit_cost, p.exit_cost);
    }
}
