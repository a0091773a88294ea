//! Spot-market equilibrium for one route-year.
//!
//! Demand is constant-elasticity, `Q = exp(D) P^alpha1`. Each firm has the
//! marginal cost `gamma0 + gamma1 q / s` and the route supply relation is the
//! tonnage-weighted aggregate plus an additive cartel shift in collusive
//! years. The equilibrium price solves
//!
//! ```text
//! Delta(P) = P - gamma0 - gamma1 exp(D) P^alpha1 / S - cartel = 0
//! ```
//!
//! which has a unique root whenever `alpha1 < 0`, `gamma0 > 0`, `gamma1 > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state_space::{Level, LevelCutoffs};

/// Market-conduct regime of a year.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Conference pricing with the full cartel effect (up to 1979).
    Collusive79,
    /// Conference pricing with the weaker cartel effect (1980–1983).
    Collusive83,
    /// Post-1984 competitive pricing.
    Competitive,
}

impl Regime {
    pub fn is_collusive(self) -> bool {
        !matches!(self, Regime::Competitive)
    }
}

/// Year boundaries between regimes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeYears {
    /// Last year of the first collusive regime.
    pub collusive_end: i32,
    /// Last year of the second collusive regime.
    pub weak_collusive_end: i32,
}

impl Default for RegimeYears {
    fn default() -> Self {
        Self {
            collusive_end: 1979,
            weak_collusive_end: 1983,
        }
    }
}

impl RegimeYears {
    pub fn regime(&self, year: i32) -> Regime {
        if year <= self.collusive_end {
            Regime::Collusive79
        } else if year <= self.weak_collusive_end {
            Regime::Collusive83
        } else {
            Regime::Competitive
        }
    }
}

/// Demand, supply and cartel coefficients of one route (or a pooled set of routes).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticParams {
    /// Price elasticity of demand.
    pub alpha1: f64,
    /// Marginal cost at zero output, USD/TEU.
    pub gamma0: f64,
    /// Slope of marginal cost in output per unit of tonnage, USD/TEU.
    pub gamma1: f64,
    /// Cartel shift up to 1979, USD/TEU.
    pub cartel_effect_pre80: f64,
    /// Cartel shift 1980–1983, USD/TEU.
    pub cartel_effect_80_83: f64,
}

impl StaticParams {
    pub fn cartel_effect(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Collusive79 => self.cartel_effect_pre80,
            Regime::Collusive83 => self.cartel_effect_80_83,
            Regime::Competitive => 0.0,
        }
    }

    /// Checks the sign conditions under which the price fixed point is unique.
    /// A zero slope is accepted as the flat-supply closed form.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 < 0.0) {
            return Err(Error::precondition(format!(
                "demand elasticity must be negative, got {}",
                self.alpha1
            )));
        }
        if !(self.gamma0 > 0.0) {
            return Err(Error::precondition(format!(
                "supply intercept must be positive, got {}",
                self.gamma0
            )));
        }
        if !(self.gamma1 >= 0.0) || !self.gamma1.is_finite() {
            return Err(Error::precondition(format!(
                "supply slope must be non-negative, got {}",
                self.gamma1
            )));
        }
        Ok(())
    }
}

/// Inputs of one route-year equilibrium.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteSnapshot {
    /// Log-scale demand state.
    pub demand_state: f64,
    /// Continuous tonnage per firm, TEU.
    pub tonnages: Vec<f64>,
    /// Capacity level per firm (used by level-dependent quota rules).
    pub levels: Vec<Level>,
    pub year: i32,
    pub regime: Regime,
}

impl RouteSnapshot {
    /// Builds a snapshot, deriving each firm's level from its tonnage with the default cutoffs.
    pub fn new(demand_state: f64, tonnages: Vec<f64>, year: i32, regime: Regime) -> Result<Self> {
        let cutoffs = LevelCutoffs::default();
        let levels = tonnages.iter().map(|&s| cutoffs.discretize(s)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            demand_state,
            tonnages,
            levels,
            year,
            regime,
        })
    }

    /// Builds a snapshot with explicitly assigned levels.
    pub fn with_levels(demand_state: f64, tonnages: Vec<f64>, levels: Vec<Level>, year: i32, regime: Regime) -> Result<Self> {
        if tonnages.len() != levels.len() {
            return Err(Error::consistency(format!(
                "{} tonnages but {} levels",
                tonnages.len(),
                levels.len()
            )));
        }
        Ok(Self {
            demand_state,
            tonnages,
            levels,
            year,
            regime,
        })
    }

    pub fn total_tonnage(&self) -> f64 {
        self.tonnages.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        if self.tonnages.is_empty() {
            return Err(Error::domain("route has no firms"));
        }
        if let Some(bad) = self.tonnages.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::domain(format!("tonnage must be positive, got {bad}")));
        }
        Ok(())
    }
}

/// How the cartel splits route output among its members.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocationKind {
    /// Quota proportional to tonnage.
    TonnageShare,
    /// Levels 1–2 boosted, levels 3–4 penalized.
    FavorSmall,
    /// Levels 3–4 boosted, levels 1–2 penalized.
    FavorLarge,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationRule {
    pub kind: AllocationKind,
    pub boost: f64,
    pub penalty: f64,
}

impl Default for AllocationRule {
    fn default() -> Self {
        Self::tonnage_share()
    }
}

impl AllocationRule {
    pub fn tonnage_share() -> Self {
        Self {
            kind: AllocationKind::TonnageShare,
            boost: 1.25,
            penalty: 0.75,
        }
    }

    pub fn favor_small() -> Self {
        Self {
            kind: AllocationKind::FavorSmall,
            ..Self::tonnage_share()
        }
    }

    pub fn favor_large() -> Self {
        Self {
            kind: AllocationKind::FavorLarge,
            ..Self::tonnage_share()
        }
    }

    fn multiplier(&self, level: Level) -> f64 {
        let small = level.get() <= 2;
        match self.kind {
            AllocationKind::TonnageShare => 1.0,
            AllocationKind::FavorSmall if small => self.boost,
            AllocationKind::FavorSmall => self.penalty,
            AllocationKind::FavorLarge if small => self.penalty,
            AllocationKind::FavorLarge => self.boost,
        }
    }
}

/// Quota weights: tonnage times a level multiplier, normalized to sum to one.
pub fn allocation_weights(rule: &AllocationRule, tonnages: &[f64], levels: &[Level]) -> Result<Vec<f64>> {
    if tonnages.is_empty() {
        return Err(Error::domain("allocation requires at least one firm"));
    }
    if tonnages.len() != levels.len() {
        return Err(Error::consistency("tonnage and level lists differ in length"));
    }
    if !(rule.boost > 0.0 && rule.penalty > 0.0) {
        return Err(Error::domain("allocation multipliers must be positive"));
    }
    if let Some(bad) = tonnages.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::domain(format!("tonnage must be positive, got {bad}")));
    }
    let scaled: Vec<f64> = tonnages.iter().zip(levels).map(|(&s, &l)| s * rule.multiplier(l)).collect();
    let total: f64 = scaled.iter().sum();
    Ok(scaled.into_iter().map(|w| w / total).collect())
}

/// Route-year equilibrium and the per-firm split.
#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumOutcome {
    pub price: f64,
    pub quantity: f64,
    pub tonnages: Vec<f64>,
    pub firm_quantities: Vec<f64>,
    pub firm_profits: Vec<f64>,
}

pub fn demand_quantity(price: f64, demand_state: f64, alpha1: f64) -> Result<f64> {
    if !(price > 0.0) {
        return Err(Error::domain(format!("price must be positive, got {price}")));
    }
    Ok((demand_state + alpha1 * price.ln()).exp())
}

pub fn marginal_cost(q: f64, tonnage: f64, gamma0: f64, gamma1: f64) -> Result<f64> {
    check_cost_args(q, tonnage)?;
    Ok(gamma0 + gamma1 * q / tonnage)
}

/// Integral of marginal cost from zero, with no fixed component.
pub fn total_cost(q: f64, tonnage: f64, gamma0: f64, gamma1: f64) -> Result<f64> {
    check_cost_args(q, tonnage)?;
    Ok(gamma0 * q + gamma1 * q * q / (2.0 * tonnage))
}

fn check_cost_args(q: f64, tonnage: f64) -> Result<()> {
    if !(tonnage > 0.0) {
        return Err(Error::domain(format!("tonnage must be positive, got {tonnage}")));
    }
    if !(q >= 0.0) {
        return Err(Error::domain(format!("quantity must be non-negative, got {q}")));
    }
    Ok(())
}

/// Output at which marginal cost equals `price`. Negative below `gamma0`;
/// callers that aggregate clamp at zero.
pub fn individual_supply(price: f64, tonnage: f64, gamma0: f64, gamma1: f64) -> Result<f64> {
    if !(gamma1 > 0.0) {
        return Err(Error::domain(format!("supply slope must be positive, got {gamma1}")));
    }
    Ok((price - gamma0) / gamma1 * tonnage)
}

/// `Delta(P)`; strictly increasing in `P` under the sign conditions.
pub fn excess_price(price: f64, snapshot: &RouteSnapshot, params: &StaticParams) -> f64 {
    let total = snapshot.total_tonnage();
    price
        - params.gamma0
        - params.gamma1 * (snapshot.demand_state + params.alpha1 * price.ln()).exp() / total
        - params.cartel_effect(snapshot.regime)
}

/// `dDelta/dP`.
pub fn excess_price_slope(price: f64, snapshot: &RouteSnapshot, params: &StaticParams) -> f64 {
    let total = snapshot.total_tonnage();
    1.0 - params.gamma1 * params.alpha1 * (snapshot.demand_state + (params.alpha1 - 1.0) * price.ln()).exp() / total
}

const PRICE_FLOOR: f64 = 1e-9;

/// Solves the route price fixed point by bracketed Brent iteration in log price,
/// followed by Newton polishing in levels.
pub fn equilibrium_price(snapshot: &RouteSnapshot, params: &StaticParams) -> Result<f64> {
    params.validate()?;
    snapshot.validate()?;
    let cartel = params.cartel_effect(snapshot.regime);
    if params.gamma1 == 0.0 {
        let price = params.gamma0 + cartel;
        if !(price > 0.0) {
            return Err(Error::solver(format!("flat-supply price {price} is not positive")));
        }
        return Ok(price);
    }

    let delta = |u: f64| excess_price(u.exp(), snapshot, params);
    let lo = PRICE_FLOOR.ln();
    let f_lo = delta(lo);
    if !(f_lo < 0.0) {
        return Err(Error::solver(format!("no sign change: Delta({PRICE_FLOOR:e}) = {f_lo}")));
    }
    let ln_scale = params.gamma1.ln() + snapshot.demand_state - snapshot.total_tonnage().ln();
    let mut hi_price = params.gamma0 + cartel.max(0.0) + (ln_scale + params.alpha1 * lo).exp();
    if !hi_price.is_finite() {
        hi_price = f64::MAX.sqrt();
    }
    let mut hi = hi_price.max(2.0 * PRICE_FLOOR).ln();
    let mut f_hi = delta(hi);
    let mut grow = 0;
    while !(f_hi > 0.0) {
        grow += 1;
        if grow > 200 || f_hi.is_nan() {
            return Err(Error::solver("could not bracket the equilibrium price"));
        }
        hi += std::f64::consts::LN_2;
        f_hi = delta(hi);
    }

    let u = brent(delta, lo, hi, f_lo, f_hi, 1e-15, 500)?;
    let mut price = u.exp();
    let mut resid = excess_price(price, snapshot, params);
    for _ in 0..3 {
        let step = resid / excess_price_slope(price, snapshot, params);
        let candidate = price - step;
        if !(candidate > 0.0) {
            break;
        }
        let cand_resid = excess_price(candidate, snapshot, params);
        if cand_resid.abs() < resid.abs() {
            price = candidate;
            resid = cand_resid;
        } else {
            break;
        }
    }
    if resid.abs() >= 1e-10 * price.max(1.0) {
        return Err(Error::solver(format!("price residual {resid:e} above tolerance at P = {price}")));
    }
    Ok(price)
}

/// Brent's method on a bracket with `f(a) < 0 < f(b)`.
fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, xtol: f64, max_iter: usize) -> Result<f64> {
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Err(Error::solver("Brent iteration limit reached"))
}

/// Equilibrium price, quantity and the per-firm quantities and profits.
///
/// Collusive years split output by the quota rule; competitive years use each
/// firm's supply curve, clamped at zero.
pub fn equilibrium_outcome(snapshot: &RouteSnapshot, params: &StaticParams, rule: &AllocationRule) -> Result<EquilibriumOutcome> {
    let price = equilibrium_price(snapshot, params)?;
    let quantity = demand_quantity(price, snapshot.demand_state, params.alpha1)?;
    let firm_quantities = if snapshot.regime.is_collusive() || params.gamma1 == 0.0 {
        // flat supply has no individual supply curve; fall back to tonnage share
        let weights = if snapshot.regime.is_collusive() {
            allocation_weights(rule, &snapshot.tonnages, &snapshot.levels)?
        } else {
            allocation_weights(&AllocationRule::tonnage_share(), &snapshot.tonnages, &snapshot.levels)?
        };
        weights.into_iter().map(|w| quantity * w).collect::<Vec<_>>()
    } else {
        snapshot
            .tonnages
            .iter()
            .map(|&s| individual_supply(price, s, params.gamma0, params.gamma1).map(|q| q.max(0.0)))
            .collect::<Result<Vec<_>>>()?
    };
    let firm_profits = firm_quantities
        .iter()
        .zip(&snapshot.tonnages)
        .map(|(&q, &s)| Ok(price * q - total_cost(q, s, params.gamma0, params.gamma1)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumOutcome {
        price,
        quantity,
        tonnages: snapshot.tonnages.clone(),
        firm_quantities,
        firm_profits,
    })
}

/// Per-firm market profit: the sum of route profits over the routes of a market.
pub fn market_profit(routes: &[EquilibriumOutcome]) -> Result<Vec<f64>> {
    let first = routes.first().ok_or_else(|| Error::domain("market has no routes"))?;
    let mut total = vec![0.0; first.firm_profits.len()];
    for route in routes {
        if route.tonnages != first.tonnages {
            return Err(Error::consistency(
                "routes of a market must share the same firm roster and tonnages",
            ));
        }
        for (acc, p) in total.iter_mut().zip(&route.firm_profits) {
            *acc += p;
        }
    }
    Ok(total)
}

/// Area under the demand curve between `price` and `choke_price`.
///
/// `choke_price` may be infinite when demand is elastic (`alpha1 < -1`).
pub fn consumer_surplus(price: f64, demand_state: f64, alpha1: f64, choke_price: f64) -> Result<f64> {
    if !(price > 0.0) {
        return Err(Error::domain(format!("price must be positive, got {price}")));
    }
    if choke_price < price {
        return Err(Error::domain(format!("choke price {choke_price} below price {price}")));
    }
    if choke_price == price {
        return Ok(0.0);
    }
    let scale = demand_state.exp();
    let exponent = alpha1 + 1.0;
    if exponent.abs() < 1e-12 {
        if choke_price.is_infinite() {
            return Err(Error::domain("unit-elastic demand has unbounded surplus"));
        }
        return Ok(scale * (choke_price.ln() - price.ln()));
    }
    let upper = if choke_price.is_infinite() {
        if exponent > 0.0 {
            return Err(Error::domain("inelastic demand needs a finite choke price"));
        }
        0.0
    } else {
        choke_price.powf(exponent)
    };
    Ok(scale * (upper - price.powf(exponent)) / exponent)
}

/// Sum of static profits across firms.
pub fn producer_surplus(profits: &[f64]) -> f64 {
    profits.iter().sum()
}
