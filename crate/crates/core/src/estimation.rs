//! Static panel regressions, the dynamic likelihood and its maximization.
//!
//! The static side fits the log demand equation and the supply relation by
//! two-stage least squares with route fixed effects and route-clustered
//! standard errors. The dynamic side evaluates the likelihood of observed
//! action tallies under the CCPs of the solved game and maximizes it with a
//! Nelder–Mead outer loop around the full solve.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamic_game::{backward_induction, DynamicParams, PolicySolution, ProfitTable, SolverOptions};
use crate::error::{Error, Result};
use crate::state_space::{entrant_profile_probability, profile_probability, ActionTally, IndustryState, N_LEVELS};
use crate::static_market::{Regime, RegimeYears, StaticParams};

/// Value assigned to likelihoods that are not finite or whose solve failed.
pub const LIKELIHOOD_PENALTY: f64 = -1e12;

/// A named regressor column.
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }
}

/// First-stage diagnostics for one endogenous regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub endogenous: String,
    /// F statistic of the excluded instruments.
    pub f_stat: f64,
    pub partial_r2: f64,
    /// F below 10.
    pub weak: bool,
}

/// Coefficients, clustered standard errors and fit of a panel regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Within R² when fixed effects are absorbed.
    pub r_squared: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Recovered group intercepts, keyed by group label.
    pub fixed_effects: BTreeMap<String, f64>,
    pub first_stage: Vec<FirstStage>,
}

impl EstimateReport {
    pub fn coefficient(&self, name: &str) -> Result<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
            .ok_or_else(|| Error::config(format!("report has no coefficient '{name}'")))
    }

    pub fn std_error(&self, name: &str) -> Result<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.std_errors[i])
            .ok_or_else(|| Error::config(format!("report has no coefficient '{name}'")))
    }

    pub fn weak_instruments(&self) -> bool {
        self.first_stage.iter().any(|f| f.weak)
    }
}

/// Group labels mapped to dense ids in first-appearance order.
fn group_ids(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    let mut lookup: BTreeMap<&str, usize> = BTreeMap::new();
    let ids = labels
        .iter()
        .map(|l| {
            *lookup.entry(l.as_str()).or_insert_with(|| {
                names.push(l.clone());
                names.len() - 1
            })
        })
        .collect();
    (ids, names)
}

fn demean(values: &[f64], ids: &[usize], n_groups: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&v, &g) in values.iter().zip(ids) {
        sums[g] += v;
        counts[g] += 1;
    }
    values.iter().zip(ids).map(|(&v, &g)| v - sums[g] / counts[g] as f64).collect()
}

struct Design {
    n: usize,
    fe: Option<(Vec<usize>, Vec<String>)>,
    clusters: (Vec<usize>, usize),
}

impl Design {
    fn new(n: usize, fixed_effects: Option<&[String]>, clusters: Option<&[String]>) -> Result<Self> {
        if n == 0 {
            return Err(Error::estimation("regression has no observations"));
        }
        let fe = match fixed_effects {
            Some(labels) => {
                if labels.len() != n {
                    return Err(Error::consistency("fixed-effect labels do not match the sample"));
                }
                Some(group_ids(labels))
            }
            None => None,
        };
        let clusters = match clusters {
            Some(labels) => {
                if labels.len() != n {
                    return Err(Error::consistency("cluster labels do not match the sample"));
                }
                let (ids, names) = group_ids(labels);
                (ids, names.len())
            }
            None => ((0..n).collect(), n),
        };
        Ok(Self { n, fe, clusters })
    }

    fn transform(&self, values: &[f64]) -> Vec<f64> {
        match &self.fe {
            Some((ids, names)) => demean(values, ids, names.len()),
            None => values.to_vec(),
        }
    }

    fn matrix(&self, columns: &[&Column]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.n, columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.values.len() != self.n {
                return Err(Error::consistency(format!(
                    "column '{}' has {} rows, expected {}",
                    c.name,
                    c.values.len(),
                    self.n
                )));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::estimation(format!("column '{}' has non-finite values", c.name)));
            }
            let t = self.transform(&c.values);
            m.set_column(j, &DVector::from_vec(t));
        }
        Ok(m)
    }
}

/// Names of columns that are linear combinations of earlier ones.
fn collinear_columns(m: &DMatrix<f64>, names: &[&str]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..m.ncols() {
        let col = m.column(j).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        for b in &basis {
            let proj = b.dot(&r);
            r -= b * proj;
        }
        if norm == 0.0 || r.norm() <= 1e-9 * norm.max(1e-300) {
            bad.push(names[j].to_string());
        } else {
            let n = r.norm();
            basis.push(r / n);
        }
    }
    bad
}

fn check_rank(m: &DMatrix<f64>, names: &[&str]) -> Result<()> {
    let bad = collinear_columns(m, names);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::estimation(format!("collinear columns: {}", bad.join(", "))))
    }
}

fn invert_gram(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    (x.transpose() * x)
        .try_inverse()
        .ok_or_else(|| Error::estimation("singular moment matrix"))
}

/// Cluster-robust sandwich with the `G/(G-1) (N-1)/(N-K)` correction.
fn clustered_cov(x: &DMatrix<f64>, resid: &DVector<f64>, bread: &DMatrix<f64>, clusters: &(Vec<usize>, usize)) -> DMatrix<f64> {
    let (ids, g) = clusters;
    let k = x.ncols();
    let n = x.nrows();
    let mut scores = DMatrix::<f64>::zeros(*g, k);
    for i in 0..n {
        for j in 0..k {
            scores[(ids[i], j)] += x[(i, j)] * resid[i];
        }
    }
    let meat = scores.transpose() * &scores;
    let g = *g as f64;
    let scale = if g > 1.0 && n > k {
        g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - k as f64)
    } else {
        1.0
    };
    bread * meat * bread * scale
}

fn fixed_effect_levels(design: &Design, y: &[f64], fitted_raw: &[f64]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if let Some((ids, names)) = &design.fe {
        let mut sums = vec![0.0; names.len()];
        let mut counts = vec![0usize; names.len()];
        for i in 0..y.len() {
            sums[ids[i]] += y[i] - fitted_raw[i];
            counts[ids[i]] += 1;
        }
        for (j, name) in names.iter().enumerate() {
            out.insert(name.clone(), sums[j] / counts[j] as f64);
        }
    }
    out
}

fn raw_fit(columns: &[&Column], beta: &DVector<f64>, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| columns.iter().enumerate().map(|(j, c)| c.values[i] * beta[j]).sum())
        .collect()
}

/// Least squares with optional absorbed fixed effects and clustered errors.
///
/// Without fixed effects no intercept is added; pass a constant column if one
/// is wanted. Without clusters every observation is its own cluster.
pub fn ols_panel(
    y: &[f64],
    regressors: &[Column],
    fixed_effects: Option<&[String]>,
    clusters: Option<&[String]>,
) -> Result<EstimateReport> {
    let design = Design::new(y.len(), fixed_effects, clusters)?;
    if regressors.is_empty() {
        return Err(Error::estimation("regression has no regressors"));
    }
    let cols: Vec<&Column> = regressors.iter().collect();
    let names: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
    let x = design.matrix(&cols)?;
    check_rank(&x, &names)?;
    let yt = DVector::from_vec(design.transform(y));
    let bread = invert_gram(&x)?;
    let beta = &bread * x.transpose() * &yt;
    let resid = &yt - &x * &beta;
    let cov = clustered_cov(&x, &resid, &bread, &design.clusters);
    Ok(finish_report(&design, y, &yt, &resid, &cols, &beta, &cov, Vec::new()))
}

#[allow(clippy::too_many_arguments)]
fn finish_report(
    design: &Design,
    y: &[f64],
    yt: &DVector<f64>,
    resid: &DVector<f64>,
    cols: &[&Column],
    beta: &DVector<f64>,
    cov: &DMatrix<f64>,
    first_stage: Vec<FirstStage>,
) -> EstimateReport {
    let mean = if design.fe.is_some() { 0.0 } else { yt.mean() };
    let sst: f64 = yt.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr = resid.norm_squared();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let fitted = raw_fit(cols, beta, design.n);
    EstimateReport {
        names: cols.iter().map(|c| c.name.clone()).collect(),
        coefficients: beta.iter().copied().collect(),
        std_errors: (0..beta.len()).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        r_squared,
        n_obs: design.n,
        n_clusters: design.clusters.1,
        fixed_effects: fixed_effect_levels(design, y, &fitted),
        first_stage,
    }
}

/// Two-stage least squares with optional absorbed fixed effects and clustered errors.
///
/// `instruments` are the excluded instruments; exogenous regressors instrument
/// themselves. Coefficients are reported endogenous first, then exogenous.
pub fn tsls_panel(
    y: &[f64],
    endogenous: &[Column],
    exogenous: &[Column],
    instruments: &[Column],
    fixed_effects: Option<&[String]>,
    clusters: Option<&[String]>,
) -> Result<EstimateReport> {
    if endogenous.is_empty() {
        return Err(Error::estimation("two-stage least squares needs an endogenous regressor"));
    }
    if instruments.len() < endogenous.len() {
        return Err(Error::estimation(format!(
            "{} excluded instruments for {} endogenous regressors",
            instruments.len(),
            endogenous.len()
        )));
    }
    let design = Design::new(y.len(), fixed_effects, clusters)?;
    let regs: Vec<&Column> = endogenous.iter().chain(exogenous).collect();
    let inst: Vec<&Column> = instruments.iter().chain(exogenous).collect();
    let reg_names: Vec<&str> = regs.iter().map(|c| c.name.as_str()).collect();
    let inst_names: Vec<&str> = inst.iter().map(|c| c.name.as_str()).collect();
    let x = design.matrix(&regs)?;
    let z = design.matrix(&inst)?;
    check_rank(&x, &reg_names)?;
    check_rank(&z, &inst_names)?;
    let yt = DVector::from_vec(design.transform(y));

    let zz_inv = invert_gram(&z)?;
    let xhat = &z * (&zz_inv * (z.transpose() * &x));
    check_rank(&xhat, &reg_names).map_err(|_| Error::estimation("instruments do not identify the endogenous regressors"))?;
    let bread = invert_gram(&xhat)?;
    let beta = &bread * xhat.transpose() * &yt;
    let resid = &yt - &x * &beta;
    let cov = clustered_cov(&xhat, &resid, &bread, &design.clusters);

    let first_stage = endogenous
        .iter()
        .enumerate()
        .map(|(j, e)| first_stage_stats(&design, &x.column(j).into_owned(), &z, exogenous.len(), instruments.len(), &e.name))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish_report(&design, y, &yt, &resid, &regs, &beta, &cov, first_stage))
}

fn first_stage_stats(
    design: &Design,
    target: &DVector<f64>,
    z: &DMatrix<f64>,
    n_exog: usize,
    n_excluded: usize,
    name: &str,
) -> Result<FirstStage> {
    let ssr_of = |m: &DMatrix<f64>| -> Result<f64> {
        if m.ncols() == 0 {
            let mean = if design.fe.is_some() { 0.0 } else { target.mean() };
            return Ok(target.iter().map(|v| (v - mean).powi(2)).sum());
        }
        let b = invert_gram(m)? * m.transpose() * target;
        Ok((target - m * b).norm_squared())
    };
    let ssr_u = ssr_of(z)?;
    let restricted = z.columns(n_excluded, n_exog).into_owned();
    let ssr_r = ssr_of(&restricted)?;
    let df = design.n as f64 - z.ncols() as f64 - design.fe.as_ref().map_or(0, |f| f.1.len()) as f64;
    let f_stat = if ssr_u > 0.0 && df > 0.0 {
        ((ssr_r - ssr_u) / n_excluded as f64) / (ssr_u / df)
    } else {
        f64::INFINITY
    };
    let partial_r2 = if ssr_r > 0.0 { 1.0 - ssr_u / ssr_r } else { 0.0 };
    Ok(FirstStage {
        endogenous: name.to_string(),
        f_stat,
        partial_r2,
        weak: f_stat < 10.0,
    })
}

/// Coefficient names used by the static equations.
pub mod names {
    pub const LOG_PRICE: &str = "log_price";
    pub const LOG_GDP: &str = "log_gdp";
    pub const PRE80: &str = "regime_pre80";
    pub const Y80_83: &str = "regime_80_83";
    pub const LOAD: &str = "quantity_per_tonnage";
    pub const SHIP_AGE: &str = "avg_ship_age";
    pub const OLD_SHARE: &str = "share_old_ships";
    pub const SHIP_SIZE: &str = "avg_ship_size";
}

/// Fitted demand coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandCoefficients {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub route_effects: BTreeMap<String, f64>,
}

impl DemandCoefficients {
    pub fn from_report(report: &EstimateReport) -> Result<Self> {
        Ok(Self {
            alpha1: report.coefficient(names::LOG_PRICE)?,
            alpha2: report.coefficient(names::LOG_GDP)?,
            alpha3: report.coefficient(names::PRE80)?,
            alpha4: report.coefficient(names::Y80_83)?,
            route_effects: report.fixed_effects.clone(),
        })
    }
}

/// Log demand state of `route` in `year` given its demand shifter `x`.
pub fn demand_state(coefs: &DemandCoefficients, x: f64, year: i32, route: &str, regimes: &RegimeYears) -> Result<f64> {
    let effect = coefs
        .route_effects
        .get(route)
        .ok_or_else(|| Error::config(format!("no demand fixed effect for route '{route}'")))?;
    let dummy = match regimes.regime(year) {
        Regime::Collusive79 => coefs.alpha3,
        Regime::Collusive83 => coefs.alpha4,
        Regime::Competitive => 0.0,
    };
    Ok(coefs.alpha2 * x + dummy + effect)
}

/// Fitted supply coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplyCoefficients {
    pub gamma1: f64,
    /// Cost-shifter coefficients by name.
    pub shifters: BTreeMap<String, f64>,
    pub cartel_pre80: f64,
    pub cartel_80_83: f64,
    pub route_effects: BTreeMap<String, f64>,
}

impl SupplyCoefficients {
    pub fn from_report(report: &EstimateReport, shifter_names: &[&str]) -> Result<Self> {
        let shifters = shifter_names
            .iter()
            .map(|n| Ok((n.to_string(), report.coefficient(n)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            gamma1: report.coefficient(names::LOAD)?,
            shifters,
            cartel_pre80: report.coefficient(names::PRE80)?,
            cartel_80_83: report.coefficient(names::Y80_83)?,
            route_effects: report.fixed_effects.clone(),
        })
    }
}

/// Route supply intercept with the cost shifters folded in.
pub fn supply_intercept(coefs: &SupplyCoefficients, shifters: &BTreeMap<String, f64>, route: &str) -> Result<f64> {
    let mut value = *coefs
        .route_effects
        .get(route)
        .ok_or_else(|| Error::config(format!("no supply fixed effect for route '{route}'")))?;
    for (name, coef) in &coefs.shifters {
        let y = shifters
            .get(name)
            .ok_or_else(|| Error::config(format!("missing cost shifter '{name}' for route '{route}'")))?;
        value += coef * y;
    }
    Ok(value)
}

/// Static parameters for the equilibrium solver; `gamma0` is a placeholder to
/// be replaced per route by [`supply_intercept`].
pub fn static_params_from(demand: &DemandCoefficients, supply: &SupplyCoefficients, gamma0: f64) -> StaticParams {
    StaticParams {
        alpha1: demand.alpha1,
        gamma0,
        gamma1: supply.gamma1,
        cartel_effect_pre80: supply.cartel_pre80,
        cartel_effect_80_83: supply.cartel_80_83,
    }
}

/// One market-year: the prevailing state and the realized actions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearObservation {
    /// Period index into the profit table, from 0.
    pub t: usize,
    pub state: IndustryState,
    pub tally: ActionTally,
}

/// Observations of one market, tied to the profit table it was generated under.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketTallies {
    pub market: String,
    pub profit_index: usize,
    pub years: Vec<YearObservation>,
}

/// Everything the dynamic likelihood needs besides the parameters.
#[derive(Clone, Debug)]
pub struct DynamicData {
    pub profits: Vec<ProfitTable>,
    pub markets: Vec<MarketTallies>,
}

impl DynamicData {
    pub fn validate(&self, options: &SolverOptions) -> Result<()> {
        for m in &self.markets {
            let table = self
                .profits
                .get(m.profit_index)
                .ok_or_else(|| Error::consistency(format!("market {} refers to a missing profit table", m.market)))?;
            for obs in &m.years {
                if obs.t + 1 >= table.periods() {
                    return Err(Error::precondition(format!(
                        "market {} has an observation in period {} but decisions end at {}",
                        m.market,
                        obs.t,
                        table.periods() - 1
                    )));
                }
                if table.space().index(&obs.state).is_none() {
                    return Err(Error::precondition(format!(
                        "market {} state {} is outside the state space",
                        m.market, obs.state
                    )));
                }
                obs.tally.check_consistent(&obs.state)?;
                if obs.tally.n_entrants() != options.n_entrants {
                    return Err(Error::consistency(format!(
                        "market {} year {} has {} potential entrants, solver expects {}",
                        m.market,
                        obs.t,
                        obs.tally.n_entrants(),
                        options.n_entrants
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Log probability of one year's tally under the solved CCPs.
pub fn year_log_likelihood(policy: &PolicySolution, obs: &YearObservation) -> Result<f64> {
    let s = policy
        .space()
        .index(&obs.state)
        .ok_or_else(|| Error::precondition(format!("state {} outside the state space", obs.state)))?;
    let ccps = policy.ccps(obs.t, s);
    let tally = &obs.tally;
    let mut ll = entrant_profile_probability(tally.n_entrants(), tally.entrant_quits, &ccps.entrant).ln();
    for l in 0..N_LEVELS {
        ll += profile_probability(obs.state.0[l], tally.exits[l], tally.builds[l], &ccps.incumbent[l]).ln();
    }
    Ok(ll)
}

/// Log likelihood split by market and year.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodValue {
    pub total: f64,
    /// `per_year[m][i]` is the term of the `i`-th observation of market `m`.
    pub per_year: Vec<Vec<f64>>,
    /// True when the value was replaced by the penalty.
    pub penalized: bool,
}

impl LikelihoodValue {
    fn penalty(n_markets: usize) -> Self {
        Self {
            total: LIKELIHOOD_PENALTY,
            per_year: vec![Vec::new(); n_markets],
            penalized: true,
        }
    }

    pub fn per_market(&self) -> Vec<f64> {
        self.per_year.iter().map(|v| v.iter().sum()).collect()
    }
}

/// Likelihood of the data under already-solved policies, one per profit table.
pub fn log_likelihood_given(policies: &[PolicySolution], data: &DynamicData) -> Result<LikelihoodValue> {
    let mut per_year = Vec::with_capacity(data.markets.len());
    let mut total = 0.0;
    for m in &data.markets {
        let policy = &policies[m.profit_index];
        let terms = m
            .years
            .iter()
            .map(|obs| year_log_likelihood(policy, obs))
            .collect::<Result<Vec<_>>>()?;
        total += terms.iter().sum::<f64>();
        per_year.push(terms);
    }
    if !total.is_finite() {
        return Ok(LikelihoodValue::penalty(data.markets.len()));
    }
    Ok(LikelihoodValue {
        total,
        per_year,
        penalized: false,
    })
}

/// Solves the game at `params` and evaluates the likelihood of `data`.
///
/// Solver failures and non-finite values give [`LIKELIHOOD_PENALTY`], flagged.
pub fn dynamic_log_likelihood(params: &DynamicParams, data: &DynamicData, options: &SolverOptions) -> Result<LikelihoodValue> {
    data.validate(options)?;
    if params.validate().is_err() {
        return Ok(LikelihoodValue::penalty(data.markets.len()));
    }
    let mut policies = Vec::with_capacity(data.profits.len());
    for table in &data.profits {
        match backward_induction(table, params, options) {
            Ok(p) => policies.push(p),
            Err(e) if e.is_numerical() => return Ok(LikelihoodValue::penalty(data.markets.len())),
            Err(e) => return Err(e),
        }
    }
    log_likelihood_given(&policies, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadOptions {
    /// Initial step as a fraction of each coordinate.
    pub step_fraction: f64,
    /// Smallest initial step.
    pub min_step: f64,
    /// Stop when the simplex diameter is below this...
    pub x_tolerance: f64,
    /// ...and the spread of vertex values is below this.
    pub f_tolerance: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            step_fraction: 0.1,
            min_step: 0.01,
            x_tolerance: 1e-5,
            f_tolerance: 1e-7,
            max_evals: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
    /// Best value after each iteration, with the evaluation count.
    pub trace: Vec<(usize, f64)>,
}

/// Minimizes `f` with the Nelder–Mead simplex method.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], options: &NelderMeadOptions) -> NelderMeadResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += (options.step_fraction * x0[i].abs()).max(options.min_step);
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let centroid = |s: &[(Vec<f64>, f64)]| -> Vec<f64> {
        let mut c = vec![0.0; n];
        for (x, _) in &s[..n] {
            for j in 0..n {
                c[j] += x[j] / n as f64;
            }
        }
        c
    };
    let along = |c: &[f64], x: &[f64], t: f64| -> Vec<f64> { c.iter().zip(x).map(|(ci, xi)| ci + t * (xi - ci)).collect() };
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push((evals, simplex[0].1));
        let spread = simplex[n].1 - simplex[0].1;
        let mut diameter: f64 = 0.0;
        for i in 0..=n {
            for j in i + 1..=n {
                let d = simplex[i]
                    .0
                    .iter()
                    .zip(&simplex[j].0)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                diameter = diameter.max(d);
            }
        }
        if diameter < options.x_tolerance && spread.abs() < options.f_tolerance {
            converged = true;
            break;
        }
        if evals >= options.max_evals {
            break;
        }
        let c = centroid(&simplex);
        let worst = simplex[n].clone();
        let xr = along(&c, &worst.0, -1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(&c, &worst.0, -2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(&c, &worst.0, -0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(&c, &worst.0, 0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = along(&best, &vertex.0, 0.5);
            let v = eval(&x, &mut evals);
            *vertex = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    NelderMeadResult {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        evals,
        converged,
        trace,
    }
}

/// Outcome of the dynamic maximum-likelihood fit.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicEstimate {
    pub params: DynamicParams,
    pub log_likelihood: f64,
    pub evals: usize,
    pub converged: bool,
    /// Evaluation count and best log likelihood after each simplex iteration.
    pub trace: Vec<(usize, f64)>,
}

/// Which of `(psi, phi, kappa, iota1, iota2, sigma)` are estimated.
pub type FreeMask = [bool; 6];

pub const ALL_FREE: FreeMask = [true; 6];

/// Parameter names in estimation order.
pub const PARAM_NAMES: [&str; 6] = [
    "exit_cost",
    "operation_cost",
    "entry_cost",
    "invest_cost_low",
    "invest_cost_high",
    "logit_scale",
];

/// Nested fixed point maximum likelihood over the free coordinates of
/// `(psi, phi, kappa, iota1, iota2, ln sigma)`, holding the rest and beta at `init`.
pub fn estimate_dynamic(
    data: &DynamicData,
    init: &DynamicParams,
    free: &FreeMask,
    solver: &SolverOptions,
    nm: &NelderMeadOptions,
) -> Result<DynamicEstimate> {
    data.validate(solver)?;
    init.validate()?;
    let base = init.to_vector();
    let idx: Vec<usize> = (0..6).filter(|&i| free[i]).collect();
    if idx.is_empty() {
        return Err(Error::config("no free dynamic parameters"));
    }
    let assemble = |z: &[f64]| {
        let mut v = base;
        for (k, &i) in idx.iter().enumerate() {
            v[i] = z[k];
        }
        DynamicParams::from_vector(&v, init.discount)
    };
    let mut failure: Option<Error> = None;
    let x0: Vec<f64> = idx.iter().map(|&i| base[i]).collect();
    let result = nelder_mead(
        |z| match dynamic_log_likelihood(&assemble(z), data, solver) {
            Ok(v) => -v.total,
            Err(e) => {
                failure.get_or_insert(e);
                -LIKELIHOOD_PENALTY
            }
        },
        &x0,
        nm,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(DynamicEstimate {
        params: assemble(&result.x),
        log_likelihood: -result.value,
        evals: result.evals,
        converged: result.converged,
        trace: result.trace.into_iter().map(|(e, v)| (e, -v)).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntervalOptions {
    /// Confidence level.
    pub level: f64,
    /// Grid half-width as a fraction of the point estimate.
    pub half_width: f64,
    /// Smallest grid half-width.
    pub min_half_width: f64,
    /// Number of grid points, odd so the estimate is on the grid.
    pub points: usize,
    /// How the other parameters move while one is varied.
    pub nuisance: Nuisance,
    /// Relative finite-difference step for the ridge Hessian.
    pub hessian_step: f64,
}

/// Treatment of the parameters not being varied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nuisance {
    /// Held at the estimate.
    Fixed,
    /// Moved along the ridge of the local quadratic fit, an approximate profile.
    Ridge,
}

impl Default for IntervalOptions {
    fn default() -> Self {
        Self {
            level: 0.90,
            half_width: 0.5,
            min_half_width: 0.01,
            points: 11,
            nuisance: Nuisance::Fixed,
            hessian_step: 0.02,
        }
    }
}

/// A grid-based likelihood-ratio interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub grid: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
    /// No grid point other than the estimate was accepted.
    pub degenerate: bool,
    /// The accepted span reaches the lower or upper end of the grid.
    pub open_below: bool,
    pub open_above: bool,
    /// The other parameters followed the ridge rather than staying fixed.
    #[serde(default)]
    pub profiled: bool,
}

impl LrInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// Chi-square(1) critical value at `level`.
pub fn chi2_critical(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("confidence level must be in (0, 1), got {level}")));
    }
    let chi = ChiSquared::new(1.0).map_err(|e| Error::config(e.to_string()))?;
    Ok(chi.inverse_cdf(level))
}

/// Inverts the likelihood-ratio test on a grid centered at `estimate`.
///
/// A grid point is accepted when `2 (ll_hat - ll) <= critical`. Each end of
/// the interval lies between the last accepted point of the contiguous run
/// around the estimate and the first rejected one, placed where the signed
/// root of the statistic, interpolated linearly, reaches the critical root.
/// For a quadratic log-likelihood this is exact. An end that runs off the
/// grid stops at the last grid point.
pub fn lr_interval(estimate: f64, ll_hat: f64, mut ll: impl FnMut(f64) -> Result<f64>, options: &IntervalOptions) -> Result<LrInterval> {
    if options.points < 3 || options.points % 2 == 0 {
        return Err(Error::config("interval grid needs an odd number of at least 3 points"));
    }
    let critical = chi2_critical(options.level)?;
    let half = (options.half_width * estimate.abs()).max(options.min_half_width);
    let mid = options.points / 2;
    let grid: Vec<f64> = (0..options.points)
        .map(|j| estimate + half * (j as f64 - mid as f64) / mid as f64)
        .collect();
    let mut lls = Vec::with_capacity(grid.len());
    for (j, &g) in grid.iter().enumerate() {
        lls.push(if j == mid { ll_hat } else { ll(g)? });
    }
    let root = |j: usize| (2.0 * (ll_hat - lls[j])).max(0.0).sqrt();
    let accepted = |j: usize| 2.0 * (ll_hat - lls[j]) <= critical;
    let cut = critical.sqrt();
    let end = |inner: usize, outer: usize| {
        let (ri, ro) = (root(inner), root(outer));
        let w = if ro > ri { ((cut - ri) / (ro - ri)).clamp(0.0, 1.0) } else { 0.0 };
        grid[inner] + w * (grid[outer] - grid[inner])
    };
    let mut a = mid;
    while a > 0 && accepted(a - 1) {
        a -= 1;
    }
    let mut b = mid;
    while b + 1 < grid.len() && accepted(b + 1) {
        b += 1;
    }
    Ok(LrInterval {
        estimate,
        lo: if a == 0 { grid[0] } else { end(a, a - 1) },
        hi: if b + 1 == grid.len() { grid[b] } else { end(b, b + 1) },
        degenerate: a == mid && b == mid,
        open_below: a == 0,
        open_above: b + 1 == grid.len(),
        grid,
        log_likelihoods: lls,
        profiled: false,
    })
}

/// Central finite-difference Hessian of `f` at `center`, with steps
/// `rel_step * max(|x_i|, 0.05)`.
pub fn numerical_hessian<F>(center: &[f64], f_center: f64, rel_step: f64, mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = center.len();
    let h: Vec<f64> = center.iter().map(|x| rel_step * x.abs().max(0.05)).collect();
    let mut eval = |moves: &[(usize, f64)]| {
        let mut x = center.to_vec();
        for &(i, s) in moves {
            x[i] += s * h[i];
        }
        f(&x)
    };
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let (up, down) = (eval(&[(i, 1.0)])?, eval(&[(i, -1.0)])?);
        hess[(i, i)] = (up - 2.0 * f_center + down) / (h[i] * h[i]);
        for j in 0..i {
            let v = eval(&[(i, 1.0), (j, 1.0)])? - eval(&[(i, 1.0), (j, -1.0)])? - eval(&[(i, -1.0), (j, 1.0)])?
                + eval(&[(i, -1.0), (j, -1.0)])?;
            hess[(i, j)] = v / (4.0 * h[i] * h[j]);
            hess[(j, i)] = hess[(i, j)];
        }
    }
    if hess.iter().all(|v| v.is_finite()) {
        Ok(hess)
    } else {
        Err(Error::Estimation("likelihood Hessian is not finite at the estimate".into()))
    }
}

/// Direction along which the other coordinates maximize the local quadratic
/// as coordinate `i` moves by one unit. `None` if that block is not negative definite.
fn ridge_direction(hess: &DMatrix<f64>, i: usize) -> Option<DVector<f64>> {
    let n = hess.nrows();
    let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let mut d = DVector::zeros(n);
    d[i] = 1.0;
    if rest.is_empty() {
        return Some(d);
    }
    let neg_block = DMatrix::from_fn(rest.len(), rest.len(), |a, b| -hess[(rest[a], rest[b])]);
    let cross = DVector::from_fn(rest.len(), |a, _| hess[(rest[a], i)]);
    // -H_rr d_r = H_ri
    let sol = neg_block.cholesky()?.solve(&cross);
    for (a, &j) in rest.iter().enumerate() {
        d[j] = sol[a];
    }
    Some(d)
}

/// Likelihood-ratio intervals for every coordinate of `center`. With
/// [`Nuisance::Ridge`] the other coordinates follow the quadratic ridge;
/// the likelihood itself is always evaluated exactly.
pub fn profile_intervals<F>(center: &[f64], ll_hat: f64, mut f: F, options: &IntervalOptions) -> Result<Vec<LrInterval>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = center.len();
    let directions: Vec<Option<DVector<f64>>> = match options.nuisance {
        Nuisance::Fixed => vec![None; n],
        Nuisance::Ridge => {
            let hess = numerical_hessian(center, ll_hat, options.hessian_step, &mut f)?;
            (0..n).map(|i| ridge_direction(&hess, i)).collect()
        }
    };
    (0..n)
        .map(|i| {
            let dir = directions[i].clone();
            let mut iv = lr_interval(
                center[i],
                ll_hat,
                |value| {
                    let step = value - center[i];
                    let x: Vec<f64> = match &dir {
                        Some(d) => center.iter().zip(d.iter()).map(|(c, d)| c + step * d).collect(),
                        None => {
                            let mut x = center.to_vec();
                            x[i] = value;
                            x
                        }
                    };
                    f(&x)
                },
                options,
            )?;
            iv.profiled = dir.is_some() && n > 1;
            Ok(iv)
        })
        .collect()
}

/// Likelihood-ratio intervals for `(psi, phi, kappa, iota1, iota2, sigma)`.
pub fn lr_confidence_intervals(
    estimate: &DynamicParams,
    ll_hat: f64,
    data: &DynamicData,
    solver: &SolverOptions,
    options: &IntervalOptions,
) -> Result<Vec<LrInterval>> {
    let center = [
        estimate.exit_cost,
        estimate.operation_cost,
        estimate.entry_cost,
        estimate.invest_cost_low,
        estimate.invest_cost_high,
        estimate.logit_scale,
    ];
    profile_intervals(
        &center,
        ll_hat,
        |x| {
            let p = DynamicParams {
                exit_cost: x[0],
                operation_cost: x[1],
                entry_cost: x[2],
                invest_cost_low: x[3],
                invest_cost_high: x[4],
                logit_scale: x[5],
                ..*estimate
            };
            Ok(dynamic_log_likelihood(&p, data, solver)?.total)
        },
        options,
    )
}
