//! Run configuration read from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamic_game::{DynamicParams, Level4Build, SolverOptions};
use crate::error::{Error, Result};
use crate::estimation::{names, IntervalOptions, NelderMeadOptions};
use crate::simulation::{RegimeWindow, SurplusMode};
use crate::state_space::{IndustryState, LevelCutoffs, Market, RepresentativeTonnage, N_LEVELS};
use crate::static_market::{AllocationRule, RegimeYears};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StaticSource {
    /// Parameters and route demand paths given in the config.
    #[default]
    Config,
    /// Parameters estimated from the route-year CSV.
    Data,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationChoice {
    #[default]
    TonnageShare,
    FavorSmall,
    FavorLarge,
}

impl AllocationChoice {
    pub fn rule(self) -> AllocationRule {
        match self {
            Self::TonnageShare => AllocationRule::tonnage_share(),
            Self::FavorSmall => AllocationRule::favor_small(),
            Self::FavorLarge => AllocationRule::favor_large(),
        }
    }
}

fn default_cost_shifters() -> BTreeMap<String, f64> {
    [(names::SHIP_AGE, 100.0), (names::OLD_SHARE, 2500.0), (names::SHIP_SIZE, 0.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticSection {
    pub source: StaticSource,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub gamma1: f64,
    pub cartel_effect_pre80: f64,
    pub cartel_effect_80_83: f64,
    /// Supply coefficients of the cost shifters, by route-year column name.
    pub cost_shifters: BTreeMap<String, f64>,
    pub allocation: AllocationChoice,
}

impl Default for StaticSection {
    fn default() -> Self {
        Self {
            source: StaticSource::Config,
            alpha1: -0.869,
            alpha2: 0.434,
            alpha3: 0.396,
            alpha4: 0.095,
            gamma1: 180.190,
            cartel_effect_pre80: 1106.208,
            cartel_effect_80_83: 440.663,
            cost_shifters: default_cost_shifters(),
            allocation: AllocationChoice::TonnageShare,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSection {
    pub name: String,
    /// Supply intercept, USD/TEU, with cost shifters at their means.
    pub gamma0: f64,
    /// Demand state per year; when absent it is built from `demand_effect`
    /// and the market's `log_gdp` path.
    #[serde(default)]
    pub demand_states: Option<Vec<f64>>,
    #[serde(default)]
    pub demand_effect: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub name: String,
    /// Preset market whose representative tonnages are used.
    #[serde(default)]
    pub tonnage_preset: Option<String>,
    /// Explicit log tonnage per level, overriding the preset.
    #[serde(default)]
    pub log_tonnage: Option<[f64; N_LEVELS]>,
    #[serde(default)]
    pub initial_state: [u32; N_LEVELS],
    /// Log GDP per year.
    #[serde(default)]
    pub log_gdp: Option<Vec<f64>>,
    #[serde(default, rename = "route")]
    pub routes: Vec<RouteSection>,
}

impl MarketSection {
    pub fn representative(&self) -> Result<RepresentativeTonnage> {
        if let Some(lt) = self.log_tonnage {
            return RepresentativeTonnage::new(lt);
        }
        let preset = self.tonnage_preset.as_deref().unwrap_or(&self.name);
        let market: Market = preset.parse()?;
        Ok(RepresentativeTonnage::for_market(market))
    }

    pub fn initial(&self) -> IndustryState {
        IndustryState(self.initial_state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YearsSection {
    pub start: i32,
    pub end: i32,
}

impl Default for YearsSection {
    fn default() -> Self {
        Self { start: 1973, end: 1990 }
    }
}

impl YearsSection {
    pub fn years(&self) -> Vec<i32> {
        (self.start..=self.end).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicSection {
    pub exit_cost: f64,
    pub operation_cost: f64,
    pub entry_cost: f64,
    pub invest_cost_low: f64,
    pub invest_cost_high: f64,
    pub logit_scale: f64,
    pub discount: f64,
    /// Which of `(exit, operation, entry, invest_low, invest_high, logit_scale)` are estimated.
    pub free: [bool; 6],
}

impl Default for DynamicSection {
    fn default() -> Self {
        let p = DynamicParams::transpacific();
        Self {
            exit_cost: p.exit_cost,
            operation_cost: p.operation_cost,
            entry_cost: p.entry_cost,
            invest_cost_low: p.invest_cost_low,
            invest_cost_high: p.invest_cost_high,
            logit_scale: p.logit_scale,
            discount: p.discount,
            free: [true; 6],
        }
    }
}

impl DynamicSection {
    pub fn params(&self) -> DynamicParams {
        DynamicParams {
            exit_cost: self.exit_cost,
            operation_cost: self.operation_cost,
            entry_cost: self.entry_cost,
            invest_cost_low: self.invest_cost_low,
            invest_cost_high: self.invest_cost_high,
            logit_scale: self.logit_scale,
            discount: self.discount,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub caps: [u32; N_LEVELS],
    pub tolerance: f64,
    pub max_iters: usize,
    pub n_entrants: u32,
    pub level4_build: Level4Build,
    pub cutoffs: [f64; 3],
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            caps: [4, 3, 2, 1],
            tolerance: o.tolerance,
            max_iters: o.max_iters,
            n_entrants: o.n_entrants,
            level4_build: o.level4_build,
            cutoffs: LevelCutoffs::default().boundaries,
        }
    }
}

impl SolverSection {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tolerance: self.tolerance,
            max_iters: self.max_iters,
            level4_build: self.level4_build,
            n_entrants: self.n_entrants,
        }
    }

    pub fn level_cutoffs(&self) -> Result<LevelCutoffs> {
        LevelCutoffs::new(self.cutoffs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub n: usize,
    pub seed: u64,
    /// Years simulated; defaults to the full year range.
    pub horizon: Option<usize>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 1,
            horizon: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WelfareSource {
    /// Average over the simulated ensemble.
    #[default]
    Ensemble,
    /// The observed states of the firm CSV.
    DataPath,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelfareSection {
    /// USD/TEU; defaults to ten times the highest baseline price.
    pub choke_price: Option<f64>,
    pub mode: SurplusMode,
    pub base_year: i32,
    pub source: WelfareSource,
    #[serde(rename = "window")]
    pub windows: Vec<RegimeWindow>,
}

impl Default for WelfareSection {
    fn default() -> Self {
        Self {
            choke_price: None,
            mode: SurplusMode::StaticProfit,
            base_year: 1973,
            source: WelfareSource::Ensemble,
            windows: RegimeWindow::defaults(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub nelder_mead: NelderMeadOptions,
    pub intervals: IntervalOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    /// Replicate markets per configured market.
    pub n_markets: usize,
    pub seed: u64,
    /// Standard deviation of the demand-state shock in the route panel.
    pub demand_noise: f64,
    /// Standard deviation of the supply shock, USD/TEU.
    pub supply_noise: f64,
    /// Uniform ranges of the route-year cost shifters.
    pub ship_age: [f64; 2],
    pub share_old: [f64; 2],
    pub ship_size: [f64; 2],
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            n_markets: 30,
            seed: 7,
            demand_noise: 0.05,
            supply_noise: 20.0,
            ship_age: [8.0, 16.0],
            share_old: [0.0, 0.4],
            ship_size: [1500.0, 3500.0],
        }
    }
}

/// Everything a CLI run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub route_csv: Option<PathBuf>,
    pub firm_csv: Option<PathBuf>,
    pub years: YearsSection,
    pub regimes: RegimeYears,
    #[serde(rename = "static")]
    pub static_: StaticSection,
    #[serde(rename = "market")]
    pub markets: Vec<MarketSection>,
    pub dynamic: DynamicSection,
    pub solver: SolverSection,
    pub simulation: SimulationSection,
    pub welfare: WelfareSection,
    pub estimation: EstimationSection,
    pub synthetic: SyntheticSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            route_csv: None,
            firm_csv: None,
            years: YearsSection::default(),
            regimes: RegimeYears::default(),
            static_: StaticSection::default(),
            markets: Vec::new(),
            dynamic: DynamicSection::default(),
            solver: SolverSection::default(),
            simulation: SimulationSection::default(),
            welfare: WelfareSection::default(),
            estimation: EstimationSection::default(),
            synthetic: SyntheticSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let Some(p) = cfg.route_csv.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.firm_csv.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.years.end < self.years.start {
            return Err(Error::config("years.end precedes years.start"));
        }
        let n_years = self.years.years().len();
        if n_years < 2 {
            return Err(Error::config("at least two years are needed"));
        }
        if self.regimes.weak_collusive_end < self.regimes.collusive_end {
            return Err(Error::config("regimes.weak_collusive_end precedes regimes.collusive_end"));
        }
        if self.static_.source == StaticSource::Config {
            if !(self.static_.alpha1 < 0.0) {
                return Err(Error::config("static.alpha1 must be negative"));
            }
            if !(self.static_.gamma1 > 0.0) {
                return Err(Error::config("static.gamma1 must be positive"));
            }
        }
        self.dynamic.params().validate()?;
        let s = &self.solver;
        if !(s.tolerance > 0.0) || s.max_iters == 0 {
            return Err(Error::config("solver.tolerance and solver.max_iters must be positive"));
        }
        s.level_cutoffs()?;
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.markets {
            if !seen.insert(&m.name) {
                return Err(Error::config(format!("market '{}' appears twice", m.name)));
            }
            if m.name.contains('/') {
                return Err(Error::config(format!("market name '{}' may not contain '/'", m.name)));
            }
            m.representative()?;
            if (0..N_LEVELS).any(|l| m.initial_state[l] > s.caps[l]) {
                return Err(Error::config(format!("market '{}' initial state exceeds solver.caps", m.name)));
            }
            if let Some(g) = &m.log_gdp {
                if g.len() != n_years {
                    return Err(Error::config(format!(
                        "market '{}' log_gdp has {} entries for {n_years} years",
                        m.name,
                        g.len()
                    )));
                }
            }
            if self.static_.source == StaticSource::Config && m.routes.is_empty() {
                return Err(Error::config(format!("market '{}' has no routes", m.name)));
            }
            for r in &m.routes {
                match (&r.demand_states, r.demand_effect) {
                    (Some(d), _) if d.len() != n_years => {
                        return Err(Error::config(format!(
                            "route '{}' has {} demand states for {n_years} years",
                            r.name,
                            d.len()
                        )))
                    }
                    (None, Some(_)) if m.log_gdp.is_none() => {
                        return Err(Error::config(format!("route '{}' needs the market's log_gdp path", r.name)))
                    }
                    (None, None) if self.static_.source == StaticSource::Config => {
                        return Err(Error::config(format!("route '{}' needs demand_states or demand_effect", r.name)))
                    }
                    _ => {}
                }
                if !(r.gamma0 > 0.0) {
                    return Err(Error::config(format!("route '{}' gamma0 must be positive", r.name)));
                }
            }
        }
        if let Some(h) = self.simulation.horizon {
            if h == 0 || h > n_years {
                return Err(Error::config(format!("simulation.horizon must be in 1..={n_years}")));
            }
        }
        if self.simulation.n == 0 {
            return Err(Error::config("simulation.n must be positive"));
        }
        if let Some(c) = self.welfare.choke_price {
            if !(c > 0.0) {
                return Err(Error::config("welfare.choke_price must be positive"));
            }
        }
        let sy = &self.synthetic;
        for (name, r) in [("ship_age", sy.ship_age), ("share_old", sy.share_old), ("ship_size", sy.ship_size)] {
            if !(r[0] <= r[1]) {
                return Err(Error::config(format!("synthetic.{name} range is reversed")));
            }
        }
        if !(0.0..=1.0).contains(&sy.share_old[0]) || !(0.0..=1.0).contains(&sy.share_old[1]) {
            return Err(Error::config("synthetic.share_old must lie in [0, 1]"));
        }
        if sy.demand_noise < 0.0 || sy.supply_noise < 0.0 {
            return Err(Error::config("synthetic noise scales must be non-negative"));
        }
        Ok(())
    }

    pub fn market(&self, name: &str) -> Result<&MarketSection> {
        self.markets
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::config(format!("no market named '{name}' in the config")))
    }

    /// The named market, or the only one when `name` is absent.
    pub fn select_market(&self, name: Option<&str>) -> Result<&MarketSection> {
        match name {
            Some(n) => self.market(n),
            None if self.markets.len() == 1 => Ok(&self.markets[0]),
            None => Err(Error::config("several markets configured; pass --market")),
        }
    }

    pub fn horizon(&self) -> usize {
        self.simulation.horizon.unwrap_or(self.years.years().len())
    }
}
