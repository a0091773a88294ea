//! Capacity levels, the industry state space and its transition kernel.
//!
//! An industry state counts incumbents per capacity level. Within a year each
//! level-`l` incumbent exits (`x`), keeps (`k`) or builds (`b`), and each of the
//! potential entrants quits or enters. The next state follows the
//! count-conserving rules
//!
//! ```text
//! N1' = N1 + E  - B1 - EX1
//! N2' = N2 + B1 - B2 - EX2
//! N3' = N3 + B2 - B3 - EX3
//! N4' = N4 + B3      - EX4
//! ```
//!
//! with every coordinate clamped to its cap afterwards.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of capacity levels.
pub const N_LEVELS: usize = 4;

/// Capacity level of an incumbent, 1 (smallest) to 4 (largest).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Level(u8);

impl Level {
    pub fn new(level: u8) -> Result<Self> {
        if (1..=N_LEVELS as u8).contains(&level) {
            Ok(Level(level))
        } else {
            Err(Error::domain(format!("level must be in 1..=4, got {level}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position, for indexing per-level arrays.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < N_LEVELS, "level index out of range");
        Level(index as u8 + 1)
    }

    pub fn all() -> [Level; N_LEVELS] {
        [Level(1), Level(2), Level(3), Level(4)]
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Upper log-tonnage bounds of levels 1, 2 and 3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCutoffs {
    pub boundaries: [f64; 3],
}

impl Default for LevelCutoffs {
    fn default() -> Self {
        Self {
            boundaries: [8.5, 9.5, 10.5],
        }
    }
}

impl LevelCutoffs {
    pub fn new(boundaries: [f64; 3]) -> Result<Self> {
        if !(boundaries[0] < boundaries[1] && boundaries[1] < boundaries[2]) {
            return Err(Error::config("level cutoffs must be strictly increasing"));
        }
        Ok(Self { boundaries })
    }

    /// Level of a firm with `tonnage` TEU; each bound is inclusive from below.
    pub fn discretize(&self, tonnage: f64) -> Result<Level> {
        if !(tonnage > 0.0) {
            return Err(Error::domain(format!("tonnage must be positive, got {tonnage}")));
        }
        let level = self.boundaries.iter().position(|b| tonnage <= b.exp()).map_or(4, |i| i as u8 + 1);
        Ok(Level(level))
    }

    /// A log tonnage strictly inside the interval of `level`.
    pub fn interior_log_tonnage(&self, level: Level) -> f64 {
        let b = self.boundaries;
        match level.get() {
            1 => b[0] - 0.5,
            2 => 0.5 * (b[0] + b[1]),
            3 => 0.5 * (b[1] + b[2]),
            _ => b[2] + 0.5,
        }
    }
}

/// Conference markets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Market {
    AsiaEurope,
    Transpacific,
    Transatlantic,
}

impl Market {
    pub fn all() -> [Market; 3] {
        [Market::Transpacific, Market::Transatlantic, Market::AsiaEurope]
    }

    pub fn name(self) -> &'static str {
        match self {
            Market::AsiaEurope => "asia-europe",
            Market::Transpacific => "transpacific",
            Market::Transatlantic => "transatlantic",
        }
    }
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Market {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "asia-europe" | "asia-eur" | "asiaeurope" => Ok(Market::AsiaEurope),
            "transpacific" => Ok(Market::Transpacific),
            "transatlantic" => Ok(Market::Transatlantic),
            other => Err(Error::config(format!("unknown market '{other}'"))),
        }
    }
}

/// Log tonnage assigned to a firm of each level when computing static profits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeTonnage {
    pub log_tonnage: [f64; N_LEVELS],
}

impl RepresentativeTonnage {
    pub fn for_market(market: Market) -> Self {
        let log_tonnage = match market {
            Market::AsiaEurope => [8.0, 9.0, 10.0, 10.5],
            Market::Transpacific => [8.0, 8.5, 9.5, 10.5],
            Market::Transatlantic => [7.2, 9.2, 10.1, 12.1],
        };
        Self { log_tonnage }
    }

    pub fn new(log_tonnage: [f64; N_LEVELS]) -> Result<Self> {
        if log_tonnage.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("representative tonnages must be nondecreasing in level"));
        }
        Ok(Self { log_tonnage })
    }

    /// Tonnage in TEU.
    pub fn tonnage(&self, level: Level) -> f64 {
        self.log_tonnage[level.index()].exp()
    }
}

/// Representative TEU of a level-`level` firm in `market`.
pub fn representative_tonnage(level: u8, market: &str) -> Result<f64> {
    let market: Market = market.parse()?;
    Ok(RepresentativeTonnage::for_market(market).tonnage(Level::new(level)?))
}

/// Firm counts per level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndustryState(pub [u32; N_LEVELS]);

impl IndustryState {
    pub fn new(counts: [u32; N_LEVELS]) -> Self {
        Self(counts)
    }

    pub fn count(&self, level: Level) -> u32 {
        self.0[level.index()]
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Levels of every firm, largest first.
    pub fn firm_levels(&self) -> Vec<Level> {
        Level::all()
            .iter()
            .rev()
            .flat_map(|&l| std::iter::repeat_n(l, self.count(l) as usize))
            .collect()
    }
}

impl fmt::Display for IndustryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "({a},{b},{c},{d})")
    }
}

/// The enumerated set of states with `N^l <= caps[l]`, ordered lexicographically
/// on `(N1, N2, N3, N4)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateSpace {
    caps: [u32; N_LEVELS],
    strides: [usize; N_LEVELS],
    len: usize,
}

impl StateSpace {
    pub fn new(caps: [u32; N_LEVELS]) -> Self {
        let mut strides = [1usize; N_LEVELS];
        for l in (0..N_LEVELS - 1).rev() {
            strides[l] = strides[l + 1] * (caps[l + 1] as usize + 1);
        }
        let len = strides[0] * (caps[0] as usize + 1);
        Self { caps, strides, len }
    }

    pub fn caps(&self) -> [u32; N_LEVELS] {
        self.caps
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, state: &IndustryState) -> bool {
        state.0.iter().zip(&self.caps).all(|(n, c)| n <= c)
    }

    pub fn index(&self, state: &IndustryState) -> Option<usize> {
        if !self.contains(state) {
            return None;
        }
        Some(state.0.iter().zip(&self.strides).map(|(&n, &s)| n as usize * s).sum())
    }

    pub fn state(&self, index: usize) -> IndustryState {
        assert!(index < self.len, "state index out of range");
        let mut rest = index;
        let mut counts = [0u32; N_LEVELS];
        for l in 0..N_LEVELS {
            counts[l] = (rest / self.strides[l]) as u32;
            rest %= self.strides[l];
        }
        IndustryState(counts)
    }

    pub fn states(&self) -> impl Iterator<Item = IndustryState> + '_ {
        (0..self.len).map(|i| self.state(i))
    }

    /// Clamps every coordinate to its cap.
    pub fn clamp(&self, state: IndustryState) -> IndustryState {
        let mut counts = state.0;
        for (n, c) in counts.iter_mut().zip(&self.caps) {
            *n = (*n).min(*c);
        }
        IndustryState(counts)
    }
}

/// Lexicographic enumeration of all states under `caps`.
pub fn enumerate_states(caps: [u32; N_LEVELS]) -> Vec<IndustryState> {
    StateSpace::new(caps).states().collect()
}

/// Realized actions of one market-year.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTally {
    pub exits: [u32; N_LEVELS],
    pub builds: [u32; N_LEVELS],
    pub keeps: [u32; N_LEVELS],
    pub entrant_quits: u32,
    pub entries: u32,
}

impl ActionTally {
    /// Everyone keeps; every potential entrant quits.
    pub fn all_keep(state: &IndustryState, n_entrants: u32) -> Self {
        Self {
            keeps: state.0,
            entrant_quits: n_entrants,
            ..Self::default()
        }
    }

    pub fn n_entrants(&self) -> u32 {
        self.entrant_quits + self.entries
    }

    /// Incumbent counts implied by the tally.
    pub fn incumbents(&self) -> IndustryState {
        let mut n = [0u32; N_LEVELS];
        for l in 0..N_LEVELS {
            n[l] = self.exits[l] + self.builds[l] + self.keeps[l];
        }
        IndustryState(n)
    }

    pub fn check_consistent(&self, state: &IndustryState) -> Result<()> {
        if self.incumbents() != *state {
            return Err(Error::precondition(format!(
                "tally covers incumbents {} but state is {}",
                self.incumbents(),
                state
            )));
        }
        Ok(())
    }
}

/// Next state from a realized tally, clamped to `caps`.
pub fn apply_transition(state: &IndustryState, tally: &ActionTally, caps: [u32; N_LEVELS]) -> Result<IndustryState> {
    tally.check_consistent(state)?;
    let n = state.0;
    let ex = tally.exits;
    let b = tally.builds;
    // counts are consistent so each subtraction stays non-negative
    let next = [
        n[0] + tally.entries - b[0] - ex[0],
        n[1] + b[0] - b[1] - ex[1],
        n[2] + b[1] - b[2] - ex[2],
        n[3] + b[2] - ex[3],
    ];
    Ok(StateSpace::new(caps).clamp(IndustryState(next)))
}

/// CCP rows of every actor type at one state.
///
/// Incumbent rows are ordered `(exit, keep, build)`; the entrant row is `(quit, enter)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcpRows {
    pub incumbent: [[f64; 3]; N_LEVELS],
    pub entrant: [f64; 2],
}

impl CcpRows {
    pub fn uniform() -> Self {
        Self {
            incumbent: [[1.0 / 3.0; 3]; N_LEVELS],
            entrant: [0.5; 2],
        }
    }

    /// Everyone keeps, every entrant quits.
    pub fn all_keep() -> Self {
        Self {
            incumbent: [[0.0, 1.0, 0.0]; N_LEVELS],
            entrant: [1.0, 0.0],
        }
    }
}

pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c.round()
}

/// Probability that `ex` of `n` symmetric incumbents exit and `b` build.
pub fn profile_probability(n: u32, ex: u32, b: u32, row: &[f64; 3]) -> f64 {
    if ex + b > n {
        return 0.0;
    }
    let keep = n - ex - b;
    binomial(n, ex) * binomial(n - ex, b) * row[0].powi(ex as i32) * row[1].powi(keep as i32) * row[2].powi(b as i32)
}

/// Probability that `quits` of `n` potential entrants quit and the rest enter.
pub fn entrant_profile_probability(n: u32, quits: u32, row: &[f64; 2]) -> f64 {
    if quits > n {
        return 0.0;
    }
    binomial(n, quits) * row[0].powi(quits as i32) * row[1].powi((n - quits) as i32)
}

/// Distribution of `(exits, builds)` among `n` level-`l` incumbents.
pub fn level_profile_prob(n: u32, row: &[f64; 3]) -> BTreeMap<(u32, u32), f64> {
    let mut out = BTreeMap::new();
    for ex in 0..=n {
        for b in 0..=n - ex {
            out.insert((ex, b), profile_probability(n, ex, b, row));
        }
    }
    out
}

/// Distribution of `(quits, entries)` among `n` potential entrants.
pub fn entrant_profile_prob(n: u32, row: &[f64; 2]) -> BTreeMap<(u32, u32), f64> {
    (0..=n).map(|q| ((q, n - q), entrant_profile_probability(n, q, row))).collect()
}

/// Next-period state distribution as `(state, probability)` pairs in state order.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDistribution {
    pub entries: Vec<(IndustryState, f64)>,
}

impl TransitionDistribution {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn prob(&self, state: &IndustryState) -> f64 {
        self.entries.iter().find(|(s, _)| s == state).map_or(0.0, |(_, p)| *p)
    }
}

/// Next-state distribution at `state` when every actor type plays `ccps`.
pub fn transition_distribution(
    state: &IndustryState,
    ccps: &CcpRows,
    n_entrants: u32,
    space: &StateSpace,
) -> Result<TransitionDistribution> {
    if !space.contains(state) {
        return Err(Error::domain(format!("state {state} outside the state space")));
    }
    let mut kernel = KernelWorkspace::new(space, n_entrants);
    let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
    let outcomes = kernel.compute(state, ccps).to_vec();
    for (ext, p) in outcomes {
        *merged.entry(kernel.clamped_index(ext)).or_default() += p;
    }
    Ok(TransitionDistribution {
        entries: merged.into_iter().map(|(i, p)| (space.state(i), p)).collect(),
    })
}

/// Reusable buffers for building transition kernels.
///
/// Next states are first accumulated on an extended grid large enough to hold
/// every unclamped successor, so per-group contributions are plain index
/// offsets; the clamp is applied when mapping back to the state space.
#[derive(Clone, Debug)]
pub struct KernelWorkspace {
    n_entrants: u32,
    ext_strides: [usize; N_LEVELS],
    ext_to_state: Vec<usize>,
    dense: Vec<f64>,
    seen: Vec<bool>,
    current: Vec<(usize, f64)>,
    next: Vec<(usize, f64)>,
    offsets: Vec<(isize, f64)>,
}

impl KernelWorkspace {
    pub fn new(space: &StateSpace, n_entrants: u32) -> Self {
        let caps = space.caps();
        let dims = [
            caps[0] + n_entrants + 1,
            caps[1] + caps[0] + 1,
            caps[2] + caps[1] + 1,
            caps[3] + caps[2] + 1,
        ];
        let mut ext_strides = [1usize; N_LEVELS];
        for l in (0..N_LEVELS - 1).rev() {
            ext_strides[l] = ext_strides[l + 1] * dims[l + 1] as usize;
        }
        let ext_len = ext_strides[0] * dims[0] as usize;
        let mut ext_to_state = Vec::with_capacity(ext_len);
        for e in 0..ext_len {
            let mut rest = e;
            let mut counts = [0u32; N_LEVELS];
            for l in 0..N_LEVELS {
                counts[l] = (rest / ext_strides[l]) as u32;
                rest %= ext_strides[l];
            }
            let clamped = space.clamp(IndustryState(counts));
            ext_to_state.push(space.index(&clamped).expect("clamped state inside space"));
        }
        Self {
            n_entrants,
            ext_strides,
            dense: vec![0.0; ext_len],
            seen: vec![false; ext_len],
            ext_to_state,
            current: Vec::new(),
            next: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn n_entrants(&self) -> u32 {
        self.n_entrants
    }

    /// Number of cells in the extended grid.
    pub fn ext_len(&self) -> usize {
        self.ext_to_state.len()
    }

    /// Strides of the extended grid, level 1 most significant.
    pub fn ext_strides(&self) -> [usize; N_LEVELS] {
        self.ext_strides
    }

    /// Extended-grid cell of an in-space state.
    pub fn ext_index(&self, state: &IndustryState) -> usize {
        state.0.iter().zip(&self.ext_strides).map(|(&n, &st)| n as usize * st).sum()
    }

    /// State-space index of an extended-grid cell after clamping.
    pub fn clamped_index(&self, ext: usize) -> usize {
        self.ext_to_state[ext]
    }

    /// Kernel at `state` as `(extended index, probability)` pairs; zero-probability
    /// successors are omitted.
    pub fn compute(&mut self, state: &IndustryState, ccps: &CcpRows) -> &[(usize, f64)] {
        let s = self.ext_strides;
        let base: usize = state.0.iter().zip(&s).map(|(&n, &st)| n as usize * st).sum();
        self.current.clear();
        self.current.push((base, 1.0));

        if self.n_entrants > 0 {
            self.offsets.clear();
            for quits in 0..=self.n_entrants {
                let p = entrant_profile_probability(self.n_entrants, quits, &ccps.entrant);
                if p > 0.0 {
                    let entries = (self.n_entrants - quits) as isize;
                    self.offsets.push((entries * s[0] as isize, p));
                }
            }
            self.convolve();
        }
        for l in 0..N_LEVELS {
            let n = state.0[l];
            if n == 0 {
                continue;
            }
            self.offsets.clear();
            let row = &ccps.incumbent[l];
            for ex in 0..=n {
                for b in 0..=n - ex {
                    let p = profile_probability(n, ex, b, row);
                    if p > 0.0 {
                        let delta = if l + 1 < N_LEVELS {
                            -(((ex + b) as isize) * s[l] as isize) + b as isize * s[l + 1] as isize
                        } else {
                            // top-level builders stay put
                            -((ex as isize) * s[l] as isize)
                        };
                        self.offsets.push((delta, p));
                    }
                }
            }
            self.convolve();
        }
        &self.current
    }

    fn convolve(&mut self) {
        self.next.clear();
        for &(idx, p) in &self.current {
            for &(delta, q) in &self.offsets {
                let j = (idx as isize + delta) as usize;
                if !self.seen[j] {
                    self.seen[j] = true;
                    self.next.push((j, 0.0));
                }
                self.dense[j] += p * q;
            }
        }
        for entry in self.next.iter_mut() {
            entry.1 = self.dense[entry.0];
            self.dense[entry.0] = 0.0;
            self.seen[entry.0] = false;
        }
        std::mem::swap(&mut self.current, &mut self.next);
    }
}
