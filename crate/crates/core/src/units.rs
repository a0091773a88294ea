//! Unit conventions shared by every module.
//!
//! Prices are USD per TEU (1995 dollars), quantities and tonnage are TEU,
//! dynamic costs and the profit table are in units of 100 billion USD, and
//! welfare tables are reported in billion USD.

/// USD in one unit of dynamic cost (100 billion USD).
pub const USD_PER_DYNAMIC_UNIT: f64 = 1.0e11;

/// USD in one unit of the welfare tables (1 billion USD).
pub const USD_PER_WELFARE_UNIT: f64 = 1.0e9;

/// Euler–Mascheroni constant, the mean of a standard type-one extreme value draw.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Converts a static profit in USD to dynamic-cost units.
pub fn usd_to_dynamic(usd: f64) -> f64 {
    usd / USD_PER_DYNAMIC_UNIT
}

/// Converts USD to welfare-table units.
pub fn usd_to_welfare(usd: f64) -> f64 {
    usd / USD_PER_WELFARE_UNIT
}

/// Converts dynamic-cost units to welfare-table units.
pub fn dynamic_to_welfare(value: f64) -> f64 {
    value * USD_PER_DYNAMIC_UNIT / USD_PER_WELFARE_UNIT
}
