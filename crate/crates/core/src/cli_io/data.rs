//! The two input CSV schemas and the tallies derived from firm records.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamic_game::Action;
use crate::error::{Error, Result};
use crate::state_space::{ActionTally, IndustryState, LevelCutoffs, N_LEVELS};

pub const ROUTE_YEAR_HEADER: [&str; 10] = [
    "market",
    "route",
    "year",
    "price",
    "quantity",
    "total_tonnage",
    "log_gdp",
    "avg_ship_age",
    "share_old_ships",
    "avg_ship_size",
];

pub const FIRM_HEADER: [&str; 5] = ["firm_id", "market", "year", "tonnage", "action"];

/// One route in one year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteYearRecord {
    pub market: String,
    pub route: String,
    pub year: i32,
    /// USD per TEU.
    pub price: f64,
    /// TEU.
    pub quantity: f64,
    /// TEU.
    pub total_tonnage: f64,
    pub log_gdp: f64,
    pub avg_ship_age: f64,
    pub share_old_ships: f64,
    pub avg_ship_size: f64,
}

impl RouteYearRecord {
    fn check(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("price", self.price),
            ("quantity", self.quantity),
            ("total_tonnage", self.total_tonnage),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("log_gdp", self.log_gdp),
            ("avg_ship_age", self.avg_ship_age),
            ("share_old_ships", self.share_old_ships),
            ("avg_ship_size", self.avg_ship_size),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.share_old_ships) {
            return Err(format!("share_old_ships must lie in [0, 1], got {}", self.share_old_ships));
        }
        Ok(())
    }

    /// Label identifying the route within its market, used for fixed effects.
    pub fn route_key(&self) -> String {
        format!("{}:{}", self.market, self.route)
    }
}

/// One firm in one market-year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmRecord {
    pub firm_id: String,
    pub market: String,
    pub year: i32,
    /// TEU; zero for a firm entering this year.
    pub tonnage: f64,
    /// One of `x`, `k`, `b`, `e`.
    pub action: String,
}

impl FirmRecord {
    fn check(&self) -> std::result::Result<(), String> {
        let action = Action::from_code(&self.action).map_err(|e| e.to_string())?;
        if !(self.tonnage >= 0.0) || !self.tonnage.is_finite() {
            return Err(format!("tonnage must be non-negative, got {}", self.tonnage));
        }
        match (action, self.tonnage > 0.0) {
            (Action::Enter, true) => Err("an incumbent cannot enter; entrants carry zero tonnage".into()),
            (Action::Enter, false) => Ok(()),
            (_, false) => Err(format!("a firm with zero tonnage must enter, got action {}", self.action)),
            (_, true) => Ok(()),
        }
    }
}

fn read_records<T, R>(reader: R, file: &str, header: &[&str], check: impl Fn(&T) -> std::result::Result<(), String>) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: Read,
{
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Load {
            file: file.to_string(),
            row: 0,
            message: format!("header must be `{}`, found `{}`", header.join(","), found.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<T>().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Load {
            file: file.to_string(),
            row,
            message: match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => match err.field() {
                    Some(f) => format!("column {}: {}", header.get(f as usize).unwrap_or(&"?"), err.kind()),
                    None => err.kind().to_string(),
                },
                _ => e.to_string(),
            },
        })?;
        check(&rec).map_err(|message| Error::Load {
            file: file.to_string(),
            row,
            message,
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::Load {
        file: path.display().to_string(),
        row: 0,
        message: e.to_string(),
    })
}

pub fn read_route_years<R: Read>(reader: R, file: &str) -> Result<Vec<RouteYearRecord>> {
    read_records(reader, file, &ROUTE_YEAR_HEADER, RouteYearRecord::check)
}

/// Reads route-year records; errors name the 1-based data row.
pub fn load_route_year_csv(path: &Path) -> Result<Vec<RouteYearRecord>> {
    read_route_years(open(path)?, &path.display().to_string())
}

pub fn write_route_years<W: Write>(records: &[RouteYearRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(ROUTE_YEAR_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_route_year_csv(records: &[RouteYearRecord], path: &Path) -> Result<()> {
    write_route_years(records, std::fs::File::create(path)?)
}

pub fn read_firms<R: Read>(reader: R, file: &str) -> Result<Vec<FirmRecord>> {
    read_records(reader, file, &FIRM_HEADER, FirmRecord::check)
}

/// Reads firm records; errors name the 1-based data row.
pub fn load_firm_csv(path: &Path) -> Result<Vec<FirmRecord>> {
    read_firms(open(path)?, &path.display().to_string())
}

pub fn write_firms<W: Write>(records: &[FirmRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(FIRM_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_firm_csv(records: &[FirmRecord], path: &Path) -> Result<()> {
    write_firms(records, std::fs::File::create(path)?)
}

/// State and actions of one market-year.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyRecord {
    pub year: i32,
    pub state: IndustryState,
    pub tally: ActionTally,
}

/// Market name mapped to its year records in year order.
pub type ObservedTallies = BTreeMap<String, Vec<TallyRecord>>;

/// Counts states and actions per market-year over `years`.
///
/// Incumbents are discretized by tonnage; rows with action `e` are entrants
/// and the remaining `n_entrants - entries` potential entrants are counted as
/// staying out. Every market with a record gets an entry for each year, so a
/// year without rows is an empty market whose potential entrants all stayed out.
pub fn derive_tallies(records: &[FirmRecord], cutoffs: &LevelCutoffs, n_entrants: u32, years: &[i32]) -> Result<ObservedTallies> {
    let mut cells: BTreeMap<(String, i32), TallyRecord> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let row = i + 1;
        let load_err = |message: String| Error::Load {
            file: "firm records".into(),
            row,
            message,
        };
        r.check().map_err(load_err)?;
        if !years.contains(&r.year) {
            return Err(load_err(format!("year {} outside the configured years", r.year)));
        }
        for &y in years {
            cells.entry((r.market.clone(), y)).or_insert(TallyRecord {
                year: y,
                state: IndustryState([0; N_LEVELS]),
                tally: ActionTally::default(),
            });
        }
        let cell = cells.get_mut(&(r.market.clone(), r.year)).expect("cell created above");
        let action = Action::from_code(&r.action)?;
        if action == Action::Enter {
            cell.tally.entries += 1;
            if cell.tally.entries > n_entrants {
                return Err(load_err(format!("more than {n_entrants} entrants in {} {}", r.market, r.year)));
            }
            continue;
        }
        let l = cutoffs.discretize(r.tonnage)?.index();
        cell.state.0[l] += 1;
        match action {
            Action::Exit => cell.tally.exits[l] += 1,
            Action::Keep => cell.tally.keeps[l] += 1,
            _ => cell.tally.builds[l] += 1,
        }
    }
    let mut out: ObservedTallies = BTreeMap::new();
    for ((market, _), mut rec) in cells {
        rec.tally.entrant_quits = n_entrants - rec.tally.entries;
        out.entry(market).or_default().push(rec);
    }
    Ok(out)
}

/// Market name before the replicate suffix: `transpacific/07` belongs to `transpacific`.
pub fn base_market(name: &str) -> &str {
    name.split_once('/').map_or(name, |(base, _)| base)
}
