//! Data files, configuration, synthetic panels and the command line.

pub mod commands;
pub mod config;
pub mod data;
pub mod pipeline;

pub use commands::{cli, exit_code};
pub use config::RunConfig;
pub use data::{
    derive_tallies, load_firm_csv, load_route_year_csv, save_firm_csv, save_route_year_csv, FirmRecord, ObservedTallies, RouteYearRecord,
    TallyRecord,
};
pub use pipeline::{generate_synthetic_panel, SyntheticPanel};
