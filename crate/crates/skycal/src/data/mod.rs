//! Canonical domain types and ingestion: spatial directions, field
//! observations, simulator corpora, parameter domains, and the stacked
//! (parameter x grid) design the surrogate trains on.

mod corpus;
mod domain;
mod field;
mod io;
mod location;
mod stacked;

pub use corpus::SimulatorCorpus;
pub use domain::ParameterDomain;
pub use field::{CoordFormat, FieldDataset};
pub use io::{
    load_domain_file, load_field_csv, load_simulator_csv, write_domain_file, write_field_csv,
    write_simulator_csv,
};
pub use location::{latlon_to_unit, unit_to_latlon, SpatialLocation};
pub use stacked::{Normalization, StackedDesign};
