//! Trial runner, benchmark grid, cross-vehicle deployment, scripted
//! demonstration recording and the interactive session service.

pub mod bench;
pub mod demos;
pub mod protocol;
pub mod reference;
pub mod serve;
pub mod trial;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Terrain(#[from] verti_core::terrain::TerrainError),
    #[error(transparent)]
    Vehicle(#[from] verti_core::vehicle::VehicleError),
    #[error(transparent)]
    Control(#[from] verti_core::controllers::ControlError),
    #[error(transparent)]
    Dataset(#[from] verti_core::dataset::DatasetError),
    #[error(transparent)]
    Bc(#[from] verti_core::bclearn::BcError),
    #[error(transparent)]
    Appld(#[from] verti_core::appld::AppldError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("config: {0}")]
    Config(String),
}
