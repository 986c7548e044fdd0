pub mod checks;
pub mod fixtures;
pub mod oracle;
pub mod world;
