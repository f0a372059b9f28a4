pub mod cli;
pub mod explorer;
pub mod exporter;
pub mod formatter;
pub mod model;
pub mod parsers;
pub mod store;
pub mod pipeline;
