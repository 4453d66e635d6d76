//! File formats, dataset handling and the `hgtraj` command line on top of
//! [`hgtraj_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod formats;
pub mod raster_io;
pub mod report;
pub mod workflow;
