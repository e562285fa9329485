//! On-disk artifacts: synthetic-set files, run manifests, loss logs and
//! image grids.

mod dds;
mod manifest;
mod metrics;
mod ppm;

pub use dds::{SyntheticSetFile, DDS_MAGIC, DDS_VERSION};
pub use manifest::{hash_path, DatasetFormat, DatasetIdentity, LoadedData, RunManifest, TOOL_NAME, TOOL_VERSION};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use ppm::{image_grid, Ppm};
