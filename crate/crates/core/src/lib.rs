//! Ensemble spatial interpolation.
//!
//! Conditioning data are split by many random partitions of the domain, a
//! weak local interpolator runs inside each cell, and the resulting stack of
//! estimates is reduced by an aggregation function. The spread of that stack
//! gives a per-location precision.

pub mod aggregation;
pub mod baseline;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod io;
pub mod local_interp;
pub mod partition;
pub mod precision;
pub mod search;
pub mod spatial;
pub mod synth;

pub use aggregation::{AggSelector, Aggregator};
pub use baseline::{idw_griddata, idw_nongriddata, GlobalIdwParams, IdwResult};
pub use engine::{esi_griddata, esi_nongriddata, generate_cube, EsiConfig, EstimationResult, LocalInterpolator, SampleCube};
pub use error::{EsiError, Result};
pub use geometry::{enclosing_domain, flatten_grid, ConditioningData, Domain, GridSpec, LocationSet};
pub use local_interp::{IdwParams, KrigingParams, VariogramModel};
pub use partition::{Forest, ProcessKind};
pub use precision::{LossFunction, LossSelector};
pub use search::{esi_hparams_search, idw_hparams_search, CvOptions, IdwSearchGrid, LocalGrid, Metric, SearchGrid, SearchResult};
