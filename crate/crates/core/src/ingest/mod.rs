//! Reading labels and gridded inputs.

pub mod cube;
pub mod labels;
pub mod modality;

pub use cube::{
    horn_slope_deg, load_cube, load_cube_on_grid, read_manifest, resample_to_monthly, CubeManifest,
    InputCube, ManifestEntry, SpaceTimeLayer, TerrainLayer, TimeOnlyLayer,
};
pub use labels::{
    aggregate_same_day_site, enrich_observations, filter_samples, parse_labels, parse_labels_file,
    ColumnMap, DateRange, EnrichmentFlags, ParsedLabels, Reject, SiteObservation, StaticLookup,
    StaticRasters,
};
pub use modality::{Aggregator, Modality, ModalitySpec, Variability};
