//! Model instances: tile extraction, train/validation/test splits and the
//! on-disk dataset container.

pub mod container;
pub mod split;
pub mod tile;

pub use container::{
    build_dataset, DatasetContainer, DatasetManifest, InstanceRecord, DATASET_FORMAT_VERSION,
};
pub use split::{
    split, split_sizes, SplitAssignment, SplitConfig, SplitCounts, SplitFractions, SplitMode,
    SplitTag,
};
pub use tile::{
    extract_instance, extract_window, locate, location_features, BlockKind, BlockSpec,
    FeatureLayout, InstanceMeta, TileInstance, TileShape,
};
