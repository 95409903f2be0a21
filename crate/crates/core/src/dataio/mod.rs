//! File formats, normalisation and dataset preparation.

pub mod classes;
pub mod dataset;
pub mod raster;
pub mod stats;
pub mod tile;
pub mod transforms;

pub use classes::{class_counts, class_weights, discretize, discretize_raster, WeightScheme, CLASS_NAMES, NUM_CLASSES};
pub use dataset::Dataset;
pub use raster::{decode_raster, encode_raster, read_raster, write_raster, ThawRaster};
pub use stats::{denormalize, normalize_target, normalize_tile, percentile, NormStats};
pub use tile::{decode_tile, encode_tile, quantize_to_f32, read_tile, write_tile, PointClass, PointCloudTile};
pub use transforms::{augment, cap_indices, cap_points, jitter, rotate_raster, rotate_tile, row_major_order, split_tiles, validate_target, Split};
