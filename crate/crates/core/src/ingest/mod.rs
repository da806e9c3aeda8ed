//! Raw inputs to grid-aligned tensors and fields.

pub mod demographics;
pub mod grid;
pub mod polygon;
pub mod raster;
pub mod series;
pub mod slices;
pub mod trips;

pub use demographics::{
    allocate_demographics, cell_populations, parse_demographics_geojson, read_demographics,
    DemographicField, DemographicUnit, ADV_FRAC_SUFFIX,
};
pub use grid::{build_grid, BBox, Cell, GridSpec};
pub use polygon::{clip_polygon_area, polygon_cell_fractions, Ring};
pub use raster::{
    parse_feature_layers, rasterize_features, read_feature_layers, FeatureGeometry, FeatureStack2D,
    RasterMode,
};
pub use series::{load_series, read_series, SeriesStack1D};
pub use slices::{make_slices, make_slices_for_targets, TemporalSlice};
pub use trips::{aggregate_trips, read_trips, DemandTensor, DropStats, TripRecord};
