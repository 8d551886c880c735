//! AVL trace ingestion: parsing, patch assignment, crossing extraction,
//! outlier cleaning, the speed-limit counterfactual, and synthetic trace
//! generation.

mod avl;
mod crossings;
mod route;
mod synth;

pub use avl::{
    format_clock, normalise_to_operating_day, parse_avl, parse_clock, write_avl_csv, AvlFix,
    IngestError, ParsedAvl, OPERATING_DAY_START_S,
};
pub use crossings::{
    apply_speed_limit, assign_patches, clean_outliers, crossing_samples, extract_crossings,
    read_samples_csv, write_samples_csv, AssignOptions, AssignedFix, CleanOptions, CleanResult,
    Crossing, CrossingSample, DiscardCounts, ExtractOptions, ExtractedCrossings, Scenario,
    FIX_PERIOD_S, SPEED_LIMIT_MPH,
};
pub use route::{
    straight_route, LatLon, PatchSpec, RouteDirection, RouteError, RouteGeometry, RouteSpec,
    TimeWindow, PATCH_LENGTH_BOUNDS_M,
};
pub use synth::{generate_synthetic_trace, SynthOptions};
