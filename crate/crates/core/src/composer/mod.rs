//! Sliced modules: decoding, composition, patching and recommendation.

mod bundle;
mod compose;
mod module;
mod patch;
mod recommend;

pub use bundle::{
    load_bundle, load_bundle_header, load_bundle_metrics, load_composed, save_bundle, save_composed, BundleHeader, BundleMetrics,
    ComposedManifest, BUNDLE_FORMAT, COMPOSED_FORMAT,
};
pub use compose::{argmax_f64, compose, ComposedModel, Mode};
pub use module::{decode, masks_from_retained, split_by_layer, Provenance, SlicedModule};
pub use patch::{calibration_range, patch, PatchedModel};
pub use recommend::{evaluate_and_recommend, f1, BinaryScore, Recommendation};
