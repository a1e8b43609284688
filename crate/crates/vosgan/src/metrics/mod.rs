//! Evaluation measures: region similarity J, contour accuracy F, their
//! mean/recall/decay aggregates, flow endpoint error, frame content
//! distance, Frechet distance and Inception Score.

pub mod fcd;
pub mod gauss;
pub mod masks;

pub use fcd::{fcd, largest_component_bbox, FeatureExtractor, ToyFeatureExtractor};
pub use gauss::{frechet_distance, inception_score, jacobi_eigh, GaussianStats};
pub use masks::{
    aggregate, boundary, contour_accuracy_f, default_f_tolerance, edt_squared, endpoint_error,
    region_similarity_j, rescale_map, rescale_to_mask, Aggregate, MetricsError, SequenceScores,
};
