//! Offline analysis of experiment outputs: acoustic features, PCA of chain
//! endpoints, rating contrast by iteration, correlation and a linear SVM
//! classifier scored by unweighted average recall.

pub mod classify;
pub mod contrast;
pub mod error;
pub mod features;
pub mod pca;
pub mod stats;

pub use classify::{cross_predict_uar, kfold_uar, uar, CvReport, Dataset, LinearSvm, SvmSettings, DEFAULT_C_GRID};
pub use contrast::{contrast_curve, default_bins, Bin, ContrastBin, RatingRow, RatingTable};
pub use error::{AnalysisError, Result};
pub use features::{extract_features, FeatureExtractor, FeatureVector, FEATURE_NAMES};
pub use pca::{pca, PcaResult};
pub use stats::{pearson, Correlation};
