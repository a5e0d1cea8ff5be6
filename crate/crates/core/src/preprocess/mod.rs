//! Data conditioning for flattened `C*T` trial vectors (channel-major).

mod kmeans;
mod normalize;
mod outliers;
mod oversample;
mod pca;
mod smote;

pub use kmeans::{kmeans, silhouette, KMeans};
pub use normalize::{fit_normalizer, Normalizer, NORMALIZER_EPS};
pub use outliers::{detect_outliers, OutlierMode, OutlierPolicy};
pub use oversample::{oversample_weights, WeightedSampler};
pub use pca::{pca_fit, pca_project, PcaBasis};
pub use smote::{safe_level_smote, SmoteConfig};

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
