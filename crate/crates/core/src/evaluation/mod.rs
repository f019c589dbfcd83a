//! Likelihood estimators, the mixture baseline, Jacobian spectra and
//! sample-quality scores.

pub mod ais;
pub mod mixture;
pub mod scores;
pub mod spectral;

pub use ais::{ais_estimate, log_mean_exp, AisConfig, AisResult, AisSchedule, Generator};
pub use mixture::{
    bandwidth_grid, gmm_bandwidth_search, gmm_logpdf, kde_estimate, mixture_logpdf_multi, BandwidthSearch, GmmBaseline,
};
pub use scores::{
    fit_classifier, inception_score, inception_score_from_probs, mode_score, mode_score_from_probs,
    train_surrogate_classifier, Classifier, ClassifierConfig,
};
pub use spectral::{
    gram_singular_values, jacobian, singular_values, spectral_report, symmetric_eigenvalues, SpectralReport,
};
