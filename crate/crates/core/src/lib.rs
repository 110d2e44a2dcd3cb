//! Learning-curve prediction for NMT domain adaptation.
//!
//! Given a general translation model and source-side samples from a new
//! domain, predict the mean chrF the model would reach after adapting on
//! `n` in-domain sentences, for any `n`. The crate contains the
//! instance-level predictor network (`net`), its two families of
//! baselines (`curvefit` for the parametric exp3 curve and `gbt` for
//! boosted trees), the feature extractors they share (`features`), the
//! on-disk data model (`dataset`) and the leave-one-domain-out evaluation
//! protocol with a synthetic domain generator (`harness`).

pub mod curvefit;
pub mod dataset;
pub mod error;
pub mod features;
pub mod gbt;
pub mod harness;
pub mod metrics;
pub mod net;

pub use curvefit::{exp3_curve, exp3_eval, exp3_fit, AnchorObservation, Exp3Params};
pub use dataset::{
    load_manifest, read_tensor_record, validate_dataset, write_tensor_record, DecodeStep, DomainEntry, LearningCurve,
    Manifest, SampleStats, SentenceRecord, Split, ValidationReport,
};
pub use error::{Error, Result};
pub use features::{CorpusFeatures, GeneralVocab, InstanceFeatures};
pub use gbt::{GbtConfig, GbtModel};
pub use metrics::{chrf, mae, mean_chrf, rmse, ChrfConfig};
pub use net::{NetConfig, PredictorModel, TrainingInstance, TrainingLog};
