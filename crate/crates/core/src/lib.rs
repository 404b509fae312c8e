//! Online prediction of the destination or route of an ongoing driving trip.
//!
//! Journey patterns (clusters of historical trips) are modelled as
//! first-order Markov chains over road segments. As segments of a new trip
//! arrive, the posterior probability of every cluster is updated, and a
//! prediction is made once one posterior exceeds `1 - alpha`.
//!
//! The pipeline is:
//!
//! 1. [`trip_data`]: parse trips, collapse repeated segments, index segments.
//! 2. [`clustering`]: group trips by origin/destination or by route.
//! 3. [`markov_model`]: count transitions per cluster and smooth them.
//! 4. [`predictor`]: streaming posterior updates with a stopping rule.
//! 5. [`evaluation`]: cross-validation protocols and CSV reports.
//!
//! [`synthetic_gen`] produces reproducible corpora on a grid network.

pub mod cli;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod markov_model;
pub mod predictor;
pub mod synthetic_gen;
pub mod trip_data;

mod parse;

pub use clustering::{cluster_by_od, cluster_by_route, ClusteringMode, Similarity};
pub use error::{Error, Result};
pub use evaluation::{Corpus, EvalConfig, EvalReport, Protocol};
pub use markov_model::{ClusterModel, ModelSet, PiMode};
pub use predictor::{PredictionSession, Predictor, PredictorConfig, PriorMode, UnseenPolicy};
pub use trip_data::{ClusterSet, History, Lexicon, SegmentId, Trip};
