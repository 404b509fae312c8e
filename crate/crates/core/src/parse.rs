//! Command-line spellings of the configuration enums.

use std::fmt;
use std::str::FromStr;

use crate::clustering::{ClusteringMode, Similarity};
use crate::error::Error;
use crate::markov_model::PiMode;
use crate::predictor::{PriorMode, UnseenPolicy};

macro_rules! spelled {
    ($ty:ty, $what:literal, { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::InvalidParameter(format!(
                        concat!("unknown ", $what, " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

spelled!(PiMode, "initial-probability mode", {
    PiMode::Ml => "ml",
    PiMode::ClusterUniform => "cluster-uniform",
    PiMode::GlobalUniform => "global-uniform",
});

spelled!(PriorMode, "prior mode", {
    PriorMode::Uniform => "uniform",
    PriorMode::Proportional => "proportional",
});

spelled!(UnseenPolicy, "unseen-segment policy", {
    UnseenPolicy::Bridge => "bridge",
    UnseenPolicy::Literal => "literal",
});

spelled!(ClusteringMode, "clustering mode", {
    ClusteringMode::Od => "od",
    ClusteringMode::Route => "route",
});

spelled!(Similarity, "similarity measure", {
    Similarity::Jaccard => "jaccard",
    Similarity::SharedOverTotal => "shared-over-total",
});
