//! Offline evaluation protocols: per-trip outcomes, failure rate and fraction
//! of trip needed, random-split and leave-one-out cross-validation, the
//! incremental-training experiment and parameter sweeps.
//!
//! Cluster labels are fixed once from the full corpus. Every fold trains its
//! lexicon and chains on the training trips only, so test trips may contain
//! unseen segments and clusters may have no training trips at all.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov_model::{ModelSet, PiMode};
use crate::predictor::{priors_from_sizes, Outcome, Predictor, PredictorConfig};
use crate::trip_data::{ClusterSet, History, Trip};

/// Prediction result for one test trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub trip_id: String,
    pub true_cluster: String,
    pub predicted_cluster: Option<String>,
    pub segments_at_decision: Option<usize>,
    pub trip_length: usize,
    pub fraction_used: Option<f64>,
}

impl EvalOutcome {
    pub fn is_correct(&self) -> bool {
        self.predicted_cluster.as_deref() == Some(self.true_cluster.as_str())
    }
}

/// Aggregate of a set of outcomes. `mean_fraction_used` averages over
/// correct predictions only and is `None` when there are none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_trips: usize,
    pub n_wrong: usize,
    pub n_no_prediction: usize,
    pub failure_rate: f64,
    pub mean_fraction_used: Option<f64>,
    pub outcomes: Vec<EvalOutcome>,
}

impl EvalReport {
    /// Aggregates outcomes; they are reordered by trip id first so the result
    /// does not depend on evaluation order.
    pub fn from_outcomes(mut outcomes: Vec<EvalOutcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidParameter("no test trips to evaluate".into()));
        }
        outcomes.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
        let n_trips = outcomes.len();
        let n_no_prediction = outcomes.iter().filter(|o| o.predicted_cluster.is_none()).count();
        let n_correct = outcomes.iter().filter(|o| o.is_correct()).count();
        let n_wrong = n_trips - n_correct - n_no_prediction;
        let fractions: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.is_correct())
            .filter_map(|o| o.fraction_used)
            .collect();
        let mean_fraction_used = if fractions.is_empty() {
            None
        } else {
            Some(fractions.iter().sum::<f64>() / fractions.len() as f64)
        };
        Ok(EvalReport {
            n_trips,
            n_wrong,
            n_no_prediction,
            failure_rate: (n_wrong + n_no_prediction) as f64 / n_trips as f64,
            mean_fraction_used,
            outcomes,
        })
    }

    /// Pools the outcomes of several reports (e.g. cross-validation rounds).
    pub fn pool(reports: &[EvalReport]) -> Result<Self> {
        Self::from_outcomes(reports.iter().flat_map(|r| r.outcomes.iter().cloned()).collect())
    }

    pub fn n_correct(&self) -> usize {
        self.n_trips - self.n_wrong - self.n_no_prediction
    }
}

/// Everything one evaluation run needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub predictor: PredictorConfig,
    pub pi_mode: PiMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            predictor: PredictorConfig::default(),
            pi_mode: PiMode::GlobalUniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Split,
    Loo,
    Incremental,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Split => "split",
            Protocol::Loo => "loo",
            Protocol::Incremental => "incremental",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(Protocol::Split),
            "loo" => Ok(Protocol::Loo),
            "incremental" => Ok(Protocol::Incremental),
            other => Err(Error::InvalidParameter(format!("unknown protocol {other}"))),
        }
    }
}

/// A deduplicated history with fixed ground-truth cluster labels.
#[derive(Debug, Clone)]
pub struct Corpus {
    history: History,
    labels: Vec<usize>,
    cluster_ids: Vec<String>,
}

impl Corpus {
    pub fn new(history: &History, clusters: &ClusterSet) -> Result<Self> {
        let labels = clusters.labels(history)?;
        Ok(Corpus {
            history: history.deduplicated(),
            labels,
            cluster_ids: clusters.ids(),
        })
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn trips(&self) -> &[Trip] {
        self.history.trips()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    /// Trains chains on the trips at `train` (indices into the corpus).
    pub fn train(&self, train: &[usize], epsilon: f64, pi_mode: PiMode) -> Result<ModelSet> {
        let trips: Vec<&Trip> = train.iter().map(|&i| &self.trips()[i]).collect();
        let labels: Vec<usize> = train.iter().map(|&i| self.labels[i]).collect();
        ModelSet::train(&trips, &labels, &self.cluster_ids, epsilon, pi_mode)
    }

    /// Priors estimated from the training trips.
    pub fn priors(&self, train: &[usize], config: &PredictorConfig) -> Result<Vec<f64>> {
        let mut sizes = vec![0usize; self.cluster_ids.len()];
        for &i in train {
            sizes[self.labels[i]] += 1;
        }
        priors_from_sizes(&sizes, config.prior_mode)
    }
}

/// Runs one deduplicated trip through a fresh session.
pub fn predict_trip(predictor: &Predictor<'_>, trip: &Trip, true_cluster: &str) -> Result<EvalOutcome> {
    let encoded = predictor.models().encode(trip);
    let outcome = predictor.run(&encoded)?;
    let ids = predictor.models().cluster_ids();
    let (predicted_cluster, segments_at_decision) = match outcome {
        Outcome::NoPrediction => (None, None),
        Outcome::Decided { cluster, segments_seen } => (Some(ids[cluster].clone()), Some(segments_seen)),
    };
    Ok(EvalOutcome {
        trip_id: trip.trip_id.clone(),
        true_cluster: true_cluster.to_string(),
        predicted_cluster,
        segments_at_decision,
        trip_length: trip.len(),
        fraction_used: segments_at_decision.map(|s| s as f64 / trip.len() as f64),
    })
}

/// Evaluates `test` (corpus indices) against already-built predictor state.
pub fn evaluate_set(predictor: &Predictor<'_>, corpus: &Corpus, test: &[usize]) -> Result<EvalReport> {
    let outcomes = test
        .par_iter()
        .map(|&i| predict_trip(predictor, &corpus.trips()[i], &corpus.cluster_ids[corpus.labels[i]]))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_outcomes(outcomes)
}

/// Trains on `train`, then evaluates `test` for every `(epsilon, alpha)`
/// combination. Results are ordered epsilon-major.
fn fold_outcomes(
    corpus: &Corpus,
    train: &[usize],
    test: &[usize],
    base: &EvalConfig,
    grid: &[(f64, f64)],
) -> Result<Vec<Vec<EvalOutcome>>> {
    let mut models = corpus.train(train, base.predictor.epsilon, base.pi_mode)?;
    let priors = corpus.priors(train, &base.predictor)?;
    let mut out = Vec::with_capacity(grid.len());
    for &(epsilon, alpha) in grid {
        models.reconfigure(epsilon, base.pi_mode)?;
        let cfg = PredictorConfig { alpha, epsilon, ..base.predictor };
        let predictor = Predictor::new(&models, &priors, &cfg)?;
        let outcomes = test
            .iter()
            .map(|&i| predict_trip(&predictor, &corpus.trips()[i], &corpus.cluster_ids[corpus.labels[i]]))
            .collect::<Result<Vec<_>>>()?;
        out.push(outcomes);
    }
    Ok(out)
}

fn random_splits(n: usize, rounds: usize, split: f64, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidParameter(format!("split fraction {split} outside (0, 1)")));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two trips to split".into()));
    }
    let n_train = ((n as f64 * split).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..rounds)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let test = idx.split_off(n_train);
            (idx, test)
        })
        .collect())
}

/// `rounds` random train/test splits; one report per round.
pub fn random_split_cv(
    corpus: &Corpus,
    config: &EvalConfig,
    rounds: usize,
    split: f64,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    config.predictor.validate()?;
    let grid = [(config.predictor.epsilon, config.predictor.alpha)];
    random_splits(corpus.len(), rounds, split, seed)?
        .par_iter()
        .map(|(train, test)| {
            let mut per_grid = fold_outcomes(corpus, train, test, config, &grid)?;
            EvalReport::from_outcomes(per_grid.remove(0))
        })
        .collect()
}

/// Leave-one-out cross-validation: each trip is predicted by chains trained
/// on all the others.
pub fn leave_one_out_cv(corpus: &Corpus, config: &EvalConfig) -> Result<EvalReport> {
    let grid = [(config.predictor.epsilon, config.predictor.alpha)];
    let mut reports = loo_grid(corpus, config, &grid)?;
    Ok(reports.remove(0))
}

fn loo_grid(corpus: &Corpus, config: &EvalConfig, grid: &[(f64, f64)]) -> Result<Vec<EvalReport>> {
    config.predictor.validate()?;
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InvalidParameter("leave-one-out needs at least two trips".into()));
    }
    let per_trip: Vec<Vec<EvalOutcome>> = (0..n)
        .into_par_iter()
        .map(|held_out| {
            let train: Vec<usize> = (0..n).filter(|&i| i != held_out).collect();
            let per_grid = fold_outcomes(corpus, &train, &[held_out], config, grid)?;
            Ok(per_grid.into_iter().map(|mut o| o.remove(0)).collect())
        })
        .collect::<Result<_>>()?;
    (0..grid.len())
        .map(|g| EvalReport::from_outcomes(per_trip.iter().map(|o| o[g].clone()).collect()))
        .collect()
}

/// Trains on the first `m` trips of `order` and evaluates the rest, for each
/// requested `m` (each in `1..N`).
pub fn incremental_experiment(
    corpus: &Corpus,
    config: &EvalConfig,
    order: &[usize],
    steps: &[usize],
) -> Result<Vec<(usize, EvalReport)>> {
    config.predictor.validate()?;
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InvalidParameter("incremental experiment needs at least two trips".into()));
    }
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..n).collect::<Vec<_>>() {
        return Err(Error::InvalidParameter("order must be a permutation of the corpus".into()));
    }
    if let Some(&m) = steps.iter().find(|&&m| m == 0 || m >= n) {
        return Err(Error::InvalidParameter(format!("training size {m} outside 1..{n}")));
    }
    let grid = [(config.predictor.epsilon, config.predictor.alpha)];
    steps
        .par_iter()
        .map(|&m| {
            let (train, test) = order.split_at(m);
            let mut per_grid = fold_outcomes(corpus, train, test, config, &grid)?;
            Ok((m, EvalReport::from_outcomes(per_grid.remove(0))?))
        })
        .collect()
}

/// A seeded random permutation of the corpus for the incremental experiment.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub epsilon: f64,
    pub clustering_mode: String,
    pub protocol: Protocol,
    pub failure_rate: f64,
    pub mean_fraction_used: Option<f64>,
    pub n_trips: usize,
}

/// Sweep settings besides the grids themselves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPlan {
    pub protocol: Protocol,
    pub rounds: usize,
    pub split: f64,
    pub seed: u64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan { protocol: Protocol::Split, rounds: 8, split: 0.5, seed: 0 }
    }
}

/// Evaluates every `(alpha, epsilon)` pair under `plan.protocol`. Each fold is
/// trained once and re-smoothed per epsilon. Split rounds are pooled into one
/// row per pair. Rows are ordered alpha-major in the order of the inputs.
pub fn grid_sweep(
    corpus: &Corpus,
    clustering_mode: &str,
    alphas: &[f64],
    epsilons: &[f64],
    plan: &SweepPlan,
    base: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() || epsilons.is_empty() {
        return Err(Error::InvalidParameter("sweep grids must be non-empty".into()));
    }
    for &alpha in alphas {
        for &epsilon in epsilons {
            PredictorConfig { alpha, epsilon, ..base.predictor }.validate()?;
        }
    }
    // epsilon-major so each fold re-smooths once per epsilon
    let grid: Vec<(f64, f64)> = epsilons
        .iter()
        .flat_map(|&e| alphas.iter().map(move |&a| (e, a)))
        .collect();
    let reports: Vec<EvalReport> = match plan.protocol {
        Protocol::Loo => loo_grid(corpus, base, &grid)?,
        Protocol::Split => {
            let per_round: Vec<Vec<Vec<EvalOutcome>>> =
                random_splits(corpus.len(), plan.rounds, plan.split, plan.seed)?
                    .par_iter()
                    .map(|(train, test)| fold_outcomes(corpus, train, test, base, &grid))
                    .collect::<Result<_>>()?;
            (0..grid.len())
                .map(|g| {
                    EvalReport::from_outcomes(per_round.iter().flat_map(|r| r[g].iter().cloned()).collect())
                })
                .collect::<Result<_>>()?
        }
        Protocol::Incremental => {
            return Err(Error::InvalidParameter(
                "sweeps support the split and loo protocols".into(),
            ))
        }
    };
    let mut rows = Vec::with_capacity(grid.len());
    for (ai, &alpha) in alphas.iter().enumerate() {
        for (ei, &epsilon) in epsilons.iter().enumerate() {
            let r = &reports[ei * alphas.len() + ai];
            rows.push(SweepRow {
                alpha,
                epsilon,
                clustering_mode: clustering_mode.to_string(),
                protocol: plan.protocol,
                failure_rate: r.failure_rate,
                mean_fraction_used: r.mean_fraction_used,
                n_trips: r.n_trips,
            });
        }
    }
    Ok(rows)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "alpha",
        "epsilon",
        "clustering_mode",
        "protocol",
        "failure_rate",
        "mean_fraction_used",
        "n_trips",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.alpha.to_string(),
            r.epsilon.to_string(),
            r.clustering_mode.clone(),
            r.protocol.to_string(),
            r.failure_rate.to_string(),
            fmt_opt(r.mean_fraction_used),
            r.n_trips.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_incremental_csv<W: Write>(series: &[(usize, EvalReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m", "failure_rate", "mean_fraction_used"]).map_err(csv_err)?;
    for (m, r) in series {
        w.write_record([m.to_string(), r.failure_rate.to_string(), fmt_opt(r.mean_fraction_used)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-trip rows; `fold` numbers the reports in order.
pub fn write_outcomes_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "fold",
        "trip_id",
        "true_cluster",
        "predicted_cluster",
        "segments_at_decision",
        "trip_length",
        "fraction_used",
    ])
    .map_err(csv_err)?;
    for (fold, r) in reports.iter().enumerate() {
        for o in &r.outcomes {
            w.write_record([
                fold.to_string(),
                o.trip_id.clone(),
                o.true_cluster.clone(),
                o.predicted_cluster.clone().unwrap_or_default(),
                o.segments_at_decision.map(|s| s.to_string()).unwrap_or_default(),
                o.trip_length.to_string(),
                fmt_opt(o.fraction_used),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
