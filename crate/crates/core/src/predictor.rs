//! Online cluster prediction for an ongoing trip.
//!
//! A [`PredictionSession`] holds the running log-likelihood of every cluster
//! and the normalised posterior `P(C_k | r_1..r_t)`. Each new segment adds the
//! log transition probability of every cluster's chain; the session stops at
//! the first moment some posterior exceeds `1 - alpha`.
//!
//! Log-likelihood contributions that are identical for every cluster (those of
//! unseen segments) are accumulated separately from the per-cluster evidence,
//! so they cancel exactly rather than up to rounding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov_model::{ClusterModel, ModelSet};
use crate::trip_data::{ClusterSet, SegmentId, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// `P(C_k) = 1 / N_C`
    #[default]
    Uniform,
    /// `P(C_k)` proportional to the number of history trips in `C_k`.
    Proportional,
}

/// How an observed segment that is absent from the lexicon is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnseenPolicy {
    /// Each unseen segment contributes `bar_epsilon` to every cluster and is
    /// then bridged over: the next known segment is scored as a transition
    /// from the last known one (or by `pi` if none came before).
    #[default]
    Bridge,
    /// Every step touching an unseen segment contributes `bar_epsilon` in
    /// place of a transition probability; the step after an unseen segment
    /// carries no cluster-specific evidence.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub alpha: f64,
    pub prior_mode: PriorMode,
    pub epsilon: f64,
    #[serde(default)]
    pub unseen: UnseenPolicy,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            alpha: 0.1,
            prior_mode: PriorMode::Uniform,
            epsilon: 1e-6,
            unseen: UnseenPolicy::Bridge,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

pub fn make_priors(clusters: &ClusterSet, mode: PriorMode) -> Result<Vec<f64>> {
    priors_from_sizes(&clusters.sizes(), mode)
}

/// Priors from per-cluster trip counts. Proportional priors divide by the
/// total trip count so they sum to one.
pub fn priors_from_sizes(sizes: &[usize], mode: PriorMode) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::InvalidParameter("no clusters".into()));
    }
    match mode {
        PriorMode::Uniform => Ok(vec![1.0 / sizes.len() as f64; sizes.len()]),
        PriorMode::Proportional => {
            let total: usize = sizes.iter().sum();
            if total == 0 {
                return Err(Error::InvalidParameter(
                    "proportional priors need at least one trip".into(),
                ));
            }
            Ok(sizes.iter().map(|&s| s as f64 / total as f64).collect())
        }
    }
}

/// Index of the largest posterior if it exceeds `1 - alpha`; ties go to the
/// lowest index.
pub fn decide(posterior: &[f64], alpha: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &p) in posterior.iter().enumerate() {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((k, p));
        }
    }
    best.filter(|&(_, p)| p > 1.0 - alpha).map(|(k, _)| k)
}

/// Result of running a session to the end of a trip or to its decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    NoPrediction,
    Decided { cluster: usize, segments_seen: usize },
}

/// Trained models, priors and stopping rule shared by any number of sessions.
#[derive(Debug, Clone)]
pub struct Predictor<'m> {
    models: &'m ModelSet,
    log_priors: Vec<f64>,
    alpha: f64,
    unseen: UnseenPolicy,
    ln_bar_epsilon: f64,
}

impl<'m> Predictor<'m> {
    pub fn new(models: &'m ModelSet, priors: &[f64], config: &PredictorConfig) -> Result<Self> {
        config.validate()?;
        if models.is_empty() {
            return Err(Error::InvalidParameter("no cluster models".into()));
        }
        if priors.len() != models.len() {
            return Err(Error::InvalidParameter(format!(
                "{} priors for {} clusters",
                priors.len(),
                models.len()
            )));
        }
        if priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParameter("priors must be finite and non-negative".into()));
        }
        let bar = models.models()[0].smoothing().bar_epsilon;
        if models
            .models()
            .iter()
            .any(|m| m.smoothing().bar_epsilon != bar)
        {
            return Err(Error::InvalidParameter(
                "all cluster models must share one epsilon".into(),
            ));
        }
        Ok(Predictor {
            models,
            log_priors: priors.iter().map(|p| p.ln()).collect(),
            alpha: config.alpha,
            unseen: config.unseen,
            ln_bar_epsilon: bar.ln(),
        })
    }

    pub fn models(&self) -> &'m ModelSet {
        self.models
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn unseen_state(&self) -> State {
        self.models.lexicon().unseen()
    }

    /// Opens a session on the first observed (encoded) segment.
    pub fn start(&self, first: State) -> Result<PredictionSession<'_>> {
        let u = self.unseen_state();
        if first > u {
            return Err(Error::StateOutOfRange { state: first, n_states: u });
        }
        let n_c = self.models.len();
        let mut session = PredictionSession {
            predictor: self,
            log_lik: vec![0.0; n_c],
            common_log: 0.0,
            posterior: vec![0.0; n_c],
            segments_seen: 1,
            last_state: first,
            anchor: None,
            decided: None,
        };
        if first == u {
            session.common_log += self.ln_bar_epsilon;
        } else {
            for (ll, m) in session.log_lik.iter_mut().zip(self.models.models()) {
                *ll = ln_initial_or_zero(m, first)?;
            }
            session.anchor = Some(first);
        }
        session.normalize()?;
        session.check_decision();
        Ok(session)
    }

    pub fn start_segment(&self, first: &SegmentId) -> Result<PredictionSession<'_>> {
        self.start(self.models.lexicon().encode(first))
    }

    /// Runs a whole encoded trip, stopping at the first decision.
    pub fn run(&self, trip: &[State]) -> Result<Outcome> {
        let (&first, rest) = trip
            .split_first()
            .ok_or_else(|| Error::InvalidParameter("empty trip".into()))?;
        let mut session = self.start(first)?;
        for &s in rest {
            if session.decided().is_some() {
                break;
            }
            session.observe(s)?;
        }
        Ok(session.finish())
    }
}

/// `ln pi`, with an empty cluster under maximum-likelihood `pi` treated as
/// unable to produce any trip.
fn ln_initial_or_zero(model: &ClusterModel, state: State) -> Result<f64> {
    match model.ln_initial(state) {
        Err(Error::EmptyClusterMl(_)) => Ok(f64::NEG_INFINITY),
        other => other,
    }
}

/// Posterior state of one ongoing trip.
#[derive(Debug, Clone)]
pub struct PredictionSession<'p> {
    predictor: &'p Predictor<'p>,
    /// Cluster-specific part of each running log-likelihood.
    log_lik: Vec<f64>,
    /// Part of the log-likelihood shared by every cluster.
    common_log: f64,
    posterior: Vec<f64>,
    segments_seen: usize,
    last_state: State,
    /// Last known (in-lexicon) state, used by [`UnseenPolicy::Bridge`].
    anchor: Option<State>,
    decided: Option<(usize, usize)>,
}

impl<'p> PredictionSession<'p> {
    /// Feeds the next encoded segment.
    pub fn observe(&mut self, next: State) -> Result<()> {
        if self.decided.is_some() {
            return Err(Error::AlreadyDecided);
        }
        let p = self.predictor;
        let u = p.unseen_state();
        if next > u {
            return Err(Error::StateOutOfRange { state: next, n_states: u });
        }
        let from = self.last_state;
        self.last_state = next;
        self.segments_seen += 1;

        let models = p.models.models();
        let updated = match p.unseen {
            UnseenPolicy::Literal => {
                if from == u || next == u {
                    self.common_log += p.ln_bar_epsilon;
                    false
                } else {
                    for (ll, m) in self.log_lik.iter_mut().zip(models) {
                        *ll = m.step_log_likelihood(*ll, from, next)?;
                    }
                    true
                }
            }
            UnseenPolicy::Bridge => {
                if next == u {
                    self.common_log += p.ln_bar_epsilon;
                    false
                } else {
                    match self.anchor {
                        // a known segment reappearing after unseen ones is a repeat
                        Some(a) if a == next => false,
                        Some(a) => {
                            for (ll, m) in self.log_lik.iter_mut().zip(models) {
                                *ll = m.step_log_likelihood(*ll, a, next)?;
                            }
                            true
                        }
                        None => {
                            for (ll, m) in self.log_lik.iter_mut().zip(models) {
                                *ll += ln_initial_or_zero(m, next)?;
                            }
                            true
                        }
                    }
                }
            }
        };
        if next != u {
            self.anchor = Some(next);
        }
        if updated {
            self.normalize()?;
        }
        self.check_decision();
        Ok(())
    }

    pub fn observe_segment(&mut self, seg: &SegmentId) -> Result<()> {
        let state = self.predictor.models.lexicon().encode(seg);
        self.observe(state)
    }

    fn normalize(&mut self) -> Result<()> {
        let scores: Vec<f64> = self
            .log_lik
            .iter()
            .zip(&self.predictor.log_priors)
            .map(|(l, p)| l + p)
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::UndefinedPosterior);
        }
        let mut total = 0.0;
        for (post, s) in self.posterior.iter_mut().zip(&scores) {
            *post = (s - max).exp();
            total += *post;
        }
        for post in &mut self.posterior {
            *post /= total;
        }
        Ok(())
    }

    fn check_decision(&mut self) {
        if self.decided.is_none() {
            if let Some(k) = decide(&self.posterior, self.predictor.alpha) {
                self.decided = Some((k, self.segments_seen));
            }
        }
    }

    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    /// Full running log-likelihood `ln P(r_1..r_t | C_k)` of every cluster.
    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.log_lik.iter().map(|l| l + self.common_log).collect()
    }

    pub fn segments_seen(&self) -> usize {
        self.segments_seen
    }

    pub fn last_state(&self) -> State {
        self.last_state
    }

    /// Decided cluster index, if the stopping rule has fired.
    pub fn decided(&self) -> Option<usize> {
        self.decided.map(|(k, _)| k)
    }

    pub fn finish(self) -> Outcome {
        match self.decided {
            None => Outcome::NoPrediction,
            Some((cluster, segments_seen)) => Outcome::Decided { cluster, segments_seen },
        }
    }

    /// Snapshot in the streaming output format.
    pub fn update(&self) -> PosteriorUpdate {
        let models = self.predictor.models.models();
        PosteriorUpdate {
            segments_seen: self.segments_seen,
            posteriors: models
                .iter()
                .zip(&self.posterior)
                .map(|(m, &p)| (m.cluster_id().to_string(), p))
                .collect(),
            decided: self.decided().map(|k| models[k].cluster_id().to_string()),
        }
    }
}

/// One line of streaming prediction output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorUpdate {
    pub segments_seen: usize,
    pub posteriors: BTreeMap<String, f64>,
    pub decided: Option<String>,
}
