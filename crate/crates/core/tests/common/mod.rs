//! Shared helpers: random model/trip cases and a direct batch posterior
//! computed from raw counts, independent of the library's probability code.

#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trip_predict::markov_model::ClusterModel;
use trip_predict::trip_data::State;
use trip_predict::{Error, ModelSet, PiMode, Predictor, PredictorConfig, Trip, UnseenPolicy};

pub struct Case {
    pub models: ModelSet,
    pub priors: Vec<f64>,
    /// Encoded test trip; may contain the unseen state when requested.
    pub trip: Vec<State>,
}

fn random_walk(rng: &mut ChaCha8Rng, n_segments: usize, len: usize) -> Vec<usize> {
    let mut walk = vec![rng.gen_range(0..n_segments)];
    while walk.len() < len {
        let next = rng.gen_range(0..n_segments);
        if Some(&next) != walk.last() {
            walk.push(next);
        }
    }
    walk
}

/// A random model set plus an encoded trip. With `unseen_rate > 0` the trip
/// contains unseen states at roughly that rate.
pub fn random_case(seed: u64, unseen_rate: f64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_segments = rng.gen_range(3..40);
    let n_clusters = rng.gen_range(1..6);
    let n_trips = rng.gen_range(1..25);
    let trips: Vec<Trip> = (0..n_trips)
        .map(|t| {
            let len = rng.gen_range(2..15);
            let names: Vec<String> = random_walk(&mut rng, n_segments, len)
                .into_iter()
                .map(|s| format!("s{s}"))
                .collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            Trip::from_names(format!("t{t:03}"), &refs).unwrap()
        })
        .collect();
    let labels: Vec<usize> = (0..n_trips).map(|_| rng.gen_range(0..n_clusters)).collect();
    let ids: Vec<String> = (0..n_clusters).map(|k| format!("c{k}")).collect();
    let epsilon = 10f64.powf(rng.gen_range(-8.0..-1.0));
    let pi = [PiMode::Ml, PiMode::ClusterUniform, PiMode::GlobalUniform][rng.gen_range(0..3)];
    let refs: Vec<&Trip> = trips.iter().collect();
    let models = ModelSet::train(&refs, &labels, &ids, epsilon, pi).unwrap();

    let raw: Vec<f64> = (0..n_clusters).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let priors = raw.iter().map(|p| p / total).collect();

    let n = models.lexicon().len();
    let len = rng.gen_range(1..30);
    let mut trip: Vec<State> = Vec::with_capacity(len);
    while trip.len() < len {
        let s = if rng.gen_bool(unseen_rate) { n } else { rng.gen_range(0..n) };
        if s == n || trip.last() != Some(&s) {
            trip.push(s);
        }
    }
    Case { models, priors, trip }
}

/// `a_ij` straight from the smoothing formula.
pub fn oracle_transition(m: &ClusterModel, i: State, j: State) -> f64 {
    let n = m.n_states();
    let eps = m.smoothing().epsilon;
    if i == n || j == n {
        return eps / (1.0 + (n as f64 + 1.0) * eps);
    }
    if i == j {
        return 0.0;
    }
    let total = m.row_total(i);
    if total == 0 {
        return 1.0 / (n as f64 - 1.0);
    }
    (m.count(i, j) as f64 / total as f64 + eps) / (1.0 + (n as f64 - 1.0) * eps)
}

/// `pi_i`; an empty cluster under maximum-likelihood `pi` gives zero.
pub fn oracle_initial(m: &ClusterModel, i: State) -> f64 {
    let n = m.n_states();
    if i == n {
        let eps = m.smoothing().epsilon;
        return eps / (1.0 + (n as f64 + 1.0) * eps);
    }
    match m.pi_mode() {
        PiMode::Ml => {
            if m.trips_in_cluster() == 0 {
                0.0
            } else {
                m.start_count(i) as f64 / m.trips_in_cluster() as f64
            }
        }
        PiMode::ClusterUniform => {
            let mut visited: HashSet<State> = m.start_counts().into_iter().map(|(s, _)| s).collect();
            for (a, b, _) in m.transitions() {
                visited.insert(a);
                visited.insert(b);
            }
            if visited.contains(&i) {
                1.0 / visited.len() as f64
            } else {
                0.0
            }
        }
        PiMode::GlobalUniform => 1.0 / n as f64,
    }
}

/// Posterior over clusters after the whole of `trip`, computed in one pass
/// from scratch. `None` when every cluster has zero likelihood.
pub fn batch_posterior(models: &ModelSet, priors: &[f64], trip: &[State]) -> Option<Vec<f64>> {
    let scores: Vec<f64> = models
        .models()
        .iter()
        .zip(priors)
        .map(|(m, p)| {
            let mut s = p.ln() + oracle_initial(m, trip[0]).ln();
            for w in trip.windows(2) {
                s += oracle_transition(m, w[0], w[1]).ln();
            }
            s
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Some(w.iter().map(|x| x / z).collect())
}

/// The trip as seen by the bridging policy: unseen states removed and the
/// resulting repeats collapsed.
pub fn bridge_reduce(trip: &[State], unseen: State) -> Vec<State> {
    let mut out: Vec<State> = Vec::with_capacity(trip.len());
    for &s in trip.iter().filter(|&&s| s != unseen) {
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    out
}

/// Batch posterior of the bridging policy after `prefix`.
pub fn bridge_batch_posterior(models: &ModelSet, priors: &[f64], prefix: &[State]) -> Option<Vec<f64>> {
    let reduced = bridge_reduce(prefix, models.lexicon().unseen());
    if reduced.is_empty() {
        let z: f64 = priors.iter().sum();
        return Some(priors.iter().map(|p| p / z).collect());
    }
    batch_posterior(models, priors, &reduced)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// An alpha so small that the stopping rule never fires.
pub const NEVER_DECIDE: f64 = f64::MIN_POSITIVE;

/// Runs `case.trip` through a session and compares the posterior after every
/// segment with the batch computation. Returns the largest deviation seen.
pub fn streaming_vs_batch(case: &Case, policy: UnseenPolicy) -> Result<f64, String> {
    let config = PredictorConfig { alpha: NEVER_DECIDE, unseen: policy, ..Default::default() };
    let predictor = Predictor::new(&case.models, &case.priors, &config).map_err(|e| e.to_string())?;
    let batch = |t: usize| match policy {
        UnseenPolicy::Literal => batch_posterior(&case.models, &case.priors, &case.trip[..t]),
        UnseenPolicy::Bridge => bridge_batch_posterior(&case.models, &case.priors, &case.trip[..t]),
    };
    let mut worst: f64 = 0.0;
    let mut session = match (predictor.start(case.trip[0]), batch(1)) {
        (Ok(s), Some(expect)) => {
            worst = worst.max(max_abs_diff(s.posterior(), &expect));
            s
        }
        (Err(Error::UndefinedPosterior), None) => return Ok(worst),
        (got, expect) => return Err(format!("step 1: stream {:?} vs batch {expect:?}", got.map(|s| s.posterior().to_vec()))),
    };
    for t in 2..=case.trip.len() {
        match (session.observe(case.trip[t - 1]), batch(t)) {
            (Ok(()), Some(expect)) => worst = worst.max(max_abs_diff(session.posterior(), &expect)),
            (Err(Error::UndefinedPosterior), None) => return Ok(worst),
            (got, expect) => return Err(format!("step {t}: stream {got:?} vs batch {expect:?}")),
        }
    }
    Ok(worst)
}

/// Inserts runs of up to three unseen states before each segment, choosing
/// run lengths from the bits of `mask`. Returns the new trip and, per
/// position, whether it holds an original segment.
pub fn inject_unseen(trip: &[State], unseen: State, mask: u64) -> (Vec<State>, Vec<bool>) {
    let mut out = Vec::new();
    let mut is_real = Vec::new();
    for (k, &s) in trip.iter().enumerate() {
        for _ in 0..((mask >> (2 * (k % 32))) & 3) {
            out.push(unseen);
            is_real.push(false);
        }
        out.push(s);
        is_real.push(true);
    }
    (out, is_real)
}

/// Bit patterns of the posterior after every position flagged in `keep`,
/// stopping early if the posterior becomes undefined.
pub fn posterior_bits(predictor: &Predictor<'_>, trip: &[State], keep: &[bool]) -> Vec<Vec<u64>> {
    let bits = |p: &[f64]| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let mut out = Vec::new();
    let Ok(mut s) = predictor.start(trip[0]) else { return out };
    if keep[0] {
        out.push(bits(s.posterior()));
    }
    for (k, &x) in trip.iter().enumerate().skip(1) {
        if s.observe(x).is_err() {
            break;
        }
        if keep[k] {
            out.push(bits(s.posterior()));
        }
    }
    out
}
