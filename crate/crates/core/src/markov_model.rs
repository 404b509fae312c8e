//! Per-cluster first-order Markov chains over road segments.
//!
//! Each [`ClusterModel`] keeps raw transition and start counts. Smoothed
//! probabilities are derived on demand: for a row `i` with data and any real
//! `j != i`,
//!
//! ```text
//! a_ij = (c_ij / c_i + eps) / (1 + (N - 1) eps)
//! ```
//!
//! Self-loops have probability zero, rows never transitioned from are uniform
//! over the `N - 1` off-diagonal states, and any transition touching the
//! unseen state `u = N` has the constant probability `eps / (1 + (N + 1) eps)`.
//! Because only counts are stored, `eps` and the initial-distribution mode can
//! be changed without retraining.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trip_data::{encode_trip, Lexicon, SegmentId, State, Trip};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// How the initial distribution `pi` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiMode {
    /// Fraction of the cluster's trips starting at each state.
    Ml,
    /// Uniform over the states appearing anywhere in the cluster.
    ClusterUniform,
    /// `1 / N` for every real state.
    #[default]
    GlobalUniform,
}

/// Smoothing constants for a lexicon of `n_states` real segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub epsilon: f64,
    /// Probability of any transition touching the unseen state.
    pub bar_epsilon: f64,
    /// Row normaliser `1 + (N - 1) eps`.
    norm: f64,
}

impl SmoothingParams {
    pub fn new(epsilon: f64, n_states: usize) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
        }
        let n = n_states as f64;
        Ok(SmoothingParams {
            epsilon,
            bar_epsilon: epsilon / (1.0 + (n + 1.0) * epsilon),
            norm: 1.0 + (n - 1.0) * epsilon,
        })
    }

    /// Lower bound on every smoothed off-diagonal transition between real states.
    pub fn floor(&self) -> f64 {
        self.epsilon / self.norm
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Row {
    total: u64,
    /// Successor counts sorted by state.
    next: Vec<(State, u64)>,
}

impl Row {
    fn count(&self, j: State) -> u64 {
        self.next
            .binary_search_by_key(&j, |&(s, _)| s)
            .map(|k| self.next[k].1)
            .unwrap_or(0)
    }
}

/// Markov chain of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    cluster_id: String,
    n_states: usize,
    rows: HashMap<State, Row>,
    start_counts: HashMap<State, u64>,
    trips_in_cluster: u64,
    visited: HashSet<State>,
    pi_mode: PiMode,
    smoothing: SmoothingParams,
}

impl ClusterModel {
    /// Counts transitions and starting states of a cluster's encoded trips.
    ///
    /// Trips must be encoded against a lexicon of `n_states` segments, contain
    /// no unseen state and no repeated consecutive state. An empty cluster is
    /// legal.
    pub fn train(
        cluster_id: impl Into<String>,
        trips: &[Vec<State>],
        n_states: usize,
        epsilon: f64,
        pi_mode: PiMode,
    ) -> Result<Self> {
        let cluster_id = cluster_id.into();
        let mut pairs: HashMap<(State, State), u64> = HashMap::new();
        let mut start_counts: HashMap<State, u64> = HashMap::new();
        for trip in trips {
            let Some(&first) = trip.first() else {
                return Err(Error::InvalidParameter(format!(
                    "empty encoded trip in cluster {cluster_id}"
                )));
            };
            if let Some(&s) = trip.iter().find(|&&s| s >= n_states) {
                return Err(Error::StateOutOfRange { state: s, n_states });
            }
            if trip.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "self-transition in training trip of cluster {cluster_id}; deduplicate first"
                )));
            }
            *start_counts.entry(first).or_default() += 1;
            for w in trip.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += 1;
            }
        }
        Self::from_counts(
            cluster_id,
            n_states,
            pairs.into_iter().map(|((i, j), c)| (i, j, c)),
            start_counts,
            trips.len() as u64,
            epsilon,
            pi_mode,
        )
    }

    fn from_counts(
        cluster_id: String,
        n_states: usize,
        transitions: impl IntoIterator<Item = (State, State, u64)>,
        start_counts: HashMap<State, u64>,
        trips_in_cluster: u64,
        epsilon: f64,
        pi_mode: PiMode,
    ) -> Result<Self> {
        let mut rows: HashMap<State, Row> = HashMap::new();
        let mut visited: HashSet<State> = HashSet::new();
        for (i, j, c) in transitions {
            if i >= n_states || j >= n_states {
                return Err(Error::StateOutOfRange { state: i.max(j), n_states });
            }
            if i == j {
                return Err(Error::Bundle(format!("self-loop count at state {i}")));
            }
            if c == 0 {
                continue;
            }
            let row = rows.entry(i).or_default();
            row.total += c;
            row.next.push((j, c));
            visited.insert(i);
            visited.insert(j);
        }
        for row in rows.values_mut() {
            row.next.sort_unstable();
            if row.next.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Bundle("repeated transition entry".into()));
            }
        }
        if start_counts.values().sum::<u64>() != trips_in_cluster {
            return Err(Error::Bundle(format!(
                "start counts of {cluster_id} do not sum to its trip count"
            )));
        }
        for (&s, &c) in &start_counts {
            if s >= n_states {
                return Err(Error::StateOutOfRange { state: s, n_states });
            }
            if c > 0 {
                visited.insert(s);
            }
        }
        Ok(ClusterModel {
            cluster_id,
            n_states,
            rows,
            start_counts,
            trips_in_cluster,
            visited,
            pi_mode,
            smoothing: SmoothingParams::new(epsilon, n_states)?,
        })
    }

    pub fn cluster_id(&self) -> &str {
        &self.cluster_id
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn unseen(&self) -> State {
        self.n_states
    }

    pub fn trips_in_cluster(&self) -> u64 {
        self.trips_in_cluster
    }

    pub fn pi_mode(&self) -> PiMode {
        self.pi_mode
    }

    pub fn smoothing(&self) -> SmoothingParams {
        self.smoothing
    }

    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        self.smoothing = SmoothingParams::new(epsilon, self.n_states)?;
        Ok(())
    }

    pub fn set_pi_mode(&mut self, pi_mode: PiMode) {
        self.pi_mode = pi_mode;
    }

    pub fn count(&self, i: State, j: State) -> u64 {
        self.rows.get(&i).map_or(0, |r| r.count(j))
    }

    pub fn row_total(&self, i: State) -> u64 {
        self.rows.get(&i).map_or(0, |r| r.total)
    }

    pub fn start_count(&self, i: State) -> u64 {
        self.start_counts.get(&i).copied().unwrap_or(0)
    }

    /// All non-zero transition counts as `(from, to, count)`, sorted.
    pub fn transitions(&self) -> Vec<(State, State, u64)> {
        let mut out: Vec<_> = self
            .rows
            .iter()
            .flat_map(|(&i, r)| r.next.iter().map(move |&(j, c)| (i, j, c)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn start_counts(&self) -> Vec<(State, u64)> {
        let mut out: Vec<_> = self
            .start_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&s, &c)| (s, c))
            .collect();
        out.sort_unstable();
        out
    }

    fn check(&self, s: State) -> Result<()> {
        if s > self.n_states {
            return Err(Error::StateOutOfRange { state: s, n_states: self.n_states });
        }
        Ok(())
    }

    /// Smoothed transition probability `a_ij`; `u = N` is accepted.
    pub fn transition_prob(&self, i: State, j: State) -> Result<f64> {
        self.check(i)?;
        self.check(j)?;
        let u = self.unseen();
        if i == u || j == u {
            return Ok(self.smoothing.bar_epsilon);
        }
        if i == j {
            return Ok(0.0);
        }
        match self.rows.get(&i) {
            Some(row) => {
                let ml = row.count(j) as f64 / row.total as f64;
                Ok((ml + self.smoothing.epsilon) / self.smoothing.norm)
            }
            None => Ok(1.0 / (self.n_states - 1) as f64),
        }
    }

    /// Initial probability `pi_i` under the model's [`PiMode`]; `u` gets `bar_epsilon`.
    pub fn initial_prob(&self, i: State) -> Result<f64> {
        self.check(i)?;
        if i == self.unseen() {
            return Ok(self.smoothing.bar_epsilon);
        }
        match self.pi_mode {
            PiMode::Ml => {
                if self.trips_in_cluster == 0 {
                    return Err(Error::EmptyClusterMl(self.cluster_id.clone()));
                }
                Ok(self.start_count(i) as f64 / self.trips_in_cluster as f64)
            }
            PiMode::ClusterUniform => {
                if self.visited.contains(&i) {
                    Ok(1.0 / self.visited.len() as f64)
                } else {
                    Ok(0.0)
                }
            }
            PiMode::GlobalUniform => Ok(1.0 / self.n_states as f64),
        }
    }

    pub fn ln_transition(&self, i: State, j: State) -> Result<f64> {
        self.transition_prob(i, j).map(f64::ln)
    }

    pub fn ln_initial(&self, i: State) -> Result<f64> {
        self.initial_prob(i).map(f64::ln)
    }

    /// `ln pi_{r_1} + sum_t ln a_{r_{t-1} r_t}`; may be `-inf`.
    pub fn trip_log_likelihood(&self, trip: &[State]) -> Result<f64> {
        let (&first, _) = trip
            .split_first()
            .ok_or_else(|| Error::InvalidParameter("empty trip".into()))?;
        let mut ll = self.ln_initial(first)?;
        for w in trip.windows(2) {
            ll += self.ln_transition(w[0], w[1])?;
        }
        Ok(ll)
    }

    /// One step of the likelihood recursion: `prev + ln a_{from,to}`.
    pub fn step_log_likelihood(&self, prev: f64, from: State, to: State) -> Result<f64> {
        Ok(prev + self.ln_transition(from, to)?)
    }
}

/// A lexicon together with one trained chain per cluster, indexed like the
/// cluster set they were trained from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    lexicon: Lexicon,
    models: Vec<ClusterModel>,
}

impl ModelSet {
    /// Trains chains for `cluster_ids` from `trips`, where `labels[m]` is the
    /// cluster index of `trips[m]`. The lexicon is built from `trips` alone;
    /// clusters without trips get empty models.
    pub fn train(
        trips: &[&Trip],
        labels: &[usize],
        cluster_ids: &[String],
        epsilon: f64,
        pi_mode: PiMode,
    ) -> Result<Self> {
        if trips.len() != labels.len() {
            return Err(Error::InvalidParameter("one label per trip required".into()));
        }
        let lexicon = Lexicon::from_trips(trips.iter().copied())?;
        let mut grouped: Vec<Vec<Vec<State>>> = vec![Vec::new(); cluster_ids.len()];
        for (trip, &k) in trips.iter().zip(labels) {
            let slot = grouped.get_mut(k).ok_or_else(|| {
                Error::InvalidClusters(format!("label {k} outside {} clusters", cluster_ids.len()))
            })?;
            slot.push(encode_trip(trip, &lexicon));
        }
        let models = cluster_ids
            .iter()
            .zip(&grouped)
            .map(|(id, ts)| ClusterModel::train(id.clone(), ts, lexicon.len(), epsilon, pi_mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelSet { lexicon, models })
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn models(&self) -> &[ClusterModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn cluster_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.cluster_id.clone()).collect()
    }

    pub fn encode(&self, trip: &Trip) -> Vec<State> {
        encode_trip(trip, &self.lexicon)
    }

    /// Re-smooths every model in place.
    pub fn reconfigure(&mut self, epsilon: f64, pi_mode: PiMode) -> Result<()> {
        for m in &mut self.models {
            m.set_epsilon(epsilon)?;
            m.set_pi_mode(pi_mode);
        }
        Ok(())
    }

    pub fn to_bundle(&self) -> ModelBundle {
        let (epsilon, pi_mode) = self
            .models
            .first()
            .map(|m| (m.smoothing.epsilon, m.pi_mode))
            .unwrap_or((1e-6, PiMode::default()));
        ModelBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            epsilon,
            pi_mode,
            lexicon: self.lexicon.segments().to_vec(),
            clusters: self
                .models
                .iter()
                .map(|m| ClusterCounts {
                    cluster_id: m.cluster_id.clone(),
                    trips_in_cluster: m.trips_in_cluster,
                    start_counts: m.start_counts(),
                    transitions: m.transitions(),
                })
                .collect(),
        }
    }

    pub fn from_bundle(bundle: ModelBundle) -> Result<Self> {
        if bundle.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Bundle(format!(
                "unsupported format version {}",
                bundle.format_version
            )));
        }
        let lexicon = Lexicon::from_segments(bundle.lexicon)?;
        let n = lexicon.len();
        let models = bundle
            .clusters
            .into_iter()
            .map(|c| {
                ClusterModel::from_counts(
                    c.cluster_id,
                    n,
                    c.transitions,
                    c.start_counts.into_iter().collect(),
                    c.trips_in_cluster,
                    bundle.epsilon,
                    bundle.pi_mode,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelSet { lexicon, models })
    }
}

/// Serialized form of a [`ModelSet`]: raw counts plus smoothing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub epsilon: f64,
    pub pi_mode: PiMode,
    /// Segment ids in state order.
    pub lexicon: Vec<SegmentId>,
    pub clusters: Vec<ClusterCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub cluster_id: String,
    pub trips_in_cluster: u64,
    /// `(state, count)` pairs.
    pub start_counts: Vec<(State, u64)>,
    /// `(from, to, count)` triples.
    pub transitions: Vec<(State, State, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(trips: &[Vec<State>], n: usize, eps: f64, pi: PiMode) -> ClusterModel {
        ClusterModel::train("c", trips, n, eps, pi).unwrap()
    }

    #[test]
    fn counts_adjacent_pairs() {
        let m = model(&[vec![0, 1, 2], vec![0, 1, 3]], 4, 0.01, PiMode::Ml);
        assert_eq!(m.count(0, 1), 2);
        assert_eq!(m.count(1, 2), 1);
        assert_eq!(m.count(1, 3), 1);
        assert_eq!(m.count(2, 3), 0);
        assert_eq!(m.row_total(0), 2);
        assert_eq!(m.row_total(1), 2);
        assert_eq!(m.start_count(0), 2);
        assert_eq!(m.trips_in_cluster(), 2);
    }

    #[test]
    fn single_segment_and_empty_clusters() {
        let m = model(&[vec![5]], 6, 0.01, PiMode::Ml);
        assert!(m.transitions().is_empty());
        assert_eq!(m.start_count(5), 1);
        let e = model(&[], 6, 0.01, PiMode::GlobalUniform);
        assert!(e.transitions().is_empty());
        assert_eq!(e.trips_in_cluster(), 0);
    }

    #[test]
    fn training_rejects_unseen_and_self_loops() {
        assert!(ClusterModel::train("c", &[vec![0, 4]], 4, 0.01, PiMode::Ml).is_err());
        assert!(ClusterModel::train("c", &[vec![0, 0]], 4, 0.01, PiMode::Ml).is_err());
    }

    #[test]
    fn smoothed_transition_examples() {
        let m = model(&[vec![1, 2]], 4, 0.01, PiMode::GlobalUniform);
        let a12 = m.transition_prob(1, 2).unwrap();
        let a13 = m.transition_prob(1, 3).unwrap();
        assert!((a12 - 1.01 / 1.03).abs() < 1e-15);
        assert!((a12 - 0.980583).abs() < 1e-6);
        assert!((a13 - 0.01 / 1.03).abs() < 1e-15);
        assert!((a13 - 0.009709).abs() < 1e-6);
        assert_eq!(m.transition_prob(1, 1).unwrap(), 0.0);
    }

    #[test]
    fn unseen_transitions_use_bar_epsilon() {
        let m = model(&[vec![1, 2]], 4, 0.01, PiMode::GlobalUniform);
        let bar: f64 = 0.01 / 1.05;
        assert!((bar - 0.009524).abs() < 1e-6);
        for (i, j) in [(4, 1), (1, 4), (4, 4)] {
            assert!((m.transition_prob(i, j).unwrap() - bar).abs() < 1e-17);
        }
        assert!((m.initial_prob(4).unwrap() - bar).abs() < 1e-17);
        assert!(m.transition_prob(5, 1).is_err());
    }

    #[test]
    fn unvisited_row_is_uniform() {
        let m = model(&[vec![1, 2]], 4, 0.01, PiMode::GlobalUniform);
        for j in [1, 2, 3] {
            assert!((m.transition_prob(0, j).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn initial_probability_modes() {
        let trips = [vec![0, 1], vec![0, 3], vec![2, 1]];
        let ml = model(&trips, 4, 0.01, PiMode::Ml);
        assert!((ml.initial_prob(0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((ml.initial_prob(2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ml.initial_prob(1).unwrap(), 0.0);

        let g = model(&[vec![0, 1]], 100, 0.01, PiMode::GlobalUniform);
        assert!((g.initial_prob(57).unwrap() - 0.01).abs() < 1e-15);

        let cu = model(&[vec![0, 1], vec![1, 2]], 5, 0.01, PiMode::ClusterUniform);
        for i in 0..3 {
            assert!((cu.initial_prob(i).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(cu.initial_prob(3).unwrap(), 0.0);

        let empty = model(&[], 5, 0.01, PiMode::Ml);
        assert!(matches!(empty.initial_prob(0), Err(Error::EmptyClusterMl(_))));
    }

    #[test]
    fn likelihood_examples() {
        let g = model(&[vec![0, 1]], 4, 0.01, PiMode::GlobalUniform);
        assert!((g.trip_log_likelihood(&[0]).unwrap() - 0.25f64.ln()).abs() < 1e-15);

        let m = model(&[vec![0, 1]], 4, 0.01, PiMode::GlobalUniform);
        let expect = (0.25f64 * (1.01 / 1.03)).ln();
        assert!((m.trip_log_likelihood(&[0, 1]).unwrap() - expect).abs() < 1e-12);

        let ml = model(&[vec![0, 1]], 4, 0.01, PiMode::Ml);
        assert_eq!(ml.trip_log_likelihood(&[2, 1]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn step_examples() {
        // Row 0 goes to 1 and 2 equally: a_01 = (0.5 + eps) / (1 + 2 eps) = 0.5 exactly for N = 3.
        let m = model(&[vec![0, 1], vec![0, 2]], 3, 0.01, PiMode::GlobalUniform);
        let p = m.transition_prob(0, 1).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        let s = m.step_log_likelihood(0.5f64.ln(), 0, 1).unwrap();
        assert!((s - 0.25f64.ln()).abs() < 1e-15);
        assert_eq!(
            m.step_log_likelihood(f64::NEG_INFINITY, 0, 1).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn bundle_round_trip_preserves_counts() {
        let trips = [
            Trip::from_names("t1", &["a", "b", "c"]).unwrap(),
            Trip::from_names("t2", &["a", "b", "d"]).unwrap(),
            Trip::from_names("t3", &["x"]).unwrap(),
        ];
        let refs: Vec<&Trip> = trips.iter().collect();
        let set = ModelSet::train(
            &refs,
            &[0, 0, 1],
            &["c0".into(), "c1".into(), "c2".into()],
            1e-4,
            PiMode::ClusterUniform,
        )
        .unwrap();
        let json = serde_json::to_string(&set.to_bundle()).unwrap();
        let back = ModelSet::from_bundle(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, set);
        assert_eq!(serde_json::to_string(&back.to_bundle()).unwrap(), json);
    }

    #[test]
    fn bundle_rejects_bad_version() {
        let mut b = ModelSet::train(
            &[&Trip::from_names("t", &["a", "b"]).unwrap()],
            &[0],
            &["c".into()],
            1e-3,
            PiMode::Ml,
        )
        .unwrap()
        .to_bundle();
        b.format_version = 99;
        assert!(ModelSet::from_bundle(b).is_err());
    }

    /// Random deduplicated trips over `n` states.
    fn arb_trips(n: usize) -> impl Strategy<Value = Vec<Vec<State>>> {
        prop::collection::vec(
            prop::collection::vec(0..n, 1..20).prop_map(|mut t| {
                t.dedup();
                t
            }),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn rows_are_stochastic_with_floor(trips in arb_trips(7), eps in 1e-7f64..0.2) {
            let n = 7;
            let m = model(&trips, n, eps, PiMode::GlobalUniform);
            let floor = eps / (1.0 + (n as f64 - 1.0) * eps);
            prop_assert!(m.smoothing().bar_epsilon < eps && m.smoothing().bar_epsilon > 0.0);
            for i in 0..n {
                let mut sum = 0.0;
                for j in 0..n {
                    let p = m.transition_prob(i, j).unwrap();
                    if i != j {
                        prop_assert!(p >= floor * (1.0 - 1e-12));
                    }
                    sum += p;
                }
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn count_consistency(trips in arb_trips(9)) {
            let m = model(&trips, 9, 0.01, PiMode::Ml);
            let total: u64 = m.transitions().iter().map(|t| t.2).sum();
            let expect: usize = trips.iter().map(|t| t.len() - 1).sum();
            prop_assert_eq!(total as usize, expect);
            for i in 0..9 {
                let row: u64 = (0..9).map(|j| m.count(i, j)).sum();
                prop_assert_eq!(row, m.row_total(i));
                prop_assert_eq!(m.count(i, i), 0);
            }
            let starts: u64 = m.start_counts().iter().map(|s| s.1).sum();
            prop_assert_eq!(starts, m.trips_in_cluster());
        }

        #[test]
        fn ml_limit(trips in arb_trips(6)) {
            let m = model(&trips, 6, 1e-12, PiMode::GlobalUniform);
            for i in 0..6 {
                let total = m.row_total(i);
                if total == 0 { continue; }
                for j in (0..6).filter(|&j| j != i) {
                    let ml = m.count(i, j) as f64 / total as f64;
                    prop_assert!((m.transition_prob(i, j).unwrap() - ml).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn recursive_matches_batch(
            trips in arb_trips(8),
            probe in prop::collection::vec(0usize..9, 1..40),
            pi in prop_oneof![Just(PiMode::Ml), Just(PiMode::ClusterUniform), Just(PiMode::GlobalUniform)],
        ) {
            let m = model(&trips, 8, 1e-3, pi);
            let Ok(init) = m.ln_initial(probe[0]) else { return Ok(()); };
            let mut ll = init;
            for w in probe.windows(2) {
                ll = m.step_log_likelihood(ll, w[0], w[1]).unwrap();
            }
            let batch = m.trip_log_likelihood(&probe).unwrap();
            if batch.is_finite() {
                prop_assert!((ll - batch).abs() < 1e-12);
            } else {
                prop_assert_eq!(ll, batch);
            }
        }
    }

    #[test]
    fn own_cluster_beats_disjoint_cluster() {
        let own = model(&[vec![0, 1, 2, 3], vec![0, 1, 4]], 10, 1e-4, PiMode::GlobalUniform);
        let other = model(&[vec![5, 6, 7], vec![8, 9]], 10, 1e-4, PiMode::GlobalUniform);
        for t in [vec![0, 1, 2, 3], vec![0, 1, 4]] {
            assert!(own.trip_log_likelihood(&t).unwrap() > other.trip_log_likelihood(&t).unwrap());
        }
    }
}
