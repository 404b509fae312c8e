//! Trip histories: parsing, validation, run-collapse of repeated segments,
//! and the dense segment index used by training and prediction.
//!
//! The on-disk format is JSON Lines, one trip per line:
//!
//! ```text
//! {"trip_id":"t1","timestamps":[0,5],"segments":["a","b"]}
//! ```
//!
//! with optional `origin_poi`, `destination_poi` and `cluster_id` fields.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense state index. Real segments occupy `0..N`; `N` itself is the unseen state.
pub type State = usize;

/// Opaque road segment identifier (an OSM way ID in real data).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(String);

impl SegmentId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidParameter("empty segment id".into()));
        }
        Ok(SegmentId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One journey: parallel sequences of timestamps (seconds) and segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub trip_id: String,
    pub timestamps: Vec<f64>,
    pub segments: Vec<SegmentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_poi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_poi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<String>,
}

impl Trip {
    /// Builds an unlabeled trip, checking the structural invariants.
    pub fn new(
        trip_id: impl Into<String>,
        timestamps: Vec<f64>,
        segments: Vec<SegmentId>,
    ) -> Result<Self> {
        let trip = Trip {
            trip_id: trip_id.into(),
            timestamps,
            segments,
            origin_poi: None,
            destination_poi: None,
            cluster_id: None,
        };
        trip.validate()?;
        Ok(trip)
    }

    /// Convenience constructor for tests and examples: segment names with
    /// timestamps `0, 1, 2, ...`.
    pub fn from_names(trip_id: impl Into<String>, names: &[&str]) -> Result<Self> {
        let segments = names
            .iter()
            .map(|s| SegmentId::new(*s))
            .collect::<Result<Vec<_>>>()?;
        let timestamps = (0..segments.len()).map(|t| t as f64).collect();
        Trip::new(trip_id, timestamps, segments)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidTrip {
            trip_id: self.trip_id.clone(),
            message,
        };
        if self.trip_id.is_empty() {
            return Err(invalid("empty trip id".into()));
        }
        if self.timestamps.len() != self.segments.len() {
            return Err(invalid(format!(
                "{} timestamps but {} segments",
                self.timestamps.len(),
                self.segments.len()
            )));
        }
        if self.segments.is_empty() {
            return Err(invalid("trip has no segments".into()));
        }
        if self.segments.iter().any(|s| s.0.is_empty()) {
            return Err(invalid("empty segment id".into()));
        }
        if self.timestamps.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(invalid("timestamps must be finite and non-negative".into()));
        }
        if self.timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("timestamps must be non-decreasing".into()));
        }
        Ok(())
    }

    /// True if no two consecutive segments are equal.
    pub fn is_deduplicated(&self) -> bool {
        self.segments.windows(2).all(|w| w[0] != w[1])
    }
}

/// Collapses runs of a repeated segment to their first element, keeping that
/// element's timestamp.
pub fn dedup_consecutive(trip: &Trip) -> Trip {
    let mut timestamps = Vec::with_capacity(trip.len());
    let mut segments: Vec<SegmentId> = Vec::with_capacity(trip.len());
    for (t, s) in trip.timestamps.iter().zip(&trip.segments) {
        if segments.last() != Some(s) {
            segments.push(s.clone());
            timestamps.push(*t);
        }
    }
    Trip {
        timestamps,
        segments,
        ..trip.clone()
    }
}

/// A driver's trip history. Trip ids are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    trips: Vec<Trip>,
}

impl History {
    pub fn new(trips: Vec<Trip>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(trips.len());
        for trip in &trips {
            trip.validate()?;
            if !seen.insert(trip.trip_id.as_str()) {
                return Err(Error::DuplicateTrip(trip.trip_id.clone()));
            }
        }
        Ok(History { trips })
    }

    pub fn trips(&self) -> &[Trip] {
        &self.trips
    }

    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    pub fn get(&self, trip_id: &str) -> Option<&Trip> {
        self.trips.iter().find(|t| t.trip_id == trip_id)
    }

    /// Applies [`dedup_consecutive`] to every trip.
    pub fn deduplicated(&self) -> History {
        History {
            trips: self.trips.iter().map(dedup_consecutive).collect(),
        }
    }

    pub fn into_trips(self) -> Vec<Trip> {
        self.trips
    }
}

/// Reads a trip-JSONL stream. Blank lines are skipped; no dedup is applied.
pub fn parse_trips<R: BufRead>(input: R) -> Result<History> {
    let mut trips = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trip: Trip = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        trips.push(trip);
    }
    History::new(trips)
}

pub fn write_trips<W: Write>(history: &History, mut out: W) -> Result<()> {
    for trip in history.trips() {
        serde_json::to_writer(&mut out, trip)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Bijection between the segments seen in training and `0..N`, plus the
/// reserved unseen state `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    segments: Vec<SegmentId>,
    index: HashMap<SegmentId, State>,
}

impl Lexicon {
    /// Indexes segments by first appearance over trips sorted by trip id.
    pub fn build(history: &History) -> Result<Self> {
        Self::from_trips(history.trips().iter())
    }

    pub fn from_trips<'a>(trips: impl IntoIterator<Item = &'a Trip>) -> Result<Self> {
        let mut trips: Vec<&Trip> = trips.into_iter().collect();
        if trips.is_empty() {
            return Err(Error::EmptyHistory);
        }
        trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
        let mut lexicon = Lexicon {
            segments: Vec::new(),
            index: HashMap::new(),
        };
        for seg in trips.iter().flat_map(|t| &t.segments) {
            if !lexicon.index.contains_key(seg) {
                lexicon.index.insert(seg.clone(), lexicon.segments.len());
                lexicon.segments.push(seg.clone());
            }
        }
        Ok(lexicon)
    }

    /// Rebuilds a lexicon from its index-ordered segment list.
    pub fn from_segments(segments: Vec<SegmentId>) -> Result<Self> {
        let mut index = HashMap::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            if index.insert(seg.clone(), i).is_some() {
                return Err(Error::Bundle(format!("segment {seg} listed twice")));
            }
        }
        Ok(Lexicon { segments, index })
    }

    /// Number of real states `N`.
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// The unseen state `u`, equal to `N`.
    pub fn unseen(&self) -> State {
        self.segments.len()
    }

    pub fn get(&self, seg: &SegmentId) -> Option<State> {
        self.index.get(seg).copied()
    }

    /// Maps a segment to its state, or to `u` if it was never seen.
    pub fn encode(&self, seg: &SegmentId) -> State {
        self.get(seg).unwrap_or_else(|| self.unseen())
    }

    /// Inverse of [`Lexicon::encode`] for real states; `None` for `u`.
    pub fn decode(&self, state: State) -> Option<&SegmentId> {
        self.segments.get(state)
    }

    pub fn segments(&self) -> &[SegmentId] {
        &self.segments
    }
}

pub fn encode_trip(trip: &Trip, lexicon: &Lexicon) -> Vec<State> {
    trip.segments.iter().map(|s| lexicon.encode(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: String,
    pub trip_ids: Vec<String>,
}

/// A partition of a history into clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut trips = HashSet::new();
        for c in &clusters {
            if !ids.insert(c.cluster_id.as_str()) {
                return Err(Error::InvalidClusters(format!(
                    "cluster id {} used twice",
                    c.cluster_id
                )));
            }
            for t in &c.trip_ids {
                if !trips.insert(t.as_str()) {
                    return Err(Error::InvalidClusters(format!(
                        "trip {t} appears in more than one cluster"
                    )));
                }
            }
        }
        Ok(ClusterSet { clusters })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.clusters.iter().map(|c| c.cluster_id.clone()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.trip_ids.len()).collect()
    }

    /// Checks that every history trip lies in exactly one cluster and no
    /// cluster references an unknown trip.
    pub fn check_partition(&self, history: &History) -> Result<()> {
        let known: HashSet<&str> = history.trips().iter().map(|t| t.trip_id.as_str()).collect();
        let mut covered = 0usize;
        for c in &self.clusters {
            for t in &c.trip_ids {
                if !known.contains(t.as_str()) {
                    return Err(Error::InvalidClusters(format!(
                        "cluster {} references unknown trip {t}",
                        c.cluster_id
                    )));
                }
                covered += 1;
            }
        }
        if covered != history.len() {
            return Err(Error::InvalidClusters(format!(
                "{} of {} trips are unclustered",
                history.len() - covered,
                history.len()
            )));
        }
        Ok(())
    }

    /// Cluster index of every history trip, in history order.
    pub fn labels(&self, history: &History) -> Result<Vec<usize>> {
        self.check_partition(history)?;
        let by_trip: HashMap<&str, usize> = self
            .clusters
            .iter()
            .enumerate()
            .flat_map(|(k, c)| c.trip_ids.iter().map(move |t| (t.as_str(), k)))
            .collect();
        Ok(history
            .trips()
            .iter()
            .map(|t| by_trip[t.trip_id.as_str()])
            .collect())
    }

    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let raw: ClusterSet = serde_json::from_reader(r)?;
        ClusterSet::new(raw.clusters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(s: &str) -> SegmentId {
        SegmentId::new(s).unwrap()
    }

    #[test]
    fn parses_single_record() {
        let input = r#"{"trip_id":"t1","timestamps":[0,5],"segments":["a","b"]}"#;
        let h = parse_trips(input.as_bytes()).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.trips()[0].len(), 2);
        assert_eq!(h.trips()[0].timestamps, vec![0.0, 5.0]);
    }

    #[test]
    fn parses_empty_input() {
        assert!(parse_trips("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn rejects_length_mismatch() {
        let input = r#"{"trip_id":"t1","timestamps":[0,5],"segments":["a","b","c"]}"#;
        assert!(matches!(
            parse_trips(input.as_bytes()),
            Err(Error::InvalidTrip { .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = "{\"trip_id\":\"t1\",\"timestamps\":[0],\"segments\":[\"a\"]}\n{oops\n";
        match parse_trips(input.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_timestamps() {
        let a = Trip::from_names("t", &["a"]).unwrap();
        assert!(matches!(
            History::new(vec![a.clone(), a]),
            Err(Error::DuplicateTrip(_))
        ));
        assert!(Trip::new("t", vec![3.0, 1.0], vec![seg("a"), seg("b")]).is_err());
        assert!(Trip::new("t", vec![-1.0], vec![seg("a")]).is_err());
        assert!(Trip::new("t", vec![], vec![]).is_err());
    }

    #[test]
    fn optional_labels_round_trip() {
        let input = r#"{"trip_id":"t1","timestamps":[0.0],"segments":["a"],"origin_poi":"home","destination_poi":"work","cluster_id":"r1"}"#;
        let h = parse_trips(input.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_trips(&h, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().trim(), input);
    }

    #[test]
    fn dedup_collapses_runs() {
        let t = Trip::from_names("t", &["a", "a", "b", "b", "c"]).unwrap();
        let d = dedup_consecutive(&t);
        assert_eq!(d.segments, vec![seg("a"), seg("b"), seg("c")]);
        assert_eq!(d.timestamps, vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn dedup_identity_cases() {
        let single = Trip::from_names("t", &["a"]).unwrap();
        assert_eq!(dedup_consecutive(&single), single);
        let aba = Trip::from_names("t", &["a", "b", "a"]).unwrap();
        assert_eq!(dedup_consecutive(&aba), aba);
    }

    #[test]
    fn lexicon_counts_distinct_segments() {
        let h = History::new(vec![
            Trip::from_names("t1", &["a", "b"]).unwrap(),
            Trip::from_names("t2", &["b", "c"]).unwrap(),
        ])
        .unwrap();
        let lex = Lexicon::build(&h).unwrap();
        assert_eq!(lex.len(), 3);
        assert_eq!(lex.unseen(), 3);
        assert_eq!(lex.get(&seg("a")), Some(0));
        assert_eq!(lex.get(&seg("c")), Some(2));
    }

    #[test]
    fn lexicon_single_repeated_segment() {
        let h = History::new(vec![Trip::from_names("t", &["a", "a", "a"]).unwrap()])
            .unwrap()
            .deduplicated();
        assert_eq!(Lexicon::build(&h).unwrap().len(), 1);
    }

    #[test]
    fn lexicon_rejects_empty_history() {
        assert!(matches!(
            Lexicon::build(&History::default()),
            Err(Error::EmptyHistory)
        ));
    }

    #[test]
    fn lexicon_order_follows_sorted_trip_ids() {
        let h = History::new(vec![
            Trip::from_names("t2", &["z"]).unwrap(),
            Trip::from_names("t1", &["y"]).unwrap(),
        ])
        .unwrap();
        let lex = Lexicon::build(&h).unwrap();
        assert_eq!(lex.get(&seg("y")), Some(0));
        assert_eq!(lex.get(&seg("z")), Some(1));
    }

    #[test]
    fn encode_maps_unknown_to_unseen() {
        let h = History::new(vec![Trip::from_names("t", &["a", "b"]).unwrap()]).unwrap();
        let lex = Lexicon::build(&h).unwrap();
        let ab = Trip::from_names("q", &["a", "b"]).unwrap();
        assert_eq!(encode_trip(&ab, &lex), vec![0, 1]);

        let only_a = Lexicon::from_segments(vec![seg("a")]).unwrap();
        let ax = Trip::from_names("q", &["a", "x"]).unwrap();
        assert_eq!(encode_trip(&ax, &only_a), vec![0, 1]);
        assert_eq!(only_a.unseen(), 1);
        let xy = Trip::from_names("q", &["x", "y"]).unwrap();
        assert_eq!(encode_trip(&xy, &only_a), vec![1, 1]);
    }

    #[test]
    fn cluster_set_partition_checks() {
        let h = History::new(vec![
            Trip::from_names("t1", &["a"]).unwrap(),
            Trip::from_names("t2", &["b"]).unwrap(),
        ])
        .unwrap();
        let ok = ClusterSet::new(vec![
            Cluster { cluster_id: "x".into(), trip_ids: vec!["t2".into()] },
            Cluster { cluster_id: "y".into(), trip_ids: vec!["t1".into()] },
        ])
        .unwrap();
        assert_eq!(ok.labels(&h).unwrap(), vec![1, 0]);

        let missing = ClusterSet::new(vec![Cluster {
            cluster_id: "x".into(),
            trip_ids: vec!["t1".into()],
        }])
        .unwrap();
        assert!(missing.check_partition(&h).is_err());

        assert!(ClusterSet::new(vec![
            Cluster { cluster_id: "x".into(), trip_ids: vec!["t1".into()] },
            Cluster { cluster_id: "y".into(), trip_ids: vec!["t1".into()] },
        ])
        .is_err());
    }

    fn arb_trip() -> impl Strategy<Value = Trip> {
        prop::collection::vec(0u8..4, 1..30).prop_map(|xs| {
            let names: Vec<String> = xs.iter().map(|x| format!("s{x}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            Trip::from_names("t", &refs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(trip in arb_trip()) {
            let once = dedup_consecutive(&trip);
            prop_assert!(once.is_deduplicated());
            prop_assert_eq!(dedup_consecutive(&once), once);
        }

        #[test]
        fn encode_decode_identity(trips in prop::collection::vec(arb_trip(), 1..6)) {
            let trips: Vec<Trip> = trips
                .into_iter()
                .enumerate()
                .map(|(i, t)| Trip { trip_id: format!("t{i}"), ..t })
                .collect();
            let h = History::new(trips).unwrap();
            let lex = Lexicon::build(&h).unwrap();
            for t in h.trips() {
                let decoded: Vec<SegmentId> = encode_trip(t, &lex)
                    .into_iter()
                    .map(|s| lex.decode(s).unwrap().clone())
                    .collect();
                prop_assert_eq!(&decoded, &t.segments);
            }
        }

        #[test]
        fn lexicon_size_ignores_trip_order(
            trips in prop::collection::vec(arb_trip(), 1..6),
            rot in 0usize..6,
        ) {
            let trips: Vec<Trip> = trips
                .into_iter()
                .enumerate()
                .map(|(i, t)| Trip { trip_id: format!("t{i}"), ..t })
                .collect();
            let mut rotated = trips.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            let a = Lexicon::build(&History::new(trips).unwrap()).unwrap();
            let b = Lexicon::build(&History::new(rotated).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
