//! Partitioning a trip history into journey patterns, either by
//! origin/destination key or by route similarity with average-linkage
//! agglomerative clustering.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trip_data::{Cluster, ClusterSet, History, Lexicon, Trip};

/// Default dissimilarity cut for route clustering.
pub const DEFAULT_ROUTE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    /// `|A ∩ B| / |A ∪ B|`
    #[default]
    Jaccard,
    /// `2 |A ∩ B| / (|A| + |B|)`
    SharedOverTotal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusteringMode {
    Od,
    Route,
}

/// Clusters a history with the given mode; `threshold` and `measure` only
/// apply to route clustering.
pub fn cluster(history: &History, mode: ClusteringMode, threshold: f64, measure: Similarity) -> Result<ClusterSet> {
    match mode {
        ClusteringMode::Od => cluster_by_od(history),
        ClusteringMode::Route => cluster_by_route(history, threshold, measure),
    }
}

/// Groups trips whose origin and destination keys coincide.
///
/// The key is the `(origin_poi, destination_poi)` label pair when every trip
/// carries both labels, otherwise the `(first, last)` segment pair. Cluster
/// ids are `"<origin>-><destination>"`, listed in key order.
pub fn cluster_by_od(history: &History) -> Result<ClusterSet> {
    let labeled = history
        .trips()
        .iter()
        .filter(|t| t.origin_poi.is_some() && t.destination_poi.is_some())
        .count();
    let unlabeled = history.len() - labeled;
    if labeled > 0 && unlabeled > 0 {
        return Err(Error::MixedLabels { labeled, unlabeled });
    }
    let use_labels = labeled > 0;

    let mut groups: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for trip in history.trips() {
        let key = if use_labels {
            (
                trip.origin_poi.clone().unwrap_or_default(),
                trip.destination_poi.clone().unwrap_or_default(),
            )
        } else {
            (
                trip.segments[0].to_string(),
                trip.segments[trip.len() - 1].to_string(),
            )
        };
        groups.entry(key).or_default().push(trip.trip_id.clone());
    }
    let clusters = groups
        .into_iter()
        .map(|((o, d), mut trip_ids)| {
            trip_ids.sort();
            Cluster {
                cluster_id: format!("{o}->{d}"),
                trip_ids,
            }
        })
        .collect();
    ClusterSet::new(clusters)
}

/// Set-based dissimilarity between the segments of two trips, in `[0, 1]`.
pub fn route_dissimilarity(a: &Trip, b: &Trip, measure: Similarity) -> f64 {
    let mut sa: Vec<&str> = a.segments.iter().map(|s| s.as_str()).collect();
    let mut sb: Vec<&str> = b.segments.iter().map(|s| s.as_str()).collect();
    sa.sort_unstable();
    sa.dedup();
    sb.sort_unstable();
    sb.dedup();
    sorted_set_dissimilarity(&sa, &sb, measure)
}

fn sorted_set_dissimilarity<T: Ord>(a: &[T], b: &[T], measure: Similarity) -> f64 {
    let (mut i, mut j, mut shared) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let total = a.len() + b.len();
    if total == 0 {
        return 0.0;
    }
    let similarity = match measure {
        Similarity::Jaccard => shared as f64 / (total - shared) as f64,
        Similarity::SharedOverTotal => 2.0 * shared as f64 / total as f64,
    };
    1.0 - similarity
}

/// Symmetric pairwise dissimilarities with a zero diagonal, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DissimilarityMatrix {
    /// Validates a dense row-major `n × n` matrix.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::InvalidParameter(format!(
                "expected {} entries, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(format!("d({i},{i}) must be 0")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidParameter(format!("d({i},{j}) = {v} outside [0,1]")));
                }
                if v != values[j * n + i] {
                    return Err(Error::InvalidParameter(format!("d({i},{j}) not symmetric")));
                }
            }
        }
        Ok(DissimilarityMatrix { n, values })
    }

    /// Pairwise route dissimilarities of `trips`, computed in parallel.
    pub fn from_trips(trips: &[&Trip], measure: Similarity) -> Self {
        let n = trips.len();
        // Integer segment sets make the pairwise intersections cheap.
        let sets: Vec<Vec<usize>> = match Lexicon::from_trips(trips.iter().copied()) {
            Ok(lex) => trips
                .iter()
                .map(|t| {
                    let mut s: Vec<usize> = t.segments.iter().map(|x| lex.encode(x)).collect();
                    s.sort_unstable();
                    s.dedup();
                    s
                })
                .collect(),
            Err(_) => Vec::new(),
        };
        let mut values = vec![0.0; n * n];
        values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, cell) in row.iter_mut().enumerate() {
                if i != j {
                    *cell = sorted_set_dissimilarity(&sets[i], &sets[j], measure);
                }
            }
        });
        DissimilarityMatrix { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Average-linkage agglomerative clustering cut at `threshold`.
///
/// Merging continues while the smallest inter-cluster linkage is at most
/// `threshold`. Among equal linkages the pair with the lowest `(i, j)` index
/// wins, where a merged cluster keeps the lower index. Returns groups of item
/// indices, each sorted, ordered by their smallest member.
pub fn hierarchical_cluster(d: &DissimilarityMatrix, threshold: f64) -> Result<Vec<Vec<usize>>> {
    let n = d.len();
    if n == 0 {
        return Err(Error::InvalidParameter("cannot cluster zero items".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }

    let mut link = d.values.clone();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    // nearest[i] = (linkage, j) minimised over active j > i, lowest j on ties
    let nearest_of = |link: &[f64], active: &[bool], i: usize| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in (i + 1)..n {
            if active[j] && link[i * n + j] < best.0 {
                best = (link[i * n + j], j);
            }
        }
        best
    };
    let mut nearest: Vec<(f64, usize)> = (0..n).map(|i| nearest_of(&link, &active, i)).collect();

    loop {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            let (dist, j) = nearest[i];
            if j != usize::MAX && pick.is_none_or(|(best, _, _)| dist < best) {
                pick = Some((dist, i, j));
            }
        }
        let Some((dist, i, j)) = pick else { break };
        if dist > threshold {
            break;
        }

        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let v = (ni * link[i * n + k] + nj * link[j * n + k]) / (ni + nj);
            link[i * n + k] = v;
            link[k * n + i] = v;
        }
        active[j] = false;
        size[i] += size[j];
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);

        nearest[i] = nearest_of(&link, &active, i);
        nearest[j] = (f64::INFINITY, usize::MAX);
        for r in (0..j).filter(|&r| active[r] && r != i) {
            let (best, bj) = nearest[r];
            if bj == i || bj == j {
                nearest[r] = nearest_of(&link, &active, r);
            } else if r < i {
                let v = link[r * n + i];
                if v < best || (v == best && i < bj) {
                    nearest[r] = (v, i);
                }
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = members
        .into_iter()
        .zip(&active)
        .filter(|(_, a)| **a)
        .map(|(mut m, _)| {
            m.sort_unstable();
            m
        })
        .collect();
    groups.sort_by_key(|g| g[0]);
    Ok(groups)
}

/// Route clustering of a history: trips are ordered by trip id, compared with
/// `measure`, and cut at `threshold`. Cluster ids are `route-000`, `route-001`, ...
pub fn cluster_by_route(history: &History, threshold: f64, measure: Similarity) -> Result<ClusterSet> {
    let mut trips: Vec<&Trip> = history.trips().iter().collect();
    trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
    let d = DissimilarityMatrix::from_trips(&trips, measure);
    let groups = hierarchical_cluster(&d, threshold)?;
    let width = groups.len().saturating_sub(1).to_string().len().max(3);
    let clusters = groups
        .into_iter()
        .enumerate()
        .map(|(k, g)| Cluster {
            cluster_id: format!("route-{k:0width$}"),
            trip_ids: g.into_iter().map(|i| trips[i].trip_id.clone()).collect(),
        })
        .collect();
    ClusterSet::new(clusters)
}
