//! Agglomerative clustering with average linkage and a distance threshold.

use crate::retrieval::{cosine_distance, EmbeddingVector};

/// Clusters `points` by average-linkage agglomeration over cosine distance.
///
/// Two clusters merge while their average pairwise distance is strictly
/// below `threshold`; there is no target cluster count. Among equal-distance
/// candidate pairs the one whose smallest member indices come first wins, so
/// callers that pre-sort points by id get id-ordered tie-breaking. Returned
/// clusters list member indices in ascending order and are ordered by their
/// smallest member.
pub fn average_linkage(points: &[EmbeddingVector], threshold: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cosine_distance(&points[i], &points[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    average_linkage_from_distances(dist, threshold)
}

/// Same as [`average_linkage`] over a precomputed symmetric distance matrix.
pub fn average_linkage_from_distances(mut dist: Vec<Vec<f64>>, threshold: f64) -> Vec<Vec<usize>> {
    let n = dist.len();
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in (i + 1)..n {
                if members[j].is_none() {
                    continue;
                }
                let d = dist[i][j];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, d)) = best else { break };
        if !(d < threshold) {
            break;
        }
        let absorbed = members[j].take().expect("active cluster");
        let (ni, nj) = (
            members[i].as_ref().expect("active cluster").len() as f64,
            absorbed.len() as f64,
        );
        // Lance-Williams update for average linkage
        for k in 0..n {
            if k == i || members[k].is_none() {
                continue;
            }
            let merged = (ni * dist[i][k] + nj * dist[j][k]) / (ni + nj);
            dist[i][k] = merged;
            dist[k][i] = merged;
        }
        let target = members[i].as_mut().expect("active cluster");
        target.extend(absorbed);
        target.sort_unstable();
    }
    members.into_iter().flatten().collect()
}
