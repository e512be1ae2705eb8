use super::DistanceMatrix;
use crate::error::{Error, Result};

/// Average-linkage agglomerative clustering down to `n_clusters` groups.
///
/// The closest pair of clusters (mean pairwise distance) merges first; ties
/// go to the pair with the smallest member indices. Labels are numbered in
/// order of first appearance, so token 0 is always in cluster 0.
pub fn cluster_tokens(dm: &DistanceMatrix, n_clusters: usize) -> Result<Vec<usize>> {
    let n = dm.len();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::InvalidParam(format!(
            "cannot form {n_clusters} clusters from {n} tokens"
        )));
    }
    // clusters are identified by their smallest member
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut d = dm.values.clone();
    let mut active = n;
    while active > n_clusters {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if members[j].is_none() {
                    continue;
                }
                if best.is_none_or(|(b, _, _)| d[(i, j)] < b) {
                    best = Some((d[(i, j)], i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two active clusters");
        let ni = members[i].as_ref().map_or(0, Vec::len) as f64;
        let nj = members[j].as_ref().map_or(0, Vec::len) as f64;
        for k in 0..n {
            if k != i && k != j && members[k].is_some() {
                let merged = (ni * d[(i, k)] + nj * d[(j, k)]) / (ni + nj);
                d[(i, k)] = merged;
                d[(k, i)] = merged;
            }
        }
        let moved = members[j].take().unwrap_or_default();
        members[i].as_mut().expect("active").extend(moved);
        active -= 1;
    }

    let mut raw = vec![0usize; n];
    for (id, m) in members.iter().enumerate() {
        for &t in m.iter().flatten() {
            raw[t] = id;
        }
    }
    Ok(canonical_labels(&raw))
}

fn canonical_labels(raw: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|r| {
            let next = map.len();
            *map.entry(*r).or_insert(next)
        })
        .collect()
}
