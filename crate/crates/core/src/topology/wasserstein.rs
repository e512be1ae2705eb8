use super::PersistenceDiagram;

fn linf(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// Max-norm distance from a point to its nearest diagonal point.
fn to_diagonal(a: (f64, f64)) -> f64 {
    (a.1 - a.0) / 2.0
}

/// Ground costs of the augmented assignment problem: rows are the points of
/// `a` followed by one diagonal slot per point of `b`, columns the points of
/// `b` followed by one diagonal slot per point of `a`.
fn augmented_costs(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let (n, m) = (a.len(), b.len());
    let size = n + m;
    let mut c = vec![vec![0.0; size]; size];
    for (i, row) in c.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = match (i < n, j < m) {
                (true, true) => linf(a[i], b[j]),
                (true, false) => to_diagonal(a[i]),
                (false, true) => to_diagonal(b[j]),
                (false, false) => 0.0,
            };
        }
    }
    c
}

/// Minimum-cost perfect assignment (Hungarian method with potentials).
/// Returns the column assigned to each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// `W_p` between two finite point sets under the max-norm ground metric,
/// with every point free to match the diagonal. `p = ∞` gives the
/// bottleneck distance.
pub fn wasserstein_points(a: &[(f64, f64)], b: &[(f64, f64)], p: f64) -> f64 {
    if p.is_infinite() {
        return bottleneck(a, b);
    }
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let costs = augmented_costs(a, b);
    let powered: Vec<Vec<f64>> = costs.iter().map(|r| r.iter().map(|c| c.powf(p)).collect()).collect();
    let assignment = hungarian(&powered);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| powered[i][j]).sum();
    total.max(0.0).powf(1.0 / p)
}

/// Smallest `t` admitting a perfect matching that uses only costs `≤ t`.
pub fn bottleneck(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let costs = augmented_costs(a, b);
    let mut candidates: Vec<f64> = costs.iter().flatten().copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let (mut lo, mut hi) = (0, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if has_perfect_matching(&costs, candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    candidates[lo]
}

fn has_perfect_matching(costs: &[Vec<f64>], t: f64) -> bool {
    let n = costs.len();
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    fn augment(r: usize, costs: &[Vec<f64>], t: f64, seen: &mut [bool], match_col: &mut [Option<usize>]) -> bool {
        for c in 0..costs.len() {
            if costs[r][c] <= t && !seen[c] {
                seen[c] = true;
                if match_col[c].is_none_or(|r2| augment(r2, costs, t, seen, match_col)) {
                    match_col[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    (0..n).all(|r| augment(r, costs, t, &mut vec![false; n], &mut match_col))
}

fn points(d: &PersistenceDiagram, dim: usize, clamp: Option<f64>) -> Vec<(f64, f64)> {
    match clamp {
        Some(cap) => d.clamped_points(dim, cap),
        None => d.finite_points(dim),
    }
}

/// `W_p` between the dimension-`dim` parts of two diagrams. Essential
/// features are dropped unless `clamp` gives a death to substitute.
pub fn wasserstein(d1: &PersistenceDiagram, d2: &PersistenceDiagram, dim: usize, p: f64, clamp: Option<f64>) -> f64 {
    wasserstein_points(&points(d1, dim, clamp), &points(d2, dim, clamp), p)
}

/// Total weighted Wasserstein distance over dimensions `0..=k_max`,
/// `(Σ_k w_k·W_p(D1^k, D2^k)^p)^{1/p}`, with `w_k` proportional to the mean
/// finite persistence of dimension `k` across both diagrams (uniform when
/// every persistence is zero).
pub fn twwd(d1: &PersistenceDiagram, d2: &PersistenceDiagram, p: f64, k_max: usize, clamp: Option<f64>) -> f64 {
    let dims = 0..=k_max;
    let means: Vec<f64> = dims
        .clone()
        .map(|k| {
            let (s1, n1) = d1.mean_finite_persistence(k);
            let (s2, n2) = d2.mean_finite_persistence(k);
            if n1 + n2 == 0 {
                0.0
            } else {
                (s1 + s2) / (n1 + n2) as f64
            }
        })
        .collect();
    let total: f64 = means.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        means.iter().map(|m| m / total).collect()
    } else {
        vec![1.0 / means.len() as f64; means.len()]
    };
    dims.zip(weights)
        .map(|(k, w)| w * wasserstein(d1, d2, k, p, clamp).powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Feature;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, max: usize) -> Vec<(f64, f64)> {
        let n = rng.random_range(0..=max);
        (0..n)
            .map(|_| {
                let b: f64 = rng.random_range(0.0..1.0);
                (b, b + rng.random_range(0.0..1.0))
            })
            .collect()
    }

    /// Minimum over every partial matching of `a` into `b`; unmatched points
    /// go to the diagonal.
    fn brute_force(a: &[(f64, f64)], b: &[(f64, f64)], p: f64) -> f64 {
        fn go(i: usize, a: &[(f64, f64)], b: &[(f64, f64)], used: &mut Vec<bool>, p: f64) -> f64 {
            if i == a.len() {
                return b.iter().zip(used.iter()).filter(|(_, &u)| !u).map(|(q, _)| to_diagonal(*q).powf(p)).sum();
            }
            let mut best = to_diagonal(a[i]).powf(p) + go(i + 1, a, b, used, p);
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(linf(a[i], b[j]).powf(p) + go(i + 1, a, b, used, p));
                    used[j] = false;
                }
            }
            best
        }
        go(0, a, b, &mut vec![false; b.len()], p).powf(1.0 / p)
    }

    #[test]
    fn examples() {
        let d = vec![(0.1, 0.5), (0.2, 0.9)];
        assert_eq!(wasserstein_points(&d, &d, 2.0), 0.0);
        assert_eq!(wasserstein_points(&[], &[(0.0, 2.0)], 2.0), 1.0);
        assert_eq!(wasserstein_points(&[], &[], 2.0), 0.0);
        assert_eq!(bottleneck(&[], &[(0.0, 2.0)]), 1.0);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = random_points(&mut rng, 5);
            let b = random_points(&mut rng, 5);
            for p in [1.0, 2.0] {
                let got = wasserstein_points(&a, &b, p);
                let want = brute_force(&a, &b, p);
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn bottleneck_matches_large_order_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let a = random_points(&mut rng, 4);
            let b = random_points(&mut rng, 4);
            let w_inf = bottleneck(&a, &b);
            // W_p decreases towards W_inf as p grows
            let w_big = brute_force(&a, &b, 60.0);
            assert!(w_inf <= w_big + 1e-12);
            assert!(w_big <= w_inf * 8f64.powf(1.0 / 60.0) + 1e-12);
        }
    }

    #[test]
    fn metric_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let a = random_points(&mut rng, 5);
            let b = random_points(&mut rng, 5);
            let c = random_points(&mut rng, 5);
            let ab = wasserstein_points(&a, &b, 2.0);
            assert!((ab - wasserstein_points(&b, &a, 2.0)).abs() < 1e-12);
            assert!(ab <= wasserstein_points(&a, &c, 2.0) + wasserstein_points(&c, &b, 2.0) + 1e-12);
            let mut shuffled = a.clone();
            shuffled.reverse();
            assert!(wasserstein_points(&a, &shuffled, 2.0) < 1e-12);
            if !a.is_empty() {
                let mut moved = a.clone();
                moved[0].1 += 0.1;
                assert!(wasserstein_points(&a, &moved, 2.0) > 0.0);
            }
        }
    }

    fn diagram(h0: &[(f64, f64)], h1: &[(f64, f64)]) -> PersistenceDiagram {
        let mut f: Vec<Feature> = h0.iter().map(|&(birth, death)| Feature { dim: 0, birth, death }).collect();
        f.extend(h1.iter().map(|&(birth, death)| Feature { dim: 1, birth, death }));
        PersistenceDiagram::new(f)
    }

    #[test]
    fn essential_features_excluded_or_clamped() {
        let a = diagram(&[(0.0, 1.0), (0.0, f64::INFINITY)], &[]);
        let b = diagram(&[(0.0, 1.0), (0.0, f64::INFINITY), (0.0, f64::INFINITY)], &[]);
        assert_eq!(wasserstein(&a, &b, 0, 2.0, None), 0.0);
        // the extra clamped feature (0, 3) goes to the diagonal at cost 1.5
        assert!((wasserstein(&a, &b, 0, 2.0, Some(3.0)) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn twwd_examples() {
        let a = diagram(&[(0.0, 1.0), (0.0, 2.0)], &[(0.5, 1.5)]);
        assert_eq!(twwd(&a, &a, 2.0, 1, None), 0.0);

        // H0 only: weight 1 on H0
        let h0a = diagram(&[(0.0, 1.0)], &[]);
        let h0b = diagram(&[(0.0, 3.0)], &[]);
        let w = wasserstein(&h0a, &h0b, 0, 2.0, None);
        assert!((twwd(&h0a, &h0b, 2.0, 1, None) - w).abs() < 1e-15);

        // hand evaluation: mean H0 persistence (1+2+1)/3 = 4/3, H1 (1+0.5)/2 = 3/4
        let b = diagram(&[(0.0, 1.0)], &[(1.0, 1.5)]);
        let (m0, m1) = (4.0 / 3.0, 0.75);
        let (w0, w1) = (m0 / (m0 + m1), m1 / (m0 + m1));
        // H0: {1,2} vs {1}: the point (0,2) goes to the diagonal, cost 1
        // H1: (0.5,1.5) vs (1,1.5): matching costs 0.5² = 0.25, both to the diagonal 0.5² + 0.25²
        let expected = (w0 * 1.0 + w1 * 0.25f64).sqrt();
        assert!((twwd(&a, &b, 2.0, 1, None) - expected).abs() < 1e-14);

        // all-zero persistence falls back to uniform weights (both distances 0 here)
        let z = diagram(&[(0.0, 0.0)], &[]);
        assert_eq!(twwd(&z, &z, 2.0, 1, None), 0.0);
    }
}
