use serde::{Deserialize, Serialize};

use super::{Feature, PersistenceDiagram, PointCloud, RipsScale};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RipsOptions {
    /// Simplices with a larger filtration value are left out.
    pub max_scale: f64,
    pub scale: RipsScale,
    pub max_points: usize,
}

impl Default for RipsOptions {
    fn default() -> Self {
        Self {
            max_scale: f64::INFINITY,
            scale: RipsScale::Half,
            max_points: DEFAULT_MAX_POINTS,
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    /// `false` if already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

/// H0 and H1 persistence of the Vietoris–Rips filtration.
///
/// H0 comes from union–find over edges in filtration order; every vertex is
/// born at 0, so the diagram always holds exactly `n` H0 features, one per
/// merge plus one essential per final component. H1 pairs come from a Z/2
/// column reduction of the triangle boundary matrix; pairs of zero
/// persistence are dropped and unkilled loops get an infinite death.
pub fn rips_persistence(cloud: &PointCloud, opts: &RipsOptions) -> Result<PersistenceDiagram> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::InvalidParam("empty point cloud".into()));
    }
    if n > opts.max_points {
        return Err(Error::CloudTooLarge {
            points: n,
            cap: opts.max_points,
        });
    }
    if !(opts.max_scale > 0.0) {
        return Err(Error::InvalidParam(format!("max_scale must be positive, got {}", opts.max_scale)));
    }
    if cloud.points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("point cloud".into()));
    }

    // edges in filtration order, ties by vertex indices
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let f = opts.scale.filtration(cloud.distance(a, b));
            if f <= opts.max_scale {
                edges.push((f, a, b));
            }
        }
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));

    let mut features = Vec::with_capacity(n + 4);
    let mut uf = UnionFind::new(n);
    // edges that close a cycle may give birth to H1
    let mut positive = vec![false; edges.len()];
    for (e, &(f, a, b)) in edges.iter().enumerate() {
        if uf.union(a, b) {
            features.push(Feature { dim: 0, birth: 0.0, death: f });
        } else {
            positive[e] = true;
        }
    }
    let components = (0..n).filter(|&v| uf.find(v) == v).count();
    features.extend((0..components).map(|_| Feature {
        dim: 0,
        birth: 0.0,
        death: f64::INFINITY,
    }));

    if positive.iter().any(|&p| p) {
        features.extend(h1_pairs(n, &edges, &positive));
    }
    Ok(PersistenceDiagram::new(features))
}

fn h1_pairs(n: usize, edges: &[(f64, usize, usize)], positive: &[bool]) -> Vec<Feature> {
    let mut edge_index = vec![usize::MAX; n * n];
    for (e, &(_, a, b)) in edges.iter().enumerate() {
        edge_index[a * n + b] = e;
    }
    let idx = |a: usize, b: usize| edge_index[a * n + b];

    // triangle columns: boundary as edge indices sorted descending (pivot first)
    let mut triangles: Vec<(f64, usize, [usize; 3])> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let ab = idx(a, b);
            if ab == usize::MAX {
                continue;
            }
            for c in b + 1..n {
                let (ac, bc) = (idx(a, c), idx(b, c));
                if ac == usize::MAX || bc == usize::MAX {
                    continue;
                }
                let mut faces = [ab, ac, bc];
                faces.sort_unstable_by(|x, y| y.cmp(x));
                triangles.push((edges[faces[0]].0, faces[0], faces));
            }
        }
    }
    triangles.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut pivot_owner: Vec<Option<Vec<usize>>> = vec![None; edges.len()];
    let mut killed = vec![false; edges.len()];
    let mut out = Vec::new();
    for (f, _, faces) in &triangles {
        let mut col: Vec<usize> = faces.to_vec();
        while let Some(&low) = col.first() {
            match &pivot_owner[low] {
                Some(other) => col = symmetric_difference_desc(&col, other),
                None => break,
            }
        }
        if let Some(&low) = col.first() {
            killed[low] = true;
            let birth = edges[low].0;
            if *f > birth {
                out.push(Feature { dim: 1, birth, death: *f });
            }
            pivot_owner[low] = Some(col);
        }
    }
    for e in 0..edges.len() {
        if positive[e] && !killed[e] {
            out.push(Feature {
                dim: 1,
                birth: edges[e].0,
                death: f64::INFINITY,
            });
        }
    }
    out
}

/// Z/2 sum of two index sets kept in descending order.
fn symmetric_difference_desc(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Greater => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Less => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
