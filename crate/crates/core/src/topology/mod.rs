//! Persistent homology of patch point clouds: Vietoris–Rips H0/H1
//! diagrams, Wasserstein distances between diagrams and average-linkage
//! clustering of tokens by topological similarity.

mod cluster;
mod rips;
mod wasserstein;

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embedding::PatchGrid;
use crate::error::{Error, Result};
use crate::io::fmt_f64;

pub use cluster::cluster_tokens;
pub use rips::{rips_persistence, RipsOptions, DEFAULT_MAX_POINTS};
pub use wasserstein::{bottleneck, twwd, wasserstein, wasserstein_points};

/// Filtration value at which an edge of length `d` appears.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RipsScale {
    /// `d/2`: balls of radius r around the endpoints intersect.
    #[default]
    Half,
    /// `d`.
    Full,
}

impl RipsScale {
    pub fn filtration(&self, d: f64) -> f64 {
        match self {
            RipsScale::Half => d / 2.0,
            RipsScale::Full => d,
        }
    }
}

/// Which vectors of a patch become points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudAxis {
    /// The `q` columns, as points in `R^p`.
    #[default]
    Columns,
    /// The `p` rows, as points in `R^q`.
    Rows,
}

/// Distance used between per-token diagrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenDistance {
    /// 2-Wasserstein on H1 features.
    #[default]
    H1,
    /// Total weighted Wasserstein over H0 and H1.
    Twwd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyParams {
    pub rips: RipsOptions,
    pub axis: CloudAxis,
    pub distance: TokenDistance,
    /// Wasserstein order.
    pub order: f64,
    /// Match essential features with death clamped to `rips.max_scale`
    /// instead of dropping them.
    pub clamp_infinite: bool,
    /// Only the first `max_tokens` patches enter the matrix.
    pub max_tokens: Option<usize>,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            rips: RipsOptions::default(),
            axis: CloudAxis::Columns,
            distance: TokenDistance::H1,
            order: 2.0,
            clamp_infinite: false,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec<f64>>,
    pub dim: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidParam("point cloud needs at least one point".into()))?;
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch("points of different dimension".into()));
        }
        Ok(Self { points, dim })
    }

    pub fn from_patch(patch: &DMatrix<f64>, axis: CloudAxis) -> Result<Self> {
        let points = match axis {
            CloudAxis::Columns => patch.column_iter().map(|c| c.iter().copied().collect()).collect(),
            CloudAxis::Rows => patch.row_iter().map(|r| r.iter().copied().collect()).collect(),
        };
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.points[a]
            .iter()
            .zip(&self.points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub dim: usize,
    pub birth: f64,
    /// `f64::INFINITY` for features alive at the end of the filtration.
    pub death: f64,
}

impl Feature {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }

    pub fn is_essential(&self) -> bool {
        self.death.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PersistenceDiagram {
    pub features: Vec<Feature>,
}

impl PersistenceDiagram {
    pub fn new(mut features: Vec<Feature>) -> Self {
        features.sort_by(|a, b| {
            a.dim
                .cmp(&b.dim)
                .then(a.birth.total_cmp(&b.birth))
                .then(a.death.total_cmp(&b.death))
        });
        Self { features }
    }

    pub fn of_dim(&self, dim: usize) -> impl Iterator<Item = &Feature> {
        self.features.iter().filter(move |f| f.dim == dim)
    }

    /// Finite `(birth, death)` pairs of one dimension.
    pub fn finite_points(&self, dim: usize) -> Vec<(f64, f64)> {
        self.of_dim(dim)
            .filter(|f| !f.is_essential())
            .map(|f| (f.birth, f.death))
            .collect()
    }

    /// Points of one dimension with essential deaths replaced by `cap`.
    pub fn clamped_points(&self, dim: usize, cap: f64) -> Vec<(f64, f64)> {
        self.of_dim(dim).map(|f| (f.birth, f.death.min(cap))).collect()
    }

    pub fn mean_finite_persistence(&self, dim: usize) -> (f64, usize) {
        let finite: Vec<f64> = self.of_dim(dim).filter(|f| !f.is_essential()).map(Feature::persistence).collect();
        (finite.iter().sum(), finite.len())
    }

    /// `dim,birth,death` rows; essential deaths print as `inf`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "dim,birth,death")?;
        for f in &self.features {
            let death = if f.is_essential() { "inf".to_string() } else { fmt_f64(f.death) };
            writeln!(w, "{},{},{}", f.dim, fmt_f64(f.birth), death)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl DistanceMatrix {
    pub fn new(values: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let n = values.nrows();
        if !values.is_square() || labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "distance matrix {:?} with {} labels",
                values.shape(),
                labels.len()
            )));
        }
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(Error::InvalidParam(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if !(v >= 0.0) || (v - values[(j, i)]).abs() > 1e-9 {
                    return Err(Error::InvalidParam(format!("entry ({i},{j}) breaks symmetry or sign")));
                }
            }
        }
        Ok(Self { values, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Header `token,<labels…>`, then one labelled row per token.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let header: Vec<String> = self.labels.iter().map(usize::to_string).collect();
        writeln!(w, "token,{}", header.join(","))?;
        for (i, label) in self.labels.iter().enumerate() {
            let row: Vec<String> = self.values.row(i).iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{label},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Persistence diagram of every patch (up to `max_tokens`).
pub fn patch_diagrams(grid: &PatchGrid, params: &TopologyParams) -> Result<Vec<PersistenceDiagram>> {
    let n = params.max_tokens.map_or(grid.len(), |m| m.min(grid.len()));
    grid.patches[..n]
        .iter()
        .map(|p| rips_persistence(&PointCloud::from_patch(p, params.axis)?, &params.rips))
        .collect()
}

/// Distance between two diagrams under `params`.
pub fn diagram_distance(a: &PersistenceDiagram, b: &PersistenceDiagram, params: &TopologyParams) -> Result<f64> {
    let cap = if params.clamp_infinite {
        if !params.rips.max_scale.is_finite() {
            return Err(Error::InvalidParam(
                "clamping essential features needs a finite max_scale".into(),
            ));
        }
        Some(params.rips.max_scale)
    } else {
        None
    };
    Ok(match params.distance {
        TokenDistance::H1 => wasserstein(a, b, 1, params.order, cap),
        TokenDistance::Twwd => twwd(a, b, params.order, 1, cap),
    })
}

/// Pairwise diagram distances between patches, labelled by patch index.
pub fn token_distance_matrix(grid: &PatchGrid, params: &TopologyParams) -> Result<DistanceMatrix> {
    let diagrams = patch_diagrams(grid, params)?;
    let n = diagrams.len();
    if n < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 patches, got {n}")));
    }
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = diagram_distance(&diagrams[i], &diagrams[j], params)?;
            values[(i, j)] = d;
            values[(j, i)] = d;
        }
    }
    DistanceMatrix::new(values, (0..n).collect())
}
