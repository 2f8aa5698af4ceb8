//! Adaptive kernel density estimation and relative density outlier scores.
//!
//! Each point gets a local bandwidth `h_i`, the mean squared distance to its
//! `k` nearest neighbors. Its density is a Gaussian KDE over itself and those
//! neighbors, and its RDOS is the mean neighbor density divided by its own.
//! Scores near one mark inliers; a score above two marks a likely outlier.

use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};
use crate::geometry::PointCloud;
use crate::kdtree::{KdTree, Neighbor};

pub const DEFAULT_K: usize = 15;

/// Points with a score above this are counted as outliers.
pub const OUTLIER_THRESHOLD: f64 = 2.0;

const BANDWIDTH_FLOOR_FACTOR: f64 = 1e-9;

/// How the bandwidth `h` enters the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KernelVariance {
    /// Kernel variance equals `h` (the mean squared neighbor distance), i.e.
    /// the kernel width is the RMS neighbor distance.
    #[default]
    MeanSquaredDistance,
    /// Kernel variance equals `h²`.
    SquaredBandwidth,
}

impl KernelVariance {
    fn variance(self, h: f64) -> f64 {
        match self {
            Self::MeanSquaredDistance => h,
            Self::SquaredBandwidth => h * h,
        }
    }
}

/// k-nearest-neighbor lists for every point of a cloud.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    tree: KdTree,
    k: usize,
    neighbors: Vec<Vec<Neighbor>>,
    bandwidth_floor: f64,
}

impl NeighborIndex {
    /// Builds the tree and caches `min(k, N-1)` neighbors per point.
    pub fn build(cloud: &PointCloud, k: usize) -> Self {
        let tree = KdTree::build(cloud.points());
        let neighbors = cloud
            .iter()
            .enumerate()
            .map(|(i, p)| tree.nearest(p, k, Some(i)))
            .collect();
        Self {
            tree,
            k,
            neighbors,
            bandwidth_floor: BANDWIDTH_FLOOR_FACTOR * cloud.diameter(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.neighbors[i]
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn bandwidth_floor(&self) -> f64 {
        self.bandwidth_floor
    }
}

/// Mean squared distance from point `i` to its neighbors, floored.
pub fn local_bandwidth(i: usize, idx: &NeighborIndex) -> f64 {
    let nn = idx.neighbors(i);
    if nn.is_empty() {
        return idx.bandwidth_floor.max(f64::MIN_POSITIVE);
    }
    let h = nn.iter().map(|n| n.dist2).sum::<f64>() / nn.len() as f64;
    h.max(idx.bandwidth_floor).max(f64::MIN_POSITIVE)
}

/// Gaussian KDE at point `i` over itself and its neighbors, using `h_i`.
pub fn kde_density(
    i: usize,
    idx: &NeighborIndex,
    bandwidths: &[f64],
    variance: KernelVariance,
) -> f64 {
    let var = variance.variance(bandwidths[i]);
    let norm = (2.0 * std::f64::consts::PI * var).powf(-1.5);
    let nn = idx.neighbors(i);
    let sum: f64 = 1.0 + nn.iter().map(|n| (-n.dist2 / (2.0 * var)).exp()).sum::<f64>();
    norm * sum / (nn.len() + 1) as f64
}

/// Per-point bandwidths, densities and scores, plus the inlier summary used
/// to size the sphere template and seed the outlier weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdosReport {
    pub k: usize,
    pub bandwidths: Vec<f64>,
    pub densities: Vec<f64>,
    pub scores: Vec<f64>,
    /// Number of points with score `<= 2`.
    pub inlier_count: usize,
    /// Fraction of points with score `> 2`.
    pub initial_weight: f64,
}

impl RdosReport {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_outlier(&self, i: usize) -> bool {
        self.scores[i] > OUTLIER_THRESHOLD
    }
}

pub fn rdos_scores(x: &PointCloud, k: usize) -> Result<RdosReport> {
    rdos_scores_with(x, k, KernelVariance::default())
}

pub fn rdos_scores_with(x: &PointCloud, k: usize, variance: KernelVariance) -> Result<RdosReport> {
    if k == 0 {
        return Err(FitError::InvalidConfig("neighborhood size k must be >= 1".into()));
    }
    if x.len() <= k {
        return Err(FitError::InsufficientPoints {
            needed: k,
            got: x.len(),
        });
    }
    let idx = NeighborIndex::build(x, k);
    Ok(rdos_from_index(&idx, variance))
}

pub fn rdos_from_index(idx: &NeighborIndex, variance: KernelVariance) -> RdosReport {
    let n = idx.len();
    let bandwidths: Vec<f64> = (0..n).map(|i| local_bandwidth(i, idx)).collect();
    let densities: Vec<f64> = (0..n)
        .map(|i| kde_density(i, idx, &bandwidths, variance))
        .collect();
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let nn = idx.neighbors(i);
            let total: f64 = nn.iter().map(|m| densities[m.index]).sum();
            total / (nn.len() as f64 * densities[i])
        })
        .collect();
    let outliers = scores.iter().filter(|&&s| s > OUTLIER_THRESHOLD).count();
    RdosReport {
        k: idx.k(),
        bandwidths,
        densities,
        scores,
        inlier_count: n - outliers,
        initial_weight: outliers as f64 / n as f64,
    }
}
