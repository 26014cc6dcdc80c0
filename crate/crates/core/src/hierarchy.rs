//! Object–area–room hierarchy.
//!
//! Each room's objects are linked when their boxes are closer than `tau`,
//! the symmetric normalized Laplacian `L = I − D^{-1/2} G D^{-1/2}` of that
//! graph is eigendecomposed, the cluster count is read off the largest
//! eigengap, and k-means on the row-normalized spectral embedding assigns
//! objects to areas.
//!
//! Isolated nodes get a zero Laplacian row, so each contributes its own
//! zero eigenvalue and the multiplicity of 0 equals the component count.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::affordance::AreaProfile;
use crate::geometry::closest_vertex_distance;
use crate::rng::seeded;
use crate::scenegraph::{SceneGraph, SceneNode};

pub const DEFAULT_TAU: f64 = 2.0;
const EIGEN_TOL: f64 = 1e-8;
const ZERO_EIGENVALUE: f64 = 1e-8;
const MAX_SWEEPS: usize = 100;
/// Gaps closer than this count as ties.
const GAP_TIE_TOL: f64 = 1e-9;
const KMEANS_SEED: u64 = 0;
const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchyError {
    #[error("nodes span several rooms: `{0}` and `{1}`")]
    MixedRooms(String, String),
    #[error("need at least 2 eigenvalues, got {0}")]
    TooFewNodes(usize),
    #[error("eigensolver did not converge (off-diagonal norm {0:e})")]
    NonConvergent(f64),
    #[error("tau must be positive")]
    InvalidTau,
    #[error("area `{0}` has no frame with visible members")]
    NoVisibleFrame(String),
}

/// Symmetric 0/1 adjacency over one room's nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    node_ids: Vec<String>,
    entries: Vec<u8>,
}

impl AdjacencyMatrix {
    /// Builds from undirected index pairs; self loops are ignored.
    pub fn from_edges(node_ids: Vec<String>, edges: &[(usize, usize)]) -> Self {
        let n = node_ids.len();
        let mut entries = vec![0u8; n * n];
        for &(i, j) in edges {
            if i != j {
                entries[i * n + j] = 1;
                entries[j * n + i] = 1;
            }
        }
        Self { node_ids, entries }
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.len() + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        let n = self.len();
        self.entries[i * n..(i + 1) * n].iter().map(|v| *v as usize).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.chunks(self.len().max(1))
    }
}

/// `G[i][j] = 1` iff the closest-vertex distance of boxes i and j is below `tau`.
pub fn room_adjacency(nodes: &[&SceneNode], tau: f64) -> Result<AdjacencyMatrix, HierarchyError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(HierarchyError::InvalidTau);
    }
    if let Some(first) = nodes.first() {
        if let Some(other) = nodes.iter().find(|n| n.instance.room != first.instance.room) {
            return Err(HierarchyError::MixedRooms(first.instance.room.clone(), other.instance.room.clone()));
        }
    }
    let ids = nodes.iter().map(|n| n.id().to_string()).collect();
    let mut pairs = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if closest_vertex_distance(&nodes[i].instance.bbox, &nodes[j].instance.bbox) < tau {
                pairs.push((i, j));
            }
        }
    }
    Ok(AdjacencyMatrix::from_edges(ids, &pairs))
}

/// Row-major `L = I − D^{-1/2} G D^{-1/2}`, with zero rows for isolated nodes.
pub fn normalized_laplacian(adj: &AdjacencyMatrix) -> Vec<f64> {
    let n = adj.len();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| match adj.degree(i) {
            0 => 0.0,
            d => 1.0 / libm::sqrt(d as f64),
        })
        .collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        if inv_sqrt[i] > 0.0 {
            l[i * n + i] = 1.0;
        }
        for j in 0..n {
            if adj.get(i, j) == 1 {
                l[i * n + j] = -inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    l
}

/// Eigen-decomposition of a symmetric row-major matrix by cyclic Jacobi
/// rotations. Returns ascending eigenvalues and the matching eigenvectors as
/// columns of a row-major matrix.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>), HierarchyError> {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        libm::sqrt(s)
    };

    for _ in 0..MAX_SWEEPS {
        if off(&a) < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if libm::fabs(apq) < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let residual = off(&a);
    if residual > EIGEN_TOL {
        return Err(HierarchyError::NonConvergent(residual));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    Ok((values, vectors))
}

/// Ascending eigenvalues of the normalized Laplacian of `adj`.
pub fn laplacian_spectrum(adj: &AdjacencyMatrix) -> Result<Vec<f64>, HierarchyError> {
    symmetric_eigen(&normalized_laplacian(adj), adj.len()).map(|(values, _)| values)
}

/// Index `k ∈ [1, n−1]` maximising `λ_{k+1} − λ_k` over ascending
/// eigenvalues; ties go to the smallest `k`.
pub fn eigengap_k(eigenvalues: &[f64]) -> Result<usize, HierarchyError> {
    if eigenvalues.len() < 2 {
        return Err(HierarchyError::TooFewNodes(eigenvalues.len()));
    }
    let mut best = (1usize, f64::NEG_INFINITY);
    for (k, pair) in eigenvalues.windows(2).enumerate() {
        let gap = libm::fabs(pair[1] - pair[0]);
        if gap > best.1 + GAP_TIE_TOL {
            best = (k + 1, gap);
        }
    }
    Ok(best.0)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ / Lloyd. Returns labels and inertia.
fn kmeans_once<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].clone());
    while centers.len() < k {
        let d2: Vec<f64> =
            points.iter().map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centers.push(points[idx].clone());
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if labels[i] != best.0 {
                labels[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its centre.
                let far = (0..n)
                    .max_by(|&i, &j| {
                        sq_dist(&points[i], &centers[labels[i]]).total_cmp(&sq_dist(&points[j], &centers[labels[j]]))
                    })
                    .unwrap_or(0);
                centers[c] = points[far].clone();
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, inertia)
}

/// Relabels clusters in order of first appearance.
fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Cluster labels per node index, numbered by first appearance.
pub fn spectral_labels(adj: &AdjacencyMatrix) -> Result<Vec<usize>, HierarchyError> {
    let n = adj.len();
    if n <= 1 {
        return Ok(vec![0; n]);
    }
    let (values, vectors) = symmetric_eigen(&normalized_laplacian(adj), n)?;
    let components = values.iter().filter(|v| libm::fabs(**v) < ZERO_EIGENVALUE).count();
    // Disconnected components are always separated, whatever the gap says.
    let k = eigengap_k(&values)?.max(components).min(n);
    if k == n {
        return Ok((0..n).collect());
    }

    let points: Vec<Vec<f64>> = (0..n)
        .map(|row| {
            let mut p: Vec<f64> = (0..k).map(|col| vectors[row * n + col]).collect();
            let norm = libm::sqrt(p.iter().map(|x| x * x).sum::<f64>());
            if norm > 0.0 {
                p.iter_mut().for_each(|x| *x /= norm);
            }
            p
        })
        .collect();

    let mut rng = seeded(KMEANS_SEED);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (labels, inertia) = kmeans_once(&points, k, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    Ok(canonical_labels(&best.map(|(l, _)| l).unwrap_or_default()))
}

/// Map from node id to area index.
pub fn spectral_cluster(adj: &AdjacencyMatrix) -> Result<BTreeMap<String, usize>, HierarchyError> {
    let labels = spectral_labels(adj)?;
    Ok(adj.node_ids.iter().cloned().zip(labels).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Area {
    pub id: String,
    pub room: String,
    /// Sorted member node ids.
    pub member_ids: Vec<String>,
    pub keyframe: String,
    pub profile: Option<AreaProfile>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Hierarchy {
    pub rooms: BTreeMap<String, Vec<Area>>,
}

impl Hierarchy {
    pub fn area_of(&self, node_id: &str) -> Option<&Area> {
        self.rooms.values().flatten().find(|a| a.member_ids.iter().any(|m| m == node_id))
    }

    pub fn areas(&self) -> impl Iterator<Item = &Area> {
        self.rooms.values().flatten()
    }

    /// Every node sits in exactly one non-empty area of its own room.
    pub fn validate(&self, graph: &SceneGraph) -> Result<(), String> {
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for (room, areas) in &self.rooms {
            for area in areas {
                if area.member_ids.is_empty() {
                    return Err(alloc::format!("area `{}` is empty", area.id));
                }
                if &area.room != room {
                    return Err(alloc::format!("area `{}` filed under room `{room}`", area.id));
                }
                for m in &area.member_ids {
                    let node = graph.nodes.get(m).ok_or_else(|| alloc::format!("area `{}` lists unknown node `{m}`", area.id))?;
                    if &node.instance.room != room {
                        return Err(alloc::format!("node `{m}` is not in room `{room}`"));
                    }
                    if let Some(prev) = seen.insert(m, &area.id) {
                        return Err(alloc::format!("node `{m}` is in areas `{prev}` and `{}`", area.id));
                    }
                }
            }
        }
        if let Some(missing) = graph.nodes.keys().find(|id| !seen.contains_key(id.as_str())) {
            return Err(alloc::format!("node `{missing}` is not in any area"));
        }
        Ok(())
    }
}

/// Frame with the largest summed member pixel count; ties to the smallest id.
pub fn area_keyframe(members: &[&SceneNode]) -> Option<String> {
    let mut sums: BTreeMap<&str, u64> = BTreeMap::new();
    for m in members {
        for (frame, count) in &m.instance.pixel_counts {
            *sums.entry(frame).or_default() += count;
        }
    }
    let mut best: Option<(&str, u64)> = None;
    for (frame, total) in sums {
        if total == 0 {
            continue;
        }
        match best {
            Some((_, b)) if total <= b => {}
            _ => best = Some((frame, total)),
        }
    }
    best.map(|(f, _)| f.to_string())
}

/// Splits every room into areas and picks each area's keyframe.
pub fn build_hierarchy(graph: &SceneGraph, tau: f64) -> Result<Hierarchy, HierarchyError> {
    let mut by_room: BTreeMap<&str, Vec<&SceneNode>> = BTreeMap::new();
    for node in graph.nodes.values() {
        by_room.entry(node.instance.room.as_str()).or_default().push(node);
    }
    let mut rooms = BTreeMap::new();
    for (room, nodes) in by_room {
        let adj = room_adjacency(&nodes, tau)?;
        let labels = spectral_labels(&adj)?;
        let count = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut areas = Vec::with_capacity(count);
        for area_idx in 0..count {
            let members: Vec<&SceneNode> =
                nodes.iter().zip(&labels).filter(|(_, l)| **l == area_idx).map(|(n, _)| *n).collect();
            let id = alloc::format!("{room}/area_{area_idx}");
            let keyframe = area_keyframe(&members).ok_or_else(|| HierarchyError::NoVisibleFrame(id.clone()))?;
            areas.push(Area {
                id,
                room: room.to_string(),
                member_ids: members.iter().map(|m| m.id().to_string()).collect(),
                keyframe,
                profile: None,
            });
        }
        rooms.insert(room.to_string(), areas);
    }
    Ok(Hierarchy { rooms })
}
