//! Exact k-d tree over fixed-dimension points keyed by `u64` ids.
//!
//! Median-split, bucketed leaves. Nearest-neighbour results are ordered by
//! ascending distance with ties broken by ascending id, and are identical to an
//! exhaustive scan: subtrees are pruned only when strictly farther than the
//! current k-th candidate.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::cloud::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    ids: Vec<u64>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    /// Euclidean distance.
    pub distance: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    id: u64,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub fn squared_distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut acc = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

impl<const D: usize> Default for KdTree<D> {
    fn default() -> Self {
        Self::build(Vec::new())
    }
}

impl<const D: usize> KdTree<D> {
    pub fn build(entries: Vec<(u64, [f64; D])>) -> Self {
        let mut entries = entries;
        let mut nodes = Vec::new();
        if !entries.is_empty() {
            let n = entries.len();
            build_node(&mut entries, 0, n, &mut nodes);
        }
        let (ids, points) = entries.into_iter().unzip();
        Self { points, ids, nodes }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, &[f64; D])> {
        self.ids.iter().copied().zip(self.points.iter())
    }

    /// The `min(k, len)` nearest entries, ascending by (distance, id).
    pub fn nearest(&self, query: &[f64; D], k: usize) -> Vec<Neighbor> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search_knn(0, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort_unstable();
        out.into_iter()
            .map(|c| Neighbor {
                id: c.id,
                distance: c.dist2.sqrt(),
            })
            .collect()
    }

    fn search_knn(&self, node: usize, q: &[f64; D], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let c = Candidate {
                        dist2: squared_distance(&self.points[i], q),
                        id: self.ids[i],
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search_knn(near, q, k, heap);
                let bound = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().expect("non-empty heap").dist2
                };
                if diff * diff <= bound {
                    self.search_knn(far, q, k, heap);
                }
            }
        }
    }

    /// All entries within `radius` (inclusive), ascending by (distance, id).
    pub fn within_radius(&self, query: &[f64; D], radius: f64) -> Vec<Neighbor> {
        let mut out: Vec<Candidate> = Vec::new();
        if self.is_empty() || !(radius >= 0.0) {
            return Vec::new();
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for i in start..end {
                        let dist2 = squared_distance(&self.points[i], query);
                        if dist2 <= r2 {
                            out.push(Candidate {
                                dist2,
                                id: self.ids[i],
                            });
                        }
                    }
                }
                Node::Split {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    let diff = query[dim] - value;
                    if diff <= 0.0 || diff * diff <= r2 {
                        stack.push(left);
                    }
                    if diff >= 0.0 || diff * diff <= r2 {
                        stack.push(right);
                    }
                }
            }
        }
        out.sort_unstable();
        out.into_iter()
            .map(|c| Neighbor {
                id: c.id,
                distance: c.dist2.sqrt(),
            })
            .collect()
    }
}

/// Builds the subtree over `entries[start..end]`, returning its node index.
fn build_node<const D: usize>(
    entries: &mut [(u64, [f64; D])],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return idx;
    }
    // Split along the dimension of widest spread.
    let slice = &entries[start..end];
    let mut best_dim = 0;
    let mut best_spread = -1.0;
    for d in 0..D {
        let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.1[d]), hi.max(e.1[d]))
        });
        if hi - lo > best_spread {
            best_spread = hi - lo;
            best_dim = d;
        }
    }
    if best_spread <= 0.0 {
        nodes.push(Node::Leaf { start, end });
        return idx;
    }
    let mid = (end - start) / 2;
    entries[start..end]
        .select_nth_unstable_by(mid, |a, b| a.1[best_dim].total_cmp(&b.1[best_dim]));
    let value = entries[start + mid].1[best_dim];
    // Left holds values <= split, right values >= split; the pivot sits at `mid`.
    nodes.push(Node::Leaf { start, end });
    let left = build_node(entries, start, start + mid, nodes);
    let right = build_node(entries, start + mid, end, nodes);
    nodes[idx] = Node::Split {
        dim: best_dim,
        value,
        left,
        right,
    };
    idx
}

/// Uniform hash grid over 3D points for fixed-radius neighbour queries.
#[derive(Debug, Clone)]
pub struct PointGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl PointGrid {
    pub fn new(points: &[Point3], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self { cell, cells }
    }

    #[inline]
    fn key(p: &Point3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Calls `f` with the index of every point within `radius` of `query`.
    /// `radius` must not exceed the grid cell size.
    pub fn for_each_within(
        &self,
        points: &[Point3],
        query: &Point3,
        radius: f64,
        mut f: impl FnMut(usize),
    ) {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        let r2 = radius * radius;
        let (kx, ky, kz) = Self::key(query, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &j in bucket {
                            let j = j as usize;
                            if (points[j] - query).norm_squared() <= r2 {
                                f(j);
                            }
                        }
                    }
                }
            }
        }
    }
}
