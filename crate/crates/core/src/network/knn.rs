//! Exact k-nearest-neighbor search over 3D points with a KD-tree.
//!
//! Neighbors are ordered by squared distance, ties by point index, and
//! every point is its own first neighbor.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::par;

const LEAF: usize = 8;

enum KdNode {
    Leaf(Vec<usize>),
    Split {
        axis: usize,
        value: f64,
        left: Box<KdNode>,
        right: Box<KdNode>,
    },
}

pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    root: KdNode,
}

#[derive(Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    idx: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, o: &Self) -> Ordering {
        self.d2.total_cmp(&o.d2).then(self.idx.cmp(&o.idx))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

fn build(points: &[[f64; 3]], mut idx: Vec<usize>, depth: usize) -> KdNode {
    if idx.len() <= LEAF || depth > 64 {
        return KdNode::Leaf(idx);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &idx {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] <= lo[axis] {
        return KdNode::Leaf(idx);
    }
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[idx[mid]][axis];
    let right = idx.split_off(mid);
    KdNode::Split {
        axis,
        value,
        left: Box::new(build(points, idx, depth + 1)),
        right: Box::new(build(points, right, depth + 1)),
    }
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let root = build(points, (0..points.len()).collect(), 0);
        Self { points, root }
    }

    /// The `k` nearest points to `q`, nearest first.
    pub fn nearest(&self, q: &[f64; 3], k: usize) -> Vec<usize> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(&self.root, q, k, &mut heap);
        }
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| c.idx).collect()
    }

    fn search(&self, node: &KdNode, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Cand>) {
        match node {
            KdNode::Leaf(ids) => {
                for &i in ids {
                    let c = Cand {
                        d2: d2(q, &self.points[i]),
                        idx: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // Equal-distance points may still win on index, so only
                // strictly farther planes are pruned.
                if heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |c| c.d2) {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Neighbor lists for every point: `idx[i*k..(i+1)*k]`. When there are
/// fewer than `k` points, `k` shrinks to the point count so every point
/// attends to all others.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighbors {
    pub idx: Vec<usize>,
    pub k: usize,
}

pub fn knn(points: &[[f64; 3]], k: usize) -> Neighbors {
    let k = k.min(points.len()).max(usize::from(!points.is_empty()));
    let tree = KdTree::new(points);
    let lists = par::map_indexed(points.len(), |i| {
        let mut nb = tree.nearest(&points[i], k);
        // Coincident points tie at distance zero; keep self first.
        if let Some(pos) = nb.iter().position(|&j| j == i) {
            nb[..=pos].rotate_right(1);
        } else {
            nb.pop();
            nb.insert(0, i);
        }
        nb
    });
    Neighbors {
        idx: lists.into_iter().flatten().collect(),
        k,
    }
}

/// Median distance from each point to its nearest other point.
pub fn median_nn_distance(points: &[[f64; 3]], nb: &Neighbors) -> Option<f64> {
    if nb.k < 2 {
        return None;
    }
    let mut d: Vec<f64> = (0..points.len())
        .map(|i| d2(&points[i], &points[nb.idx[i * nb.k + 1]]).sqrt())
        .collect();
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use rand::Rng;

    fn brute(points: &[[f64; 3]], q: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<usize> = (0..points.len()).collect();
        all.sort_by(|&a, &b| {
            d2(&points[q], &points[a])
                .total_cmp(&d2(&points[q], &points[b]))
                .then(a.cmp(&b))
        });
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = stream_rng(3, "knn");
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let nb = knn(&pts, 7);
        for i in 0..pts.len() {
            assert_eq!(&nb.idx[i * 7..(i + 1) * 7], brute(&pts, i, 7).as_slice());
        }
    }

    #[test]
    fn ties_break_by_index() {
        // A lattice has many equal distances.
        let pts: Vec<[f64; 3]> = (0..64)
            .map(|i| [(i % 4) as f64, ((i / 4) % 4) as f64, (i / 16) as f64])
            .collect();
        let nb = knn(&pts, 9);
        for i in 0..pts.len() {
            assert_eq!(&nb.idx[i * 9..(i + 1) * 9], brute(&pts, i, 9).as_slice());
        }
    }

    #[test]
    fn small_sets_fall_back_to_all_points() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let nb = knn(&pts, 16);
        assert_eq!(nb.k, 3);
        assert_eq!(&nb.idx[6..9], &[2, 1, 0]);
        let one = knn(&pts[..1], 16);
        assert_eq!(one, Neighbors { idx: vec![0], k: 1 });
        assert_eq!(median_nn_distance(&pts, &nb), Some(1.0));
    }

    #[test]
    fn duplicates_keep_self_first() {
        let pts = [[0.0; 3], [0.0; 3], [0.0; 3]];
        let nb = knn(&pts, 2);
        assert_eq!(nb.idx, vec![0, 1, 1, 0, 2, 0]);
    }
}
