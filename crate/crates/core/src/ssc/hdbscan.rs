//! HDBSCAN over a precomputed distance matrix.
//!
//! Steps: core distances (the `min_samples`-th nearest neighbour, counting the
//! point itself), mutual reachability `max(d_ij, core_i, core_j)`, a Prim
//! spanning tree, the single-linkage hierarchy, condensation at
//! `min_cluster_size`, and excess-of-mass selection excluding the root.
//! Tie-breaking follows the usual reference implementation (lowest index in
//! Prim, stable order of equal-weight edges), and the result is independent
//! of thread count.

use std::collections::{HashMap, HashSet};

use super::distance::DistanceMatrix;

/// Cluster label per point; `None` is noise. Labels are numbered by the
/// lowest point index they contain.
pub type Labels = Vec<Option<usize>>;

#[derive(Clone, Copy, Debug)]
struct MstEdge {
    a: usize,
    b: usize,
    weight: f64,
}

#[derive(Clone, Copy, Debug)]
struct Merge {
    left: usize,
    right: usize,
    value: f64,
    size: usize,
}

/// Row of the condensed tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CondensedRow {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

fn core_distances(m: &DistanceMatrix, min_samples: usize) -> Vec<f64> {
    let k = min_samples - 1;
    (0..m.len())
        .map(|i| {
            let mut row = m.row(i).to_vec();
            let (_, kth, _) = row.select_nth_unstable_by(k, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Prim's algorithm over the mutual-reachability graph, starting from point 0.
/// Each edge joins the previously added point to the newly added one, with
/// the newly added point's reachability to the tree as weight.
fn prim(m: &DistanceMatrix, core: &[f64]) -> Vec<MstEdge> {
    let n = m.len();
    let mr = |i: usize, j: usize| m.get(i, j).max(core[i]).max(core[j]);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut reach: Vec<f64> = vec![f64::INFINITY; n];
    let mut current = 0;
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 0..n.saturating_sub(1) {
        let keep: Vec<bool> = remaining.iter().map(|&p| p != current).collect();
        let mut next_remaining = Vec::with_capacity(remaining.len());
        let mut next_reach = Vec::with_capacity(remaining.len());
        for ((&p, &r), keep) in remaining.iter().zip(&reach).zip(keep) {
            if keep {
                next_remaining.push(p);
                next_reach.push(r.min(mr(current, p)));
            }
        }
        remaining = next_remaining;
        reach = next_reach;
        let mut best = 0;
        for (idx, &r) in reach.iter().enumerate() {
            if r < reach[best] {
                best = idx;
            }
        }
        let next = remaining[best];
        edges.push(MstEdge {
            a: current,
            b: next,
            weight: reach[best],
        });
        current = next;
    }
    edges
}

struct UnionFind {
    parent: Vec<Option<usize>>,
    size: Vec<usize>,
    next: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        let mut size = vec![0; 2 * n - 1];
        size[..n].fill(1);
        UnionFind {
            parent: vec![None; 2 * n - 1],
            size,
            next: n,
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while let Some(p) = self.parent[root] {
            root = p;
        }
        let mut cur = x;
        while let Some(p) = self.parent[cur] {
            if p == root {
                break;
            }
            self.parent[cur] = Some(root);
            cur = p;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        self.parent[a] = Some(self.next);
        self.parent[b] = Some(self.next);
        self.size[self.next] = self.size[a] + self.size[b];
        self.next += 1;
    }
}

fn single_linkage(n: usize, mut mst: Vec<MstEdge>) -> Vec<Merge> {
    mst.sort_by(|x, y| x.weight.total_cmp(&y.weight));
    let mut uf = UnionFind::new(n);
    mst.iter()
        .map(|e| {
            let (ra, rb) = (uf.find(e.a), uf.find(e.b));
            let merge = Merge {
                left: ra,
                right: rb,
                value: e.weight,
                size: uf.size[ra] + uf.size[rb],
            };
            uf.union(ra, rb);
            merge
        })
        .collect()
}

/// Breadth-first node list of the hierarchy below `root`.
fn bfs_hierarchy(h: &[Merge], root: usize) -> Vec<usize> {
    let n = h.len() + 1;
    let mut out = Vec::new();
    let mut level = vec![root];
    while !level.is_empty() {
        out.extend_from_slice(&level);
        level = level
            .iter()
            .filter(|&&x| x >= n)
            .flat_map(|&x| [h[x - n].left, h[x - n].right])
            .collect();
    }
    out
}

fn condense(h: &[Merge], min_cluster_size: usize) -> Vec<CondensedRow> {
    let n = h.len() + 1;
    let root = 2 * h.len();
    let mut relabel = vec![0usize; root + 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut ignore = vec![false; root + 1];
    let mut rows = Vec::new();
    let count = |x: usize| if x >= n { h[x - n].size } else { 1 };

    for node in bfs_hierarchy(h, root) {
        if ignore[node] || node < n {
            continue;
        }
        let Merge { left, right, value, .. } = h[node - n];
        let lambda = if value > 0.0 { 1.0 / value } else { f64::INFINITY };
        let (lc, rc) = (count(left), count(right));
        let parent = relabel[node];
        let fall_out = |sub: usize, rows: &mut Vec<CondensedRow>, ignore: &mut Vec<bool>| {
            for s in bfs_hierarchy(h, sub) {
                if s < n {
                    rows.push(CondensedRow {
                        parent,
                        child: s,
                        lambda,
                        size: 1,
                    });
                }
                ignore[s] = true;
            }
        };
        if lc >= min_cluster_size && rc >= min_cluster_size {
            for (child, size) in [(left, lc), (right, rc)] {
                relabel[child] = next_label;
                next_label += 1;
                rows.push(CondensedRow {
                    parent,
                    child: relabel[child],
                    lambda,
                    size,
                });
            }
        } else if lc < min_cluster_size && rc < min_cluster_size {
            fall_out(left, &mut rows, &mut ignore);
            fall_out(right, &mut rows, &mut ignore);
        } else if lc < min_cluster_size {
            relabel[right] = parent;
            fall_out(left, &mut rows, &mut ignore);
        } else {
            relabel[left] = parent;
            fall_out(right, &mut rows, &mut ignore);
        }
    }
    rows
}

fn stability(rows: &[CondensedRow], root: usize) -> HashMap<usize, f64> {
    let largest = rows.iter().map(|r| r.child).max().unwrap_or(root).max(root);
    let mut births = vec![f64::NAN; largest + 1];
    for r in rows {
        births[r.child] = r.lambda;
    }
    births[root] = 0.0;
    let mut out: HashMap<usize, f64> = HashMap::new();
    for r in rows {
        *out.entry(r.parent).or_insert(0.0) += (r.lambda - births[r.parent]) * r.size as f64;
    }
    out
}

fn select_eom(rows: &[CondensedRow], mut stab: HashMap<usize, f64>, root: usize) -> HashSet<usize> {
    let mut nodes: Vec<usize> = stab.keys().copied().filter(|&c| c != root).collect();
    nodes.sort_unstable_by(|a, b| b.cmp(a));
    let tree: Vec<&CondensedRow> = rows.iter().filter(|r| r.size > 1).collect();
    let mut is_cluster: HashMap<usize, bool> = nodes.iter().map(|&c| (c, true)).collect();
    for &node in &nodes {
        let subtree: f64 = tree
            .iter()
            .filter(|r| r.parent == node)
            .map(|r| stab.get(&r.child).copied().unwrap_or(0.0))
            .sum();
        if subtree > stab[&node] {
            is_cluster.insert(node, false);
            stab.insert(node, subtree);
        } else {
            let mut level = vec![node];
            while !level.is_empty() {
                for &c in &level {
                    if c != node {
                        is_cluster.insert(c, false);
                    }
                }
                level = tree
                    .iter()
                    .filter(|r| level.contains(&r.parent))
                    .map(|r| r.child)
                    .collect();
            }
        }
    }
    is_cluster.into_iter().filter(|&(_, v)| v).map(|(c, _)| c).collect()
}

/// The condensed cluster tree, exposed for inspection.
pub fn condensed_tree(m: &DistanceMatrix, min_cluster_size: usize, min_samples: usize) -> Vec<CondensedRow> {
    let n = m.len();
    if n < 2 {
        return Vec::new();
    }
    let ms = min_samples.clamp(1, n);
    let core = core_distances(m, ms);
    condense(&single_linkage(n, prim(m, &core)), min_cluster_size.max(2))
}

/// Cluster labels for the points of `m`. Fewer points than
/// `min_cluster_size` yields all noise. `min_samples` is clamped to `1..=n`.
pub fn hdbscan(m: &DistanceMatrix, min_cluster_size: usize, min_samples: usize) -> Labels {
    let n = m.len();
    let min_cluster_size = min_cluster_size.max(2);
    if n < min_cluster_size || n < 2 {
        return vec![None; n];
    }
    let rows = condensed_tree(m, min_cluster_size, min_samples);
    let root = n;
    let selected = select_eom(&rows, stability(&rows, root), root);

    let parent_of: HashMap<usize, usize> = rows.iter().map(|r| (r.child, r.parent)).collect();
    let raw: Vec<Option<usize>> = (0..n)
        .map(|p| {
            let mut c = parent_of.get(&p).copied()?;
            loop {
                if selected.contains(&c) {
                    return Some(c);
                }
                if c == root {
                    return None;
                }
                c = parent_of.get(&c).copied()?;
            }
        })
        .collect();
    renumber(&raw)
}

/// Relabels clusters 0, 1, ... in order of their lowest point index.
pub fn renumber(raw: &[Option<usize>]) -> Labels {
    let mut map: HashMap<usize, usize> = HashMap::new();
    raw.iter()
        .map(|l| {
            l.map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> DistanceMatrix {
        let rows: Vec<Vec<f64>> = points
            .iter()
            .map(|a| points.iter().map(|b| (a - b).abs()).collect())
            .collect();
        DistanceMatrix::from_rows(&rows)
    }

    #[test]
    fn two_blobs() {
        let m = line(&[0.0, 0.02, 0.04, 0.06, 0.08, 20.0, 20.02, 20.04, 20.06, 20.08]);
        let labels = hdbscan(&m, 3, 2);
        assert_eq!(labels[..5], [Some(0); 5]);
        assert_eq!(labels[5..], [Some(1); 5]);
    }

    #[test]
    fn blob_plus_outlier() {
        // a lone blob is never selected (the root is not a candidate), so
        // the outlier sits beside two blobs
        let m = line(&[0.0, 0.01, 0.03, 0.06, 0.1, 0.12, 0.13, 50.0, 50.01, 50.03, 200.0]);
        let labels = hdbscan(&m, 3, 2);
        let mut expected = vec![Some(0); 7];
        expected.extend([Some(1), Some(1), Some(1), None]);
        assert_eq!(labels, expected);
        assert_eq!(hdbscan(&line(&[0.0, 0.01, 0.03, 0.06, 0.1, 50.0]), 3, 2), [None; 6]);
    }

    #[test]
    fn too_few_points() {
        assert_eq!(hdbscan(&line(&[0.0, 1.0]), 3, 2), [None, None]);
        assert!(hdbscan(&line(&[]), 3, 2).is_empty());
    }

    #[test]
    fn renumbering() {
        assert_eq!(
            renumber(&[Some(9), None, Some(4), Some(9)]),
            [Some(0), None, Some(1), Some(0)]
        );
    }

    #[test]
    fn mst_weights_are_mutual_reachability() {
        let m = line(&[0.0, 1.0, 3.0]);
        let core = core_distances(&m, 2);
        assert_eq!(core, [1.0, 1.0, 2.0]);
        let w: Vec<f64> = prim(&m, &core).iter().map(|e| e.weight).collect();
        assert_eq!(w, [1.0, 2.0]);
    }

    #[test]
    fn zero_distances_give_infinite_lambda() {
        let m = line(&[0.0, 0.0, 0.0, 0.0, 9.0, 9.0, 9.0, 9.0]);
        let labels = hdbscan(&m, 3, 2);
        assert_eq!(
            labels,
            [Some(0), Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), Some(1)]
        );
    }
}
