//! Rooted forests over the propositions of one paragraph.
//!
//! A forest is stored as a parent vector; `None` means the node hangs off the
//! phantom root, so the phantom's children are the real roots.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TreeSkeleton {
    pub parent: Vec<Option<usize>>,
}

/// Position in a level list: the phantom root or a real node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Phantom,
    Node(usize),
}

impl TreeSkeleton {
    pub fn flat(n: usize) -> Self {
        TreeSkeleton { parent: vec![None; n] }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn children(&self, node: Slot) -> Vec<usize> {
        let target = match node {
            Slot::Phantom => None,
            Slot::Node(k) => Some(k),
        };
        (0..self.len()).filter(|&c| self.parent[c] == target).collect()
    }

    pub fn roots(&self) -> Vec<usize> {
        self.children(Slot::Phantom)
    }

    /// `true` when every node reaches the phantom root.
    pub fn is_forest(&self) -> bool {
        let n = self.len();
        (0..n).all(|start| {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.parent[cur] {
                if p >= n || steps > n {
                    return false;
                }
                cur = p;
                steps += 1;
            }
            true
        })
    }

    /// `true` when `node` lies in the subtree rooted at `root` (inclusive).
    pub fn in_subtree(&self, node: usize, root: usize) -> bool {
        let mut cur = Some(node);
        let mut steps = 0;
        while let Some(c) = cur {
            if c == root {
                return true;
            }
            steps += 1;
            if steps > self.len() {
                return false;
            }
            cur = self.parent[c];
        }
        false
    }

    /// Top-down breadth-first ordering starting at the phantom root; siblings
    /// in ascending id order.
    pub fn level_list(&self) -> Vec<Slot> {
        let mut out = vec![Slot::Phantom];
        let mut head = 0;
        while head < out.len() {
            let cur = out[head];
            head += 1;
            out.extend(self.children(cur).into_iter().map(Slot::Node));
        }
        out
    }

    /// Detaches the subtree of `node` and hangs it under `target`. Returns
    /// `None` for the identity move or when `target` sits inside the subtree.
    pub fn reattach(&self, node: usize, target: Slot) -> Option<TreeSkeleton> {
        let new_parent = match target {
            Slot::Phantom => None,
            Slot::Node(t) => {
                if self.in_subtree(t, node) {
                    return None;
                }
                Some(t)
            }
        };
        if self.parent[node] == new_parent {
            return None;
        }
        let mut next = self.clone();
        next.parent[node] = new_parent;
        Some(next)
    }

    /// Node depth below the phantom root (roots have depth 1).
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.len()];
        for slot in self.level_list().into_iter().skip(1) {
            if let Slot::Node(k) = slot {
                depth[k] = self.parent[k].map_or(1, |p| depth[p] + 1);
            }
        }
        depth
    }
}

/// Decodes a Prüfer sequence over `seq.len() + 2` vertices into an edge list.
pub fn prufer_decode(seq: &[usize]) -> Vec<(usize, usize)> {
    let n = seq.len() + 2;
    let mut degree = vec![1usize; n];
    for &a in seq {
        degree[a] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &a in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1).expect("a Prüfer sequence always leaves a leaf");
        edges.push((leaf, a));
        degree[leaf] -= 1;
        degree[a] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Uniformly random labeled tree over `node_count` real nodes plus the
/// phantom root, via a random Prüfer sequence over `node_count + 1` vertices.
pub fn sample_random_tree<R: Rng + ?Sized>(node_count: usize, rng: &mut R) -> TreeSkeleton {
    assert!(node_count >= 1, "a paragraph tree needs at least one node");
    let vertices = node_count + 1;
    let phantom = node_count;
    let seq: Vec<usize> = (0..vertices - 2).map(|_| rng.gen_range(0..vertices)).collect();
    let edges = prufer_decode(&seq);

    let mut adj = vec![Vec::new(); vertices];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut parent = vec![None; node_count];
    let mut seen = vec![false; vertices];
    let mut stack = vec![phantom];
    seen[phantom] = true;
    while let Some(u) = stack.pop() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = (u != phantom).then_some(u);
                stack.push(w);
            }
        }
    }
    TreeSkeleton { parent }
}

/// Candidate trees from moving the subtree at level position `i` under each
/// earlier position `j = i-1, ..., 0`, skipping cyclic and identity moves.
pub fn local_update_moves<'a>(
    tree: &'a TreeSkeleton,
    levels: &'a [Slot],
    i: usize,
) -> impl Iterator<Item = TreeSkeleton> + 'a {
    let node = match levels.get(i) {
        Some(Slot::Node(k)) => Some(*k),
        _ => None,
    };
    (0..i).rev().filter_map(move |j| node.and_then(|k| tree.reattach(k, levels[j])))
}
