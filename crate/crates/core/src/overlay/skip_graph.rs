//! Arena-backed skip graph over [`Identifier`]s.
//!
//! Level 0 is a doubly linked list of every vertex sorted by numeric ID. A
//! vertex belongs to the level-ℓ list of vertices that share the first ℓ bits
//! of its membership vector. Routing is greedy: start at the top level, move
//! toward the target while that does not overshoot, then drop a level.

use std::collections::BTreeMap;

use crate::identity::{common_prefix_len, Address, Identifier};

pub type VertexIdx = usize;

const LEFT: usize = 0;
const RIGHT: usize = 1;

#[derive(Debug, Clone)]
pub struct Vertex {
    pub id: Identifier,
    pub owner: Address,
    pub membership: Identifier,
    /// `links[level] = [left, right]`
    links: Vec<[Option<VertexIdx>; 2]>,
}

impl Vertex {
    pub fn left(&self, level: usize) -> Option<VertexIdx> {
        self.links[level][LEFT]
    }

    pub fn right(&self, level: usize) -> Option<VertexIdx> {
        self.links[level][RIGHT]
    }
}

/// Number of levels for a graph expected to hold up to `max_vertices`.
pub fn levels_for(max_vertices: usize) -> usize {
    let max = max_vertices.max(2);
    (usize::BITS - (max - 1).leading_zeros()) as usize + 2
}

#[derive(Debug, Clone)]
pub struct SkipGraph {
    levels: usize,
    vertices: Vec<Vertex>,
    by_id: BTreeMap<Identifier, VertexIdx>,
    /// Level-0 rank of each vertex; maintained only when `track_ranks`.
    ranks: Vec<usize>,
    track_ranks: bool,
}

/// Vertices visited by one routing operation, in order.
pub type Route = Vec<VertexIdx>;

impl SkipGraph {
    pub fn new(levels: usize, track_ranks: bool) -> Self {
        assert!(levels >= 1);
        Self {
            levels,
            vertices: Vec::new(),
            by_id: BTreeMap::new(),
            ranks: Vec::new(),
            track_ranks,
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, idx: VertexIdx) -> &Vertex {
        &self.vertices[idx]
    }

    pub fn find(&self, id: &Identifier) -> Option<VertexIdx> {
        self.by_id.get(id).copied()
    }

    /// Vertices in ascending identifier order.
    pub fn iter_sorted(&self) -> impl Iterator<Item = (VertexIdx, &Vertex)> + '_ {
        self.by_id.values().map(move |&i| (i, &self.vertices[i]))
    }

    /// Traverses level 0 from the smallest vertex using the links only.
    pub fn level0_traversal(&self) -> Vec<VertexIdx> {
        let mut out = Vec::with_capacity(self.len());
        let mut cur = self.by_id.values().next().copied();
        while let Some(c) = cur {
            out.push(c);
            if out.len() > self.len() {
                break;
            }
            cur = self.vertices[c].right(0);
        }
        out
    }

    fn link(&mut self, level: usize, left: Option<VertexIdx>, right: Option<VertexIdx>) {
        if let Some(l) = left {
            self.vertices[l].links[level][RIGHT] = right;
        }
        if let Some(r) = right {
            self.vertices[r].links[level][LEFT] = left;
        }
    }

    /// Greatest vertex with ID ≤ `target`, or the smallest vertex when every
    /// ID exceeds the target. Returns the route walked from `start`.
    pub fn floor_search(&self, start: VertexIdx, target: &Identifier) -> (VertexIdx, Route) {
        let mut cur = start;
        let mut route = vec![start];
        for level in (0..self.levels).rev() {
            while self.vertices[cur].id > *target {
                match self.vertices[cur].left(level) {
                    Some(l) => {
                        cur = l;
                        route.push(cur);
                    }
                    None => break,
                }
            }
            while let Some(r) = self.vertices[cur].right(level) {
                if self.vertices[r].id > *target {
                    break;
                }
                cur = r;
                route.push(cur);
            }
        }
        (cur, route)
    }

    /// Inserts a new vertex, locating its level-0 position by a search from
    /// `introducer`. The returned route holds the search followed by the
    /// per-level neighbor discovery walks, each walk starting at the new vertex.
    pub fn insert(
        &mut self,
        id: Identifier,
        owner: Address,
        introducer: Option<VertexIdx>,
    ) -> (VertexIdx, Route) {
        assert!(!self.by_id.contains_key(&id), "identifier already present");
        let idx = self.vertices.len();
        self.vertices.push(Vertex {
            id,
            owner,
            membership: id.membership_vector(),
            links: vec![[None, None]; self.levels],
        });
        if self.by_id.is_empty() {
            self.by_id.insert(id, idx);
            self.rebuild_ranks();
            return (idx, Vec::new());
        }

        let introducer = introducer.unwrap_or_else(|| *self.by_id.values().next().unwrap());
        let (floor, mut route) = self.floor_search(introducer, &id);
        let (left, right) = if self.vertices[floor].id > id {
            (None, Some(floor))
        } else {
            (Some(floor), self.vertices[floor].right(0))
        };
        self.link(0, left, Some(idx));
        self.link(0, Some(idx), right);
        route.push(idx);

        for level in 1..self.levels {
            let mut found = [None, None];
            for dir in [LEFT, RIGHT] {
                let mut cur = self.vertices[idx].links[level - 1][dir];
                let mut walked = false;
                while let Some(c) = cur {
                    route.push(c);
                    walked = true;
                    if common_prefix_len(&self.vertices[c].membership, &self.vertices[idx].membership)
                        >= level
                    {
                        break;
                    }
                    cur = self.vertices[c].links[level - 1][dir];
                }
                if walked {
                    // reply back to the joining vertex
                    route.push(idx);
                }
                found[dir] = cur;
            }
            match found {
                [None, None] => break,
                [left, right] => {
                    self.link(level, left, Some(idx));
                    self.link(level, Some(idx), right);
                }
            }
        }

        self.by_id.insert(id, idx);
        self.rebuild_ranks();
        (idx, route)
    }

    fn rebuild_ranks(&mut self) {
        if !self.track_ranks {
            return;
        }
        self.ranks = vec![0; self.vertices.len()];
        for (rank, idx) in self.by_id.values().enumerate() {
            self.ranks[*idx] = rank;
        }
    }

    pub fn rank(&self, idx: VertexIdx) -> usize {
        assert!(self.track_ranks, "rank tracking disabled");
        self.ranks[idx]
    }

    /// Walks `offset` positions to the right in level-0 order, wrapping from
    /// the largest vertex to the smallest. Links are treated as span-weighted,
    /// so the walk takes the highest link whose span does not overshoot.
    pub fn walk_offset(&self, start: VertexIdx, offset: usize) -> (VertexIdx, Route) {
        let n = self.len();
        let from = self.rank(start);
        let to = (from + offset % n) % n;
        let (dir, mut remaining) = if to >= from {
            (RIGHT, to - from)
        } else {
            (LEFT, from - to)
        };
        let mut cur = start;
        let mut route = vec![start];
        for level in (0..self.levels).rev() {
            while remaining > 0 {
                let Some(next) = self.vertices[cur].links[level][dir] else {
                    break;
                };
                let span = self.ranks[next].abs_diff(self.ranks[cur]);
                if span > remaining {
                    break;
                }
                remaining -= span;
                cur = next;
                route.push(cur);
            }
        }
        debug_assert_eq!(remaining, 0);
        (cur, route)
    }

    /// Structural audit. Returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let order = self.level0_traversal();
        if order.len() != self.len() {
            return Err(format!(
                "level-0 traversal visits {} of {} vertices",
                order.len(),
                self.len()
            ));
        }
        for w in order.windows(2) {
            if self.vertices[w[0]].id >= self.vertices[w[1]].id {
                return Err(format!("level-0 not strictly increasing at {}", self.vertices[w[1]].id));
            }
        }
        for level in 0..self.levels {
            // expected right neighbor: next vertex in sorted order sharing `level` bits
            let mut last_by_prefix: BTreeMap<Vec<bool>, VertexIdx> = BTreeMap::new();
            let mut expected_left = vec![None; self.len()];
            let mut expected_right = vec![None; self.len()];
            for &v in &order {
                let m = &self.vertices[v].membership;
                let key: Vec<bool> = (0..level).map(|b| m.bit(b)).collect();
                if let Some(prev) = last_by_prefix.insert(key, v) {
                    expected_left[v] = Some(prev);
                    expected_right[prev] = Some(v);
                }
            }
            for &v in &order {
                let vx = &self.vertices[v];
                if vx.left(level) != expected_left[v] || vx.right(level) != expected_right[v] {
                    return Err(format!("level {level} links of {} are wrong", vx.id));
                }
                for n in [vx.left(level), vx.right(level)].into_iter().flatten() {
                    if common_prefix_len(&vx.membership, &self.vertices[n].membership) < level {
                        return Err(format!("level {level} neighbor of {} shares too few bits", vx.id));
                    }
                }
                if let Some(l) = vx.left(level) {
                    if self.vertices[l].id >= vx.id {
                        return Err(format!("left neighbor of {} not smaller", vx.id));
                    }
                }
                if let Some(r) = vx.right(level) {
                    if self.vertices[r].id <= vx.id {
                        return Err(format!("right neighbor of {} not larger", vx.id));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, seed: u64) -> (SkipGraph, Vec<Identifier>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = SkipGraph::new(levels_for(n), true);
        let mut ids = Vec::new();
        for i in 0..n {
            let id = Identifier(rng.gen());
            g.insert(id, Address::for_node(i as u32), None);
            ids.push(id);
        }
        (g, ids)
    }

    #[test]
    fn levels_formula() {
        assert_eq!(levels_for(1), 3);
        assert_eq!(levels_for(2), 3);
        assert_eq!(levels_for(64), 8);
        assert_eq!(levels_for(65), 9);
        assert_eq!(levels_for(512), 11);
    }

    #[test]
    fn first_vertex_has_no_links() {
        let mut g = SkipGraph::new(4, false);
        let (idx, route) = g.insert(Identifier([7; 32]), Address::for_node(0), None);
        assert!(route.is_empty());
        for level in 0..4 {
            assert_eq!(g.vertex(idx).left(level), None);
            assert_eq!(g.vertex(idx).right(level), None);
        }
    }

    #[test]
    fn eight_vertices_sorted() {
        let (g, mut ids) = random_graph(8, 1);
        ids.sort();
        let walked: Vec<_> = g.level0_traversal().iter().map(|&i| g.vertex(i).id).collect();
        assert_eq!(walked, ids);
        g.check_invariants().unwrap();
    }

    #[test]
    fn invariants_hold_up_to_256() {
        for (n, seed) in [(1, 0), (2, 1), (3, 2), (17, 3), (100, 4), (256, 5)] {
            let (g, _) = random_graph(n, seed);
            g.check_invariants().unwrap();
        }
    }

    #[test]
    fn offset_walk_lands_on_rank() {
        let (g, _) = random_graph(100, 9);
        let sorted: Vec<_> = g.iter_sorted().map(|(i, _)| i).collect();
        for (r, &start) in sorted.iter().enumerate().step_by(7) {
            for offset in [0, 1, 5, 50, 99, 100, 150] {
                let (end, route) = g.walk_offset(start, offset);
                assert_eq!(end, sorted[(r + offset) % 100]);
                assert_eq!(*route.first().unwrap(), start);
                assert_eq!(*route.last().unwrap(), end);
            }
        }
    }
}
