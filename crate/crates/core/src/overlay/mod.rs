//! Skip-graph DHT holding controller vertices and data-object vertices.
//!
//! Both kinds live in one identifier space but are linked into separate skip
//! graphs, so a search can be restricted to controllers without walking over
//! data objects. Every routing result carries the sequence of owner
//! addresses it visited; consecutive vertices with the same owner cost
//! nothing, every change of owner is one message.

mod skip_graph;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::identity::{hash_parts, Address, Identifier, NodeIndex};
pub use skip_graph::{levels_for, SkipGraph, Vertex, VertexIdx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VertexKind {
    Controller,
    DataObject,
}

impl fmt::Display for VertexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VertexKind::Controller => "controller",
            VertexKind::DataObject => "data-object",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OverlayError {
    #[error("overlay is empty")]
    EmptyOverlay,
    #[error("{identifier} already announced by {owner}")]
    DuplicateAnnouncement {
        identifier: Identifier,
        owner: Address,
    },
    #[error("controller identifier {0} announced by two owners")]
    IdentifierCollision(Identifier),
    #[error("{0} not found")]
    NotFound(Identifier),
    #[error("{0} has no controller vertex")]
    UnknownStart(Address),
}

/// Owners visited by a routing operation. `hops()` counts owner changes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RoutePath(pub Vec<Address>);

impl RoutePath {
    fn push(&mut self, a: Address) {
        if self.0.last() != Some(&a) {
            self.0.push(a);
        }
    }

    fn extend(&mut self, other: impl IntoIterator<Item = Address>) {
        for a in other {
            self.push(a);
        }
    }

    pub fn hops(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    /// Consecutive (src, dst) pairs, one per message.
    pub fn messages(&self) -> impl Iterator<Item = (Address, Address)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchResult {
    /// Identifier of the vertex the search ended on.
    pub vertex: Identifier,
    pub holders: Vec<Address>,
    pub hop_count: usize,
    pub terminal: Address,
    pub path: RoutePath,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Announcement {
    /// True when a new vertex was linked in; false when the announcer was
    /// added to the replica list of an existing vertex.
    pub created: bool,
    pub path: RoutePath,
}

/// Result of sampling a controller uniformly from a probe identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerSample {
    pub anchor: Identifier,
    pub chosen: Address,
    pub path: RoutePath,
}

#[derive(Debug, Clone)]
pub struct Overlay {
    controllers: SkipGraph,
    objects: SkipGraph,
    controller_of: BTreeMap<NodeIndex, VertexIdx>,
    /// Entry vertex into the object graph for each owner that owns one.
    object_entry: BTreeMap<NodeIndex, VertexIdx>,
    /// Announcers per object vertex, sorted by node index.
    replicas: BTreeMap<Identifier, Vec<Address>>,
}

impl Overlay {
    pub fn new(max_controllers: usize, max_objects: usize) -> Self {
        Self {
            controllers: SkipGraph::new(levels_for(max_controllers), true),
            objects: SkipGraph::new(levels_for(max_objects), false),
            controller_of: BTreeMap::new(),
            object_entry: BTreeMap::new(),
            replicas: BTreeMap::new(),
        }
    }

    pub fn graph(&self, kind: VertexKind) -> &SkipGraph {
        match kind {
            VertexKind::Controller => &self.controllers,
            VertexKind::DataObject => &self.objects,
        }
    }

    pub fn controller_count(&self) -> usize {
        self.controllers.len()
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn controller_vertex(&self, node: NodeIndex) -> Option<VertexIdx> {
        self.controller_of.get(&node).copied()
    }

    /// Inserts `identifier` into the graph for `kind`, or records `owner` as
    /// an extra replica holder if a data-object vertex already exists.
    pub fn announce(
        &mut self,
        identifier: Identifier,
        owner: Address,
        kind: VertexKind,
    ) -> Result<Announcement, OverlayError> {
        match kind {
            VertexKind::Controller => {
                if let Some(existing) = self.controllers.find(&identifier) {
                    let holder = self.controllers.vertex(existing).owner;
                    return Err(if holder == owner {
                        OverlayError::DuplicateAnnouncement { identifier, owner }
                    } else {
                        OverlayError::IdentifierCollision(identifier)
                    });
                }
                if self.controller_of.contains_key(&owner.node) {
                    return Err(OverlayError::DuplicateAnnouncement { identifier, owner });
                }
                let introducer = self.controllers.iter_sorted().next().map(|_| 0);
                let (idx, route) = self.controllers.insert(identifier, owner, introducer);
                self.controller_of.insert(owner.node, idx);
                let mut path = RoutePath::default();
                path.push(owner);
                path.extend(route.iter().map(|&v| self.controllers.vertex(v).owner));
                Ok(Announcement {
                    created: true,
                    path,
                })
            }
            VertexKind::DataObject => {
                if let Some(existing) = self.replicas.get(&identifier) {
                    if existing.contains(&owner) {
                        return Err(OverlayError::DuplicateAnnouncement { identifier, owner });
                    }
                }
                let mut path = RoutePath::default();
                path.push(owner);
                if self.objects.is_empty() {
                    let (idx, _) = self.objects.insert(identifier, owner, None);
                    self.object_entry.entry(owner.node).or_insert(idx);
                    self.replicas.insert(identifier, vec![owner]);
                    return Ok(Announcement {
                        created: true,
                        path,
                    });
                }
                let entry = self.object_entry_for(owner.node);
                if self.objects.find(&identifier).is_some() {
                    let (found, route) = self.objects.floor_search(entry, &identifier);
                    debug_assert_eq!(self.objects.vertex(found).id, identifier);
                    path.extend(route.iter().map(|&v| self.objects.vertex(v).owner));
                    path.push(owner);
                    let holders = self.replicas.get_mut(&identifier).unwrap();
                    holders.push(owner);
                    holders.sort();
                    return Ok(Announcement {
                        created: false,
                        path,
                    });
                }
                let (idx, route) = self.objects.insert(identifier, owner, Some(entry));
                path.extend(route.iter().map(|&v| self.objects.vertex(v).owner));
                self.object_entry.entry(owner.node).or_insert(idx);
                self.replicas.insert(identifier, vec![owner]);
                Ok(Announcement {
                    created: true,
                    path,
                })
            }
        }
    }

    fn object_entry_for(&self, node: NodeIndex) -> VertexIdx {
        // vertex 0 is the first object ever announced and serves as introducer
        self.object_entry.get(&node).copied().unwrap_or(0)
    }

    fn start_vertex(&self, start: Address) -> Result<VertexIdx, OverlayError> {
        self.controller_of
            .get(&start.node)
            .copied()
            .ok_or(OverlayError::UnknownStart(start))
    }

    /// Floor search for `target` in the graph of `kind`, starting at the
    /// controller `start`. The path ends at the terminal vertex owner; the
    /// reply back to `start` is not included.
    pub fn search_num_id(
        &self,
        start: Address,
        target: &Identifier,
        kind: VertexKind,
    ) -> Result<SearchResult, OverlayError> {
        let start_vertex = self.start_vertex(start)?;
        let graph = self.graph(kind);
        if graph.is_empty() {
            return Err(OverlayError::EmptyOverlay);
        }
        let entry = match kind {
            VertexKind::Controller => start_vertex,
            VertexKind::DataObject => self.object_entry_for(start.node),
        };
        let mut path = RoutePath::default();
        path.push(start);
        let (found, route) = graph.floor_search(entry, target);
        path.extend(route.iter().map(|&v| graph.vertex(v).owner));
        let v = graph.vertex(found);
        let holders = match kind {
            VertexKind::Controller => vec![v.owner],
            VertexKind::DataObject => self.replicas[&v.id].clone(),
        };
        Ok(SearchResult {
            vertex: v.id,
            holders,
            hop_count: path.hops(),
            terminal: v.owner,
            path,
        })
    }

    /// All announcers of the data object `identifier`, in node order.
    pub fn resolve_holders(
        &self,
        start: Address,
        identifier: &Identifier,
    ) -> Result<SearchResult, OverlayError> {
        let res = self.search_num_id(start, identifier, VertexKind::DataObject)?;
        if res.vertex != *identifier {
            return Err(OverlayError::NotFound(*identifier));
        }
        Ok(res)
    }

    /// Picks a controller with uniform probability over all controllers.
    ///
    /// A floor search for `probe` reaches an anchor vertex; the controller is
    /// then the one `offset` positions further along the ring, where `offset`
    /// is drawn from a hash of the probe. The anchor is biased towards
    /// vertices with large gaps, the offset is not, so the result is uniform.
    pub fn sample_controller(
        &self,
        start: Address,
        probe: &Identifier,
    ) -> Result<ControllerSample, OverlayError> {
        let search = self.search_num_id(start, probe, VertexKind::Controller)?;
        let anchor = self.controllers.find(&search.vertex).unwrap();
        let n = self.controllers.len() as u64;
        let offset = hash_parts(&[probe.as_bytes(), b"offset"]).high_u64() % n;
        let (chosen, walk) = self.controllers.walk_offset(anchor, offset as usize);
        let mut path = search.path;
        path.extend(walk.iter().map(|&v| self.controllers.vertex(v).owner));
        Ok(ControllerSample {
            anchor: search.vertex,
            chosen: self.controllers.vertex(chosen).owner,
            path,
        })
    }

    pub fn holders(&self, identifier: &Identifier) -> Option<&[Address]> {
        self.replicas.get(identifier).map(Vec::as_slice)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.controllers
            .check_invariants()
            .map_err(|e| format!("controller graph: {e}"))?;
        self.objects
            .check_invariants()
            .map_err(|e| format!("object graph: {e}"))?;
        for (id, holders) in &self.replicas {
            if holders.is_empty() || !holders.windows(2).all(|w| w[0] < w[1]) {
                return Err(format!("replica list of {id} malformed"));
            }
        }
        Ok(())
    }

    /// One `hex_id,kind,owner,level0_left,level0_right` line per vertex.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for kind in [VertexKind::Controller, VertexKind::DataObject] {
            let g = self.graph(kind);
            for (_, v) in g.iter_sorted() {
                let side = |n: Option<VertexIdx>| n.map(|i| g.vertex(i).id.to_hex()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    v.id.to_hex(),
                    kind,
                    v.owner,
                    side(v.left(0)),
                    side(v.right(0))
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{derive_node_identifier, NodeKey};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn controllers(n: u32) -> Overlay {
        let mut o = Overlay::new(n as usize, 64);
        for i in 0..n {
            let id = derive_node_identifier(&NodeKey::for_index(i));
            o.announce(id, Address::for_node(i), VertexKind::Controller)
                .unwrap();
        }
        o
    }

    fn brute_floor(ids: &[Identifier], target: &Identifier) -> Identifier {
        ids.iter()
            .filter(|id| *id <= target)
            .max()
            .copied()
            .unwrap_or_else(|| *ids.iter().min().unwrap())
    }

    #[test]
    fn empty_overlay_search() {
        let mut o = controllers(2);
        assert_eq!(
            o.search_num_id(Address::for_node(0), &Identifier::ZERO, VertexKind::DataObject),
            Err(OverlayError::EmptyOverlay)
        );
        o.announce(Identifier([1; 32]), Address::for_node(1), VertexKind::DataObject)
            .unwrap();
        assert!(o
            .search_num_id(Address::for_node(0), &Identifier::ZERO, VertexKind::DataObject)
            .is_ok());
    }

    #[test]
    fn unknown_start_is_rejected() {
        let o = controllers(3);
        assert_eq!(
            o.search_num_id(Address::for_node(9), &Identifier::ZERO, VertexKind::Controller),
            Err(OverlayError::UnknownStart(Address::for_node(9)))
        );
    }

    #[test]
    fn single_vertex_search_has_no_hops() {
        let o = controllers(1);
        let r = o
            .search_num_id(Address::for_node(0), &Identifier::MAX, VertexKind::Controller)
            .unwrap();
        assert_eq!(r.hop_count, 0);
        assert_eq!(r.terminal, Address::for_node(0));
    }

    #[test]
    fn duplicate_announcements() {
        let mut o = controllers(4);
        let id = derive_node_identifier(&NodeKey::for_index(2));
        assert_eq!(
            o.announce(id, Address::for_node(2), VertexKind::Controller),
            Err(OverlayError::DuplicateAnnouncement {
                identifier: id,
                owner: Address::for_node(2)
            })
        );
        let obj = Identifier([9; 32]);
        o.announce(obj, Address::for_node(1), VertexKind::DataObject)
            .unwrap();
        assert!(matches!(
            o.announce(obj, Address::for_node(1), VertexKind::DataObject),
            Err(OverlayError::DuplicateAnnouncement { .. })
        ));
    }

    #[test]
    fn replicas_resolve_in_node_order() {
        let mut o = controllers(8);
        let obj = Identifier([0x42; 32]);
        for n in [5, 1, 3] {
            o.announce(obj, Address::for_node(n), VertexKind::DataObject)
                .unwrap();
        }
        let r = o.resolve_holders(Address::for_node(7), &obj).unwrap();
        assert_eq!(
            r.holders,
            vec![Address::for_node(1), Address::for_node(3), Address::for_node(5)]
        );
        assert_eq!(
            o.resolve_holders(Address::for_node(7), &Identifier([0x43; 32])),
            Err(OverlayError::NotFound(Identifier([0x43; 32])))
        );
    }

    #[test]
    fn exact_hit_returns_owner() {
        let o = controllers(16);
        let id = derive_node_identifier(&NodeKey::for_index(11));
        let r = o
            .search_num_id(Address::for_node(3), &id, VertexKind::Controller)
            .unwrap();
        assert_eq!(r.vertex, id);
        assert_eq!(r.holders, vec![Address::for_node(11)]);
        assert_eq!(*r.path.0.first().unwrap(), Address::for_node(3));
        assert_eq!(*r.path.0.last().unwrap(), Address::for_node(11));
    }

    #[test]
    fn floor_search_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let mut o = Overlay::new(64, 64);
        let mut ids = Vec::new();
        for i in 0..64 {
            let id = Identifier(rng.gen());
            o.announce(id, Address::for_node(i), VertexKind::Controller)
                .unwrap();
            ids.push(id);
        }
        for _ in 0..500 {
            let target = Identifier(rng.gen());
            let start = Address::for_node(rng.gen_range(0..64));
            let r = o.search_num_id(start, &target, VertexKind::Controller).unwrap();
            assert_eq!(r.vertex, brute_floor(&ids, &target));
        }
        o.check_invariants().unwrap();
    }

    #[test]
    fn object_graph_is_separate_and_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut o = controllers(10);
        let mut ids = Vec::new();
        for i in 0..200 {
            let id = Identifier(rng.gen());
            let a = o
                .announce(id, Address::for_node(i % 10), VertexKind::DataObject)
                .unwrap();
            assert!(a.created);
            ids.push(id);
        }
        o.check_invariants().unwrap();
        for _ in 0..200 {
            let target = Identifier(rng.gen());
            let r = o
                .search_num_id(Address::for_node(rng.gen_range(0..10)), &target, VertexKind::DataObject)
                .unwrap();
            assert_eq!(r.vertex, brute_floor(&ids, &target));
        }
        assert_eq!(o.controller_count(), 10);
        assert_eq!(o.object_count(), 200);
    }

    #[test]
    fn sampling_is_deterministic_and_covers_every_controller() {
        let o = controllers(16);
        let mut seen = std::collections::BTreeSet::new();
        for k in 0u32..400 {
            let probe = hash_parts(&[b"probe", &k.to_be_bytes()]);
            let a = o.sample_controller(Address::for_node(0), &probe).unwrap();
            let b = o.sample_controller(Address::for_node(0), &probe).unwrap();
            assert_eq!(a, b);
            seen.insert(a.chosen);
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn dump_has_one_line_per_vertex() {
        let mut o = controllers(3);
        o.announce(Identifier([3; 32]), Address::for_node(0), VertexKind::DataObject)
            .unwrap();
        let dump = o.dump();
        let lines: Vec<_> = dump.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with(&format!("{},data-object,10.0.0.0:7000,,", "03".repeat(32))));
        assert_eq!(lines[0].split(',').count(), 5);
    }
}
