//! The evolving concept hierarchy.
//!
//! Concepts form a preorder under subsumption. The hierarchy stores the
//! transitive reduction of that preorder as a DAG of direct edges, merges
//! mutually subsuming concepts into a single node carrying several names,
//! and keeps the reflexive-transitive closure up to date incrementally so
//! that subsumption queries during insertion are constant time.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag written into every serialized hierarchy document.
pub const HIERARCHY_FORMAT_VERSION: u32 = 1;

/// Stable identifier of a concept. Ids are handed out in discovery order
/// and never reused, so a smaller id always means an earlier discovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub u32);

impl ConceptId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HierarchyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown concept {0}")]
    NotFound(ConceptId),
    #[error("name {0:?} is already used by concept {1}")]
    DuplicateName(String, ConceptId),
    /// Adding the edge would close a cycle. `path` runs upward from the
    /// would-be parent to the would-be child along existing direct edges.
    #[error("edge {child} -> {parent} would close a cycle through {path:?}")]
    Cycle {
        child: ConceptId,
        parent: ConceptId,
        path: Vec<ConceptId>,
    },
    #[error("hierarchy invariant violated: {0}")]
    Invariant(String),
    #[error("unsupported hierarchy document version {0}")]
    Version(u32),
}

/// Normalized form of a concept name used for duplicate detection:
/// trimmed, inner whitespace runs collapsed, lowercased.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub id: ConceptId,
    pub canonical_name: String,
    /// Alternate surface forms merged into this concept, in merge order.
    pub synonym_names: Vec<String>,
    pub description: Option<String>,
    pub explored: bool,
    /// Shortest-path distance from the seed over direct edges.
    pub depth: usize,
}

impl Concept {
    /// Canonical name followed by every synonym.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.synonym_names.iter().map(String::as_str))
    }
}

/// Result of merging two concepts into one synonym class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeOutcome {
    pub survivor: ConceptId,
    /// Every id folded into the survivor. Besides the second argument this
    /// includes any concept strictly between the two, since the preorder
    /// makes those equivalent as well.
    pub absorbed: Vec<ConceptId>,
}

const UNREACHABLE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct ConceptHierarchy {
    seed: ConceptId,
    concepts: Vec<Option<Concept>>,
    parents: Vec<BTreeSet<ConceptId>>,
    children: Vec<BTreeSet<ConceptId>>,
    // Both reflexive. ancestors[x] holds every y with x ⊑ y.
    ancestors: Vec<FixedBitSet>,
    descendants: Vec<FixedBitSet>,
    names: HashMap<String, ConceptId>,
    // Absorbed id -> survivor, for ids retired by merges in this session.
    merged_into: HashMap<ConceptId, ConceptId>,
}

impl ConceptHierarchy {
    /// A hierarchy containing only the unexplored seed concept.
    pub fn new(seed_name: &str) -> Result<Self, HierarchyError> {
        let mut h = ConceptHierarchy {
            seed: ConceptId(0),
            concepts: Vec::new(),
            parents: Vec::new(),
            children: Vec::new(),
            ancestors: Vec::new(),
            descendants: Vec::new(),
            names: HashMap::new(),
            merged_into: HashMap::new(),
        };
        h.seed = h.push_concept(seed_name, None)?;
        h.concept_mut(h.seed).depth = 0;
        Ok(h)
    }

    pub fn seed(&self) -> ConceptId {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.concepts.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: ConceptId) -> bool {
        self.get(id).is_some()
    }

    pub fn get(&self, id: ConceptId) -> Option<&Concept> {
        self.concepts.get(id.index()).and_then(Option::as_ref)
    }

    pub fn concept(&self, id: ConceptId) -> Result<&Concept, HierarchyError> {
        self.get(id).ok_or(HierarchyError::NotFound(id))
    }

    /// Live concepts in id order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.iter().flatten()
    }

    pub fn ids(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.concepts().map(|c| c.id)
    }

    /// The live concept standing for `id`, following merges made since this
    /// hierarchy was created or loaded.
    pub fn resolve(&self, mut id: ConceptId) -> Option<ConceptId> {
        while !self.contains(id) {
            id = *self.merged_into.get(&id)?;
        }
        Some(id)
    }

    /// Looks a concept up by any of its names, after normalization.
    pub fn find_by_name(&self, name: &str) -> Option<ConceptId> {
        self.names.get(&normalize_name(name)).copied()
    }

    pub fn name_of(&self, id: ConceptId) -> Result<&str, HierarchyError> {
        Ok(self.concept(id)?.canonical_name.as_str())
    }

    pub fn direct_parents(&self, id: ConceptId) -> Result<&BTreeSet<ConceptId>, HierarchyError> {
        self.concept(id)?;
        Ok(&self.parents[id.index()])
    }

    pub fn direct_children(&self, id: ConceptId) -> Result<&BTreeSet<ConceptId>, HierarchyError> {
        self.concept(id)?;
        Ok(&self.children[id.index()])
    }

    /// All concepts subsuming `id`, itself included, in id order.
    pub fn ancestors(&self, id: ConceptId) -> Result<Vec<ConceptId>, HierarchyError> {
        self.concept(id)?;
        Ok(self.ancestors[id.index()].ones().map(|i| ConceptId(i as u32)).collect())
    }

    /// All concepts subsumed by `id`, itself included, in id order.
    pub fn descendants(&self, id: ConceptId) -> Result<Vec<ConceptId>, HierarchyError> {
        self.concept(id)?;
        Ok(self.descendants[id.index()].ones().map(|i| ConceptId(i as u32)).collect())
    }

    /// Direct edges as `(child, parent)` pairs, sorted.
    pub fn edges(&self) -> Vec<(ConceptId, ConceptId)> {
        let mut out = Vec::new();
        for c in self.concepts() {
            for &p in &self.parents[c.id.index()] {
                out.push((c.id, p));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.concepts().map(|c| self.parents[c.id.index()].len()).sum()
    }

    /// `c ⊑ d` in the reflexive-transitive closure.
    pub fn is_subsumed(&self, c: ConceptId, d: ConceptId) -> Result<bool, HierarchyError> {
        self.concept(c)?;
        self.concept(d)?;
        Ok(self.ancestors[c.index()].contains(d.index()))
    }

    pub fn depth_of(&self, id: ConceptId) -> Result<usize, HierarchyError> {
        let depth = self.concept(id)?.depth;
        if depth == UNREACHABLE {
            return Err(HierarchyError::Invariant(format!("{id} is not connected to the seed")));
        }
        Ok(depth)
    }

    /// The shallowest unexplored concept with depth below `limit`
    /// (`None` = unbounded), ties broken by discovery order.
    pub fn next_unexplored(&self, limit: Option<usize>) -> Option<ConceptId> {
        self.concepts()
            .filter(|c| !c.explored && c.depth != UNREACHABLE)
            .filter(|c| limit.is_none_or(|l| c.depth < l))
            .min_by_key(|c| (c.depth, c.id))
            .map(|c| c.id)
    }

    /// Unexplored concepts within the depth limit, in exploration order.
    pub fn frontier(&self, limit: Option<usize>) -> Vec<ConceptId> {
        let mut out: Vec<&Concept> = self
            .concepts()
            .filter(|c| !c.explored && c.depth != UNREACHABLE)
            .filter(|c| limit.is_none_or(|l| c.depth < l))
            .collect();
        out.sort_by_key(|c| (c.depth, c.id));
        out.into_iter().map(|c| c.id).collect()
    }

    pub fn mark_explored(&mut self, id: ConceptId) -> Result<(), HierarchyError> {
        self.concept(id)?;
        self.concept_mut(id).explored = true;
        Ok(())
    }

    pub fn set_description(&mut self, id: ConceptId, description: impl Into<String>) -> Result<(), HierarchyError> {
        self.concept(id)?;
        self.concept_mut(id).description = Some(description.into());
        Ok(())
    }

    /// Attaches an extra surface form to an existing concept.
    pub fn add_synonym_name(&mut self, id: ConceptId, name: &str) -> Result<(), HierarchyError> {
        self.concept(id)?;
        let key = checked_name(name)?;
        match self.names.get(&key) {
            Some(&owner) if owner == id => return Ok(()),
            Some(&owner) => return Err(HierarchyError::DuplicateName(name.to_string(), owner)),
            None => {}
        }
        self.names.insert(key, id);
        self.concept_mut(id).synonym_names.push(name.trim().to_string());
        Ok(())
    }

    /// Creates a new concept directly below `parents`. At least one parent is
    /// required so the concept is connected to the seed from the start.
    pub fn add_concept(
        &mut self,
        name: &str,
        description: Option<String>,
        parents: &[ConceptId],
    ) -> Result<ConceptId, HierarchyError> {
        if parents.is_empty() {
            return Err(HierarchyError::InvalidInput(format!(
                "concept {name:?} needs at least one superconcept"
            )));
        }
        for &p in parents {
            self.concept(p)?;
        }
        let id = self.push_concept(name, description)?;
        for &p in parents {
            // A fresh concept has no descendants, so this cannot cycle.
            if !self.ancestors[id.index()].contains(p.index()) {
                self.link(id, p);
            }
        }
        self.recompute_depths();
        Ok(id)
    }

    /// Records `child ⊑ parent`. Implied edges only touch the closure; new
    /// edges are added and any direct edge they make redundant is dropped.
    /// Returns whether the direct edge set changed.
    pub fn add_subsumption(&mut self, child: ConceptId, parent: ConceptId) -> Result<bool, HierarchyError> {
        self.concept(child)?;
        self.concept(parent)?;
        if child == parent || self.ancestors[child.index()].contains(parent.index()) {
            return Ok(false);
        }
        if self.ancestors[parent.index()].contains(child.index()) {
            return Err(HierarchyError::Cycle {
                child,
                parent,
                path: self.upward_path(parent, child),
            });
        }
        self.link(child, parent);
        self.recompute_depths();
        Ok(true)
    }

    /// Removes a direct edge. The closure is rebuilt from the remaining edges.
    /// Fails if the child would lose its last superconcept.
    pub fn remove_edge(&mut self, child: ConceptId, parent: ConceptId) -> Result<bool, HierarchyError> {
        self.concept(child)?;
        self.concept(parent)?;
        if !self.parents[child.index()].contains(&parent) {
            return Ok(false);
        }
        if self.parents[child.index()].len() == 1 {
            return Err(HierarchyError::InvalidInput(format!(
                "removing {child} -> {parent} would disconnect {child}"
            )));
        }
        self.parents[child.index()].remove(&parent);
        self.children[parent.index()].remove(&child);
        self.rebuild_closure()?;
        self.recompute_depths();
        Ok(true)
    }

    /// Folds `a` and `b` into one concept. The earliest-discovered id survives
    /// and collects every name. Concepts strictly between the two are folded
    /// in as well, since they are equivalent to both in the preorder.
    pub fn merge_synonyms(&mut self, a: ConceptId, b: ConceptId) -> Result<MergeOutcome, HierarchyError> {
        self.concept(a)?;
        self.concept(b)?;
        if a == b {
            return Err(HierarchyError::InvalidInput(format!("cannot merge {a} with itself")));
        }
        let mut class = FixedBitSet::with_capacity(self.concepts.len());
        class.insert(a.index());
        class.insert(b.index());
        for (lo, hi) in [(a, b), (b, a)] {
            let mut between = self.descendants[hi.index()].clone();
            between.intersect_with(&self.ancestors[lo.index()]);
            class.union_with(&between);
        }
        let survivor = ConceptId(class.minimum().expect("class holds a and b") as u32);
        let absorbed: Vec<ConceptId> = class
            .ones()
            .map(|i| ConceptId(i as u32))
            .filter(|&id| id != survivor)
            .collect();

        for &gone in &absorbed {
            self.merged_into.insert(gone, survivor);
            let concept = self.concepts[gone.index()].take().expect("live concept");
            let target = self.concept_mut(survivor);
            target.synonym_names.push(concept.canonical_name.clone());
            target.synonym_names.extend(concept.synonym_names.iter().cloned());
            if target.description.is_none() {
                target.description = concept.description.clone();
            }
            target.explored &= concept.explored;
            for name in concept.names() {
                self.names.insert(normalize_name(name), survivor);
            }
        }

        let remap = |id: ConceptId| if class.contains(id.index()) { survivor } else { id };
        let mut edges = BTreeSet::new();
        for (c, p) in self.edges_including_removed(&absorbed) {
            let (c, p) = (remap(c), remap(p));
            if c != p {
                edges.insert((c, p));
            }
        }
        for set in self.parents.iter_mut().chain(self.children.iter_mut()) {
            set.clear();
        }
        for (c, p) in edges {
            self.parents[c.index()].insert(p);
            self.children[p.index()].insert(c);
        }
        self.rebuild_closure()?;
        self.reduce_all();
        self.recompute_depths();
        Ok(MergeOutcome { survivor, absorbed })
    }

    /// Recomputes closure, reduction and depths from the direct edges alone
    /// and compares them with the incrementally maintained state.
    pub fn check_invariants(&self) -> Result<(), HierarchyError> {
        let mut fresh = self.clone();
        fresh.rebuild_closure()?;
        for c in self.concepts() {
            let i = c.id.index();
            if !same_bits(&fresh.ancestors[i], &self.ancestors[i]) || !same_bits(&fresh.descendants[i], &self.descendants[i]) {
                return Err(HierarchyError::Invariant(format!("closure of {} is stale", c.id)));
            }
            for &p in &self.parents[i] {
                if !self.children[p.index()].contains(&c.id) {
                    return Err(HierarchyError::Invariant(format!("edge {} -> {p} not mirrored", c.id)));
                }
                if self.is_redundant(c.id, p) {
                    return Err(HierarchyError::Invariant(format!("edge {} -> {p} is implied", c.id)));
                }
            }
            if !self.ancestors[i].contains(self.seed.index()) {
                return Err(HierarchyError::Invariant(format!("{} does not reach the seed", c.id)));
            }
        }
        fresh.recompute_depths();
        for c in self.concepts() {
            if fresh.concept_ref(c.id).depth != c.depth {
                return Err(HierarchyError::Invariant(format!("depth of {} is stale", c.id)));
            }
        }
        for c in self.concepts() {
            for name in c.names() {
                if self.names.get(&normalize_name(name)) != Some(&c.id) {
                    return Err(HierarchyError::Invariant(format!("name index misses {name:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_document(&self) -> HierarchyDocument {
        HierarchyDocument {
            version: HIERARCHY_FORMAT_VERSION,
            seed: self.seed,
            concepts: self
                .concepts()
                .map(|c| ConceptRecord {
                    id: c.id,
                    canonical_name: c.canonical_name.clone(),
                    synonyms: c.synonym_names.clone(),
                    description: c.description.clone(),
                    explored: c.explored,
                    depth: c.depth,
                })
                .collect(),
            direct_edges: self.edges().into_iter().map(|(c, p)| [c, p]).collect(),
        }
    }

    /// Rebuilds a hierarchy from its document, validating every invariant.
    /// Nothing is returned unless the whole document checks out.
    pub fn from_document(doc: &HierarchyDocument) -> Result<Self, HierarchyError> {
        if doc.version != HIERARCHY_FORMAT_VERSION {
            return Err(HierarchyError::Version(doc.version));
        }
        let size = doc.concepts.iter().map(|c| c.id.index() + 1).max().unwrap_or(0);
        let mut h = ConceptHierarchy {
            seed: doc.seed,
            concepts: vec![None; size],
            parents: vec![BTreeSet::new(); size],
            children: vec![BTreeSet::new(); size],
            ancestors: vec![FixedBitSet::new(); size],
            descendants: vec![FixedBitSet::new(); size],
            names: HashMap::new(),
            merged_into: HashMap::new(),
        };
        for rec in &doc.concepts {
            let slot = &mut h.concepts[rec.id.index()];
            if slot.is_some() {
                return Err(HierarchyError::InvalidInput(format!("duplicate concept id {}", rec.id)));
            }
            *slot = Some(Concept {
                id: rec.id,
                canonical_name: rec.canonical_name.clone(),
                synonym_names: rec.synonyms.clone(),
                description: rec.description.clone(),
                explored: rec.explored,
                depth: UNREACHABLE,
            });
            for name in std::iter::once(&rec.canonical_name).chain(&rec.synonyms) {
                let key = checked_name(name)?;
                if let Some(&owner) = h.names.get(&key) {
                    return Err(HierarchyError::DuplicateName(name.clone(), owner));
                }
                h.names.insert(key, rec.id);
            }
        }
        h.concept(doc.seed)?;
        for &[c, p] in &doc.direct_edges {
            h.concept(c)?;
            h.concept(p)?;
            if c == p {
                return Err(HierarchyError::InvalidInput(format!("self edge on {c}")));
            }
            h.parents[c.index()].insert(p);
            h.children[p.index()].insert(c);
        }
        h.rebuild_closure()?;
        h.recompute_depths();
        h.check_invariants()?;
        for rec in &doc.concepts {
            if h.concept_ref(rec.id).depth != rec.depth {
                return Err(HierarchyError::Invariant(format!(
                    "stored depth {} of {} disagrees with recomputed {}",
                    rec.depth,
                    rec.id,
                    h.concept_ref(rec.id).depth
                )));
            }
        }
        Ok(h)
    }

    fn concept_ref(&self, id: ConceptId) -> &Concept {
        self.concepts[id.index()].as_ref().expect("live concept")
    }

    fn concept_mut(&mut self, id: ConceptId) -> &mut Concept {
        self.concepts[id.index()].as_mut().expect("live concept")
    }

    fn push_concept(&mut self, name: &str, description: Option<String>) -> Result<ConceptId, HierarchyError> {
        let key = checked_name(name)?;
        if let Some(&owner) = self.names.get(&key) {
            return Err(HierarchyError::DuplicateName(name.to_string(), owner));
        }
        let id = ConceptId(self.concepts.len() as u32);
        self.concepts.push(Some(Concept {
            id,
            canonical_name: name.trim().to_string(),
            synonym_names: Vec::new(),
            description,
            explored: false,
            depth: UNREACHABLE,
        }));
        self.parents.push(BTreeSet::new());
        self.children.push(BTreeSet::new());
        let mut own = FixedBitSet::with_capacity(id.index() + 1);
        own.insert(id.index());
        self.ancestors.push(own.clone());
        self.descendants.push(own);
        self.names.insert(key, id);
        Ok(id)
    }

    // Adds a non-implied, acyclic edge and propagates the closure, then drops
    // direct edges that became redundant. Both preconditions are the caller's.
    fn link(&mut self, child: ConceptId, parent: ConceptId) {
        self.parents[child.index()].insert(parent);
        self.children[parent.index()].insert(child);
        let below = self.descendants[child.index()].clone();
        let above = self.ancestors[parent.index()].clone();
        for x in below.ones() {
            self.ancestors[x].union_with(&above);
        }
        for y in above.ones() {
            self.descendants[y].union_with(&below);
        }
        let mut stale = Vec::new();
        for x in below.ones() {
            let x = ConceptId(x as u32);
            for &y in &self.parents[x.index()] {
                if (x, y) != (child, parent) && above.contains(y.index()) && self.is_redundant(x, y) {
                    stale.push((x, y));
                }
            }
        }
        for (x, y) in stale {
            self.parents[x.index()].remove(&y);
            self.children[y.index()].remove(&x);
        }
    }

    fn is_redundant(&self, child: ConceptId, parent: ConceptId) -> bool {
        self.parents[child.index()]
            .iter()
            .any(|&z| z != parent && self.ancestors[z.index()].contains(parent.index()))
    }

    fn reduce_all(&mut self) {
        let stale: Vec<_> = self
            .edges()
            .into_iter()
            .filter(|&(c, p)| self.is_redundant(c, p))
            .collect();
        for (c, p) in stale {
            self.parents[c.index()].remove(&p);
            self.children[p.index()].remove(&c);
        }
    }

    // Edges of live concepts plus those of concepts just taken out of
    // `concepts` during a merge (their adjacency lists are still intact).
    fn edges_including_removed(&self, removed: &[ConceptId]) -> Vec<(ConceptId, ConceptId)> {
        let mut out = self.edges();
        for &r in removed {
            out.extend(self.parents[r.index()].iter().map(|&p| (r, p)));
        }
        out
    }

    fn rebuild_closure(&mut self) -> Result<(), HierarchyError> {
        let n = self.concepts.len();
        let mut indegree = vec![0usize; n];
        for c in self.concepts() {
            indegree[c.id.index()] = self.parents[c.id.index()].len();
        }
        let mut queue: VecDeque<ConceptId> = self.ids().filter(|id| indegree[id.index()] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            for &ch in &self.children[id.index()] {
                indegree[ch.index()] -= 1;
                if indegree[ch.index()] == 0 {
                    queue.push_back(ch);
                }
            }
        }
        if order.len() != self.len() {
            return Err(HierarchyError::Invariant("direct edges contain a cycle".into()));
        }
        for set in self.ancestors.iter_mut().chain(self.descendants.iter_mut()) {
            *set = FixedBitSet::with_capacity(n);
        }
        for &id in &order {
            let mut anc = FixedBitSet::with_capacity(n);
            anc.insert(id.index());
            for &p in &self.parents[id.index()] {
                anc.union_with(&self.ancestors[p.index()]);
            }
            self.ancestors[id.index()] = anc;
        }
        for &id in order.iter().rev() {
            let mut desc = FixedBitSet::with_capacity(n);
            desc.insert(id.index());
            for &c in &self.children[id.index()] {
                desc.union_with(&self.descendants[c.index()]);
            }
            self.descendants[id.index()] = desc;
        }
        Ok(())
    }

    fn recompute_depths(&mut self) {
        let mut depth = vec![UNREACHABLE; self.concepts.len()];
        depth[self.seed.index()] = 0;
        let mut queue = VecDeque::from([self.seed]);
        while let Some(id) = queue.pop_front() {
            let d = depth[id.index()];
            for &c in &self.children[id.index()] {
                if depth[c.index()] == UNREACHABLE {
                    depth[c.index()] = d + 1;
                    queue.push_back(c);
                }
            }
        }
        for c in self.concepts.iter_mut().flatten() {
            c.depth = depth[c.id.index()];
        }
    }

    // Upward path from `from` to `to` over direct parent edges (BFS).
    fn upward_path(&self, from: ConceptId, to: ConceptId) -> Vec<ConceptId> {
        let mut prev: BTreeMap<ConceptId, ConceptId> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(id) = queue.pop_front() {
            if id == to {
                let mut path = vec![to];
                let mut cur = to;
                while let Some(&p) = prev.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return path;
            }
            for &p in &self.parents[id.index()] {
                if seen.insert(p) {
                    prev.insert(p, id);
                    queue.push_back(p);
                }
            }
        }
        vec![from, to]
    }
}

fn checked_name(name: &str) -> Result<String, HierarchyError> {
    let key = normalize_name(name);
    if key.is_empty() {
        return Err(HierarchyError::InvalidInput("concept name is empty".into()));
    }
    Ok(key)
}

/// Serialized form of a hierarchy. Field names are part of the checkpoint
/// format; edges are written child first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyDocument {
    pub version: u32,
    pub seed: ConceptId,
    pub concepts: Vec<ConceptRecord>,
    pub direct_edges: Vec<[ConceptId; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub id: ConceptId,
    pub canonical_name: String,
    pub synonyms: Vec<String>,
    pub description: Option<String>,
    pub explored: bool,
    pub depth: usize,
}

// Bit sets grow lazily, so equal sets may differ in capacity.
fn same_bits(a: &FixedBitSet, b: &FixedBitSet) -> bool {
    a.ones().eq(b.ones())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparable_parents_keep_only_the_lower_one() {
        for order in [[0usize, 1], [1, 0]] {
            let mut h = ConceptHierarchy::new("Goats").unwrap();
            let dairy = h.add_concept("Dairy Goats", None, &[h.seed()]).unwrap();
            let pair = [h.seed(), dairy];
            let saanen = h.add_concept("Saanen", None, &[pair[order[0]], pair[order[1]]]).unwrap();
            assert_eq!(h.direct_parents(saanen).unwrap(), &BTreeSet::from([dairy]));
            h.check_invariants().unwrap();
        }
    }

    pub(crate) fn excerpt() -> (ConceptHierarchy, BTreeMap<&'static str, ConceptId>) {
        let mut h = ConceptHierarchy::new("Goats").unwrap();
        let mut ids = BTreeMap::from([("Goats", h.seed())]);
        let edges = [
            ("Dairy Goats", "Goats"),
            ("Show Goats", "Goats"),
            ("Mini. Goats", "Goats"),
            ("Meat Goats", "Goats"),
            ("Fiber Goats", "Goats"),
            ("Saanen", "Dairy Goats"),
            ("Toggenburg", "Dairy Goats"),
            ("Nigerian Dwarf", "Dairy Goats"),
            ("Dwarf Nigerian", "Mini. Goats"),
            ("Mini. Nubian", "Mini. Goats"),
            ("Cashmere", "Fiber Goats"),
            ("Nigora", "Fiber Goats"),
            ("Boer", "Meat Goats"),
        ];
        for (c, p) in edges {
            let id = h.add_concept(c, None, &[ids[p]]).unwrap();
            ids.insert(c, id);
        }
        h.add_subsumption(ids["Nigerian Dwarf"], ids["Mini. Goats"]).unwrap();
        (h, ids)
    }

    #[test]
    fn seed_only_hierarchy() {
        let h = ConceptHierarchy::new("Goats").unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.edge_count(), 0);
        assert_eq!(h.depth_of(h.seed()).unwrap(), 0);
        assert!(!h.concept(h.seed()).unwrap().explored);
    }

    #[test]
    fn empty_seed_is_rejected() {
        assert!(matches!(ConceptHierarchy::new(""), Err(HierarchyError::InvalidInput(_))));
        assert!(matches!(ConceptHierarchy::new("  \t"), Err(HierarchyError::InvalidInput(_))));
    }

    #[test]
    fn subsumption_is_reflexive() {
        let h = ConceptHierarchy::new("Drinks").unwrap();
        assert!(h.is_subsumed(h.seed(), h.seed()).unwrap());
    }

    #[test]
    fn excerpt_transitive_subsumption() {
        let (h, ids) = excerpt();
        assert!(h.is_subsumed(ids["Saanen"], ids["Goats"]).unwrap());
        assert!(!h.is_subsumed(ids["Goats"], ids["Saanen"]).unwrap());
        assert!(h.is_subsumed(ids["Nigerian Dwarf"], ids["Mini. Goats"]).unwrap());
        assert!(!h.is_subsumed(ids["Dwarf Nigerian"], ids["Dairy Goats"]).unwrap());
        assert_eq!(h.len(), 14);
        assert_eq!(h.edge_count(), 14);
        h.check_invariants().unwrap();
    }

    #[test]
    fn multi_parent_edges_are_both_kept() {
        let (h, ids) = excerpt();
        let parents = h.direct_parents(ids["Nigerian Dwarf"]).unwrap();
        assert_eq!(parents, &BTreeSet::from([ids["Dairy Goats"], ids["Mini. Goats"]]));
    }

    #[test]
    fn unknown_id_is_not_found() {
        let h = ConceptHierarchy::new("Goats").unwrap();
        assert_eq!(h.is_subsumed(h.seed(), ConceptId(7)), Err(HierarchyError::NotFound(ConceptId(7))));
    }

    #[test]
    fn implied_edge_leaves_reduction_unchanged() {
        let mut h = ConceptHierarchy::new("A").unwrap();
        let b = h.add_concept("B", None, &[h.seed()]).unwrap();
        let c = h.add_concept("C", None, &[b]).unwrap();
        let before = h.edges();
        assert!(!h.add_subsumption(c, h.seed()).unwrap());
        assert_eq!(h.edges(), before);
    }

    #[test]
    fn inserting_between_drops_shortcut() {
        let mut h = ConceptHierarchy::new("Goats").unwrap();
        let saanen = h.add_concept("Saanen", None, &[h.seed()]).unwrap();
        let dairy = h.add_concept("Dairy Goats", None, &[h.seed()]).unwrap();
        h.add_subsumption(saanen, dairy).unwrap();
        assert_eq!(h.edges(), vec![(saanen, dairy), (dairy, h.seed())]);
        assert_eq!(h.depth_of(saanen).unwrap(), 2);
    }

    #[test]
    fn cycle_is_reported_with_path() {
        let mut h = ConceptHierarchy::new("A").unwrap();
        let b = h.add_concept("B", None, &[h.seed()]).unwrap();
        let c = h.add_concept("C", None, &[b]).unwrap();
        match h.add_subsumption(b, c) {
            Err(HierarchyError::Cycle { child, parent, path }) => {
                assert_eq!((child, parent), (b, c));
                assert_eq!(path, vec![c, b]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
        h.check_invariants().unwrap();
    }

    #[test]
    fn duplicate_names_are_detected_after_normalization() {
        let mut h = ConceptHierarchy::new("Board Games").unwrap();
        let err = h.add_concept("  board   GAMES ", None, &[h.seed()]).unwrap_err();
        assert_eq!(err, HierarchyError::DuplicateName("  board   GAMES ".into(), h.seed()));
        assert_eq!(h.find_by_name("BOARD games"), Some(h.seed()));
    }

    #[test]
    fn merge_keeps_both_names() {
        let mut h = ConceptHierarchy::new("Games").unwrap();
        let a = h.add_concept("board game", None, &[h.seed()]).unwrap();
        let b = h.add_concept("boardgames", None, &[h.seed()]).unwrap();
        let chess = h.add_concept("chess variants", None, &[b]).unwrap();
        let out = h.merge_synonyms(b, a).unwrap();
        assert_eq!(out, MergeOutcome { survivor: a, absorbed: vec![b] });
        let merged = h.concept(a).unwrap();
        assert_eq!(merged.names().collect::<Vec<_>>(), vec!["board game", "boardgames"]);
        assert!(h.get(b).is_none());
        assert_eq!(h.find_by_name("Boardgames"), Some(a));
        assert_eq!(h.direct_parents(chess).unwrap(), &BTreeSet::from([a]));
        h.check_invariants().unwrap();
    }

    #[test]
    fn self_merge_is_rejected() {
        let mut h = ConceptHierarchy::new("Games").unwrap();
        let s = h.seed();
        assert!(matches!(h.merge_synonyms(s, s), Err(HierarchyError::InvalidInput(_))));
    }

    #[test]
    fn merge_absorbs_concepts_in_between() {
        let mut h = ConceptHierarchy::new("A").unwrap();
        let b = h.add_concept("B", None, &[h.seed()]).unwrap();
        let c = h.add_concept("C", None, &[b]).unwrap();
        let d = h.add_concept("D", None, &[c]).unwrap();
        let e = h.add_concept("E", None, &[d]).unwrap();
        let out = h.merge_synonyms(d, b).unwrap();
        assert_eq!(out.survivor, b);
        assert_eq!(out.absorbed, vec![c, d]);
        assert_eq!(h.edges(), vec![(b, h.seed()), (e, b)]);
        h.check_invariants().unwrap();
    }

    #[test]
    fn next_unexplored_respects_depth_limit() {
        let (mut h, ids) = excerpt();
        assert_eq!(h.next_unexplored(Some(3)), Some(h.seed()));
        h.mark_explored(h.seed()).unwrap();
        assert_eq!(h.next_unexplored(Some(3)), Some(ids["Dairy Goats"]));
        assert_eq!(h.next_unexplored(Some(1)), None);
        for id in h.ids().collect::<Vec<_>>() {
            if h.depth_of(id).unwrap() < 2 {
                h.mark_explored(id).unwrap();
            }
        }
        assert_eq!(h.next_unexplored(Some(2)), None);
        assert_eq!(h.next_unexplored(None), Some(ids["Saanen"]));
    }

    #[test]
    fn document_round_trip() {
        let (h, _) = excerpt();
        let doc = h.to_document();
        let json = serde_json::to_string(&doc).unwrap();
        let back: HierarchyDocument = serde_json::from_str(&json).unwrap();
        let h2 = ConceptHierarchy::from_document(&back).unwrap();
        assert_eq!(h2.to_document(), doc);
    }

    #[test]
    fn document_field_names() {
        let h = ConceptHierarchy::new("Goats").unwrap();
        let v = serde_json::to_value(h.to_document()).unwrap();
        assert_eq!(v["seed"], 0);
        let c = &v["concepts"][0];
        for key in ["id", "canonical_name", "synonyms", "description", "explored", "depth"] {
            assert!(c.get(key).is_some(), "missing {key}");
        }
        assert!(v["direct_edges"].is_array());
    }

    #[test]
    fn document_with_redundant_edge_is_refused() {
        let (h, ids) = excerpt();
        let mut doc = h.to_document();
        doc.direct_edges.push([ids["Saanen"], ids["Goats"]]);
        assert!(matches!(ConceptHierarchy::from_document(&doc), Err(HierarchyError::Invariant(_))));
    }

    #[test]
    fn document_with_cycle_is_refused() {
        let (h, ids) = excerpt();
        let mut doc = h.to_document();
        doc.direct_edges.push([ids["Goats"], ids["Saanen"]]);
        assert!(ConceptHierarchy::from_document(&doc).is_err());
    }

    #[test]
    fn document_version_is_checked() {
        let h = ConceptHierarchy::new("Goats").unwrap();
        let mut doc = h.to_document();
        doc.version = 99;
        assert_eq!(ConceptHierarchy::from_document(&doc).unwrap_err(), HierarchyError::Version(99));
    }
}
