//! Classification of a verified concept into the hierarchy by enhanced
//! traversal: a top search for its most specific superconcepts, a bottom
//! search for its most general subconcepts, then synonym resolution.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{normalize_name, ConceptHierarchy, ConceptId, HierarchyError};
use crate::oracle::{Oracle, OracleContext, OracleError, ProbePhase};
use crate::parallel::bounded_map;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InsertionError {
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    /// The oracle became unreachable; the hierarchy was left untouched.
    #[error("oracle unavailable during insertion: {0}")]
    Oracle(OracleError),
}

/// Outcome of one search phase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchResult {
    pub found: BTreeSet<ConceptId>,
    pub probes_issued: usize,
    /// Probes whose reply could not be used and counted as "no".
    pub failed_probes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    /// The concept that now carries the inserted name.
    pub id: Option<ConceptId>,
    pub parents: BTreeSet<ConceptId>,
    pub children: BTreeSet<ConceptId>,
    pub synonym_of: Option<ConceptId>,
    pub probes_issued: usize,
    /// Tests a brute-force classification would have made but the search skipped.
    pub probes_saved: usize,
    pub failed_probes: usize,
    /// Direct edges `(child, parent)` the search found that were not the
    /// discovering edge.
    pub found_edges: Vec<(ConceptId, ConceptId)>,
}

/// What happened when an existing concept was listed again under another one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rediscovery {
    /// The edge was new and is now in the hierarchy.
    EdgeAdded,
    /// The edge was already implied.
    Implied,
    /// The edge would have closed a cycle and the oracle judged the two synonyms.
    Merged(ConceptId),
    /// The edge would have closed a cycle between non-synonyms and was dropped.
    Dropped,
}

/// Tunables shared by all insertions of a crawl.
#[derive(Clone, Copy)]
pub struct Inserter<'a> {
    pub oracle: &'a dyn Oracle,
    /// Upper bound on concurrent probes per batch.
    pub max_in_flight: usize,
}

type Probe<'n> = (ConceptId, &'n str);

impl<'a> Inserter<'a> {
    pub fn new(oracle: &'a dyn Oracle, max_in_flight: usize) -> Self {
        Inserter { oracle, max_in_flight: max_in_flight.max(1) }
    }

    fn probe_ctx(&self, base: &OracleContext, phase: ProbePhase, h: &ConceptHierarchy, names: [(&str, Option<&str>); 2]) -> OracleContext {
        let mut ctx = base.with_phase(phase);
        for (name, desc) in names {
            if let Some(d) = desc.filter(|d| !d.trim().is_empty()) {
                ctx.descriptions.insert(name.to_string(), d.to_string());
            } else if let Some(d) = h.find_by_name(name).and_then(|id| h.get(id)).and_then(|c| c.description.as_deref()) {
                ctx.descriptions.insert(name.to_string(), d.to_string());
            }
        }
        ctx
    }

    /// Runs a batch of probes concurrently; answers come back in id order.
    fn run_batch(
        &self,
        batch: &[Probe<'_>],
        ask: impl Fn(Probe<'_>) -> Result<bool, OracleError> + Sync,
    ) -> Result<(Vec<(ConceptId, bool)>, usize), InsertionError> {
        let answers = bounded_map(batch, self.max_in_flight, |&p| ask(p));
        let mut out = Vec::with_capacity(batch.len());
        let mut failed = 0;
        for (&(id, name), answer) in batch.iter().zip(answers) {
            match answer {
                Ok(yes) => out.push((id, yes)),
                Err(e) if e.is_transport() => return Err(InsertionError::Oracle(e)),
                Err(e) => {
                    log::warn!("subsumption probe on {name:?} failed, counted as no: {e}");
                    failed += 1;
                    out.push((id, false));
                }
            }
        }
        Ok((out, failed))
    }

    /// Most specific existing superconcepts of the new concept `name`,
    /// discovered under `entry`. Everything above `entry` holds without asking.
    pub fn top_search(
        &self,
        ctx: &OracleContext,
        h: &ConceptHierarchy,
        name: &str,
        description: Option<&str>,
        entry: ConceptId,
    ) -> Result<SearchResult, InsertionError> {
        let mut positive: BTreeSet<ConceptId> = h.ancestors(entry)?.into_iter().collect();
        let mut negative: BTreeSet<ConceptId> = BTreeSet::new();
        let mut result = SearchResult::default();
        loop {
            // Undecided concepts all of whose direct superconcepts are positive.
            let mut batch: Vec<Probe<'_>> = Vec::new();
            for &p in &positive {
                for &child in h.direct_children(p)? {
                    if positive.contains(&child) || negative.contains(&child) {
                        continue;
                    }
                    if h.direct_parents(child)?.iter().all(|q| positive.contains(q)) {
                        batch.push((child, h.name_of(child)?));
                    }
                }
            }
            batch.sort_unstable_by_key(|&(id, _)| id);
            batch.dedup_by_key(|&mut (id, _)| id);
            if batch.is_empty() {
                break;
            }
            let (answers, failed) = self.run_batch(&batch, |(_, other)| {
                let pctx = self.probe_ctx(ctx, ProbePhase::Top, h, [(name, description), (other, None)]);
                self.oracle.is_subcategory_of(&pctx, name, other)
            })?;
            result.probes_issued += answers.len();
            result.failed_probes += failed;
            for (id, yes) in answers {
                if yes {
                    positive.insert(id);
                } else {
                    negative.insert(id);
                }
            }
        }
        result.found = minimal(h, &positive)?;
        Ok(result)
    }

    /// Most general existing subconcepts of `name`, searched bottom-up among
    /// the common descendants of `parents` (the parents included, so that a
    /// synonym shows up in both result sets). The seed is never a candidate.
    pub fn bottom_search(
        &self,
        ctx: &OracleContext,
        h: &ConceptHierarchy,
        name: &str,
        description: Option<&str>,
        parents: &BTreeSet<ConceptId>,
    ) -> Result<SearchResult, InsertionError> {
        let mut candidates: Option<BTreeSet<ConceptId>> = None;
        for &p in parents {
            let below: BTreeSet<ConceptId> = h.descendants(p)?.into_iter().collect();
            candidates = Some(match candidates {
                None => below,
                Some(c) => c.intersection(&below).copied().collect(),
            });
        }
        // Nothing but a synonym of the seed could sit above it.
        let mut candidates = candidates.unwrap_or_default();
        candidates.remove(&h.seed());

        let mut positive: BTreeSet<ConceptId> = BTreeSet::new();
        let mut negative: BTreeSet<ConceptId> = BTreeSet::new();
        let mut result = SearchResult::default();
        loop {
            // Undecided candidates all of whose direct subconcepts are positive.
            let mut batch: Vec<Probe<'_>> = Vec::new();
            for &id in &candidates {
                if positive.contains(&id) || negative.contains(&id) {
                    continue;
                }
                if h.direct_children(id)?.iter().all(|e| positive.contains(e)) {
                    batch.push((id, h.name_of(id)?));
                }
            }
            if batch.is_empty() {
                break;
            }
            let (answers, failed) = self.run_batch(&batch, |(_, other)| {
                let pctx = self.probe_ctx(ctx, ProbePhase::Bottom, h, [(name, description), (other, None)]);
                self.oracle.is_subcategory_of(&pctx, other, name)
            })?;
            result.probes_issued += answers.len();
            result.failed_probes += failed;
            for (id, yes) in answers {
                if yes {
                    positive.insert(id);
                } else {
                    negative.insert(id);
                }
            }
        }
        result.found = maximal(h, &positive)?;
        Ok(result)
    }

    /// Classifies the new concept `name` (listed under `entry`) and adds it.
    /// The caller has verified it and checked that no concept carries the
    /// name yet.
    pub fn insert(
        &self,
        ctx: &OracleContext,
        h: &mut ConceptHierarchy,
        name: &str,
        description: Option<&str>,
        entry: ConceptId,
    ) -> Result<Placement, InsertionError> {
        if let Some(existing) = h.find_by_name(name) {
            return Err(HierarchyError::DuplicateName(name.to_string(), existing).into());
        }
        let existing = h.len();
        let top = self.top_search(ctx, h, name, description, entry)?;
        let bottom = self.bottom_search(ctx, h, name, description, &top.found)?;
        let issued = top.probes_issued + bottom.probes_issued;
        let mut placement = Placement {
            parents: top.found,
            children: bottom.found,
            probes_issued: issued,
            probes_saved: (2 * existing).saturating_sub(issued),
            failed_probes: top.failed_probes + bottom.failed_probes,
            ..Placement::default()
        };

        // A concept found both above and below the new one.
        let both: Vec<ConceptId> = placement.parents.intersection(&placement.children).copied().collect();
        let mut synonym: Option<ConceptId> = None;
        for other in both {
            let other_name = h.name_of(other)?.to_string();
            let answer = self.oracle.interchangeable(ctx, name, &other_name);
            if matches!(answer, Err(ref e) if e.is_transport()) {
                return Err(InsertionError::Oracle(answer.unwrap_err()));
            }
            if answer.unwrap_or(false) {
                synonym = Some(match synonym {
                    None => other,
                    Some(first) => h.merge_synonyms(first, other)?.survivor,
                });
                placement.parents.remove(&other);
                placement.children.remove(&other);
                continue;
            }
            match self.oracle.subcategory_direction(ctx, name, &other_name) {
                Ok((sub, _)) if normalize_name(&sub) == normalize_name(&other_name) => {
                    log::info!("{other_name:?} is below {name:?}, dropping it as a superconcept");
                    placement.parents.remove(&other);
                    if placement.parents.is_empty() {
                        placement.parents = h.direct_parents(other)?.clone();
                    }
                }
                Ok(_) => {
                    placement.children.remove(&other);
                }
                Err(e) if e.is_transport() => return Err(InsertionError::Oracle(e)),
                Err(e) => {
                    log::warn!("no direction for {name:?} and {other_name:?} ({e}); keeping {other_name:?} above");
                    placement.children.remove(&other);
                }
            }
        }

        let id = match synonym {
            Some(target) => {
                h.add_synonym_name(target, name)?;
                if h.get(target).is_some_and(|c| c.description.is_none()) {
                    if let Some(d) = description.filter(|d| !d.trim().is_empty()) {
                        h.set_description(target, d)?;
                    }
                }
                placement.synonym_of = Some(target);
                target
            }
            None => {
                let parents: Vec<ConceptId> = placement.parents.iter().copied().collect();
                h.add_concept(name, description.map(str::to_string), &parents)?
            }
        };
        placement.id = Some(id);

        let extra_parents: Vec<ConceptId> = if synonym.is_some() { placement.parents.iter().copied().collect() } else { Vec::new() };
        for p in extra_parents {
            self.link_or_drop(h, id, p)?;
        }
        for e in placement.children.clone() {
            self.link_or_drop(h, e, id)?;
        }
        placement.found_edges = placement
            .parents
            .iter()
            .filter(|&&p| p != entry)
            .map(|&p| (id, p))
            .chain(placement.children.iter().map(|&e| (e, id)))
            .filter(|&(c, p)| h.direct_parents(c).is_ok_and(|ps| ps.contains(&p)))
            .collect();
        Ok(placement)
    }

    fn link_or_drop(&self, h: &mut ConceptHierarchy, child: ConceptId, parent: ConceptId) -> Result<(), InsertionError> {
        if child == parent {
            return Ok(());
        }
        match h.add_subsumption(child, parent) {
            Ok(_) => Ok(()),
            Err(HierarchyError::Cycle { path, .. }) => {
                log::error!(
                    "dropping {} ⊑ {}: it would close a cycle through {:?}",
                    h.name_of(child)?,
                    h.name_of(parent)?,
                    path
                );
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Records that the existing concept `existing` was listed again under
    /// `entry`. The edge is imposed without a probe; only a would-be cycle
    /// triggers a question.
    pub fn rediscover(
        &self,
        ctx: &OracleContext,
        h: &mut ConceptHierarchy,
        existing: ConceptId,
        entry: ConceptId,
    ) -> Result<Rediscovery, InsertionError> {
        if existing == entry {
            return Ok(Rediscovery::Implied);
        }
        match h.add_subsumption(existing, entry) {
            Ok(true) => Ok(Rediscovery::EdgeAdded),
            Ok(false) => Ok(Rediscovery::Implied),
            Err(HierarchyError::Cycle { .. }) => {
                let (a, b) = (h.name_of(existing)?.to_string(), h.name_of(entry)?.to_string());
                match self.oracle.interchangeable(ctx, &a, &b) {
                    Ok(true) => Ok(Rediscovery::Merged(h.merge_synonyms(existing, entry)?.survivor)),
                    Err(e) if e.is_transport() => Err(InsertionError::Oracle(e)),
                    _ => {
                        log::warn!("{a:?} listed under its own subconcept {b:?}; edge dropped");
                        Ok(Rediscovery::Dropped)
                    }
                }
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Elements of `set` with no strict descendant in `set`.
fn minimal(h: &ConceptHierarchy, set: &BTreeSet<ConceptId>) -> Result<BTreeSet<ConceptId>, HierarchyError> {
    let mut out = BTreeSet::new();
    for &x in set {
        let mut below = false;
        for &y in set {
            if y != x && h.is_subsumed(y, x)? {
                below = true;
                break;
            }
        }
        if !below {
            out.insert(x);
        }
    }
    Ok(out)
}

/// Elements of `set` with no strict ancestor in `set`.
fn maximal(h: &ConceptHierarchy, set: &BTreeSet<ConceptId>) -> Result<BTreeSet<ConceptId>, HierarchyError> {
    let mut out = BTreeSet::new();
    for &x in set {
        let mut above = false;
        for &y in set {
            if y != x && h.is_subsumed(x, y)? {
                above = true;
                break;
            }
        }
        if !above {
            out.insert(x);
        }
    }
    Ok(out)
}

/// Names of a concept set, for log messages and tests.
pub fn names_of(h: &ConceptHierarchy, ids: &BTreeSet<ConceptId>) -> BTreeMap<ConceptId, String> {
    ids.iter().filter_map(|&id| Some((id, h.name_of(id).ok()?.to_string()))).collect()
}
