#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taxocrawl::hierarchy::{ConceptHierarchy, ConceptId};
use taxocrawl::oracle::GroundTruthTaxonomy;

pub type Pair = (String, String);

pub fn node(i: usize) -> String {
    format!("Concept {i}")
}

/// Rooted DAG on `n` nodes; node 0 is the root, every other node gets one to
/// three parents among earlier nodes, and no node exceeds `max_out` children.
/// Some edges are transitive shortcuts on purpose.
pub fn random_dag(seed: u64, n: usize, max_out: usize) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0usize; n];
    let mut edges = Vec::new();
    for child in 1..n {
        let wanted = match rng.random_range(0..10) {
            0..=6 => 1,
            7..=8 => 2,
            _ => 3,
        };
        let mut open: Vec<usize> = (0..child).filter(|&p| out[p] < max_out).collect();
        let mut chosen = BTreeSet::new();
        while chosen.len() < wanted && !open.is_empty() {
            let p = open.swap_remove(rng.random_range(0..open.len()));
            chosen.insert(p);
        }
        assert!(!chosen.is_empty(), "no parent with spare outdegree for node {child}");
        for p in chosen {
            out[p] += 1;
            edges.push((child, p));
        }
    }
    edges
}

pub fn taxonomy(n: usize, edges: &[(usize, usize)]) -> GroundTruthTaxonomy {
    let mut t = GroundTruthTaxonomy {
        root: node(0),
        edges: edges.iter().map(|&(c, p)| [node(c), node(p)]).collect(),
        synonyms: vec![],
        descriptions: BTreeMap::new(),
        instances: BTreeMap::new(),
        parts: BTreeMap::new(),
        renames: BTreeMap::new(),
    };
    for i in 0..n {
        t.descriptions.insert(node(i), format!("Description of {}.", node(i)));
    }
    t
}

/// Strict `(descendant, ancestor)` pairs, by breadth-first search upwards.
pub fn closure<T: Ord + Clone>(edges: &[(T, T)]) -> BTreeSet<(T, T)> {
    let mut up: BTreeMap<&T, Vec<&T>> = BTreeMap::new();
    let mut nodes = BTreeSet::new();
    for (c, p) in edges {
        up.entry(c).or_default().push(p);
        nodes.insert(c);
        nodes.insert(p);
    }
    let mut out = BTreeSet::new();
    for &start in &nodes {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(x) = queue.pop_front() {
            for &p in up.get(x).into_iter().flatten() {
                if seen.insert(p) {
                    queue.push_back(p);
                }
            }
        }
        for p in seen {
            if p != start {
                out.insert((start.clone(), p.clone()));
            }
        }
    }
    out
}

/// Pairs of a strict order with no element strictly in between.
pub fn reduction<T: Ord + Clone>(closure: &BTreeSet<(T, T)>) -> BTreeSet<(T, T)> {
    let ups: BTreeMap<&T, BTreeSet<&T>> = closure.iter().fold(BTreeMap::new(), |mut m, (c, p)| {
        m.entry(c).or_default().insert(p);
        m
    });
    closure
        .iter()
        .filter(|(c, p)| !ups[c].iter().any(|m| *m != p && closure.contains(&((*m).clone(), p.clone()))))
        .cloned()
        .collect()
}

pub fn named(pairs: &BTreeSet<(usize, usize)>) -> BTreeSet<Pair> {
    pairs.iter().map(|&(c, p)| (node(c), node(p))).collect()
}

pub fn hierarchy_edges(h: &ConceptHierarchy) -> BTreeSet<Pair> {
    h.edges()
        .into_iter()
        .map(|(c, p)| (h.name_of(c).unwrap().to_string(), h.name_of(p).unwrap().to_string()))
        .collect()
}

/// Strict subsumptions held in a hierarchy's stored closure.
pub fn stored_closure(h: &ConceptHierarchy) -> BTreeSet<(ConceptId, ConceptId)> {
    let ids: Vec<ConceptId> = h.ids().collect();
    let mut out = BTreeSet::new();
    for &c in &ids {
        for &d in &ids {
            if c != d && h.is_subsumed(c, d).unwrap() {
                out.insert((c, d));
            }
        }
    }
    out
}

/// Builds a hierarchy from a DAG by adding nodes in index order.
pub fn build_hierarchy(n: usize, edges: &[(usize, usize)]) -> ConceptHierarchy {
    let mut h = ConceptHierarchy::new(&node(0)).unwrap();
    let mut ids = vec![h.seed()];
    for child in 1..n {
        let parents: Vec<ConceptId> = edges.iter().filter(|e| e.0 == child).map(|e| ids[e.1]).collect();
        ids.push(h.add_concept(&node(child), None, &parents).unwrap());
    }
    h
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MutationCounts {
    pub added: usize,
    pub linked: usize,
    pub cycles_refused: usize,
    pub removed: usize,
    pub merged: usize,
}

fn fail<T>(seed: u64, step: usize, what: String) -> Result<T, String> {
    Err(format!("seed {seed}, step {step}: {what}"))
}

/// Random mutation sequence checked after every step against closures
/// recomputed by breadth-first search from an independent edge model.
pub fn run_mutation_sequence(seed: u64, steps: usize) -> Result<MutationCounts, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = ConceptHierarchy::new("Root").unwrap();
    let mut counts = MutationCounts::default();
    let mut fresh = 0usize;
    for step in 0..steps {
        let ids: Vec<ConceptId> = h.ids().collect();
        let pick = |rng: &mut ChaCha8Rng| ids[rng.random_range(0..ids.len())];
        let current: Vec<(ConceptId, ConceptId)> = h.edges();
        // Facts the hierarchy must entail after this step, before reduction.
        let mut model = current.clone();
        let mut remap: BTreeMap<ConceptId, ConceptId> = BTreeMap::new();
        match rng.random_range(0..10) {
            0..=3 => {
                let k = rng.random_range(1..=3.min(ids.len()));
                let parents: Vec<ConceptId> = (0..k).map(|_| pick(&mut rng)).collect();
                fresh += 1;
                let id = h.add_concept(&format!("M{fresh}"), None, &parents).map_err(|e| e.to_string())?;
                model.extend(parents.iter().map(|&p| (id, p)));
                counts.added += 1;
            }
            4..=6 => {
                let (a, b) = (pick(&mut rng), pick(&mut rng));
                let before = closure(&current);
                let cyclic = a != b && before.contains(&(b, a));
                match h.add_subsumption(a, b) {
                    Ok(changed) => {
                        if cyclic {
                            return fail(seed, step, format!("{a} ⊑ {b} accepted although it closes a cycle"));
                        }
                        let implied = a == b || before.contains(&(a, b));
                        if changed == implied {
                            return fail(seed, step, format!("add {a} ⊑ {b} reported changed = {changed}"));
                        }
                        model.push((a, b));
                        counts.linked += 1;
                    }
                    Err(_) if cyclic => {
                        counts.cycles_refused += 1;
                        if h.edges() != current {
                            return fail(seed, step, "refused cycle still changed the edges".into());
                        }
                    }
                    Err(e) => return fail(seed, step, format!("add {a} ⊑ {b} failed: {e}")),
                }
            }
            7..=8 => {
                if current.is_empty() {
                    continue;
                }
                let (c, p) = current[rng.random_range(0..current.len())];
                let last = h.direct_parents(c).unwrap().len() == 1;
                match h.remove_edge(c, p) {
                    Ok(_) if last => return fail(seed, step, format!("removed the last parent of {c}")),
                    Ok(_) => {
                        model.retain(|&e| e != (c, p));
                        counts.removed += 1;
                    }
                    Err(_) if last => {}
                    Err(e) => return fail(seed, step, format!("remove {c} ⊑ {p} failed: {e}")),
                }
            }
            _ => {
                let (a, b) = (pick(&mut rng), pick(&mut rng));
                if a == b {
                    continue;
                }
                model.push((a, b));
                model.push((b, a));
                let classes = closure(&model);
                let class: BTreeSet<ConceptId> = std::iter::once(a)
                    .chain(ids.iter().copied().filter(|&x| classes.contains(&(x, a)) && classes.contains(&(a, x))))
                    .collect();
                let outcome = h.merge_synonyms(a, b).map_err(|e| format!("seed {seed}, step {step}: merge: {e}"))?;
                let survivor = *class.iter().next().unwrap();
                if outcome.survivor != survivor {
                    return fail(seed, step, format!("merge kept {} instead of {survivor}", outcome.survivor));
                }
                let absorbed: BTreeSet<ConceptId> = outcome.absorbed.iter().copied().collect();
                let expected: BTreeSet<ConceptId> = class.iter().copied().filter(|&x| x != survivor).collect();
                if absorbed != expected {
                    return fail(seed, step, format!("merge absorbed {absorbed:?}, expected {expected:?}"));
                }
                for x in expected {
                    remap.insert(x, survivor);
                }
                counts.merged += 1;
            }
        }
        let m = |x: ConceptId| remap.get(&x).copied().unwrap_or(x);
        let model: Vec<(ConceptId, ConceptId)> =
            model.into_iter().map(|(c, p)| (m(c), m(p))).filter(|(c, p)| c != p).collect();
        check_against_model(&h, &model).map_err(|what| format!("seed {seed}, step {step}: {what}"))?;
    }
    Ok(counts)
}

/// Acyclicity, closure agreement, reduction minimality and depths.
pub fn check_against_model(h: &ConceptHierarchy, model: &[(ConceptId, ConceptId)]) -> Result<(), String> {
    let edges = h.edges();
    let from_edges = closure(&edges);
    if let Some((c, p)) = from_edges.iter().find(|(c, p)| from_edges.contains(&(*p, *c))) {
        return Err(format!("cycle through {c} and {p}"));
    }
    let stored = stored_closure(h);
    if stored != from_edges {
        return Err("stored closure differs from reachability over the direct edges".into());
    }
    let expected = closure(model);
    if stored != expected {
        return Err(format!(
            "closure lost or gained pairs: missing {:?}, extra {:?}",
            expected.difference(&stored).collect::<Vec<_>>(),
            stored.difference(&expected).collect::<Vec<_>>()
        ));
    }
    let edge_set: BTreeSet<(ConceptId, ConceptId)> = edges.iter().copied().collect();
    if reduction(&stored) != edge_set {
        return Err("direct edges are not the transitive reduction".into());
    }
    for c in h.ids() {
        if c != h.seed() && !stored.contains(&(c, h.seed())) {
            return Err(format!("{c} is not below the seed"));
        }
    }
    let mut depth: BTreeMap<ConceptId, usize> = BTreeMap::from([(h.seed(), 0)]);
    let mut queue = VecDeque::from([h.seed()]);
    while let Some(x) = queue.pop_front() {
        for &c in h.direct_children(x).unwrap() {
            if !depth.contains_key(&c) {
                depth.insert(c, depth[&x] + 1);
                queue.push_back(c);
            }
        }
    }
    for c in h.ids() {
        if h.depth_of(c).ok() != depth.get(&c).copied() {
            return Err(format!("depth of {c} is {:?}, breadth-first search says {:?}", h.depth_of(c), depth.get(&c)));
        }
    }
    h.check_invariants().map_err(|e| e.to_string())
}

/// Random hierarchy with synonyms and descriptions containing XML-hostile
/// characters, for serialization round-trips.
pub fn random_hierarchy(seed: u64, n: usize) -> ConceptHierarchy {
    const NAMES: [&str; 8] = ["Goats", "Crème brûlée", "A & B", "<Tagged>", "Quote \"q\"", "Mini. Nubian", "Café/Bar", "50% Blend"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = random_dag(seed, n, 5);
    let name = |i: usize| format!("{} {i}", NAMES[i % NAMES.len()]);
    let mut h = ConceptHierarchy::new(&name(0)).unwrap();
    let mut ids = vec![h.seed()];
    for child in 1..n {
        let parents: Vec<ConceptId> = edges.iter().filter(|e| e.0 == child).map(|e| ids[e.1]).collect();
        let desc = rng.random_bool(0.6).then(|| format!("Line one of {child} & <more>.\nLine 'two'."));
        ids.push(h.add_concept(&name(child), desc, &parents).unwrap());
    }
    for (i, &id) in ids.iter().enumerate() {
        if rng.random_bool(0.15) {
            h.add_synonym_name(id, &format!("{} (alt)", name(i))).unwrap();
        }
    }
    h
}
