//! Deterministic oracle answering from a ground-truth taxonomy.
//!
//! The fixture may annotate concepts with instances and parts. These are
//! listed among a concept's subcategories, the way a language model confuses
//! relations, and are recognized by the instance and part checks. A
//! `renames` table maps sloppy short names to their proper names: the mock
//! lists the short name and recovers the proper one from its description.
//!
//! Noise is drawn from a generator seeded by a hash of the noise seed and the
//! query content, so answers do not depend on query order or threading.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Oracle, OracleContext, OracleError, QueryLog, QueryRecord};
use crate::hierarchy::normalize_name;
use crate::llm_backend::{render, Bindings, CostLedger, TemplateName};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed fixture: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid fixture: {0}")]
    Invalid(String),
}

/// Fixture file contents. Edges and synonym pairs are two-element arrays,
/// edges written child first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthTaxonomy {
    pub root: String,
    #[serde(default)]
    pub edges: Vec<[String; 2]>,
    #[serde(default)]
    pub synonyms: Vec<[String; 2]>,
    #[serde(default)]
    pub descriptions: BTreeMap<String, String>,
    #[serde(default)]
    pub instances: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub parts: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub renames: BTreeMap<String, String>,
}

impl GroundTruthTaxonomy {
    pub fn from_path(path: &Path) -> Result<Self, FixtureError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that edges form a DAG with every node reachable from the root
    /// and that all annotations refer to known names.
    pub fn validate(&self) -> Result<(), FixtureError> {
        Truth::compile(self).map(|_| ())
    }

    /// Concept names appearing in the taxonomy (root and edge endpoints), in
    /// first-appearance order.
    pub fn node_names(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for name in std::iter::once(&self.root).chain(self.edges.iter().flat_map(|[c, p]| [p, c])) {
            if seen.insert(normalize_name(name)) {
                out.push(name.clone());
            }
        }
        out
    }
}

/// Error rates of the simulated language model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub rng_seed: u64,
    /// A false subsumption answered "yes".
    pub p_hallucinated_edge: f64,
    /// A true child left out of a listing.
    pub p_missing_edge: f64,
    /// An annotated instance or part passed off as a subcategory.
    pub p_wrong_relation: f64,
    /// Per listed child, chance of an extra modifier-stacked name.
    pub p_attribute_inflation: f64,
    /// A true but indirect subsumption answered "no".
    pub p_nontransitive_denial: f64,
}

impl NoiseModel {
    pub fn noise_free() -> Self {
        NoiseModel::default()
    }

    fn probabilities(&self) -> [(&'static str, f64); 5] {
        [
            ("p_hallucinated_edge", self.p_hallucinated_edge),
            ("p_missing_edge", self.p_missing_edge),
            ("p_wrong_relation", self.p_wrong_relation),
            ("p_attribute_inflation", self.p_attribute_inflation),
            ("p_nontransitive_denial", self.p_nontransitive_denial),
        ]
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        for (name, p) in self.probabilities() {
            if !(0.0..=1.0).contains(&p) {
                return Err(FixtureError::Invalid(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

const INFLATION_MODIFIERS: [&str; 6] =
    ["Premium", "Heritage", "Customer-driven", "Action-oriented", "Underwater", "Scalability-focused"];

// Compiled view of the fixture: synonym classes, closure over classes,
// and normalized lookup tables.
#[derive(Debug)]
struct Truth {
    class_of: HashMap<String, usize>,
    // Listing order of child names per class.
    children: Vec<Vec<String>>,
    direct_parents: Vec<BTreeSet<usize>>,
    ancestors: Vec<FixedBitSet>,
    extras: Vec<Vec<String>>,
    instances: BTreeSet<String>,
    parts: BTreeSet<String>,
    descriptions: HashMap<String, String>,
    // normalized sloppy name -> proper name, and the reverse
    renames: BTreeMap<String, String>,
    sloppy_for: HashMap<String, String>,
    sloppy_names: Vec<String>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut x = x;
        while self.0[x] != r {
            let next = self.0[x];
            self.0[x] = r;
            x = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.0[hi] = lo;
    }
}

impl Truth {
    fn compile(tax: &GroundTruthTaxonomy) -> Result<Truth, FixtureError> {
        let invalid = |msg: String| Err(FixtureError::Invalid(msg));
        if normalize_name(&tax.root).is_empty() {
            return invalid("root name is empty".into());
        }
        let names = tax.node_names();
        let node_index: HashMap<String, usize> =
            names.iter().enumerate().map(|(i, n)| (normalize_name(n), i)).collect();
        for [c, p] in &tax.edges {
            if normalize_name(c).is_empty() || normalize_name(p).is_empty() {
                return invalid("edge with empty name".into());
            }
        }

        let mut uf = UnionFind((0..names.len()).collect());
        let mut aliases = Vec::new();
        for [a, b] in &tax.synonyms {
            match (node_index.get(&normalize_name(a)), node_index.get(&normalize_name(b))) {
                (Some(&x), Some(&y)) => uf.union(x, y),
                (Some(&x), None) => aliases.push((normalize_name(b), x)),
                (None, Some(&y)) => aliases.push((normalize_name(a), y)),
                (None, None) => return invalid(format!("synonym pair {a:?}/{b:?} names no taxonomy concept")),
            }
        }
        let mut dense = HashMap::new();
        let node_class: Vec<usize> = (0..names.len())
            .map(|i| {
                let r = uf.find(i);
                let next = dense.len();
                *dense.entry(r).or_insert(next)
            })
            .collect();
        let n_classes = dense.len();

        let mut class_of: HashMap<String, usize> =
            names.iter().enumerate().map(|(i, n)| (normalize_name(n), node_class[i])).collect();
        for (alias, node) in aliases {
            class_of.insert(alias, node_class[node]);
        }

        let mut children = vec![Vec::new(); n_classes];
        let mut direct_parents = vec![BTreeSet::new(); n_classes];
        let mut listed: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n_classes];
        for [c, p] in &tax.edges {
            let (cc, pc) = (class_of[&normalize_name(c)], class_of[&normalize_name(p)]);
            if cc == pc {
                continue;
            }
            direct_parents[cc].insert(pc);
            if listed[pc].insert(normalize_name(c)) {
                children[pc].push(c.trim().to_string());
            }
        }

        // Topological closure; fails on cycles.
        let mut indegree: Vec<usize> = direct_parents.iter().map(BTreeSet::len).collect();
        let mut kids = vec![Vec::new(); n_classes];
        for (c, ps) in direct_parents.iter().enumerate() {
            for &p in ps {
                kids[p].push(c);
            }
        }
        let mut queue: VecDeque<usize> = (0..n_classes).filter(|&c| indegree[c] == 0).collect();
        let mut ancestors = vec![FixedBitSet::with_capacity(n_classes); n_classes];
        let mut done = 0;
        while let Some(c) = queue.pop_front() {
            done += 1;
            let mut anc = FixedBitSet::with_capacity(n_classes);
            anc.insert(c);
            for &p in &direct_parents[c] {
                anc.union_with(&ancestors[p]);
            }
            ancestors[c] = anc;
            for &k in &kids[c] {
                indegree[k] -= 1;
                if indegree[k] == 0 {
                    queue.push_back(k);
                }
            }
        }
        if done != n_classes {
            return invalid("edges contain a cycle".into());
        }
        let root = node_class[0];
        for (i, name) in names.iter().enumerate() {
            if !ancestors[node_class[i]].contains(root) {
                return invalid(format!("{name:?} is not reachable from the root"));
            }
        }

        let mut extras = vec![Vec::new(); n_classes];
        let mut annotate = |table: &BTreeMap<String, Vec<String>>, kind: &str| -> Result<BTreeSet<String>, FixtureError> {
            let mut all = BTreeSet::new();
            for (owner, members) in table {
                let Some(&cls) = class_of.get(&normalize_name(owner)) else {
                    return Err(FixtureError::Invalid(format!("{kind} annotation on unknown concept {owner:?}")));
                };
                for m in members {
                    if class_of.contains_key(&normalize_name(m)) {
                        return Err(FixtureError::Invalid(format!("{kind} {m:?} is also a taxonomy concept")));
                    }
                    extras[cls].push(m.trim().to_string());
                    all.insert(normalize_name(m));
                }
            }
            Ok(all)
        };
        let instances = annotate(&tax.instances, "instance")?;
        let parts = annotate(&tax.parts, "part")?;

        let mut renames = BTreeMap::new();
        let mut sloppy_for = HashMap::new();
        let mut sloppy_names = Vec::new();
        for (sloppy, proper) in &tax.renames {
            if !class_of.contains_key(&normalize_name(proper)) {
                return invalid(format!("rename target {proper:?} is not a taxonomy concept"));
            }
            if class_of.contains_key(&normalize_name(sloppy)) {
                return invalid(format!("rename source {sloppy:?} is already a taxonomy concept"));
            }
            renames.insert(normalize_name(sloppy), proper.trim().to_string());
            sloppy_for.insert(normalize_name(proper), sloppy.trim().to_string());
            sloppy_names.push(sloppy.trim().to_string());
        }

        Ok(Truth {
            class_of,
            children,
            direct_parents,
            ancestors,
            extras,
            instances,
            parts,
            descriptions: tax.descriptions.iter().map(|(k, v)| (normalize_name(k), v.clone())).collect(),
            renames,
            sloppy_for,
            sloppy_names,
        })
    }

    fn class(&self, name: &str) -> Option<usize> {
        self.class_of.get(&normalize_name(name)).copied()
    }

    fn subsumed(&self, sub: &str, sup: &str) -> bool {
        match (self.class(sub), self.class(sup)) {
            (Some(s), Some(t)) => self.ancestors[s].contains(t),
            _ => false,
        }
    }

    fn direct(&self, sub: &str, sup: &str) -> bool {
        match (self.class(sub), self.class(sup)) {
            (Some(s), Some(t)) => s == t || self.direct_parents[s].contains(&t),
            _ => false,
        }
    }

    fn description(&self, name: &str, concept: &str) -> String {
        let key = normalize_name(name);
        self.descriptions
            .get(&key)
            .or_else(|| self.renames.get(&key).and_then(|p| self.descriptions.get(&normalize_name(p))))
            .cloned()
            .unwrap_or_else(|| format!("A subcategory of {concept} known as {}.", name.trim()))
    }
}

/// Oracle backed by a ground-truth taxonomy with an optional noise model.
#[derive(Debug)]
pub struct MockOracle {
    truth: Truth,
    noise: NoiseModel,
    calls: AtomicU64,
    log: QueryLog,
}

impl MockOracle {
    pub fn new(taxonomy: &GroundTruthTaxonomy, noise: NoiseModel) -> Result<Self, FixtureError> {
        noise.validate()?;
        Ok(MockOracle { truth: Truth::compile(taxonomy)?, noise, calls: AtomicU64::new(0), log: QueryLog::new() })
    }

    pub fn noise_free(taxonomy: &GroundTruthTaxonomy) -> Result<Self, FixtureError> {
        MockOracle::new(taxonomy, NoiseModel::noise_free())
    }

    pub fn from_path(path: &Path, noise: NoiseModel) -> Result<Self, FixtureError> {
        MockOracle::new(&GroundTruthTaxonomy::from_path(path)?, noise)
    }

    fn rng(&self, op: &str, args: &[&str]) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.noise.rng_seed.to_le_bytes());
        hasher.update(op.as_bytes());
        for a in args {
            hasher.update([0u8]);
            hasher.update(normalize_name(a).as_bytes());
        }
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }

    fn chance(&self, p: f64, op: &str, args: &[&str]) -> bool {
        p > 0.0 && self.rng(op, args).random_bool(p)
    }

    fn log(&self, template: TemplateName, bindings: &Bindings, ctx: &OracleContext, args: &[&str], reply: String) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let prompt = render(template, bindings, ctx).unwrap_or_default();
        let mut rec = QueryRecord::new(template, prompt, reply);
        rec.args = args.iter().map(|a| a.to_string()).collect();
        rec.phase = ctx.phase;
        self.log.record(rec);
    }

    fn subsumption_answer(&self, op: &str, sub: &str, sup: &str) -> bool {
        let truth = self.truth.subsumed(sub, sup);
        if truth {
            !(!self.truth.direct(sub, sup) && self.chance(self.noise.p_nontransitive_denial, op, &[sub, sup]))
        } else {
            self.chance(self.noise.p_hallucinated_edge, op, &[sub, sup])
        }
    }

    fn yes_no(answer: bool) -> String {
        if answer { "Yes".into() } else { "No".into() }
    }
}

impl Oracle for MockOracle {
    fn has_subconcepts(&self, ctx: &OracleContext, concept: &str) -> Result<bool, OracleError> {
        let answer = self
            .truth
            .class(concept)
            .is_some_and(|c| !self.truth.children[c].is_empty() || !self.truth.extras[c].is_empty());
        let b = Bindings::seed(&ctx.seed_name).with_c(concept).with_d(ctx.parent_name.as_deref());
        self.log(TemplateName::Existence, &b, ctx, &[concept], Self::yes_no(answer));
        Ok(answer)
    }

    fn list_subconcepts(
        &self,
        ctx: &OracleContext,
        concept: &str,
        _threshold: usize,
        _samples: usize,
    ) -> Result<Vec<String>, OracleError> {
        let mut out = Vec::new();
        if let Some(c) = self.truth.class(concept) {
            for child in &self.truth.children[c] {
                if self.chance(self.noise.p_missing_edge, "missing", &[concept, child]) {
                    continue;
                }
                let shown = self.truth.sloppy_for.get(&normalize_name(child)).unwrap_or(child);
                out.push(shown.clone());
                let mut rng = self.rng("inflate", &[concept, child]);
                if self.noise.p_attribute_inflation > 0.0 && rng.random_bool(self.noise.p_attribute_inflation) {
                    let modifier = INFLATION_MODIFIERS[rng.random_range(0..INFLATION_MODIFIERS.len())];
                    out.push(format!("{modifier} {child}"));
                }
            }
            out.extend(self.truth.extras[c].iter().cloned());
        }
        let b = Bindings::seed(&ctx.seed_name).with_c(concept).with_d(ctx.parent_name.as_deref());
        self.log(TemplateName::Listing, &b, ctx, &[concept], out.join(", "));
        Ok(out)
    }

    fn describe(
        &self,
        ctx: &OracleContext,
        concept: &str,
        names: &[String],
    ) -> Result<BTreeMap<String, String>, OracleError> {
        let map: BTreeMap<String, String> =
            names.iter().map(|n| (n.clone(), self.truth.description(n, concept))).collect();
        let reply = names.iter().map(|n| format!("{n}: {}", map[n])).collect::<Vec<_>>().join("\n");
        let b = Bindings::seed(&ctx.seed_name)
            .with_c(concept)
            .with_d(ctx.parent_name.as_deref())
            .with_items(names);
        self.log(TemplateName::Description, &b, ctx, &[concept], reply);
        Ok(map)
    }

    fn is_instance(&self, ctx: &OracleContext, candidate: &str) -> Result<bool, OracleError> {
        let annotated = self.truth.instances.contains(&normalize_name(candidate));
        let answer = annotated && !self.chance(self.noise.p_wrong_relation, "instance", &[candidate]);
        let b = Bindings::seed(&ctx.seed_name).with_d(Some(candidate));
        let reply = if answer { "Instance" } else { "Subcategory" };
        self.log(TemplateName::VerifyInstance, &b, ctx, &[candidate], reply.into());
        Ok(answer)
    }

    fn is_part(&self, ctx: &OracleContext, candidate: &str) -> Result<bool, OracleError> {
        let annotated = self.truth.parts.contains(&normalize_name(candidate));
        let answer = annotated && !self.chance(self.noise.p_wrong_relation, "part", &[candidate]);
        let b = Bindings::seed(&ctx.seed_name).with_d(Some(candidate));
        let reply = if answer { "Part" } else { "Subcategory" };
        self.log(TemplateName::VerifyPart, &b, ctx, &[candidate], reply.into());
        Ok(answer)
    }

    fn under_seed(&self, ctx: &OracleContext, candidate: &str) -> Result<bool, OracleError> {
        let answer = self.subsumption_answer("seed", candidate, &ctx.seed_name);
        let b = Bindings::seed(&ctx.seed_name).with_d(Some(candidate));
        self.log(TemplateName::VerifySeed, &b, ctx, &[candidate], Self::yes_no(answer));
        Ok(answer)
    }

    fn is_subcategory_of(&self, ctx: &OracleContext, candidate: &str, concept: &str) -> Result<bool, OracleError> {
        let answer = self.subsumption_answer("subcat", candidate, concept);
        let b = Bindings::seed(&ctx.seed_name).with_c(concept).with_d(Some(candidate));
        self.log(TemplateName::VerifySubcat, &b, ctx, &[candidate, concept], Self::yes_no(answer));
        Ok(answer)
    }

    fn rename_from_description(
        &self,
        ctx: &OracleContext,
        concept: &str,
        description: &str,
    ) -> Result<Option<String>, OracleError> {
        let answer = self
            .truth
            .sloppy_names
            .iter()
            .find(|s| self.truth.description(s, concept).trim() == description.trim())
            .and_then(|s| self.truth.renames.get(&normalize_name(s)).cloned());
        let b = Bindings::seed(&ctx.seed_name).with_c(concept).with_desc(description);
        self.log(TemplateName::Rename, &b, ctx, &[concept], answer.clone().unwrap_or_default());
        Ok(answer)
    }

    fn interchangeable(&self, ctx: &OracleContext, first: &str, second: &str) -> Result<bool, OracleError> {
        let answer = normalize_name(first) == normalize_name(second)
            || matches!((self.truth.class(first), self.truth.class(second)), (Some(a), Some(b)) if a == b);
        let b = Bindings::seed(&ctx.seed_name).with_pair(first, second);
        self.log(TemplateName::SynonymInterchangeable, &b, ctx, &[first, second], Self::yes_no(answer));
        Ok(answer)
    }

    fn subcategory_direction(
        &self,
        ctx: &OracleContext,
        first: &str,
        second: &str,
    ) -> Result<(String, String), OracleError> {
        let pair = if self.truth.subsumed(second, first) && !self.truth.subsumed(first, second) {
            (second.to_string(), first.to_string())
        } else {
            (first.to_string(), second.to_string())
        };
        let b = Bindings::seed(&ctx.seed_name).with_pair(first, second);
        let reply = format!("[[{}]] is a subcategory of [[{}]].", pair.0, pair.1);
        self.log(TemplateName::SynonymDirection, &b, ctx, &[first, second], reply);
        Ok(pair)
    }

    fn usage(&self) -> CostLedger {
        CostLedger { requests: self.calls.load(Ordering::Relaxed), ..CostLedger::default() }
    }

    fn query_log(&self) -> &QueryLog {
        &self.log
    }
}
