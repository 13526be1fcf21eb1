//! Inexact simplification of expression trees through a hash table of
//! behaviourally equivalent subtrees.
//!
//! Every subtree an engine run evaluates gets hashed by the sign pattern of
//! its prediction vector on the training inputs. Subtrees landing on an
//! occupied key within a tolerance of the key's representative form an
//! equivalence class, and any class member can be rewritten to the smallest
//! member on the spot. Zero-variance predictions are canonicalized to the
//! zero vector first, so every constant-behaved subtree shares one class
//! with the seeded constant terminal and collapses to a single constant
//! node whose value is the mean of the replaced predictions.

use crate::expr::{
    apply_op, eval_node, evaluate_with_trace, EvaluationTrace, ExpressionTree, FeatureMatrix, Node,
};
use crate::lsh::{mean_squared_diff, HashKey, HyperplaneSet, LshError};
use indexmap::IndexMap;
use std::borrow::Cow;
use std::collections::HashSet;

/// Widest key the adaptive sizing loop will grow to when terminals collide.
pub const MAX_ADAPTIVE_HASH_BITS: usize = 65536;

/// Direction in which subtrees are visited during simplification.
///
/// Bottom-up visits every node and recomputes each parent's predictions
/// from its (possibly replaced) children; top-down visits parents first and
/// skips the descendants of any node it replaces. The two orders may
/// legitimately produce different output trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraversalOrder {
    BottomUp,
    TopDown,
}

/// Tuning for table construction and querying.
#[derive(Debug, Clone)]
pub struct SimplifySettings {
    /// Largest mean squared distance to a bucket representative that still
    /// counts as equivalent. Must be positive.
    pub tolerance: f64,
    /// Key width in bits.
    pub hash_bits: usize,
    /// Double the key width (up to [`MAX_ADAPTIVE_HASH_BITS`]) while
    /// distinct terminals collide.
    pub adaptive_hash_sizing: bool,
    /// Seed for the hyperplane coordinates.
    pub plane_seed: u64,
    /// Value of the constant terminal each table is seeded with.
    pub constant_seed_value: f64,
}

impl Default for SimplifySettings {
    fn default() -> SimplifySettings {
        SimplifySettings {
            tolerance: 1e-2,
            hash_bits: 256,
            adaptive_hash_sizing: false,
            plane_seed: 0,
            constant_seed_value: 1.0,
        }
    }
}

/// Zero-variance vectors canonicalize to the all-zero vector; anything else
/// passes through unchanged.
pub fn canonicalize_constant(pred: &[f64]) -> Vec<f64> {
    if is_uniform(pred) {
        vec![0.0; pred.len()]
    } else {
        pred.to_vec()
    }
}

fn is_uniform(pred: &[f64]) -> bool {
    pred.windows(2).all(|w| w[0] == w[1])
}

/// Mean of a prediction vector; exact (first element) when the vector is
/// uniform, so constants survive a collapse-and-restore round trip bitwise.
fn prediction_mean(pred: &[f64]) -> f64 {
    if is_uniform(pred) {
        pred[0]
    } else {
        pred.iter().sum::<f64>() / pred.len() as f64
    }
}

#[derive(Debug, Clone)]
struct Member {
    node: Node,
    text: String,
    size: usize,
}

#[derive(Debug, Clone)]
struct Bucket {
    /// Canonicalized prediction vector that created the entry; distances
    /// are measured against it.
    representative: Vec<f64>,
    members: Vec<Member>,
    texts: HashSet<String>,
    /// Index of the smallest member; ties keep the earliest inserted.
    smallest: usize,
}

impl Bucket {
    fn singleton(representative: Vec<f64>, node: Node) -> Bucket {
        let text = node.to_text();
        let size = node.size();
        let mut texts = HashSet::new();
        texts.insert(text.clone());
        Bucket {
            representative,
            members: vec![Member { node, text, size }],
            texts,
            smallest: 0,
        }
    }

    /// Appends a member unless its text is already present; returns whether
    /// it was appended.
    fn push(&mut self, node: &Node, text: &str, size: usize) -> bool {
        if self.texts.contains(text) {
            return false;
        }
        self.texts.insert(text.to_string());
        self.members.push(Member {
            node: node.clone(),
            text: text.to_string(),
            size,
        });
        if size < self.members[self.smallest].size {
            self.smallest = self.members.len() - 1;
        }
        true
    }

    fn smallest_member(&self) -> &Member {
        &self.members[self.smallest]
    }
}

/// One substitution applied during a simplification pass.
#[derive(Debug, Clone, Copy)]
pub struct ReplacementEvent {
    pub old_size: usize,
    pub new_size: usize,
    /// Mean squared distance between the canonicalized prediction and the
    /// bucket representative at the moment of the substitution.
    pub distance: f64,
}

/// What one simplification pass did to a tree.
#[derive(Debug, Clone, Default)]
pub struct SimplifyReport {
    pub events: Vec<ReplacementEvent>,
}

impl SimplifyReport {
    /// All substitutions, including equal-size swaps to the canonical
    /// member.
    pub fn replacements(&self) -> usize {
        self.events.len()
    }

    /// Substitutions that strictly reduced size.
    pub fn simplifications(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.new_size < e.old_size)
            .count()
    }
}

enum Visit {
    Kept,
    Replaced {
        node: Node,
        old_size: usize,
        new_size: usize,
        distance: f64,
    },
}

/// Table of equivalence classes of subtrees keyed by prediction hash.
///
/// One table lives through one engine run: it is seeded with the terminals
/// before the first generation and accumulates classes from every tree it
/// simplifies. Construction needs the training inputs because keys hash
/// prediction vectors over those inputs.
#[derive(Debug, Clone)]
pub struct SimplificationTable {
    planes: HyperplaneSet,
    buckets: IndexMap<HashKey, Bucket>,
    tolerance: f64,
    simplifications: usize,
    warnings: Vec<String>,
}

impl SimplificationTable {
    /// Builds a table seeded with one entry per terminal: a constant node
    /// holding `constant_seed_value`, then each feature of `train` in
    /// order. Terminals whose keys collide displace the earlier entry; with
    /// adaptive sizing enabled the key width doubles (up to
    /// [`MAX_ADAPTIVE_HASH_BITS`]) until the collision clears, and any
    /// remaining displacement is recorded as a warning.
    pub fn new(
        settings: &SimplifySettings,
        train: &FeatureMatrix,
    ) -> Result<SimplificationTable, LshError> {
        assert!(settings.tolerance > 0.0, "tolerance must be positive");
        assert!(settings.hash_bits > 0, "key width must be positive");
        assert!(train.n_rows() > 0, "training inputs must be non-empty");
        let terminals: Vec<Node> = std::iter::once(Node::constant(settings.constant_seed_value))
            .chain((0..train.n_features()).map(Node::variable))
            .collect();
        let mut bits = settings.hash_bits;
        loop {
            let mut table = SimplificationTable::new_empty_with_bits(settings, train, bits);
            let mut displaced: Vec<(String, String)> = Vec::new();
            for node in &terminals {
                let pred = eval_node(node, train).expect("terminal variables are in range");
                if !pred.iter().all(|v| v.is_finite()) {
                    return Err(LshError::NonFinite);
                }
                let (key, canonical) = table.key_and_canonical(&pred)?;
                let bucket = Bucket::singleton(canonical.into_owned(), node.clone());
                if let Some(old) = table.buckets.insert(key, bucket) {
                    displaced.push((old.smallest_member().text.clone(), node.to_text()));
                }
            }
            let can_grow = settings.adaptive_hash_sizing && bits < MAX_ADAPTIVE_HASH_BITS;
            if displaced.is_empty() || !can_grow {
                for (old, new) in displaced {
                    table.warnings.push(format!(
                        "terminal key collision at {bits} bits: {new} displaced {old}"
                    ));
                }
                return Ok(table);
            }
            bits = (bits * 2).min(MAX_ADAPTIVE_HASH_BITS);
        }
    }

    /// A table with no entries; useful for building up classes by hand.
    pub fn new_empty(settings: &SimplifySettings, train: &FeatureMatrix) -> SimplificationTable {
        SimplificationTable::new_empty_with_bits(settings, train, settings.hash_bits)
    }

    fn new_empty_with_bits(
        settings: &SimplifySettings,
        train: &FeatureMatrix,
        bits: usize,
    ) -> SimplificationTable {
        SimplificationTable {
            planes: HyperplaneSet::new(settings.plane_seed, bits, train.n_rows()),
            buckets: IndexMap::new(),
            tolerance: settings.tolerance,
            simplifications: 0,
            warnings: Vec::new(),
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Current key width; may exceed the configured width after adaptive
    /// sizing.
    pub fn hash_bits(&self) -> usize {
        self.planes.bits()
    }

    /// Number of occupied keys.
    pub fn total_entries(&self) -> usize {
        self.buckets.len()
    }

    /// Number of stored expressions across all classes (each distinct text
    /// counted once).
    pub fn total_expressions(&self) -> usize {
        self.buckets.values().map(|b| b.members.len()).sum()
    }

    /// Number of substitutions so far that strictly reduced size.
    pub fn simplifications_performed(&self) -> usize {
        self.simplifications
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Key a prediction vector maps to, after canonicalization.
    pub fn key_for(&self, pred: &[f64]) -> Result<HashKey, LshError> {
        Ok(self.key_and_canonical(pred)?.0)
    }

    fn key_and_canonical<'p>(
        &self,
        pred: &'p [f64],
    ) -> Result<(HashKey, Cow<'p, [f64]>), LshError> {
        if is_uniform(pred) {
            Ok((self.planes.zero_key(), Cow::Owned(vec![0.0; pred.len()])))
        } else {
            let key = self.planes.hash(pred)?;
            Ok((key, Cow::Borrowed(pred)))
        }
    }

    /// Smallest member of the class at `key` (ties: first inserted), if the
    /// key is occupied.
    pub fn smallest_entry(&self, key: &HashKey) -> Option<ExpressionTree> {
        self.buckets
            .get(key)
            .map(|b| ExpressionTree::new(b.smallest_member().node.clone()))
    }

    /// Texts of the class at `key`, smallest first (ties: insertion order).
    pub fn member_texts(&self, key: &HashKey) -> Option<Vec<String>> {
        self.buckets.get(key).map(|bucket| {
            let mut ordered: Vec<&Member> = bucket.members.iter().collect();
            ordered.sort_by_key(|m| m.size);
            ordered.into_iter().map(|m| m.text.clone()).collect()
        })
    }

    /// Simplifies a copy of `tree` against this table, mutating the table
    /// along the way (appending class members, creating entries, counting
    /// substitutions).
    ///
    /// Subtrees whose predictions contain non-finite values are left alone.
    /// The tree's variables must be within `x`'s feature range.
    pub fn simplify(
        &mut self,
        tree: &ExpressionTree,
        x: &FeatureMatrix,
        order: TraversalOrder,
    ) -> (ExpressionTree, SimplifyReport) {
        let mut root = tree.root().clone();
        let mut report = SimplifyReport::default();
        match order {
            TraversalOrder::BottomUp => {
                self.bottom_up(&mut root, x, &mut report);
            }
            TraversalOrder::TopDown => {
                let trace =
                    evaluate_with_trace(tree, x).expect("tree variables are in feature range");
                self.top_down(&mut root, &trace, 0, &mut report);
            }
        }
        (ExpressionTree::new(root), report)
    }

    /// Visits children first, then the node itself, with the node's
    /// predictions recomputed from whatever its children have become.
    /// Returns the visited node's final prediction vector.
    fn bottom_up(
        &mut self,
        node: &mut Node,
        x: &FeatureMatrix,
        report: &mut SimplifyReport,
    ) -> Vec<f64> {
        let pred = match node {
            Node::Constant(c) => vec![*c; x.n_rows()],
            Node::Variable(i) => x.column(*i).to_vec(),
            Node::Op(kind, children) => {
                let kind = *kind;
                let child_preds: Vec<Vec<f64>> = children
                    .iter_mut()
                    .map(|child| self.bottom_up(child, x, report))
                    .collect();
                apply_op(kind, &child_preds)
            }
        };
        match self.visit_subtree(node, &pred) {
            Visit::Kept => pred,
            Visit::Replaced {
                node: replacement,
                old_size,
                new_size,
                distance,
            } => {
                report.events.push(ReplacementEvent {
                    old_size,
                    new_size,
                    distance,
                });
                let new_pred =
                    eval_node(&replacement, x).expect("class members are in feature range");
                *node = replacement;
                new_pred
            }
        }
    }

    /// Visits the node before its children using the predictions traced on
    /// the unmodified tree; a replaced node's descendants are skipped, so
    /// every vector read from the trace still describes an untouched
    /// subtree. Returns the size the subtree had when visited, which is how
    /// the caller advances its trace cursor.
    fn top_down(
        &mut self,
        node: &mut Node,
        trace: &EvaluationTrace,
        pos: usize,
        report: &mut SimplifyReport,
    ) -> usize {
        let original_size = node.size();
        match self.visit_subtree(node, trace.vector(pos)) {
            Visit::Replaced {
                node: replacement,
                old_size,
                new_size,
                distance,
            } => {
                report.events.push(ReplacementEvent {
                    old_size,
                    new_size,
                    distance,
                });
                *node = replacement;
            }
            Visit::Kept => {
                let mut child_pos = pos + 1;
                for child in node.children_mut() {
                    child_pos += self.top_down(child, trace, child_pos, report);
                }
            }
        }
        original_size
    }

    /// Core per-subtree step: canonicalize, key, then either create a
    /// class, append-and-substitute, or do nothing.
    ///
    /// An occupied key whose representative is farther than the tolerance
    /// takes no action at all. A hit appends the subtree to the class
    /// (deduplicated by text) and proposes the class's smallest member as a
    /// replacement, restoring a constant member's value to the mean of the
    /// subtree's own predictions; proposals identical to the subtree are
    /// dropped, and only strictly smaller ones count as simplifications.
    fn visit_subtree(&mut self, subtree: &Node, pred: &[f64]) -> Visit {
        if !pred.iter().all(|v| v.is_finite()) {
            return Visit::Kept;
        }
        let (key, canonical) = self
            .key_and_canonical(pred)
            .expect("finiteness already checked");
        let Some(bucket) = self.buckets.get_mut(&key) else {
            self.buckets.insert(
                key,
                Bucket::singleton(canonical.into_owned(), subtree.clone()),
            );
            return Visit::Kept;
        };
        let distance = mean_squared_diff(&canonical, &bucket.representative);
        if distance > self.tolerance {
            return Visit::Kept;
        }
        let text = subtree.to_text();
        let old_size = subtree.size();
        bucket.push(subtree, &text, old_size);
        let smallest = bucket.smallest_member();
        let replacement = match smallest.node {
            Node::Constant(_) => Node::constant(prediction_mean(pred)),
            _ => smallest.node.clone(),
        };
        if replacement.to_text() == text {
            return Visit::Kept;
        }
        let new_size = replacement.size();
        debug_assert!(new_size <= old_size, "class members cannot grow a subtree");
        if new_size < old_size {
            self.simplifications += 1;
        }
        Visit::Replaced {
            node: replacement,
            old_size,
            new_size,
            distance,
        }
    }

    /// Text dump: one block per entry in creation order — the key's bit
    /// string (truncated to `truncate_bits` when given), one ` - ` line per
    /// member ordered smallest to largest (ties: insertion order), then a
    /// blank line — followed by a counters footer. An empty table dumps to
    /// an empty string.
    pub fn dump(&self, truncate_bits: Option<usize>) -> String {
        if self.buckets.is_empty() {
            return String::new();
        }
        let mut out = String::new();
        for (key, bucket) in &self.buckets {
            match truncate_bits {
                Some(n) => out.push_str(&key.truncated_bit_string(n)),
                None => out.push_str(&key.to_bit_string()),
            }
            out.push('\n');
            let mut ordered: Vec<&Member> = bucket.members.iter().collect();
            ordered.sort_by_key(|m| m.size);
            for member in ordered {
                out.push_str(" - ");
                out.push_str(&member.text);
                out.push('\n');
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "entries={} expressions={}\n",
            self.total_entries(),
            self.total_expressions()
        ));
        out
    }
}
