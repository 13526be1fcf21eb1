//! The evolutionary engine: seeded tree initialization, tournament
//! selection, five variation operators, and a per-individual pipeline of
//! constant fitting, optional hash-based simplification, and refitting.
//!
//! One call to [`evolve`] runs one experiment: a fixed number of
//! generations over a fixed-size population, reproducible bit for bit from
//! the configuration seed. The best-on-validation individual ever seen is
//! the returned model.

use crate::data::SplitData;
use crate::expr::{evaluate, Arity, ExpressionTree, Node, OpKind};
use crate::lsh::LshError;
use crate::optimizer::fit_constants;
use crate::simplify::{SimplificationTable, SimplifySettings, TraversalOrder};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use thiserror::Error;

/// Salt mixed into the run seed to decorrelate the hyperplane draw from the
/// evolutionary draw stream.
pub const PLANE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Which simplification pass, if any, runs inside the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    None,
    BottomUp,
    TopDown,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::None, Strategy::BottomUp, Strategy::TopDown];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::BottomUp => "bottom_up",
            Strategy::TopDown => "top_down",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.name() == name)
    }

    /// The traversal order used when simplification is enabled.
    pub fn traversal(self) -> Option<TraversalOrder> {
        match self {
            Strategy::None => None,
            Strategy::BottomUp => Some(TraversalOrder::BottomUp),
            Strategy::TopDown => Some(TraversalOrder::TopDown),
        }
    }
}

/// Engine hyperparameters. The defaults are the reference configuration
/// used throughout the experiments.
#[derive(Debug, Clone)]
pub struct GpConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub max_depth: usize,
    pub max_size: usize,
    /// Bucket-distance tolerance for simplification.
    pub tolerance: f64,
    pub hash_bits: usize,
    pub adaptive_hash_sizing: bool,
    /// Widest argument list drawn for the variadic sum and product.
    pub max_variadic_arity: usize,
    pub tournament_size: usize,
    /// Probabilities of the five variation operators, in the order: insert
    /// node, remove node, replace node, replace subtree, crossover.
    pub variation_probabilities: [f64; 5],
    pub lm_max_iter: usize,
    pub rng_seed: u64,
}

impl Default for GpConfig {
    fn default() -> GpConfig {
        GpConfig {
            pop_size: 80,
            generations: 200,
            max_depth: 7,
            max_size: 128,
            tolerance: 1e-2,
            hash_bits: 256,
            adaptive_hash_sizing: false,
            max_variadic_arity: 4,
            tournament_size: 3,
            variation_probabilities: [0.2; 5],
            lm_max_iter: 20,
            rng_seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), GpError> {
        let fail = |msg: &str| Err(GpError::InvalidConfig(msg.to_string()));
        if self.pop_size < 2 {
            return fail("population size must be at least 2");
        }
        if self.generations == 0 {
            return fail("at least one generation is required");
        }
        if self.max_size == 0 {
            return fail("maximum size must be at least 1");
        }
        if self.tolerance <= 0.0 || !self.tolerance.is_finite() {
            return fail("tolerance must be positive and finite");
        }
        if self.hash_bits == 0 {
            return fail("key width must be at least 1 bit");
        }
        if self.max_variadic_arity < 2 {
            return fail("variadic operators need at least 2 arguments");
        }
        if self.tournament_size == 0 {
            return fail("tournament size must be at least 1");
        }
        let sum: f64 = self.variation_probabilities.iter().sum();
        if self.variation_probabilities.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return fail("variation probabilities must be non-negative and sum to 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("simplification table construction failed: {0}")]
    Table(#[from] LshError),
}

/// A candidate model with its cached scores.
#[derive(Debug, Clone)]
pub struct Individual {
    pub tree: ExpressionTree,
    pub train_mse: f64,
    pub val_mse: f64,
    pub size: usize,
}

/// One row of the per-generation log.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Lowest validation MSE observed up to and including this generation.
    pub best_val_mse: f64,
    /// Size-reducing substitutions performed while processing this
    /// generation's individuals.
    pub n_simplifications: usize,
    /// Wall-clock seconds since the run started.
    pub elapsed_seconds: f64,
}

/// Everything one run produces.
#[derive(Debug)]
pub struct RunResult {
    /// The individual with the lowest validation MSE ever observed.
    pub best: Individual,
    /// Test MSE of `best`.
    pub test_mse: f64,
    /// Exactly `generations` rows.
    pub log: Vec<GenerationRecord>,
    /// The run's simplification table; absent when the strategy is
    /// [`Strategy::None`].
    pub table: Option<SimplificationTable>,
    pub warnings: Vec<String>,
}

/// Mean of squared differences; non-finite sums collapse to infinity so
/// broken predictions always lose comparisons.
pub fn mean_squared_error(pred: &[f64], y: &[f64]) -> f64 {
    assert_eq!(pred.len(), y.len(), "length mismatch");
    let sum: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
    if sum.is_finite() {
        sum / y.len() as f64
    } else {
        f64::INFINITY
    }
}

/// Comparison tolerance under which two MSE values count as tied.
const MSE_TIE_TOLERANCE: f64 = 1e-12;

fn mse_tied(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= MSE_TIE_TOLERANCE
}

/// Strict "fitter than": lower training MSE first, smaller size on ties.
fn fitter(a: &Individual, b: &Individual) -> bool {
    if mse_tied(a.train_mse, b.train_mse) {
        a.size < b.size
    } else {
        a.train_mse < b.train_mse
    }
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    max_depth: usize,
    max_size: usize,
}

impl Bounds {
    fn admits(&self, tree: &ExpressionTree) -> bool {
        tree.size() <= self.max_size && tree.depth() <= self.max_depth
    }
}

/// Uniform draw over the `n_features + 1` terminals: each feature, or a
/// fresh constant uniform in [−1, 1].
fn random_terminal(rng: &mut ChaCha8Rng, n_features: usize) -> Node {
    let choice = rng.gen_range(0..=n_features);
    if choice == n_features {
        Node::constant(rng.gen_range(-1.0..=1.0))
    } else {
        Node::variable(choice)
    }
}

/// Uniform draw over the operators that can fit within `arity_cap`
/// arguments, with variadic widths drawn uniformly. None when no operator
/// fits.
fn random_operator(
    rng: &mut ChaCha8Rng,
    arity_cap: usize,
    max_variadic: usize,
) -> Option<(OpKind, usize)> {
    let feasible: Vec<OpKind> = OpKind::ALL
        .into_iter()
        .filter(|k| k.min_arity() <= arity_cap)
        .collect();
    if feasible.is_empty() {
        return None;
    }
    let kind = feasible[rng.gen_range(0..feasible.len())];
    let arity = match kind.arity() {
        Arity::Fixed(a) => a,
        Arity::Variadic => rng.gen_range(2..=max_variadic.min(arity_cap)),
    };
    Some((kind, arity))
}

fn node_at_path<'a>(root: &'a mut Node, path: &[usize]) -> &'a mut Node {
    let mut current = root;
    for &i in path {
        current = &mut current.children_mut()[i];
    }
    current
}

/// Grows a random tree: draws a target size uniformly in [1, max_size],
/// then repeatedly expands a random open slot with an operator while the
/// size budget allows, finally filling every remaining slot with a
/// terminal. Slots at the depth limit always take terminals, so both
/// bounds hold by construction.
pub fn ptc2(
    rng: &mut ChaCha8Rng,
    n_features: usize,
    max_depth: usize,
    max_size: usize,
    max_variadic: usize,
) -> ExpressionTree {
    assert!(max_size >= 1);
    let target = rng.gen_range(1..=max_size);
    if target == 1 || max_depth == 0 {
        return ExpressionTree::new(random_terminal(rng, n_features));
    }
    let Some((kind, arity)) = random_operator(rng, target - 1, max_variadic) else {
        return ExpressionTree::new(random_terminal(rng, n_features));
    };
    let mut root = Node::op(kind, vec![Node::constant(0.0); arity]);
    let mut placed = 1usize;
    // Open slots as (path from the root, depth).
    let mut frontier: Vec<(Vec<usize>, usize)> = (0..arity).map(|i| (vec![i], 1)).collect();
    while !frontier.is_empty() && placed + frontier.len() < target {
        let slot = rng.gen_range(0..frontier.len());
        let (path, depth) = frontier.swap_remove(slot);
        // The new node plus one node per remaining open slot must still fit
        // in the target, which caps how many children it may open.
        let arity_cap = target - placed - frontier.len() - 1;
        let operator = if depth >= max_depth || arity_cap < 1 {
            None
        } else {
            random_operator(rng, arity_cap, max_variadic)
        };
        match operator {
            Some((kind, arity)) => {
                *node_at_path(&mut root, &path) = Node::op(kind, vec![Node::constant(0.0); arity]);
                placed += 1;
                for i in 0..arity {
                    let mut child_path = path.clone();
                    child_path.push(i);
                    frontier.push((child_path, depth + 1));
                }
            }
            None => {
                *node_at_path(&mut root, &path) = random_terminal(rng, n_features);
                placed += 1;
            }
        }
    }
    for (path, _) in frontier {
        *node_at_path(&mut root, &path) = random_terminal(rng, n_features);
    }
    ExpressionTree::new(root)
}

/// Draws `tournament_size` contenders uniformly with replacement and
/// returns the fittest (earliest drawn on exact standoffs).
fn tournament_select<'a>(
    population: &'a [Individual],
    rng: &mut ChaCha8Rng,
    tournament_size: usize,
) -> &'a Individual {
    let mut winner = &population[rng.gen_range(0..population.len())];
    for _ in 1..tournament_size {
        let challenger = &population[rng.gen_range(0..population.len())];
        if fitter(challenger, winner) {
            winner = challenger;
        }
    }
    winner
}

/// Swaps a uniformly chosen subtree of `a` for a uniformly chosen subtree
/// of `b`, retrying up to ten times to satisfy the bounds; falls back to a
/// copy of `a`.
fn crossover(
    a: &ExpressionTree,
    b: &ExpressionTree,
    rng: &mut ChaCha8Rng,
    bounds: Bounds,
) -> ExpressionTree {
    for _ in 0..10 {
        let target = rng.gen_range(0..a.size());
        let source = rng.gen_range(0..b.size());
        let donor = b.root().node_at(source).expect("position in range");
        let candidate = a
            .replace_subtree(target, donor.clone())
            .expect("position in range");
        if bounds.admits(&candidate) {
            return candidate;
        }
    }
    a.clone()
}

/// The four mutating variation operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    /// Wrap a random subtree in a new random operator, filling the other
    /// argument slots with random terminals.
    InsertNode,
    /// Replace a random operator node by one of its children.
    RemoveNode,
    /// Swap a random node's symbol for a different one of the same arity.
    ReplaceNode,
    /// Substitute a random subtree with a fresh random tree sized to fit.
    ReplaceSubtree,
}

fn mutate(
    tree: &ExpressionTree,
    kind: MutationKind,
    rng: &mut ChaCha8Rng,
    bounds: Bounds,
    n_features: usize,
    max_variadic: usize,
) -> ExpressionTree {
    for _ in 0..10 {
        let candidate = match kind {
            MutationKind::InsertNode => insert_node(tree, rng, n_features, max_variadic),
            MutationKind::RemoveNode => return remove_node(tree, rng),
            MutationKind::ReplaceNode => return replace_node(tree, rng, n_features, max_variadic),
            MutationKind::ReplaceSubtree => {
                replace_subtree_mutation(tree, rng, bounds, n_features, max_variadic)
            }
        };
        if bounds.admits(&candidate) {
            return candidate;
        }
    }
    tree.clone()
}

fn insert_node(
    tree: &ExpressionTree,
    rng: &mut ChaCha8Rng,
    n_features: usize,
    max_variadic: usize,
) -> ExpressionTree {
    let position = rng.gen_range(0..tree.size());
    let (kind, arity) =
        random_operator(rng, max_variadic.max(2), max_variadic).expect("some operator always fits");
    let subtree = tree.root().node_at(position).expect("position in range");
    let keep_at = rng.gen_range(0..arity);
    let children = (0..arity)
        .map(|i| {
            if i == keep_at {
                subtree.clone()
            } else {
                random_terminal(rng, n_features)
            }
        })
        .collect();
    tree.replace_subtree(position, Node::op(kind, children))
        .expect("position in range")
}

fn remove_node(tree: &ExpressionTree, rng: &mut ChaCha8Rng) -> ExpressionTree {
    let internal: Vec<usize> = (0..tree.size())
        .filter(|&p| !tree.root().node_at(p).expect("in range").is_terminal())
        .collect();
    if internal.is_empty() {
        return tree.clone();
    }
    let position = internal[rng.gen_range(0..internal.len())];
    let node = tree.root().node_at(position).expect("in range");
    let child = &node.children()[rng.gen_range(0..node.children().len())];
    tree.replace_subtree(position, child.clone())
        .expect("position in range")
}

fn replace_node(
    tree: &ExpressionTree,
    rng: &mut ChaCha8Rng,
    n_features: usize,
    max_variadic: usize,
) -> ExpressionTree {
    let position = rng.gen_range(0..tree.size());
    let node = tree.root().node_at(position).expect("in range");
    let replacement = match node {
        Node::Constant(_) | Node::Variable(_) => random_terminal(rng, n_features),
        Node::Op(kind, children) => {
            let arity = children.len();
            let alternatives: Vec<OpKind> = OpKind::ALL
                .into_iter()
                .filter(|k| *k != *kind && k.accepts_arity(arity) && arity <= max_variadic.max(2))
                .collect();
            if alternatives.is_empty() {
                return tree.clone();
            }
            let new_kind = alternatives[rng.gen_range(0..alternatives.len())];
            Node::op(new_kind, children.clone())
        }
    };
    tree.replace_subtree(position, replacement)
        .expect("position in range")
}

fn replace_subtree_mutation(
    tree: &ExpressionTree,
    rng: &mut ChaCha8Rng,
    bounds: Bounds,
    n_features: usize,
    max_variadic: usize,
) -> ExpressionTree {
    let position = rng.gen_range(0..tree.size());
    let subtree_size = tree.root().node_at(position).expect("in range").size();
    let size_budget = bounds.max_size - (tree.size() - subtree_size);
    let depth_budget = bounds.max_depth - tree.root().depth_of(position).expect("in range");
    let fresh = ptc2(rng, n_features, depth_budget, size_budget, max_variadic);
    tree.replace_subtree(position, fresh.into_root())
        .expect("position in range")
}

struct Engine<'d> {
    config: GpConfig,
    strategy: Strategy,
    data: &'d SplitData,
    bounds: Bounds,
    n_features: usize,
    table: Option<SimplificationTable>,
}

impl Engine<'_> {
    /// Scores a raw tree: fit the constants, then — when simplification is
    /// on and the fitted tree behaves finitely on the training inputs —
    /// simplify it and fit the survivor again. Returns the individual plus
    /// the number of size-reducing substitutions performed.
    fn process(&mut self, tree: ExpressionTree) -> (Individual, usize) {
        let train_x = &self.data.train_x;
        let train_y = &self.data.train_y;
        let (mut current, mut train_mse) =
            fit_constants(&tree, train_x, train_y, self.config.lm_max_iter);
        let mut n_simplifications = 0;
        if let (Some(order), Some(table)) = (self.strategy.traversal(), self.table.as_mut()) {
            if train_mse.is_finite() {
                let (simplified, report) = table.simplify(&current, train_x, order);
                n_simplifications = report.simplifications();
                // Replacements by smaller-but-deeper class members can
                // push a deep position past the depth bound; keep the
                // unsimplified tree in that rare case.
                let candidate = if simplified.depth() <= self.bounds.max_depth {
                    simplified
                } else {
                    current.clone()
                };
                let (refitted, refit_mse) =
                    fit_constants(&candidate, train_x, train_y, self.config.lm_max_iter);
                current = refitted;
                train_mse = refit_mse;
            }
        }
        let val_pred = evaluate(&current, &self.data.validation_x)
            .expect("tree variables are in feature range");
        let val_mse = mean_squared_error(&val_pred, &self.data.validation_y);
        let size = current.size();
        (
            Individual {
                tree: current,
                train_mse,
                val_mse,
                size,
            },
            n_simplifications,
        )
    }

    /// Builds one offspring: apply exactly one variation operator, drawn by
    /// the configured probabilities, to tournament-selected parents.
    fn breed(&mut self, population: &[Individual], rng: &mut ChaCha8Rng) -> ExpressionTree {
        let draw: f64 = rng.gen();
        let mut cumulative = 0.0;
        let mut which = self.config.variation_probabilities.len() - 1;
        for (i, p) in self.config.variation_probabilities.iter().enumerate() {
            cumulative += p;
            if draw < cumulative {
                which = i;
                break;
            }
        }
        if which == 4 {
            let a = tournament_select(population, rng, self.config.tournament_size);
            let b = tournament_select(population, rng, self.config.tournament_size);
            crossover(&a.tree, &b.tree, rng, self.bounds)
        } else {
            let kind = [
                MutationKind::InsertNode,
                MutationKind::RemoveNode,
                MutationKind::ReplaceNode,
                MutationKind::ReplaceSubtree,
            ][which];
            let parent = tournament_select(population, rng, self.config.tournament_size);
            mutate(
                &parent.tree,
                kind,
                rng,
                self.bounds,
                self.n_features,
                self.config.max_variadic_arity,
            )
        }
    }
}

fn observe_best(candidate: &Individual, best: &mut Option<Individual>) {
    let improves = best.as_ref().is_none_or(|b| candidate.val_mse < b.val_mse);
    if improves {
        *best = Some(candidate.clone());
    }
}

/// Runs one full experiment and returns its result. Reproducible bit for
/// bit from the seed (timing aside).
pub fn evolve(
    config: &GpConfig,
    data: &SplitData,
    strategy: Strategy,
) -> Result<RunResult, GpError> {
    config.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let n_features = data.train_x.n_features();
    let table = match strategy {
        Strategy::None => None,
        _ => Some(SimplificationTable::new(
            &SimplifySettings {
                tolerance: config.tolerance,
                hash_bits: config.hash_bits,
                adaptive_hash_sizing: config.adaptive_hash_sizing,
                plane_seed: config.rng_seed.wrapping_add(PLANE_SEED_SALT),
                constant_seed_value: 1.0,
            },
            &data.train_x,
        )?),
    };
    let mut engine = Engine {
        config: config.clone(),
        strategy,
        data,
        bounds: Bounds {
            max_depth: config.max_depth,
            max_size: config.max_size,
        },
        n_features,
        table,
    };
    let warnings: Vec<String> = engine
        .table
        .as_ref()
        .map(|t| t.warnings().to_vec())
        .unwrap_or_default();

    let mut log = Vec::with_capacity(config.generations);
    let mut population: Vec<Individual> = Vec::with_capacity(config.pop_size);
    let mut best: Option<Individual> = None;

    let mut generation_simplifications = 0;
    for _ in 0..config.pop_size {
        let tree = ptc2(
            &mut rng,
            n_features,
            config.max_depth,
            config.max_size,
            config.max_variadic_arity,
        );
        let (individual, n) = engine.process(tree);
        generation_simplifications += n;
        observe_best(&individual, &mut best);
        population.push(individual);
    }
    log.push(GenerationRecord {
        generation: 0,
        best_val_mse: best.as_ref().expect("population non-empty").val_mse,
        n_simplifications: generation_simplifications,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    });

    for generation in 1..config.generations {
        let mut offspring = Vec::with_capacity(config.pop_size);
        generation_simplifications = 0;
        for _ in 0..config.pop_size {
            let tree = engine.breed(&population, &mut rng);
            let (individual, n) = engine.process(tree);
            generation_simplifications += n;
            observe_best(&individual, &mut best);
            offspring.push(individual);
        }
        // Elitism: the fittest of the outgoing population survives in
        // place of the least fit offspring.
        let elite = population
            .iter()
            .reduce(|best, c| if fitter(c, best) { c } else { best })
            .expect("population non-empty")
            .clone();
        let worst_index = (0..offspring.len())
            .reduce(|worst, c| {
                if fitter(&offspring[worst], &offspring[c]) {
                    c
                } else {
                    worst
                }
            })
            .expect("offspring non-empty");
        offspring[worst_index] = elite;
        population = offspring;
        log.push(GenerationRecord {
            generation,
            best_val_mse: best.as_ref().expect("non-empty").val_mse,
            n_simplifications: generation_simplifications,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
    }

    let best = best.expect("at least one individual was processed");
    let test_pred =
        evaluate(&best.tree, &data.test_x).expect("tree variables are in feature range");
    let test_mse = mean_squared_error(&test_pred, &data.test_y);
    Ok(RunResult {
        best,
        test_mse,
        log,
        table: engine.table,
        warnings,
    })
}
