//! Expression trees over a fixed operator vocabulary.
//!
//! Trees are plain values: variation and simplification always build new
//! trees instead of mutating shared state. Nodes are addressed by their
//! preorder position (root = 0), which is what the search operators and the
//! evaluation trace agree on.

mod eval;
mod text;

pub(crate) use eval::{apply_op, eval_node};
pub use eval::{evaluate, evaluate_with_trace, EvalError, EvaluationTrace, FeatureMatrix};
pub use text::{parse, ParseError};

use std::fmt;
use thiserror::Error;

/// Interpretability weight of a constant leaf.
pub const CONSTANT_COMPLEXITY: u64 = 2;
/// Interpretability weight of a variable leaf.
pub const VARIABLE_COMPLEXITY: u64 = 1;

/// Operator vocabulary of the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Subtract,
    Multiply,
    Divide,
    Abs,
    Acos,
    Asin,
    Atan,
    Cos,
    Sin,
    Tan,
    Exp,
    Min,
    Max,
    Log,
    Log1p,
    Exp1p,
    SqrtAbs,
    Square,
}

/// Arity contract of an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Fixed(usize),
    /// Commutative chains accepting any arity of at least 2. The search
    /// keeps chains at or below its configured maximum; the text format
    /// accepts any width.
    Variadic,
}

impl OpKind {
    pub const ALL: [OpKind; 19] = [
        OpKind::Add,
        OpKind::Subtract,
        OpKind::Multiply,
        OpKind::Divide,
        OpKind::Abs,
        OpKind::Acos,
        OpKind::Asin,
        OpKind::Atan,
        OpKind::Cos,
        OpKind::Sin,
        OpKind::Tan,
        OpKind::Exp,
        OpKind::Min,
        OpKind::Max,
        OpKind::Log,
        OpKind::Log1p,
        OpKind::Exp1p,
        OpKind::SqrtAbs,
        OpKind::Square,
    ];

    /// Name used by the text format.
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Subtract => "subtract",
            OpKind::Multiply => "multiply",
            OpKind::Divide => "divide",
            OpKind::Abs => "absolute",
            OpKind::Acos => "acos",
            OpKind::Asin => "asin",
            OpKind::Atan => "atan",
            OpKind::Cos => "cos",
            OpKind::Sin => "sin",
            OpKind::Tan => "tan",
            OpKind::Exp => "exp",
            OpKind::Min => "minimum",
            OpKind::Max => "maximum",
            OpKind::Log => "log",
            OpKind::Log1p => "log1p",
            OpKind::Exp1p => "exp1p",
            OpKind::SqrtAbs => "sqrtabs",
            OpKind::Square => "square",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }

    pub fn arity(self) -> Arity {
        match self {
            OpKind::Add | OpKind::Multiply => Arity::Variadic,
            OpKind::Subtract | OpKind::Divide | OpKind::Min | OpKind::Max => Arity::Fixed(2),
            _ => Arity::Fixed(1),
        }
    }

    /// Smallest argument count the operator accepts.
    pub fn min_arity(self) -> usize {
        match self.arity() {
            Arity::Fixed(k) => k,
            Arity::Variadic => 2,
        }
    }

    pub fn accepts_arity(self, n: usize) -> bool {
        match self.arity() {
            Arity::Fixed(k) => n == k,
            Arity::Variadic => n >= 2,
        }
    }

    /// Multiplicative weight in the recursive interpretability metric.
    pub fn complexity_weight(self) -> u64 {
        match self {
            OpKind::Add | OpKind::Subtract => 2,
            OpKind::Multiply | OpKind::Max | OpKind::Min | OpKind::Square | OpKind::Abs => 3,
            OpKind::Divide | OpKind::SqrtAbs | OpKind::Exp => 4,
            OpKind::Exp1p | OpKind::Cos | OpKind::Sin | OpKind::Tan => 5,
            OpKind::Acos | OpKind::Asin | OpKind::Atan => 6,
            OpKind::Log1p => 8,
            OpKind::Log => 9,
        }
    }
}

/// A node together with the subtree below it.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Constant(f64),
    Variable(usize),
    Op(OpKind, Vec<Node>),
}

impl Node {
    pub fn constant(v: f64) -> Node {
        Node::Constant(v)
    }

    pub fn variable(index: usize) -> Node {
        Node::Variable(index)
    }

    /// Builds an operator node. Panics on an arity the operator rejects;
    /// callers that read untrusted input go through [`parse`] instead.
    pub fn op(kind: OpKind, children: Vec<Node>) -> Node {
        assert!(
            kind.accepts_arity(children.len()),
            "{} does not accept {} arguments",
            kind.name(),
            children.len()
        );
        Node::Op(kind, children)
    }

    pub fn children(&self) -> &[Node] {
        match self {
            Node::Op(_, c) => c,
            _ => &[],
        }
    }

    pub fn children_mut(&mut self) -> &mut [Node] {
        match self {
            Node::Op(_, c) => c,
            _ => &mut [],
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, Node::Op(..))
    }

    /// Node count of the subtree.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(Node::size).sum::<usize>()
    }

    /// Longest root-to-leaf edge count; a single node has depth 0.
    pub fn depth(&self) -> usize {
        self.children()
            .iter()
            .map(Node::depth)
            .max()
            .map_or(0, |d| d + 1)
    }

    /// Recursive interpretability metric: a leaf costs its own weight, an
    /// operator costs its weight times the sum of its children's costs.
    pub fn complexity(&self) -> u64 {
        match self {
            Node::Constant(_) => CONSTANT_COMPLEXITY,
            Node::Variable(_) => VARIABLE_COMPLEXITY,
            Node::Op(kind, children) => {
                kind.complexity_weight() * children.iter().map(Node::complexity).sum::<u64>()
            }
        }
    }

    /// Subtree rooted at preorder position `pos`.
    pub fn node_at(&self, pos: usize) -> Option<&Node> {
        fn walk<'a>(node: &'a Node, pos: usize, next: &mut usize) -> Option<&'a Node> {
            if *next == pos {
                return Some(node);
            }
            *next += 1;
            for child in node.children() {
                if let Some(hit) = walk(child, pos, next) {
                    return Some(hit);
                }
            }
            None
        }
        walk(self, pos, &mut 0)
    }

    pub fn node_at_mut(&mut self, pos: usize) -> Option<&mut Node> {
        fn walk<'a>(node: &'a mut Node, pos: usize, next: &mut usize) -> Option<&'a mut Node> {
            if *next == pos {
                return Some(node);
            }
            *next += 1;
            for child in node.children_mut() {
                if let Some(hit) = walk(child, pos, next) {
                    return Some(hit);
                }
            }
            None
        }
        walk(self, pos, &mut 0)
    }

    /// Depth at which preorder position `pos` sits below this node.
    pub fn depth_of(&self, pos: usize) -> Option<usize> {
        fn walk(node: &Node, pos: usize, next: &mut usize, depth: usize) -> Option<usize> {
            if *next == pos {
                return Some(depth);
            }
            *next += 1;
            for child in node.children() {
                if let Some(hit) = walk(child, pos, next, depth + 1) {
                    return Some(hit);
                }
            }
            None
        }
        walk(self, pos, &mut 0, 0)
    }

    /// Values of the constant leaves in preorder.
    pub fn constant_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each_constant(&mut |v| out.push(v));
        out
    }

    pub fn n_constants(&self) -> usize {
        let mut n = 0;
        self.for_each_constant(&mut |_| n += 1);
        n
    }

    fn for_each_constant(&self, f: &mut impl FnMut(f64)) {
        match self {
            Node::Constant(v) => f(*v),
            Node::Variable(_) => {}
            Node::Op(_, children) => {
                for child in children {
                    child.for_each_constant(f);
                }
            }
        }
    }

    /// Overwrites the constant leaves in preorder. Panics when the number of
    /// values does not match the number of constant leaves.
    pub fn set_constant_values(&mut self, values: &[f64]) {
        fn walk(node: &mut Node, values: &[f64], next: &mut usize) {
            match node {
                Node::Constant(v) => {
                    *v = values[*next];
                    *next += 1;
                }
                Node::Variable(_) => {}
                Node::Op(_, children) => {
                    for child in children {
                        walk(child, values, next);
                    }
                }
            }
        }
        let mut next = 0;
        walk(self, values, &mut next);
        assert_eq!(next, values.len(), "constant count mismatch");
    }

    /// Largest variable index in the subtree, if any variable occurs.
    pub fn max_variable(&self) -> Option<usize> {
        match self {
            Node::Constant(_) => None,
            Node::Variable(i) => Some(*i),
            Node::Op(_, children) => children.iter().filter_map(Node::max_variable).max(),
        }
    }

    pub fn to_text(&self) -> String {
        text::node_to_text(self)
    }
}

/// Position given to [`ExpressionTree::replace_subtree`] was past the end of
/// the preorder walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("position {pos} out of range for tree of size {size}")]
pub struct PositionError {
    pub pos: usize,
    pub size: usize,
}

/// An expression tree; the genotype of the search.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionTree {
    root: Node,
}

impl ExpressionTree {
    pub fn new(root: Node) -> ExpressionTree {
        ExpressionTree { root }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    pub fn size(&self) -> usize {
        self.root.size()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn complexity(&self) -> u64 {
        self.root.complexity()
    }

    pub fn to_text(&self) -> String {
        self.root.to_text()
    }

    pub fn constant_values(&self) -> Vec<f64> {
        self.root.constant_values()
    }

    pub fn n_constants(&self) -> usize {
        self.root.n_constants()
    }

    pub fn set_constant_values(&mut self, values: &[f64]) {
        self.root.set_constant_values(values);
    }

    /// New tree with the subtree at preorder position `pos` swapped for
    /// `replacement`.
    pub fn replace_subtree(
        &self,
        pos: usize,
        replacement: Node,
    ) -> Result<ExpressionTree, PositionError> {
        let mut root = self.root.clone();
        match root.node_at_mut(pos) {
            Some(slot) => {
                *slot = replacement;
                Ok(ExpressionTree::new(root))
            }
            None => Err(PositionError {
                pos,
                size: self.size(),
            }),
        }
    }
}

impl fmt::Display for ExpressionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
