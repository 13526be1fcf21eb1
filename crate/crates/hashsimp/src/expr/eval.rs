//! Columnar evaluation: every node produces one prediction per data row.
//!
//! Operators are unprotected. Domain violations (division by zero, log of a
//! negative, overflow) produce IEEE infinities or NaNs that propagate to the
//! output; callers screen for finiteness where it matters.

use super::{ExpressionTree, Node, OpKind};
use thiserror::Error;

/// Column-major numeric matrix: one column per feature, equal lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> FeatureMatrix {
        assert!(!columns.is_empty(), "at least one feature column required");
        let n_rows = columns[0].len();
        assert!(
            columns.iter().all(|c| c.len() == n_rows),
            "feature columns must have equal lengths"
        );
        FeatureMatrix { n_rows, columns }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> FeatureMatrix {
        assert!(!rows.is_empty(), "at least one row required");
        let d = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == d), "ragged rows");
        let columns = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        FeatureMatrix::from_columns(columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Row subset in the given order.
    pub fn gather(&self, indices: &[usize]) -> FeatureMatrix {
        let columns = self
            .columns
            .iter()
            .map(|c| indices.iter().map(|&i| c[i]).collect())
            .collect();
        FeatureMatrix {
            n_rows: indices.len(),
            columns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("variable x_{index} out of range: data has {n_features} features")]
    VariableOutOfRange { index: usize, n_features: usize },
}

/// Prediction vector of the whole tree.
pub fn evaluate(tree: &ExpressionTree, x: &FeatureMatrix) -> Result<Vec<f64>, EvalError> {
    eval_node(tree.root(), x)
}

pub(crate) fn eval_node(node: &Node, x: &FeatureMatrix) -> Result<Vec<f64>, EvalError> {
    match node {
        Node::Constant(v) => Ok(vec![*v; x.n_rows()]),
        Node::Variable(i) => x
            .columns()
            .get(*i)
            .cloned()
            .ok_or(EvalError::VariableOutOfRange {
                index: *i,
                n_features: x.n_features(),
            }),
        Node::Op(kind, children) => {
            let args = children
                .iter()
                .map(|c| eval_node(c, x))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(apply_op(*kind, &args))
        }
    }
}

/// Pointwise application of one operator to already-evaluated children.
pub(crate) fn apply_op(kind: OpKind, args: &[Vec<f64>]) -> Vec<f64> {
    fn unary(a: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        a.iter().map(|&v| f(v)).collect()
    }
    fn binary(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    }
    match kind {
        OpKind::Add => {
            let mut acc = args[0].clone();
            for a in &args[1..] {
                for (s, v) in acc.iter_mut().zip(a) {
                    *s += v;
                }
            }
            acc
        }
        OpKind::Multiply => {
            let mut acc = args[0].clone();
            for a in &args[1..] {
                for (s, v) in acc.iter_mut().zip(a) {
                    *s *= v;
                }
            }
            acc
        }
        OpKind::Subtract => binary(&args[0], &args[1], |a, b| a - b),
        OpKind::Divide => binary(&args[0], &args[1], |a, b| a / b),
        OpKind::Min => binary(&args[0], &args[1], nan_min),
        OpKind::Max => binary(&args[0], &args[1], nan_max),
        OpKind::Abs => unary(&args[0], f64::abs),
        OpKind::Acos => unary(&args[0], f64::acos),
        OpKind::Asin => unary(&args[0], f64::asin),
        OpKind::Atan => unary(&args[0], f64::atan),
        OpKind::Cos => unary(&args[0], f64::cos),
        OpKind::Sin => unary(&args[0], f64::sin),
        OpKind::Tan => unary(&args[0], f64::tan),
        OpKind::Exp => unary(&args[0], f64::exp),
        OpKind::Log => unary(&args[0], f64::ln),
        OpKind::Log1p => unary(&args[0], f64::ln_1p),
        OpKind::Exp1p => unary(&args[0], |v| (1.0 + v).exp()),
        OpKind::SqrtAbs => unary(&args[0], |v| v.abs().sqrt()),
        OpKind::Square => unary(&args[0], |v| v * v),
    }
}

// NaN-propagating min/max; ties take the first argument.
fn nan_min(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else if a <= b {
        a
    } else {
        b
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else if a >= b {
        a
    } else {
        b
    }
}

/// Per-node prediction vectors in preorder; entry 0 is the root.
#[derive(Debug, Clone)]
pub struct EvaluationTrace {
    values: Vec<Vec<f64>>,
}

impl EvaluationTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, pos: usize) -> &[f64] {
        &self.values[pos]
    }

    pub fn root(&self) -> &[f64] {
        &self.values[0]
    }
}

/// Evaluates the tree and keeps the prediction vector of every subtree,
/// indexed by preorder position.
pub fn evaluate_with_trace(
    tree: &ExpressionTree,
    x: &FeatureMatrix,
) -> Result<EvaluationTrace, EvalError> {
    fn walk(
        node: &Node,
        x: &FeatureMatrix,
        out: &mut Vec<Vec<f64>>,
    ) -> Result<Vec<f64>, EvalError> {
        let slot = out.len();
        out.push(Vec::new());
        let value = match node {
            Node::Constant(v) => vec![*v; x.n_rows()],
            Node::Variable(i) => {
                x.columns()
                    .get(*i)
                    .cloned()
                    .ok_or(EvalError::VariableOutOfRange {
                        index: *i,
                        n_features: x.n_features(),
                    })?
            }
            Node::Op(kind, children) => {
                let args = children
                    .iter()
                    .map(|c| walk(c, x, out))
                    .collect::<Result<Vec<_>, _>>()?;
                apply_op(*kind, &args)
            }
        };
        out[slot] = value.clone();
        Ok(value)
    }
    let mut values = Vec::with_capacity(tree.size());
    walk(tree.root(), x, &mut values)?;
    Ok(EvaluationTrace { values })
}
