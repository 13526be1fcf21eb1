//! Damped least-squares fitting of a tree's constant values.
//!
//! The constants of a tree, read in preorder, form its parameter vector.
//! Derivatives come from forward-mode dual numbers pushed through the tree
//! (one pass per parameter), and the fit is a classic Marquardt loop:
//! solve (JᵀJ + λ·diag(JᵀJ))δ = −Jᵀr, accept the step only when the sum of
//! squared residuals drops, shrinking λ on success and growing it on
//! failure.

use crate::expr::{evaluate, ExpressionTree, FeatureMatrix, Node, OpKind};
use nalgebra::{DMatrix, DVector};

const LAMBDA_INITIAL: f64 = 1e-3;
const LAMBDA_FACTOR: f64 = 10.0;
const LAMBDA_MAX: f64 = 1e12;
const RELATIVE_IMPROVEMENT_FLOOR: f64 = 1e-9;

/// Value and derivative with respect to one parameter.
#[derive(Debug, Clone, Copy)]
struct Dual {
    re: f64,
    dv: f64,
}

/// Residuals r_i = f(x_i; θ) − y_i with `params` written into the tree's
/// constants in preorder. Panics if the parameter count or a variable index
/// does not match.
pub fn residuals(tree: &ExpressionTree, params: &[f64], x: &FeatureMatrix, y: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), x.n_rows(), "targets must match the sample count");
    let mut t = tree.clone();
    t.set_constant_values(params);
    let pred = evaluate(&t, x).expect("tree variables are in feature range");
    pred.iter().zip(y).map(|(p, yi)| p - yi).collect()
}

/// Jacobian as `params.len()` columns of length `x.n_rows()`: column k
/// holds ∂f(x_i; θ)/∂θ_k, computed by one dual-number pass per parameter.
pub fn jacobian(tree: &ExpressionTree, params: &[f64], x: &FeatureMatrix) -> Vec<Vec<f64>> {
    let mut t = tree.clone();
    t.set_constant_values(params);
    (0..params.len())
        .map(|k| {
            let mut next_constant = 0;
            dual_eval(t.root(), x, k, &mut next_constant)
                .into_iter()
                .map(|d| d.dv)
                .collect()
        })
        .collect()
}

/// Fits the tree's constants to `y` and returns the refitted copy together
/// with its training mean squared error.
///
/// Trees without constants come back unchanged with their plain MSE. When
/// the starting point already produces non-finite residuals there is no
/// gradient to follow, so the tree comes back unchanged with infinite MSE.
/// Each solve attempt counts against `max_iter`; the loop also stops when
/// λ overflows, when the system turns non-finite, or when an accepted step
/// improves the sum of squares by less than a factor of 1e-9.
pub fn fit_constants(
    tree: &ExpressionTree,
    x: &FeatureMatrix,
    y: &[f64],
    max_iter: usize,
) -> (ExpressionTree, f64) {
    let n = y.len();
    assert!(n > 0, "cannot fit against empty data");
    let p = tree.n_constants();
    if p == 0 {
        let r = residuals(tree, &[], x, y);
        return (tree.clone(), finite_or_inf(sum_of_squares(&r)) / n as f64);
    }
    let mut theta = tree.constant_values();
    let mut r = residuals(tree, &theta, x, y);
    if !r.iter().all(|v| v.is_finite()) {
        return (tree.clone(), f64::INFINITY);
    }
    let mut best_sse = sum_of_squares(&r);
    let mut lambda = LAMBDA_INITIAL;
    let mut jac: Option<Vec<Vec<f64>>> = None;
    for _ in 0..max_iter {
        if best_sse == 0.0 {
            break;
        }
        let j = jac.get_or_insert_with(|| jacobian(tree, &theta, x));
        if !j.iter().flatten().all(|v| v.is_finite()) {
            break;
        }
        let Some(delta) = solve_damped_step(j, &r, lambda) else {
            // Singular system: treat like a rejected step and stiffen.
            lambda *= LAMBDA_FACTOR;
            if lambda > LAMBDA_MAX {
                break;
            }
            continue;
        };
        let candidate: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
        let r_candidate = residuals(tree, &candidate, x, y);
        let sse_candidate = finite_or_inf(sum_of_squares(&r_candidate));
        if sse_candidate < best_sse {
            let improvement = (best_sse - sse_candidate) / best_sse;
            theta = candidate;
            r = r_candidate;
            best_sse = sse_candidate;
            jac = None;
            lambda /= LAMBDA_FACTOR;
            if improvement < RELATIVE_IMPROVEMENT_FLOOR {
                break;
            }
        } else {
            lambda *= LAMBDA_FACTOR;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
    }
    let mut fitted = tree.clone();
    fitted.set_constant_values(&theta);
    (fitted, best_sse / n as f64)
}

fn sum_of_squares(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// One damped Gauss-Newton step: solves (JᵀJ + λ·diag(JᵀJ))δ = −Jᵀr.
/// Returns None when the system is singular.
fn solve_damped_step(j: &[Vec<f64>], r: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let p = j.len();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        for k in i..p {
            let dot: f64 = j[i].iter().zip(&j[k]).map(|(u, v)| u * v).sum();
            a[(i, k)] = dot;
            a[(k, i)] = dot;
        }
        a[(i, i)] *= 1.0 + lambda;
    }
    let b = DVector::from_fn(p, |i, _| {
        -j[i].iter().zip(r).map(|(u, v)| u * v).sum::<f64>()
    });
    let delta = a.lu().solve(&b)?;
    if !delta.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(delta.iter().copied().collect())
}

/// Evaluates `node` over all samples as duals with respect to the
/// `target`-th constant (preorder). `next_constant` carries the preorder
/// constant counter through the walk.
fn dual_eval(
    node: &Node,
    x: &FeatureMatrix,
    target: usize,
    next_constant: &mut usize,
) -> Vec<Dual> {
    match node {
        Node::Constant(c) => {
            let index = *next_constant;
            *next_constant += 1;
            let dv = if index == target { 1.0 } else { 0.0 };
            vec![Dual { re: *c, dv }; x.n_rows()]
        }
        Node::Variable(i) => x
            .column(*i)
            .iter()
            .map(|&re| Dual { re, dv: 0.0 })
            .collect(),
        Node::Op(kind, children) => {
            let args: Vec<Vec<Dual>> = children
                .iter()
                .map(|child| dual_eval(child, x, target, next_constant))
                .collect();
            apply_dual_op(*kind, &args)
        }
    }
}

/// Dual-number counterpart of the plain evaluator: real parts reproduce it
/// operation for operation, derivative parts follow the chain rule. A
/// subexpression with an identically zero derivative keeps it exactly zero
/// rather than risking 0·∞ artifacts at singular points.
fn apply_dual_op(kind: OpKind, args: &[Vec<Dual>]) -> Vec<Dual> {
    let fold = |f: fn(Dual, Dual) -> Dual| {
        let mut acc = args[0].clone();
        for a in &args[1..] {
            for (s, v) in acc.iter_mut().zip(a) {
                *s = f(*s, *v);
            }
        }
        acc
    };
    let binary = |f: fn(Dual, Dual) -> Dual| {
        args[0]
            .iter()
            .zip(&args[1])
            .map(|(&a, &b)| f(a, b))
            .collect()
    };
    let unary = |f: fn(Dual) -> Dual| args[0].iter().map(|&a| f(a)).collect();
    match kind {
        OpKind::Add => fold(dual_add),
        OpKind::Multiply => fold(dual_mul),
        OpKind::Subtract => binary(dual_sub),
        OpKind::Divide => binary(dual_div),
        OpKind::Min => binary(dual_min),
        OpKind::Max => binary(dual_max),
        OpKind::Abs => unary(|a| {
            let dv = if a.re > 0.0 { a.dv } else { -a.dv };
            Dual { re: a.re.abs(), dv }
        }),
        OpKind::Acos => unary(|a| chain(a, a.re.acos(), -1.0 / (1.0 - a.re * a.re).sqrt())),
        OpKind::Asin => unary(|a| chain(a, a.re.asin(), 1.0 / (1.0 - a.re * a.re).sqrt())),
        OpKind::Atan => unary(|a| chain(a, a.re.atan(), 1.0 / (1.0 + a.re * a.re))),
        OpKind::Cos => unary(|a| chain(a, a.re.cos(), -a.re.sin())),
        OpKind::Sin => unary(|a| chain(a, a.re.sin(), a.re.cos())),
        OpKind::Tan => unary(|a| {
            let c = a.re.cos();
            chain(a, a.re.tan(), 1.0 / (c * c))
        }),
        OpKind::Exp => unary(|a| chain(a, a.re.exp(), a.re.exp())),
        OpKind::Log => unary(|a| chain(a, a.re.ln(), 1.0 / a.re)),
        OpKind::Log1p => unary(|a| chain(a, a.re.ln_1p(), 1.0 / (1.0 + a.re))),
        OpKind::Exp1p => unary(|a| {
            let e = (1.0 + a.re).exp();
            chain(a, e, e)
        }),
        OpKind::SqrtAbs => unary(|a| {
            let root = a.re.abs().sqrt();
            let sign = if a.re > 0.0 { 1.0 } else { -1.0 };
            chain(a, root, sign / (2.0 * root))
        }),
        OpKind::Square => unary(|a| chain(a, a.re * a.re, 2.0 * a.re)),
    }
}

/// Applies a chain-rule factor, pinning an exactly-zero incoming derivative
/// to zero.
fn chain(a: Dual, re: f64, factor: f64) -> Dual {
    let dv = if a.dv == 0.0 { 0.0 } else { factor * a.dv };
    Dual { re, dv }
}

fn dual_add(a: Dual, b: Dual) -> Dual {
    Dual {
        re: a.re + b.re,
        dv: a.dv + b.dv,
    }
}

fn dual_sub(a: Dual, b: Dual) -> Dual {
    Dual {
        re: a.re - b.re,
        dv: a.dv - b.dv,
    }
}

fn dual_mul(a: Dual, b: Dual) -> Dual {
    let dv = if a.dv == 0.0 && b.dv == 0.0 {
        0.0
    } else {
        a.dv * b.re + a.re * b.dv
    };
    Dual {
        re: a.re * b.re,
        dv,
    }
}

fn dual_div(a: Dual, b: Dual) -> Dual {
    let dv = if a.dv == 0.0 && b.dv == 0.0 {
        0.0
    } else {
        (a.dv * b.re - a.re * b.dv) / (b.re * b.re)
    };
    Dual {
        re: a.re / b.re,
        dv,
    }
}

// Mirror the evaluator's NaN-propagating min/max, ties taking the first
// argument's derivative.
fn dual_min(a: Dual, b: Dual) -> Dual {
    if a.re.is_nan() || b.re.is_nan() {
        Dual {
            re: f64::NAN,
            dv: f64::NAN,
        }
    } else if a.re <= b.re {
        a
    } else {
        b
    }
}

fn dual_max(a: Dual, b: Dual) -> Dual {
    if a.re.is_nan() || b.re.is_nan() {
        Dual {
            re: f64::NAN,
            dv: f64::NAN,
        }
    } else if a.re >= b.re {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use approx::assert_abs_diff_eq;

    fn single_column(values: Vec<f64>) -> FeatureMatrix {
        FeatureMatrix::from_columns(vec![values])
    }

    /// Closed-form least squares for y ≈ a + b·x.
    fn line_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
        let det = n * sxx - sx * sx;
        ((sxx * sy - sx * sxy) / det, (n * sxy - sx * sy) / det)
    }

    #[test]
    fn recovers_a_noiseless_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.35 - 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|v| 3.0 + 2.0 * v).collect();
        let x = single_column(xs.clone());
        let tree = parse("add(0.5, multiply(0.5, x_0))").unwrap();
        let (fitted, mse) = fit_constants(&tree, &x, &ys, 20);
        let theta = fitted.constant_values();
        let (a, b) = line_oracle(&xs, &ys);
        assert_abs_diff_eq!(theta[0], a, epsilon = 1e-6);
        assert_abs_diff_eq!(theta[1], b, epsilon = 1e-6);
        assert_abs_diff_eq!(theta[0], 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(theta[1], 2.0, epsilon = 1e-6);
        assert!(mse < 1e-12, "mse={mse}");
    }

    #[test]
    fn lone_constant_converges_to_the_mean() {
        let x = single_column(vec![10.0, 20.0, 30.0, 40.0]);
        let ys = vec![1.0, 2.0, 3.0, 7.0];
        let tree = parse("0.0").unwrap();
        let (fitted, mse) = fit_constants(&tree, &x, &ys, 20);
        let mean = 3.25;
        assert_abs_diff_eq!(fitted.constant_values()[0], mean, epsilon = 1e-9);
        let variance: f64 = ys.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(mse, variance, epsilon = 1e-9);
    }

    #[test]
    fn trees_without_constants_come_back_unchanged_with_their_mse() {
        let x = single_column(vec![1.0, 2.0, 3.0]);
        let ys = vec![1.0, 2.0, 2.0];
        let tree = parse("x_0").unwrap();
        let (fitted, mse) = fit_constants(&tree, &x, &ys, 20);
        assert_eq!(fitted.to_text(), "x_0");
        assert_abs_diff_eq!(mse, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_starting_residuals_return_unchanged_with_infinite_mse() {
        let x = single_column(vec![-1.0, 2.0]);
        let ys = vec![0.0, 0.0];
        let tree = parse("multiply(1.0, log(x_0))").unwrap();
        let (fitted, mse) = fit_constants(&tree, &x, &ys, 20);
        assert_eq!(fitted.to_text(), "multiply(1.0, log(x_0))");
        assert_eq!(mse, f64::INFINITY);
    }

    #[test]
    fn residuals_write_parameters_in_preorder() {
        let x = single_column(vec![1.0, 2.0]);
        let tree = parse("add(0.0, multiply(0.0, x_0))").unwrap();
        let r = residuals(&tree, &[3.0, 2.0], &x, &[0.0, 0.0]);
        assert_eq!(r, vec![5.0, 7.0]);
    }

    #[test]
    fn jacobian_of_a_line_is_ones_and_x() {
        let x = single_column(vec![1.0, 2.0, 5.0]);
        let tree = parse("add(0.0, multiply(0.0, x_0))").unwrap();
        let j = jacobian(&tree, &[3.0, 2.0], &x);
        assert_eq!(j[0], vec![1.0, 1.0, 1.0]);
        assert_eq!(j[1], vec![1.0, 2.0, 5.0]);
    }

    /// Central finite differences with h = 1e-6 on every parameter.
    fn finite_difference(
        tree: &ExpressionTree,
        params: &[f64],
        x: &FeatureMatrix,
    ) -> Vec<Vec<f64>> {
        let h = 1e-6;
        let zeros = vec![0.0; x.n_rows()];
        (0..params.len())
            .map(|k| {
                let mut plus = params.to_vec();
                plus[k] += h;
                let mut minus = params.to_vec();
                minus[k] -= h;
                let fp = residuals(tree, &plus, x, &zeros);
                let fm = residuals(tree, &minus, x, &zeros);
                fp.iter()
                    .zip(&fm)
                    .map(|(p, m)| (p - m) / (2.0 * h))
                    .collect()
            })
            .collect()
    }

    fn assert_matches_finite_differences(src: &str, xs: Vec<f64>) {
        let tree = parse(src).unwrap();
        let x = single_column(xs);
        let params = tree.constant_values();
        let dual = jacobian(&tree, &params, &x);
        let fd = finite_difference(&tree, &params, &x);
        for (k, (dual_col, fd_col)) in dual.iter().zip(&fd).enumerate() {
            for (i, (d, f)) in dual_col.iter().zip(fd_col).enumerate() {
                let scale = 1.0_f64.max(d.abs()).max(f.abs());
                assert!(
                    (d - f).abs() / scale <= 1e-4,
                    "{src}: parameter {k}, sample {i}: dual {d} vs fd {f}"
                );
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_across_all_operators() {
        let generic = vec![-1.4, -0.6, 0.2, 0.7, 1.9];
        let cases: Vec<(&str, Vec<f64>)> = vec![
            ("add(0.3, x_0, multiply(0.7, x_0))", generic.clone()),
            ("subtract(1.2, multiply(0.5, x_0))", generic.clone()),
            ("multiply(0.8, x_0, add(x_0, 0.25))", generic.clone()),
            ("divide(1.5, add(x_0, 0.4))", vec![0.2, 0.9, 1.7, 2.5, 3.0]),
            ("absolute(add(0.3, x_0))", vec![-2.0, -1.0, 0.5, 1.5, 2.2]),
            ("acos(multiply(0.4, x_0))", vec![-0.9, -0.3, 0.1, 0.6, 0.9]),
            ("asin(multiply(0.4, x_0))", vec![-0.9, -0.3, 0.1, 0.6, 0.9]),
            ("atan(add(0.3, x_0))", generic.clone()),
            ("cos(add(0.3, x_0))", generic.clone()),
            ("sin(add(0.3, x_0))", generic.clone()),
            ("tan(multiply(0.4, x_0))", vec![-1.2, -0.5, 0.3, 0.9, 1.4]),
            ("exp(multiply(0.6, x_0))", generic.clone()),
            (
                "minimum(multiply(0.7, x_0), square(add(x_0, 0.2)))",
                generic.clone(),
            ),
            (
                "maximum(multiply(0.7, x_0), square(add(x_0, 0.2)))",
                generic.clone(),
            ),
            ("log(add(2.0, x_0))", vec![0.1, 0.8, 1.5, 2.4, 3.3]),
            ("log1p(multiply(0.5, x_0))", vec![-1.5, -0.4, 0.3, 1.1, 2.0]),
            ("exp1p(multiply(0.5, x_0))", generic.clone()),
            ("sqrtabs(add(0.3, x_0))", vec![-2.0, -1.0, 0.5, 1.5, 2.2]),
            ("square(add(0.3, x_0))", generic.clone()),
        ];
        for (src, xs) in cases {
            assert_matches_finite_differences(src, xs);
        }
    }

    #[test]
    fn accepted_steps_never_increase_the_training_error() {
        let xs: Vec<f64> = (0..25).map(|i| i as f64 * 0.2 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|v| (0.7 * v).exp() + 0.3).collect();
        let x = single_column(xs);
        for src in [
            "exp(multiply(0.1, x_0))",
            "add(1.0, multiply(1.0, x_0))",
            "multiply(0.5, sin(multiply(0.5, x_0)))",
        ] {
            let tree = parse(src).unwrap();
            let before = {
                let r = residuals(&tree, &tree.constant_values(), &x, &ys);
                sum_of_squares(&r)
            };
            let (fitted, mse) = fit_constants(&tree, &x, &ys, 20);
            let after = {
                let r = residuals(&fitted, &fitted.constant_values(), &x, &ys);
                sum_of_squares(&r)
            };
            assert!(after <= before, "{src}: {after} > {before}");
            assert_abs_diff_eq!(mse, after / 25.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let xs: Vec<f64> = (0..15).map(|i| i as f64 * 0.3 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|v| 1.5 * v * v - 0.4).collect();
        let x = single_column(xs);
        let tree = parse("add(0.2, multiply(0.3, square(x_0)))").unwrap();
        let (a, mse_a) = fit_constants(&tree, &x, &ys, 20);
        let (b, mse_b) = fit_constants(&tree, &x, &ys, 20);
        assert_eq!(a.constant_values(), b.constant_values());
        assert_eq!(mse_a.to_bits(), mse_b.to_bits());
    }
}
