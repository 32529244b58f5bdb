//! Weights g = e^φ on branches and summability reports.

use std::fmt;
use std::sync::Arc;

use evalexpr::{build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::phase::{Branch, FiberMap, Tail};

/// Samples per branch when estimating sup, inf and variation of g.
const BRANCH_SAMPLES: usize = 65;

#[derive(Clone)]
pub enum Potential {
    /// g = 1/|T'|.
    Geometric,
    /// One constant per branch; a single value is broadcast to all branches.
    ConstantPerBranch(Vec<f64>),
    /// Expression in `x` (point) and `k` (1-based branch index).
    Expr { source: String, tree: Arc<Node<DefaultNumericTypes>> },
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Geometric => write!(f, "Geometric"),
            Potential::ConstantPerBranch(v) => write!(f, "ConstantPerBranch({v:?})"),
            Potential::Expr { source, .. } => write!(f, "Expr({source})"),
        }
    }
}

impl Potential {
    pub fn expr(source: &str) -> Result<Self> {
        let tree = build_operator_tree::<DefaultNumericTypes>(source)
            .map_err(|e| Error::invalid(format!("potential expression `{source}`: {e}")))?;
        Ok(Potential::Expr { source: source.to_string(), tree: Arc::new(tree) })
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self, Potential::Geometric)
    }

    /// g on branch `index` at x.
    pub fn weight(&self, index: usize, branch: &Branch, x: f64) -> Result<f64> {
        match self {
            Potential::Geometric => Ok(1.0 / branch.derivative(x).abs()),
            Potential::ConstantPerBranch(v) => match v.len() {
                1 => Ok(v[0]),
                _ => v.get(index).copied().ok_or_else(|| {
                    Error::invalid(format!("constant-per-branch potential has no value for branch {}", index + 1))
                }),
            },
            Potential::Expr { source, tree } => {
                let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
                let bad = |e: evalexpr::EvalexprError<DefaultNumericTypes>| {
                    Error::invalid(format!("potential expression `{source}`: {e}"))
                };
                ctx.set_value("x".into(), Value::Float(x)).map_err(bad)?;
                ctx.set_value("k".into(), Value::Float(index as f64 + 1.0)).map_err(bad)?;
                tree.eval_number_with_context(&ctx).map_err(bad)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchWeight {
    pub sup: f64,
    pub inf: f64,
    pub variation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SummabilityReport {
    pub fiber: usize,
    /// Σ over retained branches of sup g.
    pub s1: f64,
    /// Bound on the weight mass of dropped branches.
    pub tail_bound: f64,
    pub branches: Vec<BranchWeight>,
}

/// Sampled sup/inf/variation of g per branch plus the tail bound of the truncation.
pub fn summability_report(potential: &Potential, map: &FiberMap, fiber: usize) -> Result<SummabilityReport> {
    let mut branches = Vec::with_capacity(map.branches.len());
    for (i, b) in map.branches.iter().enumerate() {
        let mut vals = Vec::with_capacity(BRANCH_SAMPLES);
        for s in 0..BRANCH_SAMPLES {
            let x = b.lo + (b.hi - b.lo) * s as f64 / (BRANCH_SAMPLES - 1) as f64;
            vals.push(potential.weight(i, b, x)?);
        }
        let sup = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let inf = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if !(inf > 0.0 && sup.is_finite()) {
            return Err(Error::NotSummable {
                fiber,
                msg: format!("weight on branch {} has inf {inf} and sup {sup}", i + 1),
            });
        }
        let variation = vals.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        branches.push(BranchWeight { sup, inf, variation });
    }
    let s1: f64 = branches.iter().map(|b| b.sup).sum();
    let tail_bound = match map.tail {
        Tail::None => 0.0,
        Tail::Gauss { .. } if potential.is_geometric() => map.tail_bound,
        Tail::Gauss { .. } => {
            // No closed form: accept only if the last quarter of the partial sums is negligible.
            let n = branches.len();
            let last: f64 = branches[n - n.div_ceil(4)..].iter().map(|b| b.sup).sum();
            if last > 1e-3 * s1 {
                return Err(Error::NotSummable {
                    fiber,
                    msg: format!("partial sums are not Cauchy at K_max = {n} (last quarter {last:e})"),
                });
            }
            last
        }
    };
    Ok(SummabilityReport { fiber, s1, tail_bound, branches })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_and_tripling_sums() {
        let r = summability_report(&Potential::Geometric, &FiberMap::doubling(), 0).unwrap();
        assert!((r.s1 - 1.0).abs() < 1e-15 && r.tail_bound == 0.0);
        let r = summability_report(&Potential::ConstantPerBranch(vec![1.0 / 3.0]), &FiberMap::tripling(), 0).unwrap();
        assert!((r.s1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gauss_sum_and_tail() {
        let r = summability_report(&Potential::Geometric, &FiberMap::gauss(64, false).unwrap(), 0).unwrap();
        let direct: f64 = (1..=64).map(|k| 1.0 / (k as f64).powi(2)).sum();
        assert!((r.s1 - direct).abs() < 1e-12);
        assert!((r.s1 - 1.6294).abs() < 1e-4);
        assert!((r.tail_bound - 1.0 / 64.0).abs() < 1e-15);
        let true_tail: f64 = (65..200_000).map(|k| 1.0 / (k as f64).powi(2)).sum();
        assert!(true_tail <= r.tail_bound);
    }

    #[test]
    fn expression_potential() {
        let p = Potential::expr("0.5 * x + 0.25").unwrap();
        let m = FiberMap::doubling();
        assert!((p.weight(0, &m.branches[0], 0.5).unwrap() - 0.5).abs() < 1e-15);
        let p = Potential::expr("1 / (k * k)").unwrap();
        assert!((p.weight(1, &m.branches[1], 0.7).unwrap() - 0.25).abs() < 1e-15);
        assert!(Potential::expr("x + (2").is_err());
    }

    #[test]
    fn rejects_nonpositive_and_nonsummable() {
        let m = FiberMap::doubling();
        let p = Potential::expr("x - 0.25").unwrap();
        assert!(matches!(summability_report(&p, &m, 0), Err(Error::NotSummable { .. })));
        let g = FiberMap::gauss(16, false).unwrap();
        let p = Potential::ConstantPerBranch(vec![0.1]);
        assert!(matches!(summability_report(&p, &g, 0), Err(Error::NotSummable { .. })));
        let p = Potential::expr("1 / (k * k * k * k * k * k)").unwrap();
        assert!(summability_report(&p, &g, 0).is_ok());
    }
}
