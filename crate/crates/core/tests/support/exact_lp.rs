//! Exact optimum of the per-slot fractional master in rational arithmetic.
//!
//! The LP picks a convex mix of points per class under one budget row:
//! `min sum r_ij x_ij  s.t.  sum_j x_ij = 1,  sum c_ij x_ij <= B,  x >= 0`.
//! Its Lagrangian dual `g(l) = sum_i min_j (r_ij + l c_ij) - l B` is concave
//! and piecewise linear with kinks only where two points of one class tie,
//! so the dual optimum sits at `l = 0` or at one of those ties. Strong
//! duality makes that maximum the primal optimum.

#![allow(dead_code)]

use num_rational::BigRational;
use num_traits::{Signed, Zero};

pub type Q = BigRational;

pub fn q(x: f64) -> Q {
    BigRational::from_float(x).expect("finite")
}

/// `points[i]` lists `(cost, risk)` of class `i`. `None` when even the
/// cheapest points overrun the budget.
pub fn lp_optimum(points: &[Vec<(f64, f64)>], budget: f64) -> Option<Q> {
    let pts: Vec<Vec<(Q, Q)>> = points
        .iter()
        .map(|c| c.iter().map(|&(a, b)| (q(a), q(b))).collect())
        .collect();
    let b = q(budget);
    let base: Q = pts
        .iter()
        .map(|c| c.iter().map(|p| p.0.clone()).min().expect("non-empty class"))
        .fold(Q::zero(), |s, x| s + x);
    if base > b {
        return None;
    }
    let mut lambdas = vec![Q::zero()];
    for c in &pts {
        for (k, a) in c.iter().enumerate() {
            for bb in &c[k + 1..] {
                let dc = &bb.0 - &a.0;
                if dc.is_zero() {
                    continue;
                }
                let l = (&a.1 - &bb.1) / dc;
                if l.is_positive() {
                    lambdas.push(l);
                }
            }
        }
    }
    let g = |l: &Q| -> Q {
        let inner = pts
            .iter()
            .map(|c| c.iter().map(|(cost, risk)| risk + l * cost).min().expect("non-empty"))
            .fold(Q::zero(), |s, x| s + x);
        inner - l * &b
    };
    lambdas.iter().map(g).max()
}

pub fn to_f64(x: &Q) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().expect("representable")
}
