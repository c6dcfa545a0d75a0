//! Globally adaptive Gauss–Legendre quadrature, with the change of variables
//! used to integrate algebraically decaying densities over infinite ranges.
//!
//! Each subinterval carries the 15-point rule applied to its two halves; the
//! difference with the rule on the whole interval is the local error
//! estimate. The interval with the largest estimate is bisected until the sum
//! of estimates falls below the requested tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

const ORDER: usize = 15;
const MAX_INTERVALS: usize = 20_000;

fn gauss_legendre() -> &'static ([f64; ORDER], [f64; ORDER]) {
    static RULE: OnceLock<([f64; ORDER], [f64; ORDER])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = ORDER;
        let mut nodes = [0.0; ORDER];
        let mut weights = [0.0; ORDER];
        for i in 0..n {
            // Newton iteration from the Chebyshev-like initial guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

fn rule<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        sum += w * f(c + h * x);
    }
    sum * h
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl Piece {
    fn new<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Self {
        let m = 0.5 * (a + b);
        let whole = rule(f, a, b);
        let value = rule(f, a, m) + rule(f, m, b);
        Piece { a, b, value, error: (whole - value).abs() }
    }
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Integrates `f` over the finite interval `[a, b]`.
///
/// Stops when the summed error estimate is below `max(abs_tol, rel_tol·|I|)`
/// or the interval budget is exhausted; the returned `error` tells which.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Integral {
    if a == b {
        return Integral { value: 0.0, error: 0.0, intervals: 0 };
    }
    if a > b {
        let r = integrate(f, b, a, abs_tol, rel_tol);
        return Integral { value: -r.value, ..r };
    }
    let first = Piece::new(&f, a, b);
    let (mut value, mut error) = (first.value, first.error);
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut count = 1;
    loop {
        if error <= abs_tol.max(rel_tol * value.abs()) || count >= MAX_INTERVALS {
            // running sums drift; report the exact totals
            let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
            return Integral { value, error, intervals: count };
        }
        let worst = heap.pop().expect("heap is never empty");
        if worst.error == 0.0 {
            heap.push(worst);
            let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
            return Integral { value, error, intervals: count };
        }
        let m = 0.5 * (worst.a + worst.b);
        value -= worst.value;
        error -= worst.error;
        if m <= worst.a || m >= worst.b {
            // cannot split further at double precision
            value += worst.value;
            heap.push(Piece { error: 0.0, ..worst });
            continue;
        }
        let left = Piece::new(&f, worst.a, m);
        let right = Piece::new(&f, m, worst.b);
        value += left.value + right.value;
        error += left.error + right.error;
        heap.push(left);
        heap.push(right);
        count += 1;
    }
}

/// Integrates over `[a, b] ⊆ ℝ` (ends may be infinite) through `v = tan(u)`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Integral {
    let ua = if a == f64::NEG_INFINITY { -FRAC_PI_2 } else { a.atan() };
    let ub = if b == f64::INFINITY { FRAC_PI_2 } else { b.atan() };
    integrate(
        |u| {
            let c = u.cos();
            let v = u.tan();
            let y = f(v);
            if y == 0.0 {
                0.0
            } else {
                y / (c * c)
            }
        },
        ua,
        ub,
        abs_tol,
        rel_tol,
    )
}

/// Integrates over `[a, b] ⊆ [0, ∞]` through `v = x/(1 - x)`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Integral {
    let to_x = |v: f64| if v == f64::INFINITY { 1.0 } else { v / (1.0 + v) };
    integrate(
        |x| {
            let one_minus = 1.0 - x;
            let y = f(x / one_minus);
            if y == 0.0 {
                0.0
            } else {
                y / (one_minus * one_minus)
            }
        },
        to_x(a.max(0.0)),
        to_x(b),
        abs_tol,
        rel_tol,
    )
}
