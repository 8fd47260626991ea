//! Globally adaptive Gauss-Kronrod quadrature over finite intervals.
//!
//! 15-point Kronrod rule with the embedded 7-point Gauss rule for error
//! estimation; the segment with the worst error is bisected until the summed
//! error estimate meets the relative tolerance. Known discontinuities are
//! passed in as breakpoints so they always land on segment boundaries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// Kronrod abscissae (positive half) and weights, with the embedded Gauss
// weights on the odd-index nodes.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

const MAX_SEGMENTS: usize = 4096;

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod_panel<F>(f: &F, a: f64, b: f64) -> Result<Segment>
where
    F: Fn(f64) -> Result<f64>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let f_center = f(center)?;
    let mut kronrod = WGK[7] * f_center;
    let mut gauss = WG[3] * f_center;
    for i in 0..7 {
        let dx = half * XGK[i];
        let f_lo = f(center - dx)?;
        let f_hi = f(center + dx)?;
        kronrod += WGK[i] * (f_lo + f_hi);
        if i % 2 == 1 {
            gauss += WG[i / 2] * (f_lo + f_hi);
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Ok(Segment { a, b, value, error })
}

/// Integrates `f` over [a, b] to the requested relative tolerance.
pub(crate) fn integrate<F>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    integrate_split(f, a, b, &[], rel_tol)
}

/// `integrate` with interior breakpoints that seed the initial segmentation.
/// Breakpoints outside (a, b) are ignored.
pub(crate) fn integrate_split<F>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    rel_tol: f64,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Numeric(format!(
            "quadrature bounds must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return Err(Error::Numeric(format!(
            "quadrature bounds out of order: [{a}, {b}]"
        )));
    }

    let mut edges: Vec<f64> = vec![a];
    for &p in breakpoints {
        if p > a && p < b {
            edges.push(p);
        }
    }
    edges.push(b);
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_error = 0.0;
    for pair in edges.windows(2) {
        let seg = kronrod_panel(&f, pair[0], pair[1])?;
        total += seg.value;
        total_error += seg.error;
        heap.push(seg);
    }

    while total_error > rel_tol * total.abs() && total_error > 1e-300 {
        if heap.len() >= MAX_SEGMENTS {
            return Err(Error::Numeric(format!(
                "quadrature failed to converge over [{a}, {b}]: \
                 {} segments leave error {total_error:.3e} on value {total:.6e}",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval is at f64 resolution; accept its estimate as final.
            total_error -= worst.error;
            heap.push(Segment { error: 0.0, ..worst });
            continue;
        }
        let left = kronrod_panel(&f, worst.a, mid)?;
        let right = kronrod_panel(&f, mid, worst.b)?;
        total += left.value + right.value - worst.value;
        total_error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    Ok(total)
}
