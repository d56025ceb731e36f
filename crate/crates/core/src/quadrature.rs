//! One-dimensional numerical integration.
//!
//! Two integrators are provided: a globally adaptive Gauss-Kronrod (7/15)
//! rule used for the smooth auction and revenue integrals, and an adaptive
//! Simpson rule used for integrating demand along a price schedule.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub relative: f64,
    pub absolute: f64,
    pub max_subdivisions: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            relative: 1e-6,
            absolute: 1e-12,
            max_subdivisions: 2000,
        }
    }
}

impl Tolerance {
    pub fn relative(relative: f64) -> Self {
        Tolerance {
            relative,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5 and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

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

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]` with globally adaptive Gauss-Kronrod
/// bisection until the summed error estimate meets `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid(format!("integration bounds must be finite: [{a}, {b}]")));
    }
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };

    let first = kronrod15(&f, lo, hi);
    let mut value = first.value;
    let mut error = first.error;
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(first);

    let mut subdivisions = 0;
    loop {
        if !value.is_finite() {
            return Err(Error::Domain(format!(
                "integrand produced a non-finite value on [{lo}, {hi}]"
            )));
        }
        if error <= tol.absolute.max(tol.relative * value.abs()) {
            break;
        }
        if subdivisions >= tol.max_subdivisions {
            return Err(Error::Quadrature {
                estimate: sign * value,
                achieved_error: error,
                subdivisions,
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            heap.push(worst);
            return Err(Error::Quadrature {
                estimate: sign * value,
                achieved_error: error,
                subdivisions,
            });
        }
        let left = kronrod15(&f, worst.a, mid);
        let right = kronrod15(&f, mid, worst.b);
        evaluations += 30;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        subdivisions += 1;

        // Re-sum periodically to stop drift from the incremental updates.
        if subdivisions % 64 == 0 {
            value = heap.iter().map(|s| s.value).sum();
            error = heap.iter().map(|s| s.error).sum();
        }
    }
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let error: f64 = heap.iter().map(|s| s.error).sum();
    Ok(Estimate {
        value: sign * value,
        error,
        evaluations,
    })
}

/// Adaptive Simpson integration over the consecutive breakpoints in
/// `knots`. Each panel is refined recursively until the Richardson error
/// estimate meets its share of the tolerance.
pub fn simpson_adaptive<F: Fn(f64) -> f64>(f: F, knots: &[f64], tol: Tolerance) -> Result<Estimate> {
    if knots.len() < 2 {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let span = knots[knots.len() - 1] - knots[0];
    if span <= 0.0 {
        return Err(Error::invalid("simpson knots must be increasing"));
    }

    // A coarse first pass fixes the absolute target from the relative one.
    let mut coarse = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        coarse += (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
    }
    let target = tol.absolute.max(tol.relative * coarse.abs());

    let mut state = SimpsonState {
        evaluations: 0,
        error: 0.0,
        exhausted: false,
    };
    let mut value = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            return Err(Error::invalid("simpson knots must be increasing"));
        }
        let fa = f(a);
        let fm = f(0.5 * (a + b));
        let fb = f(b);
        state.evaluations += 3;
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        let panel_tol = target * (b - a) / span;
        value += simpson_step(&f, a, b, fa, fm, fb, whole, panel_tol, 48, &mut state);
    }
    if state.exhausted && state.error > target {
        return Err(Error::Quadrature {
            estimate: value,
            achieved_error: state.error,
            subdivisions: state.evaluations / 2,
        });
    }
    Ok(Estimate {
        value,
        error: state.error,
        evaluations: state.evaluations,
    })
}

struct SimpsonState {
    evaluations: usize,
    error: f64,
    exhausted: bool,
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    state: &mut SimpsonState,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    state.evaluations += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        state.error += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        state.exhausted = true;
        state.error += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, state)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, state)
}
