//! Robust locally weighted regression and the market price curves fitted
//! with it.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::auction::{expected_first_price, expected_second_price, second_price_sd, LogNormalParams};
use crate::bidlog::AuctionOutcome;
use crate::error::{Error, Result};

pub const DEFAULT_SPAN: f64 = 0.10;
pub const DEFAULT_DEGREE: usize = 2;
pub const DEFAULT_ITERATIONS: usize = 5;

/// ψ is unreliable where the market has fewer than two bidders per impression.
pub const LOW_CONFIDENCE_XI: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub xi: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Phi,
    Psi,
    Pi,
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveValue {
    pub value: f64,
    /// The query lay outside the training range and was moved to its edge.
    pub clamped: bool,
}

/// Tricube kernel on the scaled distance `u = |Δ| / h`.
pub fn tricube(u: f64) -> f64 {
    let u = u.abs();
    if u >= 1.0 {
        0.0
    } else {
        let c = 1.0 - u * u * u;
        c * c * c
    }
}

/// Bisquare kernel on `u = e / (6 median|e|)`.
pub fn bisquare(u: f64) -> f64 {
    let u = u.abs();
    if u >= 1.0 {
        0.0
    } else {
        let c = 1.0 - u * u;
        c * c
    }
}

/// A fitted curve. Stores its training data and robustness weights and
/// performs a local fit at each query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CurveFile", try_from = "CurveFile")]
pub struct RlwrCurve {
    kind: CurveKind,
    span: f64,
    degree: usize,
    iterations: usize,
    points: Vec<CurvePoint>,
    robustness: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CurveFile {
    kind: CurveKind,
    span: f64,
    degree: usize,
    #[serde(default = "default_iterations")]
    iterations: usize,
    points: Vec<CurvePoint>,
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

impl From<RlwrCurve> for CurveFile {
    fn from(c: RlwrCurve) -> Self {
        CurveFile {
            kind: c.kind,
            span: c.span,
            degree: c.degree,
            iterations: c.iterations,
            points: c.points,
        }
    }
}

impl TryFrom<CurveFile> for RlwrCurve {
    type Error = Error;

    fn try_from(f: CurveFile) -> Result<Self> {
        rlwr_fit_with(&f.points, f.span, f.degree, f.iterations, f.kind)
    }
}

/// Fits a robust locally weighted regression with the default five
/// robustness iterations.
pub fn rlwr_fit(data: &[CurvePoint], span: f64, degree: usize) -> Result<RlwrCurve> {
    rlwr_fit_with(data, span, degree, DEFAULT_ITERATIONS, CurveKind::Generic)
}

/// As [`rlwr_fit`] with an explicit iteration count; 0 gives a plain local
/// regression.
pub fn rlwr_fit_with(
    data: &[CurvePoint],
    span: f64,
    degree: usize,
    iterations: usize,
    kind: CurveKind,
) -> Result<RlwrCurve> {
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::invalid(format!("span must be in (0, 1], got {span}")));
    }
    if data.iter().any(|p| !p.xi.is_finite() || !p.y.is_finite()) {
        return Err(Error::invalid("curve data must be finite"));
    }
    let mut points = data.to_vec();
    points.sort_by(|a, b| a.xi.total_cmp(&b.xi).then(a.y.total_cmp(&b.y)));
    let distinct = count_distinct(&points);
    if distinct < degree + 1 {
        return Err(Error::InsufficientData(format!(
            "degree {degree} fit needs {} distinct xi values, got {distinct}",
            degree + 1
        )));
    }
    let mut curve = RlwrCurve {
        kind,
        span,
        degree,
        iterations,
        robustness: vec![1.0; points.len()],
        points,
    };
    curve.update_robustness();
    Ok(curve)
}

fn count_distinct(sorted: &[CurvePoint]) -> usize {
    let mut n = 0;
    let mut last = f64::NAN;
    for p in sorted {
        if p.xi != last {
            n += 1;
            last = p.xi;
        }
    }
    n
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl RlwrCurve {
    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn robustness_weights(&self) -> &[f64] {
        &self.robustness
    }

    pub fn xi_range(&self) -> (f64, f64) {
        (self.points[0].xi, self.points[self.points.len() - 1].xi)
    }

    fn update_robustness(&mut self) {
        let max_y = self.points.iter().map(|p| p.y.abs()).fold(0.0, f64::max);
        let tol = 1e-12 * max_y.max(f64::MIN_POSITIVE);
        for _ in 0..self.iterations {
            let residuals: Vec<f64> = self.points.iter().map(|p| p.y - self.local_fit(p.xi)).collect();
            let mut abs: Vec<f64> = residuals.iter().map(|e| e.abs()).collect();
            let s = median(&mut abs);
            if s <= tol {
                // Most points are fitted exactly. Keep them and drop only
                // the ones that are not.
                if residuals.iter().all(|e| e.abs() <= tol) {
                    self.robustness.iter_mut().for_each(|r| *r = 1.0);
                    break;
                }
                for (r, e) in self.robustness.iter_mut().zip(&residuals) {
                    *r = if e.abs() <= tol { 1.0 } else { 0.0 };
                }
                continue;
            }
            for (r, e) in self.robustness.iter_mut().zip(&residuals) {
                *r = bisquare(e / (6.0 * s));
            }
        }
    }

    /// Evaluates the curve, clamping queries outside the training range.
    pub fn evaluate(&self, xi: f64) -> CurveValue {
        let (lo, hi) = self.xi_range();
        let q = xi.clamp(lo, hi);
        let clamped = q != xi;
        if clamped {
            warn!("{:?} curve queried at xi {xi} outside [{lo}, {hi}]; clamped", self.kind);
        }
        CurveValue {
            value: self.local_fit(q),
            clamped,
        }
    }

    /// Evaluates the curve without logging when the query is clamped.
    pub fn value(&self, xi: f64) -> f64 {
        let (lo, hi) = self.xi_range();
        self.local_fit(xi.clamp(lo, hi))
    }

    fn local_fit(&self, x: f64) -> f64 {
        let n = self.points.len();
        let q = ((self.span * n as f64).ceil() as usize).max(self.degree + 1).min(n);
        let mut dist: Vec<f64> = self.points.iter().map(|p| (p.xi - x).abs()).collect();
        let h = {
            let mut scratch = dist.clone();
            *scratch.select_nth_unstable_by(q - 1, f64::total_cmp).1
        };
        let mut weights = Vec::with_capacity(n);
        for (j, d) in dist.iter_mut().enumerate() {
            let w = if h > 0.0 {
                tricube(*d / h)
            } else if *d == 0.0 {
                1.0
            } else {
                0.0
            };
            weights.push(w * self.robustness[j]);
        }
        let scale = if h > 0.0 { h } else { 1.0 };
        if let Some(v) = weighted_poly_at(&self.points, &weights, x, scale, self.degree) {
            return v;
        }
        warn!("no local support at xi {x}; falling back to a global fit");
        let global: Vec<f64> = if self.robustness.iter().any(|&r| r > 0.0) {
            self.robustness.clone()
        } else {
            vec![1.0; n]
        };
        let (lo, hi) = self.xi_range();
        let spread = (hi - lo).max(1.0);
        weighted_poly_at(&self.points, &global, x, spread, self.degree).unwrap_or_else(|| {
            let total: f64 = self.points.iter().map(|p| p.y).sum();
            total / n as f64
        })
    }
}

/// Weighted least-squares polynomial in `t = (x_j - x) / scale`, returning
/// its value at `x` (the intercept). The degree is lowered until the normal
/// equations are well posed; `None` if no point has positive weight.
fn weighted_poly_at(points: &[CurvePoint], weights: &[f64], x: f64, scale: f64, degree: usize) -> Option<f64> {
    let support: Vec<(f64, f64, f64)> = points
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(p, &w)| ((p.xi - x) / scale, p.y, w))
        .collect();
    if support.is_empty() {
        return None;
    }
    let mut distinct: Vec<f64> = support.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut deg = degree.min(distinct.len() - 1);
    loop {
        let k = deg + 1;
        let mut a = vec![vec![0.0; k + 1]; k];
        for &(t, y, w) in &support {
            let mut powers = vec![1.0; 2 * k - 1];
            for i in 1..powers.len() {
                powers[i] = powers[i - 1] * t;
            }
            for r in 0..k {
                for c in 0..k {
                    a[r][c] += w * powers[r + c];
                }
                a[r][k] += w * powers[r] * y;
            }
        }
        if let Some(coef) = solve_augmented(a) {
            return Some(coef[0]);
        }
        if deg == 0 {
            return None;
        }
        deg -= 1;
    }
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_augmented(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let k = a.len();
    let scale = a.iter().flat_map(|r| r[..k].iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in rest.iter_mut() {
            let factor = row[col] / pivot_row[col];
            for (v, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *v -= factor * p;
            }
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let mut acc = a[row][k];
        for c in row + 1..k {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Fitted expected payment φ, payment standard deviation ψ and expected
/// winning bid π as functions of per-impression demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketCurves {
    pub phi: RlwrCurve,
    pub psi: RlwrCurve,
    pub pi: RlwrCurve,
    pub span: f64,
    pub degree: usize,
}

/// Per-window summary used as curve training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub xi: f64,
    pub mean_second_price: f64,
    pub mean_first_price: f64,
    pub sd_second_price: f64,
    pub auctions: usize,
}

pub fn summarize_window(outcomes: &[AuctionOutcome]) -> Option<WindowSummary> {
    if outcomes.is_empty() {
        return None;
    }
    let n = outcomes.len() as f64;
    let xi = outcomes.iter().map(|o| o.n_bidders as f64).sum::<f64>() / n;
    let second = outcomes.iter().map(|o| o.second_price).sum::<f64>() / n;
    let first = outcomes.iter().map(|o| o.first_price).sum::<f64>() / n;
    let var = outcomes.iter().map(|o| (o.second_price - second).powi(2)).sum::<f64>() / n;
    Some(WindowSummary {
        xi,
        mean_second_price: second,
        mean_first_price: first,
        sd_second_price: var.sqrt(),
        auctions: outcomes.len(),
    })
}

impl MarketCurves {
    pub fn from_summaries(summaries: &[WindowSummary], span: f64, degree: usize) -> Result<Self> {
        if summaries.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "market curves need at least 3 non-empty windows, got {}",
                summaries.len()
            )));
        }
        let mut xs: Vec<f64> = summaries.iter().map(|s| s.xi).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let degree = if xs.len() < degree + 1 {
            warn!(
                "only {} distinct xi values; lowering curve degree from {degree} to {}",
                xs.len(),
                xs.len() - 1
            );
            xs.len() - 1
        } else {
            degree
        };
        let fit = |kind: CurveKind, y: fn(&WindowSummary) -> f64| {
            let pts: Vec<CurvePoint> = summaries.iter().map(|s| CurvePoint { xi: s.xi, y: y(s) }).collect();
            rlwr_fit_with(&pts, span, degree, DEFAULT_ITERATIONS, kind)
        };
        Ok(MarketCurves {
            phi: fit(CurveKind::Phi, |s| s.mean_second_price)?,
            psi: fit(CurveKind::Psi, |s| s.sd_second_price)?,
            pi: fit(CurveKind::Pi, |s| s.mean_first_price)?,
            span,
            degree,
        })
    }

    /// Curves from the analytic log-normal order statistics on `xi_grid`.
    pub fn from_lognormal(params: &LogNormalParams, xi_grid: &[f64], span: f64, degree: usize) -> Result<Self> {
        let summaries = xi_grid
            .iter()
            .map(|&xi| {
                Ok(WindowSummary {
                    xi,
                    mean_second_price: expected_second_price(params, xi)?,
                    mean_first_price: expected_first_price(params, xi)?,
                    sd_second_price: second_price_sd(params, xi)?,
                    auctions: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MarketCurves::from_summaries(&summaries, span, degree)
    }

    pub fn phi(&self, xi: f64) -> CurveValue {
        self.phi.evaluate(xi)
    }

    pub fn pi(&self, xi: f64) -> CurveValue {
        self.pi.evaluate(xi)
    }

    pub fn psi(&self, xi: f64) -> CurveValue {
        self.psi.evaluate(xi)
    }

    /// ψ is low-confidence where the query, or the training point it is
    /// clamped to, sits below two bidders per impression.
    pub fn psi_low_confidence(&self, xi: f64) -> bool {
        let (lo, hi) = self.psi.xi_range();
        xi.min(xi.clamp(lo, hi)) < LOW_CONFIDENCE_XI
    }

    pub fn xi_range(&self) -> (f64, f64) {
        self.phi.xi_range()
    }
}

/// Fits the three market curves from auctions grouped into windows (hourly
/// per slot in the standard pipeline). Empty windows are skipped.
pub fn build_market_curves(windows: &[Vec<AuctionOutcome>], span: f64) -> Result<MarketCurves> {
    build_market_curves_with(windows, span, DEFAULT_DEGREE)
}

pub fn build_market_curves_with(windows: &[Vec<AuctionOutcome>], span: f64, degree: usize) -> Result<MarketCurves> {
    let summaries: Vec<WindowSummary> = windows.iter().filter_map(|w| summarize_window(w)).collect();
    MarketCurves::from_summaries(&summaries, span, degree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(f: impl Fn(f64) -> f64, xs: impl Iterator<Item = f64>) -> Vec<CurvePoint> {
        xs.map(|x| CurvePoint { xi: x, y: f(x) }).collect()
    }

    #[test]
    fn kernel_endpoints() {
        assert_eq!(tricube(0.0), 1.0);
        assert_eq!(tricube(1.0), 0.0);
        assert_eq!(bisquare(0.0), 1.0);
        assert_eq!(bisquare(1.0), 0.0);
        assert!((tricube(0.5) - (1.0f64 - 0.125).powi(3)).abs() < 1e-15);
    }

    #[test]
    fn line_is_reproduced() {
        let data = pts(|x| x, (1..=10).map(f64::from));
        let c = rlwr_fit(&data, 0.5, 2).unwrap();
        assert!((c.value(3.0) - 3.0).abs() < 1e-9);
        assert!((c.value(4.5) - 4.5).abs() < 1e-9);
    }

    #[test]
    fn outlier_is_downweighted() {
        let mut data = pts(|x| x, (1..=10).map(f64::from));
        data[2].y = 100.0;
        let robust = rlwr_fit_with(&data, 0.5, 2, 5, CurveKind::Generic).unwrap();
        let plain = rlwr_fit_with(&data, 0.5, 2, 0, CurveKind::Generic).unwrap();
        let e_r = (robust.value(3.0) - 3.0).abs();
        let e_p = (plain.value(3.0) - 3.0).abs();
        assert!(e_r < e_p, "robust {e_r} plain {e_p}");
    }

    #[test]
    fn queries_are_clamped() {
        let c = rlwr_fit(&pts(|x| 2.0 * x, (1..=5).map(f64::from)), 1.0, 1).unwrap();
        let v = c.evaluate(10.0);
        assert!(v.clamped);
        assert!((v.value - 10.0).abs() < 1e-9);
        assert!(!c.evaluate(3.0).clamped);
    }

    #[test]
    fn too_few_distinct_points() {
        let data = vec![CurvePoint { xi: 1.0, y: 1.0 }, CurvePoint { xi: 1.0, y: 2.0 }];
        assert!(matches!(rlwr_fit(&data, 1.0, 2), Err(Error::InsufficientData(_))));
        assert!(rlwr_fit(&data, 0.0, 0).is_err());
    }

    #[test]
    fn isolated_query_uses_global_fit() {
        // Both neighbours sit exactly at distance h, so every local weight
        // is zero.
        let data = pts(|x| 1.0 + x, [0.0, 2.0, 10.0, 12.0].into_iter());
        let c = rlwr_fit(&data, 0.5, 1).unwrap();
        assert!((c.value(1.0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip_refits() {
        let c = rlwr_fit(&pts(|x| x * x, (1..=12).map(f64::from)), 0.4, 2).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.starts_with("{\"kind\":\"generic\",\"span\":0.4,\"degree\":2"));
        let back: RlwrCurve = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    fn outcome(n: usize, first: f64, second: f64) -> AuctionOutcome {
        AuctionOutcome {
            impression_id: "i".into(),
            slot_id: "s".into(),
            timestamp: 0,
            winner_id: "w".into(),
            first_price: first,
            second_price: second,
            n_bidders: n,
        }
    }

    #[test]
    fn degenerate_market_curves() {
        let windows: Vec<Vec<AuctionOutcome>> = (2..8)
            .map(|k| (0..5).map(|i| outcome(k + i % 2, 1.0, 1.0)).collect())
            .chain(std::iter::once(Vec::new()))
            .collect();
        let curves = build_market_curves(&windows, 0.5).unwrap();
        for xi in [2.0, 3.3, 5.0, 7.4] {
            assert!((curves.phi(xi).value - 1.0).abs() < 1e-9);
            assert!(curves.psi(xi).value.abs() < 1e-9);
            assert!((curves.pi(xi).value - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_windows() {
        let windows = vec![vec![outcome(2, 1.0, 1.0)], vec![], vec![outcome(3, 1.0, 1.0)]];
        assert!(matches!(build_market_curves(&windows, 0.1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn lognormal_curves_track_analytic_values() {
        let p = LogNormalParams::new(0.0, 0.5).unwrap();
        let grid: Vec<f64> = (0..=32).map(|i| 2.0 + 0.25 * i as f64).collect();
        let curves = MarketCurves::from_lognormal(&p, &grid, 0.1, 2).unwrap();
        for xi in [2.0, 3.0, 5.0, 9.9] {
            let exact = expected_second_price(&p, xi).unwrap();
            assert!((curves.phi(xi).value - exact).abs() < 1e-3 * exact);
            assert!(curves.pi(xi).value >= curves.phi(xi).value);
        }
        assert!(!curves.psi_low_confidence(2.0));
        assert!(curves.psi_low_confidence(1.5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn quadratics_are_exact(
            a in -5.0f64..5.0, b in -3.0f64..3.0, c in -1.0f64..1.0,
            span in 0.2f64..1.0, q in 0.0f64..1.0,
        ) {
            let data = pts(|x| a + b * x + c * x * x, (0..25).map(|i| 1.0 + 0.37 * i as f64));
            let curve = rlwr_fit(&data, span, 2).unwrap();
            let x = 1.0 + 0.37 * 24.0 * q;
            let exact = a + b * x + c * x * x;
            prop_assert!((curve.value(x) - exact).abs() <= 1e-9 * exact.abs().max(1.0));
        }

        #[test]
        fn scaling_responses_scales_fit(scale in 0.01f64..100.0, seed in 0u64..50) {
            let data: Vec<CurvePoint> = (0..30)
                .map(|i| {
                    let x = i as f64 * 0.3;
                    let wiggle = ((i as u64 * 2654435761 + seed) % 97) as f64 / 97.0;
                    CurvePoint { xi: x, y: x.sin() + wiggle }
                })
                .collect();
            let scaled: Vec<CurvePoint> = data.iter().map(|p| CurvePoint { xi: p.xi, y: scale * p.y }).collect();
            let c1 = rlwr_fit(&data, 0.3, 2).unwrap();
            let c2 = rlwr_fit(&scaled, 0.3, 2).unwrap();
            for x in [0.5, 2.0, 4.4, 8.0] {
                let (v1, v2) = (c1.value(x), c2.value(x));
                prop_assert!((v2 - scale * v1).abs() <= 1e-7 * (scale * v1).abs().max(1e-6));
            }
        }
    }
}
