//! Log-normal bid model: expected order-statistic prices, a Monte-Carlo
//! oracle and goodness-of-fit tests for observed bids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};

/// Significance level shared by both distribution tests.
pub const SIGNIFICANCE: f64 = 0.05;

/// Minimum sample size for the distribution tests.
pub const MIN_TEST_SAMPLE: usize = 30;

const MC_CHUNK: usize = 1 << 16;

// Standardised log-bid range covered by the price integrals. The upper end
// is x = exp(mu + 8 sigma); below z = -12 the normal density is under 1e-32.
const Z_LOW: f64 = -12.0;
const Z_HIGH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        let p = LogNormalParams { mu, sigma };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::invalid(format!(
                "log-normal parameters must be finite with sigma >= 0 (mu {}, sigma {})",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }

    /// Maximum-likelihood fit: mean and population SD of the log sample.
    pub fn fit(sample: &[f64]) -> Result<Self> {
        if sample.len() < 2 {
            return Err(Error::InsufficientData("need at least 2 values to fit a log-normal".into()));
        }
        let logs = log_sample(sample)?;
        let (mean, var) = mean_var(&logs);
        LogNormalParams::new(mean, var.sqrt())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if self.sigma == 0.0 {
            return if x >= self.mu.exp() { 1.0 } else { 0.0 };
        }
        std_normal_cdf((x.ln() - self.mu) / self.sigma)
    }

    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn price_tolerance() -> Tolerance {
    Tolerance {
        relative: 1e-8,
        absolute: 1e-14,
        max_subdivisions: 4000,
    }
}

/// `E[X^power]` for the second-highest of `xi` i.i.d. log-normal bids, with
/// `xi` treated as a real number. Integrated in the standardised log
/// variable `z`, where `x = exp(mu + sigma z)` and `g(x) dx = pdf(z) dz`.
fn second_price_moment(params: &LogNormalParams, xi: f64, power: i32) -> Result<f64> {
    params.validate()?;
    if !(xi >= 2.0) || !xi.is_finite() {
        return Err(Error::Domain(format!("per-impression demand must be >= 2, got {xi}")));
    }
    if params.sigma == 0.0 {
        return Ok((power as f64 * params.mu).exp());
    }
    let LogNormalParams { mu, sigma } = *params;
    let weight = xi * (xi - 1.0);
    let f = |z: f64| {
        let x_pow = (power as f64 * (mu + sigma * z)).exp();
        let below = std_normal_cdf(z);
        let tail = if xi == 2.0 { 1.0 } else { below.powf(xi - 2.0) };
        x_pow * weight * std_normal_pdf(z) * std_normal_sf(z) * tail
    };
    Ok(integrate(f, Z_LOW, Z_HIGH, price_tolerance())?.value)
}

/// Expected payment of a second-price auction with `xi` log-normal bidders.
pub fn expected_second_price(params: &LogNormalParams, xi: f64) -> Result<f64> {
    second_price_moment(params, xi, 1)
}

/// Standard deviation of the payment of a second-price auction.
pub fn second_price_sd(params: &LogNormalParams, xi: f64) -> Result<f64> {
    if params.sigma == 0.0 {
        params.validate()?;
        if !(xi >= 2.0) {
            return Err(Error::Domain(format!("per-impression demand must be >= 2, got {xi}")));
        }
        return Ok(0.0);
    }
    let m1 = second_price_moment(params, xi, 1)?;
    let m2 = second_price_moment(params, xi, 2)?;
    Ok((m2 - m1 * m1).max(0.0).sqrt())
}

/// Expected highest of `xi` log-normal bids (the winning bid).
pub fn expected_first_price(params: &LogNormalParams, xi: f64) -> Result<f64> {
    params.validate()?;
    if !(xi >= 1.0) || !xi.is_finite() {
        return Err(Error::Domain(format!("bidder count must be >= 1, got {xi}")));
    }
    if params.sigma == 0.0 {
        return Ok(params.mu.exp());
    }
    let LogNormalParams { mu, sigma } = *params;
    let f = |z: f64| {
        let below = std_normal_cdf(z);
        let tail = if xi == 1.0 { 1.0 } else { below.powf(xi - 1.0) };
        (mu + sigma * z).exp() * xi * std_normal_pdf(z) * tail
    };
    Ok(integrate(f, Z_LOW, Z_HIGH, price_tolerance())?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOrderStats {
    pub second: McEstimate,
    pub first: McEstimate,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self
    }

    fn estimate(&self) -> McEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        McEstimate {
            mean,
            std_error: (var / n).sqrt(),
            draws: self.n,
        }
    }
}

/// Simulates `draws` auctions of `n_bidders` log-normal bids and returns the
/// mean second-highest and highest bids with standard errors. Work is split
/// into fixed chunks, each with its own ChaCha stream, so the estimate is
/// identical however many threads run it.
pub fn mc_order_stats(params: &LogNormalParams, n_bidders: usize, draws: u64, seed: u64) -> Result<McOrderStats> {
    params.validate()?;
    if n_bidders < 2 {
        return Err(Error::invalid(format!("need at least 2 bidders, got {n_bidders}")));
    }
    if draws == 0 {
        return Err(Error::invalid("draws must be positive"));
    }
    let chunks = draws.div_ceil(MC_CHUNK as u64);
    let LogNormalParams { mu, sigma } = *params;
    let partial: Vec<(Moments, Moments)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let n = (draws - c * MC_CHUNK as u64).min(MC_CHUNK as u64);
            let (mut second, mut first) = (Moments::default(), Moments::default());
            for _ in 0..n {
                let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for _ in 0..n_bidders {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if z > hi {
                        lo = hi;
                        hi = z;
                    } else if z > lo {
                        lo = z;
                    }
                }
                // The transform is monotone, so order on z and map once.
                second.push((mu + sigma * lo).exp());
                first.push((mu + sigma * hi).exp());
            }
            (second, first)
        })
        .collect();
    let (second, first) = partial
        .into_iter()
        .fold((Moments::default(), Moments::default()), |(s, f), (s2, f2)| (s.merge(s2), f.merge(f2)));
    Ok(McOrderStats {
        second: second.estimate(),
        first: first.estimate(),
    })
}

pub fn mc_second_price_stats(params: &LogNormalParams, n_bidders: usize, draws: u64, seed: u64) -> Result<McEstimate> {
    Ok(mc_order_stats(params, n_bidders, draws, seed)?.second)
}

pub fn mc_second_price(params: &LogNormalParams, n_bidders: usize, draws: u64, seed: u64) -> Result<f64> {
    Ok(mc_second_price_stats(params, n_bidders, draws, seed)?.mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestName {
    #[serde(rename = "KS")]
    KolmogorovSmirnov,
    #[serde(rename = "JB")]
    JarqueBera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistTestReport {
    pub test_name: TestName,
    pub statistic: f64,
    pub p_value: f64,
    pub passed: bool,
    pub n: usize,
}

impl DistTestReport {
    fn new(test_name: TestName, statistic: f64, p_value: f64, n: usize) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        DistTestReport {
            test_name,
            statistic,
            p_value,
            passed: p_value > SIGNIFICANCE,
            n,
        }
    }
}

fn log_sample(sample: &[f64]) -> Result<Vec<f64>> {
    sample
        .iter()
        .map(|&x| {
            if x > 0.0 && x.is_finite() {
                Ok(x.ln())
            } else {
                Err(Error::Domain(format!("log-normal tests need positive values, got {x}")))
            }
        })
        .collect()
}

fn check_size(sample: &[f64]) -> Result<()> {
    if sample.len() < MIN_TEST_SAMPLE {
        return Err(Error::InsufficientData(format!(
            "distribution tests need at least {MIN_TEST_SAMPLE} values, got {}",
            sample.len()
        )));
    }
    Ok(())
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Survival function of the asymptotic Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Small-argument theta-function form of the CDF converges fast here.
        let a = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * a).exp()
            })
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let sf: f64 = (1..=100)
            .map(|k| {
                let k = k as f64;
                let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum::<f64>()
            * 2.0;
        sf.clamp(0.0, 1.0)
    }
}

/// One-sample Kolmogorov-Smirnov test of `sample` against `LN(params)`.
pub fn ks_test(sample: &[f64], params: &LogNormalParams) -> Result<DistTestReport> {
    check_size(sample)?;
    params.validate()?;
    log_sample(sample)?;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = params.cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let p = kolmogorov_sf(n.sqrt() * d);
    Ok(DistTestReport::new(TestName::KolmogorovSmirnov, d, p, sorted.len()))
}

/// Jarque-Bera normality test applied to the log of `sample`.
pub fn jb_test(sample: &[f64]) -> Result<DistTestReport> {
    check_size(sample)?;
    let logs = log_sample(sample)?;
    let (mean, m2) = mean_var(&logs);
    if m2 <= 1e-20 * mean.abs().max(1.0).powi(2) {
        return Err(Error::Domain("constant sample: skewness and kurtosis are undefined".into()));
    }
    let n = logs.len() as f64;
    let m3 = logs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = logs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let jb = n / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
    // Chi-squared with two degrees of freedom has survival exp(-x/2).
    Ok(DistTestReport::new(TestName::JarqueBera, jb, (-jb / 2.0).exp(), logs.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Exp, LogNormal};

    fn ln(mu: f64, sigma: f64) -> LogNormalParams {
        LogNormalParams::new(mu, sigma).unwrap()
    }

    #[test]
    fn degenerate_distribution_pays_exp_mu() {
        assert_eq!(expected_second_price(&ln(0.0, 0.0), 2.0).unwrap(), 1.0);
        assert_eq!(expected_second_price(&ln(0.7, 0.0), 9.5).unwrap(), 0.7f64.exp());
        assert_eq!(second_price_sd(&ln(0.0, 0.0), 3.0).unwrap(), 0.0);
        assert_eq!(mc_second_price(&ln(0.0, 0.0), 7, 100, 1).unwrap(), 1.0);
    }

    #[test]
    fn two_bidders_known_value() {
        let phi = expected_second_price(&ln(0.0, 0.5), 2.0).unwrap();
        assert!((phi - 0.82).abs() < 0.005, "{phi}");
        // E[min of two] = 2 E[X] - E[max]; E[max] via the first-price integral.
        let max = expected_first_price(&ln(0.0, 0.5), 2.0).unwrap();
        assert!((phi - (2.0 * ln(0.0, 0.5).mean() - max)).abs() < 1e-8);
    }

    #[test]
    fn single_bidder_first_price_is_mean() {
        let p = ln(0.3, 0.8);
        assert!((expected_first_price(&p, 1.0).unwrap() - p.mean()).abs() < 1e-8);
    }

    #[test]
    fn domain_guard() {
        assert!(matches!(expected_second_price(&ln(0.0, 0.5), 1.5), Err(Error::Domain(_))));
        assert!(LogNormalParams::new(0.0, -1.0).is_err());
    }

    #[test]
    fn competition_raises_payment() {
        let p = ln(0.0, 0.5);
        let xs = [2.0, 2.5, 3.0, 5.0, 7.5, 10.0, 20.0, 30.0];
        let phis: Vec<f64> = xs.iter().map(|&x| expected_second_price(&p, x).unwrap()).collect();
        assert!(phis.windows(2).all(|w| w[1] > w[0]), "{phis:?}");
    }

    #[test]
    fn mc_is_deterministic_and_close() {
        let p = ln(0.0, 0.5);
        let a = mc_second_price_stats(&p, 5, 200_000, 9).unwrap();
        let b = mc_second_price_stats(&p, 5, 200_000, 9).unwrap();
        assert_eq!(a, b);
        let exact = expected_second_price(&p, 5.0).unwrap();
        assert!((a.mean - exact).abs() < 4.0 * a.std_error);
    }

    #[test]
    fn kolmogorov_sf_known_points() {
        // Critical value at 5% is about 1.358.
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-3);
        // Both branches agree where they meet.
        assert!((kolmogorov_sf(1.1799) - kolmogorov_sf(1.1801)).abs() < 5e-4);
    }

    fn draws<D: Distribution<f64>>(d: D, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn tests_accept_lognormal_and_reject_exponential() {
        let good = draws(LogNormal::new(0.0, 1.0).unwrap(), 1000, 4);
        assert!(ks_test(&good, &ln(0.0, 1.0)).unwrap().p_value > 0.01);
        assert!(jb_test(&good).unwrap().p_value > 0.01);

        let bad = draws(Exp::new(1.0).unwrap(), 1000, 4);
        let fitted = LogNormalParams::fit(&bad).unwrap();
        let ks = ks_test(&bad, &fitted).unwrap();
        assert!(!ks.passed && ks.p_value < 0.01, "{ks:?}");
        assert!(jb_test(&bad).unwrap().p_value < 0.01);
    }

    #[test]
    fn size_and_value_guards() {
        let small = vec![1.0; 10];
        assert!(matches!(ks_test(&small, &ln(0.0, 1.0)), Err(Error::InsufficientData(_))));
        assert!(matches!(jb_test(&small), Err(Error::InsufficientData(_))));
        assert!(matches!(jb_test(&vec![2.0; 50]), Err(Error::Domain(_))));
        let mut neg = vec![1.0; 50];
        neg[3] = -1.0;
        assert!(ks_test(&neg, &ln(0.0, 1.0)).is_err());
    }

    #[test]
    fn report_serialises_test_name() {
        let sample = draws(LogNormal::new(0.0, 1.0).unwrap(), 100, 1);
        let json = serde_json::to_string(&jb_test(&sample).unwrap()).unwrap();
        assert!(json.contains("\"test_name\":\"JB\""));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn tests_are_permutation_invariant(seed in 0u64..1000, rot in 1usize..99) {
            let sample = draws(LogNormal::new(0.2, 0.7).unwrap(), 100, seed);
            let mut shuffled = sample.clone();
            shuffled.rotate_left(rot);
            shuffled.reverse();
            let p = ln(0.2, 0.7);
            prop_assert_eq!(ks_test(&sample, &p).unwrap().statistic, ks_test(&shuffled, &p).unwrap().statistic);
            let a = jb_test(&sample).unwrap().statistic;
            let b = jb_test(&shuffled).unwrap().statistic;
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn second_price_below_winning_bid(sigma in 0.1f64..1.2, xi in 2.0f64..40.0) {
            let p = ln(0.0, sigma);
            let second = expected_second_price(&p, xi).unwrap();
            let first = expected_first_price(&p, xi).unwrap();
            prop_assert!(second <= first);
            prop_assert!(second_price_sd(&p, xi).unwrap() >= 0.0);
        }
    }
}
