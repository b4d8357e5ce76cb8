//! Statistics core: compensated summation, Student-t quantiles, simple OLS
//! with classical standard errors, and Pearson/Spearman correlation.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::{erf_inv, erfc};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Two-sided confidence level used for every interval the toolkit reports.
pub const CONFIDENCE: f64 = 0.95;

/// Neumaier-compensated accumulator. Summation order is still significant,
/// so callers feed values in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(values);
    acc.total()
}

/// Arithmetic mean; `None` for an empty input.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(sum(values.iter().copied()) / values.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn centered(center: f64, half_width: f64) -> Self {
        Interval {
            lo: center - half_width,
            hi: center + half_width,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

// ---------------------------------------------------------------------------
// Student t distribution

fn validate_df(df: f64) -> Result<()> {
    if df.is_nan() || df <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "degrees of freedom must be positive, got {df}"
        )));
    }
    Ok(())
}

fn t_density(t: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    }
    let log_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (log_norm - (df + 1.0) / 2.0 * (t * t / df).ln_1p()).exp()
}

/// `P(0 < T < t)` for `t >= 0`.
fn t_central(t: f64, df: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t == 0.0 {
        return 0.0;
    }
    if df.is_infinite() {
        return 0.5 * statrs::function::erf::erf(t / std::f64::consts::SQRT_2);
    }
    if t * t < df {
        // P(|T| < t) = I_{t^2 / (df + t^2)}(1 / 2, df / 2), accurate for small t
        let y = t * t / (df + t * t);
        0.5 * beta_reg(0.5, df / 2.0, y)
    } else {
        0.5 - t_upper_tail(t, df)
    }
}

/// Upper tail `P(T > t)` for `t >= 0`.
fn t_upper_tail(t: f64, df: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t == 0.0 {
        return 0.5;
    }
    if df.is_infinite() {
        return 0.5 * erfc(t / std::f64::consts::SQRT_2);
    }
    if t.is_infinite() {
        return 0.0;
    }
    if t * t < df {
        return 0.5 - t_central(t, df);
    }
    // P(|T| > t) = I_{df / (df + t^2)}(df / 2, 1 / 2)
    let x = df / (df + t * t);
    0.5 * beta_reg(df / 2.0, 0.5, x)
}

/// Student-t cumulative distribution function. `df` may be `f64::INFINITY`
/// for the standard normal limit.
pub fn t_cdf(t: f64, df: f64) -> Result<f64> {
    validate_df(df)?;
    if t.is_nan() {
        return Err(Error::InvalidArgument("t statistic is NaN".into()));
    }
    let tail = t_upper_tail(t.abs(), df);
    Ok(if t >= 0.0 { 1.0 - tail } else { tail })
}

/// Two-sided p-value `P(|T| >= |t|)`.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    validate_df(df)?;
    if t.is_nan() {
        return Err(Error::InvalidArgument("t statistic is NaN".into()));
    }
    Ok((2.0 * t_upper_tail(t.abs(), df)).min(1.0))
}

fn normal_quantile_guess(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 * p - 1.0)
}

/// Inverse CDF of Student's t with `df` degrees of freedom
/// (`f64::INFINITY` gives the standard normal quantile).
///
/// Newton iteration safeguarded by bisection, converged to a few ulps.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    validate_df(df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Solve for t > 0 and restore the sign at the end. Near the median the
    // target is expressed as a central probability, in the tails as an
    // upper-tail probability, so both are represented without cancellation.
    let q = if p > 0.5 { 1.0 - p } else { p };
    let sign = if p > 0.5 { 1.0 } else { -1.0 };
    let central_target = 0.5 - q;
    let use_central = central_target < 0.25;
    // g is increasing in t with a single root.
    let g = |t: f64| {
        if use_central {
            t_central(t, df) - central_target
        } else {
            q - t_upper_tail(t, df)
        }
    };

    let mut t = if df == 1.0 {
        (std::f64::consts::PI * central_target).tan()
    } else if df == 2.0 {
        let a = 4.0 * q * (1.0 - q);
        2.0 * central_target * (2.0 / a).sqrt()
    } else {
        normal_quantile_guess(1.0 - q).max(f64::MIN_POSITIVE)
    };

    let mut lo = 0.0;
    let mut hi = t.max(1.0);
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("quantile for p={p}, df={df} overflows")));
        }
    }
    if !(t > lo && t < hi) {
        t = 0.5 * (lo + hi);
    }

    for _ in 0..200 {
        let f = g(t);
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut next = t - f / t_density(t, df);
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let done = (next - t).abs() <= 4.0 * f64::EPSILON * t.abs();
        t = next;
        if done || hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(sign * t)
}

// ---------------------------------------------------------------------------
// Mean with confidence interval

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci: Interval,
}

/// Mean and `mean ± t(0.975, n-1) * sd / sqrt(n)`.
pub fn mean_ci(values: &[f64]) -> Result<MeanCi> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let m = mean(values).expect("nonempty");
    let ss = sum(values.iter().map(|v| (v - m) * (v - m)));
    let sd = (ss / (n - 1) as f64).sqrt();
    let t = t_quantile(0.5 + CONFIDENCE / 2.0, (n - 1) as f64)?;
    Ok(MeanCi {
        n,
        mean: m,
        sd,
        ci: Interval::centered(m, t * sd / (n as f64).sqrt()),
    })
}

// ---------------------------------------------------------------------------
// Ordinary least squares, one regressor

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub alpha: f64,
    pub beta1: f64,
    pub se_alpha: f64,
    pub se_beta1: f64,
    pub ci_alpha: Interval,
    pub ci_beta1: Interval,
    pub r2: f64,
    pub n: usize,
}

impl RegressionResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.alpha + self.beta1 * x
    }
}

/// Fits `y = alpha + beta1 * x + e` by least squares.
///
/// Standard errors are the classical homoskedastic ones and intervals use the
/// t distribution with `n - 2` degrees of freedom. When `x` takes exactly two
/// distinct values the coefficients are computed from the two group means, so
/// for a 0/1 regressor `alpha` is the 0-group mean and `beta1` the difference
/// of group means with no extra rounding.
pub fn ols(y: &[f64], x: &[f64]) -> Result<RegressionResult> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::InvalidArgument(format!(
            "regression inputs differ in length: y has {n}, x has {}",
            x.len()
        )));
    }
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if y.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("regression inputs must be finite".into()));
    }
    let nf = n as f64;
    let x_mean = sum(x.iter().copied()) / nf;
    let y_mean = sum(y.iter().copied()) / nf;
    let sxx = sum(x.iter().map(|v| (v - x_mean) * (v - x_mean)));
    if sxx == 0.0 || x.iter().all(|&v| v == x[0]) {
        return Err(Error::Degenerate("regressor is constant".into()));
    }
    let sxy = sum(x.iter().zip(y).map(|(a, b)| (a - x_mean) * (b - y_mean)));

    let (alpha, beta1) = match two_levels(x) {
        Some((x0, x1)) => {
            let (m0, m1) = group_means(y, x, x0);
            let beta1 = if x0 == 0.0 && x1 == 1.0 {
                m1 - m0
            } else {
                (m1 - m0) / (x1 - x0)
            };
            let alpha = if x0 == 0.0 { m0 } else { m0 - beta1 * x0 };
            (alpha, beta1)
        }
        None => {
            let beta1 = sxy / sxx;
            (y_mean - beta1 * x_mean, beta1)
        }
    };

    let ssr = sum(x.iter().zip(y).map(|(a, b)| {
        let r = b - (alpha + beta1 * a);
        r * r
    }));
    let sst = sum(y.iter().map(|v| (v - y_mean) * (v - y_mean)));
    let r2 = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let df = (n - 2) as f64;
    let sigma2 = ssr / df;
    let se_beta1 = (sigma2 / sxx).sqrt();
    let se_alpha = (sigma2 * (1.0 / nf + x_mean * x_mean / sxx)).sqrt();
    let t = t_quantile(0.5 + CONFIDENCE / 2.0, df)?;
    Ok(RegressionResult {
        alpha,
        beta1,
        se_alpha,
        se_beta1,
        ci_alpha: Interval::centered(alpha, t * se_alpha),
        ci_beta1: Interval::centered(beta1, t * se_beta1),
        r2,
        n,
    })
}

/// The two distinct values of `x` in increasing order, if there are exactly two.
fn two_levels(x: &[f64]) -> Option<(f64, f64)> {
    let a = x[0];
    let b = *x.iter().find(|&&v| v != a)?;
    if x.iter().all(|&v| v == a || v == b) {
        Some(if a < b { (a, b) } else { (b, a) })
    } else {
        None
    }
}

fn group_means(y: &[f64], x: &[f64], x0: f64) -> (f64, f64) {
    let (mut s0, mut s1) = (CompensatedSum::new(), CompensatedSum::new());
    let (mut n0, mut n1) = (0usize, 0usize);
    for (&xi, &yi) in x.iter().zip(y) {
        if xi == x0 {
            s0.add(yi);
            n0 += 1;
        } else {
            s1.add(yi);
            n1 += 1;
        }
    }
    (s0.total() / n0 as f64, s1.total() / n1 as f64)
}

// ---------------------------------------------------------------------------
// Correlation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stars {
    #[serde(rename = "")]
    None,
    #[serde(rename = "*")]
    One,
    #[serde(rename = "**")]
    Two,
    #[serde(rename = "***")]
    Three,
}

impl Stars {
    /// `*` p < 0.05, `**` p < 0.01, `***` p < 0.001.
    pub fn from_p(p: f64) -> Stars {
        if p < 0.001 {
            Stars::Three
        } else if p < 0.01 {
            Stars::Two
        } else if p < 0.05 {
            Stars::One
        } else {
            Stars::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

impl std::fmt::Display for Stars {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p: f64,
    pub stars: Stars,
    pub n: usize,
}

impl CorrelationResult {
    /// Renders as e.g. `-0.684***`.
    pub fn label(&self, digits: usize) -> String {
        format!("{:.*}{}", digits, self.rho, self.stars)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    #[default]
    Pearson,
    Spearman,
}

/// Pearson correlation with a two-sided p-value from
/// `t = r * sqrt((n - 2) / (1 - r^2))` on `n - 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::InvalidArgument(format!(
            "correlation inputs differ in length: {n} vs {}",
            y.len()
        )));
    }
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("correlation inputs must be finite".into()));
    }
    let nf = n as f64;
    let xm = sum(x.iter().copied()) / nf;
    let ym = sum(y.iter().copied()) / nf;
    let sxx = sum(x.iter().map(|v| (v - xm) * (v - xm)));
    let syy = sum(y.iter().map(|v| (v - ym) * (v - ym)));
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation undefined for a constant input".into()));
    }
    let sxy = sum(x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)));
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if rho.abs() == 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        t_two_sided_p(t, df)?
    };
    Ok(CorrelationResult {
        rho,
        p,
        stars: Stars::from_p(p),
        n,
    })
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&ranks(x), &ranks(y))
}

pub fn correlate(kind: CorrelationKind, x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    match kind {
        CorrelationKind::Pearson => pearson(x, y),
        CorrelationKind::Spearman => spearman(x, y),
    }
}

/// 1-based ranks, ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.extend([1e16, 1.0, -1e16, 1.0]);
        assert_eq!(s.total(), 2.0);
    }

    #[test]
    fn t_quantile_reference_values() {
        assert_eq!(t_quantile(0.5, 7.0).unwrap(), 0.0);
        let z = t_quantile(0.975, f64::INFINITY).unwrap();
        assert!((z - 1.959_963_984_540_054).abs() < 1e-10, "{z}");
        let t10 = t_quantile(0.975, 10.0).unwrap();
        assert!((t10 - 2.228_138_851_986_273_5).abs() < 1e-10, "{t10}");
        let t1 = t_quantile(0.975, 1.0).unwrap();
        assert!((t1 - 12.706_204_736_174_707).abs() < 1e-9, "{t1}");
        assert!((t_quantile(0.025, 10.0).unwrap() + t10).abs() < 1e-12);
    }

    #[test]
    fn t_quantile_rejects_bad_arguments() {
        assert!(t_quantile(0.0, 3.0).is_err());
        assert!(t_quantile(1.0, 3.0).is_err());
        assert!(t_quantile(0.3, 0.0).is_err());
        assert!(t_quantile(f64::NAN, 3.0).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &df in &[1.0, 2.0, 3.0, 5.5, 30.0, 1000.0, 20000.0, f64::INFINITY] {
            for &p in &[1e-6, 0.01, 0.2, 0.499, 0.75, 0.975, 0.999_999] {
                let t = t_quantile(p, df).unwrap();
                let back = t_cdf(t, df).unwrap();
                assert!(
                    (back - p).abs() <= 1e-13_f64.max(1e-10 * p),
                    "df={df} p={p} back={back}"
                );
            }
        }
    }

    #[test]
    fn mean_ci_cases() {
        let c = mean_ci(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(c.mean, 1.0);
        assert_eq!(c.ci.width(), 0.0);
        assert_eq!(mean_ci(&[0.0, 2.0]).unwrap().mean, 1.0);
        assert!(matches!(mean_ci(&[1.0]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn pile_cc_group_means() {
        // Train mean 6.993, test mean 6.946: intercept is the test mean and
        // the slope the difference.
        let test = [6.900, 6.946, 6.992];
        let train = [6.950, 6.993, 7.036];
        let y: Vec<f64> = test.iter().chain(&train).copied().collect();
        let x: Vec<f64> = [0.0; 3].iter().chain(&[1.0; 3]).copied().collect();
        let r = ols(&y, &x).unwrap();
        let m0 = mean(&test).unwrap();
        let m1 = mean(&train).unwrap();
        assert_eq!(r.alpha, m0);
        assert_eq!(r.beta1, m1 - m0);
        assert_eq!(format!("{:.3}", r.alpha), "6.946");
        assert_eq!(format!("{:.3}", r.beta1), "0.047");
    }

    #[test]
    fn identical_groups_give_zero_effect() {
        let y = [2.0, 3.0, 4.0, 2.0, 3.0, 4.0];
        let x = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let r = ols(&y, &x).unwrap();
        assert_eq!(r.beta1, 0.0);
        assert_eq!(r.r2, 0.0);
        assert!(r.ci_beta1.contains(0.0));
    }

    #[test]
    fn ols_errors() {
        assert!(matches!(
            ols(&[1.0, 2.0], &[0.0, 1.0]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(ols(&[1.0, 2.0, 3.0], &[1.0; 3]), Err(Error::Degenerate(_))));
        assert!(ols(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_extremes() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin() * 3.0 + i as f64).collect();
        let r = pearson(&x, &x).unwrap();
        assert_eq!(r.rho, 1.0);
        assert_eq!(r.p, 0.0);
        assert_eq!(r.stars, Stars::Three);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap().rho, -1.0);
        assert!(matches!(pearson(&x, &[1.0; 30]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn stars_thresholds() {
        assert_eq!(Stars::from_p(0.05), Stars::None);
        assert_eq!(Stars::from_p(0.0499), Stars::One);
        assert_eq!(Stars::from_p(0.01), Stars::One);
        assert_eq!(Stars::from_p(0.0099), Stars::Two);
        assert_eq!(Stars::from_p(0.001), Stars::Two);
        assert_eq!(Stars::from_p(0.000_999), Stars::Three);
    }

    #[test]
    fn spearman_uses_average_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 8.0, 27.0, 64.0, 125.0];
        assert!((spearman(&x, &y).unwrap().rho - 1.0).abs() < 1e-15);
    }

    fn points() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_to_regressor((x, y) in points()) {
            prop_assume!(x.iter().any(|&v| v != x[0]));
            let r = ols(&y, &x).unwrap();
            let resid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - r.predict(*a)).collect();
            let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let n = x.len() as f64;
            prop_assert!(sum(resid.iter().copied()).abs() < 1e-8 * n * scale);
            let xs = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(sum(resid.iter().zip(&x).map(|(e, a)| e * a)).abs() < 1e-8 * n * scale * xs);
            prop_assert!(r.ci_beta1.lo <= r.ci_beta1.hi && r.ci_alpha.lo <= r.ci_alpha.hi);
            prop_assert!((0.0..=1.0).contains(&r.r2));
        }

        #[test]
        fn binary_regressor_identity(
            y in prop::collection::vec(-50.0f64..50.0, 4..80),
            mask in prop::collection::vec(any::<bool>(), 80),
        ) {
            let x: Vec<f64> = y.iter().zip(&mask).map(|(_, &m)| if m { 1.0 } else { 0.0 }).collect();
            prop_assume!(x.contains(&0.0) && x.contains(&1.0));
            let r = ols(&y, &x).unwrap();
            let g0: Vec<f64> = y.iter().zip(&x).filter(|(_, &d)| d == 0.0).map(|(v, _)| *v).collect();
            let g1: Vec<f64> = y.iter().zip(&x).filter(|(_, &d)| d == 1.0).map(|(v, _)| *v).collect();
            let m0 = mean(&g0).unwrap();
            let m1 = mean(&g1).unwrap();
            prop_assert_eq!(r.alpha, m0);
            prop_assert_eq!(r.beta1, m1 - m0);
        }

        #[test]
        fn pearson_symmetric_and_affine_invariant(
            (x, y) in points(),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let Ok(r) = pearson(&x, &y) else { return Ok(()); };
            let r2 = pearson(&y, &x).unwrap();
            prop_assert!((r.rho - r2.rho).abs() < 1e-12);
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r3 = pearson(&xt, &y).unwrap();
            prop_assert!((r.rho - r3.rho).abs() < 1e-10);
            prop_assert_eq!(r.stars, Stars::from_p(r.p));
        }
    }
}
