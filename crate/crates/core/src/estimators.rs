//! Population-size estimators on capture frequencies: Chao's moment estimator
//! with its log-normal interval, and Rivest's truncated Poisson regression with
//! a profile-likelihood interval.

use statrs::function::gamma::ln_gamma;

use crate::ensemble::CaptureFrequencies;
use crate::error::{Error, Result};
use crate::glm::{self, PoissonFit};

/// 1.96, the two-sided 95% normal quantile used by the log-normal interval.
pub const Z_95: f64 = 1.96;
/// 95% quantile of chi-square with one degree of freedom.
pub const K_ALPHA: f64 = 3.84;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub n: u64,
    pub f0_hat: f64,
    pub point: f64,
    pub variance: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    fn degenerate(n: u64) -> Estimate {
        let n_f = n as f64;
        Estimate { n, f0_hat: 0.0, point: n_f, variance: Some(0.0), ci_low: n_f, ci_high: n_f }
    }

    pub fn is_ordered(&self) -> bool {
        let slack = 1e-9 * (1.0 + self.point.abs());
        let n = self.n as f64;
        n <= self.ci_low + slack && self.ci_low <= self.point + slack && self.point <= self.ci_high + slack
    }
}

// ---------------------------------------------------------------------------
// Chao (1987)

fn f0_chao(f1: f64, f2: f64) -> f64 {
    if f2 > 0.0 {
        f1 * f1 / (2.0 * f2)
    } else {
        f1 * (f1 - 1.0) / (2.0 * (f2 + 1.0))
    }
}

/// Point estimate only; variance and interval are left unset.
pub fn chao1987_point(freq: &CaptureFrequencies) -> Estimate {
    let f0 = f0_chao(freq.get(1) as f64, freq.get(2) as f64);
    let point = freq.n() as f64 + f0;
    Estimate { n: freq.n(), f0_hat: f0, point, variance: None, ci_low: point, ci_high: point }
}

pub fn chao1987_variance(freq: &CaptureFrequencies) -> f64 {
    let (f1, f2) = (freq.get(1) as f64, freq.get(2) as f64);
    if f1 == 0.0 {
        return 0.0;
    }
    let v = if f2 > 0.0 {
        let r = f1 / f2;
        f2 * (0.25 * r.powi(4) + r.powi(3) + 0.5 * r * r)
    } else {
        let n_hat = freq.n() as f64 + f0_chao(f1, f2);
        f1 * (f1 - 1.0) / 2.0 + f1 * (2.0 * f1 - 1.0).powi(2) / 4.0 - f1.powi(4) / (4.0 * n_hat)
    };
    v.max(0.0)
}

pub fn chao1987_interval(freq: &CaptureFrequencies) -> Estimate {
    let mut est = chao1987_point(freq);
    let var = chao1987_variance(freq);
    est.variance = Some(var);
    if est.f0_hat <= 0.0 {
        est.ci_low = est.n as f64;
        est.ci_high = est.n as f64;
        return est;
    }
    let n = est.n as f64;
    let q = (Z_95 * (1.0 + var / (est.f0_hat * est.f0_hat)).ln().sqrt()).exp();
    est.ci_low = n + est.f0_hat / q;
    est.ci_high = n + est.f0_hat * q;
    est
}

// ---------------------------------------------------------------------------
// Chao (Rivest)

/// Log-linear design for the truncated table, rows ordered `k = C` down to 1.
///
/// Columns are the intercept, `k`, and `max(k - j + 1, 0)` for `j = 3..=C`.
/// The offset `-ln k!` turns the Poisson model on `f_k` into the binomial
/// mixture the estimator assumes.
#[derive(Debug, Clone, PartialEq)]
pub struct RivestDesign {
    pub ks: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

pub fn rivest_design_matrix(c: usize) -> RivestDesign {
    let ks: Vec<usize> = (1..=c).rev().collect();
    let rows = ks.iter().map(|&k| design_row(k, &(3..=c).collect::<Vec<_>>())).collect();
    let offsets = ks.iter().map(|&k| -ln_factorial(k as u64)).collect();
    RivestDesign { ks, rows, offsets }
}

fn design_row(k: usize, etas: &[usize]) -> Vec<f64> {
    let mut row = vec![1.0, k as f64];
    row.extend(etas.iter().map(|&j| (k + 1).saturating_sub(j) as f64));
    row
}

pub fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RivestFit {
    pub gamma: f64,
    pub beta: f64,
    /// `(j, eta_j)` for every retained heterogeneity column.
    pub etas: Vec<(usize, f64)>,
    pub deviance: f64,
    pub converged: bool,
    /// Set when the table was too thin for the slope and only the intercept was fitted.
    pub intercept_only: bool,
    pub committee_size: usize,
}

impl RivestFit {
    fn columns(&self) -> Vec<usize> {
        self.etas.iter().map(|e| e.0).collect()
    }

    pub fn f0_hat(&self) -> f64 {
        self.gamma.exp()
    }
}

fn counts_desc(freq: &CaptureFrequencies) -> Vec<f64> {
    (1..=freq.committee_size()).rev().map(|k| freq.get(k) as f64).collect()
}

/// Fits the model with the given heterogeneity columns (`j` values).
pub fn fit_rivest_model(freq: &CaptureFrequencies, etas: &[usize]) -> Result<RivestFit> {
    let c = freq.committee_size();
    let ks: Vec<usize> = (1..=c).rev().collect();
    let design: Vec<Vec<f64>> = ks.iter().map(|&k| design_row(k, etas)).collect();
    let offsets: Vec<f64> = ks.iter().map(|&k| -ln_factorial(k as u64)).collect();
    let fit = glm::fit_poisson_loglinear(&design, &offsets, &counts_desc(freq))?;
    Ok(RivestFit {
        gamma: fit.coefficients[0],
        beta: fit.coefficients[1],
        etas: etas.iter().copied().zip(fit.coefficients[2..].iter().copied()).collect(),
        deviance: fit.deviance,
        converged: fit.converged,
        intercept_only: false,
        committee_size: c,
    })
}

fn fit_intercept_only(freq: &CaptureFrequencies) -> Result<RivestFit> {
    let c = freq.committee_size();
    let design = vec![vec![1.0]; c];
    let offsets: Vec<f64> = (1..=c).rev().map(|k| -ln_factorial(k as u64)).collect();
    let fit = glm::fit_poisson_loglinear(&design, &offsets, &counts_desc(freq))?;
    Ok(RivestFit {
        gamma: fit.coefficients[0],
        beta: 0.0,
        etas: Vec::new(),
        deviance: fit.deviance,
        converged: fit.converged,
        intercept_only: true,
        committee_size: c,
    })
}

/// Full fit, then repeatedly drops every negative `eta_j` and refits.
///
/// Tables with fewer than two non-empty cells have no finite slope; they, and
/// designs that turn out singular, get the intercept-only model.
pub fn rivest_fit(freq: &CaptureFrequencies) -> Result<RivestFit> {
    let c = freq.committee_size();
    if c < 2 {
        return Err(Error::Argument("the regression estimator needs at least two members".into()));
    }
    if freq.n() == 0 {
        return Err(Error::Estimator("no captures".into()));
    }
    if freq.counts().iter().filter(|&&f| f > 0).count() < 2 {
        return fit_intercept_only(freq);
    }
    let mut etas: Vec<usize> = (3..=c).collect();
    loop {
        let fit = match fit_rivest_model(freq, &etas) {
            Ok(f) => f,
            Err(Error::Estimator(_)) => return fit_intercept_only(freq),
            Err(e) => return Err(e),
        };
        let negative: Vec<usize> = fit.etas.iter().filter(|e| e.1 < 0.0).map(|e| e.0).collect();
        if negative.is_empty() {
            return Ok(fit);
        }
        etas.retain(|j| !negative.contains(j));
    }
}

pub fn rivest_point(fit: &RivestFit, n: u64) -> Result<Estimate> {
    if !fit.converged {
        return Err(Error::Estimator("regression fit did not converge".into()));
    }
    let f0 = fit.f0_hat();
    let point = n as f64 + f0;
    Ok(Estimate { n, f0_hat: f0, point, variance: None, ci_low: point, ci_high: point })
}

/// Correction term turning the complete-table deviance into a profile
/// log-likelihood in `N = n + u`.
pub fn correction_term(u: u64, n_c: f64) -> f64 {
    let uf = u as f64;
    if n_c > 100.0 && u >= 2 {
        uf - n_c - (uf / n_c).ln() / 2.0
    } else if n_c > 100.0 {
        -n_c + (2.0 * std::f64::consts::PI * n_c).ln() / 2.0
    } else {
        let u_ln_u = if u == 0 { 0.0 } else { uf * uf.ln() };
        u_ln_u + ln_gamma(n_c + 1.0) - n_c * n_c.ln() - ln_gamma(uf + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub u: u64,
    /// `D_PE - 2 ct`; smaller is better.
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct Profile {
    pub estimate: Estimate,
    pub curve: Vec<ProfilePoint>,
    pub u_star: u64,
    pub step: u64,
    /// Grid points whose extended fit failed to converge.
    pub skipped: Vec<u64>,
}

/// Hard stop for the grid when the upper crossing never appears.
fn grid_cap(n: u64, f0: f64) -> u64 {
    let base = (1.5 * f0).ceil() as u64;
    base.max(10 * (n + f0.ceil() as u64)) + 100
}

fn extended_value(freq: &CaptureFrequencies, etas: &[usize], intercept_only: bool, u: u64) -> Option<f64> {
    let c = freq.committee_size();
    let mut ks: Vec<usize> = (1..=c).rev().collect();
    ks.push(0);
    let row = |k: usize| if intercept_only { vec![1.0] } else { design_row(k, etas) };
    let design: Vec<Vec<f64>> = ks.iter().map(|&k| row(k)).collect();
    let offsets: Vec<f64> = ks.iter().map(|&k| -ln_factorial(k as u64)).collect();
    let mut counts = counts_desc(freq);
    counts.push(u as f64);
    let fit: PoissonFit = glm::fit_poisson_loglinear(&design, &offsets, &counts).ok()?;
    if !fit.converged {
        return None;
    }
    let n_c = (freq.n() + u) as f64;
    Some(fit.deviance - 2.0 * correction_term(u, n_c))
}

/// Points in the initial grid before the step grows past 1.
pub const PROFILE_GRID_POINTS: u64 = 2000;

/// Profile over `u` on a grid starting at `[0, ceil(1.5 f0)]`, extended upward
/// until the curve rises `K_ALPHA` above its minimum (or the cap is hit, which
/// leaves the upper bound infinite). Crossings are linearly interpolated.
/// The step is 1 unless the initial range exceeds `PROFILE_GRID_POINTS`.
pub fn profile_likelihood(freq: &CaptureFrequencies, fit: &RivestFit) -> Result<Profile> {
    let n = freq.n();
    let f0 = fit.f0_hat();
    let point = n as f64 + f0;
    if !(f0 > 0.0) || !f0.is_finite() {
        let mut e = Estimate::degenerate(n);
        e.f0_hat = f0.max(0.0);
        e.point = point.max(n as f64);
        return Ok(Profile { estimate: e, curve: Vec::new(), u_star: 0, step: 1, skipped: Vec::new() });
    }
    let etas = fit.columns();
    let mut curve: Vec<ProfilePoint> = Vec::new();
    let mut skipped = Vec::new();
    let mut min = f64::INFINITY;
    let mut push = |u: u64, curve: &mut Vec<ProfilePoint>| match extended_value(freq, &etas, fit.intercept_only, u) {
        Some(v) => {
            min = min.min(v);
            curve.push(ProfilePoint { u, loglik: v });
            Some(v - min)
        }
        None => {
            skipped.push(u);
            None
        }
    };
    let first_end = (1.5 * f0).ceil() as u64;
    let step = first_end.div_ceil(PROFILE_GRID_POINTS).max(1);
    let mut u = 0;
    while u <= first_end {
        push(u, &mut curve);
        u += step;
    }
    u -= step;
    let cap = grid_cap(n, f0);
    let mut rise = curve.last().map(|p| p.loglik - curve.iter().map(|p| p.loglik).fold(f64::INFINITY, f64::min));
    while !rise.is_some_and(|r| r > K_ALPHA) && u < cap {
        u += step;
        rise = push(u, &mut curve).or(rise);
    }
    if curve.is_empty() {
        return Err(Error::Estimator("no extended fit converged".into()));
    }
    let best = curve.iter().enumerate().min_by(|a, b| a.1.loglik.total_cmp(&b.1.loglik)).map(|(i, _)| i).unwrap();
    let min = curve[best].loglik;
    let limit = min + K_ALPHA;
    let crossing = |a: &ProfilePoint, b: &ProfilePoint| {
        let t = (limit - a.loglik) / (b.loglik - a.loglik);
        a.u as f64 + t * (b.u as f64 - a.u as f64)
    };
    let u_low = (0..best)
        .rev()
        .find(|&i| curve[i].loglik > limit)
        .map_or(curve[0].u as f64, |i| crossing(&curve[i + 1], &curve[i]));
    let u_high = (best + 1..curve.len())
        .find(|&i| curve[i].loglik > limit)
        .map_or(f64::INFINITY, |i| crossing(&curve[i - 1], &curve[i]));
    let nf = n as f64;
    let estimate = Estimate { n, f0_hat: f0, point, variance: None, ci_low: nf + u_low, ci_high: nf + u_high };
    Ok(Profile { estimate, u_star: curve[best].u, step, curve, skipped })
}

pub fn profile_likelihood_interval(freq: &CaptureFrequencies, fit: &RivestFit) -> Result<Estimate> {
    Ok(profile_likelihood(freq, fit)?.estimate)
}

/// Rivest fit, point, and profile interval in one call.
pub fn rivest_interval(freq: &CaptureFrequencies) -> Result<Estimate> {
    let fit = rivest_fit(freq)?;
    rivest_point(&fit, freq.n())?;
    profile_likelihood_interval(freq, &fit)
}

/// Share of total predicted relevance that sits in the labeled set.
pub fn quant_recall(labeled_scores: &[f64], unlabeled_scores: &[f64]) -> Result<f64> {
    if labeled_scores.is_empty() {
        return Err(Error::Argument("no labeled scores".into()));
    }
    let l: f64 = labeled_scores.iter().sum();
    let u: f64 = unlabeled_scores.iter().sum();
    if l + u <= 0.0 {
        return Err(Error::Estimator("all scores are zero".into()));
    }
    Ok(l / (l + u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example() -> CaptureFrequencies {
        CaptureFrequencies::with_n(vec![40, 33, 17, 2, 0], 92).unwrap()
    }

    fn freq(f: &[u64]) -> CaptureFrequencies {
        CaptureFrequencies::new(f.to_vec()).unwrap()
    }

    #[test]
    fn chao_worked_example() {
        let e = chao1987_interval(&example());
        assert!((e.point - (92.0 + 1600.0 / 66.0)).abs() < 1e-12);
        assert!((e.point - 116.24).abs() < 0.01);
        assert!((e.variance.unwrap() - 100.82).abs() < 0.01);
        assert!((e.ci_low - 103.11).abs() < 0.02);
        assert!((e.ci_high - 144.88).abs() < 0.02);
    }

    #[test]
    fn chao_second_branch() {
        // f1 = 4, f2 = 0, n = 10
        let f = CaptureFrequencies::with_n(vec![4, 0, 6], 10).unwrap();
        let e = chao1987_point(&f);
        assert_eq!(e.f0_hat, 6.0);
        assert_eq!(e.point, 16.0);
        assert!((chao1987_variance(&f) - 51.0).abs() < 1e-12);
    }

    #[test]
    fn chao_zero_f1() {
        let f = freq(&[0, 10, 40]);
        assert_eq!(chao1987_point(&f).point, 50.0);
        assert_eq!(chao1987_variance(&f), 0.0);
        let e = chao1987_interval(&f);
        assert_eq!((e.ci_low, e.ci_high), (50.0, 50.0));
    }

    #[test]
    fn design_rows() {
        let d = rivest_design_matrix(5);
        assert_eq!(d.ks, vec![5, 4, 3, 2, 1]);
        assert_eq!(d.rows[0], vec![1.0, 5.0, 3.0, 2.0, 1.0]);
        assert_eq!(d.rows[3], vec![1.0, 2.0, 0.0, 0.0, 0.0]);
        assert!((d.offsets[0] + 120f64.ln()).abs() < 1e-12);
        assert_eq!(rivest_design_matrix(3).rows[0], vec![1.0, 3.0, 1.0]);
        assert_eq!(rivest_design_matrix(2).rows[0], vec![1.0, 2.0]);
    }

    #[test]
    fn rivest_before_removal() {
        let fit = fit_rivest_model(&example(), &[3, 4, 5]).unwrap();
        assert!(fit.converged);
        assert!((fit.gamma - 3.19).abs() < 0.01, "{fit:?}");
        assert!((fit.beta - 0.50).abs() < 0.01);
        assert!((fit.etas[0].1 + 0.07).abs() < 0.01);
        assert!((fit.etas[1].1 + 1.19).abs() < 0.01);
        assert!(fit.etas[2].1 < -5.0);
    }

    #[test]
    fn rivest_after_removal() {
        let fit = rivest_fit(&example()).unwrap();
        assert!(fit.etas.is_empty());
        assert!((fit.gamma - 3.50).abs() < 0.01);
        assert!((fit.beta - 0.29).abs() < 0.01);
        let e = rivest_point(&fit, 92).unwrap();
        assert!((e.point - 125.18).abs() < 0.01);
    }

    #[test]
    fn rivest_point_trivia() {
        let fit = RivestFit {
            gamma: 0.0,
            beta: 0.0,
            etas: vec![],
            deviance: 0.0,
            converged: true,
            intercept_only: false,
            committee_size: 5,
        };
        assert_eq!(rivest_point(&fit, 10).unwrap().point, 11.0);
        let low = RivestFit { gamma: -60.0, ..fit.clone() };
        assert!((rivest_point(&low, 10).unwrap().point - 10.0).abs() < 1e-20_f64.max(1e-12));
        let bad = RivestFit { converged: false, ..fit };
        assert!(rivest_point(&bad, 10).is_err());
    }

    #[test]
    fn rivest_recovers_loglinear_counts() {
        // mu_k = exp(gamma + beta k) / k!, no heterogeneity
        let (gamma, beta) = (4.0, 0.7);
        let counts: Vec<f64> = (1..=5)
            .map(|k| (gamma + beta * k as f64 - ln_factorial(k)).exp())
            .collect();
        // Scale so the table has integer-ish large counts: fit on real counts directly.
        let design: Vec<Vec<f64>> = (1..=5usize).rev().map(|k| design_row(k, &[3, 4, 5])).collect();
        let offsets: Vec<f64> = (1..=5u64).rev().map(|k| -ln_factorial(k)).collect();
        let y: Vec<f64> = counts.iter().rev().copied().collect();
        let fit = glm::fit_poisson_loglinear(&design, &offsets, &y).unwrap();
        assert!((fit.coefficients[0] - gamma).abs() < 1e-6);
        assert!((fit.coefficients[1] - beta).abs() < 1e-6);
        assert!(fit.coefficients[2..].iter().all(|e| e.abs() < 1e-6));
    }

    #[test]
    fn inflated_top_cell_keeps_eta() {
        let (gamma, beta) = (5.0, 0.2);
        let mu = |k: u64| (gamma + beta * k as f64 - ln_factorial(k)).exp();
        let f = vec![mu(1).round() as u64, mu(2).round() as u64, (2.0 * mu(3)).round() as u64];
        let fit = rivest_fit(&freq(&f)).unwrap();
        assert_eq!(fit.etas.len(), 1);
        assert!(fit.etas[0].1 > 0.0);
    }

    #[test]
    fn thin_tables_fall_back() {
        let fit = rivest_fit(&freq(&[5, 0, 0, 0, 0])).unwrap();
        assert!(fit.intercept_only && fit.converged);
        let e = profile_likelihood_interval(&freq(&[5, 0, 0, 0, 0]), &fit).unwrap();
        assert!(e.is_ordered());
    }

    #[test]
    fn correction_term_cases() {
        // third case at u = 0 uses 0^0 = 1
        let n_c: f64 = 50.0;
        let want = ln_gamma(51.0) - 50.0 * n_c.ln();
        assert!((correction_term(0, 50.0) - want).abs() < 1e-12);
        assert!((correction_term(1, 150.0) - (-150.0 + (2.0 * std::f64::consts::PI * 150.0).ln() / 2.0)).abs() < 1e-12);
        assert!((correction_term(10, 150.0) - (10.0 - 150.0 - (10.0f64 / 150.0).ln() / 2.0)).abs() < 1e-12);
        // boundary N = 100 is strict
        let direct = 5.0 * 5f64.ln() + ln_gamma(101.0) - 100.0 * 100f64.ln() - ln_gamma(6.0);
        assert!((correction_term(5, 100.0) - direct).abs() < 1e-9);
    }

    #[test]
    fn profile_worked_example() {
        let f = example();
        let fit = rivest_fit(&f).unwrap();
        let p = profile_likelihood(&f, &fit).unwrap();
        assert!((p.estimate.ci_low - 108.88).abs() <= 0.5, "{:?}", p.estimate);
        assert!((p.estimate.ci_high - 146.39).abs() <= 0.5, "{:?}", p.estimate);
        assert_eq!(p.u_star, 32);
        assert!(p.skipped.is_empty());
    }

    #[test]
    fn profile_degenerate() {
        let f = freq(&[0, 0, 0, 0, 10]);
        let fit = RivestFit {
            gamma: f64::NEG_INFINITY,
            beta: 0.0,
            etas: vec![],
            deviance: 0.0,
            converged: true,
            intercept_only: false,
            committee_size: 5,
        };
        let e = profile_likelihood_interval(&f, &fit).unwrap();
        assert_eq!((e.ci_low, e.ci_high), (10.0, 10.0));
    }

    #[test]
    fn quant_examples() {
        assert_eq!(quant_recall(&[5.0, 5.0], &[0.0]).unwrap(), 1.0);
        assert!((quant_recall(&[4.0, 4.0], &[1.0, 1.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(quant_recall(&[0.0], &[0.0]).is_err());
        assert!(quant_recall(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn chao_bounds(f in proptest::collection::vec(0u64..60, 5)) {
            prop_assume!(f.iter().sum::<u64>() > 0);
            let fr = freq(&f);
            let e = chao1987_interval(&fr);
            prop_assert!(e.point >= e.n as f64);
            prop_assert!(e.is_ordered());
            prop_assert!(e.variance.unwrap() >= 0.0);
        }

        #[test]
        fn chao_ignores_high_cells(f in proptest::collection::vec(0u64..60, 5), extra in 1u64..20) {
            prop_assume!(f.iter().sum::<u64>() > 0);
            let a = chao1987_point(&freq(&f));
            let permuted = freq(&[f[0], f[1], f[4], f[2], f[3]]);
            prop_assert_eq!(a.point, chao1987_point(&permuted).point);
            let mut g = f.clone();
            g[4] += extra;
            prop_assert!((chao1987_point(&freq(&g)).point - a.point - extra as f64).abs() < 1e-9);
        }

        #[test]
        fn deviance_nonnegative(f in proptest::collection::vec(0u64..40, 5)) {
            prop_assume!(f.iter().filter(|&&x| x > 0).count() >= 2);
            let fit = rivest_fit(&freq(&f)).unwrap();
            prop_assert!(fit.deviance >= 0.0);
            prop_assert!(fit.etas.iter().all(|e| e.1 >= 0.0));
        }
    }
}
