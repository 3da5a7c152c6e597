//! Variable exponents p(·) ≤ q(·) ≤ r(·), modulating weights μ₁, μ₂ and the
//! structural hypotheses placed on them.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{dist, Domain2D, Point, ScalarField};

/// Strict inequalities must hold with at least this slack.
pub const STRICT_SLACK: f64 = 1e-12;

/// The exponent fields with extremal values cached from dense sampling.
#[derive(Debug, Clone)]
pub struct ExponentTriple {
    pub p: ScalarField,
    pub q: ScalarField,
    pub r: ScalarField,
    pub p_minus: f64,
    pub p_plus: f64,
    pub q_minus: f64,
    pub q_plus: f64,
    pub r_minus: f64,
    pub r_plus: f64,
}

impl ExponentTriple {
    /// Samples the fields at `samples` and validates `1 < p ≤ q ≤ r` there.
    pub fn new(p: ScalarField, q: ScalarField, r: ScalarField, samples: &[Point]) -> Result<Self> {
        let (p_minus, p_plus) = p.extrema(samples)?;
        let (q_minus, q_plus) = q.extrema(samples)?;
        let (r_minus, r_plus) = r.extrema(samples)?;
        for &x in samples {
            let (pv, qv, rv) = (p.eval(x), q.eval(x), r.eval(x));
            if pv <= 1.0 {
                return Err(Error::Contract(format!("p({}, {}) = {pv} ≤ 1", x[0], x[1])));
            }
            if pv > qv || qv > rv {
                return Err(Error::Contract(format!(
                    "ordering p ≤ q ≤ r fails at ({}, {}): {pv}, {qv}, {rv}",
                    x[0], x[1]
                )));
            }
        }
        Ok(ExponentTriple { p, q, r, p_minus, p_plus, q_minus, q_plus, r_minus, r_plus })
    }

    /// Samples on the default grid of the domain.
    pub fn on_domain(p: ScalarField, q: ScalarField, r: ScalarField, domain: &Domain2D) -> Result<Self> {
        Self::new(p, q, r, &domain.default_samples())
    }

    pub fn constant(p: f64, q: f64, r: f64) -> Result<Self> {
        Self::new(ScalarField::constant(p), ScalarField::constant(q), ScalarField::constant(r), &[[0.0, 0.0]])
    }

    #[inline]
    pub fn eval(&self, x: Point) -> [f64; 3] {
        [self.p.eval(x), self.q.eval(x), self.r.eval(x)]
    }
}

/// The modulating coefficients μ₁, μ₂ ≥ 0.
#[derive(Debug, Clone)]
pub struct WeightPair {
    pub mu1: ScalarField,
    pub mu2: ScalarField,
    pub inf_mu1: f64,
    pub inf_mu2: f64,
    pub sup_mu1: f64,
    pub sup_mu2: f64,
}

impl WeightPair {
    pub fn new(mu1: ScalarField, mu2: ScalarField, samples: &[Point]) -> Result<Self> {
        let (inf_mu1, sup_mu1) = mu1.extrema(samples)?;
        let (inf_mu2, sup_mu2) = mu2.extrema(samples)?;
        if inf_mu1 < 0.0 || inf_mu2 < 0.0 {
            return Err(Error::Contract(format!("weights must be nonnegative (inf μ₁ = {inf_mu1}, inf μ₂ = {inf_mu2})")));
        }
        Ok(WeightPair { mu1, mu2, inf_mu1, inf_mu2, sup_mu1, sup_mu2 })
    }

    pub fn on_domain(mu1: ScalarField, mu2: ScalarField, domain: &Domain2D) -> Result<Self> {
        Self::new(mu1, mu2, &domain.default_samples())
    }

    pub fn constant(mu1: f64, mu2: f64) -> Result<Self> {
        Self::new(ScalarField::constant(mu1), ScalarField::constant(mu2), &[[0.0, 0.0]])
    }

    pub fn zero() -> Self {
        Self::constant(0.0, 0.0).expect("zero weights are valid")
    }

    #[inline]
    pub fn eval(&self, x: Point) -> [f64; 2] {
        [self.mu1.eval(x), self.mu2.eval(x)]
    }
}

/// Outcome of a hypothesis check; `passed ⇔ margin > 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub name: String,
    pub passed: bool,
    pub worst_point: Option<Point>,
    pub margin: f64,
}

impl HypothesisReport {
    pub(crate) fn from_margin(name: &str, margin: f64, worst_point: Option<Point>) -> Self {
        HypothesisReport { name: name.to_string(), passed: margin > 0.0, worst_point, margin }
    }
}

/// A sup-type constant estimated from finitely many sample pairs; a lower
/// bound of the true constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampledConstant {
    pub value: f64,
    pub pair_count: usize,
}

/// Sobolev critical exponent `N p(x) / (N − p(x))`.
pub fn critical_exponent(p: &ScalarField, n: usize, x: Point) -> Result<f64> {
    let pv = p.eval(x);
    let nf = n as f64;
    if pv >= nf {
        return Err(Error::Domain(format!("critical exponent undefined for p = {pv} ≥ N = {n}")));
    }
    if pv <= 1.0 {
        return Err(Error::Contract(format!("p = {pv} must exceed 1")));
    }
    Ok(nf * pv / (nf - pv))
}

/// Reduction helper: (smallest slack, point attaining it).
fn min_slack(samples: &[Point], slack: impl Fn(Point) -> f64 + Sync) -> (f64, Option<Point>) {
    samples
        .par_iter()
        .map(|&x| (slack(x), Some(x)))
        .reduce(
            || (f64::INFINITY, None),
            |a, b| {
                // ties resolved lexicographically so the result is order independent
                if a.0 < b.0 || (a.0 == b.0 && lex_le(a.1, b.1)) {
                    a
                } else {
                    b
                }
            },
        )
}

fn lex_le(a: Option<Point>, b: Option<Point>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a[0], a[1]) <= (b[0], b[1]),
        (Some(_), None) => true,
        (None, _) => false,
    }
}

/// Checks `1 < p < N`, `p < q < r < p*`, `μ₁, μ₂ ≥ 0` at every sample.
///
/// The margin is the smallest strict-inequality slack minus [`STRICT_SLACK`];
/// a negative weight makes the margin negative.
pub fn check_h1(exp: &ExponentTriple, w: &WeightPair, n: usize, samples: &[Point]) -> Result<HypothesisReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("check_h1".into()));
    }
    let nf = n as f64;
    let (slack, worst) = min_slack(samples, |x| {
        let [p, q, r] = exp.eval(x);
        let [m1, m2] = w.eval(x);
        let p_star = if p < nf { nf * p / (nf - p) } else { f64::NEG_INFINITY };
        let mut s = (p - 1.0).min(nf - p).min(q - p).min(r - q).min(p_star - r);
        if m1 < 0.0 {
            s = s.min(m1);
        }
        if m2 < 0.0 {
            s = s.min(m2);
        }
        s
    });
    Ok(HypothesisReport::from_margin("H1", slack - STRICT_SLACK, worst))
}

/// Checks `sup q/p < 1 + σ/N` and `sup r/p < 1 + σ/N`.
pub fn check_hprime(exp: &ExponentTriple, sigma: f64, n: usize, samples: &[Point]) -> Result<HypothesisReport> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::Contract(format!("σ = {sigma} must lie in (0, 1]")));
    }
    if samples.is_empty() {
        return Err(Error::EmptySamples("check_hprime".into()));
    }
    let limit = 1.0 + sigma / n as f64;
    let (slack, worst) = min_slack(samples, |x| {
        let [p, q, r] = exp.eval(x);
        (limit - q / p).min(limit - r / p)
    });
    Ok(HypothesisReport::from_margin("H'", slack - STRICT_SLACK, worst))
}

fn pair_max(samples: &[Point], term: impl Fn(Point, Point) -> Option<f64> + Sync) -> (f64, usize) {
    (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0_f64;
            let mut count = 0usize;
            for j in (i + 1)..samples.len() {
                if let Some(v) = term(samples[i], samples[j]) {
                    best = best.max(v);
                    count += 1;
                }
            }
            (best, count)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1))
}

/// Sampled Hölder constant `max |f(x) − f(y)| / |x − y|^σ` over all sample
/// pairs. This is a lower bound of the true constant.
pub fn estimate_holder_constant(f: &ScalarField, sigma: f64, samples: &[Point]) -> Result<SampledConstant> {
    let (value, pair_count) = pair_max(samples, |x, y| {
        let d = dist(x, y);
        (d > 0.0).then(|| (f.eval(x) - f.eval(y)).abs() / d.powf(sigma))
    });
    if pair_count == 0 {
        return Err(Error::EmptySamples("need at least two distinct samples".into()));
    }
    Ok(SampledConstant { value, pair_count })
}

/// Smallest `d₀` with `|f(x) − f(y)| ≤ d₀ / |log |x − y||` over sample pairs
/// closer than 1/2.
pub fn check_log_holder(f: &ScalarField, samples: &[Point]) -> Result<SampledConstant> {
    let (value, pair_count) = pair_max(samples, |x, y| {
        let d = dist(x, y);
        (d > 0.0 && d < 0.5).then(|| (f.eval(x) - f.eval(y)).abs() * d.ln().abs())
    });
    if pair_count == 0 {
        return Err(Error::NoAdmissiblePairs);
    }
    Ok(SampledConstant { value, pair_count })
}

/// Largest admissible radius `R₀ ∈ (0, 1]` with
/// `R₀^σ ≤ p₀ (1 + σ/N − sup r/p) / (2^{1+σ} L_r)`.
pub fn compute_r0(p0: f64, sigma: f64, n: usize, l_r: f64, sup_ratio_rp: f64) -> Result<f64> {
    let limit = 1.0 + sigma / n as f64;
    if sup_ratio_rp >= limit {
        return Err(Error::HPrimeViolated { sup_ratio: sup_ratio_rp, limit });
    }
    if p0 <= 1.0 || !(sigma > 0.0) || l_r < 0.0 {
        return Err(Error::Contract(format!("compute_r0 needs p0 > 1, σ > 0, L_r ≥ 0 (got {p0}, {sigma}, {l_r})")));
    }
    if l_r == 0.0 {
        return Ok(1.0);
    }
    let bound = p0 * (limit - sup_ratio_rp) / (2f64.powf(1.0 + sigma) * l_r);
    Ok(bound.powf(1.0 / sigma).min(1.0))
}

/// Enforces `R₀^σ < (1−d)/d · p₀ / (2^σ max{L_p, L_q, L_r})` on top of `r0`.
pub fn tighten_r0(r0: f64, p0: f64, sigma: f64, d: f64, l_max: f64) -> Result<f64> {
    if !(d > 0.0 && d < 1.0) || !(l_max > 0.0) {
        return Err(Error::Contract(format!("tighten_r0 needs 0 < d < 1 and L_max > 0 (got {d}, {l_max})")));
    }
    let bound = ((1.0 - d) / d * p0 / (2f64.powf(sigma) * l_max)).powf(1.0 / sigma) * (1.0 - 1e-9);
    Ok(r0.min(bound))
}
