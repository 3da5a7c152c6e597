//! The three-term N-function, its modular, the Luxemburg norm and the
//! inequality checks that relate them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponent::{ExponentTriple, WeightPair};
use crate::field::{Point, ScalarField};
use crate::quadrature::QuadratureMeasure;

/// Default relative tolerance of the Luxemburg root-finder.
pub const DEFAULT_REL_TOL: f64 = 1e-10;
/// Tolerance used by the norm/modular property checks.
pub const PROPERTY_TOL: f64 = 1e-8;

const MAX_DOUBLINGS: usize = 200;

/// `𝒯(x, t) = t^p + μ₁ t^q + μ₂ t^r`.
#[derive(Debug, Clone)]
pub struct PhaseFunction {
    pub exp: ExponentTriple,
    pub w: WeightPair,
}

/// Exponents and weights frozen at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseAt {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl PhaseAt {
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        t.powf(self.p) + self.mu1 * t.powf(self.q) + self.mu2 * t.powf(self.r)
    }

    /// `t^p/p + μ₁ t^q/q + μ₂ t^r/r`, the energy density.
    #[inline]
    pub fn energy_density(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        t.powf(self.p) / self.p + self.mu1 * t.powf(self.q) / self.q + self.mu2 * t.powf(self.r) / self.r
    }
}

impl PhaseFunction {
    pub fn new(exp: ExponentTriple, w: WeightPair) -> Self {
        PhaseFunction { exp, w }
    }

    #[inline]
    pub fn at(&self, x: Point) -> PhaseAt {
        let [p, q, r] = self.exp.eval(x);
        let [mu1, mu2] = self.w.eval(x);
        PhaseAt { p, q, r, mu1, mu2 }
    }

    pub fn at_points(&self, points: &[Point]) -> Vec<PhaseAt> {
        points.iter().map(|&x| self.at(x)).collect()
    }

    /// `(p⁻, r⁺)` widened by the values met at `points`.
    pub fn exponent_range(&self, points: &[Point]) -> (f64, f64) {
        points.iter().fold((self.exp.p_minus, self.exp.r_plus), |(lo, hi), &x| {
            let [p, _, r] = self.exp.eval(x);
            (lo.min(p), hi.max(r))
        })
    }
}

/// Evaluates `𝒯(x, t)`.
pub fn t_value(tf: &PhaseFunction, x: Point, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Contract(format!("𝒯(x, t) needs t ≥ 0, got {t}")));
    }
    Ok(tf.at(x).value(t))
}

fn check_len(u: &[f64], quad: &QuadratureMeasure) -> Result<()> {
    if u.len() != quad.len() {
        return Err(Error::Contract(format!("{} values for {} quadrature points", u.len(), quad.len())));
    }
    Ok(())
}

/// `ρ(u) = ∫ 𝒯(x, |u|)` where `u` holds the values at the quadrature points.
pub fn modular(tf: &PhaseFunction, u: &[f64], quad: &QuadratureMeasure) -> Result<f64> {
    check_len(u, quad)?;
    let phases = tf.at_points(&quad.points);
    modular_scaled(&phases, u, quad, 1.0)
}

fn modular_scaled(phases: &[PhaseAt], u: &[f64], quad: &QuadratureMeasure, scale: f64) -> Result<f64> {
    quad.integrate(|k| phases[k].value((scale * u[k]).abs()))
}

/// Result of a Luxemburg norm computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModularReport {
    pub modular_value: f64,
    pub luxemburg_norm: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
}

/// Finds `α` with `m(1/α) = 1` for a modular `m(β) = ρ(βu)` that grows
/// between `β^lo_exp` and `β^hi_exp`.
fn luxemburg_root(
    m: impl Fn(f64) -> Result<f64>,
    rho: f64,
    lo_exp: f64,
    hi_exp: f64,
    rel_tol: f64,
) -> Result<ModularReport> {
    if !(rel_tol > 0.0) {
        return Err(Error::Contract(format!("rel_tol must be positive, got {rel_tol}")));
    }
    if rho == 0.0 {
        return Ok(ModularReport { modular_value: 0.0, luxemburg_norm: 0.0, bracket: (0.0, 0.0), iterations: 0 });
    }
    let a = rho.powf(1.0 / lo_exp);
    let b = rho.powf(1.0 / hi_exp);
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut doublings = 0;
    while m(1.0 / lo)? < 1.0 {
        lo *= 0.5;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::NormBracket);
        }
    }
    while m(1.0 / hi)? > 1.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::NormBracket);
        }
    }
    let bracket = (lo, hi);
    // |d log m / d log α| ≤ hi_exp, so this width keeps |m − 1| ≤ rel_tol
    let width = rel_tol / (2.0 * hi_exp.max(1.0));
    let mut iterations = 0;
    while hi / lo - 1.0 > width && iterations < 400 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if m(1.0 / mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(ModularReport { modular_value: rho, luxemburg_norm: (lo * hi).sqrt(), bracket, iterations })
}

/// Luxemburg norm `inf{α > 0 : ρ(u/α) ≤ 1}` by bisection in log scale,
/// seeded from the power bounds between norm and modular.
pub fn luxemburg_norm(tf: &PhaseFunction, u: &[f64], quad: &QuadratureMeasure, rel_tol: f64) -> Result<ModularReport> {
    check_len(u, quad)?;
    let phases = tf.at_points(&quad.points);
    let (p_lo, r_hi) = tf.exponent_range(&quad.points);
    let rho = modular_scaled(&phases, u, quad, 1.0)?;
    luxemburg_root(|beta| modular_scaled(&phases, u, quad, beta), rho, p_lo, r_hi, rel_tol)
}

/// Luxemburg seminorm of `∫ weight · |u|^exponent`.
pub fn weighted_seminorm(
    exponent: &ScalarField,
    weight: &ScalarField,
    u: &[f64],
    quad: &QuadratureMeasure,
    rel_tol: f64,
) -> Result<f64> {
    check_len(u, quad)?;
    let e: Vec<f64> = quad.points.iter().map(|&x| exponent.eval(x)).collect();
    let w: Vec<f64> = quad.points.iter().map(|&x| weight.eval(x)).collect();
    if let Some(k) = w.iter().position(|&v| v < 0.0) {
        let x = quad.points[k];
        return Err(Error::Contract(format!("negative weight at ({}, {})", x[0], x[1])));
    }
    let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let m = |beta: f64| {
        quad.integrate(|k| {
            let t = (beta * u[k]).abs();
            if t == 0.0 || w[k] == 0.0 {
                0.0
            } else {
                w[k] * t.powf(e[k])
            }
        })
    };
    let rho = m(1.0)?;
    Ok(luxemburg_root(m, rho, lo, hi, rel_tol)?.luxemburg_norm)
}

/// One measured inequality inside a [`PropertyReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyItem {
    pub name: String,
    /// False when the premise of the item does not apply to the input.
    pub applicable: bool,
    pub slack: f64,
    pub passed: bool,
}

/// Measured slacks of a family of inequalities. `statistic` is the
/// check-specific summary (max ratio, η̂, or worst slack).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub name: String,
    pub passed: bool,
    pub statistic: f64,
    pub samples: usize,
    pub items: Vec<PropertyItem>,
}

impl PropertyReport {
    fn from_items(name: &str, statistic: f64, samples: usize, items: Vec<PropertyItem>) -> Self {
        let passed = items.iter().all(|i| i.passed);
        PropertyReport { name: name.to_string(), passed, statistic, samples, items }
    }

    pub fn worst_slack(&self) -> f64 {
        self.items.iter().filter(|i| i.applicable).map(|i| i.slack).fold(f64::INFINITY, f64::min)
    }
}

fn item(name: &str, applicable: bool, slack: f64, tol: f64) -> PropertyItem {
    let slack = if applicable { slack } else { 0.0 };
    PropertyItem { name: name.to_string(), applicable, slack, passed: !applicable || slack >= -tol }
}

/// Evaluates the eight norm/modular relations on `u`. Slacks are relative
/// to `max(1, ρ)`; the limit statements are exercised along scalings of `u`.
pub fn check_norm_modular_relations(tf: &PhaseFunction, u: &[f64], quad: &QuadratureMeasure) -> Result<PropertyReport> {
    check_len(u, quad)?;
    let phases = tf.at_points(&quad.points);
    let (p_lo, r_hi) = tf.exponent_range(&quad.points);
    let rho_of = |beta: f64| modular_scaled(&phases, u, quad, beta);
    let rho = rho_of(1.0)?;
    let rep = luxemburg_root(rho_of, rho, p_lo, r_hi, DEFAULT_REL_TOL)?;
    let norm = rep.luxemburg_norm;
    let tol = PROPERTY_TOL;
    let rel = |v: f64, scale: f64| v / scale.max(1.0);
    let mut items = Vec::with_capacity(8);

    let nonzero = norm > 0.0;
    let unit = if nonzero { (rho_of(1.0 / norm)? - 1.0).abs() } else { 0.0 };
    items.push(item("unit sphere", nonzero, -unit, tol));

    let a = norm - 1.0;
    let b = rho - 1.0;
    let trichotomy = if a > 0.0 {
        b
    } else if a < 0.0 {
        -b
    } else {
        -b.abs()
    };
    items.push(item("unit ball", true, rel(trichotomy, rho), tol));

    let small = nonzero && norm < 1.0;
    let s3 = (rho - norm.powf(r_hi)).min(norm.powf(p_lo) - rho);
    items.push(item("power bounds below 1", small, rel(s3, rho), tol));

    let large = norm > 1.0;
    let s4 = (rho - norm.powf(p_lo)).min(norm.powf(r_hi) - rho);
    items.push(item("power bounds above 1", large, rel(s4, rho), tol));

    // scalings c·u with prescribed norms c·‖u‖ → 0, → ∞ and → 1
    let mut s5 = f64::INFINITY;
    let mut s6 = f64::INFINITY;
    let mut s7 = f64::INFINITY;
    let mut s8 = f64::INFINITY;
    if nonzero {
        let mut last = f64::INFINITY;
        for k in 1..=6 {
            let target = 10f64.powi(-k);
            let r = rho_of(target / norm)?;
            s5 = s5.min(rel(target.powf(p_lo) - r, r)).min(last - r);
            last = r;
        }
        let mut last = 0.0;
        for k in 1..=6 {
            let target = 10f64.powi(k);
            let r = rho_of(target / norm)?;
            s6 = s6.min((r - target.powf(p_lo)) / r.max(1.0)).min(rel(r - last, r));
            last = r;
        }
        for k in 1..=6 {
            let h = 10f64.powi(-k);
            for target in [1.0 - h, 1.0 + h] {
                let r = rho_of(target / norm)?;
                let bound = (target.powf(p_lo) - 1.0).abs().max((target.powf(r_hi) - 1.0).abs());
                s7 = s7.min(bound - (r - 1.0).abs());
            }
            let r = rho_of(1.0 + h)?;
            let bound = ((1.0 + h).powf(r_hi) - 1.0) * rho;
            s8 = s8.min(rel(bound - (r - rho), rho));
        }
    }
    items.push(item("vanishing norm", nonzero, s5, tol));
    items.push(item("diverging norm", nonzero, s6, tol));
    items.push(item("norm tending to one", nonzero, s7, tol));
    items.push(item("continuity", nonzero, s8, tol));

    let worst = items.iter().filter(|i| i.applicable).map(|i| i.slack).fold(f64::INFINITY, f64::min);
    let statistic = if worst.is_finite() { worst } else { 0.0 };
    Ok(PropertyReport::from_items("norm-modular", statistic, quad.len(), items))
}

/// Deterministic `(x, t, s)` draws: `x` from `points`, `t`, `s` log-uniform
/// in `[1e-6, 1e3]`.
pub fn log_uniform_samples(points: &[Point], n: usize, seed: u64) -> Result<Vec<(Point, f64, f64)>> {
    if points.is_empty() {
        return Err(Error::EmptySamples("no sample locations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (1e-6f64.ln(), 1e3f64.ln());
    Ok((0..n)
        .map(|_| {
            let x = points[rng.gen_range(0..points.len())];
            let t = rng.gen_range(lo..=hi).exp();
            let s = rng.gen_range(lo..=hi).exp();
            (x, t, s)
        })
        .collect())
}

/// `𝒯(x, 2t) ≤ 2^{r⁺} 𝒯(x, t)` at every sample; statistic is the largest ratio.
pub fn check_delta2(tf: &PhaseFunction, samples: &[(Point, f64)]) -> Result<PropertyReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("check_delta2".into()));
    }
    let r_plus = samples.iter().fold(tf.exp.r_plus, |m, s| m.max(tf.exp.r.eval(s.0)));
    let c = 2f64.powf(r_plus);
    let mut max_ratio = 0.0_f64;
    for &(x, t) in samples {
        if !(t > 0.0) {
            return Err(Error::Contract(format!("Δ₂ samples need t > 0, got {t}")));
        }
        let ph = tf.at(x);
        max_ratio = max_ratio.max(ph.value(2.0 * t) / ph.value(t));
    }
    let items = vec![item("delta2", true, (c - max_ratio) / c, 1e-12)];
    Ok(PropertyReport::from_items("delta2", max_ratio, samples.len(), items))
}

/// `𝒯(x, t+s) ≤ C_Δ (𝒯(x,t) + 𝒯(x,s))` with `C_Δ = 2^{r⁺}`.
pub fn check_subadditivity(tf: &PhaseFunction, samples: &[(Point, f64, f64)]) -> Result<PropertyReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("check_subadditivity".into()));
    }
    let r_plus = samples.iter().fold(tf.exp.r_plus, |m, s| m.max(tf.exp.r.eval(s.0)));
    let c = 2f64.powf(r_plus);
    let mut max_ratio = 0.0_f64;
    for &(x, t, s) in samples {
        if !(t >= 0.0 && s >= 0.0) {
            return Err(Error::Contract(format!("subadditivity samples need t, s ≥ 0, got {t}, {s}")));
        }
        let ph = tf.at(x);
        let den = ph.value(t) + ph.value(s);
        if den > 0.0 {
            max_ratio = max_ratio.max(ph.value(t + s) / den);
        }
    }
    let items = vec![item("subadditivity", true, (c - max_ratio) / c, 1e-12)];
    Ok(PropertyReport::from_items("subadditivity", max_ratio, samples.len(), items))
}

/// Empirical modulus `η̂ = min 1 − 2𝒯(x,(t+s)/2)/(𝒯(x,t)+𝒯(x,s))` over samples
/// with `|t − s| > ε max(t, s)`; passes iff `η̂ > 0`.
pub fn check_uniform_convexity(tf: &PhaseFunction, eps: f64, samples: &[(Point, f64, f64)]) -> Result<PropertyReport> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("ε must be positive, got {eps}")));
    }
    let mut eta = f64::INFINITY;
    let mut used = 0;
    for &(x, t, s) in samples {
        if (t - s).abs() <= eps * t.max(s) {
            continue;
        }
        let ph = tf.at(x);
        eta = eta.min(1.0 - 2.0 * ph.value(0.5 * (t + s)) / (ph.value(t) + ph.value(s)));
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptySamples("no samples with |t − s| > ε·max(t, s)".into()));
    }
    let items = vec![PropertyItem { name: "uniform convexity".into(), applicable: true, slack: eta, passed: eta > 0.0 }];
    Ok(PropertyReport::from_items("uniform-convexity", eta, used, items))
}

/// `‖u‖_{q,μ₁} ≤ ‖u‖_𝒯` and `‖u‖_{r,μ₂} ≤ ‖u‖_𝒯` within `1e-8`.
pub fn check_seminorm_domination(tf: &PhaseFunction, u: &[f64], quad: &QuadratureMeasure) -> Result<PropertyReport> {
    let norm = luxemburg_norm(tf, u, quad, DEFAULT_REL_TOL)?.luxemburg_norm;
    let s1 = weighted_seminorm(&tf.exp.q, &tf.w.mu1, u, quad, DEFAULT_REL_TOL)?;
    let s2 = weighted_seminorm(&tf.exp.r, &tf.w.mu2, u, quad, DEFAULT_REL_TOL)?;
    let items = vec![
        item("q-seminorm", true, norm - s1, PROPERTY_TOL),
        item("r-seminorm", true, norm - s2, PROPERTY_TOL),
    ];
    Ok(PropertyReport::from_items("seminorm-domination", (norm - s1).min(norm - s2), quad.len(), items))
}
