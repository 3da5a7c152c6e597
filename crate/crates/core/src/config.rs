//! Strict JSON run configurations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::{ExponentTriple, WeightPair};
use crate::expr::Expr;
use crate::field::{Domain2D, Point, ScalarField};
use crate::mesh::{disk_mesh, structured_mesh, TriMesh};
use crate::modular::PhaseFunction;
use crate::operator::FluxParams;
use crate::regularity::{BallFamily, DEFAULT_DELTA, DEFAULT_M_GRID, DEFAULT_STABILITY_FACTOR};
use crate::solver::{GrowthConstants, PhaseProblem, SolverSettings, SourceTerm};

/// A scalar field: a number, an expression in `x1, x2`, or `{"affine": [a0, a1, a2]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Const(f64),
    Expr(String),
    Affine(AffineSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    pub affine: [f64; 3],
}

impl FieldSpec {
    pub fn build(&self) -> Result<ScalarField> {
        match self {
            FieldSpec::Const(c) => Ok(ScalarField::constant(*c)),
            FieldSpec::Expr(s) => ScalarField::expr(s),
            FieldSpec::Affine(a) => Ok(ScalarField::affine(a.affine)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Rectangle { lo: Point, hi: Point },
    Polygon { vertices: Vec<Point> },
    Disk { center: Point, radius: f64 },
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec::Rectangle { lo: [0.0, 0.0], hi: [1.0, 1.0] }
    }
}

impl DomainSpec {
    /// Polygon used for sampling fields; disks use a 96-gon.
    pub fn domain(&self) -> Result<Domain2D> {
        match self {
            DomainSpec::Rectangle { lo, hi } => Domain2D::rectangle(*lo, *hi),
            DomainSpec::Polygon { vertices } => Domain2D::new(vertices.clone()),
            DomainSpec::Disk { center, radius } => Domain2D::regular_polygon(*center, *radius, 96),
        }
    }

    pub fn mesh(&self, n: usize) -> Result<TriMesh> {
        match self {
            DomainSpec::Disk { center, radius } => disk_mesh(*center, *radius, n),
            _ => structured_mesh(&self.domain()?, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSpec {
    pub p: FieldSpec,
    pub q: FieldSpec,
    pub r: FieldSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub mu1: FieldSpec,
    pub mu2: FieldSpec,
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec { mu1: FieldSpec::Const(0.0), mu2: FieldSpec::Const(0.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsSpec {
    pub k: [f64; 6],
    pub m: FieldSpec,
    pub gamma: [f64; 3],
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        ConstantsSpec { k: [0.0; 6], m: FieldSpec::Const(2.0), gamma: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Expression in `x1, x2, t (or u), z1, z2`.
    pub f: String,
    #[serde(default)]
    pub constants: ConstantsSpec,
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec { f: "0".into(), constants: ConstantsSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSpec {
    pub n: usize,
    /// Number of uniform refinements (each doubles `n`).
    pub refinements: usize,
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec { n: 16, refinements: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BallFamilySpec {
    Random { count: usize, lo: Point, hi: Point, r2: (f64, f64), ratio: f64 },
    /// `[cx, cy, R1, R2]` rows.
    Pairs(Vec<[f64; 4]>),
}

impl Default for BallFamilySpec {
    fn default() -> Self {
        BallFamilySpec::Random { count: 20, lo: [0.3, 0.3], hi: [0.7, 0.7], r2: (0.1, 0.2), ratio: 0.5 }
    }
}

impl BallFamilySpec {
    pub fn build(&self, seed: u64) -> Result<BallFamily> {
        match self {
            BallFamilySpec::Random { count, lo, hi, r2, ratio } => BallFamily::random(*count, *lo, *hi, *r2, *ratio, seed),
            BallFamilySpec::Pairs(rows) => {
                let pairs: Vec<(Point, f64, f64)> = rows.iter().map(|r| ([r[0], r[1]], r[2], r[3])).collect();
                BallFamily::from_pairs(&pairs)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSpec {
    pub delta: f64,
    pub m_grid: Vec<f64>,
    pub balls: BallFamilySpec,
    /// Hölder exponent of the exponents; also used in `(H′)`.
    pub sigma: f64,
    /// Log-Hölder constant used to tighten `R₀`; `None` skips the tightening.
    pub d: Option<f64>,
    pub stability_factor: f64,
    /// Explicit function to probe instead of the computed minimizer.
    pub u: Option<String>,
    /// Dirichlet data of the minimizer.
    pub boundary: String,
    /// Random functions in the Poincaré sweep.
    pub samples: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            delta: DEFAULT_DELTA,
            m_grid: DEFAULT_M_GRID.to_vec(),
            balls: BallFamilySpec::default(),
            sigma: 1.0,
            d: None,
            stability_factor: DEFAULT_STABILITY_FACTOR,
            u: None,
            boundary: "x1*x2".into(),
            samples: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H3Threshold {
    One,
    InfMu1,
    InfMu2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesisSpec {
    /// Space dimension used in the critical exponent.
    pub dim: usize,
    /// Names among `H1`, `H2`, `H3`, `Hprime`.
    pub check: Vec<String>,
    pub h3_threshold: H3Threshold,
}

impl Default for HypothesisSpec {
    fn default() -> Self {
        HypothesisSpec { dim: 2, check: vec!["H1".into()], h3_threshold: H3Threshold::One }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenSpec {
    pub m: f64,
    pub tol: f64,
}

impl Default for EigenSpec {
    fn default() -> Self {
        EigenSpec { m: 2.0, tol: 1e-10 }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub domain: DomainSpec,
    pub exponents: ExponentSpec,
    #[serde(default)]
    pub weights: WeightSpec,
    #[serde(default)]
    pub source: SourceSpec,
    /// Dirichlet data; zero when absent.
    #[serde(default)]
    pub dirichlet: Option<String>,
    /// Exact solution for error tables.
    #[serde(default)]
    pub exact: Option<String>,
    #[serde(default)]
    pub mesh: MeshSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Outer iterations of the convection scheme.
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub hypotheses: HypothesisSpec,
    #[serde(default)]
    pub eigen: EigenSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_max_outer() -> usize {
    200
}

impl RunConfig {
    /// Parses JSON; syntax and schema errors carry the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config { line: e.line(), column: e.column(), message: e.to_string() })?;
        Ok(cfg)
    }

    pub fn domain(&self) -> Result<Domain2D> {
        self.domain.domain()
    }

    /// Meshes at `n, 2n, …` for every refinement level.
    pub fn meshes(&self) -> Result<Vec<Arc<TriMesh>>> {
        (0..=self.mesh.refinements).map(|k| Ok(Arc::new(self.domain.mesh(self.mesh.n << k)?))).collect()
    }

    pub fn phase(&self) -> Result<PhaseFunction> {
        let d = self.domain()?;
        let e = &self.exponents;
        let exp = ExponentTriple::on_domain(e.p.build()?, e.q.build()?, e.r.build()?, &d)?;
        let w = WeightPair::on_domain(self.weights.mu1.build()?, self.weights.mu2.build()?, &d)?;
        Ok(PhaseFunction::new(exp, w))
    }

    pub fn flux_params(&self) -> Result<FluxParams> {
        let tf = self.phase()?;
        let eps = match self.eps {
            Some(e) => e,
            None => FluxParams::natural_eps(&tf),
        };
        FluxParams::new(tf, eps)
    }

    pub fn source(&self) -> Result<SourceTerm> {
        let c = &self.source.constants;
        let constants = GrowthConstants { k: c.k, m_exponent: c.m.build()?, gamma: c.gamma };
        Ok(SourceTerm::from_expr(Expr::parse(&self.source.f)?).with_constants(constants))
    }

    pub fn problem(&self, mesh: Arc<TriMesh>) -> Result<PhaseProblem> {
        let prob = PhaseProblem::new(mesh, self.flux_params()?, self.source()?);
        match &self.dirichlet {
            Some(g) => {
                let g = ScalarField::expr(g)?;
                prob.with_dirichlet(|x| g.eval(x))
            }
            None => Ok(prob),
        }
    }

    pub fn exact(&self) -> Result<Option<ScalarField>> {
        self.exact.as_deref().map(ScalarField::expr).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"{
        "exponents": {"p": 2, "q": 2.1, "r": {"affine": [2.2, 0.0, 0.0]}},
        "weights": {"mu1": "x1", "mu2": 0.5},
        "source": {"f": "sin(pi*x1)", "constants": {"k": [0, 0, 0.3, 0.1, 0, 0]}},
        "mesh": {"n": 4}
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfig::from_json(BASIC).unwrap();
        assert_eq!(cfg.mesh.n, 4);
        assert_eq!(cfg.solver, SolverSettings::default());
        let tf = cfg.phase().unwrap();
        let ph = tf.at([0.25, 0.0]);
        assert_eq!((ph.p, ph.q, ph.r, ph.mu1, ph.mu2), (2.0, 2.1, 2.2, 0.25, 0.5));
        let prob = cfg.problem(cfg.meshes().unwrap()[0].clone()).unwrap();
        assert!(prob.source.is_frozen());
        assert_eq!(prob.source.constants.k[2], 0.3);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = BASIC.replacen("\"mesh\"", "\"msh\"", 1);
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config { .. })));
        let bad = BASIC.replacen("\"n\": 4", "\"n\": 4, \"m\": 2", 1);
        assert!(RunConfig::from_json(&bad).is_err());
        let bad = BASIC.replacen("\"affine\"", "\"afine\"", 1);
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn syntax_error_position() {
        match RunConfig::from_json("{\n  \"exponents\": ,\n}") {
            Err(Error::Config { line, column, .. }) => assert_eq!((line, column), (2, 16)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refinement_levels() {
        let mut cfg = RunConfig::from_json(BASIC).unwrap();
        cfg.mesh.refinements = 2;
        let m = cfg.meshes().unwrap();
        assert_eq!(m.iter().map(|m| m.num_vertices()).collect::<Vec<_>>(), vec![25, 81, 289]);
        cfg.domain = DomainSpec::Disk { center: [0.0, 0.0], radius: 1.0 };
        cfg.mesh.refinements = 0;
        assert!(cfg.meshes().unwrap()[0].num_vertices() > 0);
    }

    #[test]
    fn ball_specs() {
        let f = BallFamilySpec::Pairs(vec![[0.5, 0.5, 0.1, 0.2]]).build(0).unwrap();
        assert_eq!(f.pairing.len(), 1);
        assert_eq!(BallFamilySpec::default().build(7).unwrap().pairing.len(), 20);
    }
}
