//! Simulated randomized trials with closed-form ground truth.
//!
//! Covariates are iid standard normal, treatment is an exact 1:1 random
//! permutation, and noise is shared across the potential-outcome branches of
//! each unit. Heterogeneity, where present, lives on `x1 > 0` and `x2 > 0`
//! through `kappa(x) = x1·1(x1>0) + x2·1(x2>0)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::effects::EffectKind;
use crate::error::{Error, Result};
use crate::learners::{ModelRole, OracleModel};
use crate::linalg::Matrix;
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScenarioId {
    Simple,
    Complex,
    Global,
    Null,
    SimpleAll,
    SimplePart,
    ComplexAll,
    ComplexPart,
    SimpleNull1,
    SimpleNull2,
    SimpleGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    NoMediator,
    Mediator,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 11] = [
        ScenarioId::Simple,
        ScenarioId::Complex,
        ScenarioId::Global,
        ScenarioId::Null,
        ScenarioId::SimpleAll,
        ScenarioId::SimplePart,
        ScenarioId::ComplexAll,
        ScenarioId::ComplexPart,
        ScenarioId::SimpleNull1,
        ScenarioId::SimpleNull2,
        ScenarioId::SimpleGlobal,
    ];

    pub fn family(self) -> Family {
        match self {
            ScenarioId::Simple | ScenarioId::Complex | ScenarioId::Global | ScenarioId::Null => {
                Family::NoMediator
            }
            _ => Family::Mediator,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ScenarioId::Simple => "simple",
            ScenarioId::Complex => "complex",
            ScenarioId::Global => "global",
            ScenarioId::Null => "null",
            ScenarioId::SimpleAll => "simple-all",
            ScenarioId::SimplePart => "simple-part",
            ScenarioId::ComplexAll => "complex-all",
            ScenarioId::ComplexPart => "complex-part",
            ScenarioId::SimpleNull1 => "simple-null1",
            ScenarioId::SimpleNull2 => "simple-null2",
            ScenarioId::SimpleGlobal => "simple-global",
        }
    }

    /// The effect the pipeline estimates for this scenario.
    pub fn effect_kind(self) -> EffectKind {
        match self.family() {
            Family::NoMediator => EffectKind::Total,
            Family::Mediator => EffectKind::Indirect,
        }
    }

    /// Whether the targeted effect is identically zero.
    pub fn is_null(self) -> bool {
        matches!(
            self,
            ScenarioId::Null | ScenarioId::SimpleNull1 | ScenarioId::SimpleNull2
        )
    }

    fn is_logistic(self) -> bool {
        matches!(
            self,
            ScenarioId::Complex | ScenarioId::ComplexAll | ScenarioId::ComplexPart
        )
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.slug() == norm)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

impl TryFrom<String> for ScenarioId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScenarioId> for String {
    fn from(id: ScenarioId) -> String {
        id.slug().to_string()
    }
}

/// Named noise levels and their variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseLevel {
    Low,
    Moderate,
    High,
}

impl NoiseLevel {
    pub fn variance(self) -> f64 {
        match self {
            NoiseLevel::Low => 0.01,
            NoiseLevel::Moderate => 0.1,
            NoiseLevel::High => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
    #[serde(default)]
    pub seed: u64,
    /// Overrides for the scenario's intercepts and mediator coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

fn default_n() -> usize {
    1000
}
fn default_d() -> usize {
    10
}
fn default_noise() -> f64 {
    0.01
}

impl ScenarioConfig {
    pub fn new(id: ScenarioId) -> Self {
        ScenarioConfig {
            id,
            n: default_n(),
            d: default_d(),
            noise_variance: default_noise(),
            seed: 0,
            b: None,
            b1: None,
            b2: None,
            c: None,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_d(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, variance: f64) -> Self {
        self.noise_variance = variance;
        self
    }

    pub fn family(&self) -> Family {
        self.id.family()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::Config(format!("n={} is below the minimum of 4", self.n)));
        }
        if self.d < 4 {
            return Err(Error::Config(format!(
                "d={} but the scenario functions use x1..x4",
                self.d
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config(format!(
                "noise variance {} must be finite and non-negative",
                self.noise_variance
            )));
        }
        Ok(())
    }

    fn structure(&self) -> Structure {
        use ScenarioId::*;
        let id = self.id;
        match id.family() {
            Family::NoMediator => {
                let (eta, kappa) = match id {
                    Simple | Complex => (Eta::HalfX12PlusX34, Kappa::Heterogeneous),
                    Global => (Eta::X34, Kappa::One),
                    _ => (Eta::X34, Kappa::Zero),
                };
                Structure::NoMediator {
                    eta,
                    kappa,
                    b: self.b.unwrap_or(1.0),
                    logistic: id.is_logistic(),
                }
            }
            Family::Mediator => {
                let (kappa1, kappa2, c) = match id {
                    SimpleAll | ComplexAll => (Kappa::Heterogeneous, Kappa::Zero, 1.0),
                    SimplePart | ComplexPart => (Kappa::Heterogeneous, Kappa::Heterogeneous, 1.0),
                    SimpleNull1 => (Kappa::Zero, Kappa::Heterogeneous, 1.0),
                    SimpleNull2 => (Kappa::Zero, Kappa::Heterogeneous, 0.0),
                    _ => (Kappa::One, Kappa::Zero, 1.0),
                };
                Structure::Mediator {
                    kappa1,
                    kappa2,
                    b1: self.b1.unwrap_or(0.0),
                    b2: self.b2.unwrap_or(1.0),
                    c: self.c.unwrap_or(c),
                    logistic: id.is_logistic(),
                }
            }
        }
    }

    /// Potential mediator `M(w)` at `x` with mediator noise `e1`.
    pub fn mediator_value(&self, w: u8, x: &[f64], e1: f64) -> f64 {
        match self.structure() {
            Structure::Mediator { kappa1, b1, .. } => {
                Eta::HalfX12PlusX34.eval(x) + arm_sign(w) * kappa1.eval(x) + b1 + e1
            }
            Structure::NoMediator { .. } => 0.0,
        }
    }

    /// Potential outcome `Y(w, m)` (mediator family) or `Y(w)` (the
    /// mediator argument is ignored) with outcome noise `e`.
    pub fn outcome_value(&self, w: u8, x: &[f64], m: f64, e: f64) -> f64 {
        let (lin, logistic) = match self.structure() {
            Structure::NoMediator {
                eta,
                kappa,
                b,
                logistic,
            } => (eta.eval(x) + arm_sign(w) * kappa.eval(x) + b + e, logistic),
            Structure::Mediator {
                kappa2,
                b2,
                c,
                logistic,
                ..
            } => (
                0.5 * (x[2] + x[3]) + arm_sign(w) * kappa2.eval(x) + b2 + c * m + e,
                logistic,
            ),
        };
        if logistic {
            1.0 / (1.0 + lin.exp())
        } else {
            lin
        }
    }

    /// Noise-free total effect `Y(1, M(1)) - Y(0, M(0))`.
    pub fn total_effect(&self, x: &[f64]) -> f64 {
        self.total_effect_with_noise(x, 0.0, 0.0)
    }

    /// Noise-free indirect effect `Y(1, M(1)) - Y(1, M(0))`; zero for the
    /// no-mediator family.
    pub fn indirect_effect(&self, x: &[f64]) -> f64 {
        self.indirect_effect_with_noise(x, 0.0, 0.0)
    }

    fn total_effect_with_noise(&self, x: &[f64], e1: f64, e2: f64) -> f64 {
        let m1 = self.mediator_value(1, x, e1);
        let m0 = self.mediator_value(0, x, e1);
        self.outcome_value(1, x, m1, e2) - self.outcome_value(0, x, m0, e2)
    }

    fn indirect_effect_with_noise(&self, x: &[f64], e1: f64, e2: f64) -> f64 {
        if self.family() == Family::NoMediator {
            return 0.0;
        }
        let m1 = self.mediator_value(1, x, e1);
        let m0 = self.mediator_value(0, x, e1);
        self.outcome_value(1, x, m1, e2) - self.outcome_value(1, x, m0, e2)
    }

    /// The scenario's targeted effect: total without a mediator, indirect with.
    pub fn primary_effect(&self, x: &[f64]) -> f64 {
        match self.family() {
            Family::NoMediator => self.total_effect(x),
            Family::Mediator => self.indirect_effect(x),
        }
    }
}

#[inline]
fn arm_sign(w: u8) -> f64 {
    0.5 * (2.0 * f64::from(w) - 1.0)
}

#[derive(Debug, Clone, Copy)]
enum Eta {
    HalfX12PlusX34,
    X34,
}

impl Eta {
    fn eval(self, x: &[f64]) -> f64 {
        match self {
            Eta::HalfX12PlusX34 => 0.5 * (x[0] + x[1]) + x[2] + x[3],
            Eta::X34 => x[2] + x[3],
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kappa {
    Heterogeneous,
    One,
    Zero,
}

impl Kappa {
    fn eval(self, x: &[f64]) -> f64 {
        match self {
            Kappa::Heterogeneous => heterogeneous_kappa(x),
            Kappa::One => 1.0,
            Kappa::Zero => 0.0,
        }
    }
}

/// `x1·1(x1 > 0) + x2·1(x2 > 0)`
pub fn heterogeneous_kappa(x: &[f64]) -> f64 {
    x[0].max(0.0) + x[1].max(0.0)
}

/// Membership in the true heterogeneous region `x1 > 0 ∧ x2 > 0`.
pub fn in_heterogeneous_region(x: &[f64]) -> bool {
    x[0] > 0.0 && x[1] > 0.0
}

enum Structure {
    NoMediator {
        eta: Eta,
        kappa: Kappa,
        b: f64,
        logistic: bool,
    },
    Mediator {
        kappa1: Kappa,
        kappa2: Kappa,
        b1: f64,
        b2: f64,
        c: f64,
        logistic: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub true_tau_tot: Vec<f64>,
    /// Present for the mediator family.
    pub true_tau_ite: Option<Vec<f64>>,
    pub region_indicator: Vec<bool>,
}

impl GroundTruth {
    pub const REGION: &'static str = "x1 > 0 & x2 > 0";

    /// The truth matching the scenario's targeted effect.
    pub fn primary(&self) -> &[f64] {
        self.true_tau_ite.as_deref().unwrap_or(&self.true_tau_tot)
    }

    pub fn region_indices(&self) -> Vec<usize> {
        self.region_indicator
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
        w.write_record(["unit_index", "tau_tot", "tau_ite", "in_region"])?;
        for i in 0..self.true_tau_tot.len() {
            w.write_record([
                i.to_string(),
                self.true_tau_tot[i].to_string(),
                self.true_tau_ite
                    .as_ref()
                    .map_or(String::new(), |v| v[i].to_string()),
                u8::from(self.region_indicator[i]).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

struct Draws {
    x: Matrix,
    w: Vec<u8>,
    e1: Vec<f64>,
    e2: Vec<f64>,
}

fn draw(cfg: &ScenarioConfig) -> Draws {
    let mut rng = rng::rng_for(cfg.seed, streams::DATA);
    let (n, d) = (cfg.n, cfg.d);
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = Matrix::from_vec(n, d, data).expect("sized buffer");
    let mut w: Vec<u8> = (0..n).map(|i| u8::from(i < n.div_ceil(2))).collect();
    w.shuffle(&mut rng);
    let sd = cfg.noise_variance.sqrt();
    let mut noise = |_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
    let e1: Vec<f64> = (0..n).map(&mut noise).collect();
    let e2: Vec<f64> = match cfg.family() {
        Family::Mediator => (0..n).map(&mut noise).collect(),
        Family::NoMediator => Vec::new(),
    };
    Draws { x, w, e1, e2 }
}

pub fn gen_no_mediator(cfg: &ScenarioConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    if cfg.family() != Family::NoMediator {
        return Err(Error::Config(format!(
            "scenario `{}` belongs to the mediator family",
            cfg.id
        )));
    }
    let Draws { x, w, e1, .. } = draw(cfg);
    let n = cfg.n;
    let mut y = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut region = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.row(i);
        let y1 = cfg.outcome_value(1, xi, 0.0, e1[i]);
        let y0 = cfg.outcome_value(0, xi, 0.0, e1[i]);
        y.push(if w[i] == 1 { y1 } else { y0 });
        tau.push(y1 - y0);
        region.push(in_heterogeneous_region(xi));
    }
    let ds = Dataset::from_parts(x, w, y, None)?;
    Ok((
        ds,
        GroundTruth {
            true_tau_tot: tau,
            true_tau_ite: None,
            region_indicator: region,
        },
    ))
}

pub fn gen_mediator(cfg: &ScenarioConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    if cfg.family() != Family::Mediator {
        return Err(Error::Config(format!(
            "scenario `{}` has no mediator",
            cfg.id
        )));
    }
    let Draws { x, w, e1, e2 } = draw(cfg);
    let n = cfg.n;
    let mut m = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut tot = Vec::with_capacity(n);
    let mut ite = Vec::with_capacity(n);
    let mut region = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.row(i);
        let m1 = cfg.mediator_value(1, xi, e1[i]);
        let m0 = cfg.mediator_value(0, xi, e1[i]);
        let y11 = cfg.outcome_value(1, xi, m1, e2[i]);
        let y10 = cfg.outcome_value(1, xi, m0, e2[i]);
        let y00 = cfg.outcome_value(0, xi, m0, e2[i]);
        if w[i] == 1 {
            m.push(m1);
            y.push(y11);
        } else {
            m.push(m0);
            y.push(y00);
        }
        tot.push(y11 - y00);
        ite.push(y11 - y10);
        region.push(in_heterogeneous_region(xi));
    }
    let ds = Dataset::from_parts(x, w, y, Some(m))?;
    Ok((
        ds,
        GroundTruth {
            true_tau_tot: tot,
            true_tau_ite: Some(ite),
            region_indicator: region,
        },
    ))
}

/// Generate the dataset for any scenario.
pub fn generate(cfg: &ScenarioConfig) -> Result<(Dataset, GroundTruth)> {
    match cfg.family() {
        Family::NoMediator => gen_no_mediator(cfg),
        Family::Mediator => gen_mediator(cfg),
    }
}

/// Noise-free targeted effect at each row of `grid`.
pub fn true_effect_surface(cfg: &ScenarioConfig, grid: &Matrix) -> Result<Vec<f64>> {
    if grid.cols() != cfg.d {
        return Err(Error::Shape {
            expected: cfg.d,
            actual: grid.cols(),
        });
    }
    Ok((0..grid.rows()).map(|r| cfg.primary_effect(grid.row(r))).collect())
}

/// The scenario's own regression functions, usable as a base learner.
#[derive(Debug, Clone)]
pub struct ScenarioOracle {
    cfg: ScenarioConfig,
}

impl ScenarioOracle {
    pub fn new(cfg: ScenarioConfig) -> Self {
        ScenarioOracle { cfg }
    }
}

impl OracleModel for ScenarioOracle {
    fn name(&self) -> String {
        format!("scenario:{}", self.cfg.id)
    }

    fn evaluate(&self, role: ModelRole, x: &[f64]) -> f64 {
        let cfg = &self.cfg;
        match role {
            ModelRole::Outcome { arm } => {
                let m = cfg.mediator_value(arm, x, 0.0);
                cfg.outcome_value(arm, x, m, 0.0)
            }
            ModelRole::Mediator { arm } => cfg.mediator_value(arm, x, 0.0),
            ModelRole::OutcomeGivenMediator { arm } => {
                let (cov, m) = x.split_at(x.len() - 1);
                cfg.outcome_value(arm, cov, m[0], 0.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_and_global_truths() {
        let (_, t) = generate(&ScenarioConfig::new(ScenarioId::Null).with_seed(1)).unwrap();
        assert!(t.true_tau_tot.iter().all(|&v| v == 0.0));
        let (_, t) = generate(&ScenarioConfig::new(ScenarioId::Global).with_seed(1)).unwrap();
        assert!(t.true_tau_tot.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let (_, t) = generate(&ScenarioConfig::new(ScenarioId::SimpleNull2).with_seed(1)).unwrap();
        assert!(t.true_tau_ite.unwrap().iter().all(|&v| v == 0.0));
        let (_, t) = generate(&ScenarioConfig::new(ScenarioId::SimpleGlobal).with_seed(1)).unwrap();
        assert!(t.true_tau_ite.unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn exact_balance() {
        let (ds, _) = generate(&ScenarioConfig::new(ScenarioId::Simple).with_seed(3)).unwrap();
        let treated: usize = ds.treatment().iter().map(|&w| usize::from(w)).sum();
        assert_eq!(treated, 500);
        let (ds, _) =
            generate(&ScenarioConfig::new(ScenarioId::Simple).with_n(7).with_seed(3)).unwrap();
        let treated: usize = ds.treatment().iter().map(|&w| usize::from(w)).sum();
        assert_eq!(treated, 4);
    }

    #[test]
    fn region_frequency_near_quarter() {
        let (_, t) = generate(&ScenarioConfig::new(ScenarioId::Simple).with_seed(11)).unwrap();
        let count = t.region_indicator.iter().filter(|&&b| b).count();
        // 1000 * 1/4 with binomial sd ~13.7
        assert!((200..=300).contains(&count), "count {count}");
    }

    #[test]
    fn simple_all_region_truth_is_kappa() {
        let (ds, t) = generate(&ScenarioConfig::new(ScenarioId::SimpleAll).with_seed(2)).unwrap();
        let ite = t.true_tau_ite.unwrap();
        for i in 0..ds.n() {
            let x = ds.covariates().row(i);
            let expect = x[0].max(0.0) + x[1].max(0.0);
            assert!((ite[i] - expect).abs() < 1e-12);
            if t.region_indicator[i] {
                assert!(ite[i] > 0.0);
            }
        }
    }

    #[test]
    fn observed_matches_potential_outcome() {
        let cfg = ScenarioConfig::new(ScenarioId::SimplePart).with_seed(4).with_n(50);
        let (ds, _) = generate(&cfg).unwrap();
        let again = generate(&cfg).unwrap().0;
        assert_eq!(ds, again);
        // with zero noise the observed values equal the noise-free branches
        let cfg0 = cfg.clone().with_noise(0.0);
        let (ds0, _) = generate(&cfg0).unwrap();
        for i in 0..ds0.n() {
            let x = ds0.covariates().row(i);
            let w = ds0.treatment()[i];
            let m = cfg0.mediator_value(w, x, 0.0);
            assert_eq!(ds0.mediator().unwrap()[i], m);
            assert_eq!(ds0.outcome()[i], cfg0.outcome_value(w, x, m, 0.0));
        }
    }

    #[test]
    fn surface_values() {
        let mut point = vec![0.0; 10];
        point[0] = 1.0;
        point[1] = 1.0;
        let grid = Matrix::from_rows(&[point]).unwrap();
        let s = |id| true_effect_surface(&ScenarioConfig::new(id), &grid).unwrap()[0];
        assert!((s(ScenarioId::Simple) - 2.0).abs() < 1e-12);
        assert_eq!(s(ScenarioId::Null), 0.0);
        assert!((s(ScenarioId::Global) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_family_rejected() {
        assert!(gen_mediator(&ScenarioConfig::new(ScenarioId::Simple)).is_err());
        assert!(gen_no_mediator(&ScenarioConfig::new(ScenarioId::SimpleAll)).is_err());
        assert!(generate(&ScenarioConfig::new(ScenarioId::Simple).with_d(3)).is_err());
    }

    #[test]
    fn parse_ids() {
        assert_eq!("Simple-All".parse::<ScenarioId>().unwrap(), ScenarioId::SimpleAll);
        assert_eq!("simple_null2".parse::<ScenarioId>().unwrap(), ScenarioId::SimpleNull2);
        assert!("bogus".parse::<ScenarioId>().is_err());
    }
}
