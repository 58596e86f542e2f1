//! Per-unit effect estimation: the two-model estimator of the conditional
//! average total effect and the three-model estimator of the conditional
//! average indirect (mediated) effect.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{split_by_treatment, Dataset};
use crate::error::{Error, Result};
use crate::learners::{FittedModel, LearnerSpec, ModelRole};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Total,
    Indirect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectVector {
    values: Vec<f64>,
    kind: EffectKind,
    learner_fingerprint: String,
}

impl EffectVector {
    pub fn new(values: Vec<f64>, kind: EffectKind, learner_fingerprint: String) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite effect estimate at unit {i}"
            )));
        }
        Ok(EffectVector {
            values,
            kind,
            learner_fingerprint,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> EffectKind {
        self.kind
    }

    pub fn learner_fingerprint(&self) -> &str {
        &self.learner_fingerprint
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with columns `unit_index,tau_hat`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["unit_index", "tau_hat"])?;
        for (i, v) in self.values.iter().enumerate() {
            out.write_record([i.to_string(), v.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<effects>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// The fitted models behind one effect estimate.
#[derive(Debug, Clone)]
pub enum LearnerBundle {
    Total {
        control: FittedModel,
        treated: FittedModel,
    },
    Indirect {
        mediator_control: FittedModel,
        mediator_treated: FittedModel,
        outcome_treated: FittedModel,
    },
}

impl LearnerBundle {
    pub fn fit_total(ds: &Dataset, spec: &LearnerSpec) -> Result<Self> {
        let (c, t) = split_by_treatment(ds)?;
        let control = spec.fit(ModelRole::Outcome { arm: 0 }, &c.covariates(), &c.outcome())?;
        let treated = spec.fit(ModelRole::Outcome { arm: 1 }, &t.covariates(), &t.outcome())?;
        Ok(LearnerBundle::Total { control, treated })
    }

    /// Fits the two mediator models and the treated outcome-given-mediator
    /// model. Control-arm outcomes are never read.
    pub fn fit_indirect(ds: &Dataset, spec: &LearnerSpec) -> Result<Self> {
        if ds.mediator().is_none() {
            return Err(Error::Mode(
                "indirect effects need a mediator column".into(),
            ));
        }
        let (c, t) = split_by_treatment(ds)?;
        let m_c = c.mediator().expect("checked above");
        let m_t = t.mediator().expect("checked above");
        let x_t = t.covariates();
        let mediator_treated = spec.fit(ModelRole::Mediator { arm: 1 }, &x_t, &m_t)?;
        let mediator_control = spec.fit(ModelRole::Mediator { arm: 0 }, &c.covariates(), &m_c)?;
        let outcome_treated = spec.fit(
            ModelRole::OutcomeGivenMediator { arm: 1 },
            &x_t.with_column(&m_t)?,
            &t.outcome(),
        )?;
        Ok(LearnerBundle::Indirect {
            mediator_control,
            mediator_treated,
            outcome_treated,
        })
    }

    pub fn kind(&self) -> EffectKind {
        match self {
            LearnerBundle::Total { .. } => EffectKind::Total,
            LearnerBundle::Indirect { .. } => EffectKind::Indirect,
        }
    }

    /// Effect estimates at arbitrary covariate rows.
    pub fn effects(&self, x: &Matrix) -> Result<Vec<f64>> {
        let tau: Vec<f64> = match self {
            LearnerBundle::Total { control, treated } => {
                let g1 = treated.predict(x)?;
                let g0 = control.predict(x)?;
                g1.iter().zip(&g0).map(|(a, b)| a - b).collect()
            }
            LearnerBundle::Indirect {
                mediator_control,
                mediator_treated,
                outcome_treated,
            } => {
                let m1 = mediator_treated.predict(x)?;
                let m0 = mediator_control.predict(x)?;
                let y_m1 = outcome_treated.predict(&x.with_column(&m1)?)?;
                let y_m0 = outcome_treated.predict(&x.with_column(&m0)?)?;
                y_m1.iter().zip(&y_m0).map(|(a, b)| a - b).collect()
            }
        };
        if let Some(i) = tau.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite prediction at row {i}"
            )));
        }
        Ok(tau)
    }
}

/// Conditional average total effects, evaluated in-sample at every unit.
pub fn estimate_catte(ds: &Dataset, spec: &LearnerSpec) -> Result<EffectVector> {
    let bundle = LearnerBundle::fit_total(ds, spec)?;
    EffectVector::new(
        bundle.effects(ds.covariates())?,
        EffectKind::Total,
        spec.fingerprint(),
    )
}

/// Conditional average indirect effects, evaluated in-sample at every unit.
pub fn estimate_caite(ds: &Dataset, spec: &LearnerSpec) -> Result<EffectVector> {
    let bundle = LearnerBundle::fit_indirect(ds, spec)?;
    EffectVector::new(
        bundle.effects(ds.covariates())?,
        EffectKind::Indirect,
        spec.fingerprint(),
    )
}

pub fn estimate(ds: &Dataset, spec: &LearnerSpec, kind: EffectKind) -> Result<EffectVector> {
    match kind {
        EffectKind::Total => estimate_catte(ds, spec),
        EffectKind::Indirect => estimate_caite(ds, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::CartParams;

    fn toy(shift_treated: f64) -> Dataset {
        let xs: Vec<f64> = (0..12).map(|i| f64::from(i) - 6.0).collect();
        let w: Vec<u8> = (0..12).map(|i| (i % 2) as u8).collect();
        let y: Vec<f64> = xs
            .iter()
            .zip(&w)
            .map(|(x, &w)| if *x > 0.0 { 2.0 } else { 0.0 } + f64::from(w) * (1.0 + shift_treated))
            .collect();
        let m: Vec<f64> = xs.iter().map(|x| x * 0.5).collect();
        Dataset::from_parts(Matrix::column_vector(&xs), w, y, Some(m)).unwrap()
    }

    #[test]
    fn cart_shift_equivariance() {
        let spec = LearnerSpec::cart(CartParams::default());
        let a = estimate_catte(&toy(0.0), &spec).unwrap();
        let b = estimate_catte(&toy(3.0), &spec).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((y - x - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn caite_requires_mediator() {
        let ds = toy(0.0);
        let no_m =
            Dataset::from_parts(ds.covariates().clone(), ds.treatment().to_vec(), ds.outcome().to_vec(), None)
                .unwrap();
        let spec = LearnerSpec::cart(CartParams::default());
        assert!(matches!(estimate_caite(&no_m, &spec), Err(Error::Mode(_))));
    }

    #[test]
    fn degenerate_arm() {
        let ds = Dataset::from_parts(Matrix::column_vector(&[1.0, 2.0]), vec![1, 1], vec![0.0, 1.0], None)
            .unwrap();
        let spec = LearnerSpec::cart(CartParams::default());
        assert!(matches!(estimate_catte(&ds, &spec), Err(Error::DegenerateArm(_))));
    }

    #[test]
    fn fingerprint_recorded() {
        let spec = LearnerSpec::cart(CartParams::default());
        let a = estimate_catte(&toy(0.0), &spec).unwrap();
        assert_eq!(a.learner_fingerprint(), spec.fingerprint());
        assert_eq!(a, estimate_catte(&toy(0.0), &spec).unwrap());
    }

    #[test]
    fn csv_export() {
        let v = EffectVector::new(vec![0.5, -1.0], EffectKind::Total, "f".into()).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "unit_index,tau_hat\n0,0.5\n1,-1\n");
    }
}
