//! Trial datasets: covariates, binary treatment, outcome and an optional
//! mediator, plus CSV ingestion and treatment-arm views.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// How a covariate column was produced at ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateKind {
    Continuous,
    /// Indicator column for `level` of the categorical column `group`.
    OneHot { group: String, level: String },
}

/// Names of the non-covariate columns, kept so a dataset can be written
/// back out under its original header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleNames {
    pub treatment: String,
    pub outcome: String,
    pub mediator: Option<String>,
}

impl Default for RoleNames {
    fn default() -> Self {
        RoleNames {
            treatment: "w".into(),
            outcome: "y".into(),
            mediator: Some("m".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Matrix,
    names: Vec<String>,
    kinds: Vec<CovariateKind>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    mediator: Option<Vec<f64>>,
    roles: RoleNames,
}

impl Dataset {
    /// Builds a dataset with continuous covariates named `x1..xd`.
    pub fn from_parts(
        covariates: Matrix,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        mediator: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d = covariates.cols();
        let names = (1..=d).map(|j| format!("x{j}")).collect();
        let roles = RoleNames {
            mediator: mediator.as_ref().map(|_| "m".to_string()),
            ..RoleNames::default()
        };
        Self::new(
            covariates,
            names,
            vec![CovariateKind::Continuous; d],
            treatment,
            outcome,
            mediator,
            roles,
        )
    }

    pub fn new(
        covariates: Matrix,
        names: Vec<String>,
        kinds: Vec<CovariateKind>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        mediator: Option<Vec<f64>>,
        roles: RoleNames,
    ) -> Result<Self> {
        let n = covariates.rows();
        if n == 0 {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        if covariates.cols() == 0 {
            return Err(Error::Validation("dataset has no covariate columns".into()));
        }
        if names.len() != covariates.cols() || kinds.len() != covariates.cols() {
            return Err(Error::Validation(
                "covariate names/kinds do not match column count".into(),
            ));
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::Validation(format!(
                "treatment ({}) and outcome ({}) must have {n} entries",
                treatment.len(),
                outcome.len()
            )));
        }
        if let Some(w) = treatment.iter().find(|&&w| w > 1) {
            return Err(Error::Validation(format!(
                "treatment must be 0 or 1, found {w}"
            )));
        }
        if !covariates.is_finite() || outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite value in dataset".into()));
        }
        if let Some(m) = &mediator {
            if m.len() != n {
                return Err(Error::Validation(format!(
                    "mediator has {} entries, expected {n}",
                    m.len()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("non-finite mediator value".into()));
            }
        }
        let ds = Dataset {
            covariates,
            names,
            kinds,
            treatment,
            outcome,
            mediator,
            roles,
        };
        ds.check_one_hot()?;
        Ok(ds)
    }

    fn check_one_hot(&self) -> Result<()> {
        for (group, cols) in self.one_hot_groups() {
            for r in 0..self.n() {
                let mut s = 0.0;
                for &c in &cols {
                    let v = self.covariates.get(r, c);
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Validation(format!(
                            "one-hot column `{}` holds {v} at row {r}",
                            self.names[c]
                        )));
                    }
                    s += v;
                }
                if s != 1.0 {
                    return Err(Error::Validation(format!(
                        "one-hot group `{group}` sums to {s} at row {r}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Columns of each one-hot group, in column order.
    pub fn one_hot_groups(&self) -> BTreeMap<String, Vec<usize>> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (j, k) in self.kinds.iter().enumerate() {
            if let CovariateKind::OneHot { group, .. } = k {
                groups.entry(group.clone()).or_default().push(j);
            }
        }
        groups
    }

    pub fn n(&self) -> usize {
        self.covariates.rows()
    }

    pub fn d(&self) -> usize {
        self.covariates.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }

    pub fn covariate_kinds(&self) -> &[CovariateKind] {
        &self.kinds
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment.iter().map(|&w| f64::from(w)).collect()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn mediator(&self) -> Option<&[f64]> {
        self.mediator.as_deref()
    }

    pub fn roles(&self) -> &RoleNames {
        &self.roles
    }

    /// Name used for covariate `j` in rules: the group name for one-hot
    /// indicators, the column name otherwise.
    pub fn display_name(&self, j: usize) -> &str {
        match &self.kinds[j] {
            CovariateKind::OneHot { group, .. } => group,
            CovariateKind::Continuous => &self.names[j],
        }
    }

    /// Sub-dataset restricted to `idx` (rows in the given order).
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Dataset {
            covariates: self.covariates.select_rows(idx),
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            outcome: pick(&self.outcome),
            mediator: self.mediator.as_deref().map(pick),
            roles: self.roles.clone(),
        })
    }

    /// A schema that reloads the CSV produced by [`write_csv`] into an
    /// identical dataset.
    pub fn schema(&self) -> Schema {
        let mut covariates = Vec::new();
        let mut categorical = Vec::new();
        for k in 0..self.d() {
            match &self.kinds[k] {
                CovariateKind::Continuous => covariates.push(self.names[k].clone()),
                CovariateKind::OneHot { group, .. } => {
                    if !covariates.contains(group) {
                        covariates.push(group.clone());
                        categorical.push(group.clone());
                    }
                }
            }
        }
        Schema {
            treatment: self.roles.treatment.clone(),
            outcome: self.roles.outcome.clone(),
            mediator: self.mediator.as_ref().and(self.roles.mediator.clone()),
            covariates: Some(covariates),
            categorical,
            recode: BTreeMap::new(),
        }
    }
}

/// One treatment arm of a dataset.
#[derive(Debug, Clone)]
pub struct ArmView<'a> {
    dataset: &'a Dataset,
    indices: Vec<usize>,
    arm: u8,
}

impl<'a> ArmView<'a> {
    pub fn arm(&self) -> u8 {
        self.arm
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn covariates(&self) -> Matrix {
        self.dataset.covariates.select_rows(&self.indices)
    }

    pub fn outcome(&self) -> Vec<f64> {
        self.indices.iter().map(|&i| self.dataset.outcome[i]).collect()
    }

    pub fn mediator(&self) -> Option<Vec<f64>> {
        self.dataset
            .mediator
            .as_ref()
            .map(|m| self.indices.iter().map(|&i| m[i]).collect())
    }
}

/// Partition a dataset into `(control, treated)` views.
pub fn split_by_treatment(ds: &Dataset) -> Result<(ArmView<'_>, ArmView<'_>)> {
    let mut control = Vec::new();
    let mut treated = Vec::new();
    for (i, &w) in ds.treatment.iter().enumerate() {
        if w == 1 {
            treated.push(i);
        } else {
            control.push(i);
        }
    }
    if control.is_empty() || treated.is_empty() {
        return Err(Error::DegenerateArm(format!(
            "control arm has {} rows, treated arm has {}",
            control.len(),
            treated.len()
        )));
    }
    Ok((
        ArmView {
            dataset: ds,
            indices: control,
            arm: 0,
        },
        ArmView {
            dataset: ds,
            indices: treated,
            arm: 1,
        },
    ))
}

/// Column-role map for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub mediator: Option<String>,
    /// Covariate columns in order; `None` means every remaining column.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    /// Columns holding category labels, expanded into one-hot groups.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Per-column label recoding applied before one-hot expansion.
    #[serde(default)]
    pub recode: BTreeMap<String, BTreeMap<String, String>>,
}

impl Schema {
    pub fn new(treatment: &str, outcome: &str) -> Self {
        Schema {
            treatment: treatment.into(),
            outcome: outcome.into(),
            mediator: None,
            covariates: None,
            categorical: Vec::new(),
            recode: BTreeMap::new(),
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parse a dataset from any CSV reader. Row numbers in errors count data
/// records from 1 (the header is not counted).
pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let w_col = position(&schema.treatment)?;
    let y_col = position(&schema.outcome)?;
    let m_col = schema.mediator.as_deref().map(position).transpose()?;
    let reserved: BTreeSet<usize> = [Some(w_col), Some(y_col), m_col].into_iter().flatten().collect();
    if reserved.len() != 2 + usize::from(m_col.is_some()) {
        return Err(Error::Schema(
            "treatment, outcome and mediator must be distinct columns".into(),
        ));
    }
    let cov_cols: Vec<usize> = match &schema.covariates {
        Some(list) => {
            let cols = list.iter().map(|c| position(c)).collect::<Result<Vec<_>>>()?;
            if let Some(c) = cols.iter().find(|c| reserved.contains(c)) {
                return Err(Error::Schema(format!(
                    "column `{}` cannot be both a covariate and a role column",
                    header[*c]
                )));
            }
            cols
        }
        None => (0..header.len()).filter(|c| !reserved.contains(c)).collect(),
    };
    if cov_cols.is_empty() {
        return Err(Error::Schema("no covariate columns".into()));
    }
    for c in &schema.categorical {
        let p = position(c)?;
        if !cov_cols.contains(&p) {
            return Err(Error::Schema(format!(
                "categorical column `{c}` is not a covariate"
            )));
        }
    }
    for c in schema.recode.keys() {
        if !schema.categorical.contains(c) {
            return Err(Error::Schema(format!(
                "recode map given for non-categorical column `{c}`"
            )));
        }
    }

    let mut raw: Vec<Vec<String>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row: Vec<String> = rec.iter().map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(Error::Ingestion {
                row: i + 1,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        for (c, cell) in row.iter().enumerate() {
            if cell.is_empty() && (reserved.contains(&c) || cov_cols.contains(&c)) {
                return Err(Error::Ingestion {
                    row: i + 1,
                    column: header[c].clone(),
                    message: "missing value".into(),
                });
            }
        }
        raw.push(row);
    }
    if raw.is_empty() {
        return Err(Error::Validation("CSV file has no data rows".into()));
    }

    let parse = |row: usize, col: usize| -> Result<f64> {
        let cell = &raw[row][col];
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Ingestion {
                row: row + 1,
                column: header[col].clone(),
                message: format!("cannot parse `{cell}` as a finite number"),
            }),
        }
    };

    let n = raw.len();
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut mediator = m_col.map(|_| Vec::with_capacity(n));
    for r in 0..n {
        let w = parse(r, w_col)?;
        if w == 0.0 {
            treatment.push(0u8);
        } else if w == 1.0 {
            treatment.push(1u8);
        } else {
            return Err(Error::Validation(format!(
                "treatment column `{}` holds non-binary value {w} at row {}",
                schema.treatment,
                r + 1
            )));
        }
        outcome.push(parse(r, y_col)?);
        if let (Some(mc), Some(m)) = (m_col, mediator.as_mut()) {
            m.push(parse(r, mc)?);
        }
    }

    let mut names = Vec::new();
    let mut kinds = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for &c in &cov_cols {
        let name = &header[c];
        if schema.categorical.contains(name) {
            let recode = schema.recode.get(name);
            let labels: Vec<String> = raw
                .iter()
                .map(|row| {
                    let v = &row[c];
                    recode.and_then(|m| m.get(v)).cloned().unwrap_or_else(|| v.clone())
                })
                .collect();
            let levels: BTreeSet<&String> = labels.iter().collect();
            for level in levels {
                names.push(format!("{name}={level}"));
                kinds.push(CovariateKind::OneHot {
                    group: name.clone(),
                    level: level.clone(),
                });
                columns.push(labels.iter().map(|l| f64::from(u8::from(l == level))).collect());
            }
        } else {
            names.push(name.clone());
            kinds.push(CovariateKind::Continuous);
            columns.push((0..n).map(|r| parse(r, c)).collect::<Result<Vec<_>>>()?);
        }
    }
    let d = columns.len();
    let mut x = Matrix::zeros(n, d);
    for (j, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            x.set(r, j, *v);
        }
    }
    let roles = RoleNames {
        treatment: schema.treatment.clone(),
        outcome: schema.outcome.clone(),
        mediator: schema.mediator.clone(),
    };
    Dataset::new(x, names, kinds, treatment, outcome, mediator, roles)
}

/// Write a dataset as CSV. One-hot groups are collapsed back into a single
/// label column so that reloading with [`Dataset::schema`] is lossless.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    enum Out {
        Numeric(usize),
        Group(Vec<usize>),
    }
    let groups = ds.one_hot_groups();
    let mut outs = Vec::new();
    let mut header = Vec::new();
    let mut seen = BTreeSet::new();
    for j in 0..ds.d() {
        match &ds.kinds[j] {
            CovariateKind::Continuous => {
                header.push(ds.names[j].clone());
                outs.push(Out::Numeric(j));
            }
            CovariateKind::OneHot { group, .. } => {
                if seen.insert(group.clone()) {
                    header.push(group.clone());
                    outs.push(Out::Group(groups[group].clone()));
                }
            }
        }
    }
    header.push(ds.roles.treatment.clone());
    header.push(ds.roles.outcome.clone());
    if ds.mediator.is_some() {
        header.push(ds.roles.mediator.clone().unwrap_or_else(|| "m".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&header)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for r in 0..ds.n() {
        rec.clear();
        for o in &outs {
            match o {
                Out::Numeric(j) => rec.push(ds.covariates.get(r, *j).to_string()),
                Out::Group(cols) => {
                    let hot = cols
                        .iter()
                        .find(|&&c| ds.covariates.get(r, c) == 1.0)
                        .expect("one-hot invariant");
                    match &ds.kinds[*hot] {
                        CovariateKind::OneHot { level, .. } => rec.push(level.clone()),
                        CovariateKind::Continuous => unreachable!(),
                    }
                }
            }
        }
        rec.push(ds.treatment[r].to_string());
        rec.push(ds.outcome[r].to_string());
        if let Some(m) = &ds.mediator {
            rec.push(m[r].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file))
}
