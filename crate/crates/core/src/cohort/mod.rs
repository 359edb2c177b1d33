//! Cohort tables: ingestion, validation, splitting, and simulation.
//!
//! A cohort is an ordered list of subject records, each carrying
//! demographics, clinical covariates, a site label, and the fixed
//! 175-feature volumetric vector. Tables are immutable after construction
//! and safe for concurrent reads.

mod csv_io;
mod simulate;
mod split;

pub use csv_io::{parse_cohort_csv, read_cohort, write_cohort, write_cohort_csv};
pub use simulate::{simulate_cohort, GroundTruth, SimRecipe, SimSpec, SiteEffect};
pub use split::split_train_val_test;

use crate::FEATURE_COUNT;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] ::csv::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row}: feature count {got} ≠ {expected}")]
    FeatureCount { row: usize, got: usize, expected: usize },
    #[error("row {row}, column {column}: cannot parse `{value}` as a finite number")]
    BadNumber { row: usize, column: String, value: String },
    #[error("row {row}, column {column}: invalid value `{value}` (expected {expected})")]
    BadEnum { row: usize, column: String, value: String, expected: String },
    #[error("duplicate subject_id `{id}` on rows {first_row} and {second_row}")]
    DuplicateId { id: String, first_row: usize, second_row: usize },
    #[error("row {row}, column {column}: required value is missing")]
    MissingRequired { row: usize, column: String },
    #[error("split fractions must be positive and sum to 1 (got {0:?})")]
    BadFractions([f64; 3]),
    #[error("table has {0} records, need at least {1}")]
    TooFewRecords(usize, usize),
    #[error("invalid simulation spec: {0}")]
    BadSimSpec(String),
    #[error("feature manifest mismatch: {0}")]
    FeatureManifest(String),
}

/// Biological sex. Encoded male=1, female=0 wherever a design matrix needs
/// a numeric value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_f64(self) -> f64 {
        match self {
            Sex::Male => 1.0,
            Sex::Female => 0.0,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "M" => Some(Sex::Male),
            "F" => Some(Sex::Female),
            _ => None,
        }
    }
}

/// Diagnostic group of a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Control,
    /// First-episode schizophrenia patients.
    SchizophreniaFe,
    /// Chronic schizophrenia patients.
    SchizophreniaChronic,
    /// Bipolar patients under antipsychotic treatment.
    BipolarAp,
    /// Bipolar patients without antipsychotic treatment.
    BipolarNoAp,
}

impl Group {
    pub fn code(self) -> &'static str {
        match self {
            Group::Control => "CTRL",
            Group::SchizophreniaFe => "FE",
            Group::SchizophreniaChronic => "SZ",
            Group::BipolarAp => "BP_AP",
            Group::BipolarNoAp => "BP_NOAP",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "CTRL" => Some(Group::Control),
            "FE" => Some(Group::SchizophreniaFe),
            "SZ" => Some(Group::SchizophreniaChronic),
            "BP_AP" => Some(Group::BipolarAp),
            "BP_NOAP" => Some(Group::BipolarNoAp),
            _ => None,
        }
    }

    pub const ALL: [Group; 5] = [
        Group::Control,
        Group::SchizophreniaFe,
        Group::SchizophreniaChronic,
        Group::BipolarAp,
        Group::BipolarNoAp,
    ];
}

/// One participant: demographics, clinical covariates, site, and features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub site: String,
    /// Age in years.
    pub age: f64,
    pub sex: Sex,
    pub group: Group,
    /// Body-mass index in kg/m².
    pub bmi: Option<f64>,
    /// Estimated total intracranial volume in liters.
    pub etiv: Option<f64>,
    /// Illness duration in months.
    pub duration_months: Option<f64>,
    /// Chlorpromazine-equivalent dose in mg/day.
    pub cpz_equiv: Option<f64>,
    /// The 175 volumetric features in mm³, in manifest order.
    pub features: Vec<f64>,
}

/// An ordered cohort with its feature-name manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub records: Vec<SubjectRecord>,
    pub feature_names: Vec<String>,
    pub provenance: String,
}

/// Canonical feature column names: `feat_000` .. `feat_174`.
pub fn default_feature_names() -> Vec<String> {
    (0..FEATURE_COUNT).map(|i| format!("feat_{i:03}")).collect()
}

impl CohortTable {
    pub fn new(records: Vec<SubjectRecord>, provenance: &str) -> Self {
        Self {
            records,
            feature_names: default_feature_names(),
            provenance: provenance.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ages(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.age).collect()
    }

    /// Values of feature `f` across all records.
    pub fn feature_column(&self, f: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.features[f]).collect()
    }

    /// Site labels in sorted order, deduplicated.
    pub fn site_roster(&self) -> Vec<String> {
        let mut sites: Vec<String> = self.records.iter().map(|r| r.site.clone()).collect();
        sites.sort();
        sites.dedup();
        sites
    }

    /// New table keeping the records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize], provenance: &str) -> CohortTable {
        CohortTable {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            provenance: provenance.to_string(),
        }
    }

    /// New table keeping records whose group satisfies the predicate.
    pub fn filter_groups(&self, keep: impl Fn(Group) -> bool, provenance: &str) -> CohortTable {
        CohortTable {
            records: self
                .records
                .iter()
                .filter(|r| keep(r.group))
                .cloned()
                .collect(),
            feature_names: self.feature_names.clone(),
            provenance: provenance.to_string(),
        }
    }
}

/// A single validation finding; validation never fails, it reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Finding {
    AgeOutOfBounds { subject_id: String, age: f64, bounds: (f64, f64) },
    /// A covariate required by one of the downstream analyses is missing.
    MissingCovariate { subject_id: String, field: String, analyses: Vec<String> },
    ZeroVarianceFeature { index: usize, name: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn age_findings(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| matches!(f, Finding::AgeOutOfBounds { .. }))
            .count()
    }
}

/// Check age bounds, analysis covariate completeness, and feature variance.
///
/// Analyses 1 and 2 need BMI and eTIV on controls and schizophrenia
/// patients; analysis 3 additionally needs illness duration and CPZ
/// equivalents on chronic patients. Analysis 4 compares gaps only.
pub fn validate_cohort(table: &CohortTable, bounds: (f64, f64)) -> ValidationReport {
    let mut findings = Vec::new();
    for r in &table.records {
        if r.age < bounds.0 || r.age > bounds.1 {
            findings.push(Finding::AgeOutOfBounds {
                subject_id: r.subject_id.clone(),
                age: r.age,
                bounds,
            });
        }
        let mut requirements: Vec<(&str, bool, Vec<&str>)> = Vec::new();
        match r.group {
            Group::Control | Group::SchizophreniaFe => {
                requirements.push(("bmi", r.bmi.is_some(), vec!["a1", "a2"]));
                requirements.push(("etiv", r.etiv.is_some(), vec!["a1", "a2"]));
            }
            Group::SchizophreniaChronic => {
                requirements.push(("bmi", r.bmi.is_some(), vec!["a1", "a3"]));
                requirements.push(("etiv", r.etiv.is_some(), vec!["a1", "a3"]));
                requirements.push(("duration_months", r.duration_months.is_some(), vec!["a3"]));
                requirements.push(("cpz_equiv", r.cpz_equiv.is_some(), vec!["a3"]));
            }
            Group::BipolarAp | Group::BipolarNoAp => {}
        }
        for (field, present, analyses) in requirements {
            if !present {
                findings.push(Finding::MissingCovariate {
                    subject_id: r.subject_id.clone(),
                    field: field.to_string(),
                    analyses: analyses.into_iter().map(String::from).collect(),
                });
            }
        }
    }
    if table.len() >= 2 {
        for f in 0..FEATURE_COUNT {
            let col = table.feature_column(f);
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                findings.push(Finding::ZeroVarianceFeature {
                    index: f,
                    name: table.feature_names[f].clone(),
                });
            }
        }
    }
    ValidationReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, age: f64) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.to_string(),
            site: "siteA".to_string(),
            age,
            sex: Sex::Male,
            group: Group::Control,
            bmi: Some(24.0),
            etiv: Some(1.55),
            duration_months: None,
            cpz_equiv: None,
            features: (0..FEATURE_COUNT).map(|i| i as f64 + age).collect(),
        }
    }

    #[test]
    fn all_in_range_gives_empty_report() {
        let table = CohortTable::new(vec![record("a", 30.0), record("b", 40.0)], "test");
        let report = validate_cohort(&table, (18.0, 65.0));
        assert!(report.is_clean());
    }

    #[test]
    fn age_seventeen_is_one_bound_finding() {
        let table = CohortTable::new(vec![record("a", 17.0), record("b", 40.0)], "test");
        let report = validate_cohort(&table, (18.0, 65.0));
        assert_eq!(report.findings.len(), 1);
        assert!(matches!(
            &report.findings[0],
            Finding::AgeOutOfBounds { subject_id, age, .. } if subject_id == "a" && *age == 17.0
        ));
    }

    #[test]
    fn constant_feature_column_is_flagged() {
        let mut a = record("a", 30.0);
        let mut b = record("b", 40.0);
        a.features[7] = 5.0;
        b.features[7] = 5.0;
        let table = CohortTable::new(vec![a, b], "test");
        let report = validate_cohort(&table, (18.0, 65.0));
        assert_eq!(report.findings.len(), 1);
        assert!(matches!(
            &report.findings[0],
            Finding::ZeroVarianceFeature { index: 7, name } if name == "feat_007"
        ));
    }

    #[test]
    fn missing_chronic_covariates_name_analysis_three() {
        let mut a = record("a", 30.0);
        a.group = Group::SchizophreniaChronic;
        a.duration_months = None;
        a.cpz_equiv = Some(300.0);
        let table = CohortTable::new(vec![a, record("b", 40.0)], "test");
        let report = validate_cohort(&table, (18.0, 65.0));
        assert!(report.findings.iter().any(|f| matches!(
            f,
            Finding::MissingCovariate { field, analyses, .. }
                if field == "duration_months" && analyses.contains(&"a3".to_string())
        )));
    }
}
