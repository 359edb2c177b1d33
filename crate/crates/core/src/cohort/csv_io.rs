//! Cohort CSV reading and writing.
//!
//! Header: `subject_id,site,age,sex,group,bmi,etiv,duration_months,
//! cpz_equiv,feat_000,...,feat_174`. UTF-8, `.` decimal separator, empty
//! cell = missing clinical value. Feature cells must parse as finite reals.
//! Row numbers in errors are file line numbers, with the header on line 1.

use super::{default_feature_names, CohortError, CohortTable, Group, Sex, SubjectRecord};
use crate::FEATURE_COUNT;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

const FIXED_COLUMNS: [&str; 9] = [
    "subject_id",
    "site",
    "age",
    "sex",
    "group",
    "bmi",
    "etiv",
    "duration_months",
    "cpz_equiv",
];

fn expected_header() -> Vec<String> {
    let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend(default_feature_names());
    h
}

fn parse_finite(
    cell: &str,
    row: usize,
    column: &str,
) -> Result<f64, CohortError> {
    let v: f64 = cell.trim().parse().map_err(|_| CohortError::BadNumber {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })?;
    if !v.is_finite() {
        return Err(CohortError::BadNumber {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        });
    }
    Ok(v)
}

fn parse_optional(
    cell: &str,
    row: usize,
    column: &str,
) -> Result<Option<f64>, CohortError> {
    if cell.trim().is_empty() {
        Ok(None)
    } else {
        parse_finite(cell, row, column).map(Some)
    }
}

/// Parse a cohort CSV file.
pub fn parse_cohort_csv(path: &Path) -> Result<CohortTable, CohortError> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let expected = expected_header();
    if header != expected {
        if header.len() != expected.len() {
            return Err(CohortError::MalformedHeader(format!(
                "expected {} columns, found {}",
                expected.len(),
                header.len()
            )));
        }
        let (i, (got, want)) = header
            .iter()
            .zip(expected.iter())
            .enumerate()
            .find(|(_, (g, w))| g != w)
            .expect("lengths equal and unequal contents");
        return Err(CohortError::MalformedHeader(format!(
            "column {} is `{}`, expected `{}`",
            i + 1,
            got,
            want
        )));
    }

    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, result) in reader.records().enumerate() {
        let row = idx + 2; // header is line 1
        let rec = result?;
        if rec.len() != expected.len() {
            let got_features = rec.len().saturating_sub(FIXED_COLUMNS.len());
            return Err(CohortError::FeatureCount {
                row,
                got: got_features,
                expected: FEATURE_COUNT,
            });
        }
        let subject_id = rec[0].trim().to_string();
        if subject_id.is_empty() {
            return Err(CohortError::MissingRequired {
                row,
                column: "subject_id".to_string(),
            });
        }
        if let Some(&first_row) = seen.get(&subject_id) {
            return Err(CohortError::DuplicateId {
                id: subject_id,
                first_row,
                second_row: row,
            });
        }
        seen.insert(subject_id.clone(), row);

        let site = rec[1].trim().to_string();
        if site.is_empty() {
            return Err(CohortError::MissingRequired {
                row,
                column: "site".to_string(),
            });
        }
        let age = parse_finite(&rec[2], row, "age")?;
        let sex = Sex::from_code(rec[3].trim()).ok_or_else(|| CohortError::BadEnum {
            row,
            column: "sex".to_string(),
            value: rec[3].to_string(),
            expected: "M or F".to_string(),
        })?;
        let group = Group::from_code(rec[4].trim()).ok_or_else(|| CohortError::BadEnum {
            row,
            column: "group".to_string(),
            value: rec[4].to_string(),
            expected: "CTRL, FE, SZ, BP_AP, or BP_NOAP".to_string(),
        })?;
        let bmi = parse_optional(&rec[5], row, "bmi")?;
        let etiv = parse_optional(&rec[6], row, "etiv")?;
        let duration_months = parse_optional(&rec[7], row, "duration_months")?;
        let cpz_equiv = parse_optional(&rec[8], row, "cpz_equiv")?;

        let mut features = Vec::with_capacity(FEATURE_COUNT);
        for f in 0..FEATURE_COUNT {
            let cell = &rec[FIXED_COLUMNS.len() + f];
            features.push(parse_finite(cell, row, &expected[FIXED_COLUMNS.len() + f])?);
        }
        records.push(SubjectRecord {
            subject_id,
            site,
            age,
            sex,
            group,
            bmi,
            etiv,
            duration_months,
            cpz_equiv,
            features,
        });
    }
    Ok(CohortTable {
        records,
        feature_names: default_feature_names(),
        provenance: format!("csv:{}", path.display()),
    })
}

/// Alias for [`parse_cohort_csv`].
pub fn read_cohort(path: &Path) -> Result<CohortTable, CohortError> {
    parse_cohort_csv(path)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serialize a cohort table to a writer in the canonical CSV layout.
pub fn write_cohort(table: &CohortTable, w: &mut impl Write) -> Result<(), CohortError> {
    let header = expected_header().join(",");
    writeln!(w, "{header}")?;
    for r in &table.records {
        let mut cells: Vec<String> = vec![
            r.subject_id.clone(),
            r.site.clone(),
            r.age.to_string(),
            r.sex.code().to_string(),
            r.group.code().to_string(),
            fmt_opt(r.bmi),
            fmt_opt(r.etiv),
            fmt_opt(r.duration_months),
            fmt_opt(r.cpz_equiv),
        ];
        cells.extend(r.features.iter().map(|v| v.to_string()));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Write a cohort table to a CSV file.
pub fn write_cohort_csv(table: &CohortTable, path: &Path) -> Result<(), CohortError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cohort(table, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn feature_cells(offset: f64) -> String {
        (0..FEATURE_COUNT)
            .map(|i| format!("{}", i as f64 * 0.5 + offset))
            .collect::<Vec<_>>()
            .join(",")
    }

    fn write_file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    fn header_line() -> String {
        expected_header().join(",")
    }

    #[test]
    fn three_row_file_parses_to_three_records() {
        let f = write_file(&[
            header_line(),
            format!("S001,siteA,30,M,CTRL,24.1,1.55,,,{}", feature_cells(1.0)),
            format!("S002,siteA,45.5,F,SZ,27,1.49,130,390,{}", feature_cells(2.0)),
            format!("S003,siteB,22,M,FE,,1.6,11,250,{}", feature_cells(3.0)),
        ]);
        let table = parse_cohort_csv(f.path()).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.records[0].bmi, Some(24.1));
        assert_eq!(table.records[0].duration_months, None);
        assert_eq!(table.records[1].group, Group::SchizophreniaChronic);
        assert_eq!(table.records[2].bmi, None);
        assert_eq!(table.records[1].features[2], 3.0);
    }

    #[test]
    fn short_feature_row_reports_count() {
        let short = (0..FEATURE_COUNT - 1)
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let f = write_file(&[
            header_line(),
            format!("S001,siteA,30,M,CTRL,24.1,1.55,,,{short}"),
        ]);
        let err = parse_cohort_csv(f.path()).unwrap_err();
        assert!(err.to_string().contains("feature count 174 ≠ 175"), "{err}");
        match err {
            CohortError::FeatureCount { row, got, expected } => {
                assert_eq!((row, got, expected), (2, 174, 175));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn duplicate_id_names_both_rows() {
        let f = write_file(&[
            header_line(),
            format!("S001,siteA,30,M,CTRL,,,,,{}", feature_cells(0.0)),
            format!("S002,siteA,31,F,CTRL,,,,,{}", feature_cells(0.0)),
            format!("S003,siteA,32,M,CTRL,,,,,{}", feature_cells(0.0)),
            format!("S001,siteA,33,F,CTRL,,,,,{}", feature_cells(0.0)),
        ]);
        let err = parse_cohort_csv(f.path()).unwrap_err();
        match err {
            CohortError::DuplicateId { id, first_row, second_row } => {
                assert_eq!(id, "S001");
                assert_eq!((first_row, second_row), (2, 5));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn non_numeric_feature_cell_is_located() {
        let mut cells: Vec<String> = (0..FEATURE_COUNT).map(|i| i.to_string()).collect();
        cells[10] = "abc".to_string();
        let f = write_file(&[
            header_line(),
            format!("S001,siteA,30,M,CTRL,,,,,{}", cells.join(",")),
        ]);
        let err = parse_cohort_csv(f.path()).unwrap_err();
        match err {
            CohortError::BadNumber { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "feat_010");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn malformed_header_is_rejected() {
        let mut h = expected_header();
        h[4] = "grp".to_string();
        let f = write_file(&[h.join(","), format!("S001,siteA,30,M,CTRL,,,,,{}", feature_cells(0.0))]);
        let err = parse_cohort_csv(f.path()).unwrap_err();
        assert!(matches!(err, CohortError::MalformedHeader(_)));
        assert!(err.to_string().contains("grp"));
    }

    #[test]
    fn write_then_parse_round_trips() {
        let f = write_file(&[
            header_line(),
            format!("S001,siteA,30.25,M,BP_AP,24.125,1.5,180.5,291.67,{}", feature_cells(1.25)),
            format!("S002,siteB,45,F,BP_NOAP,27,1.49,,,{}", feature_cells(2.5)),
        ]);
        let table = parse_cohort_csv(f.path()).unwrap();
        let mut buf = Vec::new();
        write_cohort(&table, &mut buf).unwrap();
        let g = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(g.path(), &buf).unwrap();
        let reparsed = parse_cohort_csv(g.path()).unwrap();
        assert_eq!(table.records, reparsed.records);
    }
}
