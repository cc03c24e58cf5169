//! Matrix files: headerless CSV (N rows of N decimals) or JSON `{"dim", "rows"}`.

use std::path::Path;

use super::covariance::{CovarianceSpec, MatrixFile};
use crate::error::{Error, Result};

pub fn parse_csv_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, f)| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}, column {}: '{f}' is not a number", r + 1, c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let width = rows[0].len();
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != width) {
        return Err(Error::Parse(format!(
            "ragged rows: row 1 has {width} entries, row {} has {}",
            r + 1,
            row.len()
        )));
    }
    Ok(rows)
}

pub fn parse_csv(text: &str) -> Result<CovarianceSpec> {
    CovarianceSpec::from_rows(&parse_csv_rows(text)?)
}

pub fn parse_json(text: &str) -> Result<CovarianceSpec> {
    let file: MatrixFile = serde_json::from_str(text)?;
    if let Some((r, row)) = file.rows.iter().enumerate().find(|(_, row)| row.len() != file.dim) {
        return Err(Error::Parse(format!(
            "ragged rows: dim is {}, row {} has {} entries",
            file.dim,
            r + 1,
            row.len()
        )));
    }
    file.into_spec()
}

/// Parses either format, sniffing JSON by a leading `{`.
pub fn parse_matrix(text: &str) -> Result<CovarianceSpec> {
    if text.trim_start().starts_with('{') {
        parse_json(text)
    } else {
        parse_csv(text)
    }
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<CovarianceSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_matrix(&text)
}

pub fn to_csv(spec: &CovarianceSpec) -> String {
    spec.rows()
        .iter()
        .map(|row| row.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

pub fn to_json(spec: &CovarianceSpec) -> String {
    serde_json::to_string_pretty(spec).expect("matrix serializes")
}

/// Writes CSV or JSON depending on the file extension (`.json` → JSON).
pub fn write_matrix(path: impl AsRef<Path>, spec: &CovarianceSpec) -> Result<()> {
    let path = path.as_ref();
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => to_json(spec),
        _ => to_csv(spec),
    };
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_agree() {
        let a = parse_csv("2, 0.5\n0.5, 1\n").unwrap();
        let b = parse_json(r#"{"dim": 2, "rows": [[2, 0.5], [0.5, 1]]}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_matrix(&to_json(&a)).unwrap(), a);
        assert_eq!(parse_matrix(&to_csv(&a)).unwrap(), a);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matches!(parse_csv("1,0\n0\n"), Err(Error::Parse(_))));
        assert!(matches!(
            parse_json(r#"{"dim": 2, "rows": [[1, 0], [0]]}"#),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            parse_json(r#"{"dim": 3, "rows": [[1, 0], [0, 1]]}"#),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn garbage_rejected() {
        assert!(matches!(parse_csv("1,x\n0,1\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_csv(""), Err(Error::EmptyInput)));
    }
}
