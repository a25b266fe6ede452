//! File ingestion: newline-delimited text and two-column `key,value` CSV.

use std::io::Read;
use std::path::Path;

use crate::value::{Record, Value};
use crate::{Error, Result};

/// One unkeyed text record per line (line terminators stripped).
pub fn text_records(text: &str) -> Vec<Record> {
    text.lines().map(|l| Record::unkeyed(l.to_string())).collect()
}

pub fn read_text(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text_records(&text))
}

/// Keyed records from `key,value` rows. The key stays text; the value is an
/// integer when it parses as one, text otherwise.
pub fn csv_records(reader: impl Read) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(i + 1),
            column: 0,
            message: e.to_string(),
        })?;
        if row.len() != 2 {
            return Err(Error::Parse {
                line: row.position().map(|p| p.line() as usize).unwrap_or(i + 1),
                column: 0,
                message: format!("expected 2 columns, found {}", row.len()),
            });
        }
        let value = match row[1].parse::<i64>() {
            Ok(n) => Value::Int(n),
            Err(_) => Value::text(&row[1]),
        };
        out.push(Record::keyed(row[0].to_string(), value));
    }
    Ok(out)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path)?;
    csv_records(file)
}

/// Dispatch on extension: `.csv` files are keyed, everything else is text.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_text(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_lines_become_unkeyed_records() {
        let recs = text_records("a b\nc\n");
        assert_eq!(recs, vec![Record::unkeyed("a b"), Record::unkeyed("c")]);
        assert!(text_records("").is_empty());
    }

    #[test]
    fn csv_values_parse_as_int_when_possible() {
        let recs = csv_records("k1,1\nk2, x\n\"k,3\",-4\n".as_bytes()).unwrap();
        assert_eq!(
            recs,
            vec![Record::keyed("k1", 1), Record::keyed("k2", "x"), Record::keyed("k,3", -4)]
        );
    }

    #[test]
    fn csv_wrong_arity_is_a_parse_error() {
        let err = csv_records("a,1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
    }
}
