//! CSV input: rows are time points, columns are coordinates.
//!
//! Parsing is locale independent (dot decimal, comma separator). A first row
//! that does not parse as numbers is taken as a header and skipped.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;

use hdmon::Error;

pub type Rows = Box<dyn Iterator<Item = Result<Vec<f64>, Error>>>;

fn open(input: &str) -> Result<Box<dyn Read>, Error> {
    if input == "-" {
        Ok(Box::new(io::stdin()))
    } else {
        Ok(Box::new(BufReader::new(File::open(Path::new(input))?)))
    }
}

fn parse_fields(record: &csv::StringRecord) -> Option<Vec<f64>> {
    record.iter().map(|f| f.trim().parse::<f64>().ok()).collect()
}

/// Lazily parsed rows from a path or `-` (stdin). `line` numbers count data rows from 1.
pub fn stream_rows(input: &str) -> Result<Rows, Error> {
    let reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(input)?);
    let mut first = true;
    let mut row_no = 0usize;
    let iter = reader.into_records().filter_map(move |rec| {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => return Some(Err(Error::Io(io::Error::new(io::ErrorKind::InvalidData, e.to_string())))),
        };
        if rec.iter().all(|f| f.is_empty()) {
            return None;
        }
        let parsed = parse_fields(&rec);
        if first {
            first = false;
            if parsed.is_none() {
                return None;
            }
        }
        row_no += 1;
        Some(match parsed {
            Some(row) => match row.iter().position(|v| !v.is_finite()) {
                Some(coord) => Err(Error::NonFinite { t: row_no, coord }),
                None => Ok(row),
            },
            None => Err(Error::Io(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("row {row_no} contains a non-numeric field"),
            ))),
        })
    });
    Ok(Box::new(iter))
}

/// Reads a whole rectangular block.
pub fn read_matrix(input: &str) -> Result<Vec<Vec<f64>>, Error> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for row in stream_rows(input)? {
        let row = row?;
        if let Some(first) = out.first() {
            if row.len() != first.len() {
                return Err(Error::Dimension { expected: first.len(), got: row.len() });
            }
        }
        out.push(row);
    }
    Ok(out)
}
