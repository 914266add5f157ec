//! CSV output. Every file starts with `# key=value` lines carrying the crate
//! version, the configuration hash and the seed, followed by an ordinary
//! comma-separated table with LF line endings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::bilevel::{BfgsIterate, BfgsTrace};
use crate::error::{Error, Result};
use crate::ssn::SsnTrace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvHeader {
    entries: Vec<(String, String)>,
}

impl CsvHeader {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Self {
            entries: vec![
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
                ("config_hash".into(), config_hash.into()),
                ("seed".into(), seed.to_string()),
            ],
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }
}

/// A header, column names and string-formatted rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: CsvHeader,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: CsvHeader, columns: &[&str]) -> Self {
        Self {
            header,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut out = out;
        for (k, v) in &self.header.entries {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(&self.columns).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn ssn_table(header: CsvHeader, trace: &SsnTrace) -> Table {
    let mut t = Table::new(header, &["iteration", "residual", "ratio", "energy"]);
    for (k, r) in trace.residuals.iter().enumerate() {
        let ratio = if k == 0 {
            String::new()
        } else {
            num(r / trace.residuals[k - 1])
        };
        let energy = trace.energies.get(k).map_or(String::new(), |&e| num(e));
        t.push(vec![k.to_string(), num(*r), ratio, energy]);
    }
    t
}

pub fn bfgs_columns(d: usize) -> Vec<String> {
    let mut cols: Vec<String> = vec!["iteration".into()];
    cols.extend((1..=d).map(|i| format!("lambda_{i}")));
    cols.push("cost".into());
    cols.extend((1..=d).map(|i| format!("grad_{i}")));
    for c in [
        "projected_gradient",
        "ssn_iterations",
        "gradient_ssn_iterations",
        "step",
        "update_skipped",
    ] {
        cols.push(c.into());
    }
    cols
}

pub fn bfgs_row(it: &BfgsIterate) -> Vec<String> {
    let mut row = vec![it.iteration.to_string()];
    row.extend(it.lambda.iter().map(|&v| num(v)));
    row.push(num(it.cost));
    row.extend(it.gradient.iter().map(|&v| num(v)));
    row.push(num(it.projected_gradient));
    row.push(it.ssn_iterations.to_string());
    row.push(it.gradient_ssn_iterations.to_string());
    row.push(num(it.step));
    row.push(it.update_skipped.to_string());
    row
}

pub fn bfgs_table(header: CsvHeader, trace: &BfgsTrace) -> Table {
    let d = trace.iterates.first().map_or(0, |i| i.lambda.len());
    let cols = bfgs_columns(d);
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new(header, &col_refs);
    for it in &trace.iterates {
        t.push(bfgs_row(it));
    }
    t
}

/// A CSV file written row by row and flushed after each row, so that an
/// interrupted run leaves every completed row on disk.
pub struct CsvStream {
    w: csv::Writer<BufWriter<File>>,
}

impl CsvStream {
    pub fn create(path: impl AsRef<Path>, header: &CsvHeader, columns: &[String]) -> Result<Self> {
        let mut f = BufWriter::new(File::create(path)?);
        for (k, v) in &header.entries {
            writeln!(f, "# {k}={v}")?;
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(f);
        w.write_record(columns).map_err(csv_err)?;
        w.flush()?;
        Ok(Self { w })
    }

    pub fn row(&mut self, row: &[String]) -> Result<()> {
        self.w.write_record(row).map_err(csv_err)?;
        self.w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_then_table_with_lf() {
        let mut t = Table::new(CsvHeader::new("abc", 7).with("note", "x"), &["a", "b"]);
        t.push(vec![num(0.1), "q,r".into()]);
        let s = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert!(s.starts_with("# version="));
        assert!(s.contains("# config_hash=abc\n# seed=7\n# note=x\na,b\n1e-1,\"q,r\"\n"));
        assert!(!s.contains('\r'));
    }

    #[test]
    fn stream_matches_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let cols = vec!["a".to_string(), "b".to_string()];
        let mut s = CsvStream::create(&path, &CsvHeader::new("h", 1), &cols).unwrap();
        s.row(&["1".into(), num(2.5)]).unwrap();
        drop(s);
        let mut t = Table::new(CsvHeader::new("h", 1), &["a", "b"]);
        t.push(vec!["1".into(), num(2.5)]);
        assert_eq!(std::fs::read(&path).unwrap(), t.to_bytes().unwrap());
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 2980.0, -1e-300, 0.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn ssn_table_has_one_row_per_residual() {
        let tr = SsnTrace {
            residuals: vec![1.0, 0.1, 0.001],
            energies: vec![3.0, 2.0, 1.5],
            iterations: 2,
            converged: true,
            ..Default::default()
        };
        let t = ssn_table(CsvHeader::new("h", 0), &tr);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[2][2], num(0.01));
    }
}
