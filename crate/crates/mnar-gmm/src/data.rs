//! CSV ingestion and export of observed samples.
//!
//! The layout is `t,x1,…,xr,y` with `t ∈ {0, 1}` and `y` left empty for
//! non-respondents.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mnar_gmm_core::sample::ObservedSample;

fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "t" || cols[cols.len() - 1] != "y" {
        bail!("header must be `t,x1,...,xr,y`, found `{}`", cols.join(","));
    }
    let r = cols.len() - 2;
    for (j, name) in cols[1..=r].iter().enumerate() {
        if *name != format!("x{}", j + 1) {
            bail!("header column {} must be `x{}`, found `{name}`", j + 2, j + 1);
        }
    }
    Ok(r)
}

fn parse_number(field: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| anyhow!("line {line}, column {column}: `{field}` is not a number"))?;
    if !v.is_finite() {
        bail!("line {line}, column {column}: value must be finite");
    }
    Ok(v)
}

/// Reads a sample from any CSV source; `line` numbers in errors count the
/// header as line 1.
pub fn read_sample<R: Read>(source: R) -> Result<ObservedSample> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let r = check_header(reader.headers()?)?;
    let mut t = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ignored = 0usize;
    for record in reader.records() {
        let record = record.context("malformed CSV record")?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != r + 2 {
            bail!("line {line}: expected {} fields, found {}", r + 2, record.len());
        }
        let ti = match record[0].trim() {
            "1" => true,
            "0" => false,
            other => bail!("line {line}, column t: `{other}` is not 0 or 1"),
        };
        for j in 0..r {
            x.push(parse_number(&record[j + 1], line, &format!("x{}", j + 1))?);
        }
        let raw = record[r + 1].trim();
        let yi = match (ti, raw.is_empty()) {
            (true, true) => bail!("line {line}: t = 1 but y is empty"),
            (true, false) => Some(parse_number(raw, line, "y")?),
            (false, false) => {
                parse_number(raw, line, "y")?;
                ignored += 1;
                None
            }
            (false, true) => None,
        };
        t.push(ti);
        y.push(yi);
    }
    if ignored > 0 {
        log::warn!("{ignored} rows have t = 0 and a y value; those values are ignored");
    }
    let sample = ObservedSample::new(t, x, r, y).map_err(|e| anyhow!("{e}"))?;
    log::info!("loaded {} rows, {} covariates, missing rate {:.4}", sample.n(), r, sample.missing_rate());
    Ok(sample)
}

pub fn load_csv(path: &Path) -> Result<ObservedSample> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_sample(file).with_context(|| format!("reading {}", path.display()))
}

/// Writes `t,x1..xr,y` with shortest round-trip formatting of every value.
pub fn write_sample<W: Write>(sample: &ObservedSample, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["t".to_string()];
    header.extend((1..=sample.r()).map(|j| format!("x{j}")));
    header.push("y".into());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(sample.r() + 2);
    for i in 0..sample.n() {
        row.clear();
        row.push(if sample.responded(i) { "1".to_string() } else { "0".to_string() });
        row.extend(sample.row(i).iter().map(f64::to_string));
        row.push(sample.outcome(i).map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(sample: &ObservedSample, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    write_sample(sample, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows() {
        let s = read_sample("t,x1,y\n1,0.5,2\n0,1.5,\n1,-1,0.25\n".as_bytes()).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.outcome(1), None);
        assert_eq!(s.outcome(2), Some(0.25));
    }

    #[test]
    fn missing_respondent_outcome_names_the_line() {
        let err = read_sample("t,x1,y\n1,0.5,2\n1,1.5,\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn non_numeric_names_line_and_column() {
        let err = read_sample("t,x1,x2,y\n1,0.5,abc,2\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("x2"), "{err}");
    }

    #[test]
    fn nonrespondent_outcome_is_dropped() {
        let s = read_sample("t,x1,y\n0,0.5,9\n1,1.0,1\n".as_bytes()).unwrap();
        assert_eq!(s.outcome(0), None);
    }

    #[test]
    fn header_is_checked() {
        assert!(read_sample("t,z,y\n1,0,0\n".as_bytes()).is_err());
        assert!(read_sample("x1,t,y\n1,0,0\n".as_bytes()).is_err());
        assert!(read_sample("t,x1,y\n2,0,0\n".as_bytes()).is_err());
    }
}
