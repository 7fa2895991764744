//! Row-major numeric dataset with CSV loading.

use crate::{Error, Result};
use std::path::Path;

/// An `n x k` matrix of observations, one row per observation.
#[derive(Debug, Clone)]
pub struct Dataset {
    data: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl Dataset {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::invalid(format!(
                "dataset size mismatch: {} values for {} x {}",
                data.len(),
                nrows,
                ncols
            )));
        }
        Ok(Dataset { data, nrows, ncols })
    }

    /// Build from a list of rows (all of equal length).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            if r.len() != ncols {
                return Err(Error::invalid("ragged rows in dataset"));
            }
            data.extend_from_slice(r);
        }
        Dataset::new(nrows, ncols, data)
    }

    /// Single-column dataset.
    pub fn from_column(values: &[f64]) -> Self {
        Dataset {
            data: values.to_vec(),
            nrows: values.len(),
            ncols: 1,
        }
    }

    /// Load from a CSV file with a header row followed by numeric columns.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let ncols = reader.headers()?.len();
        let mut data = Vec::new();
        let mut nrows = 0;
        for record in reader.records() {
            let record = record?;
            if record.len() != ncols {
                return Err(Error::invalid(format!(
                    "csv row {} has {} fields, expected {}",
                    nrows + 2,
                    record.len(),
                    ncols
                )));
            }
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::invalid(format!("non-numeric csv field {field:?} in row {}", nrows + 2))
                })?;
                data.push(v);
            }
            nrows += 1;
        }
        Dataset::new(nrows, ncols, data)
    }

    /// Write to CSV with the given header names.
    pub fn to_csv(&self, path: impl AsRef<Path>, headers: &[&str]) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        writer.write_record(headers)?;
        for i in 0..self.nrows {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.ncols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "y1,y2,z\n1,0,2\n0,1,3.5").unwrap();
        drop(f);
        let d = Dataset::from_csv(&path).unwrap();
        assert_eq!(d.nrows(), 2);
        assert_eq!(d.ncols(), 3);
        assert_eq!(d.row(1), &[0.0, 1.0, 3.5]);
    }

    #[test]
    fn rejects_ragged_and_non_numeric() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,x\n").unwrap();
        assert!(Dataset::from_csv(&path).is_err());
    }
}
