use std::io::Read;
use std::path::Path;

use crate::{io_err, CliError, Result};

/// A headed CSV held as strings. Comma separated, UTF-8, no trimming.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            rows.push(record?.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        Self::from_reader(file)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))
    }

    pub fn strings(&self, name: &str) -> Result<Vec<String>> {
        let j = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    /// Parses a column as `f64`. Row numbers in errors count data rows from 1.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[j].parse::<f64>().map_err(|_| CliError::NonNumericValue {
                    column: name.to_string(),
                    row: i + 1,
                    value: r[j].clone(),
                })
            })
            .collect()
    }
}
