//! Observed and potential-outcome data.

use crate::error::{Error, Result};

/// Row-major table of equal-width real vectors, one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Rows {
    width: usize,
    values: Vec<f64>,
}

impl Rows {
    /// Wraps a flat buffer. `values.len()` must be a multiple of `width`.
    pub fn from_flat(width: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("row width must be at least 1".into()));
        }
        if !values.len().is_multiple_of(width) {
            return Err(Error::LengthMismatch {
                field: "flat rows",
                expected: (values.len() / width + 1) * width,
                found: values.len(),
            });
        }
        Ok(Self { width, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(Vec::len).ok_or(Error::EmptyInput)?;
        let mut values = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::LengthMismatch {
                    field: "row",
                    expected: width,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(width, values)
    }

    /// One scalar per unit.
    pub fn column(values: Vec<f64>) -> Self {
        Self { width: 1, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.width)
    }

    /// Values of coordinate `j` for every unit.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.iter().map(|r| r[j]).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// Keeps the rows listed in `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.width);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self {
            width: self.width,
            values,
        }
    }
}

/// Observed data `(X_i, A_i, R_i)` from an experiment with known treatment
/// fraction `eta`.
///
/// Always validated: construct through [`validate`] or [`ExperimentData::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    eta: f64,
    x: Rows,
    a: Vec<u8>,
    r: Rows,
}

/// Checks every invariant of [`ExperimentData`] and returns the validated
/// data. Treatments are taken as integers so that out-of-range codes can be
/// reported rather than silently truncated.
pub fn validate(eta: f64, x: Rows, a: &[i64], r: Rows) -> Result<ExperimentData> {
    let mut binary = Vec::with_capacity(a.len());
    for (i, &ai) in a.iter().enumerate() {
        match ai {
            0 | 1 => binary.push(ai as u8),
            value => return Err(Error::NonBinaryTreatment { row: i + 1, value }),
        }
    }
    ExperimentData::new(eta, x, binary, r)
}

impl ExperimentData {
    pub fn new(eta: f64, x: Rows, a: Vec<u8>, r: Rows) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::EtaOutOfRange(eta));
        }
        let n = a.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if x.len() != n {
            return Err(Error::LengthMismatch {
                field: "covariates",
                expected: n,
                found: x.len(),
            });
        }
        if r.len() != n {
            return Err(Error::LengthMismatch {
                field: "responses",
                expected: n,
                found: r.len(),
            });
        }
        if let Some((i, &value)) = a.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryTreatment {
                row: i + 1,
                value: value as i64,
            });
        }
        check_finite(&x, "covariates")?;
        check_finite(&r, "responses")?;
        Ok(Self { eta, x, a, r })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn x(&self) -> &Rows {
        &self.x
    }

    pub fn r(&self) -> &Rows {
        &self.r
    }

    pub fn treatment(&self) -> &[u8] {
        &self.a
    }

    /// `(x_i, a_i, r_i)` for unit `i`.
    #[inline]
    pub fn unit(&self, i: usize) -> (&[f64], u8, &[f64]) {
        (self.x.row(i), self.a[i], self.r.row(i))
    }

    /// Number of units with `A_i = arm`.
    pub fn arm_size(&self, arm: u8) -> usize {
        self.a.iter().filter(|&&a| a == arm).count()
    }

    /// Design fraction for `arm`: `eta` for treatment, `1 - eta` for control.
    pub fn arm_eta(&self, arm: u8) -> f64 {
        if arm == 1 {
            self.eta
        } else {
            1.0 - self.eta
        }
    }

    /// Same data with units reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            eta: self.eta,
            x: self.x.select(order),
            a: order.iter().map(|&i| self.a[i]).collect(),
            r: self.r.select(order),
        }
    }

    /// Replaces the response table, keeping covariates and assignment.
    pub fn with_responses(&self, r: Rows) -> Result<Self> {
        Self::new(self.eta, self.x.clone(), self.a.clone(), r)
    }
}

fn check_finite(rows: &Rows, field: &'static str) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: i + 1, field });
        }
    }
    Ok(())
}

/// Covariates and both potential responses for each unit. Simulation only.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialData {
    pub x: Rows,
    pub r1: Rows,
    pub r0: Rows,
}

impl PotentialData {
    pub fn new(x: Rows, r1: Rows, r0: Rows) -> Result<Self> {
        let n = x.len();
        for (field, rows) in [("r1", &r1), ("r0", &r0)] {
            if rows.len() != n {
                return Err(Error::LengthMismatch {
                    field,
                    expected: n,
                    found: rows.len(),
                });
            }
        }
        if r1.width() != r0.width() {
            return Err(Error::LengthMismatch {
                field: "r0 width",
                expected: r1.width(),
                found: r0.width(),
            });
        }
        Ok(Self { x, r1, r0 })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Observed data under assignment `a`: `R_i = R_i(1) A_i + R_i(0) (1 - A_i)`.
    pub fn reveal(&self, a: &[u8], eta: f64) -> Result<ExperimentData> {
        if a.len() != self.n() {
            return Err(Error::LengthMismatch {
                field: "assignment",
                expected: self.n(),
                found: a.len(),
            });
        }
        let width = self.r1.width();
        let mut values = Vec::with_capacity(self.n() * width);
        for (i, &ai) in a.iter().enumerate() {
            let src = if ai == 1 { self.r1.row(i) } else { self.r0.row(i) };
            values.extend_from_slice(src);
        }
        ExperimentData::new(eta, self.x.clone(), a.to_vec(), Rows::from_flat(width, values)?)
    }
}

/// A point estimate with optional variance and normal interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub theta: Vec<f64>,
    /// Scalar summary `h(theta)` for vector parameters (QTE, log-odds).
    pub transformed: Option<f64>,
    pub vhat: Option<f64>,
    /// `sqrt(vhat / n)`.
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// Free-form description of design and estimator.
    pub provenance: String,
}

impl Estimate {
    pub fn point(theta: Vec<f64>, transformed: Option<f64>, provenance: impl Into<String>) -> Self {
        Self {
            theta,
            transformed,
            vhat: None,
            se: None,
            ci: None,
            provenance: provenance.into(),
        }
    }

    /// The scalar of interest: `transformed` if present, else `theta[0]`.
    pub fn headline(&self) -> f64 {
        self.transformed.unwrap_or(self.theta[0])
    }
}
