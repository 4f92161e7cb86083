//! Exposure accounting: empirical coverage `q̂_T = counts / T`, its L1 error
//! against target shares, and the percentage form reported as PrioCovErr.

use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::{l1_distance, Scalar};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageLedger {
    counts: Vec<u64>,
    total: u64,
}

impl CoverageLedger {
    pub fn new(m: usize) -> Self {
        Self {
            counts: vec![0; m],
            total: 0,
        }
    }

    /// Rebuilds a ledger from a count histogram.
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn record(&mut self, contract: usize) -> Result<()> {
        let len = self.counts.len();
        let slot = self
            .counts
            .get_mut(contract)
            .ok_or(Error::Bounds { index: contract, len })?;
        *slot += 1;
        self.total += 1;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn m(&self) -> usize {
        self.counts.len()
    }

    pub fn empirical_coverage<T: Scalar>(&self) -> Result<Vec<T>> {
        if self.total == 0 {
            return Err(Error::UndefinedCoverage);
        }
        let t = T::of(self.total as f64);
        Ok(self.counts.iter().map(|&c| T::of(c as f64) / t).collect())
    }

    /// `Σ_c |q̂_T(c) − w_c|`, in `[0, 2]`.
    pub fn coverage_error<T: Scalar>(&self, w: &[T]) -> Result<T> {
        if w.len() != self.counts.len() {
            return Err(Error::Shape(format!(
                "{} target shares for {} contracts",
                w.len(),
                self.counts.len()
            )));
        }
        Ok(l1_distance(&self.empirical_coverage::<T>()?, w))
    }

    pub fn prio_cov_err_percent<T: Scalar>(&self, w: &[T]) -> Result<T> {
        Ok(T::of(100.0) * self.coverage_error(w)?)
    }
}

/// Coverage trajectory sampled every `every` recorded steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    pub every: u64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub coverage: Vec<f64>,
    pub prio_cov_err_percent: f64,
}

impl CoverageCurve {
    pub fn new(every: u64) -> Self {
        Self {
            every: every.max(1),
            points: Vec::new(),
        }
    }

    /// Appends a point when `step` is on the cadence.
    pub fn observe(&mut self, step: u64, ledger: &CoverageLedger, w: &[f64]) -> Result<()> {
        if step.is_multiple_of(self.every) {
            self.push(step, ledger, w)?;
        }
        Ok(())
    }

    pub fn push(&mut self, step: u64, ledger: &CoverageLedger, w: &[f64]) -> Result<()> {
        if self.points.last().is_some_and(|p| p.step == step) {
            return Ok(());
        }
        self.points.push(CurvePoint {
            step,
            coverage: ledger.empirical_coverage()?,
            prio_cov_err_percent: ledger.prio_cov_err_percent(w)?,
        });
        Ok(())
    }

    /// Long-format CSV `kind,step,contract,value`: `coverage` rows per contract and
    /// one `prio_cov_err_pct` row (empty contract) per logged step.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "step", "contract", "value"])?;
        for p in &self.points {
            let step = p.step.to_string();
            for (c, q) in p.coverage.iter().enumerate() {
                w.write_record(["coverage", &step, &c.to_string(), &q.to_string()])?;
            }
            w.write_record(["prio_cov_err_pct", &step, "", &p.prio_cov_err_percent.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recording() {
        let mut l = CoverageLedger::new(3);
        l.record(0).unwrap();
        assert_eq!((l.counts(), l.total()), (&[1, 0, 0][..], 1));
        l.record(1).unwrap();
        l.record(2).unwrap();
        assert_eq!((l.counts(), l.total()), (&[1, 1, 1][..], 3));
        assert!(matches!(l.record(3), Err(Error::Bounds { index: 3, len: 3 })));

        let mut l = CoverageLedger::new(3);
        for _ in 0..1000 {
            l.record(2).unwrap();
        }
        assert_eq!((l.counts()[2], l.total()), (1000, 1000));
        assert_eq!(l.empirical_coverage::<f64>().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn coverage_values() {
        let l = CoverageLedger::from_counts(vec![3, 1]);
        assert_eq!(l.empirical_coverage::<f64>().unwrap(), vec![0.75, 0.25]);
        assert_eq!(l.coverage_error(&[0.75, 0.25]).unwrap(), 0.0);
        let l = CoverageLedger::from_counts(vec![5, 5, 5, 5]);
        assert_eq!(l.empirical_coverage::<f32>().unwrap(), vec![0.25f32; 4]);
        assert!(matches!(
            CoverageLedger::new(2).empirical_coverage::<f64>(),
            Err(Error::UndefinedCoverage)
        ));
        assert!(matches!(l.coverage_error(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn error_values() {
        let disjoint = CoverageLedger::from_counts(vec![10, 0]);
        assert_eq!(disjoint.coverage_error(&[0.0, 1.0]).unwrap(), 2.0);
        let l = CoverageLedger::from_counts(vec![7, 3]);
        assert!((l.coverage_error::<f64>(&[0.5, 0.5]).unwrap() - 0.4).abs() < 1e-15);
        assert!((l.prio_cov_err_percent::<f64>(&[0.5, 0.5]).unwrap() - 40.0).abs() < 1e-12);
        assert_eq!(l.prio_cov_err_percent(&[0.7, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn curve_csv_layout() {
        let mut curve = CoverageCurve::new(2);
        let mut l = CoverageLedger::new(2);
        for step in 1..=4u64 {
            l.record((step % 2) as usize).unwrap();
            curve.observe(step, &l, &[0.5, 0.5]).unwrap();
        }
        curve.push(4, &l, &[0.5, 0.5]).unwrap();
        let mut out = Vec::new();
        curve.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "kind,step,contract,value\n\
             coverage,2,0,0.5\ncoverage,2,1,0.5\nprio_cov_err_pct,2,,0\n\
             coverage,4,0,0.5\ncoverage,4,1,0.5\nprio_cov_err_pct,4,,0\n"
        );
    }
}
