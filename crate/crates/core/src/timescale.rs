//! The order-preserving map from observed times to the unit interval.
//!
//! The j-th informative failure (in data order) sits at `j / k`. A failure is
//! informative when its risk set holds subjects from both arms; the others
//! carry no information on the treatment effect and are left off the grid.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::TrialData;
use crate::error::{Error, Result};

/// One failure on the transformed grid with its Breslow risk-set counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridFailure {
    /// Original failure time.
    pub time: f64,
    /// Index into the sorted records.
    pub record: usize,
    pub group: u8,
    /// Subjects at risk (`X >= time`) per group.
    pub at_risk: [usize; 2],
}

impl GridFailure {
    pub fn is_informative(&self) -> bool {
        self.at_risk[0] > 0 && self.at_risk[1] > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeScale {
    grid: Vec<GridFailure>,
    excluded: Vec<usize>,
}

impl TimeScale {
    /// Builds the scale, dropping uninformative failures.
    pub fn build(data: &TrialData) -> Result<Self> {
        Self::build_with(data, true)
    }

    /// With `exclude_uninformative = false` every failure is kept on the grid
    /// (diagnostics only; the effect process then hits zero variances).
    pub fn build_with(data: &TrialData, exclude_uninformative: bool) -> Result<Self> {
        let recs = data.records();
        let mut at_risk = [data.group_count(0), data.group_count(1)];
        let mut grid = Vec::with_capacity(data.events());
        let mut excluded = Vec::new();
        let mut any_informative = false;
        let mut i = 0;
        while i < recs.len() {
            let t = recs[i].time;
            let mut j = i;
            while j < recs.len() && recs[j].time == t {
                j += 1;
            }
            for (k, r) in recs[i..j].iter().enumerate() {
                if !r.event {
                    continue;
                }
                let failure = GridFailure {
                    time: t,
                    record: i + k,
                    group: r.group,
                    at_risk,
                };
                if failure.is_informative() {
                    any_informative = true;
                    grid.push(failure);
                } else if exclude_uninformative {
                    excluded.push(i + k);
                } else {
                    grid.push(failure);
                }
            }
            for r in &recs[i..j] {
                at_risk[r.group as usize] -= 1;
            }
            i = j;
        }
        if !any_informative {
            return Err(Error::NoInformativeFailures);
        }
        Ok(Self { grid, excluded })
    }

    /// Number of grid failures `k`.
    pub fn k(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[GridFailure] {
        &self.grid
    }

    /// Sorted-record indices of failures left off the grid.
    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    /// Unit time of the j-th grid failure (1-based), `j / k`.
    pub fn unit(&self, j: usize) -> f64 {
        j as f64 / self.k() as f64
    }

    /// Unit times of all grid failures, `1/k, …, 1`.
    pub fn unit_times(&self) -> Vec<f64> {
        (1..=self.k()).map(|j| self.unit(j)).collect()
    }

    /// Right-continuous step map: `j/k` for the largest grid time `<= t`.
    pub fn to_unit(&self, t: f64) -> f64 {
        let j = self.grid.partition_point(|g| g.time <= t);
        self.unit(j)
    }

    /// Grid index (1-based) holding unit time `u`: `ceil(u k)`, 0 for `u <= 0`.
    pub fn index_of_unit(&self, u: f64) -> usize {
        if u <= 0.0 {
            return 0;
        }
        let k = self.k() as f64;
        // absorb rounding in u = j/k
        let j = (u * k - 1e-9).ceil().max(1.0) as usize;
        j.min(self.k())
    }

    /// Inverse on the grid; off-grid `u` rounds up to the next grid point.
    pub fn from_unit(&self, u: f64) -> f64 {
        match self.index_of_unit(u) {
            0 => 0.0,
            j => self.grid[j - 1].time,
        }
    }

    /// `original<TAB>unit` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("original\tunit\n");
        for (j, g) in self.grid.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}", g.time, self.unit(j + 1));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SurvivalRecord;

    fn data(times: &[f64], groups: &[u8]) -> TrialData {
        TrialData::new(
            times
                .iter()
                .zip(groups)
                .map(|(&time, &group)| SurvivalRecord {
                    time,
                    event: true,
                    group,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn last_failure_is_uninformative() {
        let d = data(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 1, 0]);
        let ts = TimeScale::build(&d).unwrap();
        assert_eq!(ts.k(), 3);
        assert_eq!(ts.excluded(), &[3]);
        assert_eq!(TimeScale::build_with(&d, false).unwrap().k(), 4);
    }

    #[test]
    fn single_arm_has_no_information() {
        let d = data(&[1.0, 2.0], &[1, 1]);
        assert_eq!(TimeScale::build(&d), Err(Error::NoInformativeFailures));
    }

    #[test]
    fn to_unit_and_from_unit() {
        let d = data(&[5.0, 9.0, 11.0, 12.0], &[0, 1, 0, 1]);
        let ts = TimeScale::build(&d).unwrap();
        assert_eq!(ts.k(), 3);
        assert_eq!(ts.to_unit(1.0), 0.0);
        assert_eq!(ts.to_unit(9.0), 2.0 / 3.0);
        assert_eq!(ts.to_unit(10.0), 2.0 / 3.0);
        assert_eq!(ts.to_unit(100.0), 1.0);
        assert_eq!(ts.from_unit(0.0), 0.0);
        assert_eq!(ts.from_unit(0.5), 9.0);
        for j in 1..=ts.k() {
            let u = ts.unit(j);
            assert_eq!(ts.to_unit(ts.from_unit(u)), u);
            assert_eq!(ts.from_unit(u), ts.grid()[j - 1].time);
        }
    }

    #[test]
    fn tsv_header() {
        let d = data(&[1.0, 2.0, 3.0], &[0, 1, 0]);
        let ts = TimeScale::build(&d).unwrap();
        assert!(ts.to_tsv().starts_with("original\tunit\n1\t0.5\n"));
    }
}
