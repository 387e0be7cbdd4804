//! Marked point measure of (arrival, service) pairs and the counts built on it.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 8] = b"COXQPTS1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub arrival: f64,
    pub service: f64,
}

impl Job {
    pub fn departure(&self) -> f64 {
        self.arrival + self.service
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointMeasure {
    jobs: Vec<Job>,
}

impl PointMeasure {
    pub fn new(jobs: Vec<Job>) -> Result<Self> {
        if jobs.windows(2).any(|w| w[1].arrival < w[0].arrival) {
            return Err(Error::arg("arrivals must be nondecreasing"));
        }
        if let Some(j) = jobs.iter().find(|j| !(j.service > 0.0) || !j.arrival.is_finite()) {
            return Err(Error::arg(format!("invalid job {j:?}: service must be positive")));
        }
        Ok(PointMeasure { jobs })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(arrival, service)| Job { arrival, service }).collect())
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// `#{k : arrival_k < t < arrival_k + service_k}`.
    pub fn count_in_system(&self, t: f64) -> u64 {
        self.jobs
            .iter()
            .take_while(|j| j.arrival < t)
            .filter(|j| t < j.departure())
            .count() as u64
    }

    pub fn region_count(&self, t1: f64, t2: f64) -> Result<RegionCounts> {
        if !(0.0 <= t1 && t1 < t2) {
            return Err(Error::arg(format!("region counts need 0 <= t1 < t2, got ({t1}, {t2})")));
        }
        let mut c = RegionCounts::default();
        for j in self.jobs.iter().take_while(|j| j.arrival <= t2) {
            let (g, d) = (j.arrival, j.departure());
            if g <= t1 {
                if t1 < d && d <= t2 {
                    c.a1 += 1;
                } else if d > t2 {
                    c.a2 += 1;
                }
            } else {
                c.a4 += 1;
                if d > t2 {
                    c.a3 += 1;
                } else {
                    c.a5 += 1;
                }
            }
        }
        Ok(c)
    }

    /// Number in system at each grid time, by an event sweep:
    /// `N(t) = #{arrival < t} - #{departure <= t}`.
    pub fn trajectory(&self, grid: &[f64]) -> Result<Vec<u64>> {
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::arg("grid must be strictly increasing"));
        }
        let mut departures: Vec<f64> = self.jobs.iter().map(Job::departure).collect();
        departures.sort_unstable_by(f64::total_cmp);
        let (mut a, mut d) = (0usize, 0usize);
        Ok(grid
            .iter()
            .map(|&t| {
                while a < self.jobs.len() && self.jobs[a].arrival < t {
                    a += 1;
                }
                while d < departures.len() && departures[d] <= t {
                    d += 1;
                }
                (a - d) as u64
            })
            .collect())
    }

    /// Writes the magic header followed by little-endian `(arrival, service)`
    /// pairs of 64-bit floats.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(DUMP_MAGIC)?;
        for j in &self.jobs {
            out.write_all(&j.arrival.to_le_bytes())?;
            out.write_all(&j.service.to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_dump<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Io { path: "<dump>".into(), message: e.to_string() })?;
        let body = bytes
            .strip_prefix(DUMP_MAGIC.as_slice())
            .ok_or_else(|| Error::Data("missing COXQPTS1 header".into()))?;
        if body.len() % 16 != 0 {
            return Err(Error::Data(format!("truncated dump: {} trailing bytes", body.len() % 16)));
        }
        let jobs = body
            .chunks_exact(16)
            .map(|c| Job {
                arrival: f64::from_le_bytes(c[..8].try_into().unwrap()),
                service: f64::from_le_bytes(c[8..].try_into().unwrap()),
            })
            .collect();
        Self::new(jobs)
    }
}

/// Counts over the regions of the (arrival, departure) plane for `t1 < t2`.
///
/// - `a1`: arrived by `t1`, departs in `(t1, t2]`
/// - `a2`: arrived by `t1`, departs after `t2`
/// - `a3`: arrived in `(t1, t2]`, departs after `t2`
/// - `a4`: arrived in `(t1, t2]`
/// - `a5`: arrived in `(t1, t2]`, departs by `t2`
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub a1: u64,
    pub a2: u64,
    pub a3: u64,
    pub a4: u64,
    pub a5: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pm(p: &[(f64, f64)]) -> PointMeasure {
        PointMeasure::from_pairs(p).unwrap()
    }

    #[test]
    fn count_examples() {
        assert_eq!(PointMeasure::default().count_in_system(1.0), 0);
        assert_eq!(pm(&[(0.5, 1.0), (0.8, 0.1), (1.2, 3.0)]).count_in_system(1.0), 1);
        assert_eq!(pm(&[(1.0, 2.0)]).count_in_system(1.0), 0);
        assert_eq!(pm(&[(0.0, 1.0)]).count_in_system(1.0), 0);
    }

    #[test]
    fn region_examples() {
        let c = pm(&[(0.5, 1.0)]).region_count(1.0, 2.0).unwrap();
        assert_eq!(c, RegionCounts { a1: 1, ..Default::default() });
        let c = pm(&[(0.5, 5.0)]).region_count(1.0, 2.0).unwrap();
        assert_eq!(c, RegionCounts { a2: 1, ..Default::default() });
        let c = pm(&[(1.5, 5.0)]).region_count(1.0, 2.0).unwrap();
        assert_eq!(c, RegionCounts { a3: 1, a4: 1, ..Default::default() });
        let c = pm(&[(1.5, 0.2)]).region_count(1.0, 2.0).unwrap();
        assert_eq!(c, RegionCounts { a4: 1, a5: 1, ..Default::default() });
        assert!(pm(&[]).region_count(2.0, 2.0).is_err());
        assert!(pm(&[]).region_count(3.0, 2.0).is_err());
    }

    #[test]
    fn trajectory_examples() {
        assert_eq!(pm(&[(0.0, 10.0)]).trajectory(&[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap(), vec![1; 9]);
        assert!(pm(&[(0.0, 1.0)]).trajectory(&[]).unwrap().is_empty());
        assert!(pm(&[]).trajectory(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn dump_round_trip_and_errors() {
        let m = pm(&[(0.25, 1.5), (0.5, 1e-3)]);
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        assert_eq!(&buf[..8], DUMP_MAGIC);
        assert_eq!(buf.len(), 8 + 32);
        assert_eq!(&buf[8..16], &0.25f64.to_le_bytes());
        assert_eq!(PointMeasure::read_dump(buf.as_slice()).unwrap(), m);
        assert!(PointMeasure::read_dump(&buf[..20]).is_err());
        assert!(PointMeasure::read_dump(&b"NOTMAGIC"[..]).is_err());
    }

    fn measure_strategy() -> impl Strategy<Value = PointMeasure> {
        prop::collection::vec((0.0f64..5.0, 0.001f64..4.0), 0..60).prop_map(|mut v| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            PointMeasure::from_pairs(&v).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn trajectory_matches_naive(m in measure_strategy(), mut grid in prop::collection::vec(0.0f64..6.0, 0..20)) {
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let sweep = m.trajectory(&grid).unwrap();
            let naive: Vec<u64> = grid.iter().map(|&t| m.count_in_system(t)).collect();
            prop_assert_eq!(sweep, naive);
        }

        #[test]
        fn increment_identity(m in measure_strategy(), t1 in 0.0f64..3.0, dt in 0.01f64..3.0) {
            let t2 = t1 + dt;
            let c = m.region_count(t1, t2).unwrap();
            let diff = m.count_in_system(t2) as i64 - m.count_in_system(t1) as i64;
            prop_assert_eq!(diff, c.a3 as i64 - c.a1 as i64);
            prop_assert_eq!(c.a3 + c.a5, c.a4);
            prop_assert_eq!(m.count_in_system(t1), c.a1 + c.a2);
        }
    }
}
