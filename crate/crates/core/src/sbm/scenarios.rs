//! Joint duration scenarios `w_s^l`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioSource {
    Sampled,
    /// Medoids of a larger set.
    Reduced { from: usize },
    Loaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub surgery_ids: Vec<String>,
    /// `durations[l][s]`, minutes.
    pub durations: Vec<Vec<f64>>,
    pub seed: Option<u64>,
    pub source: ScenarioSource,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (l, row) in self.durations.iter().enumerate() {
            if row.len() != self.surgery_ids.len() {
                return Err(Error::domain(format!(
                    "scenario {l} has {} durations for {} surgeries",
                    row.len(),
                    self.surgery_ids.len()
                )));
            }
            if let Some(d) = row.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
                return Err(Error::domain(format!("scenario {l} has nonpositive duration {d}")));
            }
        }
        Ok(())
    }

    /// Fail unless the columns are exactly the instance's surgeries in order.
    pub fn check_against(&self, instance: &Instance) -> Result<()> {
        let same = self.surgery_ids.len() == instance.surgeries.len()
            && self
                .surgery_ids
                .iter()
                .zip(&instance.surgeries)
                .all(|(a, b)| *a == b.surgery_id);
        if same {
            Ok(())
        } else {
            Err(Error::InvalidInstance(
                "scenario columns do not match the instance surgeries".into(),
            ))
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            surgery_ids: self.surgery_ids.clone(),
            durations: rows.iter().map(|&r| self.durations[r].clone()).collect(),
            seed: self.seed,
            source: ScenarioSource::Reduced { from: self.len() },
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["scenario".to_string()];
        header.extend(self.surgery_ids.iter().cloned());
        w.write_record(&header)?;
        for (l, row) in self.durations.iter().enumerate() {
            let mut rec = vec![l.to_string()];
            // Shortest round-trip form keeps reloads bit-identical.
            rec.extend(row.iter().map(|d| format!("{d:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("scenario") {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "first column must be `scenario`".into(),
            });
        }
        let surgery_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut durations = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let row = rec
                .iter()
                .skip(1)
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!("bad duration `{f}`"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            durations.push(row);
        }
        let set = Self {
            surgery_ids,
            durations,
            seed: None,
            source: ScenarioSource::Loaded,
        };
        set.validate()?;
        Ok(set)
    }
}

/// Draw `count` joint scenarios from each surgery's lognormal.
pub fn sample_scenarios(instance: &Instance, count: usize, seed: u64) -> Result<ScenarioSet> {
    if count == 0 {
        return Err(Error::domain("scenario count must be at least 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<_> = (0..instance.surgeries.len()).map(|s| instance.lognormal(s)).collect();
    let durations = (0..count)
        .map(|_| {
            params
                .iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if p.sigma2 == 0.0 {
                        p.mu.exp()
                    } else {
                        (p.mu + p.sigma() * z).exp()
                    }
                })
                .collect()
        })
        .collect();
    Ok(ScenarioSet {
        surgery_ids: instance.surgeries.iter().map(|s| s.surgery_id.clone()).collect(),
        durations,
        seed: Some(seed),
        source: ScenarioSource::Sampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{OrDaySlot, RawSurgery, SurgeryType};

    fn inst() -> Instance {
        let types = vec![
            SurgeryType::deterministic("D", 100.0),
            SurgeryType::from_observations("R", vec![80.0, 100.0, 150.0, 200.0]).unwrap(),
        ];
        let raw = vec![RawSurgery::new("a", "D", 0, None), RawSurgery::new("b", "R", 0, None)];
        Instance::assemble(types, raw, vec![OrDaySlot::new("OR1", 0, 510.0)], 0.15).unwrap()
    }

    #[test]
    fn sampling_examples() {
        let i = inst();
        let one = sample_scenarios(&i, 1, 9).unwrap();
        assert_eq!(one.len(), 1);
        let set = sample_scenarios(&i, 100_000, 9).unwrap();
        assert!(set.durations.iter().all(|r| r[0] == 100.0_f64.ln().exp()));
        let mean = set.durations.iter().map(|r| r[1]).sum::<f64>() / set.len() as f64;
        let expect = i.lognormal_moments(1).mean;
        assert!((mean / expect - 1.0).abs() < 0.01, "{mean} vs {expect}");
        assert_eq!(sample_scenarios(&i, 50, 4).unwrap(), sample_scenarios(&i, 50, 4).unwrap());
        assert!(sample_scenarios(&i, 0, 4).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let i = inst();
        let set = sample_scenarios(&i, 20, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        set.write_csv(&p).unwrap();
        let back = ScenarioSet::read_csv(&p).unwrap();
        assert_eq!(back.durations, set.durations);
        assert_eq!(back.surgery_ids, set.surgery_ids);
        back.check_against(&i).unwrap();

        std::fs::write(&p, "scenario,a,b\n0,1,x\n").unwrap();
        match ScenarioSet::read_csv(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
