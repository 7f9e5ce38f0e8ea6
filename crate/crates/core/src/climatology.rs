//! Climatological means and percentile tables, stratified by channel,
//! month of year, and hour of day.
//!
//! Percentiles use linear interpolation between closest order statistics
//! (the h = (n−1)·p/100 convention). Persisted as shared-format field
//! files plus a JSON index.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::{load_field, save_field};
use crate::grid::{Field, GridSpec};

/// (month 1–12, hour 0–23) stratum label.
pub type StratumKey = (u8, u8);

fn stratum_name(channel: &str, key: StratumKey) -> String {
    format!("{channel} month={} hour={}", key.0, key.1)
}

/// Per-stratum climatological statistics on one grid.
#[derive(Debug, Clone)]
pub struct Stratum {
    pub mean: Field,
    /// (level in percent, field), ascending in level.
    pub percentiles: Vec<(f64, Field)>,
    pub samples: usize,
}

/// Climatology tables for a set of channels.
#[derive(Debug, Clone)]
pub struct Climatology {
    pub grid: GridSpec,
    pub levels: Vec<f64>,
    pub channels: BTreeMap<String, BTreeMap<StratumKey, Stratum>>,
}

impl Climatology {
    pub fn stratum(&self, channel: &str, month: u8, hour: u8) -> Result<&Stratum> {
        self.channels
            .get(channel)
            .and_then(|c| c.get(&(month, hour)))
            .ok_or_else(|| Error::MissingClimatology(stratum_name(channel, (month, hour))))
    }

    pub fn mean_field(&self, channel: &str, month: u8, hour: u8) -> Result<&Field> {
        Ok(&self.stratum(channel, month, hour)?.mean)
    }

    pub fn percentile_field(
        &self,
        channel: &str,
        month: u8,
        hour: u8,
        level: f64,
    ) -> Result<&Field> {
        let s = self.stratum(channel, month, hour)?;
        s.percentiles
            .iter()
            .find(|(l, _)| (l - level).abs() < 1e-9)
            .map(|(_, f)| f)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "percentile level {level} not in climatology (have {:?})",
                    self.levels
                ))
            })
    }
}

/// Accumulates per-stratum sample fields, then computes means and
/// percentile tables.
#[derive(Debug)]
pub struct ClimatologyBuilder {
    grid: GridSpec,
    levels: Vec<f64>,
    // channel -> stratum -> per-gridpoint sample lists
    samples: BTreeMap<String, BTreeMap<StratumKey, Vec<Vec<f64>>>>,
}

impl ClimatologyBuilder {
    pub fn new(grid: GridSpec, mut levels: Vec<f64>) -> Self {
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ClimatologyBuilder {
            grid,
            levels,
            samples: BTreeMap::new(),
        }
    }

    /// Default percentile levels: extreme-low and extreme-high tails.
    pub fn default_levels() -> Vec<f64> {
        vec![2.0, 5.0, 10.0, 90.0, 95.0, 98.0]
    }

    pub fn add(&mut self, channel: &str, month: u8, hour: u8, field: &Field) -> Result<()> {
        if !field.grid.same_geometry(&self.grid) {
            return Err(Error::GridMismatch {
                a: self.grid.describe(),
                b: field.grid.describe(),
            });
        }
        let per_point = self
            .samples
            .entry(channel.to_string())
            .or_default()
            .entry((month, hour))
            .or_insert_with(|| vec![Vec::new(); field.values.len()]);
        for (list, v) in per_point.iter_mut().zip(&field.values) {
            list.push(*v);
        }
        Ok(())
    }

    pub fn build(self) -> Result<Climatology> {
        let mut channels = BTreeMap::new();
        for (channel, strata) in self.samples {
            let mut out = BTreeMap::new();
            for (key, mut per_point) in strata {
                let n = per_point[0].len();
                if n < 2 {
                    return Err(Error::MissingClimatology(format!(
                        "{} has {n} sample(s), need >= 2",
                        stratum_name(&channel, key)
                    )));
                }
                let mut mean = vec![0.0; per_point.len()];
                for (m, list) in mean.iter_mut().zip(&per_point) {
                    *m = list.iter().sum::<f64>() / n as f64;
                }
                let mut percentiles = Vec::with_capacity(self.levels.len());
                for list in &mut per_point {
                    list.sort_by(|a, b| a.partial_cmp(b).unwrap());
                }
                for &level in &self.levels {
                    let vals: Vec<f64> = per_point
                        .iter()
                        .map(|list| percentile_sorted(list, level))
                        .collect();
                    percentiles.push((level, Field::new(self.grid, vals)?));
                }
                out.insert(
                    key,
                    Stratum {
                        mean: Field::new(self.grid, mean)?,
                        percentiles,
                        samples: n,
                    },
                );
            }
            channels.insert(channel, out);
        }
        Ok(Climatology {
            grid: self.grid,
            levels: self.levels,
            channels,
        })
    }
}

/// Percentile of a sorted sample by linear interpolation between order
/// statistics: h = (n−1)·p/100, value = x⌊h⌋ + frac(h)·(x⌊h⌋₊₁ − x⌊h⌋).
pub fn percentile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * (level / 100.0).clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    month: u8,
    hour: u8,
    samples: usize,
    mean: String,
    percentiles: Vec<(f64, String)>,
}

#[derive(Serialize, Deserialize)]
struct ClimIndex {
    levels: Vec<f64>,
    channels: BTreeMap<String, Vec<IndexEntry>>,
}

/// Persist as one field file per (channel, stratum, table) plus index.json.
pub fn save_climatology(dir: &Path, clim: &Climatology) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = ClimIndex {
        levels: clim.levels.clone(),
        channels: BTreeMap::new(),
    };
    for (channel, strata) in &clim.channels {
        let mut entries = Vec::new();
        for (key, s) in strata {
            let base = format!("{channel}_m{:02}_h{:02}", key.0, key.1);
            let mean_file = format!("{base}_mean.ensf");
            save_field(&dir.join(&mean_file), &s.mean)?;
            let mut pfiles = Vec::new();
            for (level, f) in &s.percentiles {
                let pf = format!("{base}_p{level}.ensf");
                save_field(&dir.join(&pf), f)?;
                pfiles.push((*level, pf));
            }
            entries.push(IndexEntry {
                month: key.0,
                hour: key.1,
                samples: s.samples,
                mean: mean_file,
                percentiles: pfiles,
            });
        }
        index.channels.insert(channel.clone(), entries);
    }
    let json = serde_json::to_string_pretty(&index)
        .map_err(|e| Error::invalid(format!("climatology index serialization: {e}")))?;
    std::fs::write(dir.join("index.json"), json)?;
    Ok(())
}

pub fn load_climatology(dir: &Path) -> Result<Climatology> {
    let index_path = dir.join("index.json");
    let text = std::fs::read_to_string(&index_path)?;
    let index: ClimIndex = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: index_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut channels = BTreeMap::new();
    let mut grid: Option<GridSpec> = None;
    for (channel, entries) in index.channels {
        let mut strata = BTreeMap::new();
        for e in entries {
            let mean = load_field(&dir.join(&e.mean))?;
            grid.get_or_insert(mean.grid);
            let mut percentiles = Vec::new();
            for (level, file) in e.percentiles {
                percentiles.push((level, load_field(&dir.join(&file))?));
            }
            strata.insert(
                (e.month, e.hour),
                Stratum {
                    mean,
                    percentiles,
                    samples: e.samples,
                },
            );
        }
        channels.insert(channel, strata);
    }
    let grid = grid.ok_or_else(|| Error::Format {
        path: index_path.display().to_string(),
        reason: "climatology index has no strata".into(),
    })?;
    Ok(Climatology {
        grid,
        levels: index.levels,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_point_grid() -> GridSpec {
        GridSpec::new(1, 1, 0.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn percentile_linear_interpolation_convention() {
        let sorted: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert!((percentile_sorted(&sorted, 90.0) - 90.1).abs() < 1e-12);
        assert!((percentile_sorted(&sorted, 0.0) - 1.0).abs() < 1e-12);
        assert!((percentile_sorted(&sorted, 100.0) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn constant_history_gives_constant_percentiles() {
        let g = one_point_grid();
        let mut b = ClimatologyBuilder::new(g, ClimatologyBuilder::default_levels());
        for _ in 0..5 {
            b.add("t", 1, 0, &Field::constant(g, 7.25)).unwrap();
        }
        let clim = b.build().unwrap();
        for level in [2.0, 50.0f64, 98.0] {
            if clim.levels.contains(&level) {
                let f = clim.percentile_field("t", 1, 0, level).unwrap();
                assert_eq!(f.values[0], 7.25);
            }
        }
        assert_eq!(clim.mean_field("t", 1, 0).unwrap().values[0], 7.25);
    }

    #[test]
    fn percentiles_monotone_in_level() {
        let g = one_point_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut b = ClimatologyBuilder::new(g, ClimatologyBuilder::default_levels());
        for _ in 0..64 {
            b.add("t", 3, 12, &Field::constant(g, rng.gen_range(-5.0..5.0)))
                .unwrap();
        }
        let clim = b.build().unwrap();
        let s = clim.stratum("t", 3, 12).unwrap();
        for pair in s.percentiles.windows(2) {
            assert!(pair[0].0 < pair[1].0);
            assert!(pair[0].1.values[0] <= pair[1].1.values[0]);
        }
    }

    #[test]
    fn missing_and_underfilled_strata_error() {
        let g = one_point_grid();
        let mut b = ClimatologyBuilder::new(g, vec![50.0]);
        b.add("t", 1, 0, &Field::constant(g, 1.0)).unwrap();
        // single sample -> rejected at build
        assert!(matches!(
            b.build(),
            Err(Error::MissingClimatology(ref s)) if s.contains("month=1")
        ));

        let mut b = ClimatologyBuilder::new(g, vec![50.0]);
        b.add("t", 1, 0, &Field::constant(g, 1.0)).unwrap();
        b.add("t", 1, 0, &Field::constant(g, 2.0)).unwrap();
        let clim = b.build().unwrap();
        assert!(matches!(
            clim.mean_field("t", 2, 0),
            Err(Error::MissingClimatology(ref s)) if s.contains("month=2")
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let g = one_point_grid();
        let mut b = ClimatologyBuilder::new(g, vec![10.0, 90.0]);
        for v in [1.0, 2.0, 3.0, 4.0] {
            b.add("msl", 2, 6, &Field::constant(g, v)).unwrap();
        }
        let clim = b.build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_climatology(dir.path(), &clim).unwrap();
        let back = load_climatology(dir.path()).unwrap();
        let a = clim.percentile_field("msl", 2, 6, 90.0).unwrap();
        let b = back.percentile_field("msl", 2, 6, 90.0).unwrap();
        assert!((a.values[0] - b.values[0]).abs() < 1e-6);
    }
}
