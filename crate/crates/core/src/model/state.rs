//! Model state: the two-time-slice input cube and per-channel
//! standardization statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::tape::Tensor;

/// Per-channel z-score statistics fitted on training data and stored in
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Identity statistics (mean 0, std 1).
    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Fit population mean/std per channel over a set of C×H×W frames.
    pub fn fit(frames: &[&[f64]], channels: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("cannot fit statistics on zero frames"));
        }
        let plane = frames[0].len() / channels;
        let mut mean = vec![0.0; channels];
        let mut count = 0usize;
        for f in frames {
            for c in 0..channels {
                mean[c] += f[c * plane..(c + 1) * plane].iter().sum::<f64>();
            }
            count += plane;
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; channels];
        for f in frames {
            for c in 0..channels {
                var[c] += f[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|v| (v - mean[c]) * (v - mean[c]))
                    .sum::<f64>();
            }
        }
        let std = var
            .into_iter()
            .map(|v| (v / count as f64).sqrt().max(1e-12))
            .collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn standardize(&self, frame: &[f64]) -> Vec<f64> {
        let plane = frame.len() / self.mean.len();
        frame
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i / plane]) / self.std[i / plane])
            .collect()
    }

    pub fn destandardize(&self, frame: &[f64]) -> Vec<f64> {
        let plane = frame.len() / self.mean.len();
        frame
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i / plane] + self.mean[i / plane])
            .collect()
    }
}

/// Two consecutive time slices of C channels on an H×W grid, in physical
/// units, with the standardization statistics the model was fitted with.
#[derive(Debug, Clone)]
pub struct StateCube {
    pub grid: GridSpec,
    pub channels: Vec<String>,
    /// Slice at t−1, C×H×W.
    pub prev: Vec<f64>,
    /// Slice at t, C×H×W.
    pub curr: Vec<f64>,
    pub stats: ChannelStats,
}

impl StateCube {
    pub fn new(
        grid: GridSpec,
        channels: Vec<String>,
        prev: Vec<f64>,
        curr: Vec<f64>,
        stats: ChannelStats,
    ) -> Result<Self> {
        let expect = channels.len() * grid.len();
        if prev.len() != expect || curr.len() != expect {
            return Err(Error::shape(
                format!("{expect} values per slice"),
                format!("prev {}, curr {}", prev.len(), curr.len()),
            ));
        }
        if stats.mean.len() != channels.len() {
            return Err(Error::shape(
                format!("stats for {} channels", channels.len()),
                format!("{}", stats.mean.len()),
            ));
        }
        if prev.iter().chain(curr.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("state cube contains non-finite values"));
        }
        Ok(StateCube {
            grid,
            channels,
            prev,
            curr,
            stats,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Standardized (2C, H, W) tensor: prev slice channels then curr.
    pub fn standardized_tensor(&self) -> Tensor {
        let mut data = self.stats.standardize(&self.prev);
        data.extend(self.stats.standardize(&self.curr));
        Tensor {
            dims: vec![
                2 * self.n_channels(),
                self.grid.nlat,
                self.grid.nlon,
            ],
            data,
        }
    }
}

/// Time-of-step encodings plus a static mask channel, appended to every
/// network input: [sin(2πs/P), cos(2πs/P), 1].
pub fn aux_tensor(step: usize, period: u32, nlat: usize, nlon: usize) -> Tensor {
    let phase = 2.0 * std::f64::consts::PI * step as f64 / period.max(1) as f64;
    let plane = nlat * nlon;
    let mut data = Vec::with_capacity(3 * plane);
    data.extend(std::iter::repeat(phase.sin()).take(plane));
    data.extend(std::iter::repeat(phase.cos()).take(plane));
    data.extend(std::iter::repeat(1.0).take(plane));
    Tensor {
        dims: vec![3, nlat, nlon],
        data,
    }
}

/// Number of auxiliary channels appended to network inputs.
pub const AUX_CHANNELS: usize = 3;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_and_roundtrip() {
        let frames = [
            vec![1.0, 3.0, 10.0, 30.0],
            vec![2.0, 2.0, 20.0, 20.0],
        ];
        let refs: Vec<&[f64]> = frames.iter().map(|f| f.as_slice()).collect();
        let stats = ChannelStats::fit(&refs, 2).unwrap();
        assert!((stats.mean[0] - 2.0).abs() < 1e-12);
        assert!((stats.mean[1] - 20.0).abs() < 1e-12);

        let z = stats.standardize(&frames[0]);
        let back = stats.destandardize(&z);
        for (a, b) in back.iter().zip(&frames[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_frames_have_unit_scale() {
        let frames = [vec![1.0, 3.0], vec![2.0, 2.0], vec![0.0, 4.0]];
        let refs: Vec<&[f64]> = frames.iter().map(|f| f.as_slice()).collect();
        let stats = ChannelStats::fit(&refs, 1).unwrap();
        let all: Vec<f64> = frames.iter().flat_map(|f| stats.standardize(f)).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let std =
            (all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64).sqrt();
        assert!(mean.abs() < 0.5);
        assert!((0.5..=2.0).contains(&std));
    }

    #[test]
    fn aux_channels_shape_and_mask() {
        let aux = aux_tensor(2, 8, 2, 3);
        assert_eq!(aux.dims, vec![3, 2, 3]);
        let plane = 6;
        let phase = 2.0 * std::f64::consts::PI * 2.0 / 8.0;
        assert!((aux.data[0] - phase.sin()).abs() < 1e-15);
        assert!((aux.data[plane] - phase.cos()).abs() < 1e-15);
        assert!(aux.data[2 * plane..].iter().all(|v| *v == 1.0));
    }
}
