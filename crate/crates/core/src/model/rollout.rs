//! Reparameterized sampling and autoregressive ensemble rollout.
//!
//! Each member draws from its own counter-based RNG stream derived from
//! (seed, member index), so member outputs are independent of how many
//! members run and permuting member indices permutes outputs exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::losses::GaussianLatent;
use crate::metrics::EnsembleForecast;
use crate::model::net::{forecast_step_std, perturb_p, ModelParams};
use crate::model::state::StateCube;
use crate::model::tape::Tensor;

/// Where a perturbation was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbSource {
    P,
    Q,
}

/// A sampled perturbation over the cube shape.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub z: Vec<f64>,
    pub source: PerturbSource,
    pub rng_stream: u64,
}

/// How rollout perturbs the cube before each forecast step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    /// z = μ + σ·ε from P (inference default).
    Sample,
    /// z = μ exactly (the σ→0 limit; no noise).
    MeanOnly,
    /// z = 0: the deterministic forecaster trajectory.
    Disabled,
}

/// RNG for one member's perturbation stream.
pub fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64 + 1);
    rng
}

/// Draw z = μ + exp(log_var/2)·ε with ε i.i.d. standard normal.
pub fn sample(latent: &GaussianLatent, rng: &mut ChaCha8Rng, source: PerturbSource) -> Perturbation {
    let z = latent
        .mu
        .iter()
        .zip(&latent.log_var)
        .map(|(mu, lv)| mu + (lv / 2.0).exp() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Perturbation {
        z,
        source,
        rng_stream: rng.get_stream(),
    }
}

/// Autoregressive ensemble rollout from one initial cube.
///
/// Per member and step: draw z from P at the current cube, add it, run the
/// forecaster once, then shift the two-slice window with the forecast.
/// Output is de-standardized.
pub fn rollout(
    params: &ModelParams,
    init: &StateCube,
    members: usize,
    steps: usize,
    seed: u64,
    mode: PerturbMode,
) -> Result<EnsembleForecast> {
    rollout_from(params, init, members, steps, seed, mode, 0)
}

/// [`rollout`] with an explicit initialization frame index recorded in the
/// output (used when the cube came from a frame sequence).
pub fn rollout_from(
    params: &ModelParams,
    init: &StateCube,
    members: usize,
    steps: usize,
    seed: u64,
    mode: PerturbMode,
    init_index: usize,
) -> Result<EnsembleForecast> {
    if members == 0 || steps == 0 {
        return Err(crate::error::Error::invalid(
            "rollout needs members >= 1 and steps >= 1",
        ));
    }
    params.validate()?;
    let c = params.arch.state_channels;
    let (nlat, nlon) = (init.grid.nlat, init.grid.nlon);
    let plane = init.grid.len();

    let mut out = EnsembleForecast::zeroed(
        members,
        steps,
        init.channels.clone(),
        init.grid,
        6,
        init_index,
    );

    for member in 0..members {
        let mut rng = member_rng(seed, member);
        let mut cube = init.standardized_tensor();
        for step in 1..=steps {
            let perturbed = match mode {
                PerturbMode::Disabled => cube.clone(),
                PerturbMode::Sample | PerturbMode::MeanOnly => {
                    let working = StateCube {
                        grid: init.grid,
                        channels: init.channels.clone(),
                        prev: cube.data[..c * plane].to_vec(),
                        curr: cube.data[c * plane..].to_vec(),
                        // cube is already standardized; identity stats keep it so
                        stats: crate::model::state::ChannelStats::identity(c),
                    };
                    let latent = perturb_p(params, &working, step)?;
                    let z = match mode {
                        PerturbMode::Sample => sample(&latent, &mut rng, PerturbSource::P).z,
                        _ => latent.mu.clone(),
                    };
                    let mut data = cube.data.clone();
                    for (d, zv) in data.iter_mut().zip(&z) {
                        *d += zv;
                    }
                    Tensor {
                        dims: cube.dims.clone(),
                        data,
                    }
                }
            };
            let next =
                forecast_step_std(params, &perturbed, step).map_err(|e| match e {
                    crate::error::Error::NumericFault { context } => {
                        crate::error::Error::NumericFault {
                            context: format!("member {member} step {step}: {context}"),
                        }
                    }
                    other => other,
                })?;

            // de-standardize per channel into the output
            for ch in 0..c {
                let slice = out.slice_mut(member, step - 1, ch);
                let mean = init.stats.mean[ch];
                let std = init.stats.std[ch];
                for (o, v) in slice.iter_mut().zip(&next[ch * plane..(ch + 1) * plane]) {
                    *o = v * std + mean;
                }
            }

            // shift the two-slice window: (prev, curr) <- (curr, forecast)
            let curr = cube.data[c * plane..].to_vec();
            cube.data[..c * plane].copy_from_slice(&curr);
            cube.data[c * plane..].copy_from_slice(&next);
        }
        let _ = nlat;
        let _ = nlon;
    }
    Ok(out)
}
