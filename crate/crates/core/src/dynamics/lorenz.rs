//! Lorenz-96: dX_i/dt = (X_{i+1} − X_{i−2})·X_{i−1} − X_i + F on a
//! periodic ring, integrated with fixed-step RK4.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L96Config {
    /// Ring size K.
    pub k: usize,
    /// Forcing F (8.0 is the standard chaotic regime).
    pub forcing: f64,
    /// RK4 step.
    pub dt: f64,
    /// Steps discarded before recording.
    pub spinup: usize,
}

impl Default for L96Config {
    fn default() -> Self {
        L96Config {
            k: 40,
            forcing: 8.0,
            dt: 0.05,
            spinup: 500,
        }
    }
}

impl L96Config {
    pub fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::invalid("Lorenz-96 needs k >= 4"));
        }
        if self.dt <= 0.0 {
            return Err(Error::invalid("dt must be positive"));
        }
        Ok(())
    }
}

fn tendency(state: &[f64], forcing: f64, out: &mut [f64]) {
    let k = state.len();
    for i in 0..k {
        let im2 = (i + k - 2) % k;
        let im1 = (i + k - 1) % k;
        let ip1 = (i + 1) % k;
        out[i] = (state[ip1] - state[im2]) * state[im1] - state[i] + forcing;
    }
}

/// One classic RK4 step.
pub fn l96_step_rk4(state: &[f64], dt: f64, forcing: f64) -> Vec<f64> {
    let k = state.len();
    let mut k1 = vec![0.0; k];
    let mut k2 = vec![0.0; k];
    let mut k3 = vec![0.0; k];
    let mut k4 = vec![0.0; k];
    let mut tmp = vec![0.0; k];

    tendency(state, forcing, &mut k1);
    for i in 0..k {
        tmp[i] = state[i] + 0.5 * dt * k1[i];
    }
    tendency(&tmp, forcing, &mut k2);
    for i in 0..k {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    tendency(&tmp, forcing, &mut k3);
    for i in 0..k {
        tmp[i] = state[i] + dt * k3[i];
    }
    tendency(&tmp, forcing, &mut k4);

    (0..k)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrate for `steps` recorded states (after discarding spinup).
/// Returns the trajectory of `steps` states; blow-up aborts.
pub fn l96_integrate(state: &[f64], cfg: &L96Config, steps: usize) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if state.len() != cfg.k {
        return Err(Error::shape(
            format!("state of {} entries", cfg.k),
            format!("{}", state.len()),
        ));
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite initial state"));
    }
    let mut x = state.to_vec();
    for step in 0..cfg.spinup {
        x = l96_step_rk4(&x, cfg.dt, cfg.forcing);
        check_bounds(&x, step, "spinup")?;
    }
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        x = l96_step_rk4(&x, cfg.dt, cfg.forcing);
        check_bounds(&x, step, "record")?;
        out.push(x.clone());
    }
    Ok(out)
}

fn check_bounds(x: &[f64], step: usize, phase: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
        return Err(Error::IntegrationFault(format!(
            "state exceeded 1e6 at {phase} step {step}"
        )));
    }
    Ok(())
}

/// Standard perturbed start: X = F everywhere plus small seeded noise.
pub fn l96_perturbed_init(cfg: &L96Config, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x196);
    (0..cfg.k)
        .map(|_| cfg.forcing + rng.gen_range(-0.01..0.01))
        .collect()
}
