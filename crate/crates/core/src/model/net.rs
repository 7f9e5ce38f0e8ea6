//! The three networks and their parameters: perturbation models P and Q
//! (state → Gaussian latent over the cube shape) and the forecaster F
//! (perturbed cube → next state slice).
//!
//! All three share one topology: a patchify convolution encoder (kernel =
//! stride), a few grid-preserving convolutional blocks with a pointwise
//! nonlinearity and residual add, and a transposed-convolution decoder.
//! Final decoders are zero-initialized, so an untrained P/Q emits N(0, I)
//! and an untrained F is the identity on the cube's latest slice (the
//! forecaster predicts increments via a residual connection).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{GaussianLatent, LOG_VAR_CLAMP};
use crate::model::state::{aux_tensor, StateCube, AUX_CHANNELS};
use crate::model::tape::{NodeId, Padding, Tape, Tensor};

/// Toy architecture descriptor shared by P, Q, and F.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    /// Forecast channels C; the input cube carries 2C.
    pub state_channels: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Grid-preserving block kernel, odd dims (e.g. [3, 3], or [1, 5] for
    /// ring domains).
    pub block_kernel: (usize, usize),
    /// Patchify stride of the encoder/decoder (e.g. [2, 2], or [1, 2] for
    /// single-row grids).
    pub encoder_stride: (usize, usize),
    /// Period of the sin/cos time-of-step encodings, in steps.
    pub aux_period: u32,
}

impl ArchDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.state_channels == 0 || self.hidden == 0 {
            return Err(Error::invalid("architecture needs channels and hidden > 0"));
        }
        if self.block_kernel.0 % 2 == 0 || self.block_kernel.1 % 2 == 0 {
            return Err(Error::invalid("block kernel dims must be odd"));
        }
        if self.encoder_stride.0 == 0 || self.encoder_stride.1 == 0 {
            return Err(Error::invalid("encoder stride dims must be >= 1"));
        }
        Ok(())
    }

    pub fn cube_channels(&self) -> usize {
        2 * self.state_channels
    }

    fn in_channels(&self, net: NetRole) -> usize {
        match net {
            NetRole::P => self.cube_channels() + AUX_CHANNELS,
            NetRole::Q => self.cube_channels() + self.state_channels + AUX_CHANNELS,
            NetRole::F => self.cube_channels() + AUX_CHANNELS,
        }
    }

    fn out_channels(&self, net: NetRole) -> usize {
        match net {
            NetRole::P | NetRole::Q => 2 * self.cube_channels(),
            NetRole::F => self.state_channels,
        }
    }
}

/// Which network a parameter set or forward pass belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetRole {
    P,
    Q,
    F,
}

impl NetRole {
    pub fn prefix(self) -> &'static str {
        match self {
            NetRole::P => "p",
            NetRole::Q => "q",
            NetRole::F => "f",
        }
    }

    fn all() -> [NetRole; 3] {
        [NetRole::P, NetRole::Q, NetRole::F]
    }
}

/// Named parameter tensors for P, Q, and F plus the architecture they
/// realize. Iteration order is the deterministic name order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub arch: ArchDescriptor,
    pub tensors: BTreeMap<String, Tensor>,
}

fn layer_names(arch: &ArchDescriptor, net: NetRole) -> Vec<(String, Vec<usize>)> {
    let p = net.prefix();
    let (sh, sw) = arch.encoder_stride;
    let (kh, kw) = arch.block_kernel;
    let cin = arch.in_channels(net);
    let cout = arch.out_channels(net);
    let h = arch.hidden;
    let mut names = vec![
        (format!("{p}.enc.w"), vec![h, cin, sh, sw]),
        (format!("{p}.enc.b"), vec![h]),
    ];
    for i in 0..arch.blocks {
        names.push((format!("{p}.blk{i}.w"), vec![h, h, kh, kw]));
        names.push((format!("{p}.blk{i}.b"), vec![h]));
    }
    names.push((format!("{p}.dec.w"), vec![h, cout, sh, sw]));
    names.push((format!("{p}.dec.b"), vec![cout]));
    names
}

impl ModelParams {
    /// Seeded initialization: Xavier-uniform encoder/blocks, zero-filled
    /// decoders and biases.
    pub fn init(arch: &ArchDescriptor, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0xA11C);
        let mut tensors = BTreeMap::new();
        for net in NetRole::all() {
            for (name, dims) in layer_names(arch, net) {
                let is_weight = name.ends_with(".w");
                let is_dec = name.contains(".dec.");
                let tensor = if is_weight && !is_dec {
                    let fan_in: usize = dims[1..].iter().product();
                    let fan_out = dims[0] * dims[2] * dims[3];
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let len: usize = dims.iter().product();
                    Tensor {
                        dims,
                        data: (0..len).map(|_| rng.gen_range(-limit..limit)).collect(),
                    }
                } else {
                    Tensor::zeros(dims)
                };
                tensors.insert(name, tensor);
            }
        }
        Ok(ModelParams {
            arch: arch.clone(),
            tensors,
        })
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Check that the stored tensors exactly match the descriptor's layout.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let mut expected = BTreeMap::new();
        for net in NetRole::all() {
            for (name, dims) in layer_names(&self.arch, net) {
                expected.insert(name, dims);
            }
        }
        if expected.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "parameter set has {} tensors, descriptor expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for (name, dims) in expected {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            if t.dims != dims {
                return Err(Error::shape(format!("{name} {dims:?}"), format!("{:?}", t.dims)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFault {
                    context: format!("parameter {name}"),
                });
            }
        }
        Ok(())
    }
}

/// Node ids of one network's parameters mounted on a tape.
pub struct NetNodes {
    pub role: NetRole,
    enc: (NodeId, NodeId),
    blocks: Vec<(NodeId, NodeId)>,
    dec: (NodeId, NodeId),
}

/// Put a network's parameter tensors on the tape as leaves.
pub fn mount_net(
    tape: &mut Tape,
    params: &ModelParams,
    role: NetRole,
    trainable: bool,
) -> Result<NetNodes> {
    let get = |tape: &mut Tape, name: String| -> Result<NodeId> {
        let t = params
            .tensors
            .get(&name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        Ok(tape.leaf(t.clone(), trainable))
    };
    let p = role.prefix();
    let enc = (
        get(tape, format!("{p}.enc.w"))?,
        get(tape, format!("{p}.enc.b"))?,
    );
    let mut blocks = Vec::with_capacity(params.arch.blocks);
    for i in 0..params.arch.blocks {
        blocks.push((
            get(tape, format!("{p}.blk{i}.w"))?,
            get(tape, format!("{p}.blk{i}.b"))?,
        ));
    }
    let dec = (
        get(tape, format!("{p}.dec.w"))?,
        get(tape, format!("{p}.dec.b"))?,
    );
    Ok(NetNodes {
        role,
        enc,
        blocks,
        dec,
    })
}

/// Names of one network's parameters in mount order (pairs with the node
/// ids produced by [`mount_net`]).
pub fn mounted_names(arch: &ArchDescriptor, role: NetRole) -> Vec<String> {
    layer_names(arch, role).into_iter().map(|(n, _)| n).collect()
}

/// Parameter node ids of a mounted net in mount order.
pub fn mounted_ids(net: &NetNodes) -> Vec<NodeId> {
    let mut ids = vec![net.enc.0, net.enc.1];
    for (w, b) in &net.blocks {
        ids.push(*w);
        ids.push(*b);
    }
    ids.push(net.dec.0);
    ids.push(net.dec.1);
    ids
}

fn ensure_finite(tape: &Tape, id: NodeId, role: NetRole, layer: &str) -> Result<()> {
    if tape.is_finite(id) {
        Ok(())
    } else {
        Err(Error::NumericFault {
            context: format!("net {} layer {layer}", role.prefix()),
        })
    }
}

/// Encode → blocks → decode. Input must include the aux channels.
pub fn forward_net(
    tape: &mut Tape,
    arch: &ArchDescriptor,
    net: &NetNodes,
    input: NodeId,
) -> Result<NodeId> {
    let stride = arch.encoder_stride;
    let mut x = tape.conv(input, net.enc.0, net.enc.1, stride, Padding::Valid)?;
    ensure_finite(tape, x, net.role, "enc")?;
    for (i, (w, b)) in net.blocks.iter().enumerate() {
        let y = tape.conv(x, *w, *b, (1, 1), Padding::SameWrapLon)?;
        let a = tape.silu(y);
        x = tape.add(x, a)?;
        ensure_finite(tape, x, net.role, &format!("blk{i}"))?;
    }
    let out = tape.conv_transpose(x, net.dec.0, net.dec.1, stride)?;
    ensure_finite(tape, out, net.role, "dec")?;
    Ok(out)
}

/// Split a perturbation-net output into (μ, clamped log-variance) nodes.
pub fn latent_head(tape: &mut Tape, out: NodeId, cube_channels: usize) -> Result<(NodeId, NodeId)> {
    let mu = tape.slice_c(out, 0, cube_channels)?;
    let raw = tape.slice_c(out, cube_channels, 2 * cube_channels)?;
    let lv = tape.clamp(raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP);
    Ok((mu, lv))
}

/// Forecast head: decoded increment plus the cube's latest slice.
pub fn forecast_head(
    tape: &mut Tape,
    increment: NodeId,
    cube: NodeId,
    state_channels: usize,
) -> Result<NodeId> {
    let latest = tape.slice_c(cube, state_channels, 2 * state_channels)?;
    tape.add(latest, increment)
}

/// Reparameterized draw z = μ + exp(log_var / 2) · ε as tape nodes.
pub fn reparam(tape: &mut Tape, mu: NodeId, lv: NodeId, eps: Vec<f64>) -> Result<NodeId> {
    let half = tape.scale(lv, 0.5);
    let sigma = tape.exp(half);
    let noise = tape.mul_const(sigma, eps)?;
    tape.add(mu, noise)
}

fn check_grid(arch: &ArchDescriptor, nlat: usize, nlon: usize) -> Result<()> {
    let (sh, sw) = arch.encoder_stride;
    if nlat % sh != 0 || nlon % sw != 0 {
        return Err(Error::invalid(format!(
            "encoder stride {sh}x{sw} does not divide grid {nlat}x{nlon}"
        )));
    }
    Ok(())
}

/// P's flow-dependent Gaussian over the cube shape for the step about to
/// be forecast. Deterministic in (params, cube, step).
pub fn perturb_p(params: &ModelParams, cube: &StateCube, step: usize) -> Result<GaussianLatent> {
    params.validate()?;
    check_grid(&params.arch, cube.grid.nlat, cube.grid.nlon)?;
    let mut tape = Tape::new();
    let x = tape.constant(cube.standardized_tensor());
    let aux = tape.constant(aux_tensor(
        step,
        params.arch.aux_period,
        cube.grid.nlat,
        cube.grid.nlon,
    ));
    let input = tape.concat_c(&[x, aux])?;
    let net = mount_net(&mut tape, params, NetRole::P, false)?;
    let out = forward_net(&mut tape, &params.arch, &net, input)?;
    let (mu, lv) = latent_head(&mut tape, out, params.arch.cube_channels())?;
    GaussianLatent::new(tape.value(mu).data.clone(), tape.value(lv).data.clone())
}

/// Q's Gaussian, conditioned on the cube and the next-step truth slice
/// (standardized C×H×W).
pub fn perturb_q(
    params: &ModelParams,
    cube: &StateCube,
    next_truth_std: &[f64],
    step: usize,
) -> Result<GaussianLatent> {
    params.validate()?;
    check_grid(&params.arch, cube.grid.nlat, cube.grid.nlon)?;
    let plane = cube.grid.len();
    if next_truth_std.len() != params.arch.state_channels * plane {
        return Err(Error::shape(
            format!("{} values", params.arch.state_channels * plane),
            format!("{}", next_truth_std.len()),
        ));
    }
    let mut tape = Tape::new();
    let x = tape.constant(cube.standardized_tensor());
    let truth = tape.constant(Tensor::chw(
        params.arch.state_channels,
        cube.grid.nlat,
        cube.grid.nlon,
        next_truth_std.to_vec(),
    )?);
    let aux = tape.constant(aux_tensor(
        step,
        params.arch.aux_period,
        cube.grid.nlat,
        cube.grid.nlon,
    ));
    let input = tape.concat_c(&[x, truth, aux])?;
    let net = mount_net(&mut tape, params, NetRole::Q, false)?;
    let out = forward_net(&mut tape, &params.arch, &net, input)?;
    let (mu, lv) = latent_head(&mut tape, out, params.arch.cube_channels())?;
    GaussianLatent::new(tape.value(mu).data.clone(), tape.value(lv).data.clone())
}

/// One deterministic forecast step on a standardized (2C, H, W) cube
/// tensor; returns the standardized next slice (C×H×W).
pub fn forecast_step_std(
    params: &ModelParams,
    cube_std: &Tensor,
    step: usize,
) -> Result<Vec<f64>> {
    params.validate()?;
    let (nlat, nlon) = (cube_std.dims[1], cube_std.dims[2]);
    check_grid(&params.arch, nlat, nlon)?;
    let mut tape = Tape::new();
    let x = tape.constant(cube_std.clone());
    let aux = tape.constant(aux_tensor(step, params.arch.aux_period, nlat, nlon));
    let input = tape.concat_c(&[x, aux])?;
    let net = mount_net(&mut tape, params, NetRole::F, false)?;
    let out = forward_net(&mut tape, &params.arch, &net, input)?;
    let y = forecast_head(&mut tape, out, x, params.arch.state_channels)?;
    Ok(tape.value(y).data.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::state::ChannelStats;

    pub(crate) fn small_arch() -> ArchDescriptor {
        ArchDescriptor {
            state_channels: 2,
            hidden: 6,
            blocks: 2,
            block_kernel: (3, 3),
            encoder_stride: (2, 2),
            aux_period: 8,
        }
    }

    fn cube(grid: GridSpec) -> StateCube {
        let n = 2 * grid.len();
        let prev: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let curr: Vec<f64> = (0..n).map(|i| (i as f64 * 0.53).cos()).collect();
        StateCube::new(
            grid,
            vec!["a".into(), "b".into()],
            prev,
            curr,
            ChannelStats::identity(2),
        )
        .unwrap()
    }

    #[test]
    fn zero_init_perturbation_is_standard_normal() {
        let arch = small_arch();
        let params = ModelParams::init(&arch, 1).unwrap();
        let grid = GridSpec::new(4, 6, -30.0, 20.0, 0.0, 60.0).unwrap();
        let lat = perturb_p(&params, &cube(grid), 1).unwrap();
        assert!(lat.mu.iter().all(|v| *v == 0.0));
        assert!(lat.log_var.iter().all(|v| *v == 0.0));
        assert_eq!(lat.len(), 4 * 4 * 6);
    }

    #[test]
    fn perturbation_shape_and_determinism() {
        let arch = small_arch();
        let mut params = ModelParams::init(&arch, 2).unwrap();
        // make the decoders nonzero so the latents are nontrivial
        for (name, t) in params.tensors.iter_mut() {
            if name.contains(".dec.w") {
                for (i, v) in t.data.iter_mut().enumerate() {
                    *v = ((i as f64) * 0.11).sin() * 0.2;
                }
            }
        }
        let grid = GridSpec::new(4, 6, -30.0, 20.0, 0.0, 60.0).unwrap();
        let c = cube(grid);
        let a = perturb_p(&params, &c, 1).unwrap();
        let b = perturb_p(&params, &c, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4 * 4 * 6);
        assert!(a.mu.iter().any(|v| *v != 0.0));

        let truth = vec![0.1; 2 * 24];
        let q1 = perturb_q(&params, &c, &truth, 1).unwrap();
        let q2 = perturb_q(&params, &c, &truth, 1).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn identity_initialized_forecaster_returns_latest_slice() {
        let arch = small_arch();
        let params = ModelParams::init(&arch, 3).unwrap();
        let grid = GridSpec::new(4, 6, -30.0, 20.0, 0.0, 60.0).unwrap();
        let c = cube(grid);
        let t = c.standardized_tensor();
        let out = forecast_step_std(&params, &t, 1).unwrap();
        let plane = 24;
        assert_eq!(out.len(), 2 * plane);
        // latest slice lives in channels [2C/2, 2C) of the cube tensor
        assert_eq!(out, t.data[2 * plane..4 * plane].to_vec());
    }

    #[test]
    fn param_count_matches_descriptor() {
        let arch = small_arch();
        let params = ModelParams::init(&arch, 4).unwrap();
        params.validate().unwrap();
        let mut expect = 0usize;
        for role in [NetRole::P, NetRole::Q, NetRole::F] {
            for (_, dims) in layer_names(&arch, role) {
                expect += dims.iter().product::<usize>();
            }
        }
        assert_eq!(params.count(), expect);

        let mut broken = params.clone();
        broken.tensors.remove("f.dec.b");
        assert!(broken.validate().is_err());
    }

    #[test]
    fn grid_not_divisible_by_stride_is_rejected() {
        let arch = small_arch();
        let params = ModelParams::init(&arch, 5).unwrap();
        let grid = GridSpec::new(5, 6, -30.0, 10.0, 0.0, 60.0).unwrap();
        assert!(perturb_p(&params, &cube(grid), 1).is_err());
    }
}
