//! Differentiable training objectives: ensemble CRPS, diagonal-Gaussian KL
//! divergence, mean absolute error, and their analytic gradients.
//!
//! Gradients use the subgradient convention sign(0) = 0 at the kinks of
//! |·| terms. Losses are means over all state entries (and members where
//! applicable) so the KL coefficient is resolution-independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which finite-ensemble CRPS estimator to use.
///
/// `Empirical` scores the realized ensemble (member-pair term divided by
/// 2N²); `Fair` is unbiased for the underlying distribution (divided by
/// 2N(N−1)) and is the training default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrpsEstimator {
    Empirical,
    Fair,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pointwise CRPS of an N-member sample against a scalar observation.
///
/// Empirical: (1/N)Σ|x_i−y| − (1/(2N²))ΣΣ|x_i−x_j|; fair divides the pair
/// term by 2N(N−1) instead. For N = 1 the empirical estimator reduces to
/// the absolute error.
pub fn crps_pointwise(members: &[f64], truth: f64, estimator: CrpsEstimator) -> Result<f64> {
    let n = members.len();
    if n == 0 {
        return Err(Error::invalid("CRPS needs at least one member"));
    }
    if estimator == CrpsEstimator::Fair && n < 2 {
        return Err(Error::invalid("fair CRPS needs at least two members"));
    }
    let nf = n as f64;
    let mae: f64 = members.iter().map(|x| (x - truth).abs()).sum::<f64>() / nf;
    if n == 1 {
        return Ok(mae);
    }
    let mut pair = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            pair += (members[i] - members[j]).abs();
        }
    }
    pair *= 2.0; // full double sum over ordered pairs
    let denom = match estimator {
        CrpsEstimator::Empirical => 2.0 * nf * nf,
        CrpsEstimator::Fair => 2.0 * nf * (nf - 1.0),
    };
    Ok(mae - pair / denom)
}

/// CRPS loss over a member matrix plus its gradient.
///
/// `members` holds N rows of M flattened state entries; the loss is the
/// mean over entries of the pointwise estimator, and the gradient has one
/// row per member.
pub fn crps_loss_grad(
    members: &[&[f64]],
    target: &[f64],
    estimator: CrpsEstimator,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = members.len();
    if n == 0 {
        return Err(Error::invalid("CRPS needs at least one member"));
    }
    if estimator == CrpsEstimator::Fair && n < 2 {
        return Err(Error::invalid("fair CRPS needs at least two members"));
    }
    let m = target.len();
    for (i, row) in members.iter().enumerate() {
        if row.len() != m {
            return Err(Error::shape(
                format!("member rows of {m} entries"),
                format!("member {i} has {}", row.len()),
            ));
        }
    }

    let nf = n as f64;
    let kappa = match estimator {
        CrpsEstimator::Empirical => 1.0 / (nf * nf),
        CrpsEstimator::Fair => {
            if n >= 2 {
                1.0 / (nf * (nf - 1.0))
            } else {
                0.0
            }
        }
    };
    let pair_denom = match estimator {
        CrpsEstimator::Empirical => 2.0 * nf * nf,
        CrpsEstimator::Fair => 2.0 * nf * (nf - 1.0).max(1.0),
    };

    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; m]; n];
    let inv_m = 1.0 / m as f64;

    for e in 0..m {
        let y = target[e];
        let mut mae = 0.0;
        let mut pair = 0.0;
        for i in 0..n {
            let xi = members[i][e];
            mae += (xi - y).abs();
            let mut sgn_sum = 0.0;
            for row in members.iter().take(n) {
                sgn_sum += sign(xi - row[e]);
            }
            grads[i][e] = (sign(xi - y) / nf - kappa * sgn_sum) * inv_m;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                pair += (members[i][e] - members[j][e]).abs();
            }
        }
        loss += mae / nf - if n > 1 { 2.0 * pair / pair_denom } else { 0.0 };
    }
    Ok((loss * inv_m, grads))
}

/// A diagonal Gaussian over some state shape, parameterized by mean and
/// log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// Log-variance clamp bound; exp(±12) covers σ² from 6e-6 to 1.6e5.
pub const LOG_VAR_CLAMP: f64 = 12.0;

impl GaussianLatent {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() {
            return Err(Error::shape(
                format!("log_var of {} entries", mu.len()),
                format!("{}", log_var.len()),
            ));
        }
        if mu.iter().chain(log_var.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite latent parameters"));
        }
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP))
            .collect();
        Ok(GaussianLatent { mu, log_var })
    }

    pub fn standard(len: usize) -> Self {
        GaussianLatent {
            mu: vec![0.0; len],
            log_var: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Gradients of the KL term with respect to both distributions' parameters.
#[derive(Debug, Clone)]
pub struct KlGrads {
    pub d_mu_q: Vec<f64>,
    pub d_log_var_q: Vec<f64>,
    pub d_mu_p: Vec<f64>,
    pub d_log_var_p: Vec<f64>,
}

/// Elementwise KL(q‖p) for diagonal Gaussians, averaged over entries, with
/// analytic gradients.
///
/// Per entry: KL = (lp − lq)/2 + (e^{lq} + (μq−μp)²)·e^{−lp}/2 − 1/2 where
/// l = log σ².
pub fn gaussian_kl_grad(q: &GaussianLatent, p: &GaussianLatent) -> Result<(f64, KlGrads)> {
    let m = q.len();
    if p.len() != m {
        return Err(Error::shape(
            format!("latent of {m} entries"),
            format!("{}", p.len()),
        ));
    }
    let inv_m = 1.0 / m as f64;
    let mut kl = 0.0;
    let mut g = KlGrads {
        d_mu_q: vec![0.0; m],
        d_log_var_q: vec![0.0; m],
        d_mu_p: vec![0.0; m],
        d_log_var_p: vec![0.0; m],
    };
    for e in 0..m {
        let (mq, lq) = (q.mu[e], q.log_var[e]);
        let (mp, lp) = (p.mu[e], p.log_var[e]);
        let var_q = lq.exp();
        let inv_var_p = (-lp).exp();
        let dmu = mq - mp;

        kl += 0.5 * (lp - lq) + 0.5 * (var_q + dmu * dmu) * inv_var_p - 0.5;

        g.d_mu_q[e] = dmu * inv_var_p * inv_m;
        g.d_mu_p[e] = -dmu * inv_var_p * inv_m;
        g.d_log_var_q[e] = 0.5 * (var_q * inv_var_p - 1.0) * inv_m;
        g.d_log_var_p[e] = (0.5 - 0.5 * (var_q + dmu * dmu) * inv_var_p) * inv_m;
    }
    Ok((kl * inv_m, g))
}

/// Mean absolute error and its gradient with respect to the forecast.
pub fn l1_loss_grad(forecast: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if forecast.len() != target.len() {
        return Err(Error::shape(
            format!("{} entries", target.len()),
            format!("{}", forecast.len()),
        ));
    }
    let inv_m = 1.0 / forecast.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; forecast.len()];
    for (e, g) in grad.iter_mut().enumerate() {
        let d = forecast[e] - target[e];
        loss += d.abs();
        *g = sign(d) * inv_m;
    }
    Ok((loss * inv_m, grad))
}

/// A composed loss value: total = crps_term + lambda·kl_term.
///
/// For the L1 variant the reconstruction term occupies `crps_term`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub crps_term: f64,
    pub kl_term: f64,
    pub lambda: f64,
}

impl LossValue {
    pub fn compose(crps_term: f64, kl_term: f64, lambda: f64) -> Self {
        LossValue {
            total: crps_term + lambda * kl_term,
            crps_term,
            kl_term,
            lambda,
        }
    }
}

/// Gradients of the combined objective.
#[derive(Debug, Clone)]
pub struct CombinedGrads {
    /// One row per ensemble member (d total / d member entries).
    pub d_members: Vec<Vec<f64>>,
    pub kl: KlGrads,
}

/// CRPS + λ·KL objective with gradients for members and both latents.
pub fn combined_loss(
    members: &[&[f64]],
    target: &[f64],
    q: &GaussianLatent,
    p: &GaussianLatent,
    lambda: f64,
    estimator: CrpsEstimator,
) -> Result<(LossValue, CombinedGrads)> {
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    let (crps, d_members) = crps_loss_grad(members, target, estimator)?;
    let (kl, mut klg) = gaussian_kl_grad(q, p)?;
    for v in klg
        .d_mu_q
        .iter_mut()
        .chain(klg.d_log_var_q.iter_mut())
        .chain(klg.d_mu_p.iter_mut())
        .chain(klg.d_log_var_p.iter_mut())
    {
        *v *= lambda;
    }
    Ok((
        LossValue::compose(crps, kl, lambda),
        CombinedGrads {
            d_members,
            kl: klg,
        },
    ))
}

/// L1 + λ·KL objective (single forecast member) with gradients.
pub fn l1_kl_loss(
    forecast: &[f64],
    target: &[f64],
    q: &GaussianLatent,
    p: &GaussianLatent,
    lambda: f64,
) -> Result<(LossValue, CombinedGrads)> {
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    let (l1, d_forecast) = l1_loss_grad(forecast, target)?;
    let (kl, mut klg) = gaussian_kl_grad(q, p)?;
    for v in klg
        .d_mu_q
        .iter_mut()
        .chain(klg.d_log_var_q.iter_mut())
        .chain(klg.d_mu_p.iter_mut())
        .chain(klg.d_log_var_p.iter_mut())
    {
        *v *= lambda;
    }
    Ok((
        LossValue::compose(l1, kl, lambda),
        CombinedGrads {
            d_members: vec![d_forecast],
            kl: klg,
        },
    ))
}
