//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! Output dimensions are independent GPs that share one kernel. The
//! hyperparameters are chosen per context set by maximizing the log marginal
//! likelihood over a fixed logarithmic grid.

use super::types::{ContextSet, GaussianPrediction, TargetBatch};
use crate::error::{Error, Result};
use crate::numeric::matrix::{backward_substitute, forward_substitute};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpConfig {
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.signal_var > 0.0 && self.noise_var >= 0.0)
            || !(self.length_scale.is_finite() && self.signal_var.is_finite() && self.noise_var.is_finite())
        {
            return Err(Error::contract(format!("invalid GP hyperparameters {self:?}")));
        }
        Ok(())
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_var * (-0.5 * d2 / (self.length_scale * self.length_scale)).exp()
    }
}

/// Jitter multipliers of the signal variance tried in turn.
const JITTERS: [f64; 6] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4];

/// Cholesky factor of `K + (noise + jitter)·I`, escalating jitter on failure.
fn factor(cfg: &GpConfig, xs: &Matrix) -> Result<Matrix> {
    let n = xs.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = cfg.kernel(xs.row(i), xs.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let mut last = None;
    for jitter in JITTERS {
        let mut kk = k.clone();
        for i in 0..n {
            kk[(i, i)] += cfg.noise_var + jitter * cfg.signal_var;
        }
        match kk.cholesky() {
            Ok(l) => return Ok(l),
            Err(e) => last = Some(e),
        }
    }
    let min_diag = (0..n).map(|i| k[(i, i)]).fold(f64::INFINITY, f64::min);
    Err(Error::numerical(format!(
        "GP kernel matrix ({n}x{n}, min diagonal {min_diag:e}, noise {:e}) is not positive definite \
         even with jitter {:e}: {}",
        cfg.noise_var,
        JITTERS[JITTERS.len() - 1] * cfg.signal_var,
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn check(ctx: &ContextSet, targets: &TargetBatch) -> Result<()> {
    if targets.inputs().cols() != ctx.x_dim() {
        return Err(Error::contract(format!(
            "target dimension {} does not match context dimension {}",
            targets.inputs().cols(),
            ctx.x_dim()
        )));
    }
    Ok(())
}

/// Posterior predictive of `y` at the targets: mean and `k** − k*ᵀK⁻¹k* + noise`.
pub fn gp_predict(cfg: &GpConfig, ctx: &ContextSet, targets: &TargetBatch) -> Result<GaussianPrediction> {
    cfg.validate()?;
    check(ctx, targets)?;
    let xs = ctx.inputs();
    let ys = ctx.outputs();
    let (n, d_y) = (ctx.len(), ctx.y_dim());
    let l = factor(cfg, xs)?;

    // alpha = K⁻¹ y per output column
    let mut alpha = Matrix::zeros(n, d_y);
    let mut col = vec![0.0; n];
    for c in 0..d_y {
        for i in 0..n {
            col[i] = ys[(i, c)];
        }
        forward_substitute(&l, &mut col);
        backward_substitute(&l, &mut col);
        for i in 0..n {
            alpha[(i, c)] = col[i];
        }
    }

    let n_t = targets.len();
    let mut mean = Matrix::zeros(n_t, d_y);
    let mut var = Matrix::zeros(n_t, d_y);
    let mut kstar = vec![0.0; n];
    for t in 0..n_t {
        let xt = targets.inputs().row(t);
        for i in 0..n {
            kstar[i] = cfg.kernel(xs.row(i), xt);
        }
        for c in 0..d_y {
            mean[(t, c)] = (0..n).map(|i| kstar[i] * alpha[(i, c)]).sum();
        }
        let mut v = kstar.clone();
        forward_substitute(&l, &mut v);
        let explained: f64 = v.iter().map(|a| a * a).sum();
        let latent = (cfg.kernel(xt, xt) - explained).max(0.0);
        for c in 0..d_y {
            var[(t, c)] = latent + cfg.noise_var;
        }
    }
    GaussianPrediction::new(mean, var)
}

/// Log marginal likelihood of the context outputs, summed over output columns.
pub fn log_marginal_likelihood(cfg: &GpConfig, ctx: &ContextSet) -> Result<f64> {
    cfg.validate()?;
    let l = factor(cfg, ctx.inputs())?;
    let n = ctx.len();
    let log_det_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let mut total = 0.0;
    let mut col = vec![0.0; n];
    for c in 0..ctx.y_dim() {
        for i in 0..n {
            col[i] = ctx.outputs()[(i, c)];
        }
        forward_substitute(&l, &mut col);
        let quad: f64 = col.iter().map(|v| v * v).sum();
        total += -0.5 * quad - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    }
    Ok(total)
}

/// Logarithmic hyperparameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GpGrid {
    /// Length scales as multiples of `√d_x`.
    pub length_scale_factors: Vec<f64>,
    pub signal_vars: Vec<f64>,
    pub noise_vars: Vec<f64>,
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (n - 1) as f64))
        .collect()
}

impl Default for GpGrid {
    fn default() -> Self {
        Self {
            length_scale_factors: logspace(-1.5, 1.0, 11),
            signal_vars: logspace(-1.0, 1.0, 5),
            noise_vars: logspace(-4.0, 0.0, 5),
        }
    }
}

/// Grid point with the highest marginal likelihood on `ctx`.
pub fn fit_gp(ctx: &ContextSet, grid: &GpGrid) -> Result<GpConfig> {
    let root_d = (ctx.x_dim() as f64).sqrt();
    let mut best: Option<(f64, GpConfig)> = None;
    for &lf in &grid.length_scale_factors {
        for &s in &grid.signal_vars {
            for &noise in &grid.noise_vars {
                let cfg = GpConfig {
                    length_scale: lf * root_d,
                    signal_var: s,
                    noise_var: noise,
                };
                let Ok(ll) = log_marginal_likelihood(&cfg, ctx) else {
                    continue;
                };
                if ll.is_finite() && best.is_none_or(|(b, _)| ll > b) {
                    best = Some((ll, cfg));
                }
            }
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::numerical("no GP grid point gave a finite marginal likelihood"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_1d(xs: &[f64], ys: &[f64]) -> ContextSet {
        ContextSet::new(
            Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap(),
            Matrix::from_vec(ys.len(), 1, ys.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn targets(xs: &[f64]) -> TargetBatch {
        TargetBatch::inputs_only(Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn interpolates_without_noise() {
        let cfg = GpConfig { length_scale: 0.7, signal_var: 1.3, noise_var: 0.0 };
        let xs = [-1.0, 0.2, 0.9, 2.0];
        let ys = [0.5, -0.3, 1.2, 0.1];
        let p = gp_predict(&cfg, &ctx_1d(&xs, &ys), &targets(&xs)).unwrap();
        for i in 0..4 {
            assert!((p.mean()[(i, 0)] - ys[i]).abs() < 1e-8);
            assert!(p.var()[(i, 0)].abs() < 1e-8);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let cfg = GpConfig { length_scale: 0.5, signal_var: 2.0, noise_var: 0.0 };
        let p = gp_predict(&cfg, &ctx_1d(&[0.0, 1.0], &[1.0, 2.0]), &targets(&[100.0])).unwrap();
        assert!((p.var()[(0, 0)] - 2.0).abs() < 1e-6);
        assert!(p.mean()[(0, 0)].abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_hyperparameters_and_dimensions() {
        let bad = GpConfig { length_scale: 0.0, signal_var: 1.0, noise_var: 0.0 };
        assert!(gp_predict(&bad, &ctx_1d(&[0.0], &[0.0]), &targets(&[0.0])).is_err());
        let ok = GpConfig { length_scale: 1.0, signal_var: 1.0, noise_var: 0.1 };
        let t2 = TargetBatch::inputs_only(Matrix::zeros(1, 2)).unwrap();
        assert!(gp_predict(&ok, &ctx_1d(&[0.0], &[0.0]), &t2).is_err());
    }

    #[test]
    fn duplicate_inputs_need_jitter_but_succeed() {
        let cfg = GpConfig { length_scale: 1.0, signal_var: 1.0, noise_var: 0.0 };
        let p = gp_predict(&cfg, &ctx_1d(&[0.5, 0.5], &[1.0, 1.0]), &targets(&[0.5])).unwrap();
        assert!((p.mean()[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn grid_fit_prefers_a_sensible_noise_level() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let cfg = fit_gp(&ctx_1d(&xs, &ys), &GpGrid::default()).unwrap();
        assert!(cfg.noise_var <= 1e-2, "{cfg:?}");
    }
}
