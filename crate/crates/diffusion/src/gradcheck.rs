//! Finite-difference verification of the analytic gradient.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::Feat;
use crate::model::Denoiser;

/// Relative errors below this magnitude of both gradients are not meaningful.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, analytic, numeric)
    pub entries: Vec<(usize, f64, f64)>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

/// Full analytic gradient of the ε-MSE loss.
pub fn analytic_gradient(model: &Denoiser, params: &[f64], input: &Feat<f64>, t: f64, eps: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; params.len()];
    model.loss_and_grad(params, input, t, eps, 1.0, &mut g);
    g
}

pub fn central_difference(
    model: &Denoiser,
    params: &[f64],
    input: &Feat<f64>,
    t: f64,
    eps: &[f64],
    index: usize,
    h: f64,
) -> f64 {
    let mut p = params.to_vec();
    p[index] = params[index] + h;
    let up = model.predict(&p, input, t);
    p[index] = params[index] - h;
    let down = model.predict(&p, input, t);
    // (a - e)^2 - (b - e)^2 = (a - b)(a + b - 2e)
    let diff: f64 = up.iter().zip(&down).zip(eps).map(|((a, b), e)| (a - b) * (a + b - 2.0 * e)).sum();
    diff / up.len() as f64 / (2.0 * h)
}

/// Compares analytic and central-difference gradients on `coords` random parameters.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    model: &Denoiser,
    params: &[f64],
    input: &Feat<f64>,
    t: f64,
    eps: &[f64],
    coords: usize,
    h: f64,
    seed: u64,
) -> GradCheckReport {
    let g = analytic_gradient(model, params, input, t, eps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sample_indices(&mut rng, params.len(), coords.min(params.len()));
    let mut entries = Vec::with_capacity(idx.len());
    let mut max_rel_error: f64 = 0.0;
    for i in idx.iter() {
        let n = central_difference(model, params, input, t, eps, i, h);
        max_rel_error = max_rel_error.max(relative_error(g[i], n));
        entries.push((i, g[i], n));
    }
    GradCheckReport { max_rel_error, entries }
}
