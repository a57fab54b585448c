//! Gaussian denoising diffusion over node coordinates.
//!
//! Forward noising uses the closed-form marginal
//! `X^t = sqrt(abar_t) X^0 + sqrt(1 - abar_t) eps`; the reverse sampler
//! iterates the standard DDPM update from pure noise, with the injected
//! noise suppressed at the final step.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::nn::CoordDenoiser;
use crate::schedule::DiffusionSchedule;

/// `n x 3` node coordinates in normalized model space.
pub type PointCloud = Array2<f64>;

/// Independent standard normal draws with the given shape.
pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Closed-form forward marginal at step `t`; deterministic given `eps`.
pub fn forward_noise_coords(
    x0: &PointCloud,
    t: usize,
    eps: &Array2<f64>,
    sched: &DiffusionSchedule,
) -> Result<PointCloud> {
    if x0.dim() != eps.dim() {
        return Err(Error::ShapeMismatch(format!(
            "x0 is {:?} but eps is {:?}",
            x0.dim(),
            eps.dim()
        )));
    }
    let abar = sched.alpha_bar(t);
    Ok(x0 * abar.sqrt() + eps * (1.0 - abar).sqrt())
}

/// Denoising training objective: mean squared error between the true
/// noise and the model's prediction on the noised input.
pub fn coord_loss(
    model: &CoordDenoiser,
    x0: &PointCloud,
    t: usize,
    eps: &Array2<f64>,
    sched: &DiffusionSchedule,
) -> Result<f64> {
    let xt = forward_noise_coords(x0, t, eps, sched)?;
    let pred = model.forward(&xt, t as f64 / sched.steps() as f64)?;
    Ok((&pred - eps).mapv(|d| d * d).mean().unwrap())
}

/// One reverse step:
/// `X^{t-1} = (X^t - (1 - a_t)/sqrt(1 - abar_t) * eps_hat) / sqrt(a_t)
///  + sqrt(1 - a_t) * noise`,
/// with the noise term zeroed at `t = 1`.
pub fn reverse_step_coords(
    xt: &PointCloud,
    t: usize,
    eps_hat: &Array2<f64>,
    noise: &Array2<f64>,
    sched: &DiffusionSchedule,
) -> Result<PointCloud> {
    if xt.dim() != eps_hat.dim() || xt.dim() != noise.dim() {
        return Err(Error::ShapeMismatch(format!(
            "xt {:?}, eps_hat {:?}, noise {:?}",
            xt.dim(),
            eps_hat.dim(),
            noise.dim()
        )));
    }
    let alpha = sched.alpha(t);
    let abar = sched.alpha_bar(t);
    if abar >= 1.0 {
        return Err(Error::InvalidSchedule(format!(
            "alpha_bar({t}) = {abar} leaves no noise to remove"
        )));
    }
    let noise_scale = if t == 1 { 0.0 } else { (1.0 - alpha).sqrt() };
    let mean = (xt - &(eps_hat * ((1.0 - alpha) / (1.0 - abar).sqrt()))) / alpha.sqrt();
    Ok(mean + noise * noise_scale)
}

/// Runs the full reverse chain from standard normal initialization.
pub fn sample_coords<R: Rng + ?Sized>(
    model: &CoordDenoiser,
    n: usize,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidConfig("cannot sample a graph with zero nodes".into()));
    }
    let steps = sched.steps();
    let mut x = standard_normal(n, 3, rng);
    for t in (1..=steps).rev() {
        let eps_hat = model.forward(&x, t as f64 / steps as f64)?;
        let noise = standard_normal(n, 3, rng);
        x = reverse_step_coords(&x, t, &eps_hat, &noise, sched)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate chain at step {t}")));
        }
    }
    Ok(x)
}

/// Affine normalization fitted on a training corpus: coordinates are
/// centered on the corpus mean and scaled so the 99th-percentile radius
/// is 1. The constants travel with the checkpoint and are inverted on
/// output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization { center: [0.0; 3], scale: 1.0 }
    }

    pub fn fit(corpus: &[SpatialGraph]) -> Result<Self> {
        let mut count = 0usize;
        let mut center = [0.0f64; 3];
        for g in corpus {
            for p in g.coords() {
                for d in 0..3 {
                    center[d] += p[d];
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidConfig("cannot fit normalization on an empty corpus".into()));
        }
        for d in center.iter_mut() {
            *d /= count as f64;
        }
        let mut radii: Vec<f64> = corpus
            .iter()
            .flat_map(|g| g.coords().iter())
            .map(|p| {
                ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)
                    + (p[2] - center[2]).powi(2))
                .sqrt()
            })
            .collect();
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((radii.len() - 1) as f64 * 0.99).round() as usize;
        let scale = if radii[idx] > 0.0 { radii[idx] } else { 1.0 };
        Ok(Normalization { center, scale })
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.center[0]) / self.scale,
            (p[1] - self.center[1]) / self.scale,
            (p[2] - self.center[2]) / self.scale,
        ]
    }

    pub fn invert_point(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] * self.scale + self.center[0],
            p[1] * self.scale + self.center[1],
            p[2] * self.scale + self.center[2],
        ]
    }

    /// Normalized coordinates of a graph as an `n x 3` array.
    pub fn normalize_coords(&self, g: &SpatialGraph) -> PointCloud {
        let n = g.node_count();
        let mut arr = Array2::zeros((n, 3));
        for (r, &p) in g.coords().iter().enumerate() {
            let q = self.apply_point(p);
            for d in 0..3 {
                arr[(r, d)] = q[d];
            }
        }
        arr
    }

    /// Maps sampled model-space coordinates back to data space.
    pub fn denormalize_array(&self, coords: &PointCloud) -> Vec<[f64; 3]> {
        coords
            .rows()
            .into_iter()
            .map(|r| self.invert_point([r[0], r[1], r[2]]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn forward_noise_boundaries() {
        let sched = DiffusionSchedule::linear(10).unwrap();
        let mut rng = substream(0, "fwd", 0);
        let x0 = standard_normal(4, 3, &mut rng);
        let eps = standard_normal(4, 3, &mut rng);

        // t = 0: alpha_bar = 1, no noise
        let same = forward_noise_coords(&x0, 0, &eps, &sched).unwrap();
        assert_eq!(same, x0);

        // terminal step: alpha_bar at the floor, nearly pure noise
        let noisy = forward_noise_coords(&x0, 10, &eps, &sched).unwrap();
        for (a, b) in noisy.iter().zip(eps.iter()) {
            assert!((a - b).abs() < 1e-2);
        }
    }

    #[test]
    fn forward_noise_closed_form_value() {
        // alpha_bar = 0.25 -> sqrt(1 - 0.25) = sqrt(0.75)
        let sched = DiffusionSchedule::linear(4).unwrap();
        assert_abs_diff_eq!(sched.alpha_bar(3), 0.25, epsilon = 1e-12);
        let x0 = Array2::zeros((2, 3));
        let eps = Array2::from_elem((2, 3), 1.0);
        let xt = forward_noise_coords(&x0, 3, &eps, &sched).unwrap();
        for v in xt.iter() {
            assert_abs_diff_eq!(*v, 0.75f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_noise_rejects_shape_mismatch() {
        let sched = DiffusionSchedule::linear(4).unwrap();
        let x0 = Array2::zeros((2, 3));
        let eps = Array2::zeros((3, 3));
        assert!(forward_noise_coords(&x0, 1, &eps, &sched).is_err());
    }

    #[test]
    fn coord_loss_boundary_cases() {
        let sched = DiffusionSchedule::linear(6).unwrap();
        // zero model predicts zero; eps of all ones gives mean square 1
        let model = CoordDenoiser::zeros(8);
        let x0 = Array2::zeros((2, 3));
        let eps = Array2::from_elem((2, 3), 1.0);
        let loss = coord_loss(&model, &x0, 2, &eps, &sched).unwrap();
        assert_abs_diff_eq!(loss, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coord_loss_matches_hand_recomputation() {
        let sched = DiffusionSchedule::linear(6).unwrap();
        let model = CoordDenoiser::init(8, 3);
        let mut rng = substream(1, "loss", 0);
        let x0 = standard_normal(5, 3, &mut rng);
        let eps = standard_normal(5, 3, &mut rng);
        let t = 4;

        let loss = coord_loss(&model, &x0, t, &eps, &sched).unwrap();
        let xt = forward_noise_coords(&x0, t, &eps, &sched).unwrap();
        let pred = model.forward(&xt, t as f64 / 6.0).unwrap();
        let by_hand: f64 =
            pred.iter().zip(eps.iter()).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / 15.0;
        assert_abs_diff_eq!(loss, by_hand, epsilon = 1e-12);
    }

    #[test]
    fn reverse_step_hand_case() {
        // alpha_t = 0.5, alpha_bar_t = 0.5
        let sched = DiffusionSchedule::from_targets(vec![0.5, 1e-5]).unwrap();
        let xt = Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 0.0]).unwrap();
        let eps_hat = xt.clone();
        let noise = Array2::zeros((1, 3));
        // t = 1 also exercises the final-step noise suppression
        let out = reverse_step_coords(&xt, 1, &eps_hat, &noise, &sched).unwrap();
        let expected = (1.0 / 0.5f64.sqrt()) * (1.0 - 0.5 / 0.5f64.sqrt());
        assert_abs_diff_eq!(out[(0, 0)], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.41421356, epsilon = 1e-8);
        assert_eq!(out[(0, 1)], 0.0);
    }

    #[test]
    fn reverse_step_is_linear_in_noise() {
        let sched = DiffusionSchedule::linear(10).unwrap();
        let mut rng = substream(2, "lin", 0);
        let xt = standard_normal(3, 3, &mut rng);
        let eps_hat = standard_normal(3, 3, &mut rng);
        let noise = standard_normal(3, 3, &mut rng);
        let t = 5;

        let base = reverse_step_coords(&xt, t, &eps_hat, &Array2::zeros((3, 3)), &sched).unwrap();
        let with_noise = reverse_step_coords(&xt, t, &eps_hat, &noise, &sched).unwrap();
        let doubled = reverse_step_coords(&xt, t, &eps_hat, &(&noise * 2.0), &sched).unwrap();
        let coeff = (1.0 - sched.alpha(t)).sqrt();
        for ((b, w), d) in base.iter().zip(with_noise.iter()).zip(doubled.iter()) {
            let delta1 = w - b;
            let delta2 = d - b;
            assert_abs_diff_eq!(delta2, 2.0 * delta1, epsilon = 1e-12);
            let _ = coeff;
        }
        // superposition in xt and eps_hat as well
        let x2 = &xt * 2.0;
        let sum = reverse_step_coords(&x2, t, &eps_hat, &noise, &sched).unwrap();
        let lin_in_x = reverse_step_coords(&xt, t, &Array2::zeros((3, 3)), &Array2::zeros((3, 3)), &sched)
            .unwrap();
        for ((s, w), l) in sum.iter().zip(with_noise.iter()).zip(lin_in_x.iter()) {
            assert_abs_diff_eq!(s - w, *l, epsilon = 1e-10);
        }
    }

    #[test]
    fn sample_coords_shape_and_determinism() {
        let sched = DiffusionSchedule::linear(12).unwrap();
        let model = CoordDenoiser::init(8, 5);
        let a = sample_coords(&model, 1, &sched, &mut substream(3, "s", 0)).unwrap();
        assert_eq!(a.dim(), (1, 3));
        let b = sample_coords(&model, 1, &sched, &mut substream(3, "s", 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_chain_matches_analytic_gaussian() {
        // with eps_hat = 0 the chain is X^{t-1} = X^t / sqrt(a_t) + noise,
        // a zero-mean Gaussian whose variance follows a simple recursion
        let steps = 12;
        let sched = DiffusionSchedule::linear(steps).unwrap();
        let model = CoordDenoiser::zeros(4);

        let mut variance = 1.0;
        for t in (1..=steps).rev() {
            variance /= sched.alpha(t);
            if t > 1 {
                variance += 1.0 - sched.alpha(t);
            }
        }

        let samples = 10_000;
        let mut rng = substream(4, "chain", 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let x = sample_coords(&model, 1, &sched, &mut rng).unwrap();
            for &v in x.iter() {
                sum += v;
                sum_sq += v * v;
            }
        }
        let count = (samples * 3) as f64;
        let mean = sum / count;
        let sigma_mean = (variance / count).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean} vs 3 sigma {}", 3.0 * sigma_mean);
        // empirical variance should track the analytic chain variance
        let emp_var = sum_sq / count - mean * mean;
        assert!((emp_var - variance).abs() / variance < 0.1, "{emp_var} vs {variance}");
    }

    #[test]
    fn iterated_single_step_noising_matches_closed_form_marginal() {
        // composing t single-step kernels X^s = sqrt(a_s) X^{s-1} +
        // sqrt(1 - a_s) eps_s reproduces the closed-form marginal
        let steps = 8;
        let sched = DiffusionSchedule::linear(steps).unwrap();
        let t = 5;
        let x0 = [0.7, -0.3, 0.2];
        let draws = 100_000;

        let mut rng = substream(8, "marginal", 0);
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        let mut cross = 0.0f64; // dim 0 vs dim 1
        for _ in 0..draws {
            let mut x = x0;
            for s in 1..=t {
                let a = sched.alpha(s);
                for v in x.iter_mut() {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *v = a.sqrt() * *v + (1.0 - a).sqrt() * eps;
                }
            }
            for d in 0..3 {
                sum[d] += x[d];
                sum_sq[d] += x[d] * x[d];
            }
            cross += x[0] * x[1];
        }

        let abar = sched.alpha_bar(t);
        let var = 1.0 - abar;
        for d in 0..3 {
            let mean = sum[d] / draws as f64;
            let expected_mean = abar.sqrt() * x0[d];
            let sigma_mean = (var / draws as f64).sqrt();
            assert!(
                (mean - expected_mean).abs() < 3.0 * sigma_mean,
                "dim {d}: mean {mean} vs {expected_mean}"
            );
            let emp_var = sum_sq[d] / draws as f64 - mean * mean;
            // variance of the sample variance is ~2 var^2 / n
            let sigma_var = (2.0 * var * var / draws as f64).sqrt();
            assert!((emp_var - var).abs() < 4.0 * sigma_var, "dim {d}: var {emp_var} vs {var}");
        }
        // off-diagonal covariance stays near zero
        let cov01 = cross / draws as f64 - (sum[0] / draws as f64) * (sum[1] / draws as f64);
        assert!(cov01.abs() < 3.0 * var / (draws as f64).sqrt());
    }

    #[test]
    fn terminal_forward_noise_has_identity_covariance() {
        let sched = DiffusionSchedule::linear(6).unwrap();
        let mut rng = substream(9, "cov", 0);
        let draws = 100_000;
        let x0 = Array2::from_shape_vec((1, 3), vec![0.4, 0.1, -0.6]).unwrap();
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        for _ in 0..draws {
            let eps = standard_normal(1, 3, &mut rng);
            let xt = forward_noise_coords(&x0, 6, &eps, &sched).unwrap();
            for d in 0..3 {
                sum[d] += xt[(0, d)];
                sum_sq[d] += xt[(0, d)] * xt[(0, d)];
            }
        }
        for d in 0..3 {
            let mean = sum[d] / draws as f64;
            let var = sum_sq[d] / draws as f64 - mean * mean;
            let sigma_var = (2.0 / draws as f64).sqrt();
            assert!((var - 1.0).abs() < 4.0 * sigma_var, "dim {d} var {var}");
        }
    }

    #[test]
    fn normalization_round_trips() {
        let g = SpatialGraph::new(
            vec![[10.0, -3.0, 2.0], [14.0, 1.0, 2.0], [8.0, -5.0, 0.0]],
            vec![(0, 1, 1)],
        )
        .unwrap();
        let norm = Normalization::fit(std::slice::from_ref(&g)).unwrap();
        let arr = norm.normalize_coords(&g);
        let back = norm.denormalize_array(&arr);
        for (orig, round) in g.coords().iter().zip(back.iter()) {
            for d in 0..3 {
                assert_abs_diff_eq!(orig[d], round[d], epsilon = 1e-12);
            }
        }
        // normalized radii are at most ~1 for the bulk of the corpus
        let max_radius = arr
            .rows()
            .into_iter()
            .map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt())
            .fold(0.0f64, f64::max);
        assert!(max_radius <= 1.0 + 1e-9);
    }
}
