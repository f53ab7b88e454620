//! Toy latent diffusion with an affine conditional denoiser.
//!
//! The denoiser predicts `eps(z, t, c) = gamma * z + P c`, which makes every
//! DDIM step an affine map `z_{t-1} = a_t z_t + b_t P c + sigma_t eps_t`.
//! Generation and inversion are therefore exact inverses of one another as
//! long as every `a_t` is nonzero, which is checked when the model is built.

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from_seed, standard_normal_f32, standard_normal_f64};
use crate::tensor::{LatentTensor, Shape};

/// Smallest `|a_t|` accepted as invertible.
const MIN_STEP_COEFFICIENT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
    eta: f64,
}

/// Linear beta ramp from `beta_min` to `beta_max` over `steps` steps.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64, eta: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::config(format!(
            "betas must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::config(format!("eta must lie in [0, 1], got {eta}")));
    }
    let betas: Vec<f64> = if steps == 1 {
        vec![beta_min]
    } else {
        (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let mut alphas_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alphas_bar.push(acc);
    }
    Ok(NoiseSchedule {
        betas,
        alphas_bar,
        eta,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `alpha_bar` at 1-based step `t`; step 0 is the clean sample with value 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_bar[t - 1]
        }
    }

    /// The same betas with `eta = 0`.
    pub fn deterministic(&self) -> NoiseSchedule {
        NoiseSchedule {
            eta: 0.0,
            ..self.clone()
        }
    }
}

/// Affine coefficients of one DDIM step `z_{t-1} = z * z_t + cond * P c + sigma * eps_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub z: f64,
    pub cond: f64,
    pub sigma: f64,
}

/// Coefficients for steps `t = 1..=T`, index `t - 1`.
pub fn step_coefficients(schedule: &NoiseSchedule, gamma: f64) -> Result<Vec<StepCoefficients>> {
    (1..=schedule.steps())
        .map(|t| {
            let ab = schedule.alpha_bar(t);
            let ab_prev = schedule.alpha_bar(t - 1);
            let sigma = schedule.eta
                * ((1.0 - ab_prev) / (1.0 - ab)).sqrt()
                * (1.0 - ab / ab_prev).sqrt();
            let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
            let ratio = (ab_prev / ab).sqrt();
            let c = StepCoefficients {
                z: ratio * (1.0 - (1.0 - ab).sqrt() * gamma) + dir * gamma,
                cond: -ratio * (1.0 - ab).sqrt() + dir,
                sigma,
            };
            if !c.z.is_finite() || c.z.abs() < MIN_STEP_COEFFICIENT {
                return Err(Error::config(format!(
                    "DDIM step {t} has non-invertible coefficient {} (gamma = {gamma})",
                    c.z
                )));
            }
            Ok(c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    seed: u64,
    gamma: f64,
    cond_dim: usize,
    shape: Shape,
    /// Row-major `[C*H*W, cond_dim]`, entries N(0, 1/cond_dim).
    cond_matrix: Vec<f64>,
}

impl DenoiserModel {
    /// Builds the denoiser and verifies that every step of `schedule` is invertible.
    pub fn new(seed: u64, gamma: f64, cond_dim: usize, shape: Shape, schedule: &NoiseSchedule) -> Result<Self> {
        shape.validate()?;
        if cond_dim == 0 {
            return Err(Error::config("conditioning dimension must be positive"));
        }
        if !gamma.is_finite() {
            return Err(Error::config("gamma must be finite"));
        }
        step_coefficients(schedule, gamma)?;
        let mut rng = derived_rng(seed, "denoiser/cond-matrix", 0);
        let scale = 1.0 / (cond_dim as f64).sqrt();
        let cond_matrix = standard_normal_f64(&mut rng, shape.len() * cond_dim)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        Ok(Self {
            seed,
            gamma,
            cond_dim,
            shape,
            cond_matrix,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// `P c` as a flat `f64` vector.
    pub fn project_cond(&self, cond: &[f64]) -> Result<Vec<f64>> {
        if cond.len() != self.cond_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cond_dim,
                actual: cond.len(),
            });
        }
        Ok(self
            .cond_matrix
            .chunks_exact(self.cond_dim)
            .map(|row| row.iter().zip(cond).map(|(p, c)| p * c).sum())
            .collect())
    }

    /// Denoiser prediction `gamma * z + P c`.
    pub fn predict(&self, z: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        let pc = self.project_cond(cond)?;
        Ok(z.iter().zip(&pc).map(|(z, p)| self.gamma * z + p).collect())
    }
}

/// Per-step injected noises `eps_t` for `t = 1..=T` (index `t - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoises {
    noises: Vec<LatentTensor>,
}

impl StepNoises {
    pub fn new(noises: Vec<LatentTensor>) -> Self {
        Self { noises }
    }

    pub fn zeros(steps: usize, shape: Shape) -> Self {
        Self {
            noises: vec![LatentTensor::zeros(shape); steps],
        }
    }

    pub fn fresh(seed: u64, steps: usize, shape: Shape) -> Self {
        let mut rng = rng_from_seed(seed);
        let noises = (0..steps)
            .map(|_| {
                LatentTensor::new(shape, standard_normal_f32(&mut rng, shape.len()))
                    .expect("finite gaussian draws")
            })
            .collect();
        Self { noises }
    }

    pub fn len(&self) -> usize {
        self.noises.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noises.is_empty()
    }

    /// Noise for 1-based step `t`.
    pub fn step(&self, t: usize) -> &LatentTensor {
        &self.noises[t - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &LatentTensor> {
        self.noises.iter()
    }

    pub fn is_all_zero(&self) -> bool {
        self.noises.iter().all(LatentTensor::is_zero)
    }

    fn validate(&self, steps: usize, shape: Shape) -> Result<()> {
        if self.noises.len() != steps {
            return Err(Error::config(format!(
                "expected {steps} step noises, got {}",
                self.noises.len()
            )));
        }
        self.noises.iter().try_for_each(|n| n.ensure_shape(shape))
    }
}

/// Where generation takes its per-step noises from.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSource<'a> {
    /// Draw new noises from this seed (all-zero when `eta = 0`).
    Fresh(u64),
    /// Consume these noises verbatim.
    Copied(&'a StepNoises),
}

fn check_finite(v: &[f64], stage: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(stage))
    }
}

/// Runs the DDIM sampler from `z_T` down to `x_0`.
pub fn ddim_generate(
    z_t: &LatentTensor,
    cond: &[f64],
    schedule: &NoiseSchedule,
    model: &DenoiserModel,
    noise: NoiseSource<'_>,
) -> Result<(LatentTensor, StepNoises)> {
    let shape = model.shape();
    z_t.ensure_shape(shape)?;
    let coeffs = step_coefficients(schedule, model.gamma())?;
    let steps = schedule.steps();
    let used = match noise {
        NoiseSource::Copied(n) => {
            n.validate(steps, shape)?;
            n.clone()
        }
        NoiseSource::Fresh(_) if schedule.eta() == 0.0 => StepNoises::zeros(steps, shape),
        NoiseSource::Fresh(seed) => StepNoises::fresh(seed, steps, shape),
    };
    let pc = model.project_cond(cond)?;
    let mut z = z_t.to_f64();
    for t in (1..=steps).rev() {
        let c = coeffs[t - 1];
        let eps = used.step(t).data();
        for ((zi, p), e) in z.iter_mut().zip(&pc).zip(eps) {
            *zi = c.z * *zi + c.cond * p + c.sigma * (*e as f64);
        }
        check_finite(&z, "ddim_generate")?;
    }
    Ok((LatentTensor::from_f64(shape, &z)?, used))
}

fn invert_chain(
    x0: &LatentTensor,
    cond: &[f64],
    schedule: &NoiseSchedule,
    model: &DenoiserModel,
    noises: Option<&StepNoises>,
) -> Result<LatentTensor> {
    let shape = model.shape();
    x0.ensure_shape(shape)?;
    let coeffs = step_coefficients(schedule, model.gamma())?;
    let pc = model.project_cond(cond)?;
    let mut z = x0.to_f64();
    for t in 1..=schedule.steps() {
        let c = coeffs[t - 1];
        match noises {
            Some(n) => {
                let eps = n.step(t).data();
                for ((zi, p), e) in z.iter_mut().zip(&pc).zip(eps) {
                    *zi = (*zi - c.cond * p - c.sigma * (*e as f64)) / c.z;
                }
            }
            None => {
                for (zi, p) in z.iter_mut().zip(&pc) {
                    *zi = (*zi - c.cond * p) / c.z;
                }
            }
        }
        check_finite(&z, "ddim_invert")?;
    }
    LatentTensor::from_f64(shape, &z)
}

/// Recovers `z_T` from `x_0` under the deterministic (`eta = 0`) sampler.
pub fn ddim_invert(
    x0: &LatentTensor,
    cond: &[f64],
    schedule: &NoiseSchedule,
    model: &DenoiserModel,
) -> Result<LatentTensor> {
    if schedule.eta() != 0.0 {
        return Err(Error::config(
            "exact DDIM inversion requires eta = 0; supply the step noises for stochastic schedules",
        ));
    }
    invert_chain(x0, cond, schedule, model, None)
}

/// Inverts a stochastic chain whose per-step noises are known.
pub fn ddim_invert_with_noises(
    x0: &LatentTensor,
    cond: &[f64],
    schedule: &NoiseSchedule,
    model: &DenoiserModel,
    noises: &StepNoises,
) -> Result<LatentTensor> {
    noises.validate(schedule.steps(), model.shape())?;
    invert_chain(x0, cond, schedule, model, Some(noises))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derived_rng;
    use crate::tensor::sample_latent;

    fn small() -> (NoiseSchedule, DenoiserModel) {
        let s = make_schedule(10, 1e-4, 0.02, 0.0).unwrap();
        let m = DenoiserModel::new(5, 0.1, 8, Shape::new(2, 4, 4), &s).unwrap();
        (s, m)
    }

    fn unit(seed: u64, d: usize) -> Vec<f64> {
        let v = standard_normal_f64(&mut derived_rng(seed, "cond", 0), d);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.02, 0.02, 0.0).unwrap();
        assert_eq!(s.alphas_bar().len(), 1);
        assert!((s.alphas_bar()[0] - 0.98).abs() < 1e-15);
    }

    #[test]
    fn ten_step_schedule_is_cumulative_product() {
        let s = make_schedule(10, 1e-4, 0.02, 0.0).unwrap();
        let ab = s.alphas_bar();
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
        let prod: f64 = s.betas().iter().map(|b| 1.0 - b).product();
        assert!((ab[9] - prod).abs() < 1e-15);
        assert!((s.betas()[0] - 1e-4).abs() < 1e-15 && (s.betas()[9] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn schedule_range_errors() {
        assert!(make_schedule(10, 0.02, 1e-4, 0.0).is_err());
        assert!(make_schedule(0, 1e-4, 0.02, 0.0).is_err());
        assert!(make_schedule(10, 0.0, 0.02, 0.0).is_err());
        assert!(make_schedule(10, 1e-4, 1.0, 0.0).is_err());
        assert!(make_schedule(10, 1e-4, 0.02, 1.5).is_err());
    }

    #[test]
    fn non_invertible_gamma_rejected() {
        // T = 1, eta = 0: a_1 = (1 - sqrt(1 - ab) gamma) / sqrt(ab) vanishes at gamma = 1/sqrt(1 - ab)
        let s = make_schedule(1, 0.02, 0.02, 0.0).unwrap();
        let gamma = 1.0 / 0.02f64.sqrt();
        assert!(DenoiserModel::new(1, gamma, 4, Shape::new(1, 2, 2), &s).is_err());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (s, m) = small();
        let z = LatentTensor::zeros(m.shape());
        let (x0, used) = ddim_generate(&z, &[0.0; 8], &s, &m, NoiseSource::Fresh(3)).unwrap();
        assert!(x0.is_zero());
        assert!(used.is_all_zero());
        let back = ddim_invert(&x0, &[0.0; 8], &s, &m).unwrap();
        assert!(back.is_zero());
    }

    #[test]
    fn one_step_matches_hand_computed_update() {
        let s = make_schedule(1, 0.02, 0.02, 0.0).unwrap();
        let shape = Shape::new(1, 3, 3);
        let m = DenoiserModel::new(11, 0.1, 4, shape, &s).unwrap();
        let z = sample_latent(4, shape).unwrap();
        let c = unit(1, 4);
        let (x0, _) = ddim_generate(&z, &c, &s, &m, NoiseSource::Fresh(0)).unwrap();
        // x0_pred = (z - sqrt(1 - ab) eps_hat) / sqrt(ab); alpha_bar_prev = 1 so x0 = x0_pred
        let ab = 0.98f64;
        let eps = m.predict(&z.to_f64(), &c).unwrap();
        for (i, (zi, e)) in z.to_f64().iter().zip(&eps).enumerate() {
            let expected = (zi - (1.0 - ab).sqrt() * e) / ab.sqrt();
            assert!((x0.data()[i] as f64 - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let (s, m) = small();
        for seed in 0..20 {
            let z = sample_latent(seed, m.shape()).unwrap();
            let c = unit(seed, 8);
            let (x0, _) = ddim_generate(&z, &c, &s, &m, NoiseSource::Fresh(seed)).unwrap();
            let back = ddim_invert(&x0, &c, &s, &m).unwrap();
            assert!(back.max_abs_diff(&z).unwrap() < 1e-5);
        }
    }

    #[test]
    fn wrong_cond_degrades_roundtrip() {
        let (s, m) = small();
        let mut worse = 0;
        for seed in 0..100 {
            let z = sample_latent(seed, m.shape()).unwrap();
            let c = unit(seed, 8);
            let c2 = unit(seed + 1000, 8);
            let (x0, _) = ddim_generate(&z, &c, &s, &m, NoiseSource::Fresh(0)).unwrap();
            let good = ddim_invert(&x0, &c, &s, &m).unwrap().max_abs_diff(&z).unwrap();
            let bad = ddim_invert(&x0, &c2, &s, &m).unwrap().max_abs_diff(&z).unwrap();
            if bad > good {
                worse += 1;
            }
        }
        assert_eq!(worse, 100);
    }

    #[test]
    fn stochastic_chain_with_copied_noises_inverts() {
        let s = make_schedule(10, 1e-4, 0.02, 1.0).unwrap();
        let m = DenoiserModel::new(5, 0.1, 8, Shape::new(2, 4, 4), &s).unwrap();
        let z = sample_latent(1, m.shape()).unwrap();
        let c = unit(2, 8);
        let (x0, used) = ddim_generate(&z, &c, &s, &m, NoiseSource::Fresh(77)).unwrap();
        assert!(!used.is_all_zero());
        let (again, _) = ddim_generate(&z, &c, &s, &m, NoiseSource::Copied(&used)).unwrap();
        assert_eq!(again, x0);
        assert!(ddim_invert(&x0, &c, &s, &m).is_err());
        let back = ddim_invert_with_noises(&x0, &c, &s, &m, &used).unwrap();
        assert!(back.max_abs_diff(&z).unwrap() < 1e-5);
    }

    #[test]
    fn generation_is_affine() {
        let (s, m) = small();
        let zero_c = vec![0.0; 8];
        let zero = LatentTensor::zeros(m.shape());
        for seed in 0..10 {
            let z1 = sample_latent(seed, m.shape()).unwrap();
            let z2 = sample_latent(seed + 50, m.shape()).unwrap();
            let c = unit(seed, 8);
            let (a, b) = (0.7f32, -1.3f32);
            let mix = z1.axpby(a, &z2, b).unwrap();
            let gen = |z: &LatentTensor, c: &[f64]| ddim_generate(z, c, &s, &m, NoiseSource::Fresh(0)).unwrap().0;
            // generate(a z1 + b z2, c) = a G(z1, 0) + b G(z2, 0) + G(0, c)
            let lhs = gen(&mix, &c);
            let rhs = gen(&z1, &zero_c)
                .axpby(a, &gen(&z2, &zero_c), b)
                .unwrap()
                .axpby(1.0, &gen(&zero, &c), 1.0)
                .unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-5);
        }
    }

    #[test]
    fn shape_and_dimension_mismatch() {
        let (s, m) = small();
        let z = sample_latent(1, Shape::new(1, 4, 4)).unwrap();
        assert!(ddim_generate(&z, &[0.0; 8], &s, &m, NoiseSource::Fresh(0)).is_err());
        let z = sample_latent(1, m.shape()).unwrap();
        assert!(ddim_generate(&z, &[0.0; 3], &s, &m, NoiseSource::Fresh(0)).is_err());
        let wrong = StepNoises::zeros(3, m.shape());
        assert!(ddim_generate(&z, &[0.0; 8], &s, &m, NoiseSource::Copied(&wrong)).is_err());
    }
}
