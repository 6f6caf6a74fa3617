//! Synthetic local objectives with exact and noisy gradient oracles.
//!
//! Two families are provided:
//!
//! * `quadratic`: `f_i(x) = (curvature / 2) * ||x - c_i||^2` with centers
//!   `c_i = offset * 1 + spread * u_i`, `u_i ~ U[-1, 1]^d`. The smoothness
//!   constant is `curvature` and the global minimizer is the mean center.
//! * `logistic-synthetic`: L2-regularized logistic loss over a per-client
//!   dataset whose labels are skewed toward a client-specific class.
//!
//! Stochastic gradients add independent noise drawn uniformly from
//! `[-sigma / sqrt(d), sigma / sqrt(d)]` per component, which is zero-mean
//! with total variance `sigma^2 / 3`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelVector;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        dim: usize,
        #[serde(default = "one")]
        curvature: f64,
        /// Common shift of every center; sets the distance from the origin to the optimum.
        #[serde(default = "one")]
        offset: f64,
        /// Half-width of the per-client center perturbation (heterogeneity).
        #[serde(default = "one")]
        spread: f64,
    },
    LogisticSynthetic {
        dim: usize,
        #[serde(default = "default_samples")]
        samples_per_client: usize,
        /// Probability that a sample's label is replaced by the client's preferred class.
        #[serde(default = "default_skew")]
        label_skew: f64,
        #[serde(default = "default_reg")]
        regularization: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn default_samples() -> usize {
    50
}
fn default_skew() -> f64 {
    0.3
}
fn default_reg() -> f64 {
    0.01
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec::Quadratic {
            dim: 10,
            curvature: 1.0,
            offset: 1.0,
            spread: 1.0,
        }
    }
}

impl ObjectiveSpec {
    pub fn dim(&self) -> usize {
        match *self {
            ObjectiveSpec::Quadratic { dim, .. } | ObjectiveSpec::LogisticSynthetic { dim, .. } => dim,
        }
    }

    /// Known smoothness constant `L`; the logistic family depends on the
    /// generated data and reports none.
    pub fn smoothness(&self) -> Option<f64> {
        match *self {
            ObjectiveSpec::Quadratic { curvature, .. } => Some(curvature),
            ObjectiveSpec::LogisticSynthetic { .. } => None,
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match *self {
            ObjectiveSpec::Quadratic {
                dim,
                curvature,
                offset,
                spread,
            } => {
                if dim == 0 {
                    return bad("objective dim must be positive");
                }
                if !(curvature > 0.0 && curvature.is_finite()) {
                    return bad("quadratic curvature must be positive");
                }
                if !(offset.is_finite() && spread.is_finite() && spread >= 0.0) {
                    return bad("quadratic offset/spread must be finite, spread >= 0");
                }
            }
            ObjectiveSpec::LogisticSynthetic {
                dim,
                samples_per_client,
                label_skew,
                regularization,
            } => {
                if dim == 0 || samples_per_client == 0 {
                    return bad("logistic dim and samples_per_client must be positive");
                }
                if !(0.0..=1.0).contains(&label_skew) {
                    return bad("label_skew must lie in [0, 1]");
                }
                if !(regularization >= 0.0 && regularization.is_finite()) {
                    return bad("regularization must be nonnegative");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientSample {
    pub value: ModelVector,
    pub is_stochastic: bool,
}

#[derive(Clone, Debug)]
struct Dataset {
    features: Vec<ModelVector>,
    labels: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Family {
    Quadratic { curvature: f64, centers: Vec<ModelVector> },
    Logistic { regularization: f64, data: Vec<Dataset> },
}

/// A built objective: `f(x) = (1/N) sum_i f_i(x)`.
#[derive(Clone, Debug)]
pub struct Objective {
    dim: usize,
    sigma: f64,
    family: Family,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Objective {
    /// Generates per-client parameters from `seed` (stream [`Stream::Objective`]).
    pub fn build(spec: &ObjectiveSpec, clients: usize, sigma: f64, seed: u64) -> Result<Self> {
        spec.check()?;
        if clients == 0 {
            return Err(Error::InvalidParameter("objective needs at least one client".into()));
        }
        let family = match *spec {
            ObjectiveSpec::Quadratic {
                dim,
                curvature,
                offset,
                spread,
            } => {
                let mut rng = stream_rng(seed, Stream::Objective, 0);
                let centers = (0..clients)
                    .map(|_| {
                        (0..dim)
                            .map(|_| offset + spread * rng.gen_range(-1.0..=1.0))
                            .collect::<Vec<_>>()
                            .into()
                    })
                    .collect();
                Family::Quadratic { curvature, centers }
            }
            ObjectiveSpec::LogisticSynthetic {
                dim,
                samples_per_client,
                label_skew,
                regularization,
            } => {
                let mut rng = stream_rng(seed, Stream::Objective, 0);
                let truth: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                let data = (0..clients)
                    .map(|i| {
                        let mut rng = stream_rng(seed, Stream::Objective, i as u64 + 1);
                        let preferred = if i % 2 == 0 { 1.0 } else { -1.0 };
                        let shift: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..=0.5)).collect();
                        let mut features = Vec::with_capacity(samples_per_client);
                        let mut labels = Vec::with_capacity(samples_per_client);
                        for _ in 0..samples_per_client {
                            let a: Vec<f64> = shift.iter().map(|s| s + rng.gen_range(-1.0..=1.0)).collect();
                            let margin: f64 =
                                a.iter().zip(&truth).map(|(x, w)| x * w).sum::<f64>() + 0.1 * rng.gen_range(-1.0..=1.0);
                            let mut y = if margin >= 0.0 { 1.0 } else { -1.0 };
                            if rng.gen_bool(label_skew) {
                                y = preferred;
                            }
                            features.push(ModelVector::from_vec(a));
                            labels.push(y);
                        }
                        Dataset { features, labels }
                    })
                    .collect();
                Family::Logistic { regularization, data }
            }
        };
        Ok(Objective {
            dim: spec.dim(),
            sigma,
            family,
        })
    }

    /// Quadratic objective with explicit centers.
    pub fn quadratic(curvature: f64, centers: Vec<ModelVector>, sigma: f64) -> Result<Self> {
        let dim = centers.first().map(ModelVector::dim).unwrap_or(0);
        if dim == 0 || centers.iter().any(|c| c.dim() != dim || !c.is_finite()) {
            return Err(Error::InvalidParameter("centers must be finite and share a positive dimension".into()));
        }
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(Error::InvalidParameter("curvature must be positive".into()));
        }
        Ok(Objective {
            dim,
            sigma,
            family: Family::Quadratic { curvature, centers },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn num_clients(&self) -> usize {
        match &self.family {
            Family::Quadratic { centers, .. } => centers.len(),
            Family::Logistic { data, .. } => data.len(),
        }
    }

    pub fn centers(&self) -> Option<&[ModelVector]> {
        match &self.family {
            Family::Quadratic { centers, .. } => Some(centers),
            Family::Logistic { .. } => None,
        }
    }

    pub fn smoothness(&self) -> Option<f64> {
        match &self.family {
            Family::Quadratic { curvature, .. } => Some(*curvature),
            Family::Logistic { .. } => None,
        }
    }

    pub fn local_loss(&self, client: usize, x: &ModelVector) -> Result<f64> {
        x.check_dim(self.dim)?;
        Ok(match &self.family {
            Family::Quadratic { curvature, centers } => {
                let d = x.distance(&centers[client]);
                0.5 * curvature * d * d
            }
            Family::Logistic { regularization, data } => {
                let ds = &data[client];
                let n = ds.labels.len() as f64;
                let loss: f64 = ds
                    .features
                    .iter()
                    .zip(&ds.labels)
                    .map(|(a, y)| softplus(-y * a.dot(x)))
                    .sum();
                loss / n + 0.5 * regularization * x.dot(x)
            }
        })
    }

    pub fn global_loss(&self, x: &ModelVector) -> Result<f64> {
        let n = self.num_clients();
        let mut total = 0.0;
        for i in 0..n {
            total += self.local_loss(i, x)?;
        }
        Ok(total / n as f64)
    }

    /// Exact `grad f_i(x)`.
    pub fn full_gradient(&self, client: usize, x: &ModelVector) -> Result<ModelVector> {
        x.check_dim(self.dim)?;
        Ok(match &self.family {
            Family::Quadratic { curvature, centers } => {
                let mut g = x.sub(&centers[client]);
                for v in g.as_mut_slice() {
                    *v *= curvature;
                }
                g
            }
            Family::Logistic { regularization, data } => {
                let ds = &data[client];
                let n = ds.labels.len() as f64;
                let mut g = x.clone();
                for v in g.as_mut_slice() {
                    *v *= regularization;
                }
                for (a, y) in ds.features.iter().zip(&ds.labels) {
                    let w = -y * sigmoid(-y * a.dot(x)) / n;
                    g.axpy(w, a);
                }
                g
            }
        })
    }

    /// `grad f_i(x)` plus bounded zero-mean noise; exact when `sigma == 0`.
    pub fn stochastic_gradient<R: Rng + ?Sized>(
        &self,
        client: usize,
        x: &ModelVector,
        rng: &mut R,
    ) -> Result<GradientSample> {
        let mut value = self.full_gradient(client, x)?;
        if self.sigma == 0.0 {
            return Ok(GradientSample {
                value,
                is_stochastic: false,
            });
        }
        let half_width = self.sigma / (self.dim as f64).sqrt();
        for v in value.as_mut_slice() {
            *v += rng.gen_range(-half_width..=half_width);
        }
        Ok(GradientSample {
            value,
            is_stochastic: true,
        })
    }

    /// `B` stochastic-gradient steps from `x`; returns `y_B - x`.
    pub fn local_train<R: Rng + ?Sized>(
        &self,
        client: usize,
        x: &ModelVector,
        gamma: f64,
        steps: usize,
        rng: &mut R,
    ) -> Result<ModelVector> {
        if steps == 0 || gamma.is_nan() || gamma <= 0.0 {
            return Err(Error::InvalidParameter("local_train needs B >= 1 and gamma > 0".into()));
        }
        let mut y = x.clone();
        for step in 0..steps {
            let g = self.stochastic_gradient(client, &y, rng)?;
            y.axpy(-gamma, &g.value);
            if !y.is_finite() {
                return Err(Error::Divergence { client, step });
            }
        }
        Ok(y.sub(x))
    }

    /// Minimizer of the global objective when known in closed form.
    pub fn global_optimum(&self) -> Option<ModelVector> {
        match &self.family {
            Family::Quadratic { centers, .. } => {
                let mut mean = ModelVector::zeros(self.dim);
                let w = 1.0 / centers.len() as f64;
                for c in centers {
                    mean.axpy(w, c);
                }
                Some(mean)
            }
            Family::Logistic { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::from_vec(v.to_vec())
    }

    fn logistic(clients: usize, dim: usize, sigma: f64) -> Objective {
        let spec = ObjectiveSpec::LogisticSynthetic {
            dim,
            samples_per_client: 40,
            label_skew: 0.3,
            regularization: 0.01,
        };
        Objective::build(&spec, clients, sigma, 11).unwrap()
    }

    #[test]
    fn quadratic_gradient_examples() {
        let obj = Objective::quadratic(1.0, vec![mv(&[1.0, 0.0])], 0.0).unwrap();
        assert_eq!(obj.full_gradient(0, &mv(&[0.0, 0.0])).unwrap(), mv(&[-1.0, 0.0]));
        assert_eq!(obj.full_gradient(0, &mv(&[1.0, 0.0])).unwrap(), mv(&[0.0, 0.0]));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let obj = Objective::quadratic(1.0, vec![mv(&[1.0, 0.0])], 0.0).unwrap();
        assert!(matches!(
            obj.full_gradient(0, &mv(&[0.0])),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    fn central_difference(obj: &Objective, i: usize, x: &ModelVector, h: f64) -> ModelVector {
        let mut g = ModelVector::zeros(x.dim());
        for k in 0..x.dim() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            g[k] = (obj.local_loss(i, &xp).unwrap() - obj.local_loss(i, &xm).unwrap()) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradients_match_finite_differences() {
        let quad = Objective::build(&ObjectiveSpec::default(), 5, 0.0, 3).unwrap();
        let logi = logistic(5, 6, 0.0);
        let mut rng = stream_rng(99, Stream::MonteCarlo, 0);
        for obj in [&quad, &logi] {
            for _ in 0..100 {
                let i = rng.gen_range(0..5);
                let x: ModelVector = (0..obj.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>().into();
                let exact = obj.full_gradient(i, &x).unwrap();
                let fd = central_difference(obj, i, &x, 1e-5);
                for k in 0..x.dim() {
                    let err = (exact[k] - fd[k]).abs();
                    assert!(err < 1e-6 * exact[k].abs().max(1.0), "component {k}: {err}");
                }
            }
        }
    }

    #[test]
    fn zero_noise_is_exact() {
        let obj = logistic(3, 4, 0.0);
        let x = mv(&[0.3, -0.2, 0.1, 0.0]);
        let mut rng = stream_rng(1, Stream::Noise, 0);
        let s = obj.stochastic_gradient(1, &x, &mut rng).unwrap();
        assert!(!s.is_stochastic);
        assert_eq!(s.value, obj.full_gradient(1, &x).unwrap());
    }

    #[test]
    fn noise_is_unbiased_and_bounded() {
        let sigma = 0.5;
        let d = 4;
        let obj = Objective::quadratic(2.0, vec![mv(&[1.0, -1.0, 0.5, 2.0])], sigma).unwrap();
        let x = mv(&[0.0; 4]);
        let exact = obj.full_gradient(0, &x).unwrap();
        let mut rng = stream_rng(5, Stream::Noise, 0);
        let n = 100_000;
        let mut mean = ModelVector::zeros(d);
        let mut sq = 0.0;
        for _ in 0..n {
            let s = obj.stochastic_gradient(0, &x, &mut rng).unwrap();
            let dev = s.value.sub(&exact);
            assert!(dev.iter().all(|v| v.abs() <= sigma / (d as f64).sqrt() + 1e-15));
            sq += dev.dot(&dev);
            mean.axpy(1.0 / n as f64, &s.value);
        }
        let tol = 3.0 * sigma / ((n * d) as f64).sqrt();
        assert!(mean.max_abs_diff(&exact) <= tol);
        assert!(sq / n as f64 <= sigma * sigma + 1e-3);
    }

    #[test]
    fn local_train_closed_form() {
        let obj = Objective::quadratic(1.0, vec![mv(&[1.0])], 0.0).unwrap();
        let mut rng = stream_rng(0, Stream::Noise, 0);
        let x = mv(&[0.0]);
        let d1 = obj.local_train(0, &x, 0.1, 1, &mut rng).unwrap();
        assert!((d1[0] - 0.1).abs() < 1e-15);
        let d2 = obj.local_train(0, &x, 0.1, 2, &mut rng).unwrap();
        assert!((d2[0] - 0.19).abs() < 1e-15);
        let fixed = obj.local_train(0, &mv(&[1.0]), 0.1, 7, &mut rng).unwrap();
        assert_eq!(fixed[0], 0.0);
    }

    #[test]
    fn local_train_geometric_recurrence() {
        let centers = vec![mv(&[2.0, -1.0, 0.5])];
        for (lambda, gamma, b) in [(1.0, 0.05, 5), (3.0, 0.2, 7), (0.5, 0.9, 3)] {
            let obj = Objective::quadratic(lambda, centers.clone(), 0.0).unwrap();
            let x = mv(&[0.3, 0.3, -4.0]);
            let mut rng = stream_rng(0, Stream::Noise, 0);
            let delta = obj.local_train(0, &x, gamma, b, &mut rng).unwrap();
            let factor = 1.0 - (1.0_f64 - gamma * lambda).powi(b as i32);
            for k in 0..3 {
                let expected = factor * (centers[0][k] - x[k]);
                assert!((delta[k] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let obj = Objective::quadratic(1.0, vec![mv(&[1.0])], 0.0).unwrap();
        let mut rng = stream_rng(0, Stream::Noise, 0);
        let r = obj.local_train(0, &mv(&[0.0]), 1e200, 5, &mut rng);
        assert!(matches!(r, Err(Error::Divergence { client: 0, .. })));
    }

    #[test]
    fn optimum_examples() {
        let obj = Objective::quadratic(1.0, vec![mv(&[0.0, 0.0]), mv(&[2.0, 0.0])], 0.0).unwrap();
        assert_eq!(obj.global_optimum().unwrap(), mv(&[1.0, 0.0]));
        let single = Objective::quadratic(1.0, vec![mv(&[3.0, -2.0])], 0.0).unwrap();
        assert_eq!(single.global_optimum().unwrap(), mv(&[3.0, -2.0]));
        assert!(logistic(2, 3, 0.0).global_optimum().is_none());
    }

    #[test]
    fn optimum_matches_gradient_descent() {
        let spec = ObjectiveSpec::Quadratic {
            dim: 3,
            curvature: 1.5,
            offset: 0.5,
            spread: 2.0,
        };
        let obj = Objective::build(&spec, 100, 0.0, 21).unwrap();
        let centers = obj.centers().unwrap();
        // independent oracle: full-gradient descent on (1/N) sum (l/2)||x - c_i||^2
        let mut x = [0.0f64; 3];
        for _ in 0..2000 {
            let mut g = [0.0f64; 3];
            for c in centers {
                for k in 0..3 {
                    g[k] += 1.5 * (x[k] - c[k]) / 100.0;
                }
            }
            for k in 0..3 {
                x[k] -= 0.5 * g[k];
            }
        }
        let opt = obj.global_optimum().unwrap();
        for k in 0..3 {
            assert!((opt[k] - x[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn center_spread_bounds_gradient_divergence() {
        // ||grad f_i(x) - grad f(x)|| = l ||c_bar - c_i|| <= l * 2 * spread * sqrt(d)
        let spec = ObjectiveSpec::Quadratic {
            dim: 4,
            curvature: 2.0,
            offset: 1.0,
            spread: 0.7,
        };
        let obj = Objective::build(&spec, 30, 0.0, 4).unwrap();
        let bound = 2.0 * 2.0 * 0.7 * 2.0;
        let mut rng = stream_rng(3, Stream::MonteCarlo, 0);
        for _ in 0..200 {
            let x: ModelVector = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>().into();
            let mut global = ModelVector::zeros(4);
            for i in 0..30 {
                global.axpy(1.0 / 30.0, &obj.full_gradient(i, &x).unwrap());
            }
            for i in 0..30 {
                let div = obj.full_gradient(i, &x).unwrap().distance(&global);
                assert!(div <= bound + 1e-12);
            }
        }
    }
}
