//! Conditionally independent appearance model `p(x | y) = Π_t p(x_t | y_t)`
//! with one Gaussian mixture per label, and its stochastic-EM update from
//! posterior label samples.

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::Image;
use crate::grid::{GridDomain, Labelling};
use crate::rng::stream_rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower bound on covariance eigenvalues when the image gives no scale.
pub const MIN_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `C x C`.
    pub covariance: Vec<f64>,
}

impl GaussianComponent {
    pub fn isotropic(weight: f64, mean: Vec<f64>, variance: f64) -> Self {
        let c = mean.len();
        let mut covariance = vec![0.0; c * c];
        for i in 0..c {
            covariance[i * c + i] = variance;
        }
        GaussianComponent { weight, mean, covariance }
    }

    fn matrix(&self) -> DMatrix<f64> {
        let c = self.mean.len();
        DMatrix::from_row_slice(c, c, &self.covariance)
    }
}

/// Per-label Gaussian mixtures over a `C`-channel colour space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceModel {
    pub channels: usize,
    pub mixtures: Vec<Vec<GaussianComponent>>,
    /// Smallest admissible covariance eigenvalue.
    pub min_variance: f64,
}

/// Precomputed precision and normaliser of one component.
struct Prepared {
    log_coef: f64,
    mean: Vec<f64>,
    precision: Vec<f64>,
}

impl Prepared {
    fn new(comp: &GaussianComponent) -> Result<Self> {
        let c = comp.mean.len();
        let chol = comp.matrix().cholesky().ok_or_else(|| {
            Error::InvalidConfig("covariance matrix is not positive definite".into())
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv = chol.inverse();
        Ok(Prepared {
            log_coef: comp.weight.ln() - 0.5 * (c as f64 * LN_2PI + log_det),
            mean: comp.mean.clone(),
            precision: inv.transpose().as_slice().to_vec(),
        })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let c = self.mean.len();
        let mut q = 0.0;
        for i in 0..c {
            let di = x[i] - self.mean[i];
            for j in 0..c {
                q += di * self.precision[i * c + j] * (x[j] - self.mean[j]);
            }
        }
        self.log_coef - 0.5 * q
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Per-node, per-label log-likelihoods `log p(x_t | k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodField {
    pub domain: GridDomain,
    pub num_labels: usize,
    pub values: Vec<f64>,
}

impl LikelihoodField {
    pub fn at(&self, t: usize) -> &[f64] {
        &self.values[t * self.num_labels..(t + 1) * self.num_labels]
    }

    /// `log p(x | y) = Σ_t field[t][y_t]`.
    pub fn log_likelihood(&self, y: &Labelling) -> f64 {
        y.as_slice().iter().enumerate().map(|(t, &k)| self.at(t)[k as usize]).sum()
    }
}

/// Outcome of one appearance update. Labels that received no pixels keep
/// their previous mixture and are listed in `empty_labels`.
#[derive(Clone, Debug)]
pub struct AppearanceUpdate {
    pub model: AppearanceModel,
    pub empty_labels: Vec<usize>,
}

impl AppearanceModel {
    pub fn new(channels: usize, mixtures: Vec<Vec<GaussianComponent>>, min_variance: f64) -> Result<Self> {
        let model = AppearanceModel { channels, mixtures, min_variance };
        model.validate()?;
        Ok(model)
    }

    /// One isotropic Gaussian per label.
    pub fn from_gaussians(means: &[Vec<f64>], variance: f64) -> Result<Self> {
        let channels = means.first().map_or(1, Vec::len);
        Self::new(
            channels,
            means.iter().map(|m| vec![GaussianComponent::isotropic(1.0, m.clone(), variance)]).collect(),
            MIN_VARIANCE_FLOOR.min(variance),
        )
    }

    pub fn num_labels(&self) -> usize {
        self.mixtures.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.mixtures.is_empty() {
            return Err(Error::InvalidConfig("appearance model needs channels and labels".into()));
        }
        for (k, mix) in self.mixtures.iter().enumerate() {
            if mix.is_empty() {
                return Err(Error::InvalidConfig(format!("label {k} has no mixture components")));
            }
            let total: f64 = mix.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > 1e-9 || mix.iter().any(|c| c.weight <= 0.0) {
                return Err(Error::InvalidConfig(format!("mixture weights of label {k} do not sum to 1")));
            }
            for comp in mix {
                if comp.mean.len() != self.channels || comp.covariance.len() != self.channels * self.channels {
                    return Err(Error::ChannelMismatch { expected: self.channels, found: comp.mean.len() });
                }
                Prepared::new(comp)?;
            }
        }
        Ok(())
    }

    fn prepared(&self) -> Result<Vec<Vec<Prepared>>> {
        self.mixtures.iter().map(|mix| mix.iter().map(Prepared::new).collect()).collect()
    }

    /// `log Σ_m w_m N(c; μ_m, Σ_m)` for label `k`.
    pub fn pixel_loglik(&self, k: usize, colour: &[f64]) -> Result<f64> {
        let mix = self
            .mixtures
            .get(k)
            .ok_or(Error::InvalidLabel { label: k, count: self.mixtures.len() })?;
        if colour.len() != self.channels {
            return Err(Error::ChannelMismatch { expected: self.channels, found: colour.len() });
        }
        let terms = mix
            .iter()
            .map(|c| Prepared::new(c).map(|p| p.log_density(colour)))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }

    pub fn likelihood_field(&self, image: &Image) -> Result<LikelihoodField> {
        if image.channels() != self.channels {
            return Err(Error::ChannelMismatch { expected: self.channels, found: image.channels() });
        }
        let prepared = self.prepared()?;
        let k = self.num_labels();
        let mut values = Vec::with_capacity(image.domain().nodes() * k);
        let mut terms = Vec::new();
        for x in image.pixels() {
            for mix in &prepared {
                terms.clear();
                terms.extend(mix.iter().map(|p| p.log_density(x)));
                values.push(log_sum_exp(&terms));
            }
        }
        Ok(LikelihoodField { domain: image.domain(), num_labels: k, values })
    }

    /// Mixture log-likelihood of a set of pixels under label `k`.
    pub fn data_loglik(&self, k: usize, pixels: &[&[f64]]) -> Result<f64> {
        pixels.iter().map(|x| self.pixel_loglik(k, x)).sum()
    }

    /// One responsibility-weighted EM step per label on the pixels the
    /// sampled labellings assign to it, blended with the current parameters
    /// by `step`.
    pub fn update(&self, image: &Image, samples: &[Labelling], step: f64) -> Result<AppearanceUpdate> {
        if !(0.0..=1.0).contains(&step) {
            return Err(Error::InvalidConfig(format!("appearance step {step} outside [0, 1]")));
        }
        if image.channels() != self.channels {
            return Err(Error::ChannelMismatch { expected: self.channels, found: image.channels() });
        }
        let k_count = self.num_labels();
        let mut assigned: Vec<Vec<&[f64]>> = vec![Vec::new(); k_count];
        for y in samples {
            if y.domain() != image.domain() {
                return Err(Error::DimensionMismatch("sample does not match the image".into()));
            }
            for (t, &k) in y.as_slice().iter().enumerate() {
                let k = k as usize;
                if k >= k_count {
                    return Err(Error::InvalidLabel { label: k, count: k_count });
                }
                assigned[k].push(image.pixel(t));
            }
        }
        let mut model = self.clone();
        let mut empty_labels = Vec::new();
        if step == 0.0 {
            empty_labels.extend((0..k_count).filter(|&k| assigned[k].is_empty()));
            return Ok(AppearanceUpdate { model, empty_labels });
        }
        for (k, pixels) in assigned.iter().enumerate() {
            if pixels.is_empty() {
                empty_labels.push(k);
                continue;
            }
            model.mixtures[k] = self.em_step(&self.mixtures[k], pixels, step)?;
        }
        Ok(AppearanceUpdate { model, empty_labels })
    }

    fn em_step(&self, mix: &[GaussianComponent], pixels: &[&[f64]], step: f64) -> Result<Vec<GaussianComponent>> {
        let c = self.channels;
        let prepared = mix.iter().map(Prepared::new).collect::<Result<Vec<_>>>()?;
        let m = mix.len();
        let mut mass = vec![0.0; m];
        let mut sum_x = vec![vec![0.0; c]; m];
        let mut resp_all = Vec::with_capacity(pixels.len() * m);
        let mut logs = vec![0.0; m];
        for x in pixels {
            for (j, p) in prepared.iter().enumerate() {
                logs[j] = p.log_density(x);
            }
            let norm = log_sum_exp(&logs);
            for j in 0..m {
                let r = (logs[j] - norm).exp();
                resp_all.push(r);
                mass[j] += r;
                for ch in 0..c {
                    sum_x[j][ch] += r * x[ch];
                }
            }
        }
        let total = pixels.len() as f64;
        let mut out = Vec::with_capacity(m);
        for j in 0..m {
            let old = &mix[j];
            // A component that lost all its responsibility keeps its shape.
            if mass[j] < 1e-12 {
                out.push(GaussianComponent { weight: (1.0 - step) * old.weight, ..old.clone() });
                continue;
            }
            let mean: Vec<f64> = sum_x[j].iter().map(|s| s / mass[j]).collect();
            let mut cov = vec![0.0; c * c];
            for (i, x) in pixels.iter().enumerate() {
                let r = resp_all[i * m + j];
                for a in 0..c {
                    for b in 0..c {
                        cov[a * c + b] += r * (x[a] - mean[a]) * (x[b] - mean[b]);
                    }
                }
            }
            cov.iter_mut().for_each(|v| *v /= mass[j]);
            let blend = |o: &[f64], n: &[f64]| -> Vec<f64> {
                o.iter().zip(n).map(|(o, n)| (1.0 - step) * o + step * n).collect()
            };
            let covariance = floor_eigenvalues(&blend(&old.covariance, &cov), c, self.min_variance);
            out.push(GaussianComponent {
                weight: (1.0 - step) * old.weight + step * mass[j] / total,
                mean: blend(&old.mean, &mean),
                covariance,
            });
        }
        let floor = 1e-9;
        out.iter_mut().for_each(|g| g.weight = g.weight.max(floor));
        let s: f64 = out.iter().map(|g| g.weight).sum();
        out.iter_mut().for_each(|g| g.weight /= s);
        Ok(out)
    }

    /// Relabels the mixtures: `mapping[k_new] = k_old`.
    pub fn reindexed(&self, mapping: &[usize]) -> Result<Self> {
        let mixtures = mapping
            .iter()
            .map(|&k| {
                self.mixtures
                    .get(k)
                    .cloned()
                    .ok_or(Error::InvalidLabel { label: k, count: self.mixtures.len() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AppearanceModel { mixtures, ..self.clone() })
    }
}

/// Symmetrises `cov` and raises every eigenvalue below `floor` to `floor`.
fn floor_eigenvalues(cov: &[f64], c: usize, floor: f64) -> Vec<f64> {
    let m = DMatrix::from_row_slice(c, c, cov);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym.transpose().as_slice().to_vec();
    }
    let clamped = DVector::from_iterator(c, eig.eigenvalues.iter().map(|&l| l.max(floor)));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    rebuilt.transpose().as_slice().to_vec()
}

/// Smallest eigenvalue of a component covariance.
pub fn min_eigenvalue(comp: &GaussianComponent) -> f64 {
    comp.matrix().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn channel_moments(image: &Image) -> (Vec<f64>, Vec<f64>) {
    let c = image.channels();
    let n = image.domain().nodes() as f64;
    let mut mean = vec![0.0; c];
    for x in image.pixels() {
        for ch in 0..c {
            mean[ch] += x[ch] / n;
        }
    }
    let mut cov = vec![0.0; c * c];
    for x in image.pixels() {
        for a in 0..c {
            for b in 0..c {
                cov[a * c + b] += (x[a] - mean[a]) * (x[b] - mean[b]) / n;
            }
        }
    }
    (mean, cov)
}

/// Means drawn from randomly chosen pixels, covariances equal to the global
/// image covariance plus the regulariser, equal weights.
pub fn init_appearance(
    image: &Image,
    num_labels: usize,
    components_per_label: usize,
    seed: u64,
) -> Result<AppearanceModel> {
    if components_per_label == 0 {
        return Err(Error::InvalidConfig("components_per_label must be at least 1".into()));
    }
    let c = image.channels();
    let (_, mut cov) = channel_moments(image);
    let mean_var = (0..c).map(|i| cov[i * c + i]).sum::<f64>() / c as f64;
    let reg = (1e-4 * mean_var).max(MIN_VARIANCE_FLOOR);
    for i in 0..c {
        cov[i * c + i] += reg;
    }
    let mut rng = stream_rng(seed, 0x61707065);
    let pixels: Vec<&[f64]> = image.pixels().collect();
    let w = 1.0 / components_per_label as f64;
    let mixtures = (0..num_labels)
        .map(|_| {
            (0..components_per_label)
                .map(|_| GaussianComponent {
                    weight: w,
                    mean: pixels.choose(&mut rng).expect("image has pixels").to_vec(),
                    covariance: cov.clone(),
                })
                .collect()
        })
        .collect();
    AppearanceModel::new(c, mixtures, reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grey(values: &[f64]) -> Image {
        let d = GridDomain::new(values.len(), 1).unwrap();
        Image::new(d, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn standard_normal_peak() {
        let app = AppearanceModel::from_gaussians(&[vec![0.0]], 1.0).unwrap();
        assert_abs_diff_eq!(app.pixel_loglik(0, &[0.0]).unwrap(), -0.918_938_533_204_672_8, epsilon = 1e-12);
        assert!(matches!(app.pixel_loglik(3, &[0.0]), Err(Error::InvalidLabel { .. })));
        assert!(matches!(app.pixel_loglik(0, &[0.0, 1.0]), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn mixture_definitions() {
        let g1 = GaussianComponent::isotropic(0.5, vec![0.2], 0.01);
        let g2 = GaussianComponent::isotropic(0.5, vec![0.7], 0.04);
        let one = AppearanceModel::new(1, vec![vec![GaussianComponent { weight: 1.0, ..g1.clone() }]], 1e-6).unwrap();
        let twin = AppearanceModel::new(1, vec![vec![g1.clone(), g1.clone()]], 1e-6).unwrap();
        for x in [0.0, 0.2, 0.5, 1.0] {
            assert_abs_diff_eq!(one.pixel_loglik(0, &[x]).unwrap(), twin.pixel_loglik(0, &[x]).unwrap(), epsilon = 1e-12);
        }
        let mix = AppearanceModel::new(1, vec![vec![g1, g2]], 1e-6).unwrap();
        let d = |mu: f64, var: f64, x: f64| (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let x = 0.4;
        let expected = (0.5 * d(0.2, 0.01, x) + 0.5 * d(0.7, 0.04, x)).ln();
        assert_abs_diff_eq!(mix.pixel_loglik(0, &[x]).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn full_covariance_matches_closed_form() {
        let cov = vec![0.04, 0.01, 0.0, 0.01, 0.09, 0.02, 0.0, 0.02, 0.16];
        let g = GaussianComponent { weight: 1.0, mean: vec![0.1, 0.5, 0.9], covariance: cov.clone() };
        let app = AppearanceModel::new(3, vec![vec![g]], 1e-6).unwrap();
        let x = [0.3, 0.4, 0.7];
        let m = DMatrix::from_row_slice(3, 3, &cov);
        let d = DVector::from_vec(vec![0.2, -0.1, -0.2]);
        let q = (d.transpose() * m.clone().try_inverse().unwrap() * &d)[(0, 0)];
        let expected = -0.5 * (3.0 * LN_2PI + m.determinant().ln() + q);
        assert_abs_diff_eq!(app.pixel_loglik(0, &x).unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn field_matches_pixel_loglik() {
        let img = grey(&[0.1, 0.5, 0.9]);
        let app = AppearanceModel::from_gaussians(&[vec![0.1], vec![0.9]], 0.05).unwrap();
        let f = app.likelihood_field(&img).unwrap();
        for t in 0..3 {
            for k in 0..2 {
                assert_eq!(f.at(t)[k], app.pixel_loglik(k, img.pixel(t)).unwrap());
            }
        }
        let y = Labelling::new(img.domain(), vec![0, 1, 1]).unwrap();
        let direct: f64 = (0..3).map(|t| f.at(t)[y.as_slice()[t] as usize]).sum();
        assert_eq!(f.log_likelihood(&y), direct);

        let shared = AppearanceModel::from_gaussians(&[vec![0.4], vec![0.4]], 0.05).unwrap();
        let g = shared.likelihood_field(&img).unwrap();
        for t in 0..3 {
            assert_eq!(g.at(t)[0], g.at(t)[1]);
        }
        let rgb = Image::filled(img.domain(), &[0.1, 0.2, 0.3]);
        assert!(matches!(app.likelihood_field(&rgb), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn update_edge_cases() {
        let img = grey(&[0.1, 0.2, 0.3, 0.6]);
        let app = AppearanceModel::from_gaussians(&[vec![0.5], vec![0.5]], 0.1).unwrap();
        let y = Labelling::filled(img.domain(), 0);
        let same = app.update(&img, std::slice::from_ref(&y), 0.0).unwrap();
        assert_eq!(same.model, app);

        let up = app.update(&img, &[y], 1.0).unwrap();
        assert_abs_diff_eq!(up.model.mixtures[0][0].mean[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(up.model.mixtures[0][0].covariance[0], 0.035, epsilon = 1e-12);
        assert_eq!(up.empty_labels, vec![1]);
        assert_eq!(up.model.mixtures[1], app.mixtures[1]);
    }

    #[test]
    fn constant_image_initialisation() {
        let d = GridDomain::new(4, 4).unwrap();
        let img = Image::filled(d, &[0.25, 0.5, 0.75]);
        let app = init_appearance(&img, 3, 4, 7).unwrap();
        assert_eq!(app.mixtures.len(), 3);
        for mix in &app.mixtures {
            assert_eq!(mix.len(), 4);
            for g in mix {
                assert_eq!(g.mean, vec![0.25, 0.5, 0.75]);
                assert_abs_diff_eq!(g.weight, 0.25);
                for a in 0..3 {
                    for b in 0..3 {
                        let expected = if a == b { app.min_variance } else { 0.0 };
                        assert_abs_diff_eq!(g.covariance[a * 3 + b], expected, epsilon = 1e-15);
                    }
                }
            }
        }
        let varied = Image::new(d, 1, (0..16).map(|i| i as f64 / 15.0).collect()).unwrap();
        assert_eq!(init_appearance(&varied, 2, 2, 11).unwrap(), init_appearance(&varied, 2, 2, 11).unwrap());
    }

    #[test]
    fn repeated_em_is_monotone() {
        let values: Vec<f64> = (0..200)
            .map(|i| if i % 3 == 0 { 0.2 + 0.001 * (i % 17) as f64 } else { 0.7 + 0.002 * (i % 13) as f64 })
            .collect();
        let img = grey(&values);
        let y = Labelling::filled(img.domain(), 0);
        let mut app = init_appearance(&img, 1, 2, 3).unwrap();
        let pixels: Vec<&[f64]> = img.pixels().collect();
        let mut last = app.data_loglik(0, &pixels).unwrap();
        for _ in 0..10 {
            app = app.update(&img, std::slice::from_ref(&y), 1.0).unwrap().model;
            let ll = app.data_loglik(0, &pixels).unwrap();
            assert!(ll >= last - 1e-9 * last.abs(), "{ll} < {last}");
            let w: f64 = app.mixtures[0].iter().map(|g| g.weight).sum();
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-9);
            assert!(app.mixtures[0].iter().all(|g| min_eigenvalue(g) >= app.min_variance * (1.0 - 1e-9)));
            last = ll;
        }
    }
}
