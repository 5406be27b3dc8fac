//! Synthetic dataset generators: a layered mixture-of-affine-maps sampler
//! and a warped 3-D clustering benchmark, both pure functions of
//! (spec, n, seed).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::noise::{sample_hqn, HqnParams};
use crate::rng::{derive_seed, rng_from};

/// One layer of the layered generator: branch (T, pi) pairs plus the
/// hybrid noise added after the affine map.
#[derive(Debug, Clone)]
pub struct LayerBranches {
    /// (transmission coefficient, probability) per branch.
    pub branches: Vec<(f64, f64)>,
    pub noise: HqnParams,
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    /// Layers ordered from the observed side inward; depth = layers.len().
    pub layers: Vec<LayerBranches>,
    /// Output dimension; the scalar chain is broadcast with independent
    /// noise per coordinate.
    pub dim: usize,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Domain("depth must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Domain("dimension must be >= 1".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.branches.is_empty() {
                return Err(Error::Domain(format!("layer {l} has no branches")));
            }
            let total: f64 = layer.branches.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "layer {l} branch probabilities sum to {total}"
                )));
            }
            if layer.branches.iter().any(|(_, p)| *p < 0.0) {
                return Err(Error::Domain(format!("layer {l} has negative probability")));
            }
            layer.noise.validate()?;
        }
        Ok(())
    }

    /// Number of distinct root-to-output paths.
    pub fn path_count(&self) -> usize {
        self.layers.iter().map(|l| l.branches.len()).product()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// One row per sample.
    pub data: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    pub descriptor: String,
    pub seed: u64,
}

/// Sample the layered model: the innermost variable is standard normal,
/// then each layer applies a randomly chosen affine branch plus hybrid
/// noise. Branch choices are independent across layers; the flattened
/// path index is recorded as the label.
pub fn dgmm_sample(spec: &LayerSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from(seed);
    let depth = spec.layers.len();
    // Pre-draw one noise stream per layer and coordinate for determinism
    // that is independent of branch choices.
    let mut noise: Vec<Vec<DVector<f64>>> = Vec::with_capacity(depth);
    for (l, layer) in spec.layers.iter().enumerate() {
        let per_coord = (0..spec.dim)
            .map(|c| {
                sample_hqn(
                    &layer.noise,
                    n,
                    derive_seed(seed, (1 + l as u64) * 1000 + c as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        noise.push(per_coord);
    }
    let mut data = DMatrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = DVector::from_fn(spec.dim, |_, _| {
            let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
            g
        });
        let mut path = 0usize;
        // Innermost layer applies last in the spec order, so walk inward
        // first: layers[depth-1] transforms the root draw, layers[0]
        // produces the observation.
        for l in (0..depth).rev() {
            let layer = &spec.layers[l];
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut s = layer.branches.len() - 1;
            for (b, (_, p)) in layer.branches.iter().enumerate() {
                acc += p;
                if u < acc {
                    s = b;
                    break;
                }
            }
            let t = layer.branches[s].0;
            for c in 0..spec.dim {
                x[c] = t * x[c] + noise[l][c][i];
            }
            path = path * layer.branches.len() + s;
        }
        data.row_mut(i).copy_from(&x.transpose());
        labels.push(path);
    }
    Ok(Dataset {
        data,
        labels: Some(labels),
        descriptor: format!(
            "dgmm_sample depth={} paths={} dim={} n={n} seed={seed}",
            depth,
            spec.path_count(),
            spec.dim
        ),
        seed,
    })
}

/// Sample points uniformly on a sphere of radius 5, keeping a minimum
/// pairwise separation so the benchmark stays clusterable.
fn cluster_centers(k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<DVector<f64>> {
    const RADIUS: f64 = 5.0;
    let mut min_sep = if k <= 1 { 0.0 } else { RADIUS };
    loop {
        'attempt: for _ in 0..200 {
            let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
            for _ in 0..k {
                let v = DVector::from_fn(3, |_, _| {
                    let g: f64 = rand_distr::StandardNormal.sample(rng);
                    g
                });
                let c = &v * (RADIUS / v.norm());
                if centers.iter().any(|other| (&c - other).norm() < min_sep) {
                    continue 'attempt;
                }
                centers.push(c);
            }
            return centers;
        }
        min_sep *= 0.5;
    }
}

/// 3-D clustering benchmark: Gaussian clusters centered on a sphere,
/// pushed through the smooth warp v -> v + warp*sin(v) per coordinate and
/// perturbed by hybrid noise per coordinate. Labels are retained.
pub fn gen_cluster3d(
    k: usize,
    n: usize,
    warp: f64,
    params: &HqnParams,
    seed: u64,
) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::Domain("cluster count must be >= 1".into()));
    }
    params.validate()?;
    const CLUSTER_STD: f64 = 0.4;
    let mut rng = rng_from(seed);
    let centers = cluster_centers(k, &mut rng);
    let noise: Vec<DVector<f64>> = (0..3)
        .map(|c| sample_hqn(params, n, derive_seed(seed, 7000 + c as u64)))
        .collect::<Result<_>>()?;
    let mut data = DMatrix::zeros(n, 3);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = rng.gen_range(0..k);
        labels.push(label);
        for c in 0..3 {
            let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
            let v = centers[label][c] + CLUSTER_STD * g;
            data[(i, c)] = v + warp * v.sin() + noise[c][i];
        }
    }
    Ok(Dataset {
        data,
        labels: Some(labels),
        descriptor: format!("gen_cluster3d k={k} n={n} warp={warp} seed={seed}"),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{fit_em, EmOptions};

    fn quiet_noise() -> HqnParams {
        HqnParams {
            lambda: 1e-12,
            r_max: 0,
            mu_cl: 0.0,
            sigma_cl: 1e-9,
        }
    }

    fn noise(lambda: f64, sigma: f64) -> HqnParams {
        HqnParams {
            lambda,
            r_max: 4,
            mu_cl: 0.0,
            sigma_cl: sigma,
        }
    }

    #[test]
    fn single_branch_noiseless_is_standard_normal() {
        let spec = LayerSpec {
            layers: vec![LayerBranches {
                branches: vec![(1.0, 1.0)],
                noise: quiet_noise(),
            }],
            dim: 1,
        };
        let ds = dgmm_sample(&spec, 50_000, 1).unwrap();
        let mean = ds.data.column(0).mean();
        let var = ds
            .data
            .column(0)
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / 50_000.0;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.03);
    }

    #[test]
    fn single_layer_branch_frequencies() {
        let spec = LayerSpec {
            layers: vec![LayerBranches {
                branches: vec![(0.5, 0.2), (1.0, 0.3), (2.0, 0.5)],
                noise: noise(0.5, 0.3),
            }],
            dim: 1,
        };
        let n = 30_000;
        let ds = dgmm_sample(&spec, n, 2).unwrap();
        let labels = ds.labels.unwrap();
        for (b, p) in [(0usize, 0.2f64), (1, 0.3), (2, 0.5)] {
            let count = labels.iter().filter(|&&l| l == b).count() as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (count - n as f64 * p).abs() < 3.0 * sigma,
                "branch {b}: {count}"
            );
        }
    }

    #[test]
    fn two_layer_path_means_match_affine_composition() {
        let nz = noise(0.8, 0.2);
        let spec = LayerSpec {
            layers: vec![
                LayerBranches {
                    branches: vec![(0.5, 0.5), (2.0, 0.5)],
                    noise: nz,
                },
                LayerBranches {
                    branches: vec![(1.0, 1.0)],
                    noise: nz,
                },
            ],
            dim: 1,
        };
        let n = 100_000;
        let ds = dgmm_sample(&spec, n, 3).unwrap();
        let labels = ds.labels.unwrap();
        let ez = nz.truncated_poisson_mean() + nz.mu_cl;
        // Path mean: T1 * (T2 * 0 + E z2) + E z1
        for (path, t1) in [(0usize, 0.5f64), (1, 2.0)] {
            let members: Vec<f64> = (0..n)
                .filter(|&i| labels[i] == path)
                .map(|i| ds.data[(i, 0)])
                .collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            let expected = t1 * ez + ez;
            assert!(
                (mean - expected).abs() < 0.05,
                "path {path}: {mean} vs {expected}"
            );
        }
    }

    #[test]
    fn noiseless_chain_is_deterministic_affine() {
        // With quiet noise the output is the product of branch coefficients
        // times the root draw.
        let spec = LayerSpec {
            layers: vec![
                LayerBranches {
                    branches: vec![(0.5, 1.0)],
                    noise: quiet_noise(),
                },
                LayerBranches {
                    branches: vec![(3.0, 1.0)],
                    noise: quiet_noise(),
                },
            ],
            dim: 1,
        };
        let ds = dgmm_sample(&spec, 10_000, 4).unwrap();
        let mean = ds.data.column(0).mean();
        let var = ds
            .data
            .column(0)
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / 10_000.0;
        assert!((var - 2.25).abs() < 0.1, "var {var}");
    }

    #[test]
    fn generators_are_pure() {
        let spec = LayerSpec {
            layers: vec![LayerBranches {
                branches: vec![(1.0, 0.5), (0.5, 0.5)],
                noise: noise(0.5, 0.3),
            }],
            dim: 3,
        };
        let a = dgmm_sample(&spec, 500, 9).unwrap();
        let b = dgmm_sample(&spec, 500, 9).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.labels, b.labels);

        let p = noise(0.3, 0.2);
        let a = gen_cluster3d(3, 500, 0.5, &p, 9).unwrap();
        let b = gen_cluster3d(3, 500, 0.5, &p, 9).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn cluster3d_unwarped_recovers_centers() {
        let p = quiet_noise();
        let ds = gen_cluster3d(3, 3000, 0.0, &p, 5).unwrap();
        let (model, _) = fit_em(&ds.data, 3, &EmOptions::default()).unwrap();
        let labels = ds.labels.unwrap();
        // True per-label means
        for c in &model.components {
            let mut best = f64::INFINITY;
            for lab in 0..3 {
                let members: Vec<usize> = (0..3000).filter(|&i| labels[i] == lab).collect();
                let mut mean = DVector::zeros(3);
                for &i in &members {
                    mean += ds.data.row(i).transpose();
                }
                mean /= members.len() as f64;
                best = best.min((&c.mean - mean).norm());
            }
            assert!(best < 0.2, "fitted center off by {best}");
        }
    }

    #[test]
    fn cluster3d_single_cluster_labels() {
        let ds = gen_cluster3d(1, 100, 0.5, &noise(0.3, 0.2), 6).unwrap();
        assert!(ds.labels.unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn cluster3d_default_separation() {
        // Label-conditional means stay >= 3 per-coordinate sigmas apart for
        // the default radius/warp.
        let p = noise(0.3, 0.2);
        for seed in 0..10u64 {
            let ds = gen_cluster3d(3, 3000, 0.5, &p, seed).unwrap();
            let labels = ds.labels.as_ref().unwrap();
            let mut means = Vec::new();
            let mut max_sigma: f64 = 0.0;
            for lab in 0..3 {
                let members: Vec<usize> = (0..3000).filter(|&i| labels[i] == lab).collect();
                let mut mean = DVector::zeros(3);
                for &i in &members {
                    mean += ds.data.row(i).transpose();
                }
                mean /= members.len() as f64;
                let mut var = 0.0;
                for &i in &members {
                    var += (ds.data.row(i).transpose() - &mean).norm_squared();
                }
                var /= 3.0 * members.len() as f64;
                max_sigma = max_sigma.max(var.sqrt());
                means.push(mean);
            }
            for a in 0..3 {
                for b in (a + 1)..3 {
                    let d = (&means[a] - &means[b]).norm();
                    assert!(
                        d >= 3.0 * max_sigma,
                        "seed {seed}: separation {d} < 3 sigma {max_sigma}"
                    );
                }
            }
        }
    }
}
