//! Independent finite-difference validation of the parameter gradients used
//! by every solver: the analytic batch gradient must match central
//! differences of the batch utility to high relative accuracy.

use sro_core::generator::{random_affine, random_mlp, GeneratorDims, GeneratorSpec, LatentBatch};
use sro_core::loss::{grad_scenario, utility};

fn batch_utility(spec: &GeneratorSpec<f64>, batch: &LatentBatch<f64>, x: &[f64], w: &[f64], lambda: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..batch.len() {
        let y = spec.forward(batch.row(i), x).unwrap();
        let pi: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        total += utility(pi, lambda);
    }
    total / batch.len() as f64
}

/// Analytic gradient assembled from public pieces: chain the scenario
/// gradient of the utility through the generator VJP, averaged over the batch.
fn analytic_grad(spec: &GeneratorSpec<f64>, batch: &LatentBatch<f64>, x: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    let mut acc = vec![0.0; spec.param_count()];
    for i in 0..batch.len() {
        let y = spec.forward(batch.row(i), x).unwrap();
        let upstream = grad_scenario(w, &y, lambda).unwrap();
        let contrib = spec.vjp_theta(batch.row(i), x, &upstream).unwrap();
        for (a, c) in acc.iter_mut().zip(&contrib) {
            *a += c;
        }
    }
    let inv_n = 1.0 / batch.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv_n);
    acc
}

fn fd_grad(spec: &GeneratorSpec<f64>, batch: &LatentBatch<f64>, x: &[f64], w: &[f64], lambda: f64, h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; spec.param_count()];
    let mut work = spec.clone();
    for j in 0..spec.param_count() {
        work.theta[j] = spec.theta[j] + h;
        let up = batch_utility(&work, batch, x, w, lambda);
        work.theta[j] = spec.theta[j] - h;
        let down = batch_utility(&work, batch, x, w, lambda);
        work.theta[j] = spec.theta[j];
        grad[j] = (up - down) / (2.0 * h);
    }
    grad
}

fn relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-10);
    analytic
        .iter()
        .zip(fd)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

fn random_weights(seed: u64, d: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..d).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|e| e / total).collect()
}

fn random_context(seed: u64, f: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..f).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

#[test]
fn affine_parameter_gradient_matches_central_differences() {
    let dims = GeneratorDims::new(3, 2, 2).unwrap();
    let lambda = 10.0;
    let h = 1e-6;
    for instance in 0..10u64 {
        let spec = random_affine::<f64>(100 + instance, dims, 0.1);
        let batch = LatentBatch::<f64>::sample(200 + instance, 25, dims.latent).unwrap();
        let x = random_context(300 + instance, dims.context);
        let w = random_weights(400 + instance, dims.output);
        let analytic = analytic_grad(&spec, &batch, &x, &w, lambda);
        let fd = fd_grad(&spec, &batch, &x, &w, lambda, h);
        let err = relative_error(&analytic, &fd);
        assert!(err <= 1e-5, "instance {instance}: relative error {err}");
    }
}

#[test]
fn mlp_parameter_gradient_matches_central_differences() {
    let dims = GeneratorDims::new(3, 2, 2).unwrap();
    let lambda = 10.0;
    let h = 1e-6;
    for instance in 0..10u64 {
        let spec = random_mlp::<f64>(500 + instance, dims, 6, 0.3);
        let batch = LatentBatch::<f64>::sample(600 + instance, 25, dims.latent).unwrap();
        let x = random_context(700 + instance, dims.context);
        let w = random_weights(800 + instance, dims.output);
        let analytic = analytic_grad(&spec, &batch, &x, &w, lambda);
        let fd = fd_grad(&spec, &batch, &x, &w, lambda, h);
        let err = relative_error(&analytic, &fd);
        assert!(err <= 1e-5, "instance {instance}: relative error {err}");
    }
}

#[test]
fn gradient_scale_folding_matches_plain_vjp() {
    // vjp_theta_accumulate with a scale must agree with scaling the upstream.
    let dims = GeneratorDims::new(2, 2, 3).unwrap();
    let spec = random_mlp::<f64>(9, dims, 4, 0.2);
    let z = [0.3, -0.8];
    let x = [1.1, 0.4];
    let upstream = [0.5, -0.2, 0.1];
    let scale = -2.5;

    let mut ws = spec.workspace();
    let mut folded = vec![0.0; spec.param_count()];
    spec.vjp_theta_accumulate(&z, &x, &upstream, scale, &mut ws, &mut folded);

    let scaled_up: Vec<f64> = upstream.iter().map(|u| u * scale).collect();
    let plain = spec.vjp_theta(&z, &x, &scaled_up).unwrap();
    for (a, b) in folded.iter().zip(&plain) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}
