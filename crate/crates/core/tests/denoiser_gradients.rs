// SPDX-License-Identifier: Apache-2.0

//! Analytic gradients against central finite differences.

use layoutgen::denoiser::training::{batch_loss, pixel_loss, Example};
use layoutgen::denoiser::{loss, DenoiserParameters, NetworkConfig};
use layoutgen::seed::derived_stream;
use layoutgen::{NoiseSchedule, TopologyMatrix};
use rand::Rng;

const EPS: f64 = 1e-4;

fn small_config() -> NetworkConfig {
    NetworkConfig {
        window: 8,
        channels: 4,
        dilations: vec![1, 2, 4],
        embed: 6,
        time_features: 4,
        steps: 20,
        classes: vec!["A".into(), "B".into()],
    }
}

fn random_topology(rng: &mut impl Rng, n: usize) -> TopologyMatrix {
    let cells = (0..n * n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
    TopologyMatrix::from_cells(n, n, cells).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn pixel_loss_derivative_matches_central_difference() {
    let s = NoiseSchedule::linear(10, 0.05, 0.4).unwrap();
    for k in 1..=10 {
        for x0 in 0..2 {
            for xk in 0..2 {
                for logit in [-3.0, -0.4, 0.0, 0.7, 2.5] {
                    let (_, d) = pixel_loss(x0, xk, k, logit, &s, 0.3);
                    let up = pixel_loss(x0, xk, k, logit + EPS, &s, 0.3).0;
                    let down = pixel_loss(x0, xk, k, logit - EPS, &s, 0.3).0;
                    let fd = (up - down) / (2.0 * EPS);
                    assert!((d - fd).abs() < 1e-8, "k={k} x0={x0} xk={xk} logit={logit}: {d} vs {fd}");
                }
            }
        }
    }
}

#[test]
fn uniform_prediction_matches_closed_form_kl() {
    // K = 2, beta 0.1 -> 0.3; pixel x0 = 0, xk = 1, k = 2
    let s = NoiseSchedule::linear(2, 0.1, 0.3).unwrap();
    let (b1, b2) = (0.1_f64, 0.3_f64);
    // q(x1 | x2 = 1, x0 = 0) proportional to q(x2 = 1 | x1) q(x1 | x0 = 0)
    let w0 = b2 * (1.0 - b1);
    let w1 = (1.0 - b2) * b1;
    let q1 = w1 / (w0 + w1);
    // same with x0 = 1
    let v0 = b2 * b1;
    let v1 = (1.0 - b2) * (1.0 - b1);
    let r1 = v1 / (v0 + v1);
    let m1 = 0.5 * q1 + 0.5 * r1;
    let kl = (1.0 - q1) * ((1.0 - q1) / (1.0 - m1)).ln() + q1 * (q1 / m1).ln();
    let lambda = 1e-3;
    let expected = kl + lambda * 2f64.ln();
    let (got, _) = pixel_loss(0, 1, 2, 0.0, &s, lambda);
    assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
}

#[test]
fn network_gradients_match_finite_differences() {
    let schedule = NoiseSchedule::linear(20, 0.02, 0.45).unwrap();
    let mut rng = derived_stream(11, "grad-probe", 0);
    let mut worst: f64 = 0.0;
    for probe in 0..5 {
        let params = DenoiserParameters::init(small_config(), 100 + probe, false);
        let clean = random_topology(&mut rng, 8);
        let k = rng.random_range(1..=20);
        let style = if rng.random::<bool>() { "A" } else { "B" };
        let seed = rng.random::<u64>();
        let lambda = 0.1;
        let (_, grad) = loss(&clean, style, k, &params, &schedule, lambda, seed).unwrap();
        for _ in 0..12 {
            let i = rng.random_range(0..params.len());
            let mut p = params.clone();
            p.data_mut()[i] += EPS;
            let up = loss(&clean, style, k, &p, &schedule, lambda, seed).unwrap().0;
            p.data_mut()[i] -= 2.0 * EPS;
            let down = loss(&clean, style, k, &p, &schedule, lambda, seed).unwrap().0;
            let fd = (up - down) / (2.0 * EPS);
            let e = rel_err(grad[i], fd);
            worst = worst.max(e);
            assert!(e <= 1e-4, "probe {probe} param {i}: analytic {} fd {fd} rel {e}", grad[i]);
        }
    }
    println!("worst relative error {worst:.3e}");
}

#[test]
fn batched_gradient_is_mean_of_items() {
    let schedule = NoiseSchedule::linear(20, 0.02, 0.45).unwrap();
    let params = DenoiserParameters::init(small_config(), 5, false);
    let mut rng = derived_stream(2, "batch-probe", 0);
    let clean: Vec<_> = (0..3).map(|_| random_topology(&mut rng, 8)).collect();
    let exs: Vec<_> = clean
        .iter()
        .enumerate()
        .map(|(i, t)| Example::corrupt(t, i % 2, 3 + 5 * i, &schedule, i as u64).unwrap())
        .collect();
    let (l, g) = batch_loss::<rand_chacha::ChaCha8Rng>(&params, &exs, &schedule, 0.01, None);
    let mut lsum = 0.0;
    let mut gsum = vec![0.0; g.len()];
    for ex in exs {
        let (li, gi) = batch_loss::<rand_chacha::ChaCha8Rng>(&params, &[ex], &schedule, 0.01, None);
        lsum += li / 3.0;
        for (a, b) in gsum.iter_mut().zip(gi) {
            *a += b / 3.0;
        }
    }
    assert!((l - lsum).abs() < 1e-12);
    for (a, b) in g.iter().zip(&gsum) {
        assert!((a - b).abs() < 1e-12);
    }
}
