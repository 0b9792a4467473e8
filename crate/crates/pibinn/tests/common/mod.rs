//! Shared oracle implementations for integration tests. Everything here is
//! written independently of the library internals: straightforward,
//! brute-force reference computations.

#![allow(dead_code)]

use pibinn::linalg::{
    spectral_norm, BlockDiagOperator, DenseMatrix, Operator, SPECTRAL_MAX_ITER_DEFAULT,
};
use pibinn::rng::CounterRng;
use pibinn::unroll::{backward, forward, loss, Activation, LossKind, QuantMode, UnrolledNet};

/// Random dense matrix with i.i.d. standard normal entries.
pub fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let rng = CounterRng::new(seed, 7777);
    let entries = (0..rows * cols).map(|i| rng.normal(i as u64)).collect();
    DenseMatrix::from_entries(rows, cols, entries).unwrap()
}

/// Spectral norm via a cyclic Jacobi eigenvalue sweep on the Gram matrix.
/// Independent of the library's power iteration.
pub fn jacobi_spectral_norm(a: &DenseMatrix) -> f64 {
    // work on the smaller Gram matrix
    let (rows, cols) = (a.rows(), a.cols());
    let k = rows.min(cols);
    let mut g = vec![vec![0.0f64; k]; k];
    for i in 0..k {
        for j in 0..k {
            let mut acc = 0.0;
            if cols <= rows {
                for r in 0..rows {
                    acc += a.get(r, i) * a.get(r, j);
                }
            } else {
                for c in 0..cols {
                    acc += a.get(i, c) * a.get(j, c);
                }
            }
            g[i][j] = acc;
        }
    }
    // cyclic Jacobi rotations until off-diagonal mass is negligible
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..k {
            for q in (p + 1)..k {
                off += g[p][q] * g[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..k {
            for q in (p + 1)..k {
                if g[p][q].abs() < 1e-300 {
                    continue;
                }
                let tau = (g[q][q] - g[p][p]) / (2.0 * g[p][q]);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..k {
                    let (gip, giq) = (g[i][p], g[i][q]);
                    g[i][p] = c * gip - s * giq;
                    g[i][q] = s * gip + c * giq;
                }
                for i in 0..k {
                    let (gpi, gqi) = (g[p][i], g[q][i]);
                    g[p][i] = c * gpi - s * gqi;
                    g[q][i] = s * gpi + c * gqi;
                }
            }
        }
    }
    let mut max_eig = 0.0f64;
    for (i, row) in g.iter().enumerate() {
        max_eig = max_eig.max(row[i]);
    }
    max_eig.max(0.0).sqrt()
}

/// 1-D grid-search oracle for the prox of t·min(|z−λ₀|, |z+λ₀|) at θ:
/// argmin over z ∈ [−5, 5] (step 1e-5) of ½(z−θ)² + t·min(|z−λ₀|,|z+λ₀|).
pub fn prox_grid_oracle(theta: f64, t: f64, lambda0: f64) -> f64 {
    let objective = |z: f64| {
        0.5 * (z - theta) * (z - theta) + t * (z - lambda0).abs().min((z + lambda0).abs())
    };
    let mut best_z = -5.0;
    let mut best = objective(best_z);
    let steps = 1_000_000usize;
    for i in 0..=steps {
        let z = -5.0 + i as f64 * 1e-5;
        let v = objective(z);
        if v < best {
            best = v;
            best_z = z;
        }
    }
    best_z
}

/// prox_step vs the 1-D grid oracle on random (θ, t, λ₀) triples.
pub fn check_prox_against_grid(triples: usize) {
    let rng = CounterRng::new(31, 0);
    for i in 0..triples as u64 {
        let theta = -3.0 + 6.0 * rng.uniform(3 * i);
        let t = 1.5 * rng.uniform(3 * i + 1);
        let lambda0 = 0.05 + 0.95 * rng.uniform(3 * i + 2);
        let got = pibinn::quant::prox_step(theta, t, lambda0);
        let want = prox_grid_oracle(theta, t, lambda0);
        assert!(
            (got - want).abs() <= 1e-5,
            "triple ({theta}, {t}, {lambda0}): prox {got} vs grid {want}"
        );
    }
}

/// Power-iteration spectral norm vs the Jacobi eigen oracle.
pub fn check_spectral_against_jacobi(count: usize) {
    for i in 0..count as u64 {
        let rows = 2 + (i % 7) as usize;
        let cols = 2 + (i % 5) as usize;
        let a = random_dense(rows, cols, 900 + i);
        let got = spectral_norm(&a, 1e-12, SPECTRAL_MAX_ITER_DEFAULT).unwrap();
        let want = jacobi_spectral_norm(&a);
        assert!(
            (got - want).abs() <= 1e-6 * want.max(1.0),
            "matrix {i} ({rows}x{cols}): power {got} vs jacobi {want}"
        );
    }
}

/// Block-diagonal operator products vs the materialized dense matrix.
pub fn check_block_against_materialized(count: usize) {
    for i in 0..count as u64 {
        let v = 2 + (i % 3) as usize;
        let p = 3 + (i % 4) as usize;
        let u = 2 + (i % 5) as usize;
        let op = BlockDiagOperator::new(random_dense(v, p, 1500 + i), u);
        let dense = op.materialize();

        let x = random_dense(u * p, 1, 1600 + i).column(0);
        let got = op.matvec(&x).unwrap();
        let want = dense.matvec(&x).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-12, "matvec mismatch");
        }

        let r = random_dense(u * v, 1, 1700 + i).column(0);
        let got = op.transpose_matvec(&r).unwrap();
        let want = dense.transpose_matvec(&r).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-12, "transpose_matvec mismatch");
        }

        let b = random_dense(u * p, 3, 1800 + i);
        let got = op.matmul(&b).unwrap();
        let want = dense.matmul(&b).unwrap();
        for (g, w) in got.entries().iter().zip(want.entries().iter()) {
            assert!((g - w).abs() <= 1e-12, "matmul mismatch");
        }

        let c = random_dense(u * v, 3, 1900 + i);
        let got = op.matmul_tn(&c).unwrap();
        let want = dense.matmul_tn(&c).unwrap();
        for (g, w) in got.entries().iter().zip(want.entries().iter()) {
            assert!((g - w).abs() <= 1e-12, "matmul_tn mismatch");
        }
    }
}

// ----- gradient checking against central finite differences -----

const FD_H: f64 = 1e-6;
const REL_TOL: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-4;

struct GradCase {
    net: UnrolledNet,
    a: Operator,
    y: DenseMatrix,
    x_opt: DenseMatrix,
}

fn random_grad_case(seed: u64) -> GradCase {
    let rng = CounterRng::new(seed, 41);
    let k = 1 + (rng.word(0) % 3) as usize;
    let m = 2 + (rng.word(1) % 9) as usize; // ≤ 10
    let n = m + (rng.word(2) % (20 - m as u64 + 1)) as usize; // ≤ 20
    let activation = if rng.word(3) % 2 == 0 {
        Activation::SoftThreshold
    } else {
        Activation::HardThreshold
    };
    let delta = if rng.word(4) % 2 == 0 { 1.0 } else { 0.9 };
    let batch = 1 + (rng.word(5) % 3) as usize;

    let mut net = UnrolledNet::zeros(k, m, n, activation);
    net.delta = delta;
    if rng.word(6) % 2 == 0 {
        net.quant_mode = QuantMode::OneBitGlobal;
        net.scale = 0.5 + rng.uniform(7);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            for (wi, v) in layer.w.entries_mut().iter_mut().enumerate() {
                *v = if rng.word(1000 + (li * 512 + wi) as u64) % 2 == 0 {
                    0.05
                } else {
                    -0.05
                };
            }
            layer.theta = 0.02 + 0.05 * rng.uniform(2000 + li as u64);
        }
    } else {
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let src = random_dense(m, n, seed * 100 + li as u64);
            layer.w = src.scaled(0.3 / (m as f64).sqrt());
            layer.theta = 0.02 + 0.05 * rng.uniform(2000 + li as u64);
        }
    }
    let a = Operator::Dense(random_dense(m, n, seed * 100 + 50).scaled(1.0 / (m as f64).sqrt()));
    let y = random_dense(m, batch, seed * 100 + 60);
    let x_opt = random_dense(n, batch, seed * 100 + 70).scaled(0.5);
    GradCase { net, a, y, x_opt }
}

/// True when some pre-activation entry sits within the margin of an
/// activation kink, making finite differences unreliable.
fn near_kink(case: &GradCase) -> bool {
    let trace = forward(&case.net, &case.a, &case.y, None).unwrap();
    trace
        .pre_activations
        .iter()
        .zip(case.net.layers.iter())
        .any(|(z, layer)| {
            z.entries()
                .iter()
                .any(|&v| (v.abs() - layer.theta).abs() < KINK_MARGIN)
        })
}

fn grad_case_loss(case: &GradCase, net: &UnrolledNet) -> f64 {
    let trace = forward(net, &case.a, &case.y, None).unwrap();
    loss(trace.final_state(), &case.x_opt, LossKind::SquaredError)
}

fn assert_close(analytic: f64, fd: f64, what: &str) {
    let denom = analytic.abs().max(fd.abs()).max(1.0);
    assert!(
        (analytic - fd).abs() <= REL_TOL * denom,
        "{what}: analytic {analytic} vs fd {fd}"
    );
}

/// Analytic gradients vs central finite differences on `nets` random
/// networks (K ≤ 3, n ≤ 20, m ≤ 10, ST and HT, δ ∈ {1, 0.9}); kink-adjacent
/// cases are resampled.
pub fn check_gradients_on_random_nets(nets: usize) {
    let mut checked = 0usize;
    let mut seed = 0u64;
    while checked < nets {
        seed += 1;
        let case = random_grad_case(seed);
        if near_kink(&case) {
            continue;
        }
        let trace = forward(&case.net, &case.a, &case.y, None).unwrap();
        let grads = backward(
            &case.net,
            &case.a,
            &case.y,
            &case.x_opt,
            &trace,
            LossKind::SquaredError,
        )
        .unwrap();

        let k = case.net.num_layers();
        for li in 0..k {
            let entries = case.net.layers[li].w.entries().len();
            for wi in 0..entries {
                let mut plus = case.net.clone();
                plus.layers[li].w.entries_mut()[wi] += FD_H;
                let mut minus = case.net.clone();
                minus.layers[li].w.entries_mut()[wi] -= FD_H;
                let fd =
                    (grad_case_loss(&case, &plus) - grad_case_loss(&case, &minus)) / (2.0 * FD_H);
                assert_close(
                    grads.d_w[li].entries()[wi],
                    fd,
                    &format!("net {seed} layer {li} weight {wi}"),
                );
            }
            let mut plus = case.net.clone();
            plus.layers[li].theta += FD_H;
            let mut minus = case.net.clone();
            minus.layers[li].theta -= FD_H;
            let fd = (grad_case_loss(&case, &plus) - grad_case_loss(&case, &minus)) / (2.0 * FD_H);
            assert_close(grads.d_theta[li], fd, &format!("net {seed} layer {li} theta"));
        }
        if case.net.quant_mode == QuantMode::OneBitGlobal {
            let mut plus = case.net.clone();
            plus.scale += FD_H;
            let mut minus = case.net.clone();
            minus.scale -= FD_H;
            let fd = (grad_case_loss(&case, &plus) - grad_case_loss(&case, &minus)) / (2.0 * FD_H);
            assert_close(grads.d_scale, fd, &format!("net {seed} scale"));
        }
        checked += 1;
    }
}
