//! Fully connected baseline: K dense layers h_k = act(W_kᵀ h_{k−1}, θ_k)
//! with an m×n input layer and n×n layers after it. Used only as the
//! sample-efficiency and bit-count comparison point.

use crate::linalg::DenseMatrix;
use crate::quant::{cols_range, Optimizer};
use crate::unroll::{Activation, LayerParams, LossKind, UnrollError};

#[derive(Debug, Clone)]
pub struct FcnNet {
    pub layers: Vec<LayerParams>,
    pub activation: Activation,
}

impl FcnNet {
    /// K layers mapping measurements (length m) to signals (length n).
    pub fn zeros(k: usize, m: usize, n: usize, activation: Activation) -> Self {
        assert!(k >= 1);
        let mut layers = Vec::with_capacity(k);
        layers.push(LayerParams {
            w: DenseMatrix::zeros(m, n),
            theta: 0.0,
        });
        for _ in 1..k {
            layers.push(LayerParams {
                w: DenseMatrix::zeros(n, n),
                theta: 0.0,
            });
        }
        Self { layers, activation }
    }
}

#[inline]
fn act(kind: Activation, v: f64, theta: f64) -> f64 {
    match kind {
        Activation::SoftThreshold => {
            let m = v.abs() - theta;
            if m > 0.0 {
                v.signum() * m
            } else {
                0.0
            }
        }
        Activation::HardThreshold => {
            if v.abs() > theta {
                v
            } else {
                0.0
            }
        }
        Activation::Relu => {
            if v >= 0.0 {
                v
            } else {
                0.0
            }
        }
    }
}

#[inline]
fn act_dz(kind: Activation, v: f64, theta: f64) -> f64 {
    match kind {
        Activation::SoftThreshold | Activation::HardThreshold => {
            if v.abs() > theta {
                1.0
            } else {
                0.0
            }
        }
        Activation::Relu => {
            if v > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub struct FcnTrace {
    pub states: Vec<DenseMatrix>,          // h_0..h_K
    pub pre_activations: Vec<DenseMatrix>, // z_1..z_K
}

pub fn fcn_forward(net: &FcnNet, y: &DenseMatrix) -> Result<FcnTrace, UnrollError> {
    let mut h = y.clone();
    let mut states = vec![h.clone()];
    let mut pre = Vec::with_capacity(net.layers.len());
    for (k, layer) in net.layers.iter().enumerate() {
        let z = layer.w.matmul_tn(&h)?;
        let mut next = DenseMatrix::zeros(z.rows(), z.cols());
        for (nv, &zv) in next.entries_mut().iter_mut().zip(z.entries().iter()) {
            *nv = act(net.activation, zv, layer.theta);
        }
        if next.entries().iter().any(|v| !v.is_finite()) {
            return Err(UnrollError::NonFinite { layer: k + 1 });
        }
        pre.push(z);
        h = next;
        states.push(h.clone());
    }
    Ok(FcnTrace {
        states,
        pre_activations: pre,
    })
}

pub struct FcnGradients {
    pub d_w: Vec<DenseMatrix>,
    pub d_theta: Vec<f64>,
}

pub fn fcn_backward(
    net: &FcnNet,
    trace: &FcnTrace,
    x_opt: &DenseMatrix,
) -> Result<FcnGradients, UnrollError> {
    let k_layers = net.layers.len();
    let out = trace.states.last().expect("nonempty trace");
    if out.rows() != x_opt.rows() || out.cols() != x_opt.cols() {
        return Err(UnrollError::StaleTrace("output/truth shape mismatch"));
    }
    let batch = out.cols().max(1);
    let inv_n = 1.0 / batch as f64;
    let mut g = DenseMatrix::zeros(out.rows(), out.cols());
    for ((gv, &ov), &tv) in g
        .entries_mut()
        .iter_mut()
        .zip(out.entries().iter())
        .zip(x_opt.entries().iter())
    {
        *gv = 2.0 * inv_n * (ov - tv);
    }
    let mut d_w = Vec::with_capacity(k_layers);
    let mut d_theta = vec![0.0; k_layers];
    for k in (0..k_layers).rev() {
        let z = &trace.pre_activations[k];
        let theta = net.layers[k].theta;
        let mut dz = DenseMatrix::zeros(z.rows(), z.cols());
        for ((dv, &gv), &zv) in dz
            .entries_mut()
            .iter_mut()
            .zip(g.entries().iter())
            .zip(z.entries().iter())
        {
            *dv = gv * act_dz(net.activation, zv, theta);
        }
        if net.activation == Activation::SoftThreshold {
            let mut acc = 0.0;
            for (&dv, &zv) in dz.entries().iter().zip(z.entries().iter()) {
                acc -= dv * zv.signum();
            }
            d_theta[k] = acc;
        }
        // z = Wᵀ h_{k−1}: dW = h_{k−1}·dzᵀ, dh_{k−1} = W·dz
        d_w.push(trace.states[k].matmul_nt(&dz)?);
        if k > 0 {
            g = net.layers[k].w.matmul(&dz)?;
        }
    }
    d_w.reverse();
    Ok(FcnGradients { d_w, d_theta })
}

/// One minibatched training epoch; returns the mean batch loss.
pub fn fcn_epoch(
    net: &mut FcnNet,
    y: &DenseMatrix,
    x_opt: &DenseMatrix,
    batch_size: usize,
    lr: f64,
    opt: &mut Optimizer,
) -> Result<f64, UnrollError> {
    let n_samples = y.cols();
    let b = if batch_size == 0 {
        n_samples
    } else {
        batch_size.min(n_samples)
    };
    let mut total = 0.0;
    let mut start = 0;
    while start < n_samples {
        let end = (start + b).min(n_samples);
        let yb = cols_range(y, start, end);
        let xb = cols_range(x_opt, start, end);
        let trace = fcn_forward(net, &yb)?;
        total += crate::unroll::loss(trace.states.last().unwrap(), &xb, LossKind::SquaredError)
            * (end - start) as f64;
        let grads = fcn_backward(net, &trace, &xb)?;
        opt.begin_step();
        let k = net.layers.len();
        for (slot, (layer, dw)) in net.layers.iter_mut().zip(grads.d_w.iter()).enumerate() {
            opt.step(slot, layer.w.entries_mut(), dw.entries(), lr);
        }
        let mut thetas: Vec<f64> = net.layers.iter().map(|l| l.theta).collect();
        opt.step(k, &mut thetas, &grads.d_theta, lr);
        for (layer, t) in net.layers.iter_mut().zip(thetas.iter()) {
            layer.theta = t.max(0.0);
        }
        start = end;
    }
    Ok(total / n_samples.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let rng = CounterRng::new(seed, 0);
        let entries = (0..rows * cols).map(|i| rng.normal(i as u64)).collect();
        DenseMatrix::from_entries(rows, cols, entries).unwrap()
    }

    #[test]
    fn forward_matches_scripted_recomputation() {
        let mut net = FcnNet::zeros(2, 3, 4, Activation::SoftThreshold);
        net.layers[0].w = random_dense(3, 4, 1).scaled(0.3);
        net.layers[1].w = random_dense(4, 4, 2).scaled(0.3);
        net.layers[0].theta = 0.05;
        net.layers[1].theta = 0.02;
        let y = random_dense(3, 1, 3);
        let trace = fcn_forward(&net, &y).unwrap();
        let mut h = y.column(0);
        for layer in &net.layers {
            let z = layer.w.transpose_matvec(&h).unwrap();
            h = crate::unroll::soft_threshold(&z, layer.theta).unwrap();
        }
        for (i, &v) in h.iter().enumerate() {
            assert!((trace.states[2].get(i, 0) - v).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut net = FcnNet::zeros(2, 3, 4, Activation::SoftThreshold);
        net.layers[0].w = random_dense(3, 4, 10).scaled(0.4);
        net.layers[1].w = random_dense(4, 4, 11).scaled(0.4);
        net.layers[0].theta = 0.03;
        net.layers[1].theta = 0.05;
        let y = random_dense(3, 3, 12);
        let x_opt = random_dense(4, 3, 13);
        let trace = fcn_forward(&net, &y).unwrap();
        let g = fcn_backward(&net, &trace, &x_opt).unwrap();
        let h = 1e-6;
        let loss_of = |net: &FcnNet| {
            let t = fcn_forward(net, &y).unwrap();
            crate::unroll::loss(t.states.last().unwrap(), &x_opt, LossKind::SquaredError)
        };
        for k in 0..2 {
            for idx in 0..net.layers[k].w.entries().len() {
                let mut plus = net.clone();
                plus.layers[k].w.entries_mut()[idx] += h;
                let mut minus = net.clone();
                minus.layers[k].w.entries_mut()[idx] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = g.d_w[k].entries()[idx];
                // skip kink-adjacent coordinates
                if (fd - an).abs() > 1e-5 * fd.abs().max(an.abs()).max(1.0) {
                    let near_kink = trace.pre_activations[k]
                        .entries()
                        .iter()
                        .any(|&z| (z.abs() - net.layers[k].theta).abs() < 1e-4);
                    assert!(near_kink, "layer {k} idx {idx}: fd {fd} vs analytic {an}");
                }
            }
        }
    }

    #[test]
    fn epoch_reduces_loss_on_toy_problem() {
        let mut net = FcnNet::zeros(2, 4, 6, Activation::SoftThreshold);
        net.layers[0].w = random_dense(4, 6, 20).scaled(0.1);
        net.layers[1].w = random_dense(6, 6, 21).scaled(0.1);
        let y = random_dense(4, 32, 22);
        let x_opt = random_dense(6, 32, 23).scaled(0.2);
        let mut opt = Optimizer::new(crate::quant::OptimizerKind::Adam);
        let first = fcn_epoch(&mut net, &y, &x_opt, 0, 1e-2, &mut opt).unwrap();
        let mut last = first;
        for _ in 0..50 {
            last = fcn_epoch(&mut net, &y, &x_opt, 0, 1e-2, &mut opt).unwrap();
        }
        assert!(last < first, "loss {first} → {last}");
    }
}
