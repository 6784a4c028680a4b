use alloc::vec::Vec;

use super::DenseNetwork;
use crate::error::Result;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / (|numeric| + 1e-8)` over all parameters.
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Central differences of `f` around `point`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        let orig = x[k];
        x[k] = orig + step;
        let up = f(&x);
        x[k] = orig - step;
        let down = f(&x);
        x[k] = orig;
        out.push((up - down) / (2.0 * step));
    }
    out
}

/// Checks every parameter gradient of `loss(net(input))`.
///
/// `loss` maps a network output to the scalar loss and its gradient with
/// respect to that output.
pub fn check_gradients(
    net: &DenseNetwork,
    input: &[f64],
    loss: impl Fn(&[f64]) -> (f64, Vec<f64>),
    step: f64,
) -> Result<GradCheckReport> {
    let out = net.forward(input)?;
    let (_, dout) = loss(&out);
    let analytic = net.backward(input, &dout)?;
    let mut probe = net.clone();
    let numeric = central_difference(
        |params| {
            probe.params_mut().copy_from_slice(params);
            let y = probe.forward(input).expect("input length already validated");
            loss(&y).0
        },
        net.params(),
        step,
    );
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: numeric.len(),
    };
    for (k, (&a, &n)) in analytic.values.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / (n.abs() + 1e-8);
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_index = k;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng::{stream_rng, uniform};
    use alloc::vec;

    fn squared_error(target: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
        move |y: &[f64]| {
            let mut l = 0.0;
            let mut g = Vec::with_capacity(y.len());
            for (yi, ti) in y.iter().zip(&target) {
                l += 0.5 * (yi - ti) * (yi - ti);
                g.push(yi - ti);
            }
            (l, g)
        }
    }

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn random_small_nets_pass() {
        let mut rng = stream_rng(17, 0);
        for seed in 0..8u64 {
            let net = DenseNetwork::with_activations(
                &[4, 6, 5, 3],
                &[Activation::Tanh, Activation::Relu, Activation::Identity],
                seed,
            )
            .unwrap();
            let x: Vec<f64> = (0..4).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
            let t = vec![0.3, -0.2, 0.9];
            let report = check_gradients(&net, &x, squared_error(t), 1e-5).unwrap();
            assert!(report.max_relative_error < 1e-4, "{report:?}");
        }
    }
}
