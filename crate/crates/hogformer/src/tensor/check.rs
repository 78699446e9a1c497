//! Finite-difference gradient verification (64-bit).

use super::Tensor;

/// Compare analytic gradients against central differences for a scalar
/// function of the given inputs.
///
/// Every coordinate of every input is perturbed by ±eps; the relative error
/// per coordinate is |a−n| / max(|a|,|n|,1e-8) and the maximum over all
/// coordinates is returned. Inputs must have `requires_grad` set; their
/// gradients are cleared before and after.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> f64
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    for x in inputs {
        assert!(x.requires_grad(), "finite_diff_check inputs must require grad");
        x.zero_grad();
    }
    let loss = f(inputs);
    assert_eq!(loss.numel(), 1, "finite_diff_check needs a scalar function");
    loss.backward().expect("backward on scalar");
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| x.grad().unwrap_or_else(|| vec![0.0; x.numel()]))
        .collect();

    let mut max_rel = 0.0f64;
    for (xi, x) in inputs.iter().enumerate() {
        for c in 0..x.numel() {
            let orig = x.value_at(c);
            x.set_value_at(c, orig + eps);
            let fp = f(inputs).item();
            x.set_value_at(c, orig - eps);
            let fm = f(inputs).item();
            x.set_value_at(c, orig);
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[xi][c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    for x in inputs {
        x.zero_grad();
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_test_against_analytic_2x() {
        let x = Tensor::<f64>::new(vec![2], vec![1.0, 2.0], true);
        let err = finite_diff_check(|xs| xs[0].mul(&xs[0]).sum_all(), &[x], 1e-4);
        assert!(err < 1e-8, "max rel err {err}");
    }

    #[test]
    fn constant_function_has_zero_grads_both_ways() {
        let x = Tensor::<f64>::new(vec![3], vec![0.1, 0.2, 0.3], true);
        let err = finite_diff_check(
            |xs| xs[0].mul_scalar(0.0).sum_all().add_scalar(5.0),
            &[x.clone()],
            1e-4,
        );
        assert!(err < 1e-10, "max rel err {err}");
    }

    #[test]
    fn composite_conv_norm_softmax_path() {
        use super::super::{conv2d, layer_norm, softmax_last};
        let mut seed = 97u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let x = Tensor::<f64>::new(vec![4, 6, 6], (0..144).map(|_| next()).collect(), true);
        let w = Tensor::<f64>::new(vec![4, 4, 3, 3], (0..144).map(|_| next() * 0.2).collect(), true);
        let gamma = Tensor::<f64>::new(vec![4], vec![1.0, 0.9, 1.1, 1.2], true);
        let beta = Tensor::<f64>::new(vec![4], vec![0.0, 0.1, -0.1, 0.2], true);
        // A fixed readout after the softmax keeps every gradient coordinate
        // well away from zero; a plain sum of softmax rows is constant.
        let readout = Tensor::<f64>::new(
            vec![4, 36],
            (0..144).map(|i| 0.3 + 0.7 * (((i * 13 + 5) % 17) as f64 / 17.0)).collect(),
            false,
        );
        let err = finite_diff_check(
            |ins| {
                let y = conv2d(&ins[0], &ins[1], None, 1, 1, 1).unwrap();
                let n = layer_norm(&y, &ins[2], &ins[3], 1e-6);
                let flat = n.reshape(vec![4, 36]);
                softmax_last(&flat).mul(&readout).sum_all()
            },
            &[x, w, gamma, beta],
            1e-4,
        );
        assert!(err < 1e-5, "max rel err {err}");
    }
}
