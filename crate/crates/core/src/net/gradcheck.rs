use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::index::sample;

use super::mlp::TimeConditionedNet;
use crate::error::Result;
use crate::rng::{normal_batch, stream, Stream};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;
/// Minimum number of parameter coordinates probed.
pub const MIN_COORDS: usize = 200;

fn objective(
    net: &TimeConditionedNet<f64>,
    x: ArrayView2<f64>,
    t: &[f64],
    upstream: &Array2<f64>,
) -> Result<f64> {
    let y = net.forward(x, t)?;
    Ok(Zip::from(&y).and(upstream).fold(0.0, |acc, &a, &b| acc + a * b))
}

#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Worst relative error between reverse-mode gradients of
/// `<u, forward(x, t)>` (random `u`) and central finite differences, over a
/// random subset of at least [`MIN_COORDS`] parameters plus every input
/// coordinate.
pub fn grad_check(
    net: &TimeConditionedNet<f64>,
    x: ArrayView2<f64>,
    t: &[f64],
    seed: u64,
) -> Result<f64> {
    let mut rng = stream(seed, Stream::Misc);
    let upstream: Array2<f64> = normal_batch(&mut rng, x.nrows(), x.ncols());
    let (grads, input_grad) = net.backward_at(x, t, upstream.view())?;
    let analytic: Vec<f64> = grads.values().collect();

    let total = net.param_count();
    let coords: Vec<usize> = if total <= MIN_COORDS {
        (0..total).collect()
    } else {
        let mut c = sample(&mut rng, total, MIN_COORDS.max(total / 20).min(total)).into_vec();
        c.sort_unstable();
        c
    };

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for &i in &coords {
        let orig = probe.param(i);
        probe.set_param(i, orig + FD_STEP);
        let plus = objective(&probe, x, t, &upstream)?;
        probe.set_param(i, orig - FD_STEP);
        let minus = objective(&probe, x, t, &upstream)?;
        probe.set_param(i, orig);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }

    let mut xp = x.to_owned();
    for idx in 0..xp.len() {
        let (r, c) = (idx / xp.ncols(), idx % xp.ncols());
        let orig = xp[[r, c]];
        xp[[r, c]] = orig + FD_STEP;
        let plus = objective(net, xp.view(), t, &upstream)?;
        xp[[r, c]] = orig - FD_STEP;
        let minus = objective(net, xp.view(), t, &upstream)?;
        xp[[r, c]] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(input_grad[[r, c]], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::mlp::NetConfig;

    #[test]
    fn nets_of_different_depth_pass() {
        for (layers, width) in [(1, 16), (2, 24), (4, 12)] {
            let cfg = NetConfig::default().with_width(width).with_layers(layers);
            let net = TimeConditionedNet::<f64>::new(cfg, layers as u64).unwrap();
            let x: Array2<f64> = normal_batch(&mut stream(2, Stream::Noise), 6, 1);
            let t = [0.05, 0.2, 0.4, 0.6, 0.8, 0.99];
            let err = grad_check(&net, x.view(), &t, 3).unwrap();
            assert!(err < 1e-5, "depth {layers}: {err:e}");
        }
    }

    #[test]
    fn detects_a_broken_gradient() {
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
