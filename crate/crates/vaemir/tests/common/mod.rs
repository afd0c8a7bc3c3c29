//! Shared finite-difference oracle for the gradient suites. Kept independent
//! of the analytic backward path: it only calls forward-mode evaluation.

use vaemir::vae::{latent_loss, recon_loss, reparameterize};
use vaemir::{Network, VaeModel};

pub const FD_STEP: f64 = 1e-5;

/// Central finite difference of `loss` with respect to every parameter of
/// `net`, in flat parameter order.
pub fn numeric_network_gradient<L>(net: &Network, loss: L) -> Vec<f64>
where
    L: Fn(&Network) -> f64,
{
    let mut grads = Vec::with_capacity(net.param_count());
    let mut probe = net.clone();
    for i in 0..net.param_count() {
        let orig = probe.get_param(i);
        probe.set_param(i, orig + FD_STEP);
        let plus = loss(&probe);
        probe.set_param(i, orig - FD_STEP);
        let minus = loss(&probe);
        probe.set_param(i, orig);
        grads.push((plus - minus) / (2.0 * FD_STEP));
    }
    grads
}

/// True when every ReLU pre-activation is far enough from zero that the
/// finite-difference step cannot cross the kink.
pub fn away_from_relu_kinks(net: &Network, x: &[f64]) -> bool {
    use vaemir::nn::Activation;
    let mut cur = x.to_vec();
    for layer in &net.layers {
        let mut next = Vec::with_capacity(layer.out_dim);
        for o in 0..layer.out_dim {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let z: f64 = layer.biases[o] + row.iter().zip(&cur).map(|(w, xi)| w * xi).sum::<f64>();
            match layer.activation {
                Activation::Relu => {
                    if z.abs() < 1e-3 {
                        return false;
                    }
                    next.push(z.max(0.0));
                }
                Activation::Identity => next.push(z),
            }
        }
        cur = next;
    }
    true
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-2)
}

/// Forward-only evaluation of the per-sample VAE loss (latent + recon) for
/// a fixed noise draw. Mirrors the model's loss definition without touching
/// any backward code.
pub fn vae_loss_forward(model: &VaeModel, x_std: &[f64], eps: &[f64]) -> f64 {
    let head = model.encoder.forward(x_std).unwrap();
    let (mu, logvar) = head.split_at(model.latent_dim);
    let sigma: Vec<f64> = logvar.iter().map(|lv| (lv / 2.0).exp()).collect();
    let z = reparameterize(mu, &sigma, eps).unwrap();
    let x_prime = model.decoder.forward(&z).unwrap();
    latent_loss(mu, &sigma).unwrap() + recon_loss(x_std, &x_prime).unwrap()
}
