//! Fully connected network with batch normalization after every hidden
//! linear layer (before the ReLU) and an optional tanh output squash.
//!
//! All trainable parameters live in one flat vector so that Adam, soft
//! target updates, finite-difference checks, and checkpoints can treat a
//! network as a plain `&[f64]`. Per hidden layer the layout is
//! `W (out×in, row-major) | gamma (out) | beta (out)`; the output layer is
//! `W (out×in) | bias (out)`. Hidden linear layers carry no bias because the
//! normalization shift makes it redundant.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; requires at least two rows.
    Train,
    /// Running statistics; rows are independent.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    /// gamma offset for hidden layers, bias offset for the output layer.
    a: usize,
    /// beta offset (hidden layers only).
    b: usize,
    /// Offset into the running-statistic vectors (hidden layers only).
    stats: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpNet {
    sizes: Vec<usize>,
    output: OutputActivation,
    layout: Vec<LayerLayout>,
    params: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    #[serde(skip)]
    revision: u64,
}

/// Equality of weights and statistics; the cache revision is bookkeeping.
impl PartialEq for MlpNet {
    fn eq(&self, o: &Self) -> bool {
        self.sizes == o.sizes
            && self.output == o.output
            && self.layout == o.layout
            && self.params == o.params
            && self.running_mean == o.running_mean
            && self.running_var == o.running_var
            && self.momentum == o.momentum
    }
}

/// Activations kept by a train-mode forward pass for [`MlpNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    revision: u64,
    mode: Mode,
    hidden: Vec<HiddenCache>,
    last_input: Array2<f64>,
    output: Array2<f64>,
}

#[derive(Debug, Clone)]
struct HiddenCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    act: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`MlpNet::params`].
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

impl MlpNet {
    /// Builds a network `sizes[0] → … → sizes[last]`, initializing hidden
    /// weights uniformly in `±1/√fan_in` and the output layer in
    /// `±final_init`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, final_init: f64, momentum: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::input(format!("invalid layer sizes {sizes:?}")));
        }
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::input("batch-norm momentum must lie in (0,1]"));
        }
        let mut layout = Vec::new();
        let mut off = 0;
        let mut stats = 0;
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let w = off;
            off += fan_in * fan_out;
            let a = off;
            off += fan_out;
            let b = off;
            if l + 1 < n_layers {
                off += fan_out;
            }
            layout.push(LayerLayout { fan_in, fan_out, w, a, b, stats });
            if l + 1 < n_layers {
                stats += fan_out;
            }
        }
        let mut params = vec![0.0; off];
        for (l, lay) in layout.iter().enumerate() {
            let last = l + 1 == n_layers;
            let bound = if last { final_init } else { 1.0 / (lay.fan_in as f64).sqrt() };
            for p in &mut params[lay.w..lay.w + lay.fan_in * lay.fan_out] {
                *p = rng.random_range(-bound..=bound);
            }
            if last {
                for p in &mut params[lay.a..lay.a + lay.fan_out] {
                    *p = rng.random_range(-bound..=bound);
                }
            } else {
                params[lay.a..lay.a + lay.fan_out].fill(1.0);
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            layout,
            params,
            running_mean: vec![0.0; stats],
            running_var: vec![1.0; stats],
            momentum,
            revision: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated sizes")
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.revision += 1;
        &mut self.params
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    pub fn set_running_stats(&mut self, mean: &[f64], var: &[f64]) -> Result<()> {
        if mean.len() != self.running_mean.len() || var.len() != self.running_var.len() {
            return Err(Error::input("running statistics shape mismatch"));
        }
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::input("running variance must be positive"));
        }
        self.running_mean.copy_from_slice(mean);
        self.running_var.copy_from_slice(var);
        Ok(())
    }

    pub fn same_shape(&self, other: &MlpNet) -> bool {
        self.sizes == other.sizes && self.output == other.output
    }

    fn weights(&self, lay: &LayerLayout) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((lay.fan_out, lay.fan_in), &self.params[lay.w..lay.w + lay.fan_in * lay.fan_out])
            .expect("layout matches parameter vector")
    }

    fn check_input(&self, x: &Array2<f64>, mode: Mode) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::input(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::input("empty batch"));
        }
        if mode == Mode::Train && x.nrows() < 2 {
            return Err(Error::input("train-mode batch needs at least two rows"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Train => Ok(self.forward_train(x)?.output),
            Mode::Eval => {
                self.check_input(x, Mode::Eval)?;
                Ok(self.forward_eval_unchecked(x))
            }
        }
    }

    fn forward_eval_unchecked(&self, x: &Array2<f64>) -> Array2<f64> {
        let n_layers = self.layout.len();
        let mut h = x.to_owned();
        for lay in &self.layout[..n_layers - 1] {
            let mut z = h.dot(&self.weights(lay).t());
            for j in 0..lay.fan_out {
                let inv = 1.0 / (self.running_var[lay.stats + j] + BN_EPS).sqrt();
                let (g, b, m) = (self.params[lay.a + j], self.params[lay.b + j], self.running_mean[lay.stats + j]);
                z.column_mut(j).mapv_inplace(|v| (g * (v - m) * inv + b).max(0.0));
            }
            h = z;
        }
        self.output_layer(&h)
    }

    fn output_layer(&self, h: &Array2<f64>) -> Array2<f64> {
        let lay = self.layout.last().expect("at least one layer");
        let mut out = h.dot(&self.weights(lay).t());
        let bias = &self.params[lay.a..lay.a + lay.fan_out];
        for mut row in out.rows_mut() {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
                if self.output == OutputActivation::Tanh {
                    *v = v.tanh();
                }
            }
        }
        out
    }

    /// Train-mode pass with batch statistics. Pure: running statistics are
    /// only touched by [`MlpNet::update_running_stats`].
    pub fn forward_train(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        self.check_input(x, Mode::Train)?;
        let n_layers = self.layout.len();
        let rows = x.nrows() as f64;
        let mut hidden = Vec::with_capacity(n_layers - 1);
        let mut h = x.to_owned();
        for lay in &self.layout[..n_layers - 1] {
            let z = h.dot(&self.weights(lay).t());
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &z - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / rows;
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = &centered * &inv_std;
            let gamma = Array1::from(self.params[lay.a..lay.a + lay.fan_out].to_vec());
            let beta = Array1::from(self.params[lay.b..lay.b + lay.fan_out].to_vec());
            let act = (&xhat * &gamma + &beta).mapv(|v| v.max(0.0));
            hidden.push(HiddenCache {
                input: h,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                act: act.clone(),
            });
            h = act;
        }
        let output = self.output_layer(&h);
        Ok(ForwardCache {
            revision: self.revision,
            mode: Mode::Train,
            hidden,
            last_input: h,
            output,
        })
    }

    /// Eval-mode pass that keeps activations so gradients can be taken
    /// through the frozen normalization (rows stay independent).
    pub fn forward_eval_cached(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        self.check_input(x, Mode::Eval)?;
        let n_layers = self.layout.len();
        let mut hidden = Vec::with_capacity(n_layers - 1);
        let mut h = x.to_owned();
        for lay in &self.layout[..n_layers - 1] {
            let z = h.dot(&self.weights(lay).t());
            let mean = Array1::from(self.running_mean[lay.stats..lay.stats + lay.fan_out].to_vec());
            let var = Array1::from(self.running_var[lay.stats..lay.stats + lay.fan_out].to_vec());
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let gamma = Array1::from(self.params[lay.a..lay.a + lay.fan_out].to_vec());
            let beta = Array1::from(self.params[lay.b..lay.b + lay.fan_out].to_vec());
            let act = (&xhat * &gamma + &beta).mapv(|v| v.max(0.0));
            hidden.push(HiddenCache {
                input: h,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                act: act.clone(),
            });
            h = act;
        }
        let output = self.output_layer(&h);
        Ok(ForwardCache {
            revision: self.revision,
            mode: Mode::Eval,
            hidden,
            last_input: h,
            output,
        })
    }

    /// Exponential moving update of the running statistics from a cached
    /// train-mode pass (unbiased batch variance). Eval-mode caches are
    /// ignored.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode == Mode::Eval {
            return;
        }
        let m = self.momentum;
        for (lay, hc) in self.layout.iter().zip(&cache.hidden) {
            let rows = hc.input.nrows() as f64;
            let correction = rows / (rows - 1.0);
            for j in 0..lay.fan_out {
                let k = lay.stats + j;
                self.running_mean[k] = (1.0 - m) * self.running_mean[k] + m * hc.batch_mean[j];
                self.running_var[k] = (1.0 - m) * self.running_var[k] + m * hc.batch_var[j] * correction;
            }
        }
    }

    /// Backpropagates `grad_out` (∂L/∂output, one row per sample) through a
    /// cached pass of either mode.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> Result<Gradients> {
        if cache.revision != self.revision {
            return Err(Error::State("forward cache predates a parameter update".into()));
        }
        if grad_out.dim() != cache.output.dim() {
            return Err(Error::input(format!(
                "output gradient shape {:?} does not match output {:?}",
                grad_out.dim(),
                cache.output.dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let rows = grad_out.nrows() as f64;

        let mut g = grad_out.to_owned();
        if self.output == OutputActivation::Tanh {
            g.zip_mut_with(&cache.output, |gi, y| *gi *= 1.0 - y * y);
        }
        let last = self.layout.last().expect("at least one layer");
        write_block(&mut grads[last.w..], &g.t().dot(&cache.last_input));
        for (dst, v) in grads[last.a..last.a + last.fan_out].iter_mut().zip(g.sum_axis(Axis(0))) {
            *dst = v;
        }
        let mut dh = g.dot(&self.weights(last));

        for (lay, hc) in self.layout.iter().zip(&cache.hidden).rev() {
            let mut dy = dh;
            dy.zip_mut_with(&hc.act, |d, a| {
                if *a <= 0.0 {
                    *d = 0.0
                }
            });
            let dgamma = (&dy * &hc.xhat).sum_axis(Axis(0));
            let dbeta = dy.sum_axis(Axis(0));
            let gamma = Array1::from(self.params[lay.a..lay.a + lay.fan_out].to_vec());
            let dxhat = &dy * &gamma;
            let dz = match cache.mode {
                Mode::Train => {
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * &hc.xhat).sum_axis(Axis(0));
                    (&dxhat * rows - &sum_dxhat - &hc.xhat * &sum_dxhat_xhat) * &(&hc.inv_std / rows)
                }
                Mode::Eval => &dxhat * &hc.inv_std,
            };
            write_block(&mut grads[lay.w..], &dz.t().dot(&hc.input));
            for j in 0..lay.fan_out {
                grads[lay.a + j] = dgamma[j];
                grads[lay.b + j] = dbeta[j];
            }
            dh = dz.dot(&self.weights(lay));
        }
        Ok(Gradients { params: grads, input: dh })
    }

    /// Polyak blend `θ′ ← τθ + (1−τ)θ′` of parameters and running statistics.
    pub fn soft_update_from(&mut self, online: &MlpNet, tau: f64) -> Result<()> {
        if !self.same_shape(online) {
            return Err(Error::input("soft update between networks of different shape"));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::input(format!("soft-update rate must lie in [0,1], got {tau}")));
        }
        let blend = |dst: &mut [f64], src: &[f64]| {
            for (t, o) in dst.iter_mut().zip(src) {
                *t = tau * o + (1.0 - tau) * *t;
            }
        };
        blend(self.params_mut(), &online.params);
        blend(&mut self.running_mean, &online.running_mean);
        blend(&mut self.running_var, &online.running_var);
        Ok(())
    }
}

fn write_block(dst: &mut [f64], src: &Array2<f64>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = MlpNet::new(&[3, 4, 4, 2], OutputActivation::Identity, 0.1, 0.1, &mut rng).unwrap();
        net.params_mut().fill(0.0);
        let x = random_batch(&mut rng, 5, 3);
        assert!(net.forward(&x, Mode::Eval).unwrap().iter().all(|v| *v == 0.0));
        assert!(net.forward(&x, Mode::Train).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn eval_mode_is_row_independent_and_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MlpNet::new(&[3, 6, 6, 2], OutputActivation::Tanh, 0.5, 0.1, &mut rng).unwrap();
        let x = random_batch(&mut rng, 4, 3);
        let a = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, net.forward(&x, Mode::Eval).unwrap());
        let single = net.forward(&x.slice(ndarray::s![2..3, ..]).to_owned(), Mode::Eval).unwrap();
        assert_eq!(single.row(0), a.row(2));
    }

    #[test]
    fn input_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpNet::new(&[3, 4, 1], OutputActivation::Identity, 0.1, 0.1, &mut rng).unwrap();
        assert!(net.forward(&Array2::zeros((2, 4)), Mode::Eval).is_err());
        assert!(net.forward(&Array2::zeros((1, 3)), Mode::Train).is_err());
        assert!(net.forward(&Array2::zeros((0, 3)), Mode::Eval).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = MlpNet::new(&[2, 3, 1], OutputActivation::Identity, 0.1, 0.1, &mut rng).unwrap();
        let x = random_batch(&mut rng, 3, 2);
        let cache = net.forward_train(&x).unwrap();
        net.params_mut()[0] += 1.0;
        let g = Array2::ones((3, 1));
        assert!(matches!(net.backward(&cache, &g), Err(Error::State(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpNet::new(&[3, 5, 5, 2], OutputActivation::Tanh, 0.3, 0.1, &mut rng).unwrap();
        let x = random_batch(&mut rng, 4, 3);
        let cache = net.forward_train(&x).unwrap();
        let g = net.backward(&cache, &Array2::zeros((4, 2))).unwrap();
        assert!(g.params.iter().all(|v| *v == 0.0));
        assert!(g.input.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn running_stats_track_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = MlpNet::new(&[2, 3, 1], OutputActivation::Identity, 0.1, 1.0, &mut rng).unwrap();
        let x = random_batch(&mut rng, 6, 2);
        let cache = net.forward_train(&x).unwrap();
        net.update_running_stats(&cache);
        let hc = &cache.hidden[0];
        for j in 0..3 {
            assert!((net.running_mean()[j] - hc.batch_mean[j]).abs() < 1e-15);
            assert!((net.running_var()[j] - hc.batch_var[j] * 6.0 / 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn soft_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut online = MlpNet::new(&[2, 3, 1], OutputActivation::Identity, 0.1, 0.1, &mut rng).unwrap();
        let mut target = MlpNet::new(&[2, 3, 1], OutputActivation::Identity, 0.1, 0.1, &mut rng).unwrap();
        let before = target.params().to_vec();
        target.soft_update_from(&online, 0.0).unwrap();
        assert_eq!(target.params(), &before[..]);
        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target.params(), online.params());

        online.params_mut().fill(2.0);
        target.params_mut().fill(0.0);
        target.soft_update_from(&online, 0.5).unwrap();
        assert!(target.params().iter().all(|v| *v == 1.0));

        let other = MlpNet::new(&[2, 4, 1], OutputActivation::Identity, 0.1, 0.1, &mut rng).unwrap();
        assert!(target.soft_update_from(&other, 0.5).is_err());
    }
}
