//! Dense rectifier networks with hand-written backpropagation and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Fully connected network; rectifier on every layer but the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    pub layers: Vec<Dense>,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

impl MlpNet {
    /// Uniform `+-1/sqrt(fan_in)` initialization.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs an input and an output size");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    w: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)),
                    b: Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes
                .windows(2)
                .map(|w| Dense {
                    w: Array2::zeros((w[0], w[1])),
                    b: Array1::zeros(w[1]),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    /// Single-vector forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, RlError> {
        if input.len() != self.input_dim() {
            return Err(RlError::Shape {
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        let mut x = Array1::from(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = x.dot(&l.w) + &l.b;
            if i < last {
                y.mapv_inplace(|v| v.max(0.0));
            }
            x = y;
        }
        Ok(x.to_vec())
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = h.dot(&l.w) + &l.b;
            if i < last {
                relu_inplace(&mut y);
            }
            h = y;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = h.dot(&l.w) + &l.b;
            if i < last {
                relu_inplace(&mut y);
            }
            inputs.push(h);
            h = y;
        }
        (h, MlpCache { inputs })
    }

    /// Gradients of a scalar loss given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache, grad_out: Array2<f64>) -> MlpGrads {
        let n = self.layers.len();
        let mut w = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut g = grad_out;
        for i in (0..n).rev() {
            let input = &cache.inputs[i];
            w.push(input.t().dot(&g));
            b.push(g.sum_axis(Axis(0)));
            if i > 0 {
                let mut gin = g.dot(&self.layers[i].w.t());
                // The layer input is the rectified output of layer i-1.
                Zip::from(&mut gin).and(input).for_each(|gv, &a| {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                });
                g = gin;
            }
        }
        w.reverse();
        b.reverse();
        MlpGrads { w, b }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = *it.next().unwrap());
            l.b.iter_mut().for_each(|v| *v = *it.next().unwrap());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// `self = (1 - tau) * self + tau * online`
    pub fn polyak_from(&mut self, online: &MlpNet, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.w)
                .and(&o.w)
                .for_each(|tv, &ov| *tv = (1.0 - tau) * *tv + tau * ov);
            Zip::from(&mut t.b)
                .and(&o.b)
                .for_each(|tv, &ov| *tv = (1.0 - tau) * *tv + tau * ov);
        }
    }
}

/// Free-function form of [`MlpNet::forward`].
pub fn mlp_forward(net: &MlpNet, input: &[f64]) -> Result<Vec<f64>, RlError> {
    net.forward(input)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    pub fn new(net: &MlpNet, config: AdamConfig) -> Self {
        let zeros = MlpNet::zeros(&net.sizes()).layers;
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut MlpNet, grads: &MlpGrads) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step_size = c.lr / bc1;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *p -= step_size * *m / ((*v / bc2).sqrt() + c.eps);
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.w)
                .and(&mut self.m[i].w)
                .and(&mut self.v[i].w)
                .and(&grads.w[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.b)
                .and(&mut self.m[i].b)
                .and(&mut self.v[i].b)
                .and(&grads.b[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Adam on a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub config: AdamConfig,
    t: u64,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, m: 0.0, v: 0.0 }
    }

    pub fn step(&mut self, param: &mut f64, grad: f64) {
        let c = self.config;
        self.t += 1;
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad * grad;
        let m_hat = self.m / (1.0 - c.beta1.powi(self.t as i32));
        let v_hat = self.v / (1.0 - c.beta2.powi(self.t as i32));
        *param -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

/// Compares analytic gradients against central finite differences with
/// step `h` and returns the largest elementwise relative error
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(net: &MlpNet, loss: F, h: f64, floor: f64) -> f64
where
    F: Fn(&MlpNet) -> (f64, MlpGrads),
{
    let analytic = loss(net).1.flatten();
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut flat = base.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.set_flat_params(&flat);
        let up = loss(&probe).0;
        flat[i] = base[i] - h;
        probe.set_flat_params(&flat);
        let down = loss(&probe).0;
        flat[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpNet::zeros(&[3, 8, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let net = MlpNet {
            layers: vec![Dense {
                w: Array2::eye(3),
                b: Array1::zeros(3),
            }],
        };
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let net = MlpNet::zeros(&[3, 2]);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(RlError::Shape { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn small_net_matches_hand_arithmetic() {
        let net = MlpNet {
            layers: vec![
                Dense {
                    w: array![[0.5, -1.0, 0.2], [0.3, 0.1, -0.4], [-0.2, 0.7, 0.0], [1.0, 0.0, 0.5]],
                    b: array![0.1, -0.2, 0.05],
                },
                Dense {
                    w: array![[1.0, -0.5], [0.25, 2.0], [-1.5, 0.3]],
                    b: array![0.0, 0.1],
                },
            ],
        };
        let x = [1.0, 2.0, -1.0, 0.5];
        // Hidden pre-activations, rectified.
        let h = [
            (0.5 + 0.6 + 0.2 + 0.5 + 0.1f64).max(0.0),
            (-1.0 + 0.2 - 0.7 + 0.0 - 0.2f64).max(0.0),
            (0.2 - 0.8 + 0.0 + 0.25 + 0.05f64).max(0.0),
        ];
        let out = [
            h[0] * 1.0 + h[1] * 0.25 + h[2] * -1.5,
            h[0] * -0.5 + h[1] * 2.0 + h[2] * 0.3 + 0.1,
        ];
        let got = net.forward(&x).unwrap();
        assert!((got[0] - out[0]).abs() < 1e-12);
        assert!((got[1] - out[1]).abs() < 1e-12);
        let batch = net.forward_batch(Array2::from_shape_vec((1, 4), x.to_vec()).unwrap().view());
        assert_eq!(batch.row(0).to_vec(), got);
    }

    #[test]
    fn quadratic_loss_gradient() {
        let mut rng = seeded_rng(5);
        let net = MlpNet::new(&[4, 3], &mut rng);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let loss = |n: &MlpNet| {
            let (y, cache) = n.forward_cached(x.view());
            let l = 0.5 * y.mapv(|v| v * v).sum();
            (l, n.backward(&cache, y))
        };
        assert!(grad_check(&net, loss, 1e-5, 1e-8) < 1e-6);
    }

    #[test]
    fn polyak_is_exact_convex_combination() {
        let mut rng = seeded_rng(1);
        let online = MlpNet::new(&[2, 4, 2], &mut rng);
        let mut target = MlpNet::new(&[2, 4, 2], &mut rng);
        let old = target.flat_params();
        target.polyak_from(&online, 0.005);
        for ((t, o), n) in old.iter().zip(online.flat_params()).zip(target.flat_params()) {
            assert_eq!(n, (1.0 - 0.005) * t + 0.005 * o);
        }
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut rng = seeded_rng(2);
        let mut net = MlpNet::new(&[2, 1], &mut rng);
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.05));
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..500 {
            let (y, c) = net.forward_cached(x.view());
            let g = net.backward(&c, y);
            opt.step(&mut net, &g);
        }
        let y = net.forward_batch(x.view());
        assert!(y.iter().all(|v| v.abs() < 1e-2), "{y}");
    }
}
