//! A small multilayer perceptron with exact reverse-mode gradients.
//!
//! Architecture per hidden layer: affine → layer normalization (per sample)
//! → ReLU → inverted dropout (train mode only); the output layer is a plain
//! affine map. Parameters live in one flat `Vec<f64>` so the optimizer, the
//! finite-difference checker, and snapshotting all work on a single slice.
//!
//! Everything is batched: a forward pass takes a B×K matrix and produces
//! B×S outputs through matrix products, which is what makes full-batch
//! training of the estimator affordable.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Variance guard inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Network shape and regularization settings. The activation is ReLU
/// throughout; normalization is per-sample (layer norm), keeping each
/// observation's probabilities independent of whatever batch it rides in.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub dropout_rate: f64,
    pub use_layer_norm: bool,
    pub init_seed: u64,
}

impl MlpConfig {
    /// Two hidden layers of 64 with norm and 0.1 dropout — the trunk shared
    /// by the MAPL estimator and the plain-NN baselines.
    pub fn standard(input_dim: usize, output_dim: usize, init_seed: u64) -> Self {
        MlpConfig {
            input_dim,
            hidden_dims: vec![64, 64],
            output_dim,
            dropout_rate: 0.1,
            use_layer_norm: true,
            init_seed,
        }
    }

    /// Affine-only network (no hidden layers): the linear estimator variant.
    pub fn linear(input_dim: usize, output_dim: usize, init_seed: u64) -> Self {
        MlpConfig {
            input_dim,
            hidden_dims: Vec::new(),
            output_dim,
            dropout_rate: 0.0,
            use_layer_norm: false,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("network dims must be at least 1".into()));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Layer dimensions including input and output: [K, h₁, …, S].
    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_dims.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }
}

/// Offsets of one layer's parameter segments inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    w: usize,
    b: usize,
    gain: usize,
    shift: usize,
    in_dim: usize,
    out_dim: usize,
    normed: bool,
}

/// The network: configuration plus flat parameters.
#[derive(Debug, Clone)]
pub struct Mlp {
    cfg: MlpConfig,
    dims: Vec<usize>,
    layers: Vec<LayerOffsets>,
    params: Vec<f64>,
}

impl Mlp {
    /// He-uniform weight init (bound √(6/fan_in)), zero biases, unit norm
    /// gains, zero shifts; deterministic in `cfg.init_seed`.
    pub fn new(cfg: MlpConfig) -> Result<Self> {
        let mut mlp = Self::zeroed(cfg)?;
        let mut rng = stream_rng(mlp.cfg.init_seed, Stream::Init);
        for l in 0..mlp.layers.len() {
            let lay = mlp.layers[l];
            let limit = (6.0 / lay.in_dim as f64).sqrt();
            let dist = rand::distr::Uniform::new_inclusive(-limit, limit).expect("init range");
            for w in &mut mlp.params[lay.w..lay.w + lay.in_dim * lay.out_dim] {
                *w = rng.sample(dist);
            }
            if lay.normed {
                for g in &mut mlp.params[lay.gain..lay.gain + lay.out_dim] {
                    *g = 1.0;
                }
            }
        }
        Ok(mlp)
    }

    /// All parameters zero (including norm gains); mostly for tests and for
    /// building known-value networks via `params_mut`.
    pub fn zeroed(cfg: MlpConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.dims();
        let n_hidden = cfg.hidden_dims.len();
        let mut layers = Vec::with_capacity(n_hidden + 1);
        let mut off = 0usize;
        for l in 0..=n_hidden {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            let normed = cfg.use_layer_norm && l < n_hidden;
            let w = off;
            off += in_dim * out_dim;
            let b = off;
            off += out_dim;
            let (gain, shift) = if normed {
                let g = off;
                off += out_dim;
                let s = off;
                off += out_dim;
                (g, s)
            } else {
                (0, 0)
            };
            layers.push(LayerOffsets { w, b, gain, shift, in_dim, out_dim, normed });
        }
        Ok(Mlp { cfg, dims, layers, params: vec![0.0; off] })
    }

    pub fn cfg(&self) -> &MlpConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Overwrite a single output-layer bias so that head starts at a chosen
    /// operating point instead of zero.
    pub fn set_output_bias(&mut self, output: usize, value: f64) {
        let lay = *self.layers.last().expect("network has an output layer");
        assert!(output < lay.out_dim, "output index {output} out of range {}", lay.out_dim);
        self.params[lay.b + output] = value;
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameter values for a network with {}",
                values.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    fn w_view(&self, l: usize) -> ArrayView2<'_, f64> {
        let lay = self.layers[l];
        ArrayView2::from_shape((lay.in_dim, lay.out_dim), &self.params[lay.w..lay.w + lay.in_dim * lay.out_dim])
            .expect("weight view")
    }

    /// Forward pass over a batch; intermediate activations land in `cache`
    /// for the matching backward call. Dropout (train mode, rate > 0) draws
    /// its masks from a stream derived from `dropout_seed`.
    pub fn forward_batch(
        &self,
        x: &Array2<f64>,
        mode: Mode,
        dropout_seed: u64,
        cache: &mut MlpCache,
    ) {
        assert_eq!(x.ncols(), self.cfg.input_dim, "input feature dimension");
        let b = x.nrows();
        cache.ensure_shape(b, &self.dims, self.cfg.use_layer_norm);
        cache.mode = mode;
        let keep = 1.0 - self.cfg.dropout_rate;
        let dropping = mode == Mode::Train && self.cfg.dropout_rate > 0.0;
        let mut drop_rng = dropping.then(|| stream_rng(dropout_seed, Stream::Dropout));

        cache.inputs[0].assign(x);
        let n_hidden = self.cfg.hidden_dims.len();
        for l in 0..=n_hidden {
            let lay = self.layers[l];
            // affine into the block output buffer
            let (head, tail) = cache.inputs.split_at_mut(l + 1);
            let out_buf: &mut Array2<f64> = if l < n_hidden {
                &mut tail[0]
            } else {
                &mut cache.output
            };
            general_mat_mul(1.0, &head[l], &self.w_view(l), 0.0, out_buf);
            let bias = &self.params[lay.b..lay.b + lay.out_dim];
            for row in out_buf.as_slice_mut().expect("standard layout").chunks_exact_mut(lay.out_dim)
            {
                for (v, bb) in row.iter_mut().zip(bias) {
                    *v += *bb;
                }
            }
            if l == n_hidden {
                break;
            }
            // layer norm
            if lay.normed {
                let gain = &self.params[lay.gain..lay.gain + lay.out_dim];
                let shift = &self.params[lay.shift..lay.shift + lay.out_dim];
                let xhat = cache.xhat[l].as_slice_mut().expect("layout");
                let inv_std = cache.inv_std[l].as_slice_mut().expect("layout");
                let h = lay.out_dim as f64;
                for (r, row) in out_buf
                    .as_slice_mut()
                    .expect("layout")
                    .chunks_exact_mut(lay.out_dim)
                    .enumerate()
                {
                    let mean = row.iter().sum::<f64>() / h;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
                    let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    inv_std[r] = is;
                    let xh = &mut xhat[r * lay.out_dim..(r + 1) * lay.out_dim];
                    for (c, v) in row.iter_mut().enumerate() {
                        let n = (*v - mean) * is;
                        xh[c] = n;
                        *v = gain[c] * n + shift[c];
                    }
                }
            }
            // relu, recorded for the backward mask
            {
                let relu = cache.relu[l].as_slice_mut().expect("layout");
                for (v, r) in out_buf
                    .as_slice_mut()
                    .expect("layout")
                    .iter_mut()
                    .zip(relu.iter_mut())
                {
                    *v = v.max(0.0);
                    *r = *v;
                }
            }
            // inverted dropout
            if let Some(rng) = drop_rng.as_mut() {
                let inv_keep = 1.0 / keep;
                let mask = cache.mask[l].as_slice_mut().expect("layout");
                for (v, m) in out_buf
                    .as_slice_mut()
                    .expect("layout")
                    .iter_mut()
                    .zip(mask.iter_mut())
                {
                    let u: f64 = rng.random();
                    *m = if u < keep { inv_keep } else { 0.0 };
                    *v *= *m;
                }
            }
        }
    }

    /// Accumulates parameter gradients of the last forward pass into `grads`
    /// (flat, same layout as `params`) given the loss gradient w.r.t. the
    /// network output, and leaves the input gradient in `cache.dx`.
    pub fn backward_batch(&self, upstream: &Array2<f64>, cache: &mut MlpCache, grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer length");
        let n_hidden = self.cfg.hidden_dims.len();
        let b = cache.inputs[0].nrows();
        assert_eq!(upstream.nrows(), b, "upstream batch size");
        assert_eq!(upstream.ncols(), self.cfg.output_dim, "upstream width");
        let dropping = cache.mode == Mode::Train && self.cfg.dropout_rate > 0.0;

        cache.gbuf[n_hidden].assign(upstream);
        for l in (0..=n_hidden).rev() {
            let lay = self.layers[l];
            if l < n_hidden {
                let g = cache.gbuf[l].as_slice_mut().expect("layout");
                if dropping {
                    let mask = cache.mask[l].as_slice().expect("layout");
                    for (gv, m) in g.iter_mut().zip(mask) {
                        *gv *= *m;
                    }
                }
                let relu = cache.relu[l].as_slice().expect("layout");
                for (gv, r) in g.iter_mut().zip(relu) {
                    if *r <= 0.0 {
                        *gv = 0.0;
                    }
                }
                if lay.normed {
                    let gain = &self.params[lay.gain..lay.gain + lay.out_dim];
                    let xhat = cache.xhat[l].as_slice().expect("layout");
                    let inv_std = cache.inv_std[l].as_slice().expect("layout");
                    let (dgain, dshift) = {
                        let (lo, hi) = grads.split_at_mut(lay.shift);
                        (
                            &mut lo[lay.gain..lay.gain + lay.out_dim],
                            &mut hi[..lay.out_dim],
                        )
                    };
                    let h = lay.out_dim as f64;
                    for (r, grow) in g.chunks_exact_mut(lay.out_dim).enumerate() {
                        let xrow = &xhat[r * lay.out_dim..(r + 1) * lay.out_dim];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..lay.out_dim {
                            dgain[c] += grow[c] * xrow[c];
                            dshift[c] += grow[c];
                            let dxh = grow[c] * gain[c];
                            grow[c] = dxh;
                            m1 += dxh;
                            m2 += dxh * xrow[c];
                        }
                        m1 /= h;
                        m2 /= h;
                        let is = inv_std[r];
                        for c in 0..lay.out_dim {
                            grow[c] = is * (grow[c] - m1 - xrow[c] * m2);
                        }
                    }
                }
            }
            // affine gradients: dW += inᵀ·g, db += column sums of g
            let g_ref: &Array2<f64> = &cache.gbuf[l];
            {
                let mut dw = ArrayViewMut2::from_shape(
                    (lay.in_dim, lay.out_dim),
                    &mut grads[lay.w..lay.w + lay.in_dim * lay.out_dim],
                )
                .expect("grad view");
                general_mat_mul(1.0, &cache.inputs[l].t(), g_ref, 1.0, &mut dw);
                let db = &mut grads[lay.b..lay.b + lay.out_dim];
                for row in g_ref.as_slice().expect("layout").chunks_exact(lay.out_dim) {
                    for (d, gv) in db.iter_mut().zip(row) {
                        *d += *gv;
                    }
                }
            }
            // input gradient: g · Wᵀ
            if l > 0 {
                let (lo, hi) = cache.gbuf.split_at_mut(l);
                general_mat_mul(1.0, &hi[0], &self.w_view(l).t(), 0.0, &mut lo[l - 1]);
            } else {
                general_mat_mul(1.0, &cache.gbuf[0], &self.w_view(0).t(), 0.0, &mut cache.dx);
            }
        }
    }

    /// Single-sample forward: returns the output vector and the cache.
    pub fn forward_one(&self, x: &[f64], mode: Mode, dropout_seed: u64) -> (Vec<f64>, MlpCache) {
        let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        let mut cache = MlpCache::new();
        self.forward_batch(&xm, mode, dropout_seed, &mut cache);
        (cache.output.row(0).to_vec(), cache)
    }

    /// Single-sample backward: parameter gradients plus the input gradient.
    pub fn backward_one(&self, cache: &mut MlpCache, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let up = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec()).expect("row");
        let mut grads = vec![0.0; self.n_params()];
        self.backward_batch(&up, cache, &mut grads);
        (grads, cache.dx.row(0).to_vec())
    }
}

/// Reusable activation/cache buffers for one network. Holding them outside
/// the network keeps forward/backward free of per-epoch allocation.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    mode: Mode,
    /// input to each affine layer (inputs[0] is the batch itself)
    inputs: Vec<Array2<f64>>,
    xhat: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    relu: Vec<Array2<f64>>,
    mask: Vec<Array2<f64>>,
    /// backward scratch: gbuf[l] = loss gradient w.r.t. layer l's block output
    gbuf: Vec<Array2<f64>>,
    /// network output of the last forward pass (B×S)
    pub output: Array2<f64>,
    /// loss gradient w.r.t. the batch input (B×K), filled by backward
    pub dx: Array2<f64>,
}

impl Default for Mode {
    fn default() -> Self {
        Mode::Eval
    }
}

impl MlpCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_shape(&mut self, b: usize, dims: &[usize], layer_norm: bool) {
        let n_hidden = dims.len() - 2;
        let shaped = self.inputs.len() == n_hidden + 1
            && self.inputs[0].nrows() == b
            && self.inputs[0].ncols() == dims[0]
            && self.output.ncols() == *dims.last().expect("output dim");
        if shaped {
            return;
        }
        self.inputs = (0..=n_hidden).map(|l| Array2::zeros((b, dims[l]))).collect();
        self.relu = (0..n_hidden).map(|l| Array2::zeros((b, dims[l + 1]))).collect();
        self.mask = (0..n_hidden).map(|l| Array2::zeros((b, dims[l + 1]))).collect();
        if layer_norm {
            self.xhat = (0..n_hidden).map(|l| Array2::zeros((b, dims[l + 1]))).collect();
            self.inv_std = (0..n_hidden).map(|_| Array1::zeros(b)).collect();
        } else {
            self.xhat = Vec::new();
            self.inv_std = Vec::new();
        }
        self.gbuf = (0..=n_hidden).map(|l| Array2::zeros((b, dims[l + 1]))).collect();
        self.output = Array2::zeros((b, dims[dims.len() - 1]));
        self.dx = Array2::zeros((b, dims[0]));
    }
}

/// Compares the analytic gradient against central finite differences of a
/// scalar loss, in eval mode, returning the worst relative error. For
/// networks above 256 parameters a deterministic random subsample of 256
/// coordinates is checked.
pub fn grad_check<F>(mlp: &Mlp, x: &Array2<f64>, loss_fn: F, h: f64) -> f64
where
    F: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    assert!(h > 0.0);
    let mut work = mlp.clone();
    let mut cache = MlpCache::new();
    work.forward_batch(x, Mode::Eval, 0, &mut cache);
    let (_, upstream) = loss_fn(&cache.output);
    let mut analytic = vec![0.0; work.n_params()];
    work.backward_batch(&upstream, &mut cache, &mut analytic);

    let n = work.n_params();
    let coords: Vec<usize> = if n <= 256 {
        (0..n).collect()
    } else {
        let mut rng = stream_rng(mlp.cfg().init_seed ^ 0x5eed_c0de, Stream::Init);
        let mut picked: Vec<usize> = (0..256).map(|_| rng.random_range(0..n)).collect();
        picked.sort_unstable();
        picked.dedup();
        picked
    };

    let mut worst = 0.0f64;
    for &i in &coords {
        let orig = work.params()[i];
        work.params_mut()[i] = orig + h;
        work.forward_batch(x, Mode::Eval, 0, &mut cache);
        let up = loss_fn(&cache.output).0;
        work.params_mut()[i] = orig - h;
        work.forward_batch(x, Mode::Eval, 0, &mut cache);
        let down = loss_fn(&cache.output).0;
        work.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1.0);
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update in place. Rejects non-finite gradients so a diverging
    /// model fails loudly instead of poisoning the moment buffers.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", step: self.step + 1 });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}
