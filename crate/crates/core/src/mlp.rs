//! Three-layer perceptron with hand-rolled backpropagation.
//!
//! Fixed topology: two ReLU activations with inverted dropout after the
//! first, trained under the Mahalanobis loss `Σ rᵀ Q⁻¹ r` with a frozen
//! noise covariance. The batched forward/backward path stores samples as
//! matrix columns so the inner loops are plain matrix products.

use crate::numerics::{dot, Mat, SpdMat};
use crate::rng::CounterRng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlpError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("stale cache: {0}")]
    StaleCache(String),
}

/// Weights and biases of the fixed three-layer topology.
///
/// `hidden_dim == 0` is a disabled-network sentinel: the map is pinned to
/// zero and carries no trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub w3: Mat,
    pub b3: Vec<f64>,
    pub dropout_rate: f64,
}

/// Gradients (or Adam moments) shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub w3: Mat,
    pub b3: Vec<f64>,
}

/// Per-sample dropout mask with inverted scaling.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub kept: Vec<bool>,
    pub scale: f64,
}

impl DropoutMask {
    pub fn all_kept(hidden_dim: usize) -> Self {
        DropoutMask {
            kept: vec![true; hidden_dim],
            scale: 1.0,
        }
    }

    pub fn sample(hidden_dim: usize, rate: f64, rng: &mut CounterRng) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if rate == 0.0 {
            return DropoutMask::all_kept(hidden_dim);
        }
        DropoutMask {
            kept: (0..hidden_dim).map(|_| rng.next_open01() >= rate).collect(),
            scale: 1.0 / (1.0 - rate),
        }
    }

    #[inline]
    pub fn factor(&self, i: usize) -> f64 {
        if self.kept[i] {
            self.scale
        } else {
            0.0
        }
    }
}

/// Activations from a batched forward pass, sufficient for `backward_batch`.
#[derive(Debug, Clone)]
pub struct BatchCache {
    x: Mat,            // in x B
    a1: Mat,           // hidden x B, pre-activation of layer 1
    mask_factors: Mat, // hidden x B, 0 or the inverted-dropout scale
    dropped: Mat,      // hidden x B, mask ∘ relu(a1)
    a2: Mat,           // hidden x B, pre-activation of layer 2
    h2: Mat,           // hidden x B, relu(a2)
    pub out: Mat,      // out x B
}

impl MlpParams {
    /// Uniform init in `±sqrt(6/(fan_in + fan_out))` per layer, zero biases.
    pub fn init(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        dropout_rate: f64,
        rng: &mut CounterRng,
    ) -> Self {
        assert!((0.0..1.0).contains(&dropout_rate));
        let mut uniform_mat = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut m = Mat::zeros(rows, cols);
            for v in m.data_mut() {
                *v = (rng.next_open01() * 2.0 - 1.0) * bound;
            }
            m
        };
        let w1 = uniform_mat(hidden_dim, in_dim, in_dim, hidden_dim);
        let w2 = uniform_mat(hidden_dim, hidden_dim, hidden_dim, hidden_dim);
        let w3 = uniform_mat(out_dim, hidden_dim, hidden_dim, out_dim);
        MlpParams {
            in_dim,
            hidden_dim,
            out_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; hidden_dim],
            w3,
            b3: vec![0.0; out_dim],
            dropout_rate,
        }
    }

    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize, dropout_rate: f64) -> Self {
        MlpParams {
            in_dim,
            hidden_dim,
            out_dim,
            w1: Mat::zeros(hidden_dim, in_dim),
            b1: vec![0.0; hidden_dim],
            w2: Mat::zeros(hidden_dim, hidden_dim),
            b2: vec![0.0; hidden_dim],
            w3: Mat::zeros(out_dim, hidden_dim),
            b3: vec![0.0; out_dim],
            dropout_rate,
        }
    }

    pub fn grads_zeros(&self) -> MlpGrads {
        MlpGrads {
            w1: Mat::zeros(self.hidden_dim, self.in_dim),
            b1: vec![0.0; self.hidden_dim],
            w2: Mat::zeros(self.hidden_dim, self.hidden_dim),
            b2: vec![0.0; self.hidden_dim],
            w3: Mat::zeros(self.out_dim, self.hidden_dim),
            b3: vec![0.0; self.out_dim],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.w3.is_finite()
            && self.b1.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
            && self.b3.iter().all(|v| v.is_finite())
    }

    /// Deterministic evaluation-mode forward pass for a single input.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "input length");
        if self.hidden_dim == 0 {
            return self.b3.clone();
        }
        let mut h1 = self.w1.matvec(x);
        for (v, b) in h1.iter_mut().zip(&self.b1) {
            *v = relu(*v + b);
        }
        let mut h2 = self.w2.matvec(&h1);
        for (v, b) in h2.iter_mut().zip(&self.b2) {
            *v = relu(*v + b);
        }
        let mut y = self.w3.matvec(&h2);
        for (v, b) in y.iter_mut().zip(&self.b3) {
            *v += b;
        }
        y
    }

    /// Batched forward pass; `inputs` holds one sample per column.
    pub fn forward_batch(&self, inputs: &Mat, masks: &[DropoutMask]) -> BatchCache {
        assert_eq!(inputs.rows(), self.in_dim, "input rows");
        let b = inputs.cols();
        assert_eq!(masks.len(), b, "one mask per sample");
        let h = self.hidden_dim;

        if h == 0 {
            let mut out = Mat::zeros(self.out_dim, b);
            for i in 0..self.out_dim {
                let bi = self.b3[i];
                for j in 0..b {
                    out[(i, j)] = bi;
                }
            }
            return BatchCache {
                x: inputs.clone(),
                a1: Mat::zeros(0, b),
                mask_factors: Mat::zeros(0, b),
                dropped: Mat::zeros(0, b),
                a2: Mat::zeros(0, b),
                h2: Mat::zeros(0, b),
                out,
            };
        }

        let mut a1 = self.w1.matmul(inputs);
        add_bias_rows(&mut a1, &self.b1);

        let mut mask_factors = Mat::zeros(h, b);
        for (j, mask) in masks.iter().enumerate() {
            assert_eq!(mask.kept.len(), h, "mask length");
            for i in 0..h {
                mask_factors[(i, j)] = mask.factor(i);
            }
        }

        let mut dropped = Mat::zeros(h, b);
        for ((d, &a), &f) in dropped
            .data_mut()
            .iter_mut()
            .zip(a1.data())
            .zip(mask_factors.data())
        {
            *d = relu(a) * f;
        }

        let mut a2 = self.w2.matmul(&dropped);
        add_bias_rows(&mut a2, &self.b2);

        let mut h2 = a2.clone();
        for v in h2.data_mut() {
            *v = relu(*v);
        }

        let mut out = self.w3.matmul(&h2);
        add_bias_rows(&mut out, &self.b3);

        BatchCache {
            x: inputs.clone(),
            a1,
            mask_factors,
            dropped,
            a2,
            h2,
            out,
        }
    }

    /// Exact analytic gradients of the batch loss given `dL/d(out)`.
    pub fn backward_batch(&self, cache: &BatchCache, grad_out: &Mat) -> Result<MlpGrads, MlpError> {
        let b = cache.x.cols();
        if b == 0 {
            return Err(MlpError::EmptyBatch);
        }
        if cache.x.rows() != self.in_dim
            || cache.a1.rows() != self.hidden_dim
            || cache.out.rows() != self.out_dim
        {
            return Err(MlpError::StaleCache(format!(
                "cache for a {}->{}->{} network, params are {}->{}->{}",
                cache.x.rows(),
                cache.a1.rows(),
                cache.out.rows(),
                self.in_dim,
                self.hidden_dim,
                self.out_dim
            )));
        }
        if grad_out.rows() != self.out_dim || grad_out.cols() != b {
            return Err(MlpError::StaleCache("output gradient shape".into()));
        }
        if self.hidden_dim == 0 {
            // Disabled network: pinned zero map, nothing to train.
            return Ok(self.grads_zeros());
        }

        let w3_grad = grad_out.matmul_bt(&cache.h2);
        let b3_grad = row_sums(grad_out);

        let mut g_a2 = self.w3.tr_matmul(grad_out);
        for (g, &a) in g_a2.data_mut().iter_mut().zip(cache.a2.data()) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let w2_grad = g_a2.matmul_bt(&cache.dropped);
        let b2_grad = row_sums(&g_a2);

        let mut g_a1 = self.w2.tr_matmul(&g_a2);
        for ((g, &f), &a) in g_a1
            .data_mut()
            .iter_mut()
            .zip(cache.mask_factors.data())
            .zip(cache.a1.data())
        {
            *g *= f;
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let w1_grad = g_a1.matmul_bt(&cache.x);
        let b1_grad = row_sums(&g_a1);

        Ok(MlpGrads {
            w1: w1_grad,
            b1: b1_grad,
            w2: w2_grad,
            b2: b2_grad,
            w3: w3_grad,
            b3: b3_grad,
        })
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn add_bias_rows(m: &mut Mat, bias: &[f64]) {
    let cols = m.cols();
    for (i, &b) in bias.iter().enumerate() {
        for v in m.row_mut(i).iter_mut().take(cols) {
            *v += b;
        }
    }
}

fn row_sums(m: &Mat) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().sum()).collect()
}

/// `Σ_batch rᵀ Q⁻¹ r` over residual columns.
pub fn mahalanobis_loss(residuals: &Mat, noise_cov: &SpdMat) -> Result<f64, MlpError> {
    if residuals.cols() == 0 {
        return Err(MlpError::EmptyBatch);
    }
    assert_eq!(residuals.rows(), noise_cov.dim(), "residual dimension");
    let solved = noise_cov.solve_mat(residuals);
    Ok(dot(residuals.data(), solved.data()))
}

/// Loss and its gradient with respect to the network outputs.
///
/// For residuals `r = target − out` per column the loss is `Σ rᵀ Q⁻¹ r`
/// and `dL/d(out) = −2 Q⁻¹ r`.
pub fn loss_and_output_grad(targets: &Mat, outputs: &Mat, noise_cov: &SpdMat) -> (f64, Mat) {
    assert_eq!(targets.rows(), outputs.rows());
    assert_eq!(targets.cols(), outputs.cols());
    let residuals = targets.sub(outputs);
    let solved = noise_cov.solve_mat(&residuals);
    let loss = dot(residuals.data(), solved.data());
    (loss, solved.scale(-2.0))
}

/// Adam optimizer state; moments are shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: MlpGrads,
    pub second_moment: MlpGrads,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        AdamState {
            first_moment: params.grads_zeros(),
            second_moment: params.grads_zeros(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One Adam update with bias correction. Consumes and returns the
/// parameter and state values; callers never observe a half-updated pair.
pub fn adam_step(
    mut params: MlpParams,
    grads: &MlpGrads,
    mut state: AdamState,
) -> (MlpParams, AdamState) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);

    let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        assert_eq!(theta.len(), g.len(), "gradient shape");
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };

    update(
        params.w1.data_mut(),
        grads.w1.data(),
        state.first_moment.w1.data_mut(),
        state.second_moment.w1.data_mut(),
    );
    update(
        &mut params.b1,
        &grads.b1,
        &mut state.first_moment.b1,
        &mut state.second_moment.b1,
    );
    update(
        params.w2.data_mut(),
        grads.w2.data(),
        state.first_moment.w2.data_mut(),
        state.second_moment.w2.data_mut(),
    );
    update(
        &mut params.b2,
        &grads.b2,
        &mut state.first_moment.b2,
        &mut state.second_moment.b2,
    );
    update(
        params.w3.data_mut(),
        grads.w3.data(),
        state.first_moment.w3.data_mut(),
        state.second_moment.w3.data_mut(),
    );
    update(
        &mut params.b3,
        &grads.b3,
        &mut state.first_moment.b3,
        &mut state.second_moment.b3,
    );

    (params, state)
}

/// Per-dimension affine input transform `(x − mean) * inv_std`.
///
/// Fitted on training inputs when normalization is enabled; stored with
/// the learned model so evaluation applies the identical transform.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl InputNorm {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((&v, &m), &s)| (v - m) * s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn batch_of(inputs: &[&[f64]]) -> Mat {
        let in_dim = inputs[0].len();
        let mut m = Mat::zeros(in_dim, inputs.len());
        for (j, x) in inputs.iter().enumerate() {
            m.set_column(j, x);
        }
        m
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(3, 5, 2, 0.0);
        assert_eq!(p.eval(&[1.0, -2.0, 0.5]), vec![0.0, 0.0]);
        let cache = p.forward_batch(&batch_of(&[&[1.0, 2.0, 3.0]]), &[DropoutMask::all_kept(5)]);
        assert_eq!(cache.out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_zero_train_equals_eval_bitwise() {
        let mut rng = CounterRng::new(11, 0);
        let p = MlpParams::init(4, 8, 3, 0.0, &mut rng);
        let x = [0.3, -1.2, 2.0, 0.7];
        let y_eval = p.eval(&x);
        let mut drng = CounterRng::new(11, 1);
        let mask = DropoutMask::sample(8, 0.0, &mut drng);
        let cache = p.forward_batch(&batch_of(&[&x]), &[mask]);
        for i in 0..3 {
            assert_eq!(y_eval[i].to_bits(), cache.out[(i, 0)].to_bits());
        }
    }

    /// Straight-line re-implementation of the forward pass, no shared kernels.
    fn forward_oracle(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let h = p.hidden_dim;
        let mut h1 = vec![0.0; h];
        for i in 0..h {
            let mut s = 0.0;
            for j in 0..p.in_dim {
                s += p.w1[(i, j)] * x[j];
            }
            s += p.b1[i];
            h1[i] = if s > 0.0 { s } else { 0.0 };
        }
        let mut h2 = vec![0.0; h];
        for i in 0..h {
            let mut s = 0.0;
            for j in 0..h {
                s += p.w2[(i, j)] * h1[j];
            }
            s += p.b2[i];
            h2[i] = if s > 0.0 { s } else { 0.0 };
        }
        let mut y = vec![0.0; p.out_dim];
        for i in 0..p.out_dim {
            let mut s = 0.0;
            for j in 0..h {
                s += p.w3[(i, j)] * h2[j];
            }
            y[i] = s + p.b3[i];
        }
        y
    }

    #[test]
    fn forward_matches_scripted_oracle() {
        let mut rng = CounterRng::new(7, 0);
        let p = MlpParams::init(3, 5, 2, 0.0, &mut rng);
        let x = [1.0, 0.0, 0.0];
        let y = p.eval(&x);
        let o = forward_oracle(&p, &x);
        for i in 0..2 {
            assert_abs_diff_eq!(y[i], o[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn eval_is_pure() {
        let mut rng = CounterRng::new(5, 0);
        let p = MlpParams::init(4, 6, 4, 0.3, &mut rng);
        let x = [0.1, 0.2, 0.3, 0.4];
        let a = p.eval(&x);
        let b = p.eval(&x);
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn mahalanobis_examples() {
        let zero = batch_of(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(mahalanobis_loss(&zero, &SpdMat::identity(2)).unwrap(), 0.0);

        let r = batch_of(&[&[1.0, 2.0]]);
        assert_abs_diff_eq!(
            mahalanobis_loss(&r, &SpdMat::identity(2)).unwrap(),
            5.0,
            epsilon = 1e-14
        );

        let r = batch_of(&[&[2.0, 0.0]]);
        let q = SpdMat::diagonal(&[4.0, 1.0]).unwrap();
        assert_abs_diff_eq!(mahalanobis_loss(&r, &q).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn mahalanobis_rejects_empty_batch() {
        let r = Mat::zeros(2, 0);
        assert_eq!(
            mahalanobis_loss(&r, &SpdMat::identity(2)).unwrap_err(),
            MlpError::EmptyBatch
        );
    }

    #[test]
    fn zero_residual_batch_gives_zero_gradient() {
        let mut rng = CounterRng::new(3, 0);
        let p = MlpParams::init(3, 6, 2, 0.0, &mut rng);
        let xs = batch_of(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 0.0]]);
        let masks = vec![DropoutMask::all_kept(6); 2];
        let cache = p.forward_batch(&xs, &masks);
        // targets equal outputs -> residuals zero -> dL/d(out) zero
        let (loss, g_out) = loss_and_output_grad(&cache.out.clone(), &cache.out, &SpdMat::identity(2));
        assert_eq!(loss, 0.0);
        let grads = p.backward_batch(&cache, &g_out).unwrap();
        for g in grads.w3.data().iter().chain(grads.w2.data()).chain(grads.w1.data()) {
            assert!(g.abs() < 1e-14);
        }
    }

    #[test]
    fn dropped_unit_has_zero_w1_row_gradient() {
        let mut rng = CounterRng::new(17, 0);
        let p = MlpParams::init(3, 4, 2, 0.5, &mut rng);
        let xs = batch_of(&[&[1.0, -0.5, 2.0]]);
        let mask = DropoutMask {
            kept: vec![false, true, true, true],
            scale: 2.0,
        };
        let cache = p.forward_batch(&xs, &[mask]);
        let targets = batch_of(&[&[1.0, 1.0]]);
        let (_, g_out) = loss_and_output_grad(&targets, &cache.out, &SpdMat::identity(2));
        let grads = p.backward_batch(&cache, &g_out).unwrap();
        for j in 0..3 {
            assert_eq!(grads.w1[(0, j)], 0.0);
        }
        assert_eq!(grads.b1[0], 0.0);
    }

    /// Central finite differences of the full batch loss over every parameter.
    fn fd_gradient_check(seed: u64, in_dim: usize, hidden: usize, out_dim: usize, batch: usize) -> f64 {
        let mut rng = CounterRng::new(seed, 0);
        let p = MlpParams::init(in_dim, hidden, out_dim, 0.0, &mut rng);
        let mut data_rng = CounterRng::new(seed, 1);
        let mut xs = Mat::zeros(in_dim, batch);
        for v in xs.data_mut() {
            *v = data_rng.next_normal();
        }
        let mut targets = Mat::zeros(out_dim, batch);
        for v in targets.data_mut() {
            *v = data_rng.next_normal();
        }
        let mut a = Mat::zeros(out_dim, out_dim);
        for v in a.data_mut() {
            *v = data_rng.next_normal() * 0.5;
        }
        let q = SpdMat::new(a.tr_matmul(&a).add_diagonal(0.3)).unwrap();

        let masks = vec![DropoutMask::all_kept(hidden); batch];
        let loss_of = |p: &MlpParams| {
            let cache = p.forward_batch(&xs, &masks);
            mahalanobis_loss(&targets.sub(&cache.out), &q).unwrap()
        };
        let cache = p.forward_batch(&xs, &masks);
        let (_, g_out) = loss_and_output_grad(&targets, &cache.out, &q);
        let grads = p.backward_batch(&cache, &g_out).unwrap();

        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        let mut check_tensor = |select: &dyn Fn(&mut MlpParams) -> &mut [f64], g: &[f64]| {
            for i in 0..g.len() {
                let mut pp = p.clone();
                select(&mut pp)[i] += h;
                let up = loss_of(&pp);
                let mut pm = p.clone();
                select(&mut pm)[i] -= h;
                let dn = loss_of(&pm);
                let fd = (up - dn) / (2.0 * h);
                let denom = g[i].abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max((g[i] - fd).abs() / denom);
            }
        };
        check_tensor(&|p| p.w1.data_mut(), grads.w1.data());
        check_tensor(&|p| &mut p.b1, &grads.b1);
        check_tensor(&|p| p.w2.data_mut(), grads.w2.data());
        check_tensor(&|p| &mut p.b2, &grads.b2);
        check_tensor(&|p| p.w3.data_mut(), grads.w3.data());
        check_tensor(&|p| &mut p.b3, &grads.b3);
        max_rel
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let max_rel = fd_gradient_check(101, 4, 8, 2, 3);
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut rng = CounterRng::new(2, 0);
        let p = MlpParams::init(2, 3, 1, 0.0, &mut rng);
        let g = p.grads_zeros();
        let s = AdamState::new(&p, 1e-3);
        let (p2, s2) = adam_step(p.clone(), &g, s);
        assert_eq!(p, p2);
        assert_eq!(s2.step_count, 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let c = 0.5;
        let alpha = 1e-3;
        let p = MlpParams::zeros(2, 2, 1, 0.0);
        let mut g = p.grads_zeros();
        for m in [&mut g.w1, &mut g.w2, &mut g.w3] {
            for v in m.data_mut() {
                *v = c;
            }
        }
        for b in [&mut g.b1, &mut g.b2, &mut g.b3] {
            for v in b.iter_mut() {
                *v = c;
            }
        }
        let s = AdamState::new(&p, alpha);
        let (p2, _) = adam_step(p, &g, s);
        // bias-corrected first step: m̂ = c, v̂ = c² -> Δθ = −α·c/(c+ε)
        let expected = -alpha * c / (c + 1e-8);
        for v in p2.w1.data().iter().chain(p2.w2.data()).chain(p2.w3.data()) {
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn adam_two_steps_match_hand_recursion() {
        let c = 0.3;
        let alpha = 1e-2;
        let p = MlpParams::zeros(1, 1, 1, 0.0);
        let mut g = p.grads_zeros();
        g.w1[(0, 0)] = c;
        let s = AdamState::new(&p, alpha);
        let (p1, s1) = adam_step(p, &g, s);
        let (p2, s2) = adam_step(p1, &g, s1);
        assert_eq!(s2.step_count, 2);
        // hand recursion
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let m1 = (1.0 - b1) * c;
        let v1 = (1.0 - b2) * c * c;
        let th1 = 0.0 - alpha * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * c;
        let v2 = b2 * v1 + (1.0 - b2) * c * c;
        let th2 =
            th1 - alpha * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert_abs_diff_eq!(s2.first_moment.w1[(0, 0)], m2, epsilon = 1e-16);
        assert_abs_diff_eq!(s2.second_moment.w1[(0, 0)], v2, epsilon = 1e-16);
        assert_abs_diff_eq!(p2.w1[(0, 0)], th2, epsilon = 1e-16);
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init(4, 16, 3, 0.1, &mut CounterRng::new(99, 0));
        let b = MlpParams::init(4, 16, 3, 0.1, &mut CounterRng::new(99, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn disabled_network_is_inert() {
        let p = MlpParams::zeros(3, 0, 2, 0.0);
        assert_eq!(p.eval(&[1.0, 2.0, 3.0]), vec![0.0, 0.0]);
        let cache = p.forward_batch(&batch_of(&[&[1.0, 2.0, 3.0]]), &[DropoutMask::all_kept(0)]);
        let targets = batch_of(&[&[5.0, -5.0]]);
        let (_, g_out) = loss_and_output_grad(&targets, &cache.out, &SpdMat::identity(2));
        let grads = p.backward_batch(&cache, &g_out).unwrap();
        assert_eq!(grads.b3, vec![0.0, 0.0]);
        let s = AdamState::new(&p, 1.0);
        let (p2, _) = adam_step(p.clone(), &grads, s);
        assert_eq!(p, p2);
    }

    proptest! {
        /// r -> c·r with Q -> c²·Q leaves the loss unchanged.
        #[test]
        fn loss_scale_invariance(seed in 0u64..200, dim in 1usize..=4, c in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 10.0])) {
            let mut rng = CounterRng::new(seed, 4);
            let mut r = Mat::zeros(dim, 3);
            for v in r.data_mut() {
                *v = rng.next_normal();
            }
            let mut a = Mat::zeros(dim, dim);
            for v in a.data_mut() {
                *v = rng.next_normal() * 0.4;
            }
            let q = SpdMat::new(a.tr_matmul(&a).add_diagonal(0.5)).unwrap();
            let q_scaled = SpdMat::new(q.as_mat().scale(c * c)).unwrap();
            let l1 = mahalanobis_loss(&r, &q).unwrap();
            let l2 = mahalanobis_loss(&r.scale(c), &q_scaled).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-10 * l1.abs().max(1.0));
        }
    }
}
