//! Whole-sequence forward pass, backpropagation through time, global-norm
//! clipping and the central-difference gradient oracle.

use crate::cells::{ArrayView, GruParams, Params, StepCache, TanhParams};
use crate::error::{Error, Result};
use crate::numerics::{l2_norm_all, DenseMatrix, DenseVector};

/// Lower bound of the denominator in [`max_relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Range of finite-difference step sizes the gradient check is validated for.
pub const FD_EPS_RANGE: (f64, f64) = (1e-7, 1e-3);

/// ∂L/∂θ, laid out exactly like the parameters it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    inner: Params,
}

impl Gradients {
    pub fn zeros_like(p: &Params) -> Self {
        Self {
            inner: Params::zeros(p.kind(), p.dims()),
        }
    }

    pub fn as_params(&self) -> &Params {
        &self.inner
    }

    pub fn arrays(&self) -> Vec<ArrayView<'_>> {
        self.inner.arrays()
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        self.inner.arrays_mut()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.inner.flatten()
    }

    /// Global L2 norm over every entry.
    pub fn norm(&self) -> f64 {
        l2_norm_all(self.arrays().iter().map(|a| a.data))
    }

    pub fn scale(&mut self, alpha: f64) {
        for arr in self.arrays_mut() {
            arr.iter_mut().for_each(|g| *g *= alpha);
        }
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if !self.inner.same_layout(&other.inner) {
            return Err(Error::shape(
                "Gradients::accumulate",
                format!("{} {}", self.inner.kind(), self.inner.dims()),
                format!("{} {}", other.inner.kind(), other.inner.dims()),
            ));
        }
        for (dst, src) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.inner.is_finite()
    }

    /// Wraps an arbitrary parameter-shaped structure as a gradient.
    pub fn from_params(p: Params) -> Self {
        Self { inner: p }
    }
}

/// Per-step caches and losses of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub steps: Vec<StepCache>,
    pub per_step_loss: Vec<f64>,
    pub total_loss: f64,
    pub unmasked: usize,
}

impl ForwardTrace {
    pub fn outputs(&self) -> Vec<DenseVector> {
        self.steps.iter().map(|s| s.y.clone()).collect()
    }
}

fn validate_sequence(p: &Params, xs: &DenseMatrix, ys: &DenseMatrix, mask: &[bool]) -> Result<usize> {
    let dims = p.dims();
    let t_len = xs.rows();
    if t_len == 0 {
        return Err(Error::InvalidArgument("sequence has zero timesteps".into()));
    }
    if xs.cols() != dims.d_in {
        return Err(Error::shape("forward_sequence", format!("inputs {xs}"), format!("d_in {}", dims.d_in)));
    }
    if ys.rows() != t_len || ys.cols() != dims.d_out {
        return Err(Error::shape(
            "forward_sequence",
            format!("targets {ys}"),
            format!("expected {t_len}x{}", dims.d_out),
        ));
    }
    if mask.len() != t_len {
        return Err(Error::shape("forward_sequence", format!("mask len {}", mask.len()), format!("T {t_len}")));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        n => Ok(n),
    }
}

/// Mean over output dimensions of the squared error.
pub(crate) fn squared_error_mean(y: &[f64], target: &[f64]) -> f64 {
    y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Runs the cell from `h_0 = 0` over every row of `xs`.
///
/// `total_loss` is the mean over unmasked steps of the per-step squared error,
/// itself averaged over output dimensions. Masked steps contribute zero.
pub fn forward_sequence(p: &Params, xs: &DenseMatrix, ys: &DenseMatrix, mask: &[bool]) -> Result<ForwardTrace> {
    let unmasked = validate_sequence(p, xs, ys, mask)?;
    let mut h = DenseVector::zeros(p.dims().hidden);
    let mut steps = Vec::with_capacity(xs.rows());
    let mut per_step_loss = Vec::with_capacity(xs.rows());
    for t in 0..xs.rows() {
        let cache = p.step(&h, &xs.row_vector(t))?;
        per_step_loss.push(if mask[t] {
            squared_error_mean(cache.y.as_slice(), ys.row(t))
        } else {
            0.0
        });
        h = cache.h.clone();
        steps.push(cache);
    }
    let total_loss = per_step_loss.iter().sum::<f64>() / unmasked as f64;
    Ok(ForwardTrace {
        steps,
        per_step_loss,
        total_loss,
        unmasked,
    })
}

/// Total loss only; convenience wrapper for oracles and evaluation.
pub fn sequence_loss(p: &Params, xs: &DenseMatrix, ys: &DenseMatrix, mask: &[bool]) -> Result<f64> {
    forward_sequence(p, xs, ys, mask).map(|t| t.total_loss)
}

/// Exact gradient of `trace.total_loss` with respect to every parameter,
/// accumulated backwards through all timesteps.
pub fn backward_sequence(
    p: &Params,
    trace: &ForwardTrace,
    xs: &DenseMatrix,
    ys: &DenseMatrix,
    mask: &[bool],
) -> Result<Gradients> {
    let unmasked = validate_sequence(p, xs, ys, mask)?;
    if trace.steps.len() != xs.rows() || trace.unmasked != unmasked {
        return Err(Error::shape(
            "backward_sequence",
            format!("trace with {} steps", trace.steps.len()),
            format!("sequence with {} steps", xs.rows()),
        ));
    }
    let dims = p.dims();
    if let Some(s) = trace.steps.first() {
        if s.h.len() != dims.hidden || s.y.len() != dims.d_out {
            return Err(Error::shape("backward_sequence", format!("trace hidden {}", s.h.len()), format!("params {dims}")));
        }
    }

    let mut grads = Gradients::zeros_like(p);
    let coeff = 2.0 / (dims.d_out as f64 * unmasked as f64);
    let mut dh_next = DenseVector::zeros(dims.hidden);

    for t in (0..xs.rows()).rev() {
        let step = &trace.steps[t];
        let dy = if mask[t] {
            DenseVector::from_vec_unchecked(
                step.y
                    .iter()
                    .zip(ys.row(t))
                    .map(|(y, target)| coeff * (y - target))
                    .collect(),
            )
        } else {
            DenseVector::zeros(dims.d_out)
        };
        dh_next = match (p, &mut grads.inner) {
            (Params::Tanh(p), Params::Tanh(g)) => tanh_step_backward(p, g, step, &dy, &dh_next)?,
            (Params::Gru(p), Params::Gru(g)) => gru_step_backward(p, g, step, &dy, &dh_next)?,
            _ => unreachable!("gradients are built from the same params"),
        };
    }
    Ok(grads)
}

/// Backprop through the output projection and one Tanh step. Returns ∂L/∂h_prev.
fn tanh_step_backward(
    p: &TanhParams,
    g: &mut TanhParams,
    step: &StepCache,
    dy: &DenseVector,
    dh_next: &DenseVector,
) -> Result<DenseVector> {
    g.w_hy.add_outer(dy, &step.h)?;
    add_into(&mut g.b_y, dy);
    let dh = p.w_hy.matvec_transpose(dy)?.add(dh_next)?;

    let da = DenseVector::from_vec_unchecked(
        dh.iter().zip(step.h.iter()).map(|(d, h)| d * (1.0 - h * h)).collect(),
    );
    g.w_xh.add_outer(&da, &step.x)?;
    g.w_hh.add_outer(&da, &step.h_prev)?;
    add_into(&mut g.b_h, &da);
    p.w_hh.matvec_transpose(&da)
}

/// Backprop through the output projection and one GRU step. Returns ∂L/∂h_prev.
fn gru_step_backward(
    p: &GruParams,
    g: &mut GruParams,
    step: &StepCache,
    dy: &DenseVector,
    dh_next: &DenseVector,
) -> Result<DenseVector> {
    let gates = step
        .gates
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("GRU trace step is missing gate activations".into()))?;
    let (z, r, c, h_prev) = (&gates.z, &gates.r, &gates.candidate, &step.h_prev);
    let n = h_prev.len();

    g.w_hy.add_outer(dy, &step.h)?;
    add_into(&mut g.b_y, dy);
    let dh = p.w_hy.matvec_transpose(dy)?.add(dh_next)?;

    // h = (1 - z) ∘ h_prev + z ∘ c
    let mut dh_prev = DenseVector::from_vec_unchecked((0..n).map(|i| dh[i] * (1.0 - z[i])).collect());
    let da_z = DenseVector::from_vec_unchecked(
        (0..n).map(|i| dh[i] * (c[i] - h_prev[i]) * z[i] * (1.0 - z[i])).collect(),
    );
    let da_c = DenseVector::from_vec_unchecked(
        (0..n).map(|i| dh[i] * z[i] * (1.0 - c[i] * c[i])).collect(),
    );

    // candidate: c = tanh(W_xh x + W_hh (r ∘ h_prev) + b_h)
    let rh = r.hadamard(h_prev)?;
    g.w_xh.add_outer(&da_c, &step.x)?;
    g.w_hh.add_outer(&da_c, &rh)?;
    add_into(&mut g.b_h, &da_c);
    let d_rh = p.w_hh.matvec_transpose(&da_c)?;
    let da_r = DenseVector::from_vec_unchecked(
        (0..n).map(|i| d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i])).collect(),
    );
    for i in 0..n {
        dh_prev[i] += d_rh[i] * r[i];
    }

    g.w_xr.add_outer(&da_r, &step.x)?;
    g.w_hr.add_outer(&da_r, h_prev)?;
    add_into(&mut g.b_r, &da_r);

    g.w_xz.add_outer(&da_z, &step.x)?;
    g.w_hz.add_outer(&da_z, h_prev)?;
    add_into(&mut g.b_z, &da_z);

    dh_prev
        .add(&p.w_hr.matvec_transpose(&da_r)?)?
        .add(&p.w_hz.matvec_transpose(&da_z)?)
}

fn add_into(dst: &mut DenseVector, src: &DenseVector) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.iter()) {
        *d += s;
    }
}

/// Central differences `(L(θ+ε) − L(θ−ε)) / 2ε` for every scalar parameter,
/// each loss from a fresh forward pass. Validated for ε in [`FD_EPS_RANGE`].
pub fn finite_difference_grads(
    p: &Params,
    xs: &DenseMatrix,
    ys: &DenseMatrix,
    mask: &[bool],
    eps: f64,
) -> Result<Gradients> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    validate_sequence(p, xs, ys, mask)?;
    let mut probe = p.clone();
    let mut grads = Gradients::zeros_like(p);
    let mut numeric = Vec::with_capacity(p.num_params());
    for i in 0..p.num_params() {
        let orig = *probe.flat_entry_mut(i);
        *probe.flat_entry_mut(i) = orig + eps;
        let plus = sequence_loss(&probe, xs, ys, mask)?;
        *probe.flat_entry_mut(i) = orig - eps;
        let minus = sequence_loss(&probe, xs, ys, mask)?;
        *probe.flat_entry_mut(i) = orig;
        numeric.push((plus - minus) / (2.0 * eps));
    }
    let mut it = numeric.into_iter();
    for arr in grads.arrays_mut() {
        for g in arr.iter_mut() {
            *g = it.next().expect("one value per parameter");
        }
    }
    Ok(grads)
}

/// Rescales `g` so its global L2 norm does not exceed `threshold`. Gradients
/// already within the bound are returned untouched.
pub fn clip_gradients(mut g: Gradients, threshold: f64) -> Result<Gradients> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("clip threshold must be > 0, got {threshold}")));
    }
    let norm = g.norm();
    if norm > threshold {
        g.scale(threshold / norm);
    }
    Ok(g)
}

/// `max_i |a_i − b_i| / max(REL_ERR_FLOOR, |a_i| + |b_i|)`.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> Result<f64> {
    if !a.inner.same_layout(&b.inner) {
        return Err(Error::shape("max_relative_error", a.inner.dims(), b.inner.dims()));
    }
    Ok(a
        .flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{CellKind, Dims};
    use crate::numerics::Rng;

    fn random_problem(kind: CellKind, dims: Dims, t_len: usize, seed: u64) -> (Params, DenseMatrix, DenseMatrix, Vec<bool>) {
        let mut rng = Rng::new(seed);
        let p = Params::init(kind, dims, 0.8, &mut rng).unwrap();
        let mut randomize_biases = p.clone();
        for (arr, view) in randomize_biases.arrays_mut().into_iter().zip(p.arrays()) {
            if view.shape.len() == 1 {
                arr.iter_mut().for_each(|b| *b = rng.uniform_range(-0.5, 0.5));
            }
        }
        let xs = DenseMatrix::from_vec(t_len, dims.d_in, (0..t_len * dims.d_in).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let ys = DenseMatrix::from_vec(t_len, dims.d_out, (0..t_len * dims.d_out).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let mask = (0..t_len).map(|t| t % 3 != 0).collect();
        (randomize_biases, xs, ys, mask)
    }

    #[test]
    fn zero_model_zero_targets_has_zero_loss_and_gradient() {
        let p = Params::zeros(CellKind::Gru, Dims::new(2, 3, 1).unwrap());
        let xs = DenseMatrix::from_vec(4, 2, vec![0.5; 8]).unwrap();
        let ys = DenseMatrix::zeros(4, 1);
        let mask = vec![true; 4];
        let trace = forward_sequence(&p, &xs, &ys, &mask).unwrap();
        assert_eq!(trace.total_loss, 0.0);
        let g = backward_sequence(&p, &trace, &xs, &ys, &mask).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_loss_is_single_step_mse() {
        let (p, xs, ys, _) = random_problem(CellKind::Tanh, Dims::new(2, 3, 2).unwrap(), 1, 4);
        let trace = forward_sequence(&p, &xs, &ys, &[true]).unwrap();
        let step = p.step(&DenseVector::zeros(3), &xs.row_vector(0)).unwrap();
        assert_eq!(trace.total_loss, squared_error_mean(step.y.as_slice(), ys.row(0)));
    }

    #[test]
    fn trace_chains_hidden_states() {
        let (p, xs, ys, mask) = random_problem(CellKind::Gru, Dims::new(3, 4, 2).unwrap(), 6, 8);
        let trace = forward_sequence(&p, &xs, &ys, &mask).unwrap();
        for t in 1..trace.steps.len() {
            assert_eq!(trace.steps[t].h_prev, trace.steps[t - 1].h);
        }
        assert!(trace.per_step_loss.iter().all(|&l| l >= 0.0));
        for (t, &m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(trace.per_step_loss[t], 0.0);
            }
        }
    }

    #[test]
    fn forward_rejects_bad_sequences() {
        let p = Params::zeros(CellKind::Tanh, Dims::new(2, 3, 1).unwrap());
        let xs = DenseMatrix::zeros(3, 2);
        let ys = DenseMatrix::zeros(3, 1);
        assert!(matches!(forward_sequence(&p, &xs, &ys, &[false; 3]), Err(Error::EmptyMask)));
        assert!(forward_sequence(&p, &xs, &ys, &[true; 2]).is_err());
        assert!(forward_sequence(&p, &DenseMatrix::zeros(3, 1), &ys, &[true; 3]).is_err());
        assert!(forward_sequence(&p, &DenseMatrix::zeros(0, 2), &DenseMatrix::zeros(0, 1), &[]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for kind in [CellKind::Tanh, CellKind::Gru] {
            let (p, xs, ys, mask) = random_problem(kind, Dims::new(3, 6, 2).unwrap(), 7, 42);
            let trace = forward_sequence(&p, &xs, &ys, &mask).unwrap();
            let analytic = backward_sequence(&p, &trace, &xs, &ys, &mask).unwrap();
            let numeric = finite_difference_grads(&p, &xs, &ys, &mask, 1e-5).unwrap();
            let err = max_relative_error(&analytic, &numeric).unwrap();
            assert!(err < 1e-4, "{kind}: max relative error {err}");
        }
    }

    #[test]
    fn output_bias_gradient_of_constant_predictor() {
        // Zero weights: y_t = b_y for every t, so L = mean_t (b - target_t)^2
        // and dL/db = 2 (b - mean(target)).
        let mut p = TanhParams::zeros(Dims::new(1, 1, 1).unwrap());
        p.b_y = DenseVector::from_vec(vec![0.7]).unwrap();
        let p = Params::Tanh(p);
        let xs = DenseMatrix::from_vec(4, 1, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let ys = DenseMatrix::zeros(4, 1);
        let mask = [false, true, true, true];
        let expected = 2.0 * 0.7;
        let trace = forward_sequence(&p, &xs, &ys, &mask).unwrap();
        let g = backward_sequence(&p, &trace, &xs, &ys, &mask).unwrap();
        let fd = finite_difference_grads(&p, &xs, &ys, &mask, 1e-5).unwrap();
        let b_y = |g: &Gradients| *g.flatten().last().unwrap();
        assert!((b_y(&g) - expected).abs() < 1e-12);
        assert!((b_y(&fd) - expected).abs() < 1e-9);
    }

    #[test]
    fn finite_difference_error_shrinks_quadratically() {
        let (p, xs, ys, mask) = random_problem(CellKind::Gru, Dims::new(2, 3, 1).unwrap(), 5, 17);
        let trace = forward_sequence(&p, &xs, &ys, &mask).unwrap();
        let exact = backward_sequence(&p, &trace, &xs, &ys, &mask).unwrap().flatten();
        let err = |eps: f64| {
            let fd = finite_difference_grads(&p, &xs, &ys, &mask, eps).unwrap().flatten();
            fd.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(1e-2), err(5e-3));
        // Halving eps should cut the truncation error by about 4x.
        assert!(fine < coarse / 3.0, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn clip_examples() {
        let p = Params::zeros(CellKind::Tanh, Dims::new(1, 1, 1).unwrap());
        let mut g = Gradients::zeros_like(&p);
        // b_y and W_hy hold 6 and 8: norm 10.
        g.arrays_mut()[3][0] = 8.0;
        g.arrays_mut()[4][0] = 6.0;
        let halved = clip_gradients(g.clone(), 5.0).unwrap();
        assert_eq!(halved.flatten(), vec![0.0, 0.0, 0.0, 4.0, 3.0]);

        let mut small = g.clone();
        small.scale(0.3);
        assert_eq!(clip_gradients(small.clone(), 5.0).unwrap(), small);

        let zeros = Gradients::zeros_like(&p);
        assert_eq!(clip_gradients(zeros.clone(), 1e-9).unwrap(), zeros);
        assert!(clip_gradients(zeros, 0.0).is_err());
    }

    #[test]
    fn masked_targets_do_not_matter() {
        let (p, xs, ys, mask) = random_problem(CellKind::Gru, Dims::new(2, 4, 2).unwrap(), 6, 3);
        let mut ys2 = ys.clone();
        for t in (0..6).filter(|&t| !mask[t]) {
            ys2[(t, 0)] = 123.0;
            ys2[(t, 1)] = -9.0;
        }
        let a = forward_sequence(&p, &xs, &ys, &mask).unwrap();
        let b = forward_sequence(&p, &xs, &ys2, &mask).unwrap();
        assert_eq!(a.total_loss, b.total_loss);
        assert_eq!(
            backward_sequence(&p, &a, &xs, &ys, &mask).unwrap(),
            backward_sequence(&p, &b, &xs, &ys2, &mask).unwrap()
        );
    }
}
