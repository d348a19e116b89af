//! Parameter containers and single-step dynamics for the Tanh-RNN and GRU
//! cells, both followed by a linear output projection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Tanh,
    Gru,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Tanh => "tanh",
            CellKind::Gru => "gru",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(CellKind::Tanh),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::InvalidArgument(format!(
                "unknown cell kind {other:?} (expected tanh or gru)"
            ))),
        }
    }
}

/// Input width, hidden width and output width of one recurrent layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl Dims {
    pub fn new(d_in: usize, hidden: usize, d_out: usize) -> Result<Self> {
        if d_in == 0 || hidden == 0 || d_out == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be >= 1, got d_in={d_in} hidden={hidden} d_out={d_out}"
            )));
        }
        Ok(Self { d_in, hidden, d_out })
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.d_in, self.hidden, self.d_out)
    }
}

/// Borrowed view of one named parameter array.
#[derive(Clone, Debug)]
pub struct ArrayView<'a> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn mat_view<'a>(name: &'static str, m: &'a DenseMatrix) -> ArrayView<'a> {
    ArrayView {
        name,
        shape: vec![m.rows(), m.cols()],
        data: m.as_slice(),
    }
}

fn vec_view<'a>(name: &'static str, v: &'a DenseVector) -> ArrayView<'a> {
    ArrayView {
        name,
        shape: vec![v.len()],
        data: v.as_slice(),
    }
}

/// Parameters of the Tanh cell plus output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct TanhParams {
    pub w_xh: DenseMatrix,
    pub w_hh: DenseMatrix,
    pub b_h: DenseVector,
    pub w_hy: DenseMatrix,
    pub b_y: DenseVector,
}

/// Parameters of the GRU cell plus output projection. Blocks are kept in the
/// order update gate, reset gate, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_xz: DenseMatrix,
    pub w_hz: DenseMatrix,
    pub b_z: DenseVector,
    pub w_xr: DenseMatrix,
    pub w_hr: DenseMatrix,
    pub b_r: DenseVector,
    pub w_xh: DenseMatrix,
    pub w_hh: DenseMatrix,
    pub b_h: DenseVector,
    pub w_hy: DenseMatrix,
    pub b_y: DenseVector,
}

/// Gate activations of one GRU step.
#[derive(Clone, Debug, PartialEq)]
pub struct GruGates {
    pub z: DenseVector,
    pub r: DenseVector,
    pub candidate: DenseVector,
}

/// Everything one step computes that backpropagation needs again.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: DenseVector,
    pub h_prev: DenseVector,
    pub h: DenseVector,
    pub gates: Option<GruGates>,
    pub y: DenseVector,
}

fn check_len(op: &'static str, what: &str, v: &DenseVector, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::shape(
            op,
            format!("{what} len {}", v.len()),
            format!("expected {expected}"),
        ));
    }
    Ok(())
}

fn project(w_hy: &DenseMatrix, b_y: &DenseVector, h: &DenseVector) -> Result<DenseVector> {
    check_len("output_project", "h_t", h, w_hy.cols())?;
    w_hy.matvec(h)?.add(b_y)
}

impl TanhParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { d_in, hidden, d_out } = dims;
        Self {
            w_xh: DenseMatrix::zeros(hidden, d_in),
            w_hh: DenseMatrix::zeros(hidden, hidden),
            b_h: DenseVector::zeros(hidden),
            w_hy: DenseMatrix::zeros(d_out, hidden),
            b_y: DenseVector::zeros(d_out),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d_in: self.w_xh.cols(),
            hidden: self.w_hh.rows(),
            d_out: self.w_hy.rows(),
        }
    }

    /// `h_t = tanh(W_xh x_t + W_hh h_prev + b_h)`, then the output projection.
    pub fn step(&self, h_prev: &DenseVector, x: &DenseVector) -> Result<StepCache> {
        let dims = self.dims();
        check_len("tanh_step", "x_t", x, dims.d_in)?;
        check_len("tanh_step", "h_prev", h_prev, dims.hidden)?;
        let pre = self
            .w_xh
            .matvec(x)?
            .add(&self.w_hh.matvec(h_prev)?)?
            .add(&self.b_h)?;
        let h = pre.tanh_map();
        let y = self.output_project(&h)?;
        Ok(StepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            h,
            gates: None,
            y,
        })
    }

    /// `y_t = W_hy h_t + b_y`.
    pub fn output_project(&self, h: &DenseVector) -> Result<DenseVector> {
        project(&self.w_hy, &self.b_y, h)
    }

    fn arrays(&self) -> Vec<ArrayView<'_>> {
        vec![
            mat_view("W_xh", &self.w_xh),
            mat_view("W_hh", &self.w_hh),
            vec_view("b_h", &self.b_h),
            mat_view("W_hy", &self.w_hy),
            vec_view("b_y", &self.b_y),
        ]
    }

    fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_xh.as_mut_slice(),
            self.w_hh.as_mut_slice(),
            self.b_h.as_mut_slice(),
            self.w_hy.as_mut_slice(),
            self.b_y.as_mut_slice(),
        ]
    }
}

impl GruParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { d_in, hidden, d_out } = dims;
        Self {
            w_xz: DenseMatrix::zeros(hidden, d_in),
            w_hz: DenseMatrix::zeros(hidden, hidden),
            b_z: DenseVector::zeros(hidden),
            w_xr: DenseMatrix::zeros(hidden, d_in),
            w_hr: DenseMatrix::zeros(hidden, hidden),
            b_r: DenseVector::zeros(hidden),
            w_xh: DenseMatrix::zeros(hidden, d_in),
            w_hh: DenseMatrix::zeros(hidden, hidden),
            b_h: DenseVector::zeros(hidden),
            w_hy: DenseMatrix::zeros(d_out, hidden),
            b_y: DenseVector::zeros(d_out),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d_in: self.w_xh.cols(),
            hidden: self.w_hh.rows(),
            d_out: self.w_hy.rows(),
        }
    }

    /// One GRU step:
    ///
    /// ```text
    /// z  = σ(W_xz x + W_hz h_prev + b_z)
    /// r  = σ(W_xr x + W_hr h_prev + b_r)
    /// h~ = tanh(W_xh x + W_hh (r ∘ h_prev) + b_h)
    /// h  = (1 − z) ∘ h_prev + z ∘ h~
    /// ```
    ///
    /// followed by the output projection.
    pub fn step(&self, h_prev: &DenseVector, x: &DenseVector) -> Result<StepCache> {
        let dims = self.dims();
        check_len("gru_step", "x_t", x, dims.d_in)?;
        check_len("gru_step", "h_prev", h_prev, dims.hidden)?;

        let z = self
            .w_xz
            .matvec(x)?
            .add(&self.w_hz.matvec(h_prev)?)?
            .add(&self.b_z)?
            .sigmoid_map();
        let r = self
            .w_xr
            .matvec(x)?
            .add(&self.w_hr.matvec(h_prev)?)?
            .add(&self.b_r)?
            .sigmoid_map();
        let candidate = self
            .w_xh
            .matvec(x)?
            .add(&self.w_hh.matvec(&r.hadamard(h_prev)?)?)?
            .add(&self.b_h)?
            .tanh_map();

        let h = DenseVector::from_vec_unchecked(
            (0..dims.hidden)
                .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * candidate[i])
                .collect(),
        );
        let y = self.output_project(&h)?;
        Ok(StepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            h,
            gates: Some(GruGates { z, r, candidate }),
            y,
        })
    }

    /// `y_t = W_hy h_t + b_y`.
    pub fn output_project(&self, h: &DenseVector) -> Result<DenseVector> {
        project(&self.w_hy, &self.b_y, h)
    }

    fn arrays(&self) -> Vec<ArrayView<'_>> {
        vec![
            mat_view("W_xz", &self.w_xz),
            mat_view("W_hz", &self.w_hz),
            vec_view("b_z", &self.b_z),
            mat_view("W_xr", &self.w_xr),
            mat_view("W_hr", &self.w_hr),
            vec_view("b_r", &self.b_r),
            mat_view("W_xh", &self.w_xh),
            mat_view("W_hh", &self.w_hh),
            vec_view("b_h", &self.b_h),
            mat_view("W_hy", &self.w_hy),
            vec_view("b_y", &self.b_y),
        ]
    }

    fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_xz.as_mut_slice(),
            self.w_hz.as_mut_slice(),
            self.b_z.as_mut_slice(),
            self.w_xr.as_mut_slice(),
            self.w_hr.as_mut_slice(),
            self.b_r.as_mut_slice(),
            self.w_xh.as_mut_slice(),
            self.w_hh.as_mut_slice(),
            self.b_h.as_mut_slice(),
            self.w_hy.as_mut_slice(),
            self.b_y.as_mut_slice(),
        ]
    }
}

/// Parameters of either cell kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    Tanh(TanhParams),
    Gru(GruParams),
}

impl Params {
    pub fn zeros(kind: CellKind, dims: Dims) -> Self {
        match kind {
            CellKind::Tanh => Params::Tanh(TanhParams::zeros(dims)),
            CellKind::Gru => Params::Gru(GruParams::zeros(dims)),
        }
    }

    /// Draws every weight uniformly from `[-scale, scale]`, in array order;
    /// biases start at zero.
    pub fn init(kind: CellKind, dims: Dims, scale: f64, rng: &mut Rng) -> Result<Self> {
        let dims = Dims::new(dims.d_in, dims.hidden, dims.d_out)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "init scale must be a positive finite number, got {scale}"
            )));
        }
        let mut p = Self::zeros(kind, dims);
        let is_weight: Vec<bool> = p.arrays().iter().map(|a| a.shape.len() == 2).collect();
        for (arr, weight) in p.arrays_mut().into_iter().zip(is_weight) {
            if weight {
                for w in arr.iter_mut() {
                    *w = rng.uniform_range(-scale, scale);
                }
            }
        }
        Ok(p)
    }

    /// The default init scale, `1/sqrt(hidden)`.
    pub fn default_scale(hidden: usize) -> f64 {
        1.0 / (hidden.max(1) as f64).sqrt()
    }

    pub fn kind(&self) -> CellKind {
        match self {
            Params::Tanh(_) => CellKind::Tanh,
            Params::Gru(_) => CellKind::Gru,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            Params::Tanh(p) => p.dims(),
            Params::Gru(p) => p.dims(),
        }
    }

    pub fn step(&self, h_prev: &DenseVector, x: &DenseVector) -> Result<StepCache> {
        match self {
            Params::Tanh(p) => p.step(h_prev, x),
            Params::Gru(p) => p.step(h_prev, x),
        }
    }

    pub fn output_project(&self, h: &DenseVector) -> Result<DenseVector> {
        match self {
            Params::Tanh(p) => p.output_project(h),
            Params::Gru(p) => p.output_project(h),
        }
    }

    /// Named views over every parameter array, in serialization order.
    pub fn arrays(&self) -> Vec<ArrayView<'_>> {
        match self {
            Params::Tanh(p) => p.arrays(),
            Params::Gru(p) => p.arrays(),
        }
    }

    /// Mutable slices in the same order as [`Params::arrays`].
    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Params::Tanh(p) => p.arrays_mut(),
            Params::Gru(p) => p.arrays_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.arrays().iter().map(|a| a.data.len()).sum()
    }

    /// Copies every entry into one flat vector, in array order.
    pub fn flatten(&self) -> Vec<f64> {
        self.arrays().iter().flat_map(|a| a.data.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.data.iter().all(|v| v.is_finite()))
    }

    /// Scalar entry at flat index `i` (array order), mutable.
    pub(crate) fn flat_entry_mut(&mut self, mut i: usize) -> &mut f64 {
        for arr in self.arrays_mut() {
            if i < arr.len() {
                return &mut arr[i];
            }
            i -= arr.len();
        }
        panic!("flat parameter index out of range");
    }

    pub(crate) fn same_layout(&self, other: &Params) -> bool {
        self.kind() == other.kind() && self.dims() == other.dims()
    }
}
