//! Truncated joint probability generating functions.
//!
//! A [`CoeffTensor`] holds the coefficients `P(N = n)` of a joint PGF for
//! `0 <= n_m <= n_max` in every dimension. A [`GridFunction`] holds the same
//! PGF sampled on the product of `G`-th roots of unity. Moving between the two
//! is an axis-wise DFT, which is the exact trapezoidal discretisation of the
//! Cauchy coefficient integral on the unit circle.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft::{fft_axis, strides, unravel, Direction};
use crate::model::POLYDISC_TOL;

/// Largest supported number of dimensions.
pub const MAX_DIMS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PgfError {
    #[error("point outside the closed unit polydisc: |z[{index}]| = {modulus}")]
    OutsidePolydisc { index: usize, modulus: f64 },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("index {index} out of range 0..={n_max}")]
    IndexOutOfRange { index: usize, n_max: usize },
    #[error("coefficient has imaginary part {0:e} beyond tolerance")]
    ImaginaryResidue(f64),
    #[error("coefficient has negative real part {0:e} beyond tolerance")]
    NegativeMass(f64),
    #[error("total mass drifted by {0:e}")]
    MassDrift(f64),
    #[error("invalid tensor encoding: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epoch {
    Begin,
    End,
}

impl Epoch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Epoch::Begin => "begin",
            Epoch::End => "end",
        }
    }
}

/// Which visit epoch a tensor describes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpochTag {
    pub queue: Option<usize>,
    pub epoch: Option<Epoch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTensor {
    dims: usize,
    n_max: usize,
    coeffs: Vec<Complex64>,
    pub tag: EpochTag,
}

fn check_dims(dims: usize) -> Result<(), PgfError> {
    if dims == 0 || dims > MAX_DIMS {
        return Err(PgfError::SizeMismatch(format!(
            "dimension count {dims} outside 1..={MAX_DIMS}"
        )));
    }
    Ok(())
}

fn checked_len(side: usize, dims: usize) -> Result<usize, PgfError> {
    let mut len = 1usize;
    for _ in 0..dims {
        len = len
            .checked_mul(side)
            .ok_or_else(|| PgfError::SizeMismatch("tensor too large".into()))?;
    }
    Ok(len)
}

impl CoeffTensor {
    pub fn new(dims: usize, n_max: usize, coeffs: Vec<Complex64>) -> Result<Self, PgfError> {
        check_dims(dims)?;
        let len = checked_len(n_max + 1, dims)?;
        if coeffs.len() != len {
            return Err(PgfError::SizeMismatch(format!(
                "expected {len} coefficients, got {}",
                coeffs.len()
            )));
        }
        Ok(Self {
            dims,
            n_max,
            coeffs,
            tag: EpochTag::default(),
        })
    }

    pub fn zeros(dims: usize, n_max: usize) -> Self {
        let len = (n_max + 1).pow(dims as u32);
        Self::new(dims, n_max, vec![Complex64::new(0.0, 0.0); len]).expect("valid shape")
    }

    /// All mass at the multi-index `at`.
    pub fn point_mass(dims: usize, n_max: usize, at: &[usize]) -> Result<Self, PgfError> {
        let mut t = Self::zeros(dims, n_max);
        let idx = t.flat_index(at)?;
        t.coeffs[idx] = Complex64::new(1.0, 0.0);
        Ok(t)
    }

    /// Builds the product distribution of independent marginals (each of length `n_max + 1`).
    pub fn from_marginals(marginals: &[Vec<f64>]) -> Result<Self, PgfError> {
        let dims = marginals.len();
        check_dims(dims)?;
        let side = marginals[0].len();
        if side == 0 || marginals.iter().any(|m| m.len() != side) {
            return Err(PgfError::SizeMismatch("marginals must share a length".into()));
        }
        let mut t = Self::zeros(dims, side - 1);
        let shape = t.shape();
        let mut idx = vec![0; dims];
        for (flat, c) in t.coeffs.iter_mut().enumerate() {
            unravel(flat, &shape, &mut idx);
            let p: f64 = idx.iter().zip(marginals).map(|(&n, m)| m[n]).product();
            *c = Complex64::new(p, 0.0);
        }
        Ok(t)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n_max + 1; self.dims]
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn with_tag(mut self, queue: usize, epoch: Epoch) -> Self {
        self.tag = EpochTag {
            queue: Some(queue),
            epoch: Some(epoch),
        };
        self
    }

    pub fn flat_index(&self, at: &[usize]) -> Result<usize, PgfError> {
        if at.len() != self.dims {
            return Err(PgfError::SizeMismatch(format!(
                "expected {} indices, got {}",
                self.dims,
                at.len()
            )));
        }
        let mut flat = 0;
        for &n in at {
            if n > self.n_max {
                return Err(PgfError::IndexOutOfRange {
                    index: n,
                    n_max: self.n_max,
                });
            }
            flat = flat * (self.n_max + 1) + n;
        }
        Ok(flat)
    }

    pub fn get(&self, at: &[usize]) -> Result<Complex64, PgfError> {
        Ok(self.coeffs[self.flat_index(at)?])
    }

    pub fn set(&mut self, at: &[usize], value: Complex64) -> Result<(), PgfError> {
        let idx = self.flat_index(at)?;
        self.coeffs[idx] = value;
        Ok(())
    }

    /// Sum of all coefficients, i.e. the PGF at `(1, ..., 1)`.
    pub fn total_mass(&self) -> Complex64 {
        self.coeffs.iter().sum()
    }

    /// Copy with a different truncation order; extra entries are zero and
    /// dropped entries are discarded.
    pub fn resized(&self, n_max: usize) -> Self {
        let mut out = Self::zeros(self.dims, n_max);
        let shape = self.shape();
        let mut idx = vec![0; self.dims];
        for (flat, &c) in self.coeffs.iter().enumerate() {
            unravel(flat, &shape, &mut idx);
            if idx.iter().all(|&n| n <= n_max) {
                let f = out.flat_index(&idx).expect("in range");
                out.coeffs[f] = c;
            }
        }
        out.tag = self.tag;
        out
    }

    /// Sum of absolute coefficient differences.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .sum()
    }
}

/// Evaluates the truncated PGF `sum_n c_n prod_m z_m^{n_m}`.
pub fn evaluate_at(t: &CoeffTensor, z: &[Complex64]) -> Result<Complex64, PgfError> {
    if z.len() != t.dims {
        return Err(PgfError::SizeMismatch(format!(
            "expected {} coordinates, got {}",
            t.dims,
            z.len()
        )));
    }
    for (index, zm) in z.iter().enumerate() {
        let modulus = zm.norm();
        if !(modulus <= 1.0 + POLYDISC_TOL) {
            return Err(PgfError::OutsidePolydisc { index, modulus });
        }
    }
    Ok(evaluate_unchecked(t, z))
}

pub(crate) fn evaluate_unchecked(t: &CoeffTensor, z: &[Complex64]) -> Complex64 {
    // Nested Horner: fold the last axis first.
    let side = t.n_max + 1;
    let mut level: Vec<Complex64> = t.coeffs.clone();
    for axis in (0..t.dims).rev() {
        let zm = z[axis];
        let next_len = level.len() / side;
        let mut next = vec![Complex64::new(0.0, 0.0); next_len];
        for (o, out) in next.iter_mut().enumerate() {
            let line = &level[o * side..(o + 1) * side];
            let mut acc = Complex64::new(0.0, 0.0);
            for &c in line.iter().rev() {
                acc = acc * zm + c;
            }
            *out = acc;
        }
        level = next;
    }
    level[0]
}

/// The product of unit circles sampled at `G`-th roots of unity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    pub dims: usize,
    pub g: usize,
}

impl TorusGrid {
    pub fn new(dims: usize, g: usize) -> Self {
        Self { dims, g }
    }

    /// Smallest power of two `>= 2 (n_max + 1)`.
    pub fn default_size(n_max: usize) -> usize {
        (2 * (n_max + 1)).next_power_of_two()
    }

    /// `exp(2 pi i k / G)`.
    pub fn node(&self, k: usize) -> Complex64 {
        Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / self.g as f64)
    }

    pub fn nodes(&self) -> Vec<Complex64> {
        (0..self.g).map(|k| self.node(k)).collect()
    }

    pub fn len(&self) -> usize {
        self.g.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.g; self.dims]
    }
}

/// PGF values on a [`TorusGrid`], row-major over node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: TorusGrid,
    pub values: Vec<Complex64>,
}

impl GridFunction {
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[Complex64]) -> Complex64) -> Self {
        let nodes = grid.nodes();
        let shape = grid.shape();
        let mut idx = vec![0; grid.dims];
        let mut z = vec![Complex64::new(0.0, 0.0); grid.dims];
        let values = (0..grid.len())
            .map(|flat| {
                unravel(flat, &shape, &mut idx);
                for (zm, &k) in z.iter_mut().zip(&idx) {
                    *zm = nodes[k];
                }
                f(&z)
            })
            .collect();
        Self { grid, values }
    }

    /// Value at `(1, ..., 1)`, which is node zero.
    pub fn at_one(&self) -> Complex64 {
        self.values[0]
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn pointwise_mul(&mut self, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a *= *b;
        }
    }
}

/// Samples the tensor's PGF at every grid node.
pub fn tensor_to_grid(t: &CoeffTensor, grid: TorusGrid) -> Result<GridFunction, PgfError> {
    if grid.dims != t.dims {
        return Err(PgfError::SizeMismatch(format!(
            "grid has {} dimensions, tensor {}",
            grid.dims, t.dims
        )));
    }
    if grid.g < t.n_max + 1 {
        return Err(PgfError::SizeMismatch(format!(
            "grid size {} below n_max + 1 = {}",
            grid.g,
            t.n_max + 1
        )));
    }
    let shape = grid.shape();
    let st = strides(&shape);
    let mut data = vec![Complex64::new(0.0, 0.0); grid.len()];
    let tshape = t.shape();
    let mut idx = vec![0; t.dims];
    for (flat, &c) in t.coeffs.iter().enumerate() {
        unravel(flat, &tshape, &mut idx);
        let target: usize = idx.iter().zip(&st).map(|(n, s)| n * s).sum();
        data[target] = c;
    }
    for axis in 0..t.dims {
        fft_axis(&mut data, &shape, axis, Direction::Inverse);
    }
    Ok(GridFunction { grid, values: data })
}

/// All `G^M` Fourier coefficients of the grid samples.
pub(crate) fn grid_coefficients(gf: &GridFunction) -> Vec<Complex64> {
    let shape = gf.grid.shape();
    let mut data = gf.values.clone();
    for axis in 0..gf.grid.dims {
        fft_axis(&mut data, &shape, axis, Direction::Forward);
    }
    let scale = 1.0 / gf.grid.len() as f64;
    for v in &mut data {
        *v *= scale;
    }
    data
}

/// Extracts the first `n_max + 1` coefficients per axis.
pub fn grid_to_tensor(gf: &GridFunction, n_max: usize) -> Result<CoeffTensor, PgfError> {
    grid_to_tensor_with_tail(gf, n_max).map(|(t, _)| t)
}

/// Like [`grid_to_tensor`], also returning the real mass carried by the
/// discarded coefficients (indices above `n_max` in some axis).
pub fn grid_to_tensor_with_tail(
    gf: &GridFunction,
    n_max: usize,
) -> Result<(CoeffTensor, f64), PgfError> {
    if gf.grid.g < n_max + 1 {
        return Err(PgfError::SizeMismatch(format!(
            "grid size {} below n_max + 1 = {}",
            gf.grid.g,
            n_max + 1
        )));
    }
    check_dims(gf.grid.dims)?;
    let data = grid_coefficients(gf);
    let shape = gf.grid.shape();
    let mut t = CoeffTensor::zeros(gf.grid.dims, n_max);
    let mut idx = vec![0; gf.grid.dims];
    let mut tail = 0.0;
    for (flat, &c) in data.iter().enumerate() {
        unravel(flat, &shape, &mut idx);
        if idx.iter().all(|&n| n <= n_max) {
            let f = t.flat_index(&idx).expect("in range");
            t.coeffs[f] = c;
        } else {
            tail += c.re;
        }
    }
    Ok((t, tail))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    pub tol_im: f64,
    pub tol_neg: f64,
    /// Largest `|mass + tail - 1|` that is silently renormalised.
    pub max_drift: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tol_im: 1e-9,
            tol_neg: 1e-9,
            max_drift: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionReport {
    pub max_imag: f64,
    pub min_real: f64,
    pub mass_before: f64,
    pub drift: f64,
}

/// Turns FFT output into a probability tensor: drops imaginary noise, clamps
/// tiny negatives, and renormalises. `tail` is the mass already known to lie
/// outside the truncation box.
pub fn project_to_probability(
    t: &mut CoeffTensor,
    tail: f64,
    opts: &ProjectionOptions,
) -> Result<ProjectionReport, PgfError> {
    let max_imag = t.coeffs.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let min_real = t.coeffs.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
    if !max_imag.is_finite() || max_imag > opts.tol_im {
        return Err(PgfError::ImaginaryResidue(max_imag));
    }
    if !min_real.is_finite() || min_real < -opts.tol_neg {
        return Err(PgfError::NegativeMass(min_real));
    }
    let mut mass = 0.0;
    for c in &mut t.coeffs {
        *c = Complex64::new(c.re.max(0.0), 0.0);
        mass += c.re;
    }
    let drift = (mass + tail - 1.0).abs();
    if drift > opts.max_drift || mass <= 0.0 {
        return Err(PgfError::MassDrift(drift));
    }
    for c in &mut t.coeffs {
        *c /= mass;
    }
    Ok(ProjectionReport {
        max_imag,
        min_real,
        mass_before: mass,
        drift,
    })
}

/// Marginal distribution of coordinate `i` (real parts).
pub fn marginal(t: &CoeffTensor, i: usize) -> Vec<f64> {
    let shape = t.shape();
    let mut out = vec![0.0; t.n_max + 1];
    let mut idx = vec![0; t.dims];
    for (flat, c) in t.coeffs.iter().enumerate() {
        unravel(flat, &shape, &mut idx);
        out[idx[i]] += c.re;
    }
    out
}

/// `E[N_i]` from the coefficients.
pub fn mean(t: &CoeffTensor, i: usize) -> f64 {
    marginal(t, i)
        .iter()
        .enumerate()
        .map(|(n, p)| n as f64 * p)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceExponent {
    /// Result is `E[1{N_i = v} prod_{m != i} z_m^{N_m}]`, placed at `n_i = 0`.
    Dropped,
    /// Result additionally carries `z_i^v`, placed at `n_i = v`.
    Preserved,
}

/// Keeps only the coefficients with `n_i = v`.
pub fn slice_fix(
    t: &CoeffTensor,
    i: usize,
    v: usize,
    exponent: SliceExponent,
) -> Result<CoeffTensor, PgfError> {
    if i >= t.dims {
        return Err(PgfError::SizeMismatch(format!("axis {i} out of range")));
    }
    if v > t.n_max {
        return Err(PgfError::IndexOutOfRange {
            index: v,
            n_max: t.n_max,
        });
    }
    let target = match exponent {
        SliceExponent::Dropped => 0,
        SliceExponent::Preserved => v,
    };
    let shape = t.shape();
    let mut out = CoeffTensor::zeros(t.dims, t.n_max);
    let mut idx = vec![0; t.dims];
    for (flat, &c) in t.coeffs.iter().enumerate() {
        unravel(flat, &shape, &mut idx);
        if idx[i] == v {
            idx[i] = target;
            let f = out.flat_index(&idx).expect("in range");
            out.coeffs[f] = c;
        }
    }
    out.tag = t.tag;
    Ok(out)
}

/// Serialized tensor: shape plus flattened real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorJson {
    pub shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<Epoch>,
}

/// Largest per-axis length accepted when decoding.
pub const MAX_DECODE_SIDE: usize = 4096;
/// Largest coefficient count accepted when decoding.
pub const MAX_DECODE_LEN: usize = 1 << 24;

impl CoeffTensor {
    pub fn to_json_value(&self) -> TensorJson {
        TensorJson {
            shape: self.shape(),
            re: self.coeffs.iter().map(|c| c.re).collect(),
            im: self.coeffs.iter().map(|c| c.im).collect(),
            queue: self.tag.queue.map(|q| q + 1),
            epoch: self.tag.epoch,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("tensor serializes")
    }

    pub fn from_json_value(v: TensorJson) -> Result<Self, PgfError> {
        let dims = v.shape.len();
        check_dims(dims).map_err(|e| PgfError::Decode(e.to_string()))?;
        let side = v.shape[0];
        if side == 0 || side > MAX_DECODE_SIDE || v.shape.iter().any(|&s| s != side) {
            return Err(PgfError::Decode(
                "shape must be a nonempty hypercube within size limits".into(),
            ));
        }
        let len = checked_len(side, dims).map_err(|e| PgfError::Decode(e.to_string()))?;
        if len > MAX_DECODE_LEN {
            return Err(PgfError::Decode(format!("{len} coefficients exceed limit")));
        }
        if v.re.len() != len || v.im.len() != len {
            return Err(PgfError::Decode(format!(
                "expected {len} real and imaginary parts, got {} and {}",
                v.re.len(),
                v.im.len()
            )));
        }
        if v.re.iter().chain(&v.im).any(|x| !x.is_finite()) {
            return Err(PgfError::Decode("non-finite coefficient".into()));
        }
        if let Some(q) = v.queue {
            if q == 0 {
                return Err(PgfError::Decode("queue index is 1-based".into()));
            }
        }
        let coeffs = v
            .re
            .iter()
            .zip(&v.im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        let mut t = Self::new(dims, side - 1, coeffs)?;
        t.tag = EpochTag {
            queue: v.queue.map(|q| q - 1),
            epoch: v.epoch,
        };
        Ok(t)
    }

    pub fn from_json(text: &str) -> Result<Self, PgfError> {
        let v: TensorJson =
            serde_json::from_str(text).map_err(|e| PgfError::Decode(e.to_string()))?;
        Self::from_json_value(v)
    }
}

/// `n,prob` CSV for a marginal distribution.
pub fn marginal_csv(probs: &[f64]) -> String {
    let mut out = String::from("n,prob\n");
    for (n, p) in probs.iter().enumerate() {
        // Fixed absolute precision keeps files stable against round-off noise.
        let p = if p.abs() < 5e-11 { 0.0 } else { *p };
        out.push_str(&format!("{n},{p:.10}\n"));
    }
    out
}
