//! Selective state-space scan, in its materialized and fused forms.
//!
//! The reference path builds the full `L x D x N` decay and increment
//! tensors before running the recurrence. The fused path evaluates the same
//! factors inside the recurrence and keeps only one `D x N` state plus a
//! `D`-length row of scratch. Both paths evaluate each element as
//!
//! ```text
//! du    = delta[t, d] * u[t, d]
//! state = exp(delta[t, d] * a[d, n]) * state + du * b[t, n]
//! y     = sum_n state[d, n] * c[t, n]   (+ d_skip[d] * u[t, d])
//! ```
//!
//! with identical operand order, so their fp32 outputs are bit-identical.

use crate::error::{Error, Result};
use crate::tensor::{exp_f32, MatMut, MatRef, Tensor};

/// Extents of one scan: sequence length, channels and state width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

/// Borrowed operands of a selective scan (batch size one).
///
/// `b` and `c` may be strided column views of a wider projection.
#[derive(Clone, Copy, Debug)]
pub struct SsmInputs<'a> {
    /// `L x D` input sequence.
    pub u: MatRef<'a>,
    /// `L x D` positive step sizes.
    pub delta: MatRef<'a>,
    /// `D x N` continuous-time state matrix, negative entries.
    pub a: MatRef<'a>,
    /// `L x N` input projection.
    pub b: MatRef<'a>,
    /// `L x N` output projection.
    pub c: MatRef<'a>,
    /// Optional `D` residual gain.
    pub d_skip: Option<&'a [f32]>,
}

impl<'a> SsmInputs<'a> {
    pub fn from_tensors(
        u: &'a Tensor,
        delta: &'a Tensor,
        a: &'a Tensor,
        b: &'a Tensor,
        c: &'a Tensor,
        d_skip: Option<&'a Tensor>,
    ) -> Self {
        Self {
            u: u.mat(),
            delta: delta.mat(),
            a: a.mat(),
            b: b.mat(),
            c: c.mat(),
            d_skip: d_skip.map(Tensor::data),
        }
    }

    pub fn dims(&self) -> Result<ScanDims> {
        let [len, channels] = self.u.shape();
        let state = self.a.cols();
        if self.delta.shape() != [len, channels] {
            return Err(Error::dim(
                "ssm.delta",
                &self.u.shape(),
                &self.delta.shape(),
            ));
        }
        if self.a.rows() != channels {
            return Err(Error::dim("ssm.a", &self.u.shape(), &self.a.shape()));
        }
        if self.b.shape() != [len, state] {
            return Err(Error::dim("ssm.b", &[len, state], &self.b.shape()));
        }
        if self.c.shape() != [len, state] {
            return Err(Error::dim("ssm.c", &[len, state], &self.c.shape()));
        }
        if let Some(skip) = self.d_skip {
            if skip.len() != channels {
                return Err(Error::dim("ssm.d_skip", &[channels], &[skip.len()]));
            }
        }
        if len == 0 || channels == 0 || state == 0 {
            return Err(Error::Shape {
                shape: vec![len, channels, state],
                reason: "scan extents must be at least 1",
            });
        }
        Ok(ScanDims {
            len,
            channels,
            state,
        })
    }
}

/// One time step's worth of scan operands.
#[derive(Clone, Copy, Debug)]
pub struct ScanStep<'a> {
    pub u: &'a [f32],
    pub delta: &'a [f32],
    pub b: &'a [f32],
    pub c: &'a [f32],
}

/// Row-at-a-time source for the fused scan. The scan requests steps
/// `0, 1, .., len - 1` exactly once each, in order.
pub trait StepSource {
    fn len(&self) -> usize;
    fn step(&self, t: usize) -> ScanStep<'_>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl StepSource for SsmInputs<'_> {
    fn len(&self) -> usize {
        self.u.rows()
    }

    fn step(&self, t: usize) -> ScanStep<'_> {
        ScanStep {
            u: self.u.row(t),
            delta: self.delta.row(t),
            b: self.b.row(t),
            c: self.c.row(t),
        }
    }
}

/// Materialized discretization: both tensors are `L x D x N`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedTensors {
    pub a_bar: Tensor,
    pub b_bar_u: Tensor,
}

/// Bytes of working memory the fused scan needs: state plus one row.
pub const fn fused_state_bytes(channels: usize, state: usize) -> usize {
    4 * channels * state + 4 * channels
}

/// Bytes of the two `L x D x N` tensors the reference path materializes.
pub const fn unfused_intermediate_bytes(channels: usize, state: usize, len: usize) -> usize {
    2 * 4 * channels * state * len
}

pub fn discretize_reference(inputs: &SsmInputs) -> Result<DiscretizedTensors> {
    let ScanDims {
        len,
        channels,
        state,
    } = inputs.dims()?;
    let numel = len * channels * state;
    let mut a_bar = Vec::with_capacity(numel);
    let mut b_bar_u = Vec::with_capacity(numel);
    for t in 0..len {
        let (u, delta, b) = (inputs.u.row(t), inputs.delta.row(t), inputs.b.row(t));
        for d in 0..channels {
            let du = delta[d] * u[d];
            let a = inputs.a.row(d);
            for n in 0..state {
                a_bar.push(exp_f32(delta[d] * a[n]));
                b_bar_u.push(du * b[n]);
            }
        }
    }
    let shape = [len, channels, state];
    Ok(DiscretizedTensors {
        a_bar: Tensor::new(&shape, a_bar)?,
        b_bar_u: Tensor::new(&shape, b_bar_u)?,
    })
}

/// Runs the recurrence over materialized `a_bar` / `b_bar_u` from a zero state.
pub fn selective_scan_reference(
    disc: &DiscretizedTensors,
    c: MatRef,
    u: MatRef,
    d_skip: Option<&[f32]>,
) -> Result<Tensor> {
    let shape = disc.a_bar.shape();
    if shape.len() != 3 || disc.b_bar_u.shape() != shape {
        return Err(Error::dim(
            "ssm.discretized",
            disc.a_bar.shape(),
            disc.b_bar_u.shape(),
        ));
    }
    let (len, channels, state) = (shape[0], shape[1], shape[2]);
    if c.shape() != [len, state] {
        return Err(Error::dim("ssm.c", &[len, state], &c.shape()));
    }
    if u.shape() != [len, channels] {
        return Err(Error::dim("ssm.u", &[len, channels], &u.shape()));
    }
    if let Some(skip) = d_skip {
        if skip.len() != channels {
            return Err(Error::dim("ssm.d_skip", &[channels], &[skip.len()]));
        }
    }
    let mut h = vec![0.0f32; channels * state];
    let mut y = Tensor::zeros(&[len, channels])?;
    let (a_bar, b_bar_u) = (disc.a_bar.data(), disc.b_bar_u.data());
    let mut out = y.mat_mut();
    for t in 0..len {
        let (crow, urow) = (c.row(t), u.row(t));
        let yrow = out.row_mut(t);
        for d in 0..channels {
            let base = (t * channels + d) * state;
            let hd = &mut h[d * state..(d + 1) * state];
            for n in 0..state {
                hd[n] = a_bar[base + n] * hd[n] + b_bar_u[base + n];
            }
            let mut acc = 0.0f32;
            for n in 0..state {
                acc += hd[n] * crow[n];
            }
            yrow[d] = match d_skip {
                Some(skip) => acc + skip[d] * urow[d],
                None => acc,
            };
        }
    }
    Ok(y)
}

/// Owned working memory for [`selective_scan_fused_into`].
#[derive(Clone, Debug)]
pub struct ScanScratch {
    state: Vec<f32>,
    row: Vec<f32>,
}

impl ScanScratch {
    pub fn new(channels: usize, state: usize) -> Self {
        Self {
            state: vec![0.0; channels * state],
            row: vec![0.0; channels],
        }
    }

    /// Equals [`fused_state_bytes`] for the extents it was built with.
    pub fn bytes(&self) -> usize {
        4 * (self.state.len() + self.row.len())
    }

    pub fn parts(&mut self) -> (&mut [f32], &mut [f32]) {
        (&mut self.state, &mut self.row)
    }
}

/// Fused streaming scan writing into caller-owned memory.
///
/// `state` must hold `D * N` values and `row` `D` values; neither needs to be
/// initialized. Steps are pulled from `src` in ascending time order and each
/// output row is written as soon as its step is consumed. Allocates nothing.
pub fn selective_scan_fused_into<S: StepSource + ?Sized>(
    src: &S,
    a: MatRef,
    d_skip: Option<&[f32]>,
    state: &mut [f32],
    row: &mut [f32],
    out: &mut MatMut,
) -> Result<()> {
    let (channels, n_state) = (a.rows(), a.cols());
    let len = src.len();
    if state.len() != channels * n_state || row.len() != channels {
        return Err(Error::dim(
            "ssm.scratch",
            &[channels * n_state, channels],
            &[state.len(), row.len()],
        ));
    }
    if out.shape() != [len, channels] {
        return Err(Error::dim("ssm.out", &[len, channels], &out.shape()));
    }
    if let Some(skip) = d_skip {
        if skip.len() != channels {
            return Err(Error::dim("ssm.d_skip", &[channels], &[skip.len()]));
        }
    }
    state.fill(0.0);
    for t in 0..len {
        let step = src.step(t);
        if step.u.len() != channels || step.delta.len() != channels {
            return Err(Error::dim("ssm.step", &[channels], &[step.u.len()]));
        }
        if step.b.len() != n_state || step.c.len() != n_state {
            return Err(Error::dim("ssm.step", &[n_state], &[step.b.len()]));
        }
        for ((r, &dt), &u) in row.iter_mut().zip(step.delta).zip(step.u) {
            *r = dt * u;
        }
        let yrow = out.row_mut(t);
        for d in 0..channels {
            let dt = step.delta[d];
            let du = row[d];
            let ad = a.row(d);
            let hd = &mut state[d * n_state..(d + 1) * n_state];
            let mut acc = 0.0f32;
            for n in 0..n_state {
                hd[n] = exp_f32(dt * ad[n]) * hd[n] + du * step.b[n];
                acc += hd[n] * step.c[n];
            }
            yrow[d] = match d_skip {
                Some(skip) => acc + skip[d] * step.u[d],
                None => acc,
            };
        }
    }
    Ok(())
}

/// Fused scan with freshly allocated output and scratch.
pub fn selective_scan_fused(inputs: &SsmInputs) -> Result<Tensor> {
    let dims = inputs.dims()?;
    let mut scratch = ScanScratch::new(dims.channels, dims.state);
    let mut y = Tensor::zeros(&[dims.len, dims.channels])?;
    let (state, row) = scratch.parts();
    selective_scan_fused_into(
        inputs,
        inputs.a,
        inputs.d_skip,
        state,
        row,
        &mut y.mat_mut(),
    )?;
    Ok(y)
}

/// `discretize_reference` followed by `selective_scan_reference`.
pub fn selective_scan_unfused(inputs: &SsmInputs) -> Result<Tensor> {
    let disc = discretize_reference(inputs)?;
    selective_scan_reference(&disc, inputs.c, inputs.u, inputs.d_skip)
}
