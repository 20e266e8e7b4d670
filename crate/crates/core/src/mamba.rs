//! One Mamba layer: input projection, causal depthwise conv, selection
//! projections, step-size path, selective scan, gating and output projection.

use crate::error::{Error, Result};
use crate::ssm::{self, SsmInputs};
use crate::tensor::{self, silu_scalar, MatMut, MatRef, Tensor};

/// Which selective-scan implementation a forward pass uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ScanPath {
    /// Streaming scan with `D x N` working state.
    #[default]
    Fused,
    /// Materializes the `L x D x N` decay and increment tensors first.
    Reference,
}

impl ScanPath {
    pub fn name(self) -> &'static str {
        match self {
            ScanPath::Fused => "fused",
            ScanPath::Reference => "reference",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MambaConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    pub dt_rank: usize,
}

impl MambaConfig {
    /// Reference-model defaults: `N = 16`, `K = 4`, `expand = 2`,
    /// `dt_rank = ceil(d_model / 16)`.
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            d_state: 16,
            d_conv: 4,
            expand: 2,
            dt_rank: d_model.div_ceil(16),
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    /// Width of the selection projection: `dt_rank + 2N`.
    pub fn xproj_width(&self) -> usize {
        self.dt_rank + 2 * self.d_state
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.d_model,
            self.d_state,
            self.d_conv,
            self.expand,
            self.dt_rank,
        ];
        if extents.contains(&0) {
            return Err(Error::Shape {
                shape: extents.to_vec(),
                reason: "mamba config extents must be at least 1",
            });
        }
        Ok(())
    }
}

/// Learned parameters of one Mamba layer. `A` is stored already negated.
#[derive(Clone, Debug, PartialEq)]
pub struct MambaBlockParams {
    /// `2 * d_inner x d_model`.
    pub w_in: Tensor,
    /// `d_inner x K`.
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    /// `(dt_rank + 2N) x d_inner`, rows ordered dt, B, C.
    pub w_xproj: Tensor,
    /// `d_inner x dt_rank`.
    pub w_dt: Tensor,
    pub b_dt: Tensor,
    /// `d_inner x N`, strictly negative.
    pub a: Tensor,
    pub d_skip: Tensor,
    /// `d_model x d_inner`.
    pub w_out: Tensor,
}

fn expect_shape(name: &'static str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::dim(name, shape, t.shape()));
    }
    Ok(())
}

/// Re-labels a kernel's dimension error with the pipeline stage it came from.
pub(crate) fn at_stage(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Dimension { lhs, rhs, .. } => Error::Dimension {
            op: stage,
            lhs,
            rhs,
        },
        other => other,
    }
}

impl MambaBlockParams {
    pub fn zeros(cfg: &MambaConfig) -> Result<Self> {
        cfg.validate()?;
        let (dm, di, n) = (cfg.d_model, cfg.d_inner(), cfg.d_state);
        Ok(Self {
            w_in: Tensor::zeros(&[2 * di, dm])?,
            conv_w: Tensor::zeros(&[di, cfg.d_conv])?,
            conv_b: Tensor::zeros(&[di])?,
            w_xproj: Tensor::zeros(&[cfg.xproj_width(), di])?,
            w_dt: Tensor::zeros(&[di, cfg.dt_rank])?,
            b_dt: Tensor::zeros(&[di])?,
            a: Tensor::zeros(&[di, n])?,
            d_skip: Tensor::zeros(&[di])?,
            w_out: Tensor::zeros(&[dm, di])?,
        })
    }

    /// Recovers the layer configuration from the parameter shapes.
    pub fn config(&self) -> Result<MambaConfig> {
        if self.w_in.rank() != 2 || !self.w_in.rows().is_multiple_of(2) {
            return Err(Error::dim("mamba.w_in", self.w_in.shape(), &[0, 0]));
        }
        let d_model = self.w_in.cols();
        let d_inner = self.w_in.rows() / 2;
        if !d_inner.is_multiple_of(d_model) {
            return Err(Error::dim("mamba.w_in", self.w_in.shape(), &[0, d_model]));
        }
        let cfg = MambaConfig {
            d_model,
            d_state: self.a.cols(),
            d_conv: self.conv_w.cols(),
            expand: d_inner / d_model,
            dt_rank: self.w_dt.cols(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every shape against `cfg`; does not check the sign of `A`.
    pub fn check_shapes(&self, cfg: &MambaConfig) -> Result<()> {
        cfg.validate()?;
        let (dm, di, n) = (cfg.d_model, cfg.d_inner(), cfg.d_state);
        expect_shape("mamba.w_in", &self.w_in, &[2 * di, dm])?;
        expect_shape("mamba.conv_w", &self.conv_w, &[di, cfg.d_conv])?;
        expect_shape("mamba.conv_b", &self.conv_b, &[di])?;
        expect_shape("mamba.w_xproj", &self.w_xproj, &[cfg.xproj_width(), di])?;
        expect_shape("mamba.w_dt", &self.w_dt, &[di, cfg.dt_rank])?;
        expect_shape("mamba.b_dt", &self.b_dt, &[di])?;
        expect_shape("mamba.a", &self.a, &[di, n])?;
        expect_shape("mamba.d_skip", &self.d_skip, &[di])?;
        expect_shape("mamba.w_out", &self.w_out, &[dm, di])?;
        Ok(())
    }

    /// Shapes plus strict negativity of `A`.
    pub fn validate(&self, cfg: &MambaConfig) -> Result<()> {
        self.check_shapes(cfg)?;
        check_stable(&self.a)
    }
}

pub(crate) fn check_stable(a: &Tensor) -> Result<()> {
    if let Some((i, v)) = a
        .data()
        .iter()
        .enumerate()
        .find(|&(_, &v)| v >= 0.0 || v.is_nan())
    {
        return Err(Error::Stability(format!(
            "state matrix entry {i} is {v}; every entry must be negative"
        )));
    }
    Ok(())
}

/// Activations computed before the scan stage.
#[derive(Clone, Debug)]
pub struct PreScan {
    /// `L x 2 d_inner`; left half feeds the conv, right half is the gate.
    pub xz: Tensor,
    /// Conv + SiLU output, the scan input `u`.
    pub xs: Tensor,
    /// `L x (dt_rank + 2N)` selection projection.
    pub xproj: Tensor,
    /// Softplus step sizes.
    pub delta: Tensor,
    cfg: MambaConfig,
}

impl PreScan {
    pub fn scan_inputs<'a>(&'a self, params: &'a MambaBlockParams) -> Result<SsmInputs<'a>> {
        let n = self.cfg.d_state;
        let proj = self.xproj.mat();
        Ok(SsmInputs {
            u: self.xs.mat(),
            delta: self.delta.mat(),
            a: params.a.mat(),
            b: proj.columns(self.cfg.dt_rank, n)?,
            c: proj.columns(self.cfg.dt_rank + n, n)?,
            d_skip: Some(params.d_skip.data()),
        })
    }

    /// The gate half `z` of the input projection.
    pub fn gate(&self) -> Result<MatRef<'_>> {
        let di = self.cfg.d_inner();
        self.xz.mat().columns(di, di)
    }
}

/// Steps 1 through 4: projections, conv, activation and step sizes.
pub fn pre_scan(params: &MambaBlockParams, x: &Tensor) -> Result<PreScan> {
    let cfg = params.config()?;
    params.check_shapes(&cfg)?;
    if x.rank() != 2 || x.cols() != cfg.d_model {
        return Err(Error::dim(
            "mamba.input",
            &[x.rows(), cfg.d_model],
            x.shape(),
        ));
    }
    let di = cfg.d_inner();
    let xz = tensor::linear(x, &params.w_in, None).map_err(at_stage("mamba.in_proj"))?;
    let conv = tensor::conv_view(
        xz.mat().columns(0, di)?,
        &params.conv_w,
        Some(&params.conv_b),
    )
    .map_err(at_stage("mamba.conv1d"))?;
    let xs = tensor::silu(&conv);
    let xproj = tensor::linear(&xs, &params.w_xproj, None).map_err(at_stage("mamba.x_proj"))?;
    let dt = tensor::linear_view(
        xproj.mat().columns(0, cfg.dt_rank)?,
        &params.w_dt,
        Some(&params.b_dt),
    )
    .map_err(at_stage("mamba.dt_proj"))?;
    let delta = tensor::softplus(&dt);
    Ok(PreScan {
        xz,
        xs,
        xproj,
        delta,
        cfg,
    })
}

/// `out[t, d] = y[t, d] * silu(z[t, d])`.
pub fn gate_into(y: MatRef, z: MatRef, out: &mut MatMut) -> Result<()> {
    if y.shape() != z.shape() || out.shape() != y.shape() {
        return Err(Error::dim("mamba.gate", &y.shape(), &z.shape()));
    }
    for t in 0..y.rows() {
        let (yr, zr) = (y.row(t), z.row(t));
        for (d, slot) in out.row_mut(t).iter_mut().enumerate() {
            *slot = yr[d] * silu_scalar(zr[d]);
        }
    }
    Ok(())
}

/// Gating and output projection.
pub fn post_scan(params: &MambaBlockParams, pre: &PreScan, y_ssm: &Tensor) -> Result<Tensor> {
    let mut gated = Tensor::zeros(y_ssm.shape())?;
    gate_into(y_ssm.mat(), pre.gate()?, &mut gated.mat_mut())?;
    tensor::linear(&gated, &params.w_out, None).map_err(at_stage("mamba.out_proj"))
}

pub fn run_scan(pre: &PreScan, params: &MambaBlockParams, path: ScanPath) -> Result<Tensor> {
    let inputs = pre.scan_inputs(params)?;
    match path {
        ScanPath::Fused => ssm::selective_scan_fused(&inputs),
        ScanPath::Reference => ssm::selective_scan_unfused(&inputs),
    }
    .map_err(at_stage("mamba.scan"))
}

pub fn mamba_forward_with(params: &MambaBlockParams, x: &Tensor, path: ScanPath) -> Result<Tensor> {
    let pre = pre_scan(params, x)?;
    let y = run_scan(&pre, params, path)?;
    post_scan(params, &pre, &y)
}

/// Full layer on the fused streaming scan. `x` is `L x d_model`.
pub fn mamba_forward(params: &MambaBlockParams, x: &Tensor) -> Result<Tensor> {
    mamba_forward_with(params, x, ScanPath::Fused)
}

/// Full layer on the materialized reference scan.
pub fn mamba_forward_reference(params: &MambaBlockParams, x: &Tensor) -> Result<Tensor> {
    mamba_forward_with(params, x, ScanPath::Reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_config() -> MambaConfig {
        MambaConfig {
            d_model: 1,
            d_state: 1,
            d_conv: 1,
            expand: 1,
            dt_rank: 1,
        }
    }

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn defaults() {
        let cfg = MambaConfig::new(64);
        assert_eq!(cfg.d_inner(), 128);
        assert_eq!(cfg.dt_rank, 4);
        assert_eq!(cfg.d_state, 16);
        assert_eq!(cfg.d_conv, 4);
        assert_eq!(MambaConfig::new(65).dt_rank, 5);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = MambaConfig::new(8);
        let p = MambaBlockParams::zeros(&cfg).unwrap();
        let x = Tensor::from_fn(&[5, 8], |i| i as f32 * 0.3 - 1.0).unwrap();
        assert!(mamba_forward(&p, &x)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(mamba_forward_reference(&p, &x)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    /// Scalar layer traced by hand in f64:
    /// x = [1, 2]; w_in = [0.5 | 1.0]; conv_w = 2, conv_b = 0.1; w_xproj = [0.3, 0.7, 1.1];
    /// w_dt = 0.4, b_dt = -0.2; a = -0.9; d_skip = 0.25; w_out = 1.5.
    #[test]
    fn scalar_layer_matches_hand_trace() {
        let p = MambaBlockParams {
            w_in: t(&[2, 1], &[0.5, 1.0]),
            conv_w: t(&[1, 1], &[2.0]),
            conv_b: t(&[1], &[0.1]),
            w_xproj: t(&[3, 1], &[0.3, 0.7, 1.1]),
            w_dt: t(&[1, 1], &[0.4]),
            b_dt: t(&[1], &[-0.2]),
            a: t(&[1, 1], &[-0.9]),
            d_skip: t(&[1], &[0.25]),
            w_out: t(&[1, 1], &[1.5]),
        };
        assert_eq!(p.config().unwrap(), scalar_config());
        let x = t(&[2, 1], &[1.0, 2.0]);

        let silu = |v: f64| v / (1.0 + (-v).exp());
        let softplus = |v: f64| (1.0 + v.exp()).ln();
        let mut h = 0.0f64;
        let mut expected = Vec::new();
        for &xi in &[1.0f64, 2.0] {
            let (xs, z) = (0.5 * xi, 1.0 * xi);
            let u = silu(2.0 * xs + 0.1);
            let (dt_raw, b, c) = (0.3 * u, 0.7 * u, 1.1 * u);
            let delta = softplus(0.4 * dt_raw - 0.2);
            h = (delta * -0.9).exp() * h + delta * b * u;
            let y = h * c + 0.25 * u;
            expected.push(1.5 * y * silu(z));
        }

        for out in [
            mamba_forward(&p, &x).unwrap(),
            mamba_forward_reference(&p, &x).unwrap(),
        ] {
            for (got, want) in out.data().iter().zip(&expected) {
                assert!((*got as f64 - want).abs() < 1e-6, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let cfg = MambaConfig::new(8);
        let mut p = MambaBlockParams::zeros(&cfg).unwrap();
        let x = Tensor::zeros(&[3, 7]).unwrap();
        match mamba_forward(&p, &x) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "mamba.input"),
            other => panic!("{other:?}"),
        }
        p.w_out = Tensor::zeros(&[8, 3]).unwrap();
        let x = Tensor::zeros(&[3, 8]).unwrap();
        match mamba_forward(&p, &x) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "mamba.w_out"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stability_check_rejects_non_negative_a() {
        let cfg = MambaConfig::new(4);
        let mut p = MambaBlockParams::zeros(&cfg).unwrap();
        p.a.data_mut().fill(-1.0);
        assert!(p.validate(&cfg).is_ok());
        p.a.data_mut()[5] = 0.0;
        assert!(matches!(p.validate(&cfg), Err(Error::Stability(_))));
        p.a.data_mut()[5] = f32::NAN;
        assert!(matches!(p.validate(&cfg), Err(Error::Stability(_))));
    }
}
