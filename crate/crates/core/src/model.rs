//! Sequence classifiers: linear projection, one Mamba layer, temporal
//! pooling and a linear head. Also the seeded synthetic weight generator.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::mamba::{self, at_stage, MambaBlockParams, MambaConfig, ScanPath};
use crate::tensor::{self, Tensor};

/// How the Mamba layer output is reduced over time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

impl Pooling {
    pub fn code(self) -> u32 {
        match self {
            Pooling::Mean => 0,
            Pooling::Max => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Pooling::Mean),
            1 => Some(Pooling::Max),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    pub pooling: Pooling,
    pub mamba: MambaConfig,
}

impl ClassifierConfig {
    /// Keyword spotting: 40 log-mel bins over 100 frames.
    pub fn kws(num_classes: usize) -> Self {
        Self {
            input_dim: 40,
            seq_len: 100,
            num_classes,
            pooling: Pooling::Mean,
            mamba: MambaConfig::new(64),
        }
    }

    /// Activity recognition: 561 features padded to 570, read as 10 steps of 57.
    pub fn har() -> Self {
        Self {
            input_dim: 57,
            seq_len: 10,
            num_classes: 6,
            pooling: Pooling::Mean,
            mamba: MambaConfig::new(64),
        }
    }

    pub fn d_model(&self) -> usize {
        self.mamba.d_model
    }

    pub fn validate(&self) -> Result<()> {
        self.mamba.validate()?;
        let extents = [self.input_dim, self.seq_len, self.num_classes];
        if extents.contains(&0) {
            return Err(Error::Shape {
                shape: extents.to_vec(),
                reason: "classifier extents must be at least 1",
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `d_model x input_dim`.
    pub w_proj: Tensor,
    pub b_proj: Tensor,
    pub block: MambaBlockParams,
    /// `num_classes x d_model`.
    pub w_head: Tensor,
    pub b_head: Tensor,
}

impl ClassifierParams {
    pub fn zeros(cfg: &ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            w_proj: Tensor::zeros(&[cfg.d_model(), cfg.input_dim])?,
            b_proj: Tensor::zeros(&[cfg.d_model()])?,
            block: MambaBlockParams::zeros(&cfg.mamba)?,
            w_head: Tensor::zeros(&[cfg.num_classes, cfg.d_model()])?,
            b_head: Tensor::zeros(&[cfg.num_classes])?,
        })
    }

    pub fn check_shapes(&self, cfg: &ClassifierConfig) -> Result<()> {
        cfg.validate()?;
        let expect = |name, t: &Tensor, shape: &[usize]| {
            if t.shape() == shape {
                Ok(())
            } else {
                Err(Error::dim(name, shape, t.shape()))
            }
        };
        expect(
            "classifier.w_proj",
            &self.w_proj,
            &[cfg.d_model(), cfg.input_dim],
        )?;
        expect("classifier.b_proj", &self.b_proj, &[cfg.d_model()])?;
        expect(
            "classifier.w_head",
            &self.w_head,
            &[cfg.num_classes, cfg.d_model()],
        )?;
        expect("classifier.b_head", &self.b_head, &[cfg.num_classes])?;
        self.block.check_shapes(&cfg.mamba)
    }

    /// Shapes plus the stability of the state matrix.
    pub fn validate(&self, cfg: &ClassifierConfig) -> Result<()> {
        self.check_shapes(cfg)?;
        mamba::check_stable(&self.block.a)
    }
}

/// Intermediate results of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Mamba layer output, `L x d_model`.
    pub block_out: Tensor,
    pub logits: Tensor,
}

/// A configured classifier ready for inference.
#[derive(Clone, Debug)]
pub struct Classifier {
    config: ClassifierConfig,
    params: ClassifierParams,
}

impl Classifier {
    /// Checks shapes only; the sign of `A` is enforced at bundle load.
    pub fn new(config: ClassifierConfig, params: ClassifierParams) -> Result<Self> {
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ClassifierParams {
        &self.params
    }

    pub fn into_parts(self) -> (ClassifierConfig, ClassifierParams) {
        (self.config, self.params)
    }

    pub fn check_features(&self, features: &Tensor) -> Result<()> {
        let want = [self.config.seq_len, self.config.input_dim];
        if features.shape() != want {
            return Err(Error::dim("classifier.features", &want, features.shape()));
        }
        Ok(())
    }

    /// Input of the Mamba layer: the projected features.
    pub fn project(&self, features: &Tensor) -> Result<Tensor> {
        self.check_features(features)?;
        tensor::linear(features, &self.params.w_proj, Some(&self.params.b_proj))
            .map_err(at_stage("classifier.proj"))
    }

    pub fn head(&self, block_out: &Tensor) -> Result<Tensor> {
        let pooled = match self.config.pooling {
            Pooling::Mean => tensor::mean_pool_time(block_out),
            Pooling::Max => tensor::max_pool_time(block_out),
        };
        let pooled = pooled.reshape(&[1, self.config.d_model()])?;
        let logits = tensor::linear(&pooled, &self.params.w_head, Some(&self.params.b_head))
            .map_err(at_stage("classifier.head"))?;
        logits.reshape(&[self.config.num_classes])
    }

    pub fn trace(&self, features: &Tensor, path: ScanPath) -> Result<Trace> {
        let hidden = self.project(features)?;
        let block_out = mamba::mamba_forward_with(&self.params.block, &hidden, path)?;
        let logits = self.head(&block_out)?;
        Ok(Trace { block_out, logits })
    }

    pub fn forward_with(&self, features: &Tensor, path: ScanPath) -> Result<Tensor> {
        Ok(self.trace(features, path)?.logits)
    }

    /// Logits through the fused scan.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        self.forward_with(features, ScanPath::Fused)
    }

    pub fn forward_reference(&self, features: &Tensor) -> Result<Tensor> {
        self.forward_with(features, ScanPath::Reference)
    }

    pub fn predict_with(&self, features: &Tensor, path: ScanPath) -> Result<usize> {
        Ok(tensor::argmax(&self.forward_with(features, path)?))
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, features: &Tensor) -> Result<usize> {
        self.predict_with(features, ScanPath::Fused)
    }
}

/// Offset applied to the seed of the feature stream so it never coincides
/// with the parameter stream for the same user seed.
const FEATURE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

fn gaussian(rng: &mut Xoshiro256PlusPlus, shape: &[usize], std: f32) -> Result<Tensor> {
    Tensor::from_fn(shape, |_| rng.sample::<f32, _>(StandardNormal) * std)
}

fn fan_in_normal(rng: &mut Xoshiro256PlusPlus, shape: &[usize], fan_in: usize) -> Result<Tensor> {
    gaussian(rng, shape, 1.0 / (fan_in as f32).sqrt())
}

/// Deterministic pseudo-random parameters.
///
/// Uses xoshiro256++ seeded through SplitMix64 (`seed_from_u64`). Weights and
/// biases are `N(0, 1/sqrt(fan_in))`; `A = -exp(g)` with `g ~ N(0, 1)`;
/// `b_dt` is the inverse softplus of a log-uniform step in `[1e-3, 1e-1]`;
/// `d_skip` is all ones. Tensors are drawn in declaration order.
pub fn synth_params(cfg: &ClassifierConfig, seed: u64) -> Result<ClassifierParams> {
    cfg.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let m = &cfg.mamba;
    let (dm, di, n) = (m.d_model, m.d_inner(), m.d_state);
    let w_proj = fan_in_normal(&mut rng, &[dm, cfg.input_dim], cfg.input_dim)?;
    let b_proj = fan_in_normal(&mut rng, &[dm], cfg.input_dim)?;
    let w_in = fan_in_normal(&mut rng, &[2 * di, dm], dm)?;
    let conv_w = fan_in_normal(&mut rng, &[di, m.d_conv], m.d_conv)?;
    let conv_b = fan_in_normal(&mut rng, &[di], m.d_conv)?;
    let w_xproj = fan_in_normal(&mut rng, &[m.xproj_width(), di], di)?;
    let w_dt = fan_in_normal(&mut rng, &[di, m.dt_rank], m.dt_rank)?;
    let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
    let b_dt = Tensor::from_fn(&[di], |_| {
        let dt = rng.random_range(lo..hi).exp();
        (dt + (-(-dt).exp_m1()).ln()) as f32
    })?;
    let a = Tensor::from_fn(&[di, n], |_| {
        let g: f64 = rng.sample(StandardNormal);
        -(g.exp() as f32)
    })?;
    let d_skip = Tensor::from_fn(&[di], |_| 1.0)?;
    let w_out = fan_in_normal(&mut rng, &[dm, di], di)?;
    let w_head = fan_in_normal(&mut rng, &[cfg.num_classes, dm], dm)?;
    let b_head = fan_in_normal(&mut rng, &[cfg.num_classes], dm)?;
    Ok(ClassifierParams {
        w_proj,
        b_proj,
        block: MambaBlockParams {
            w_in,
            conv_w,
            conv_b,
            w_xproj,
            w_dt,
            b_dt,
            a,
            d_skip,
            w_out,
        },
        w_head,
        b_head,
    })
}

/// `count` feature matrices of shape `seq_len x input_dim`, entries `N(0, 1)`.
pub fn synth_features(cfg: &ClassifierConfig, seed: u64, count: usize) -> Result<Vec<Tensor>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ FEATURE_STREAM);
    (0..count)
        .map(|_| gaussian(&mut rng, &[cfg.seq_len, cfg.input_dim], 1.0))
        .collect()
}
