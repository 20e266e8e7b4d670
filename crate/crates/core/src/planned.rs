//! Runs the fused classifier inside a single arena laid out by the planner.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::mamba::gate_into;
use crate::model::{Classifier, Pooling};
use crate::planner::{buf, build_schedule, MemoryPlan, ScheduleOptions, Strategy, Variant};
use crate::ssm::{selective_scan_fused_into, SsmInputs};
use crate::tensor::{self, MatMut, MatRef, Tensor};

/// Splits `arena` into `K` mutable regions that must not overlap.
fn regions<'a, const K: usize>(
    arena: &'a mut [f32],
    ranges: [Range<usize>; K],
) -> Result<[&'a mut [f32]; K]> {
    let mut order: [usize; K] = std::array::from_fn(|i| i);
    order.sort_by_key(|&i| ranges[i].start);
    let mut out: [Option<&'a mut [f32]>; K] = std::array::from_fn(|_| None);
    let mut rest = arena;
    let mut consumed = 0;
    for &i in &order {
        let r = &ranges[i];
        if r.start < consumed || r.end > consumed + rest.len() {
            return Err(Error::Consistency(format!(
                "arena region {r:?} overlaps a live buffer or exceeds the arena"
            )));
        }
        let (_, tail) = std::mem::take(&mut rest).split_at_mut(r.start - consumed);
        let (head, tail) = tail.split_at_mut(r.len());
        out[i] = Some(head);
        rest = tail;
        consumed = r.end;
    }
    Ok(out.map(|s| s.expect("every index visited")))
}

/// A classifier bound to a static arena layout.
#[derive(Clone, Debug)]
pub struct PlannedClassifier<'a> {
    clf: &'a Classifier,
    plan: MemoryPlan,
    options: ScheduleOptions,
}

impl<'a> PlannedClassifier<'a> {
    pub fn new(clf: &'a Classifier, strategy: Strategy, options: ScheduleOptions) -> Result<Self> {
        let plan = build_schedule(clf.config(), Variant::Fused, options)?.plan(strategy)?;
        Ok(Self { clf, plan, options })
    }

    pub fn plan(&self) -> &MemoryPlan {
        &self.plan
    }

    /// Number of f32 slots the arena needs.
    pub fn arena_len(&self) -> usize {
        self.plan.arena_bytes.div_ceil(4)
    }

    pub fn new_arena(&self) -> Vec<f32> {
        vec![0.0; self.arena_len()]
    }

    fn range(&self, name: &'static str) -> Result<Range<usize>> {
        let id = self.options.resolve(name);
        let p = self
            .plan
            .placement(id)
            .ok_or_else(|| Error::Consistency(format!("plan has no buffer `{id}`")))?;
        let start = p.offset / 4;
        Ok(start..start + p.spec.size / 4)
    }

    /// Logits for one sample, computed entirely inside `arena`.
    pub fn forward(&self, arena: &mut [f32], features: &Tensor) -> Result<Tensor> {
        use buf::*;
        self.clf.check_features(features)?;
        if arena.len() < self.arena_len() {
            return Err(Error::Consistency(format!(
                "arena holds {} values, plan needs {}",
                arena.len(),
                self.arena_len()
            )));
        }
        let cfg = self.clf.config();
        let p = self.clf.params();
        let bp = &p.block;
        let m = &cfg.mamba;
        let (len, dm, di, n, rank) = (cfg.seq_len, m.d_model, m.d_inner(), m.d_state, m.dt_rank);
        let xw = m.xproj_width();
        let r = |name| self.range(name);

        let [f] = regions(arena, [r(FEATURES)?])?;
        f.copy_from_slice(features.data());

        let [f, h] = regions(arena, [r(FEATURES)?, r(HIDDEN)?])?;
        tensor::linear_into(
            MatRef::new(f, len, cfg.input_dim),
            p.w_proj.mat(),
            Some(p.b_proj.data()),
            &mut MatMut::new(h, len, dm),
        )?;

        let [h, xz] = regions(arena, [r(HIDDEN)?, r(XZ)?])?;
        tensor::linear_into(
            MatRef::new(h, len, dm),
            bp.w_in.mat(),
            None,
            &mut MatMut::new(xz, len, 2 * di),
        )?;

        let [xz, conv] = regions(arena, [r(XZ)?, r(CONV)?])?;
        tensor::depthwise_conv1d_causal_into(
            MatRef::new(xz, len, 2 * di).columns(0, di)?,
            bp.conv_w.mat(),
            Some(bp.conv_b.data()),
            &mut MatMut::new(conv, len, di),
        )?;

        if self.options.inplace {
            let [conv] = regions(arena, [r(CONV)?])?;
            tensor::silu_inplace(conv);
        } else {
            let [conv, act] = regions(arena, [r(CONV)?, r(CONV_ACT)?])?;
            act.copy_from_slice(conv);
            tensor::silu_inplace(act);
        }

        let [act, xp] = regions(arena, [r(CONV_ACT)?, r(XPROJ)?])?;
        tensor::linear_into(
            MatRef::new(act, len, di),
            bp.w_xproj.mat(),
            None,
            &mut MatMut::new(xp, len, xw),
        )?;

        let [xp, dt] = regions(arena, [r(XPROJ)?, r(DT)?])?;
        tensor::linear_into(
            MatRef::new(xp, len, xw).columns(0, rank)?,
            bp.w_dt.mat(),
            Some(bp.b_dt.data()),
            &mut MatMut::new(dt, len, di),
        )?;

        if self.options.inplace {
            let [dt] = regions(arena, [r(DT)?])?;
            tensor::softplus_inplace(dt);
        } else {
            let [dt, delta] = regions(arena, [r(DT)?, r(DELTA)?])?;
            delta.copy_from_slice(dt);
            tensor::softplus_inplace(delta);
        }

        let [act, delta, xp, state, row, y] = regions(
            arena,
            [
                r(CONV_ACT)?,
                r(DELTA)?,
                r(XPROJ)?,
                r(SCAN_STATE)?,
                r(SCAN_ROW)?,
                r(Y_SSM)?,
            ],
        )?;
        let proj = MatRef::new(xp, len, xw);
        let inputs = SsmInputs {
            u: MatRef::new(act, len, di),
            delta: MatRef::new(delta, len, di),
            a: bp.a.mat(),
            b: proj.columns(rank, n)?,
            c: proj.columns(rank + n, n)?,
            d_skip: Some(bp.d_skip.data()),
        };
        selective_scan_fused_into(
            &inputs,
            inputs.a,
            inputs.d_skip,
            state,
            row,
            &mut MatMut::new(y, len, di),
        )?;

        let [y, xz, gated] = regions(arena, [r(Y_SSM)?, r(XZ)?, r(GATED)?])?;
        gate_into(
            MatRef::new(y, len, di),
            MatRef::new(xz, len, 2 * di).columns(di, di)?,
            &mut MatMut::new(gated, len, di),
        )?;

        let [gated, out] = regions(arena, [r(GATED)?, r(BLOCK_OUT)?])?;
        tensor::linear_into(
            MatRef::new(gated, len, di),
            bp.w_out.mat(),
            None,
            &mut MatMut::new(out, len, dm),
        )?;

        let [out, pooled] = regions(arena, [r(BLOCK_OUT)?, r(POOLED)?])?;
        match cfg.pooling {
            Pooling::Mean => tensor::mean_pool_time_into(MatRef::new(out, len, dm), pooled)?,
            Pooling::Max => tensor::max_pool_time_into(MatRef::new(out, len, dm), pooled)?,
        }

        let [pooled, logits] = regions(arena, [r(POOLED)?, r(LOGITS)?])?;
        tensor::linear_into(
            MatRef::new(pooled, 1, dm),
            p.w_head.mat(),
            Some(p.b_head.data()),
            &mut MatMut::new(logits, 1, cfg.num_classes),
        )?;
        Tensor::new(&[cfg.num_classes], logits.to_vec())
    }
}
