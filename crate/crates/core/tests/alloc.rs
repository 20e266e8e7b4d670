//! Heap accounting of the fused scan under a counting global allocator.

mod common;

use common::{randn, rng};
use mambalite::alloc_probe::{self, CountingAlloc};
use mambalite::ssm::{
    fused_state_bytes, selective_scan_fused, selective_scan_fused_into, selective_scan_unfused,
    unfused_intermediate_bytes, ScanScratch, SsmInputs,
};
use mambalite::tensor::Tensor;
use rand::Rng;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

struct Instance {
    u: Tensor,
    delta: Tensor,
    a: Tensor,
    b: Tensor,
    c: Tensor,
    d_skip: Tensor,
}

impl Instance {
    fn new(len: usize, channels: usize, state: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        Self {
            u: randn(&mut r, &[len, channels], 1.0),
            delta: Tensor::from_fn(&[len, channels], |_| r.random_range(1e-3f32..0.5)).unwrap(),
            a: Tensor::from_fn(&[channels, state], |_| -r.random_range(0.1f32..2.0)).unwrap(),
            b: randn(&mut r, &[len, state], 1.0),
            c: randn(&mut r, &[len, state], 1.0),
            d_skip: randn(&mut r, &[channels], 1.0),
        }
    }

    fn inputs(&self) -> SsmInputs<'_> {
        SsmInputs::from_tensors(
            &self.u,
            &self.delta,
            &self.a,
            &self.b,
            &self.c,
            Some(&self.d_skip),
        )
    }
}

#[test]
fn allocator_is_active() {
    assert!(alloc_probe::installed());
    let (_, stats) = alloc_probe::measure(|| vec![0u8; 1000]);
    assert_eq!(stats.bytes, 1000);
    assert_eq!(stats.calls, 1);
}

#[test]
fn fused_scratch_does_not_grow_with_length() {
    let (channels, state) = (128, 16);
    for len in [10, 100, 1000] {
        let inst = Instance::new(len, channels, state, len as u64);
        let inputs = inst.inputs();
        let (out, stats) = alloc_probe::measure(|| selective_scan_fused(&inputs).unwrap());
        let output_bytes = 4 * len * channels;
        assert_eq!(out.numel() * 4, output_bytes);
        assert_eq!(
            stats.bytes - output_bytes,
            fused_state_bytes(channels, state),
            "L = {len}"
        );
    }
}

#[test]
fn unfused_intermediates_grow_with_length() {
    let (channels, state) = (128, 16);
    for len in [10, 100] {
        let inst = Instance::new(len, channels, state, 7);
        let inputs = inst.inputs();
        let (_, stats) = alloc_probe::measure(|| selective_scan_unfused(&inputs).unwrap());
        assert!(stats.bytes >= unfused_intermediate_bytes(channels, state, len));
    }
}

#[test]
fn caller_owned_buffers_allocate_nothing() {
    let inst = Instance::new(100, 128, 16, 1);
    let inputs = inst.inputs();
    let mut out = Tensor::zeros(&[100, 128]).unwrap();
    let mut scratch = ScanScratch::new(128, 16);
    let (res, stats) = alloc_probe::measure(|| {
        let (state, row) = scratch.parts();
        selective_scan_fused_into(
            &inputs,
            inputs.a,
            inputs.d_skip,
            state,
            row,
            &mut out.mat_mut(),
        )
    });
    res.unwrap();
    assert_eq!(stats.bytes, 0);
    assert_eq!(stats.calls, 0);
    assert_eq!(out, selective_scan_fused(&inputs).unwrap());
}
