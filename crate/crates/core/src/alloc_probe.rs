//! Per-thread heap accounting.
//!
//! [`CountingAlloc`] forwards to the system allocator and tallies the bytes
//! requested by the calling thread. A binary or test target opts in with
//!
//! ```
//! use mambalite::alloc_probe::{self, CountingAlloc};
//!
//! #[global_allocator]
//! static ALLOC: CountingAlloc = CountingAlloc;
//!
//! fn main() {
//!     let (_, stats) = alloc_probe::measure(|| vec![0u8; 64]);
//!     assert_eq!(stats.bytes, 64);
//! }
//! ```

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, Ordering};

thread_local! {
    static BYTES: Cell<usize> = const { Cell::new(0) };
    static CALLS: Cell<usize> = const { Cell::new(0) };
}

static INSTALLED: AtomicBool = AtomicBool::new(false);

pub struct CountingAlloc;

fn record(bytes: usize) {
    INSTALLED.store(true, Ordering::Relaxed);
    let _ = BYTES.try_with(|b| b.set(b.get() + bytes));
    let _ = CALLS.try_with(|c| c.set(c.get() + 1));
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        record(layout.size());
        System.alloc(layout)
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        record(layout.size());
        System.alloc_zeroed(layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        // growth only; a shrink requests nothing new
        record(new_size.saturating_sub(layout.size()));
        System.realloc(ptr, layout, new_size)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }
}

/// Bytes and calls requested by the current thread during a closure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AllocStats {
    pub bytes: usize,
    pub calls: usize,
}

/// Whether [`CountingAlloc`] is the global allocator of this process.
pub fn installed() -> bool {
    // Force at least one allocation so the flag reflects reality.
    drop(std::hint::black_box(Box::new(0u8)));
    INSTALLED.load(Ordering::Relaxed)
}

pub fn measure<R>(f: impl FnOnce() -> R) -> (R, AllocStats) {
    let (b0, c0) = (BYTES.with(Cell::get), CALLS.with(Cell::get));
    let out = f();
    let stats = AllocStats {
        bytes: BYTES.with(Cell::get) - b0,
        calls: CALLS.with(Cell::get) - c0,
    };
    (out, stats)
}
