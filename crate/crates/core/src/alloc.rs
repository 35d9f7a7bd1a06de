//! Tensor element accounting.
//!
//! Every tensor buffer registers its element count with the counter of the
//! thread that created it and releases it on drop, so peaks reflect the
//! library's own working set rather than process RSS.

use std::ops::Deref;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AllocStats {
    pub live_elements: usize,
    pub peak_elements: usize,
}

#[derive(Debug, Default)]
struct Counter {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl Counter {
    fn acquire(&self, n: usize) {
        let live = self.live.fetch_add(n, Ordering::Relaxed) + n;
        self.peak.fetch_max(live, Ordering::Relaxed);
    }

    fn release(&self, n: usize) {
        self.live.fetch_sub(n, Ordering::Relaxed);
    }
}

thread_local! {
    static COUNTER: Arc<Counter> = Arc::new(Counter::default());
}

/// Snapshot of the calling thread's counters.
pub fn stats() -> AllocStats {
    COUNTER.with(|c| AllocStats {
        live_elements: c.live.load(Ordering::Relaxed),
        peak_elements: c.peak.load(Ordering::Relaxed),
    })
}

/// Lowers the high-water mark to the current live count.
pub fn reset_peak() {
    COUNTER.with(|c| {
        let live = c.live.load(Ordering::Relaxed);
        c.peak.store(live, Ordering::Relaxed);
    })
}

/// Runs `f` and returns its result with the peak number of elements that
/// were live during the call above the live count at entry.
pub fn measure_peak<T>(f: impl FnOnce() -> T) -> (T, usize) {
    reset_peak();
    let base = stats().live_elements;
    let out = f();
    let peak = stats().peak_elements;
    (out, peak.saturating_sub(base))
}

/// Owned `f64` storage whose size is reported to the creating thread's
/// counter for its whole lifetime.
pub(crate) struct Buffer {
    data: Vec<f64>,
    owner: Arc<Counter>,
}

impl Buffer {
    pub(crate) fn new(data: Vec<f64>) -> Self {
        let owner = COUNTER.with(Arc::clone);
        owner.acquire(data.len());
        Buffer { data, owner }
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl Clone for Buffer {
    fn clone(&self) -> Self {
        Buffer::new(self.data.clone())
    }
}

impl Deref for Buffer {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        self.owner.release(self.data.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn live_returns_after_release() {
        let before = stats().live_elements;
        {
            let a = Buffer::new(vec![0.0; 100]);
            let _b = a.clone();
            assert_eq!(stats().live_elements, before + 200);
        }
        assert_eq!(stats().live_elements, before);
        assert!(stats().peak_elements >= before + 200);
    }

    #[test]
    fn measure_peak_reports_temporaries() {
        let ((), peak) = measure_peak(|| {
            let _a = Buffer::new(vec![1.0; 10]);
            let _b = Buffer::new(vec![1.0; 5]);
        });
        assert_eq!(peak, 15);
    }

    #[test]
    fn drop_on_other_thread_credits_creator() {
        let before = stats().live_elements;
        let buf = Buffer::new(vec![0.0; 64]);
        std::thread::spawn(move || drop(buf)).join().unwrap();
        assert_eq!(stats().live_elements, before);
    }
}
