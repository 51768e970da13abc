//! Byte-level accounting of live tensor buffers.
//!
//! Every tensor buffer registers its size with the ledger of the thread that
//! allocated it and deregisters on drop, even when dropped on another thread.
//! Peak tracking is per allocating thread, so concurrent sessions (for
//! example parallel test threads) do not see each other's allocations.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

#[derive(Debug, Default)]
pub(crate) struct LedgerInner {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl LedgerInner {
    pub(crate) fn alloc(&self, bytes: usize) {
        let live = self.live.fetch_add(bytes, Ordering::Relaxed) + bytes;
        self.peak.fetch_max(live, Ordering::Relaxed);
    }

    pub(crate) fn free(&self, bytes: usize) {
        self.live.fetch_sub(bytes, Ordering::Relaxed);
    }
}

thread_local! {
    static LEDGER: Arc<LedgerInner> = Arc::new(LedgerInner::default());
}

pub(crate) fn current() -> Arc<LedgerInner> {
    LEDGER.with(Arc::clone)
}

/// Snapshot of the calling thread's allocation ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocationLedger {
    pub live_bytes: usize,
    pub peak_bytes: usize,
}

impl AllocationLedger {
    pub fn snapshot() -> Self {
        LEDGER.with(|l| AllocationLedger {
            live_bytes: l.live.load(Ordering::Relaxed),
            peak_bytes: l.peak.load(Ordering::Relaxed),
        })
    }

    pub fn peak_mb(&self) -> f64 {
        bytes_to_mb(self.peak_bytes)
    }
}

/// Sets the peak back to the current live total.
pub fn ledger_reset() {
    LEDGER.with(|l| {
        let live = l.live.load(Ordering::Relaxed);
        l.peak.store(live, Ordering::Relaxed);
    });
}

pub fn ledger_peak() -> usize {
    AllocationLedger::snapshot().peak_bytes
}

pub fn ledger_live() -> usize {
    AllocationLedger::snapshot().live_bytes
}

pub fn bytes_to_mb(bytes: usize) -> f64 {
    bytes as f64 / (1u64 << 20) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn reset_without_allocations_keeps_peak_at_live() {
        let _keep = Tensor::<f64>::zeros(vec![16]);
        ledger_reset();
        let snap = AllocationLedger::snapshot();
        assert_eq!(snap.peak_bytes, snap.live_bytes);
    }

    #[test]
    fn one_mebibyte_tensor_shows_in_peak() {
        ledger_reset();
        let before = ledger_live();
        {
            let t = Tensor::<f64>::zeros(vec![(1 << 20) / 8]);
            assert_eq!(t.numel() * 8, 1 << 20);
        }
        assert_eq!(ledger_live(), before);
        assert!(ledger_peak() >= before + (1 << 20));
    }

    #[test]
    fn peak_is_monotone_between_resets() {
        ledger_reset();
        let mut last = ledger_peak();
        let mut held = Vec::new();
        for i in 1..20 {
            if i % 3 == 0 {
                held.clear();
            } else {
                held.push(Tensor::<f32>::zeros(vec![i * 100]));
            }
            let p = ledger_peak();
            assert!(p >= last);
            assert!(p >= ledger_live());
            last = p;
        }
    }

    #[test]
    fn drop_on_other_thread_credits_owner() {
        ledger_reset();
        let base = ledger_live();
        let t = Tensor::<f64>::zeros(vec![1000]);
        assert_eq!(ledger_live(), base + 8000);
        std::thread::spawn(move || drop(t)).join().unwrap();
        assert_eq!(ledger_live(), base);
    }
}
