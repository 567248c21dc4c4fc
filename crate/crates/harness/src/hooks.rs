//! Per-thread behaviour at the schemes' scheduling points.
//!
//! One process-wide hook is installed; it looks up what the calling thread
//! asked for. Threads that never opted in pay only a thread-local lookup.

use std::cell::{Cell, RefCell};
use std::sync::{Arc, Once};

use crate::explore::Controller;

enum Mode {
    Off,
    /// Yield the processor at roughly one point in `period`.
    Chaos {
        state: Cell<u64>,
        period: u64,
    },
    /// Wait for a controlled scheduler before each step.
    Controlled {
        ctl: Arc<Controller>,
        tid: usize,
    },
}

thread_local! {
    static MODE: RefCell<Mode> = const { RefCell::new(Mode::Off) };
}

fn dispatch() {
    let _ = MODE.try_with(|m| match &*m.borrow() {
        Mode::Off => {}
        Mode::Chaos { state, period } => {
            // xorshift64
            let mut x = state.get();
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            state.set(x);
            if x % period == 0 {
                std::thread::yield_now();
            }
        }
        Mode::Controlled { ctl, tid } => ctl.point(*tid),
    });
}

fn install() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| crystalline::sched::set_hook(Some(dispatch)));
}

/// Restores the calling thread's previous mode on drop.
#[must_use]
pub struct ModeGuard {
    prev: Option<Mode>,
}

impl Drop for ModeGuard {
    fn drop(&mut self) {
        if let Some(p) = self.prev.take() {
            let _ = MODE.try_with(|m| *m.borrow_mut() = p);
        }
    }
}

fn set(mode: Mode) -> ModeGuard {
    install();
    let prev = MODE.with(|m| std::mem::replace(&mut *m.borrow_mut(), mode));
    ModeGuard { prev: Some(prev) }
}

/// Makes the calling thread yield at random scheduling points, about one in
/// `period`, to widen race windows on machines with few cores.
pub fn chaos(seed: u64, period: u64) -> ModeGuard {
    set(Mode::Chaos { state: Cell::new(seed | 1), period: period.max(1) })
}

pub(crate) fn controlled(ctl: Arc<Controller>, tid: usize) -> ModeGuard {
    set(Mode::Controlled { ctl, tid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_restores_previous_mode() {
        {
            let _g = chaos(1, 1);
            MODE.with(|m| assert!(matches!(*m.borrow(), Mode::Chaos { .. })));
            {
                let _h = chaos(2, 5);
                MODE.with(|m| assert!(matches!(*m.borrow(), Mode::Chaos { period: 5, .. })));
            }
            MODE.with(|m| assert!(matches!(*m.borrow(), Mode::Chaos { period: 1, .. })));
        }
        MODE.with(|m| assert!(matches!(*m.borrow(), Mode::Off)));
    }
}
