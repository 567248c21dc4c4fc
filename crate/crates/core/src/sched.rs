//! Scheduling points.
//!
//! Every shared-memory access made by a scheme passes through [`point`]
//! first. With the `verify` feature enabled, a process-wide hook can be
//! installed that is called at each point; a controlled scheduler uses it to
//! serialize threads and explore interleavings. Without the feature the
//! points compile to nothing.

#[cfg(feature = "verify")]
use core::sync::atomic::{AtomicPtr, Ordering};

#[cfg(feature = "verify")]
static HOOK: AtomicPtr<()> = AtomicPtr::new(core::ptr::null_mut());

/// Installs `hook`, replacing any previous one. `None` removes it.
///
/// The hook runs on every thread that touches a scheme, so it must be cheap
/// for threads it does not care about.
#[cfg(feature = "verify")]
pub fn set_hook(hook: Option<fn()>) {
    let raw = match hook {
        Some(f) => f as *mut (),
        None => core::ptr::null_mut(),
    };
    HOOK.store(raw, Ordering::SeqCst);
}

/// Marks a scheduling point. Schemes implemented outside this crate call it
/// before each shared-memory access so they take part in exploration.
#[inline(always)]
pub fn point() {
    #[cfg(feature = "verify")]
    {
        let raw = HOOK.load(Ordering::Relaxed);
        if !raw.is_null() {
            // Safety: only `set_hook` stores into `HOOK`, always a `fn()`.
            let f: fn() = unsafe { core::mem::transmute::<*mut (), fn()>(raw) };
            f();
        }
    }
}
