//! Injected time sources. The simulator advances a shared [`SimClock`] by
//! declared costs; the networked services use [`WallClock`].

use std::cell::Cell;
use std::rc::Rc;
use std::time::Instant;

/// Seconds since an arbitrary run-local origin.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Where modeled processing costs go. A [`SimClock`] absorbs them by
/// advancing; under a wall clock real time passes by itself, so
/// [`NullCostSink`] discards them.
pub trait CostSink {
    fn charge(&self, seconds: f64);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NullCostSink;

impl CostSink for NullCostSink {
    fn charge(&self, _seconds: f64) {}
}

/// Manually advanced clock shared by everything inside one simulation.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    now: Rc<Cell<f64>>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, dt: f64) {
        debug_assert!(dt >= 0.0, "clock cannot move backwards");
        self.now.set(self.now.get() + dt);
    }

    pub fn set(&self, t: f64) {
        debug_assert!(t >= self.now.get(), "clock cannot move backwards");
        self.now.set(t);
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.now.get()
    }
}

impl CostSink for SimClock {
    fn charge(&self, seconds: f64) {
        self.advance(seconds);
    }
}

/// Wall clock anchored at construction time.
#[derive(Debug, Clone)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock {
            start: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}
