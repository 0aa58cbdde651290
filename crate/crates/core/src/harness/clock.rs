use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crate::scenario::ClockMode;
use crate::time::Nanos;

/// Time source for a run. `now()` is relative to the ready signal.
pub trait Clock: Send + Sync {
    fn mode(&self) -> ClockMode;
    fn now(&self) -> Nanos;
    fn wait_until(&self, t: Nanos);
}

/// Simulated time. Only moves when the harness advances it to the next event.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moves time forward to `t`; earlier targets are ignored.
    pub fn advance_to(&self, t: Nanos) {
        self.now.fetch_max(t.0, Ordering::AcqRel);
    }
}

impl Clock for VirtualClock {
    fn mode(&self) -> ClockMode {
        ClockMode::Virtual
    }

    fn now(&self) -> Nanos {
        Nanos(self.now.load(Ordering::Acquire))
    }

    fn wait_until(&self, t: Nanos) {
        self.advance_to(t);
    }
}

/// Monotonic wall time since construction.
#[derive(Debug)]
pub struct WallClock {
    origin: Instant,
}

// Below this remaining time, wait_until spins instead of sleeping.
const SPIN_WINDOW: Duration = Duration::from_micros(200);

impl WallClock {
    pub fn start() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for WallClock {
    fn mode(&self) -> ClockMode {
        ClockMode::Wall
    }

    fn now(&self) -> Nanos {
        self.origin.elapsed().into()
    }

    fn wait_until(&self, t: Nanos) {
        let target = self.origin + Duration::from(t);
        loop {
            let now = Instant::now();
            if now >= target {
                return;
            }
            let left = target - now;
            if left > SPIN_WINDOW {
                std::thread::sleep(left - SPIN_WINDOW);
            } else {
                std::hint::spin_loop();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_only_moves_forward() {
        let c = VirtualClock::new();
        assert_eq!(c.now(), Nanos::ZERO);
        c.advance_to(Nanos(50));
        c.advance_to(Nanos(10));
        assert_eq!(c.now(), Nanos(50));
        c.wait_until(Nanos(70));
        assert_eq!(c.now(), Nanos(70));
    }

    #[test]
    fn wall_clock_is_monotonic_and_waits() {
        let c = WallClock::start();
        let a = c.now();
        c.wait_until(a + Nanos::from_millis(2));
        let b = c.now();
        assert!(b >= a + Nanos::from_millis(2));
    }
}
