use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Time source for rate limiting and retry backoff.
pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Manually advanced clock; `sleep` returns immediately after moving time forward.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
    slept: Mutex<Vec<Duration>>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }

    /// Every duration passed to `sleep`, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.slept.lock().unwrap().push(d);
        self.advance(d);
    }
}

/// Sliding-window limiter: at most `per_window` acquisitions in any window of `window` length.
pub struct RateLimiter {
    per_window: usize,
    window: Duration,
    clock: Arc<dyn Clock>,
    issued: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32, clock: Arc<dyn Clock>) -> Self {
        Self::new(requests as usize, Duration::from_secs(60), clock)
    }

    pub fn new(per_window: usize, window: Duration, clock: Arc<dyn Clock>) -> Self {
        assert!(per_window > 0, "rate limit must be positive");
        Self {
            per_window,
            window,
            clock,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a request may be sent and records it. Returns the send time.
    ///
    /// The lock is held while sleeping, so waiting callers are served in turn.
    pub fn acquire(&self) -> Duration {
        let mut issued = self.issued.lock().unwrap();
        loop {
            let now = self.clock.now();
            while issued.front().is_some_and(|&t| t + self.window <= now) {
                issued.pop_front();
            }
            if issued.len() < self.per_window {
                issued.push_back(now);
                return now;
            }
            let oldest = *issued.front().expect("full window is non-empty");
            self.clock.sleep(oldest + self.window - now);
        }
    }
}
