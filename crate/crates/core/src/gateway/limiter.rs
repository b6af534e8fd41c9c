use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Bounds in-flight requests and spaces request starts at a fixed minimum
/// interval.
#[derive(Debug)]
pub struct Limiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    min_interval: Option<Duration>,
    next_start: Mutex<Instant>,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap();
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

impl Limiter {
    pub fn new(max_in_flight: usize, requests_per_minute: Option<u32>) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            min_interval: requests_per_minute
                .filter(|&r| r > 0)
                .map(|r| Duration::from_secs_f64(60.0 / f64::from(r))),
            next_start: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        {
            let mut n = self.in_flight.lock().unwrap();
            while *n >= self.max_in_flight {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
        }
        if let Some(interval) = self.min_interval {
            let wait = {
                let mut next = self.next_start.lock().unwrap();
                let now = Instant::now();
                let slot = (*next).max(now);
                *next = slot + interval;
                slot - now
            };
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSnapshot {
    pub calls: u64,
    pub tokens: u64,
    pub max_calls: Option<u64>,
    pub max_tokens: Option<u64>,
}

/// Upstream call and token ceiling. Cache hits are free.
#[derive(Debug)]
pub struct Budget {
    max_calls: Option<u64>,
    max_tokens: Option<u64>,
    calls: AtomicU64,
    tokens: AtomicU64,
}

impl Budget {
    pub fn new(max_calls: Option<u64>, max_tokens: Option<u64>) -> Self {
        Self {
            max_calls,
            max_tokens,
            calls: AtomicU64::new(0),
            tokens: AtomicU64::new(0),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None, None)
    }

    pub fn reserve_call(&self) -> Result<(), GatewayError> {
        if let Some(max) = self.max_tokens {
            let used = self.tokens.load(Ordering::SeqCst);
            if used >= max {
                return Err(GatewayError::BudgetExceeded(format!("{used} tokens used, limit {max}")));
            }
        }
        let prev = self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(max) = self.max_calls {
            if prev >= max {
                self.calls.fetch_sub(1, Ordering::SeqCst);
                return Err(GatewayError::BudgetExceeded(format!("call limit {max} reached")));
            }
        }
        Ok(())
    }

    pub fn record_tokens(&self, n: u64) {
        self.tokens.fetch_add(n, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> BudgetSnapshot {
        BudgetSnapshot {
            calls: self.calls.load(Ordering::SeqCst),
            tokens: self.tokens.load(Ordering::SeqCst),
            max_calls: self.max_calls,
            max_tokens: self.max_tokens,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn limiter_caps_concurrency() {
        let limiter = Arc::new(Limiter::new(2, None));
        let peak = Arc::new(AtomicU64::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let limiter = limiter.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _p = limiter.acquire();
                    peak.fetch_max(limiter.in_flight() as u64, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(limiter.in_flight(), 0);
    }

    #[test]
    fn rate_limit_spaces_starts() {
        let limiter = Limiter::new(4, Some(6000)); // 10 ms apart
        let t0 = Instant::now();
        for _ in 0..4 {
            drop(limiter.acquire());
        }
        assert!(t0.elapsed() >= Duration::from_millis(30));
    }

    #[test]
    fn token_budget() {
        let b = Budget::new(None, Some(10));
        b.reserve_call().unwrap();
        b.record_tokens(10);
        assert!(b.reserve_call().is_err());
        assert_eq!(b.snapshot().calls, 1);
    }
}
