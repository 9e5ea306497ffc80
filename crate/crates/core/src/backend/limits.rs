use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use tokio::sync::{Mutex, Semaphore, SemaphorePermit};
use tokio::time::Instant;

use super::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_parallel: usize,
    /// Requests per minute; `None` disables the token bucket.
    pub rpm: Option<u32>,
    /// Hard cap on requests issued by this backend instance.
    pub max_requests: Option<u64>,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_parallel: 4,
            rpm: None,
            max_requests: None,
        }
    }
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    capacity: f64,
    per_sec: f64,
    last: Instant,
}

/// In-flight cap, requests-per-minute token bucket, and request budget.
#[derive(Debug)]
pub struct Throttle {
    in_flight: Semaphore,
    bucket: Option<Mutex<Bucket>>,
    issued: AtomicU64,
    max_requests: Option<u64>,
}

impl Throttle {
    pub fn new(limits: Limits) -> Self {
        let bucket = limits.rpm.filter(|&r| r > 0).map(|rpm| {
            let capacity = (limits.max_parallel.max(1) as f64).min(rpm as f64);
            Mutex::new(Bucket {
                tokens: capacity,
                capacity,
                per_sec: rpm as f64 / 60.0,
                last: Instant::now(),
            })
        });
        Throttle {
            in_flight: Semaphore::new(limits.max_parallel.max(1)),
            bucket,
            issued: AtomicU64::new(0),
            max_requests: limits.max_requests,
        }
    }

    /// Count one logical request against the budget.
    pub fn charge(&self) -> Result<(), BackendError> {
        let n = self.issued.fetch_add(1, Ordering::SeqCst) + 1;
        match self.max_requests {
            Some(cap) if n > cap => Err(BackendError::Budget(format!("request cap of {cap} reached"))),
            _ => Ok(()),
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued.load(Ordering::SeqCst)
    }

    /// Wait for an in-flight slot and a rate token.
    pub async fn acquire(&self) -> SemaphorePermit<'_> {
        let permit = self.in_flight.acquire().await.expect("throttle semaphore never closes");
        if let Some(bucket) = &self.bucket {
            let mut b = bucket.lock().await;
            loop {
                let now = Instant::now();
                let elapsed = now.duration_since(b.last).as_secs_f64();
                b.tokens = (b.tokens + elapsed * b.per_sec).min(b.capacity);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    break;
                }
                let wait = (1.0 - b.tokens) / b.per_sec;
                tokio::time::sleep(Duration::from_secs_f64(wait)).await;
            }
        }
        permit
    }
}
