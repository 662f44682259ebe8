use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{Backend, BackendError, ChatRequest, Completion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// First backoff delay; doubles on every retry.
    pub backoff_base_ms: u64,
    /// Extra random delay as a fraction of the backoff, in [0, 1].
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, backoff_base_ms: 500, jitter: 0.2 }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        let base = self.backoff_base_ms.saturating_mul(1u64 << retry.min(16));
        let jitter = if self.jitter > 0.0 && base > 0 {
            (rand::rng().random::<f64>() * self.jitter * base as f64) as u64
        } else {
            0
        };
        Duration::from_millis(base + jitter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendPolicy {
    pub max_concurrency: usize,
    pub requests_per_minute: Option<u32>,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
}

impl Default for BackendPolicy {
    fn default() -> Self {
        BackendPolicy {
            max_concurrency: 8,
            requests_per_minute: None,
            retry: RetryPolicy::default(),
            timeout_ms: 120_000,
        }
    }
}

impl BackendPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_concurrency == 0 {
            return Err("max_concurrency must be positive".into());
        }
        if self.retry.max_attempts == 0 {
            return Err("retry.max_attempts must be at least 1".into());
        }
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        if self.requests_per_minute == Some(0) {
            return Err("requests_per_minute must be positive when set".into());
        }
        if !(0.0..=1.0).contains(&self.retry.jitter) {
            return Err("retry.jitter must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Semaphore {
        Semaphore { permits: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().expect("semaphore lock");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore lock");
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Client-side token bucket with a one-minute refill window.
struct TokenBucket {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn per_minute(rpm: u32) -> TokenBucket {
        let capacity = f64::from(rpm);
        TokenBucket { capacity, per_sec: capacity / 60.0, state: Mutex::new((capacity, Instant::now())) }
    }

    fn take(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().expect("bucket lock");
                let now = Instant::now();
                let refill = now.duration_since(s.1).as_secs_f64() * self.per_sec;
                s.0 = (s.0 + refill).min(self.capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - s.0) / self.per_sec)
            };
            thread::sleep(wait);
        }
    }
}

/// Counters exposed by [`Governed`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernorStats {
    pub requests: u64,
    pub completions: u64,
    pub failures: u64,
    pub attempts: u64,
    pub retries: u64,
}

/// Applies a [`BackendPolicy`] to an inner backend.
pub struct Governed<B> {
    inner: B,
    policy: BackendPolicy,
    slots: Semaphore,
    bucket: Option<TokenBucket>,
    requests: AtomicU64,
    completions: AtomicU64,
    failures: AtomicU64,
    attempts: AtomicU64,
}

impl<B: Backend> Governed<B> {
    pub fn new(inner: B, policy: BackendPolicy) -> Governed<B> {
        let slots = Semaphore::new(policy.max_concurrency.max(1));
        let bucket = policy.requests_per_minute.map(TokenBucket::per_minute);
        Governed {
            inner,
            policy,
            slots,
            bucket,
            requests: AtomicU64::new(0),
            completions: AtomicU64::new(0),
            failures: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        }
    }

    pub fn policy(&self) -> &BackendPolicy {
        &self.policy
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn stats(&self) -> GovernorStats {
        let requests = self.requests.load(Ordering::SeqCst);
        let attempts = self.attempts.load(Ordering::SeqCst);
        GovernorStats {
            requests,
            completions: self.completions.load(Ordering::SeqCst),
            failures: self.failures.load(Ordering::SeqCst),
            attempts,
            retries: attempts.saturating_sub(requests),
        }
    }
}

impl<B: Backend> Backend for Governed<B> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        self.requests.fetch_add(1, Ordering::SeqCst);
        let max = self.policy.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::SeqCst);
            let result = {
                let _permit = self.slots.acquire();
                if let Some(bucket) = &self.bucket {
                    bucket.take();
                }
                self.inner.complete(request)
            };
            match result {
                Ok(mut c) => {
                    self.completions.fetch_add(1, Ordering::SeqCst);
                    c.attempts = attempt;
                    return Ok(c);
                }
                Err(e) if e.is_transient() && attempt < max => {
                    let delay = self.policy.retry.delay(attempt - 1);
                    debug!(model = %request.model, attempt, ?delay, error = %e, "retrying");
                    thread::sleep(delay);
                }
                Err(e) => {
                    warn!(model = %request.model, attempt, error = %e, "request failed");
                    self.failures.fetch_add(1, Ordering::SeqCst);
                    return Err(e.with_attempts(attempt));
                }
            }
        }
    }
}
