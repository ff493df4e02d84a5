use std::time::Duration;

use tokio::sync::Mutex;
use tokio::time::Instant;

/// Token bucket refilled continuously at `per_minute / 60` tokens per second,
/// holding at most `per_minute` tokens. A rate of 0 disables limiting.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<BucketState>,
}

#[derive(Debug)]
struct BucketState {
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn per_minute(rate: u32) -> Self {
        let capacity = rate as f64;
        Self {
            capacity,
            per_second: capacity / 60.0,
            state: Mutex::new(BucketState {
                tokens: capacity,
                last: Instant::now(),
            }),
        }
    }

    pub fn unlimited(&self) -> bool {
        self.capacity == 0.0
    }

    fn refill(&self, s: &mut BucketState) {
        let now = Instant::now();
        let gained = now.duration_since(s.last).as_secs_f64() * self.per_second;
        s.tokens = (s.tokens + gained).min(self.capacity);
        s.last = now;
    }

    /// Takes a token if one is available right now.
    pub async fn try_acquire(&self) -> bool {
        if self.unlimited() {
            return true;
        }
        let mut s = self.state.lock().await;
        self.refill(&mut s);
        if s.tokens >= 1.0 {
            s.tokens -= 1.0;
            true
        } else {
            false
        }
    }

    /// Waits until a token is available and takes it.
    pub async fn acquire(&self) {
        if self.unlimited() {
            return;
        }
        loop {
            let wait = {
                let mut s = self.state.lock().await;
                self.refill(&mut s);
                if s.tokens >= 1.0 {
                    s.tokens -= 1.0;
                    return;
                }
                (1.0 - s.tokens) / self.per_second
            };
            tokio::time::sleep(Duration::from_secs_f64(wait)).await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn burst_then_empty() {
        let b = TokenBucket::per_minute(3);
        for _ in 0..3 {
            assert!(b.try_acquire().await);
        }
        assert!(!b.try_acquire().await);
    }

    #[tokio::test]
    async fn zero_rate_is_unlimited() {
        let b = TokenBucket::per_minute(0);
        for _ in 0..1000 {
            assert!(b.try_acquire().await);
        }
    }

    #[tokio::test(start_paused = true)]
    async fn acquire_waits_for_refill() {
        let b = TokenBucket::per_minute(60);
        for _ in 0..60 {
            b.acquire().await;
        }
        let start = tokio::time::Instant::now();
        b.acquire().await;
        assert!(start.elapsed() >= Duration::from_millis(900));
    }
}
