use std::time::Duration;

use rand::Rng;

use super::{ChainState, MoveConfig};

/// Tracks how hard the chain is working to produce its next draw.
///
/// A try is one attempt at the model block; automatic rejections force
/// another try with fresh inefficiency draws. The chain counts as stalled once
/// `stall_rejects` tries fail in a row, or, when a time factor is configured,
/// once the current draw has taken longer than that multiple of the average
/// completed draw.
#[derive(Clone, Debug)]
pub struct StallMonitor {
    stall_rejects: usize,
    stall_factor: Option<f64>,
    consecutive: usize,
    completed: usize,
    total_time: Duration,
    current_time: Duration,
}

impl StallMonitor {
    pub fn new(cfg: &MoveConfig) -> Self {
        Self {
            stall_rejects: cfg.stall_rejects,
            stall_factor: cfg.stall_factor,
            consecutive: 0,
            completed: 0,
            total_time: Duration::ZERO,
            current_time: Duration::ZERO,
        }
    }

    /// Records a failed try and the time it took.
    pub fn record_failure(&mut self, elapsed: Duration) {
        self.consecutive += 1;
        self.current_time += elapsed;
    }

    /// Records a completed draw, closing out the tries that produced it.
    pub fn record_success(&mut self, elapsed: Duration) {
        self.current_time += elapsed;
        self.total_time += self.current_time;
        self.completed += 1;
        self.consecutive = 0;
        self.current_time = Duration::ZERO;
    }

    pub fn consecutive_failures(&self) -> usize {
        self.consecutive
    }

    pub fn stalled(&self) -> bool {
        if self.consecutive >= self.stall_rejects {
            return true;
        }
        match self.stall_factor {
            Some(factor) if self.completed > 0 && self.consecutive > 0 => {
                let average = self.total_time.as_secs_f64() / self.completed as f64;
                self.current_time.as_secs_f64() > factor * average
            }
            _ => false,
        }
    }

    fn clear(&mut self) {
        self.consecutive = 0;
        self.current_time = Duration::ZERO;
    }
}

/// Resets to a uniformly chosen saved state when the monitor reports a stall.
///
/// Returns `None` when the chain is healthy or nothing has been saved yet. The
/// returned state is a verbatim copy of the chosen entry of `history`.
pub fn restart_if_stalled<R: Rng + ?Sized>(
    history: &[ChainState],
    monitor: &mut StallMonitor,
    rng: &mut R,
) -> Option<ChainState> {
    if history.is_empty() || !monitor.stalled() {
        return None;
    }
    monitor.clear();
    Some(history[rng.random_range(0..history.len())].clone())
}
