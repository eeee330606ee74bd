//! Observation windows and the least-squares execution-time predictor.
//!
//! Each execution target keeps its own [`SlidingWindow`] of the most recent
//! `(d, t)` pairs. A [`LinearModel`] is refitted from scratch whenever a
//! prediction is needed; windows are small, so the two-pass mean-centred
//! formulation costs nothing noticeable and avoids the cancellation that
//! plagues the raw-sums form when `d` values are large.

use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};

/// Smallest window that yields a defined least-squares line.
pub const MIN_FIT_LEN: usize = 2;

/// One measured execution: input data size `d` and execution time `t` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub d: f64,
    pub t: f64,
}

impl Observation {
    pub fn new(d: f64, t: f64) -> Result<Self> {
        if !(d.is_finite() && d >= 0.0) {
            return Err(invalid(format!(
                "input size must be finite and >= 0, got {d}"
            )));
        }
        if !(t.is_finite() && t >= 0.0) {
            return Err(invalid(format!(
                "execution time must be finite and >= 0, got {t}"
            )));
        }
        Ok(Self { d, t })
    }
}

/// Fixed-capacity FIFO of observations, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindow {
    capacity: usize,
    entries: VecDeque<Observation>,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("window capacity must be positive"));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Appends `obs` as the newest entry, returning the evicted oldest entry
    /// when the window was already at capacity.
    pub fn push(&mut self, obs: Observation) -> Option<Observation> {
        let evicted = if self.is_full() {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(obs);
        evicted
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Observation> + Clone + '_ {
        self.entries.iter()
    }

    pub fn to_vec(&self) -> Vec<Observation> {
        self.entries.iter().copied().collect()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn fit(&self) -> Result<LinearModel> {
        LinearModel::fit(self.entries.iter())
    }
}

impl<'a> IntoIterator for &'a SlidingWindow {
    type Item = &'a Observation;
    type IntoIter = std::collections::vec_deque::Iter<'a, Observation>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Fitted line `t = slope * d + intercept`.
///
/// `degenerate` is set when every `d` in the fitted window was identical; the
/// model then predicts the window's mean time for any input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
    pub degenerate: bool,
}

impl LinearModel {
    pub fn new(slope: f64, intercept: f64) -> Self {
        Self {
            slope,
            intercept,
            degenerate: false,
        }
    }

    /// Ordinary least squares over `observations`.
    pub fn fit<'a, I>(observations: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Observation>,
        I::IntoIter: Clone,
    {
        let iter = observations.into_iter();
        let mut n = 0usize;
        let (mut sum_d, mut sum_t) = (0.0, 0.0);
        let mut first_d = None;
        let mut constant_d = true;
        for o in iter.clone() {
            n += 1;
            constant_d &= *first_d.get_or_insert(o.d) == o.d;
            sum_d += o.d;
            sum_t += o.t;
        }
        if n < MIN_FIT_LEN {
            return Err(Error::InsufficientObservations {
                needed: MIN_FIT_LEN,
                got: n,
            });
        }
        let mean_d = sum_d / n as f64;
        let mean_t = sum_t / n as f64;

        let (mut sxx, mut sxy) = (0.0, 0.0);
        for o in iter {
            let dd = o.d - mean_d;
            sxx += dd * dd;
            sxy += dd * (o.t - mean_t);
        }
        // the mean of identical values can round away from them
        if constant_d || sxx == 0.0 {
            return Ok(Self {
                slope: 0.0,
                intercept: mean_t,
                degenerate: true,
            });
        }
        let slope = sxy / sxx;
        Ok(Self {
            slope,
            intercept: mean_t - slope * mean_d,
            degenerate: false,
        })
    }

    pub fn predict(&self, d: f64) -> f64 {
        self.slope * d + self.intercept
    }
}

pub fn fit(window: &SlidingWindow) -> Result<LinearModel> {
    window.fit()
}
