//! Progressive (sliding-window) reranking.
//!
//! A reranker that orders at most `m` items at a time is applied back to front: first to the
//! last `m` items, then to a window shifted `floor(m/2)` towards the head, and so on until the
//! window reaches the head, where it is clamped to `[0, m)`. Each window sees the output of the
//! previous one, so one pass carries the best `floor(m/2)` items to the head in order. Items
//! further down are only partially ordered.

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub intervals: Vec<Range<usize>>,
    pub window_size: usize,
    pub stride: usize,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Intervals as `(start, end)` pairs.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.intervals.iter().map(|r| (r.start, r.end)).collect()
    }
}

/// Windows visited by one pass over a list of `n` items with window size `m`.
pub fn plan_windows(n: usize, m: usize) -> Result<WindowPlan> {
    if m < 2 {
        return Err(Error::Param(format!("window size must be >= 2, got {m}")));
    }
    if n == 0 {
        return Err(Error::Param("cannot plan windows over an empty list".into()));
    }
    let stride = m / 2;
    let intervals = if n <= m {
        std::iter::once(0..n).collect()
    } else {
        let mut out = Vec::new();
        let mut start = n - m;
        loop {
            out.push(start..start + m);
            if start == 0 {
                break;
            }
            start = start.saturating_sub(stride);
        }
        out
    };
    Ok(WindowPlan {
        intervals,
        window_size: m,
        stride,
    })
}

/// Number of window calls one pass over `n` items makes (0 for an empty list).
pub fn window_count(n: usize, m: usize) -> Result<usize> {
    if n == 0 {
        return Ok(0);
    }
    Ok(plan_windows(n, m)?.len())
}

/// Runs one progressive pass. `window_fn` gets each window's current contents and must return
/// a reordering of the same length, which is written back before the next window is taken.
/// Any failure aborts the pass and nothing partial is returned.
pub fn progressive_rerank<T, E, F>(items: Vec<T>, m: usize, mut window_fn: F) -> std::result::Result<Vec<T>, E>
where
    T: Clone,
    E: From<Error>,
    F: FnMut(&[T]) -> std::result::Result<Vec<T>, E>,
{
    if items.is_empty() {
        if m < 2 {
            return Err(Error::Param(format!("window size must be >= 2, got {m}")).into());
        }
        return Ok(items);
    }
    let plan = plan_windows(items.len(), m)?;
    let mut working = items;
    for range in plan.intervals {
        let reordered = window_fn(&working[range.clone()])?;
        if reordered.len() != range.len() {
            return Err(Error::Param(format!(
                "window function returned {} items for a window of {}",
                reordered.len(),
                range.len()
            ))
            .into());
        }
        working.splice(range, reordered);
    }
    Ok(working)
}
