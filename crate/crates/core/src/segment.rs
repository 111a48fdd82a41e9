use serde::{Deserialize, Serialize};

/// Inclusive frame interval `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "segment start {start} after end {end}");
        Self { start, end }
    }

    pub fn point(t: usize) -> Self {
        Self { start: t, end: t }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }

    /// Frame-count IoU of two inclusive intervals.
    pub fn iou(&self, other: &Segment) -> f64 {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        let inter = if lo <= hi { hi - lo + 1 } else { 0 };
        let union = self.len() + other.len() - inter;
        inter as f64 / union as f64
    }
}

impl std::fmt::Display for Segment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// Temporal IoU on inclusive integer intervals.
pub fn temporal_iou(a: &Segment, b: &Segment) -> f64 {
    a.iou(b)
}
