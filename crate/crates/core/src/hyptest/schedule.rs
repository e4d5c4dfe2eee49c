/// Geometric check points `n_i = floor(n0 (1 + xi)^i)`, `i >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    n0: u64,
    xi: f64,
}

/// Points beyond this are never produced.
const MAX_POINT: f64 = 1e18;

impl Schedule {
    /// `n0` is raised to 1 if zero.
    pub fn new(n0: u64, xi: f64) -> Self {
        Self { n0: n0.max(1), xi }
    }

    pub fn n0(&self) -> u64 {
        self.n0
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// `n_i` before deduplication. The product is floored after a 1e-12
    /// relative nudge so values that are integers in exact arithmetic
    /// (500 * 1.3^2 = 845) do not drop by one through rounding.
    pub fn point(&self, i: u32) -> Option<u64> {
        let x = self.n0 as f64 * (1.0 + self.xi).powi(i as i32);
        if !x.is_finite() || x > MAX_POINT {
            return None;
        }
        Some((x * (1.0 + 1e-12)).floor() as u64)
    }

    /// Every `(i, n_i)` for `i = 1, 2, ...`, duplicates included.
    pub fn raw_points(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        (1u32..).map_while(move |i| self.point(i).map(|n| (i, n)))
    }

    /// Strictly increasing check points past `n0`. Repeated values are
    /// skipped but each point keeps its original exponent index `i`.
    pub fn points(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        let mut last = self.n0;
        self.raw_points().filter(move |&(_, n)| {
            if n > last {
                last = n;
                true
            } else {
                false
            }
        })
    }
}
