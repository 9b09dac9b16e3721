//! Min-max feature scaling onto `[-1, 1]`.

/// Per-component min-max scaler. Parameters are fit once on a training
/// corpus and then frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMaxScaler {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Self { lo, hi }
    }

    /// Fits over rows of equal width. Returns `None` for an empty corpus.
    pub fn fit<'a, I>(rows: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut it = rows.into_iter();
        let first = it.next()?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for row in it {
            for (k, &v) in row.iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        Some(Self { lo, hi })
    }

    pub fn width(&self) -> usize {
        self.lo.len()
    }

    /// Maps component `k` into `[-1, 1]`, clamping values outside the fitted
    /// range. A degenerate component (zero span) maps to 0.
    pub fn scale_component(&self, k: usize, v: f64) -> f64 {
        let span = self.hi[k] - self.lo[k];
        if span <= 0.0 {
            return 0.0;
        }
        (2.0 * (v - self.lo[k]) / span - 1.0).clamp(-1.0, 1.0)
    }

    pub fn unscale_component(&self, k: usize, s: f64) -> f64 {
        let span = self.hi[k] - self.lo[k];
        self.lo[k] + (s + 1.0) * 0.5 * span
    }

    pub fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(k, &v)| self.scale_component(k, v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_and_bounds() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]];
        let s = MinMaxScaler::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(s.scale(&[1.0, 5.0]), vec![-1.0, 0.0]);
        assert_eq!(s.scale(&[3.0, 5.0]), vec![1.0, 0.0]);
        assert_eq!(s.scale(&[10.0, 5.0])[0], 1.0);
        assert!(MinMaxScaler::fit(std::iter::empty()).is_none());
    }

    proptest! {
        #[test]
        fn round_trip_inside_range(lo in -1e3f64..1e3, span in 1e-3f64..1e4, frac in 0.0f64..=1.0) {
            let s = MinMaxScaler::new(vec![lo], vec![lo + span]);
            let x = lo + frac * span;
            let back = s.unscale_component(0, s.scale_component(0, x));
            prop_assert!((back - x).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
}
