//! Compensated (Neumaier) summation.
//!
//! Every integral and inner product in the crate funnels through these
//! helpers so that quadrature noise stays near one ulp of the accumulated
//! magnitude instead of growing like √N. The monotonicity and identity
//! checks difference quantities across nearby states, which makes the
//! plain-summation error floor visible; compensation removes it.

/// Running Neumaier-compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Accum {
    sum: f64,
    comp: f64,
}

impl Accum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator.
pub fn csum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Accum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Compensated dot product Σ aᵢ bᵢ.
pub fn cdot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = Accum::new();
    for (x, y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}

/// Compensated triple product Σ aᵢ bᵢ cᵢ (dot against a diagonal weight).
pub fn cdot3(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), c.len());
    let mut acc = Accum::new();
    for i in 0..a.len() {
        acc.add(a[i] * b[i] * c[i]);
    }
    acc.value()
}
