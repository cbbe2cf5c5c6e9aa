//! Exactly rounded floating-point summation.
//!
//! Every score in the crate is accumulated through [`ExactSum`], which keeps a
//! non-overlapping expansion of partial sums (Shewchuk's algorithm) and rounds
//! once at the end. The result is the correctly rounded value of the exact
//! sum, so it does not depend on the order or grouping of the terms. Regrouped
//! estimators therefore agree bit for bit, and parallel reductions are
//! reproducible regardless of worker count.

/// Accumulator holding the exact running sum as an expansion of partials.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    /// Adds the exact product `a * b`, splitting it into its rounded value and
    /// the rounding error with a fused multiply-add.
    pub fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let e = a.mul_add(b, -p);
        self.add(p);
        if e != 0.0 {
            self.add(e);
        }
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// Correctly rounded (half-even) value of the accumulated sum.
    pub fn value(&self) -> f64 {
        let partials = &self.partials;
        let mut n = partials.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = partials[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = partials[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }

    /// Correctly rounded (half-even) value of `sum / d` for finite `d > 0`.
    pub fn quotient(&self, d: f64) -> f64 {
        assert!(d > 0.0 && d.is_finite(), "divisor must be finite and positive");
        // exact sign of sum - q·d
        let residual = |q: f64| {
            let mut r = self.clone();
            r.add_product(-q, d);
            r.value()
        };
        let q = self.value() / d;
        if !q.is_finite() {
            return q;
        }
        let r = residual(q);
        if r == 0.0 {
            return q;
        }
        let (mut a, mut b) = if r > 0.0 { (q, q.next_up()) } else { (q.next_down(), q) };
        while residual(b) > 0.0 {
            a = b;
            b = b.next_up();
        }
        while residual(a) < 0.0 {
            b = a;
            a = a.next_down();
        }
        if residual(a) == 0.0 {
            return a;
        }
        if residual(b) == 0.0 {
            return b;
        }
        // sign of (sum - a·d) - (b·d - sum)
        let mut t = ExactSum::new();
        for &p in &self.partials {
            t.add(2.0 * p);
        }
        t.add_product(-a, d);
        t.add_product(-b, d);
        let t = t.value();
        if t > 0.0 || (t == 0.0 && b.to_bits() & 1 == 0) {
            b
        } else {
            a
        }
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Exactly rounded sum of a slice.
pub fn exact_sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<ExactSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quotient_rounds_the_exact_sum() {
        let big = 2f64.powi(53);
        let s: ExactSum = [big, 1.0].into_iter().collect();
        assert_eq!(s.value(), big);
        assert_eq!(s.quotient(2.0), 2f64.powi(52) + 0.5);
        assert_eq!(s.quotient(1.0), big);
        let s: ExactSum = [big, 3.0].into_iter().collect();
        assert_eq!(s.quotient(1.0), big + 4.0);
        let third: ExactSum = [1.0].into_iter().collect();
        assert_eq!(third.quotient(3.0), 1.0 / 3.0);
        assert_eq!(ExactSum::new().quotient(7.0), 0.0);
    }

    #[test]
    fn cancellation() {
        assert_eq!(exact_sum(&[1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum(&[0.1; 10]), 1.0);
        assert_eq!(exact_sum(&[]), 0.0);
    }

    #[test]
    fn products_are_exact() {
        let mut a = ExactSum::new();
        a.add_product(3.0, 0.1);
        let mut b = ExactSum::new();
        for _ in 0..3 {
            b.add(0.1);
        }
        assert_eq!(a.value(), b.value());
    }

    proptest! {
        #[test]
        fn quotient_matches_ieee_division_on_representable_sums(xs in proptest::collection::vec(-1_000_000i64..1_000_000, 0..20), d in 1u32..10_000) {
            let s: ExactSum = xs.iter().map(|&x| x as f64).collect();
            let exact: i64 = xs.iter().sum();
            prop_assert_eq!(s.quotient(d as f64), exact as f64 / d as f64);
        }

        #[test]
        fn quotient_is_invariant_to_common_scaling(xs in proptest::collection::vec(0.0f64..1.0, 1..20), d in 1u32..500, c in 2u32..5) {
            let s: ExactSum = xs.iter().copied().collect();
            let mut scaled = ExactSum::new();
            for &x in &xs {
                scaled.add_product(x, c as f64);
            }
            prop_assert_eq!(s.quotient(d as f64), scaled.quotient((d * c) as f64));
        }

        #[test]
        fn order_independent(mut xs in proptest::collection::vec(-1e3f64..1e3, 0..40), seed in 0usize..1000) {
            let forward = exact_sum(&xs);
            let n = xs.len().max(1);
            xs.rotate_left(seed % n);
            xs.reverse();
            prop_assert_eq!(forward.to_bits(), exact_sum(&xs).to_bits());
        }

        #[test]
        fn grouping_independent(xs in proptest::collection::vec(0f64..100.0, 1..40), cut in 0usize..40) {
            let cut = cut % xs.len();
            let mut left: ExactSum = xs[..cut].iter().copied().collect();
            let right: ExactSum = xs[cut..].iter().copied().collect();
            left.merge(&right);
            prop_assert_eq!(left.value().to_bits(), exact_sum(&xs).to_bits());
        }
    }
}
