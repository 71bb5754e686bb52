//! Real polynomials in the monomial basis.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    /// `coeffs[k]` multiplies `x^k`; trailing zeros are trimmed.
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree, with the zero polynomial reported as 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() <= 1 {
            return Self::new(vec![0.0]);
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }

    /// Real roots in `[lo, hi]`, sorted.
    ///
    /// The critical points (roots of the derivative, found recursively) split
    /// the interval into monotone pieces; each piece holds at most one root,
    /// located by bisection.
    pub fn roots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        if self.is_zero() || self.degree() == 0 || lo > hi {
            return Vec::new();
        }
        if self.degree() == 1 {
            let r = -self.coeffs[0] / self.coeffs[1];
            return if (lo..=hi).contains(&r) { vec![r] } else { Vec::new() };
        }
        let mut knots = vec![lo];
        knots.extend(self.derivative().roots_in(lo, hi));
        knots.push(hi);

        let mut roots: Vec<f64> = Vec::new();
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = (self.eval(a), self.eval(b));
            let r = if fa == 0.0 {
                Some(a)
            } else if fb == 0.0 {
                Some(b)
            } else if fa.signum() != fb.signum() {
                Some(self.bisect(a, b, fa))
            } else {
                None
            };
            if let Some(r) = r {
                if roots.last().is_none_or(|last| (r - last).abs() > 0.0) {
                    roots.push(r);
                }
            }
        }
        roots
    }

    fn bisect(&self, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = self.eval(m);
            if fm == 0.0 {
                return m;
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    /// `max |p|` over `[lo, hi]`, attained at an endpoint or a critical point.
    pub fn max_abs_on(&self, lo: f64, hi: f64) -> f64 {
        let mut best = self.eval(lo).abs().max(self.eval(hi).abs());
        for r in self.derivative().roots_in(lo, hi) {
            best = best.max(self.eval(r).abs());
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_of_product_form() {
        // (x - 1)(x + 2)(x - 0.5) = x³ + 0.5x² - 2.5x + 1
        let p = Polynomial::new(vec![1.0, -2.5, 0.5, 1.0]);
        let r = p.roots_in(-5.0, 5.0);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-2.0, 0.5, 1.0]) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        assert_eq!(p.roots_in(-1.0, 0.4).len(), 0);
    }

    #[test]
    fn max_abs_uses_interior_extrema() {
        // 1 - x² peaks at 0 inside [-0.5, 2], but |.| is largest at x=2.
        let p = Polynomial::new(vec![1.0, 0.0, -1.0]);
        assert_eq!(p.max_abs_on(-0.5, 2.0), 3.0);
        assert_eq!(p.max_abs_on(-0.5, 0.5), 1.0);
        let cubic = Polynomial::new(vec![0.0, -3.0, 0.0, 1.0]);
        // x³ - 3x has |value| 2 at x = ±1.
        assert!((cubic.max_abs_on(-1.5, 1.5) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn trims_and_differentiates() {
        let p = Polynomial::new(vec![1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(p.degree(), 2);
        assert_eq!(p.derivative().coeffs(), &[0.0, 2.0]);
        assert_eq!(p.derivative().derivative().derivative().coeffs(), &[0.0]);
        assert!(Polynomial::new(vec![]).is_zero());
    }

    #[test]
    fn double_root_found_once() {
        // (x - 1)² touches zero without a sign change.
        let p = Polynomial::new(vec![1.0, -2.0, 1.0]);
        let r = p.roots_in(-3.0, 3.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 1.0).abs() < 1e-12);
    }
}
