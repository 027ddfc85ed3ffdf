//! Adaptive Simpson quadrature.

use crate::error::{Error, Result};

/// Adaptive Simpson integrator with an absolute error target.
#[derive(Debug, Clone, Copy)]
pub struct Simpson {
    pub abs_tol: f64,
    pub max_depth: u32,
}

impl Default for Simpson {
    fn default() -> Self {
        Simpson {
            abs_tol: 1e-6,
            max_depth: 48,
        }
    }
}

struct Panel {
    a: f64,
    m: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

impl Simpson {
    pub fn new(abs_tol: f64) -> Self {
        Simpson {
            abs_tol,
            ..Default::default()
        }
    }

    /// Integrate `f` over `[a, b]`.
    ///
    /// Fails when the integrand is not finite somewhere it is sampled, or
    /// when a panel still misses its share of the tolerance at `max_depth`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        let whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0;
        let panel = Panel {
            a,
            m,
            b,
            fa,
            fm,
            fb,
            whole,
        };
        check_finite(&panel)?;
        self.refine(&f, panel, self.abs_tol, self.max_depth)
    }

    /// Integrate over consecutive pieces `[p0, p1], [p1, p2], ...`.
    ///
    /// The tolerance is shared out in proportion to piece length, with a
    /// floor so that very short pieces do not demand absurd accuracy.
    pub fn integrate_pieces<F: Fn(f64) -> f64>(&self, f: F, points: &[f64]) -> Result<f64> {
        if points.len() < 2 {
            return Ok(0.0);
        }
        let total = (points[points.len() - 1] - points[0]).abs();
        let pieces = (points.len() - 1) as f64;
        let mut sum = 0.0;
        for w in points.windows(2) {
            let share = if total > 0.0 { (w[1] - w[0]).abs() / total } else { 0.0 };
            let tol = self.abs_tol * share.max(1e-3 / pieces);
            let piece = Simpson {
                abs_tol: tol,
                max_depth: self.max_depth,
            };
            sum += piece.integrate(&f, w[0], w[1])?;
        }
        Ok(sum)
    }

    fn refine<F: Fn(f64) -> f64>(&self, f: &F, p: Panel, tol: f64, depth: u32) -> Result<f64> {
        let lm = 0.5 * (p.a + p.m);
        let rm = 0.5 * (p.m + p.b);
        let (flm, frm) = (f(lm), f(rm));
        let left = (p.m - p.a) * (p.fa + 4.0 * flm + p.fm) / 6.0;
        let right = (p.b - p.m) * (p.fm + 4.0 * frm + p.fb) / 6.0;
        if !(flm.is_finite() && frm.is_finite()) {
            return Err(Error::Quadrature {
                a: p.a,
                b: p.b,
                reason: "integrand is not finite".into(),
            });
        }
        let delta = left + right - p.whole;
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::Quadrature {
                a: p.a,
                b: p.b,
                reason: format!(
                    "no convergence at maximum depth (error estimate {:.3e})",
                    delta.abs() / 15.0
                ),
            });
        }
        let l = Panel {
            a: p.a,
            m: lm,
            b: p.m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
        };
        let r = Panel {
            a: p.m,
            m: rm,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
        };
        Ok(self.refine(f, l, 0.5 * tol, depth - 1)? + self.refine(f, r, 0.5 * tol, depth - 1)?)
    }
}

fn check_finite(p: &Panel) -> Result<()> {
    if p.fa.is_finite() && p.fm.is_finite() && p.fb.is_finite() {
        Ok(())
    } else {
        Err(Error::Quadrature {
            a: p.a,
            b: p.b,
            reason: "integrand is not finite".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomials_are_exact() {
        let quad = Simpson::default();
        let v = quad.integrate(|x| 3.0 * x * x * x - x + 2.0, -1.0, 2.0).unwrap();
        // 3/4 (16 - 1) - (4 - 1)/2 + 2 * 3
        assert_relative_eq!(v, 11.25 - 1.5 + 6.0, max_relative = 1e-14);
    }

    #[test]
    fn smooth_functions_meet_tolerance() {
        let quad = Simpson::new(1e-10);
        let v = quad.integrate(f64::sin, 0.0, std::f64::consts::PI).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-9);
        let v = quad.integrate(|x| (-x * x).exp(), -6.0, 6.0).unwrap();
        assert_relative_eq!(v, std::f64::consts::PI.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn pieces_handle_endpoint_growth() {
        // integral_0^{1 - 1e-6} dx / (1 - x) = ln(1e6)
        let mut pts = vec![0.0];
        pts.extend((1..=6).map(|k| 1.0 - 10f64.powi(-k)));
        let v = Simpson::new(1e-9).integrate_pieces(|x| 1.0 / (1.0 - x), &pts).unwrap();
        assert_relative_eq!(v, 1e6f64.ln(), max_relative = 1e-9);
    }

    #[test]
    fn non_finite_integrand_is_an_error() {
        let err = Simpson::default().integrate(|x| 1.0 / x, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }

    #[test]
    fn depth_exhaustion_is_an_error() {
        let quad = Simpson {
            abs_tol: 1e-14,
            max_depth: 3,
        };
        assert!(quad.integrate(|x| (50.0 * x).sin(), 0.0, 10.0).is_err());
    }
}
