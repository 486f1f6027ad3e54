//! Bounded derivative-free scalar maximization.

use crate::error::{Error, Result};

const GOLDEN_FRAC: f64 = 0.381_966_011_250_105_1; // (3 - sqrt(5)) / 2
const MAX_ITER: usize = 200;

/// Maximizes `f` over `[lo, hi]` to within `tol` on the argument.
///
/// Brent-style: golden-section bracketing with successive parabolic
/// interpolation, run on `-f`. Both endpoints are probed explicitly and win
/// ties (lowest first), so a monotone-decreasing objective returns `lo`
/// exactly; that is the "constraint inactive" case the dual solver relies
/// on. Fully deterministic. A non-finite objective value at any probe is an
/// error carrying the probe location.
pub fn maximize_scalar<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::contract(format!("bad bracket [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::contract("tol must be positive"));
    }
    let mut eval = |x: f64| -> Result<f64> {
        let v = f(x)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteProbe { probe: x, value: v });
        }
        Ok(-v) // minimize the negation
    };
    if lo == hi {
        eval(lo)?;
        return Ok(lo);
    }

    let f_lo = eval(lo)?;
    let f_hi = eval(hi)?;

    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN_FRAC * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = eval(x)?;
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let sqrt_eps = f64::EPSILON.sqrt();

    for _ in 0..MAX_ITER {
        let m = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }

        let mut use_golden = true;
        if e.abs() > tol1 {
            // Parabola through (v, fv), (w, fw), (x, fx).
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if (u - a) < tol2 || (b - u) < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN_FRAC * e;
        }

        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = eval(u)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }

    // Endpoints win ties so boundary optima come back exact.
    let mut best = (x, fx);
    if f_hi <= best.1 {
        best = (hi, f_hi);
    }
    if f_lo <= best.1 {
        best = (lo, f_lo);
    }
    Ok(best.0)
}
