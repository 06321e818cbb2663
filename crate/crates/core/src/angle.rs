//! Polynomial `atan2` used to skip the libm call away from bin edges.

/// Bound on `|approx_atan2 − atan2|`, with a wide safety factor over the
/// polynomial's 2e-8 rad worst case.
pub(crate) const ATAN2_TOLERANCE: f64 = 1e-6;

#[inline]
pub(crate) fn approx_atan2(y: f64, x: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let (ax, ay) = (x.abs(), y.abs());
    let (mn, mx) = if ax < ay { (ax, ay) } else { (ay, ax) };
    let a = mn / mx;
    let s = a * a;
    const C: [f64; 8] = [
        -0.333_331_452_8,
        0.199_935_508_5,
        -0.142_088_994_4,
        0.106_562_639_3,
        -0.075_289_640_0,
        0.042_909_613_8,
        -0.016_165_736_7,
        0.002_866_225_7,
    ];
    let p = C.iter().rev().fold(0.0, |acc, &c| acc * s + c);
    let mut r = a + a * s * p;
    if ay > ax {
        r = FRAC_PI_2 - r;
    }
    if x < 0.0 {
        r = PI - r;
    }
    if y.is_sign_negative() {
        r = -r;
    }
    r
}
