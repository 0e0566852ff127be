//! Scalar numeric helpers: 1-D minimization, quadrature, and parabolic
//! interpolation. Internal to the crate.

/// Golden-section minimization of `f` on `[a, b]` to absolute x-tolerance
/// `tol`. Returns `(x_min, f(x_min))`. Converges to a local minimum inside
/// the bracket; the bracket must be chosen so the wanted minimum is the only
/// one it contains.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (a + b);
    let fmid = f(mid);
    (mid, fmid)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance
/// `rel_tol`.
///
/// The tolerance scale comes from a 16-panel composite scan, not from the
/// three-point whole-interval estimate: a periodic integrand can put all
/// three of those samples on its zeros, and a zero scale would turn the
/// stopping test absolute and unreachable.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    const PANELS: usize = 16;
    let h = (b - a) / PANELS as f64;
    let mut scale = 0.0;
    for k in 0..PANELS {
        let x0 = a + k as f64 * h;
        let x1 = a + (k + 1) as f64 * h;
        scale += (h / 6.0 * (f(x0) + 4.0 * f(0.5 * (x0 + x1)) + f(x1))).abs();
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let eps = rel_tol * scale.max(whole.abs()).max(f64::MIN_POSITIVE);
    simpson_recurse(f, a, b, fa, fb, m, fm, whole, eps, 40)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let refined = left + right;
    if depth == 0 || (refined - whole).abs() <= 15.0 * eps {
        refined + (refined - whole) / 15.0
    } else {
        simpson_recurse(f, a, m, fa, fm, lm, flm, left, 0.5 * eps, depth - 1)
            + simpson_recurse(f, m, b, fm, fb, rm, frm, right, 0.5 * eps, depth - 1)
    }
}

/// Vertex abscissa of the parabola through three points, or `None` when the
/// points are not strictly convex (no interior minimum).
pub fn parabola_vertex(x0: f64, y0: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> Option<f64> {
    let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
    if denom == 0.0 {
        return None;
    }
    let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
    let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
    if !(a > 0.0) || !b.is_finite() {
        return None;
    }
    let vertex = -b / (2.0 * a);
    vertex.is_finite().then_some(vertex)
}
