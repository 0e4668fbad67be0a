//! Shared helpers for the integration and acceptance suites.

/// Independent finite-difference oracle for the two-bin Laplace variance.
///
/// Builds the expected log-posterior of the two-bin model — expected counts
/// `E[Delta_j] = N_j (1 - exp(-d_j))` frozen at the evaluation point, the
/// mid-bin exposure convention, and the symmetric split prior — then
/// differentiates it numerically: central-difference Hessian in `(H, R)`,
/// symmetrized, inverted, and pushed through the delta method for
/// `d_1 = H * R` (gradient `(R, H)`).
pub fn var_d1_fd(h: f64, r: f64, n1: f64, n2: f64, a: f64, k: f64) -> f64 {
    let d1 = h * r;
    let d2 = h * (1.0 - r);
    let ed1 = n1 * (1.0 - (-d1).exp());
    let ed2 = n2 * (1.0 - (-d2).exp());
    let logpost = |hh: f64, rr: f64| {
        let dd1 = hh * rr;
        let dd2 = hh * (1.0 - rr);
        ed1 * dd1.ln() + ed2 * dd2.ln() - dd1 * (n1 - 0.5 * ed1) - dd2 * (n2 - 0.5 * ed2)
            + (a - 1.0) * hh.ln()
            + a * k * rr.ln()
            + a * k * (1.0 - rr).ln()
    };
    let eh = 1e-5 * h;
    let er = 1e-6;
    let f00 = logpost(h, r);
    let dhh = (logpost(h + eh, r) - 2.0 * f00 + logpost(h - eh, r)) / (eh * eh);
    let drr = (logpost(h, r + er) - 2.0 * f00 + logpost(h, r - er)) / (er * er);
    let dhr = (logpost(h + eh, r + er) - logpost(h + eh, r - er) - logpost(h - eh, r + er)
        + logpost(h - eh, r - er))
        / (4.0 * eh * er);
    // Negative Hessian in (H, R), 2x2 inverse.
    let (a11, a12, a22) = (-dhh, -dhr, -drr);
    let det = a11 * a22 - a12 * a12;
    let (s11, s12, s22) = (a22 / det, -a12 / det, a11 / det);
    r * r * s11 + 2.0 * r * h * s12 + h * h * s22
}

/// Path to the bundled monthly surveillance sample.
pub fn sample_csv() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/navrongo_sample.csv")
}
