use memflow_core::kernel::{h_coeff, p_coeff};
use memflow_core::ExpPolyFn;
use rayon::prelude::*;
use serde_json::json;

use super::Context;
use crate::error::RunError;
use crate::output::{csv, num, Artifacts};

/// Closed forms of the first coefficient functions.
struct Expected {
    h0: ExpPolyFn,
    h1: ExpPolyFn,
    p0: ExpPolyFn,
    p1: ExpPolyFn,
}

fn expected(m: &ExpPolyFn) -> Expected {
    let m0 = m.eval(0.0);
    let m1 = m.derivative(1).eval(0.0);
    Expected {
        h0: ExpPolyFn::zero(),
        h1: m.scale(-1.0),
        p0: ExpPolyFn::monomial(m0, 1),
        p1: ExpPolyFn::constant(m0).add(&ExpPolyFn::monomial(-m1, 1)).add(&ExpPolyFn::monomial(0.5 * m0 * m0, 2)),
    }
}

struct KernelResult {
    h: Vec<ExpPolyFn>,
    p: Vec<ExpPolyFn>,
    symbolic: [bool; 4],
    grid_error: f64,
    endpoint_error: f64,
}

fn analyse(m: &ExpPolyFn, max_order: u32, horizon: f64, points: usize) -> KernelResult {
    let h: Vec<ExpPolyFn> = (0..=max_order).map(|l| h_coeff(m, l)).collect();
    let p: Vec<ExpPolyFn> = (0..=max_order).map(|l| p_coeff(m, l)).collect();
    let e = expected(m);
    let pairs = [(&h[0], &e.h0), (&h[1.min(h.len() - 1)], &e.h1), (&p[0], &e.p0), (&p[1.min(p.len() - 1)], &e.p1)];
    let symbolic = pairs.map(|(a, b)| a.sub(b).is_zero());
    let mut grid_error = 0.0f64;
    for i in 0..points {
        let t = horizon * i as f64 / (points - 1) as f64;
        for (a, b) in pairs {
            grid_error = grid_error.max((a.eval(t) - b.eval(t)).abs());
        }
    }
    let endpoint_error = (0..h.len()).map(|l| (p[l].eval(0.0) + h[l].eval(0.0)).abs()).fold(0.0, f64::max);
    KernelResult { h, p, symbolic, grid_error, endpoint_error }
}

pub fn run(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let kc = &ctx.config.kernel_tables;
    let kernels = ctx.kernels(kc.kernels.as_ref())?;
    let horizon = ctx.config.time.horizon;
    let tol = kc.tolerance * ctx.tolerance_scale;
    let max_order = kc.max_order.max(1);
    let results: Vec<KernelResult> = kernels.par_iter().map(|(_, m)| analyse(m, max_order, horizon, kc.grid_points)).collect();

    let mut art = Artifacts::new("kernel");
    let mut table = Vec::new();
    let mut samples = Vec::new();
    let mut summary = Vec::new();
    for ((name, _), r) in kernels.iter().zip(&results) {
        for l in 0..r.h.len() {
            table.push(vec![
                format!("\"{name}\""),
                l.to_string(),
                format!("\"{}\"", r.h[l].to_expr_string()),
                format!("\"{}\"", r.p[l].to_expr_string()),
                num(r.p[l].eval(0.0) + r.h[l].eval(0.0)),
            ]);
            for i in 0..kc.grid_points {
                let t = horizon * i as f64 / (kc.grid_points - 1) as f64;
                samples.push(vec![format!("\"{name}\""), l.to_string(), num(t), num(r.h[l].eval(t)), num(r.p[l].eval(t))]);
            }
        }
        let labels = ["h_0 = 0", "h_1 = -M", "p_0 = M(0) t", "p_1 = M(0) - M'(0) t + M(0)^2 t^2 / 2"];
        for (label, ok) in labels.iter().zip(r.symbolic) {
            art.check(&format!("{name}: {label} (symbolic)"), ok, "");
        }
        art.check(&format!("{name}: closed forms on grid"), r.grid_error <= tol, format!("max error {:.3e}", r.grid_error));
        art.check(&format!("{name}: p_l(0) + h_l(0) = 0"), r.endpoint_error <= tol, format!("max {:.3e}", r.endpoint_error));
        summary.push(json!({ "kernel": name, "grid_error": r.grid_error, "endpoint_error": r.endpoint_error }));
        art.say(format!("{name}: grid error {:.3e}, endpoint error {:.3e}", r.grid_error, r.endpoint_error));
    }
    art.file("coefficients.csv", csv(&["kernel", "l", "h_l", "p_l", "p_l(0)+h_l(0)"], table));
    art.file("samples.csv", csv(&["kernel", "l", "t", "h_l", "p_l"], samples));
    art.summary = json!({ "kernels": summary, "tolerance": tol });
    Ok(art)
}
