use memflow_core::geometry::{analytic_lower_bound_check, ball_average, moc_functional, random_rects, slice_measure, weighted_slice};
use rayon::prelude::*;
use serde_json::json;

use super::Context;
use crate::error::RunError;
use crate::output::{csv, num, Artifacts};

pub fn run(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let cfg = ctx.config;
    let mc = &cfg.moc;
    let mask = cfg.build_mask(ctx.sub_seed(1))?;
    let (s, t) = cfg.window_or_full();
    let kernel = cfg.kernel_fn();
    let mut art = Artifacts::new("moc");

    let moc = moc_functional(&mask, s, t);
    // twelve decimals hide the summation rounding; the exact value is in the summary
    art.say(format!("moc_functional = {}", (moc * 1e12).round() / 1e12));
    let columns = (0..mask.n_x())
        .map(|x| vec![x.to_string(), num(mask.x_mid(x)), num(slice_measure(&mask, x, s, t)), num(weighted_slice(&mask, &kernel, s, t, x))]);
    art.file("columns.csv", csv(&["x_cell", "x_mid", "slice_measure", "weighted_slice"], columns));
    let balls: Vec<f64> = mc.radii.iter().map(|&r| ball_average(&mask, r, t)).collect();
    art.file("ball_average.csv", csv(&["r", "ball_average"], mc.radii.iter().zip(&balls).map(|(r, b)| vec![num(*r), num(*b)])));
    if moc > 0.0 {
        let ok = balls.iter().all(|&b| b >= moc * (1.0 - 1e-12));
        art.check(
            "MOC implies ball-average dominance",
            ok,
            format!("moc {moc:.6e}, min ball average {:.6e}", balls.iter().copied().fold(f64::INFINITY, f64::min)),
        );
    }

    let functions = ctx.kernels(mc.functions.as_ref())?;
    let mut bound_rows = Vec::new();
    let mut bounds = Vec::new();
    for (name, f) in &functions {
        let check = analytic_lower_bound_check(&mask, f, s, t)?;
        art.check(
            &format!("lower bound for {name}"),
            check.verified,
            format!("C = {:.4e}, beta = {}, violations {}", check.c, check.beta, check.violations),
        );
        bound_rows.push(vec![
            format!("\"{name}\""),
            num(check.c),
            check.beta.to_string(),
            check.zeros.len().to_string(),
            check.violations.to_string(),
            num(check.worst_ratio),
        ]);
        bounds.push(json!({ "function": name, "c": check.c, "beta": check.beta, "verified": check.verified }));
    }
    art.file("lower_bound.csv", csv(&["function", "c", "beta", "zeros", "violations", "worst_ratio"], bound_rows));

    // the implication on random masks
    let seeds: Vec<u64> = (0..mc.random_masks as u64).map(|i| ctx.sub_seed(100 + i)).collect();
    let random: Vec<Result<(f64, f64), RunError>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let q = random_rects(cfg.time.horizon, cfg.time.n_t, mask.n_x(), seed, 1 + i % 6)?;
            let m = moc_functional(&q, 0.0, q.horizon());
            let b = mc.radii.iter().map(|&r| ball_average(&q, r, q.horizon())).fold(f64::INFINITY, f64::min);
            Ok((m, b))
        })
        .collect();
    let mut failures = 0;
    let mut rows = Vec::new();
    for (i, r) in random.into_iter().enumerate() {
        let (m, b) = r?;
        if m > 0.0 && b < m * (1.0 - 1e-12) {
            failures += 1;
        }
        rows.push(vec![i.to_string(), num(m), num(b)]);
    }
    art.file("random_masks.csv", csv(&["mask", "moc", "min_ball_average"], rows));
    art.check("MOC implies ball-average on random masks", failures == 0, format!("{failures} of {} failed", mc.random_masks));

    art.summary = json!({ "moc": moc, "window": [s, t], "ball_average": balls, "lower_bounds": bounds });
    Ok(art)
}
