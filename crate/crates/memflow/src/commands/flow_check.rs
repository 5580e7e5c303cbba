use memflow_core::flow::{kernel_rep_mode, remainder_bound, volterra_mode, Decomposition, TimeGrid};
use memflow_core::resolvent::ModeResolvent;
use memflow_core::ExpPolyFn;
use rayon::prelude::*;
use serde_json::json;

use super::Context;
use crate::config::FlowCheckConfig;
use crate::error::RunError;
use crate::output::{csv, num, Artifacts};

/// Errors below this are at the accuracy of the reference and carry no
/// convergence information.
const ORDER_FLOOR: f64 = 1e-11;

struct ModeCheck {
    rows: Vec<[f64; 5]>,
    /// Largest deviation from the reference at `Δt`, `Δt/2`, `Δt/4`.
    errors: [f64; 3],
}

fn eta(j: usize) -> f64 {
    (j as f64 * std::f64::consts::PI).powi(2)
}

fn mode_check(kernel: &ExpPolyFn, j: usize, fc: &FlowCheckConfig) -> Result<ModeCheck, RunError> {
    let eta = eta(j);
    let steps = (fc.horizon / fc.dt).round().max(1.0) as usize;
    let grid = TimeGrid::new(fc.horizon, steps)?;
    let idx: Vec<usize> = (1..=fc.samples).map(|s| (s * steps / fc.samples).max(1)).collect();
    let dec = Decomposition::new(kernel, fc.order, fc.series_terms)?;
    let res = ModeResolvent::new(kernel, eta)?;
    let mut errors = [0.0f64; 3];
    let mut rows = Vec::with_capacity(idx.len());
    let mut reference = Vec::with_capacity(idx.len());
    for &i in &idx {
        let t = grid.time(i);
        reference.push((t, kernel_rep_mode(kernel, eta, t, fc.series_terms)?));
    }
    for (level, factor) in [1usize, 2, 4].into_iter().enumerate() {
        let fine = grid.refine(factor);
        let y = volterra_mode(kernel, eta, &fine, 1.0, None)?;
        for (&i, &(t, kr)) in idx.iter().zip(&reference) {
            let v = y[i * factor];
            errors[level] = errors[level].max((v - kr).abs());
            if level == 0 {
                rows.push([t, v, kr, dec.parts(eta, t)?.sum, res.eval(t)]);
            }
        }
    }
    Ok(ModeCheck { rows, errors })
}

pub fn run(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let fc = &ctx.config.flow_check;
    let kernels = ctx.kernels(fc.kernels.as_ref())?;
    let tol = |j: usize| 1e-6f64.max(fc.dt2_constant * eta(j).powi(2) * fc.dt * fc.dt) * ctx.tolerance_scale;
    let mut art = Artifacts::new("flow-check");

    let jobs: Vec<(usize, usize)> = (0..kernels.len()).flat_map(|k| fc.modes.iter().map(move |&j| (k, j))).collect();
    let results: Vec<Result<ModeCheck, RunError>> = jobs.par_iter().map(|&(k, j)| mode_check(&kernels[k].1, j, fc)).collect();

    let mut agreement = Vec::new();
    let mut convergence = Vec::new();
    // largest deviation relative to its mode's bound
    let mut worst = [0.0f64; 2];
    let mut worst_ratio = [0.0f64; 2];
    let mut worst_order = f64::INFINITY;
    for (&(k, j), res) in jobs.iter().zip(results) {
        let res = res?;
        let name = &kernels[k].0;
        for r in &res.rows {
            let (d1, d2) = ((r[1] - r[2]).abs(), (r[1] - r[3]).abs());
            worst[0] = worst[0].max(d1);
            worst[1] = worst[1].max(d2);
            worst_ratio[0] = worst_ratio[0].max(d1 / tol(j));
            worst_ratio[1] = worst_ratio[1].max(d2 / tol(j));
            agreement.push(vec![
                format!("\"{name}\""),
                j.to_string(),
                num(r[0]),
                num(r[1]),
                num(r[2]),
                num(r[3]),
                num(r[4]),
                num(d1),
                num(d2),
                num(tol(j)),
            ]);
        }
        for (level, e) in res.errors.iter().enumerate() {
            convergence.push(vec![format!("\"{name}\""), j.to_string(), num(fc.dt / (1u32 << level) as f64), num(*e)]);
        }
        let e = res.errors;
        let order = if e[2] < ORDER_FLOOR { f64::INFINITY } else { (e[0] / e[1]).log2().min((e[1] / e[2]).log2()) };
        worst_order = worst_order.min(order);
    }
    art.file(
        "flow_agreement.csv",
        csv(
            &["kernel", "j", "t", "volterra", "kernel_rep", "decomposition", "resolvent", "diff_kernel_rep", "diff_decomposition", "bound"],
            agreement,
        ),
    );
    art.file("convergence.csv", csv(&["kernel", "j", "dt", "max_error"], convergence));
    art.check("volterra vs kernel_rep", worst_ratio[0] <= 1.0, format!("max diff {:.3e}, max diff/bound {:.3}", worst[0], worst_ratio[0]));
    art.check(
        "volterra vs decomposition",
        worst_ratio[1] <= 1.0,
        format!("max diff {:.3e}, max diff/bound {:.3}", worst[1], worst_ratio[1]),
    );
    let min_order = fc.min_convergence_order;
    art.check("convergence order", worst_order >= min_order, format!("observed {worst_order:.3}, required {min_order:.3}"));

    // remainder bound
    let rjobs: Vec<(usize, u32)> = (0..kernels.len()).flat_map(|k| fc.remainder_orders.iter().map(move |&n| (k, n))).collect();
    let rres: Vec<Result<Vec<[f64; 4]>, RunError>> = rjobs
        .par_iter()
        .map(|&(k, n)| {
            let dec = Decomposition::new(&kernels[k].1, n, fc.series_terms)?;
            let mut rows = Vec::new();
            for j in 1..=fc.remainder_modes {
                for s in 1..=fc.remainder_samples {
                    let t = fc.remainder_horizon * s as f64 / fc.remainder_samples as f64;
                    let r = dec.remainder_rn(eta(j), t)?;
                    rows.push([j as f64, t, r, remainder_bound(&kernels[k].1, n, t)]);
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rem_rows = Vec::new();
    let mut violations = 0usize;
    for (&(k, n), rows) in rjobs.iter().zip(rres) {
        for r in rows? {
            if r[2].abs() > r[3] {
                violations += 1;
            }
            rem_rows.push(vec![
                format!("\"{}\"", kernels[k].0),
                n.to_string(),
                (r[0] as usize).to_string(),
                num(r[1]),
                num(r[2]),
                num(r[3]),
            ]);
        }
    }
    let checked = rem_rows.len();
    art.file("remainder.csv", csv(&["kernel", "order", "j", "t", "remainder", "bound"], rem_rows));
    art.check("remainder bound", violations == 0, format!("{violations} violations in {checked} samples"));

    art.summary = json!({
        "dt2_constant": fc.dt2_constant,
        "worst_ratio_kernel_rep": worst_ratio[0],
        "worst_ratio_decomposition": worst_ratio[1],
        "max_diff_kernel_rep": worst[0],
        "max_diff_decomposition": worst[1],
        "min_convergence_order": if worst_order.is_finite() { json!(worst_order) } else { json!(null) },
        "remainder_samples": checked,
        "remainder_violations": violations,
    });
    art.say(format!("max |volterra - kernel_rep| = {:.3e}, max |volterra - decomposition| = {:.3e}", worst[0], worst[1]));
    art.say(format!("remainder bound: {violations} violations in {checked} samples"));
    Ok(art)
}
