use memflow_core::control::{min_norm_control, reachable_difference_check, Control, ControlNorm, ControlProblem};
use memflow_core::spectral::{interval_basis, SpectralVec};
use serde_json::json;

use super::Context;
use crate::config::{ControlNormName, InitialState};
use crate::error::RunError;
use crate::output::{csv, num, Artifacts};

/// The weighted sup norm may exceed the reweighting bound by this factor.
const WEIGHTED_FACTOR: f64 = 10.0;
/// Largest relative increase of the `H⁴` partial sums over the last quartile.
const TAIL_LIMIT: f64 = 0.05;
const SANDWICH_TOL: f64 = 1e-9;

pub fn run(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let cfg = ctx.config;
    let cc = &cfg.control;
    let basis = cfg.basis()?;
    let mask = cfg.build_mask(ctx.sub_seed(1))?;
    let kernel = cfg.kernel_fn();
    let modes = basis.len();
    let y0 = match cc.initial {
        InitialState::Zero => SpectralVec::zeros(modes, 0.0),
        InitialState::Random => SpectralVec::random(modes, 0.0, ctx.sub_seed(2)),
    };
    let y1 = SpectralVec::new(basis.eigenvalues().iter().map(|e| e.powf(cc.target_exponent)).collect(), 4.0);
    let norm = match cc.norm {
        ControlNormName::L2 => ControlNorm::L2,
        ControlNormName::WeightedSup => ControlNorm::WeightedSup { alpha: cc.weight_exponent },
    };
    let mut problem = ControlProblem::new(&kernel, &basis, &mask, y0.clone(), y1, norm);
    problem.steps_per_cell = cc.steps_per_cell;
    problem.replay_tolerance = cc.replay_tolerance * ctx.tolerance_scale;
    let report = min_norm_control(&problem, ctx.sub_seed(3))?;
    let u = &report.control;

    let mut art = Artifacts::new("control");
    art.file("control.csv", u.to_csv(&mask)?);
    let bound = cc.max_final_error * ctx.tolerance_scale;
    art.check("final error", report.final_error <= bound, format!("{:.3e}, bound {bound:.1e}", report.final_error));
    let outside = (0..mask.n_t())
        .flat_map(|c| (0..mask.n_x()).map(move |x| (c, x)))
        .filter(|&(c, x)| !mask.get(c, x) && u.value(c, x).to_bits() != 0)
        .count();
    art.check("control vanishes outside the mask", outside == 0, format!("{outside} nonzero cells outside"));
    if let Some(opt) = &report.optimality {
        art.check(
            "null-space perturbations never reduce the norm",
            opt.worst_change >= -1e-8,
            format!("worst relative change {:.3e} over {} directions", opt.worst_change, opt.directions),
        );
    }
    if let (Some(ws), Some(lb)) = (report.weighted_sup, report.irls_objective) {
        art.check(
            "weighted sup within the reweighting bound",
            ws.is_finite() && ws <= WEIGHTED_FACTOR * lb,
            format!("sup {ws:.4e}, bound {lb:.4e}, {} iterations", report.irls_iterations),
        );
    }
    art.say(format!(
        "final error {:.3e}, replay discrepancy {:.3e}, L2 norm {:.4e}, Gram condition {:.3e}, moc {:.4e}",
        report.final_error, report.replay_discrepancy, report.l2_norm, report.gram_condition, report.moc
    ));

    let mut reach = serde_json::Value::Null;
    if cc.reach_modes > 0 {
        let rb = interval_basis(cc.reach_modes, cfg.basis.n_x.max(4 * cc.reach_modes))?;
        // Brownian-bridge type initial state, bounded in L² uniformly in the truncation
        let mut ry0 = SpectralVec::random(cc.reach_modes, 0.0, ctx.sub_seed(4));
        for (j, a) in ry0.coeffs.iter_mut().enumerate() {
            *a /= (j + 1) as f64;
        }
        let ru = Control::random(&mask, ctx.sub_seed(5));
        let r = reachable_difference_check(&kernel, &rb, &mask, &ry0, &ru, cc.steps_per_cell)?;
        let scale = r.difference.coeffs.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
        art.file(
            "reachable.csv",
            csv(
                &["j", "difference", "partial_sum_h4"],
                (0..rb.len()).map(|j| vec![(j + 1).to_string(), num(r.difference.coeffs[j]), num(r.partial_sums[j])]),
            ),
        );
        art.check("H4 partial sums flatten", r.tail_increase < TAIL_LIMIT, format!("last-quartile increase {:.3e}", r.tail_increase));
        art.check(
            "memory run equals memoryless run plus difference",
            r.sandwich_defect <= SANDWICH_TOL * scale * ctx.tolerance_scale,
            format!("defect {:.3e}", r.sandwich_defect),
        );
        art.say(format!("reachable difference: tail increase {:.3e}, sandwich defect {:.3e}", r.tail_increase, r.sandwich_defect));
        reach = json!({ "modes": cc.reach_modes, "tail_increase": r.tail_increase, "sandwich_defect": r.sandwich_defect });
    }

    let summary = json!({
        "final_error": report.final_error,
        "replay_discrepancy": report.replay_discrepancy,
        "gram_condition": report.gram_condition,
        "l2_norm": report.l2_norm,
        "weighted_sup": report.weighted_sup,
        "irls_lower_bound": report.irls_objective,
        "irls_iterations": report.irls_iterations,
        "optimality": report.optimality.map(|o| json!({ "directions": o.directions, "worst_change": o.worst_change, "leakage": o.leakage })),
        "moc": report.moc,
        "target_h4_norm": report.target_h4_norm,
        "reachable": reach,
    });
    art.file("report.json", serde_json::to_string_pretty(&summary).expect("json") + "\n");
    art.summary = summary;
    Ok(art)
}
