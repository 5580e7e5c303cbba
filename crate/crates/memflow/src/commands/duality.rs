use memflow_core::control::{duality_range_test, extremal_functional, observability_duality};
use memflow_core::observability::{two_sided_constants, OptimOptions};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use super::obsconst::setup_for;
use super::Context;
use crate::error::RunError;
use crate::output::{csv, num, Artifacts};

/// `C₂ · c_lower` must lie in `[1/RATIO_FACTOR, RATIO_FACTOR]`.
const RATIO_FACTOR: f64 = 2.0;

fn closed_form(r: &DMatrix<f64>, o: &DMatrix<f64>, seed: u64) -> Result<(f64, f64), RunError> {
    let n = r.nrows();
    let mut functionals: Vec<DVector<f64>> = (0..n).map(|j| DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 })).collect();
    functionals.push(extremal_functional(r, o)?);
    let rep = duality_range_test(r, o, &functionals, 1e-12, seed)?;
    Ok((rep.c1, rep.c2))
}

pub fn run(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let cfg = ctx.config;
    let dc = &cfg.duality;
    let mut art = Artifacts::new("duality");
    let mut rows = Vec::new();
    let mut summary = serde_json::Map::new();

    if dc.closed_form {
        let id = DMatrix::<f64>::identity(2, 2);
        let (c1, c2) = closed_form(&id, &id, ctx.sub_seed(1))?;
        art.check("identity maps: C1 = C2 = 1", c1 == 1.0 && c2 == 1.0, format!("C1 = {c1:e}, C2 = {c2:e}"));
        rows.push(vec!["identity".into(), num(c1), num(c2), String::new()]);
        let o = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
        let (c1, c2) = closed_form(&id, &o, ctx.sub_seed(2))?;
        art.check("diag(1, 1/2): C1 = C2 = 2", c1 == 2.0 && c2 == 2.0, format!("C1 = {c1:e}, C2 = {c2:e}"));
        art.say(format!("closed form: C1 = {c1}, C2 = {c2}"));
        rows.push(vec!["diag(1,1/2)".into(), num(c1), num(c2), String::new()]);
        summary.insert("closed_form".into(), json!({ "c1": c1, "c2": c2 }));
    }

    if dc.observability {
        let setup = setup_for(cfg, cfg.basis.modes, cfg.basis.n_x, ctx.sub_seed(3))?;
        let rep = observability_duality(&setup, ctx.sub_seed(4))?;
        let opts = OptimOptions { seed: ctx.sub_seed(5), random_starts: cfg.obsconst.random_starts, max_iter: cfg.obsconst.max_iter };
        let c_lower = two_sided_constants(&setup, &opts)?.c_lower;
        let ratio = rep.c2 * c_lower;
        let max_residual = rep.residuals.iter().copied().fold(0.0, f64::max);
        art.check(
            "observability instance: C2 within 2x of 1/c_lower",
            (1.0 / RATIO_FACTOR..=RATIO_FACTOR).contains(&ratio),
            format!("C2 c_lower = {ratio:.4}"),
        );
        art.check(
            "sampled forward ratio below C1",
            rep.c1_sampled <= rep.c1 * (1.0 + 1e-9),
            format!("{:.4e} vs {:.4e}", rep.c1_sampled, rep.c1),
        );
        art.say(format!(
            "observability instance: C1 = {:.6e}, C2 = {:.6e}, 1/c_lower = {:.6e}, ratio {ratio:.4}",
            rep.c1,
            rep.c2,
            1.0 / c_lower
        ));
        rows.push(vec!["observability".into(), num(rep.c1), num(rep.c2), num(1.0 / c_lower)]);
        let residuals = rep.residuals.iter().enumerate().map(|(i, r)| vec![i.to_string(), num(rep.ratios[i]), num(*r)]);
        art.file("residuals.csv", csv(&["functional", "ratio", "residual"], residuals));
        summary.insert(
            "observability".into(),
            json!({ "c1": rep.c1, "c1_sampled": rep.c1_sampled, "c2": rep.c2, "c_lower": c_lower, "ratio": ratio, "max_residual": max_residual }),
        );
    }
    art.file("constants.csv", csv(&["case", "c1", "c2", "inverse_c_lower"], rows));
    art.summary = summary.into();
    Ok(art)
}
