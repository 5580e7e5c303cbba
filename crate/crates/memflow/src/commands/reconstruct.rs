use memflow_core::control::{reconstruct_y0, Observations, Reconstruction, ReconstructionProblem, Regularization};
use memflow_core::observability::{ObsOptions, ObsSetup};
use memflow_core::spectral::SpectralVec;
use serde_json::json;

use super::Context;
use crate::error::RunError;
use crate::output::{csv, num, Artifacts};

pub fn run(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let cfg = ctx.config;
    let rc = &cfg.reconstruct;
    let basis = cfg.basis()?;
    let mask = cfg.build_mask(ctx.sub_seed(1))?;
    let opts = ObsOptions { alpha: cfg.alpha, window: cfg.window.map(|[s, t]| (s, t)), ..ObsOptions::default() };
    let setup = ObsSetup::new(&basis, &cfg.kernel_fn(), &mask, &opts)?;
    let truth = SpectralVec::random(basis.len(), setup.ref_exponent(), ctx.sub_seed(2));
    let mut data = Observations::observe(&setup, &truth)?;
    let noise = if rc.noise > 0.0 { data.add_noise(&setup, rc.noise, ctx.sub_seed(3))? } else { 0.0 };
    let regularization = match rc.lambda {
        Some(l) => Regularization::Fixed(l),
        None if noise > 0.0 => Regularization::Discrepancy { noise },
        None => Regularization::Fixed(0.0),
    };
    let problem = ReconstructionProblem { setup: &setup, data: &data, regularization };
    let Reconstruction { y0, lambda, residual, rel_error, sigma_min, trials } = reconstruct_y0(&problem, Some(&truth))?;
    let rel_error = rel_error.unwrap_or(f64::NAN);
    let bound = rc.max_rel_error.unwrap_or(if rc.noise > 0.0 { 0.1 } else { 1e-6 }) * ctx.tolerance_scale;

    let mut art = Artifacts::new("reconstruct");
    let coeffs = (0..basis.len()).map(|j| vec![(j + 1).to_string(), num(truth.coeffs[j]), num(y0.coeffs[j])]);
    art.file("coefficients.csv", csv(&["j", "truth", "reconstruction"], coeffs));
    art.file("observations.csv", data.to_csv(&setup));
    let report = json!({
        "lambda": lambda,
        "residual": residual,
        "rel_error_if_truth_known": rel_error,
        "sigma_min": sigma_min,
    });
    art.file("reconstruction.json", serde_json::to_string_pretty(&report).expect("json") + "\n");
    art.check("relative error", rel_error <= bound, format!("{rel_error:.3e}, bound {bound:.1e}"));
    art.say(format!("lambda = {lambda:.3e}, residual = {residual:.3e}, relative error = {rel_error:.3e}, sigma_min = {sigma_min:.3e}"));
    art.summary = json!({
        "lambda": lambda, "residual": residual, "rel_error_if_truth_known": rel_error,
        "sigma_min": sigma_min, "noise_norm": noise, "trials": trials, "bound": bound,
    });
    Ok(art)
}
