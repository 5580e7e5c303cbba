//! Degeneracy probes. Trajectories are reported as trends; only structural
//! properties are asserted.

use memflow_core::observability::{alpha_probe, heat_local_probe, missing_ball_probe, BallProbe, ObsOptions, ObsSetup, ProbeTrajectory};
use memflow_core::spectral::interval_basis;
use rayon::prelude::*;
use serde_json::json;

use super::Context;
use crate::error::RunError;
use crate::output::{csv, num, Artifacts};

/// Spread or growth at which a trajectory counts as blowing up.
pub const BLOWUP_FACTOR: f64 = 10.0;

fn trajectory_csv(tr: &ProbeTrajectory) -> String {
    let rows = tr.k.iter().zip(&tr.quotient).zip(&tr.aux).map(|((k, q), a)| vec![k.to_string(), num(*q), num(*a)]);
    csv(&["k", "quotient", "aux"], rows)
}

fn finite_positive(tr: &ProbeTrajectory) -> bool {
    tr.quotient.iter().all(|q| q.is_finite() && *q > 0.0)
}

pub fn alpha(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let cfg = ctx.config;
    let pa = &cfg.probe_alpha;
    let basis = cfg.basis()?;
    let mask = cfg.build_mask(ctx.sub_seed(1))?;
    let kernel = cfg.kernel_fn();
    let runs: Vec<ProbeTrajectory> = pa
        .alphas
        .par_iter()
        .map(|&a| -> Result<ProbeTrajectory, RunError> {
            let opts = ObsOptions { alpha: Some(a), quadratic_forms: false, ..ObsOptions::default() };
            let setup = ObsSetup::new(&basis, &kernel, &mask, &opts)?;
            Ok(alpha_probe(&setup, pa.center, pa.half_width, pa.width_decay, &pa.k, pa.profile.into())?)
        })
        .collect::<Result<_, _>>()?;
    let mut art = Artifacts::new("probe-alpha");
    let mut records = Vec::new();
    for (a, tr) in pa.alphas.iter().zip(&runs) {
        art.file(&format!("alpha_{a}.csv"), trajectory_csv(tr));
        art.check(&format!("alpha = {a}: quotients finite and positive"), finite_positive(tr), "");
        let spread = tr.spread();
        art.say(format!("alpha = {a}: spread {spread:.4}, last/first {:.4}", tr.growth()));
        for w in &tr.warnings {
            art.say(format!("alpha = {a}: {w}"));
        }
        records.push(json!({
            "alpha": a, "k": tr.k, "quotient": tr.quotient, "spread": spread,
            "growth": tr.growth(), "degenerates": spread >= BLOWUP_FACTOR, "warnings": tr.warnings,
        }));
    }
    art.summary = json!({ "runs": records, "blowup_factor": BLOWUP_FACTOR });
    Ok(art)
}

pub fn ball(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let cfg = ctx.config;
    let pb = &cfg.probe_ball;
    let basis = match pb.modes {
        Some(j) => interval_basis(j, 4 * j)?,
        None => cfg.basis()?,
    };
    let probe = BallProbe {
        horizon: cfg.time.horizon,
        n_t: cfg.time.n_t,
        center: pb.center,
        radius: pb.radius,
        profile: pb.profile.into(),
        width_decay: pb.width_decay,
        full_mask: pb.full_mask,
    };
    let tr = missing_ball_probe(&basis, &cfg.kernel_fn(), &probe, &pb.k)?;
    let mut art = Artifacts::new("probe-ball");
    art.file("trajectory.csv", trajectory_csv(&tr));
    art.check("quotients finite and positive", finite_positive(&tr), "");
    let growth = tr.growth();
    let last_aux = tr.aux.last().copied().unwrap_or(f64::NAN);
    art.say(format!("growth last/first {growth:.4}, final-state ratio at k = {} is {last_aux:.6}", tr.k.last().unwrap_or(&0)));
    for w in &tr.warnings {
        art.say(w.clone());
    }
    art.summary = json!({
        "k": tr.k, "quotient": tr.quotient, "aux": tr.aux, "growth": growth,
        "grows": growth >= BLOWUP_FACTOR, "aux_last": last_aux, "full_mask": pb.full_mask, "warnings": tr.warnings,
    });
    Ok(art)
}

pub fn heat(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let cfg = ctx.config;
    let ph = &cfg.probe_heat;
    let basis = cfg.basis()?;
    let rows = heat_local_probe(&basis, ph.x0, ph.r, &ph.s, &ph.t, &ph.half_widths, ph.profile.into())?;
    let mut art = Artifacts::new("probe-heat");
    art.file("ratios.csv", csv(&["s", "half_width", "ratio"], rows.iter().map(|r| vec![num(r.s), num(r.half_width), num(r.ratio)])));
    art.check("ratios finite", rows.iter().all(|r| r.ratio.is_finite()), "");
    let mut per_s = Vec::new();
    for &s in &ph.s {
        let ratios: Vec<f64> = rows.iter().filter(|r| r.s == s).map(|r| r.ratio).collect();
        let max = ratios.iter().copied().fold(0.0, f64::max);
        let growth = match (ratios.first(), ratios.last()) {
            (Some(a), Some(b)) if *a > 0.0 => b / a,
            _ => f64::NAN,
        };
        art.say(format!("s = {s}: max ratio {max:.4e}, narrowest/widest {growth:.4}"));
        per_s.push(json!({ "s": s, "max_ratio": max, "growth": growth }));
    }
    art.summary = json!({ "rows": per_s });
    Ok(art)
}
