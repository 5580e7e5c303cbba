use memflow_core::observability::{
    null_obs_constant, obs_seminorm, relaxed_inequality_fit, two_sided_constants, unique_continuation_rank, ObsOptions, ObsSetup,
    OptimOptions,
};
use memflow_core::spectral::interval_basis;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::Context;
use crate::config::Config;
use crate::error::RunError;
use crate::output::{csv, num, Artifacts};

/// Witnesses must reproduce their constants to this relative accuracy.
const WITNESS_TOL: f64 = 1e-9;
/// A lower constant falling by this factor over the trend is "degenerating".
const DEGENERATION_FACTOR: f64 = 10.0;

pub fn setup_for(cfg: &Config, modes: usize, n_x: usize, seed: u64) -> Result<ObsSetup, RunError> {
    let basis = interval_basis(modes, n_x)?;
    let mask = cfg.build_mask(seed)?;
    let opts = ObsOptions { alpha: cfg.alpha, window: cfg.window.map(|[s, t]| (s, t)), ..ObsOptions::default() };
    Ok(ObsSetup::new(&basis, &cfg.kernel_fn(), &mask, &opts)?)
}

struct Row {
    modes: usize,
    c_lower: f64,
    c_upper: f64,
    lower_spread: f64,
    upper_spread: f64,
    sandwich_ok: bool,
    witness_error: f64,
    c_null: Option<(f64, bool)>,
    relaxed: Option<f64>,
    rank: usize,
    sigma_min: f64,
}

fn row(ctx: &Context<'_>, modes: usize) -> Result<Row, RunError> {
    let cfg = ctx.config;
    let oc = &cfg.obsconst;
    let n_x = cfg.basis.n_x.max(4 * modes);
    let setup = setup_for(cfg, modes, n_x, ctx.sub_seed(1))?;
    let opts = OptimOptions { seed: ctx.sub_seed(2), random_starts: oc.random_starts, max_iter: oc.max_iter };
    let two = two_sided_constants(&setup, &opts)?;
    let quotient = |w| -> Result<f64, RunError> { Ok(obs_seminorm(&setup, w)? / setup.ref_norm(w)) };
    let witness_error = ((quotient(&two.witness_lower)? - two.c_lower).abs() / two.c_lower.max(f64::MIN_POSITIVE))
        .max((quotient(&two.witness_upper)? - two.c_upper).abs() / two.c_upper.max(f64::MIN_POSITIVE));
    let c_null = if oc.null_constant {
        let n = null_obs_constant(&setup, &opts)?;
        Some((n.c_null, n.unbounded))
    } else {
        None
    };
    let relaxed = if oc.relaxed_fit { Some(relaxed_inequality_fit(&setup, &opts)?.c) } else { None };
    let (rank, sigma_min) = unique_continuation_rank(&setup)?;
    Ok(Row {
        modes,
        c_lower: two.c_lower,
        c_upper: two.c_upper,
        lower_spread: two.lower_spread,
        upper_spread: two.upper_spread,
        sandwich_ok: two.sandwich_ok,
        witness_error,
        c_null,
        relaxed,
        rank,
        sigma_min,
    })
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn run(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let cfg = ctx.config;
    let list = cfg.obsconst.modes.clone().unwrap_or_else(|| vec![cfg.basis.modes]);
    let rows: Vec<Row> = list.par_iter().map(|&j| row(ctx, j)).collect::<Result<_, _>>()?;
    let mut art = Artifacts::new("obsconst");

    let table = rows.iter().map(|r| {
        vec![
            r.modes.to_string(),
            num(r.c_lower),
            num(r.c_upper),
            num(r.lower_spread),
            num(r.upper_spread),
            r.sandwich_ok.to_string(),
            opt_num(r.c_null.map(|c| c.0)),
            r.c_null.map(|c| c.1.to_string()).unwrap_or_default(),
            opt_num(r.relaxed),
            r.rank.to_string(),
            num(r.sigma_min),
        ]
    });
    art.file(
        "constants.csv",
        csv(
            &[
                "modes",
                "c_lower",
                "c_upper",
                "lower_spread",
                "upper_spread",
                "sandwich_ok",
                "c_null",
                "unbounded",
                "relaxed_c",
                "rank",
                "sigma_min",
            ],
            table,
        ),
    );
    for r in &rows {
        art.check(&format!("J = {}: c_lower <= c_upper", r.modes), r.c_lower <= r.c_upper * (1.0 + 1e-12), "");
        art.check(&format!("J = {}: surrogate sandwich", r.modes), r.sandwich_ok, "");
        art.check(
            &format!("J = {}: witnesses reproduce constants", r.modes),
            r.witness_error <= WITNESS_TOL,
            format!("relative error {:.3e}", r.witness_error),
        );
        art.say(format!(
            "J = {}: c_lower = {:.6e}, c_upper = {:.6e}, rank {}/{}, sigma_min = {:.3e}",
            r.modes, r.c_lower, r.c_upper, r.rank, r.modes, r.sigma_min
        ));
    }
    let trend = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if rows.len() > 1 => {
            let drop = a.c_lower / b.c_lower;
            let label = if drop >= DEGENERATION_FACTOR { "degenerating" } else { "MOC-consistent" };
            art.say(format!("c_lower trend J = {} -> {}: drop {drop:.3}x ({label})", a.modes, b.modes));
            json!({ "c_lower_drop": drop, "label": label, "c_null_growth": match (a.c_null, b.c_null) {
                (Some(x), Some(y)) => json!(y.0 / x.0),
                _ => Value::Null,
            } })
        }
        _ => Value::Null,
    };
    let records: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "modes": r.modes, "c_lower": r.c_lower, "c_upper": r.c_upper,
                "lower_spread": r.lower_spread, "upper_spread": r.upper_spread,
                "c_null": r.c_null.map(|c| c.0), "unbounded": r.c_null.map(|c| c.1),
                "relaxed_c": r.relaxed, "rank": r.rank, "sigma_min": r.sigma_min,
            })
        })
        .collect();
    art.summary = json!({ "rows": records, "trend": trend });
    Ok(art)
}
