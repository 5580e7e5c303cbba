//! One module per subcommand. Every command turns a validated [`Config`]
//! into [`Artifacts`]; nothing here writes to disk.

mod control;
mod duality;
mod flow_check;
mod kernel;
mod moc;
mod obsconst;
mod probes;
mod reconstruct;

use memflow_core::ExpPolyFn;

use crate::config::Config;
use crate::error::{ConfigError, RunError};
use crate::output::Artifacts;

pub const COMMANDS: [&str; 11] =
    ["flow-check", "kernel", "moc", "obsconst", "probe-alpha", "probe-ball", "probe-heat", "reconstruct", "control", "duality", "report"];

/// Settings shared by every command of one invocation.
#[derive(Clone, Debug)]
pub struct Context<'a> {
    pub config: &'a Config,
    pub seed: u64,
    pub tolerance_scale: f64,
}

impl Context<'_> {
    /// Independent seed for one consumer of randomness.
    pub fn sub_seed(&self, tag: u64) -> u64 {
        self.seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// The listed kernels, or the top-level kernel when the list is absent.
    pub fn kernels(&self, list: Option<&Vec<String>>) -> Result<Vec<(String, ExpPolyFn)>, RunError> {
        let exprs: Vec<String> = list.cloned().unwrap_or_else(|| vec![self.config.kernel.clone()]);
        exprs
            .into_iter()
            .map(|e| {
                let f = memflow_core::parse(&e)
                    .map_err(|err| RunError::Config(ConfigError::Field { path: "kernel".into(), message: err.to_string() }))?;
                Ok((e, f))
            })
            .collect()
    }
}

pub fn run_command(name: &str, ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    match name {
        "flow-check" => flow_check::run(ctx),
        "kernel" => kernel::run(ctx),
        "moc" => moc::run(ctx),
        "obsconst" => obsconst::run(ctx),
        "probe-alpha" => probes::alpha(ctx),
        "probe-ball" => probes::ball(ctx),
        "probe-heat" => probes::heat(ctx),
        "reconstruct" => reconstruct::run(ctx),
        "control" => control::run(ctx),
        "duality" => duality::run(ctx),
        "report" => report(ctx),
        other => Err(RunError::Config(ConfigError::Field { path: "command".into(), message: format!("unknown command {other:?}") })),
    }
}

fn report(ctx: &Context<'_>) -> Result<Artifacts, RunError> {
    let mut art = Artifacts::new("report");
    for name in &ctx.config.report.commands {
        let sub = run_command(name, ctx)?;
        art.absorb(name, sub);
    }
    let passed = art.failures() == 0;
    art.say(format!("{} checks, {} failed", art.checks.len(), art.failures()));
    if let serde_json::Value::Object(map) = &mut art.summary {
        map.insert("all_passed".into(), passed.into());
    }
    Ok(art)
}
