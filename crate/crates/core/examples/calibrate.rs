//! Prints zero-action, UVLS and oracle outcomes over a grid of fault
//! durations for a preset: `cargo run --release --example calibrate [preset]`.

use pars_core::baselines::{oracle_search, replay_oracle, run_uvls, OracleSpec, UvlsSettings};
use pars_core::env::{preset, simulate, task_sweep, EnvSpec, RewardParams, SimSettings};

const DURATIONS: [f64; 8] = [0.0, 0.02, 0.05, 0.08, 0.1, 0.12, 0.15, 0.18];

fn main() -> pars_core::Result<()> {
    let name = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "surrogate-3bus".into());
    let spec = EnvSpec::new(
        preset(&name)?,
        RewardParams::default(),
        SimSettings::default(),
    )?;
    let nb = spec.model.n_controllable();
    let oracle = OracleSpec::default();
    println!("task,zero_reward,zero_failed,uvls_reward,uvls_failed,oracle_reward,oracle_failed");
    for task in task_sweep(&spec.model.fault_buses(), &DURATIONS, 1.0) {
        let (zero, _) = simulate(&spec, task, |_, _| vec![0.0; nb])?;
        let (uvls, _) = run_uvls(&spec, task, &UvlsSettings::default())?;
        let best = match oracle_search(&spec, task, &oracle) {
            Ok(r) => {
                let (replay, _) = replay_oracle(&spec, task, &r)?;
                format!("{:.4},{}", r.best_reward, replay.failed)
            }
            Err(pars_core::ParsError::OracleGuard { .. }) => ",".into(),
            Err(e) => return Err(e),
        };
        println!(
            "{},{:.4},{},{:.4},{},{best}",
            task.id(),
            zero.total_reward,
            zero.failed,
            uvls.total_reward,
            uvls.failed
        );
    }
    Ok(())
}
