use proptest::prelude::*;

use super::*;
use crate::error::ParsError;

fn spec_3bus() -> EnvSpec {
    EnvSpec::new(
        surrogate_3bus(),
        RewardParams::default(),
        SimSettings::default(),
    )
    .unwrap()
}

fn single_bus() -> GridModel {
    GridModel {
        name: "single".into(),
        nominal_v: vec![1.0],
        monitored: vec![0],
        controllable: vec![0],
        load_pu: vec![1.0],
        coupling: vec![vec![0.5]],
        fault_gains: vec![FaultGain {
            bus: 0,
            gains: vec![0.5],
        }],
        dynamics: DynamicsConstants::default(),
    }
}

#[test]
fn flat_start() {
    let model = surrogate_3bus();
    let task = Task::new(1, 0.1);
    let s = reset(&model, &task).unwrap();
    assert_eq!(s.p, vec![1.0, 1.0]);
    assert_eq!(s.w, vec![0.0, 0.0]);
    assert_eq!(s.v, model.nominal_v);
    assert_eq!(s.t, 0.0);
    assert_eq!(reset(&model, &task).unwrap(), s);
    assert!(matches!(
        reset(&model, &Task::new(7, 0.1)),
        Err(ParsError::InvalidTask(_))
    ));
}

#[test]
fn stall_ode_by_hand() {
    let model = single_bus();
    let task = Task::new(0, 0.0);
    let mut s = reset(&model, &task).unwrap();
    s.v = vec![0.6];
    let next = dynamics_substep(&s, &model, &task, 0.02).unwrap();
    assert!((next.w[0] - 0.012).abs() < 1e-15);
    assert!((next.t - 0.02).abs() < 1e-15);
}

#[test]
fn equilibrium_without_fault() {
    let model = surrogate_3bus();
    let task = Task::new(0, 0.0);
    let mut s = reset(&model, &task).unwrap();
    for _ in 0..100 {
        s = dynamics_substep(&s, &model, &task, 0.02).unwrap();
        assert_eq!(s.w, vec![0.0, 0.0]);
    }
}

#[test]
fn fully_shed_network_sits_at_nominal() {
    let model = surrogate_3bus();
    let task = Task::new(0, 0.0);
    let mut s = reset(&model, &task).unwrap();
    s.p = vec![0.0, 0.0];
    s.w = vec![0.5, 0.3];
    let next = dynamics_substep(&s, &model, &task, 0.02).unwrap();
    assert_eq!(next.v, model.nominal_v);
}

#[test]
fn action_examples() {
    let model = single_bus();
    let task = Task::new(0, 0.1);
    let mut s = reset(&model, &task).unwrap();
    s.v = vec![0.8];
    let (next, eff) = apply_action(&s, &[-0.2], &model, 0.95).unwrap();
    assert!((next.p[0] - 0.8).abs() < 1e-15);
    assert_eq!(eff.invalid, vec![false]);
    assert!((eff.shed_pu[0] - 0.2).abs() < 1e-15);

    s.p = vec![0.0];
    let (next, eff) = apply_action(&s, &[-0.1], &model, 0.95).unwrap();
    assert_eq!(next.p, vec![0.0]);
    assert_eq!(eff.invalid, vec![true]);
    assert_eq!(eff.shed_pu, vec![0.0]);

    s.p = vec![1.0];
    s.v = vec![0.97];
    let (_, eff) = apply_action(&s, &[-0.1], &model, 0.95).unwrap();
    assert_eq!(eff.invalid, vec![true]);

    // Out-of-range requests are clipped.
    s.v = vec![0.8];
    let (next, _) = apply_action(&s, &[-0.7], &model, 0.95).unwrap();
    assert!((next.p[0] - 0.8).abs() < 1e-15);
    let (next, eff) = apply_action(&s, &[0.3], &model, 0.95).unwrap();
    assert_eq!(next.p, vec![1.0]);
    assert_eq!(eff.invalid, vec![false]);
    assert!(apply_action(&s, &[0.0, 0.0], &model, 0.95).is_err());
}

#[test]
fn requests_inside_the_deadband_do_nothing() {
    let spec = spec_3bus();
    let task = Task::new(1, 0.0);
    let s = reset(&spec.model, &task).unwrap();
    let sim = &spec.sim;
    let tiny = episode_step(&s, &[-0.019, -1e-9], &spec.model, &task, &spec.reward, sim).unwrap();
    assert_eq!(tiny.reward, 0.0);
    assert_eq!(tiny.effect.invalid, vec![false, false]);
    assert_eq!(tiny.state.p, vec![1.0, 1.0]);

    let real = episode_step(&s, &[-0.021, 0.0], &spec.model, &task, &spec.reward, sim).unwrap();
    assert_eq!(real.effect.invalid, vec![true, false]);
    assert!((real.state.p[0] - 0.979).abs() < 1e-15);

    let exact = SimSettings {
        action_deadband: 0.0,
        ..sim.clone()
    };
    let out = episode_step(&s, &[-1e-9, 0.0], &spec.model, &task, &spec.reward, &exact).unwrap();
    assert_eq!(out.effect.invalid, vec![true, false]);
}

#[test]
fn envelope_thresholds() {
    assert_eq!(envelope(0.0).unwrap(), 0.7);
    assert_eq!(envelope(0.2).unwrap(), 0.7);
    assert_eq!(envelope(0.33).unwrap(), 0.8);
    assert_eq!(envelope(0.4).unwrap(), 0.8);
    assert_eq!(envelope(0.5).unwrap(), 0.9);
    assert_eq!(envelope(1.0).unwrap(), 0.9);
    assert_eq!(envelope(1.5).unwrap(), 0.95);
    assert_eq!(envelope(2.0).unwrap(), 0.95);
    assert!(envelope(-0.1).is_err());
}

fn state_at(t: f64, v: Vec<f64>) -> GridState {
    GridState {
        substeps: 0,
        t,
        v,
        p: vec![1.0, 1.0],
        w: vec![0.0, 0.0],
        shed_log: 0.0,
    }
}

#[test]
fn reward_examples() {
    let model = surrogate_3bus();
    let task = Task::new(1, 0.1);
    let params = RewardParams::default();
    let quiet = state_at(3.0, vec![0.97, 0.96, 0.96]);
    let r = step_reward(&quiet, &[0.0, 0.0], &[false, false], &params, &task, &model);
    assert_eq!(
        r,
        StepReward {
            reward: 0.0,
            failed: false
        }
    );

    let late = state_at(5.2, vec![0.97, 0.94, 0.96]);
    let r = step_reward(&late, &[0.0, 0.0], &[false, false], &params, &task, &model);
    assert_eq!(
        r,
        StepReward {
            reward: -1000.0,
            failed: true
        }
    );

    // v = 0.65 at 0.2 s after clearance, 0.1 p.u. shed, c = (1, 2, 1).
    let dip = state_at(1.3, vec![0.97, 0.65, 0.96]);
    let r = step_reward(&dip, &[0.1, 0.0], &[false, false], &params, &task, &model);
    assert!((r.reward + 0.25).abs() < 1e-12);

    let r = step_reward(&quiet, &[0.0, 0.0], &[true, true], &params, &task, &model);
    assert_eq!(r.reward, -2.0);
}

#[test]
fn fault_on_dips_use_the_first_threshold() {
    let model = surrogate_3bus();
    let task = Task::new(1, 0.1);
    let params = RewardParams::default();
    let during = state_at(1.06, vec![0.5, 0.3, 0.6]);
    let r = step_reward(
        &during,
        &[0.0, 0.0],
        &[false, false],
        &params,
        &task,
        &model,
    );
    assert!((r.reward - ((0.5 - 0.7) + (0.3 - 0.7) + (0.6 - 0.7))).abs() < 1e-12);
}

#[test]
fn observation_layout() {
    let model = surrogate_3bus();
    let s = reset(&model, &Task::new(0, 0.0)).unwrap();
    let obs = observe(&s, &model);
    assert_eq!(obs.len(), 5);
    assert_eq!(obs, vec![1.04, 1.03, 1.03, 1.0, 1.0]);
    assert_eq!(surrogate_39like().obs_dim(), 7);
}

#[test]
fn quiescent_episode() {
    let spec = spec_3bus();
    for bus in [0, 1, 2] {
        let (summary, rows) = simulate(&spec, Task::new(bus, 0.0), |_, _| vec![0.0, 0.0]).unwrap();
        assert_eq!(summary.total_reward, 0.0);
        assert!(!summary.failed);
        assert_eq!(summary.steps, 80);
        assert!(rows.iter().all(|r| r.reward == 0.0));
        assert!((rows.last().unwrap().t - 8.0).abs() < 1e-9);
    }
}

#[test]
fn episode_step_rejects_finished_env() {
    let spec = spec_3bus();
    let mut env = GridEnv::new(&spec, Task::new(1, 0.0)).unwrap();
    while !env.is_done() {
        env.step(&[0.0, 0.0]).unwrap();
    }
    assert!(env.step(&[0.0, 0.0]).is_err());
    env.reset().unwrap();
    assert!(!env.is_done());
}

#[test]
fn task_validation() {
    let model = surrogate_3bus();
    assert!(Task::new(1, 0.1).validate(&model, 8.0).is_ok());
    assert!(Task::new(5, 0.1).validate(&model, 8.0).is_err());
    assert!(Task::new(1, -0.1).validate(&model, 8.0).is_err());
    assert!(Task {
        fault_bus: 1,
        fault_start: 7.95,
        fault_duration: 0.1
    }
    .validate(&model, 8.0)
    .is_err());
}

#[test]
fn sim_settings_validation() {
    assert!(SimSettings::default().validate().is_ok());
    assert_eq!(SimSettings::default().substeps_per_action(), 5);
    assert_eq!(SimSettings::default().max_steps(), 80);
    let bad = SimSettings {
        dt_action: 0.05,
        ..SimSettings::default()
    };
    assert!(bad.validate().is_err());
    let bad = SimSettings {
        action_deadband: 0.3,
        ..SimSettings::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn model_validation() {
    let mut m = surrogate_3bus();
    m.dynamics.stall_onset = 0.95;
    assert!(m.validate().is_err());
    let mut m = surrogate_3bus();
    m.coupling[0][0] = -0.1;
    assert!(m.validate().is_err());
    let mut m = surrogate_3bus();
    m.nominal_v[0] = 1.1;
    assert!(m.validate().is_err());
    assert!(surrogate_39like().validate().is_ok());
}

#[test]
fn document_round_trip() {
    let tasks = task_sweep(&[0, 1], &[0.0, 0.1], 1.0);
    let doc = GridDocument::from_model(&surrogate_3bus(), RewardParams::default(), tasks.clone());
    let text = doc.to_toml_string().unwrap();
    let back = GridDocument::from_toml_str(&text).unwrap();
    assert_eq!(back, doc);
    assert_eq!(back.model(), surrogate_3bus());
    assert_eq!(back.tasks, tasks);
}

#[test]
fn document_defaults_and_errors() {
    let text = r#"
name = "pocket"
[buses]
nominal_v = [1.04, 1.03]
monitored = [0, 1]
controllable = [1]
load_pu = [2.0]
[coupling]
rows = [[0.3], [1.0]]
[[fault_gains]]
bus = 1
gains = [0.4, 0.7]
[[tasks]]
fault_bus = 1
fault_duration = 0.1
"#;
    let doc = GridDocument::from_toml_str(text).unwrap();
    assert_eq!(doc.dynamics, DynamicsConstants::default());
    assert_eq!(doc.reward, RewardParams::default());
    assert_eq!(doc.tasks, vec![Task::new(1, 0.1)]);
    let broken = text.replace("rows = [[0.3], [1.0]]", "rows = [[0.3]]");
    assert!(GridDocument::from_toml_str(&broken).is_err());
}

#[test]
fn trajectory_csv_header() {
    let spec = spec_3bus();
    let (_, rows) = simulate(&spec, Task::new(1, 0.1), |_, _| vec![0.0, 0.0]).unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &spec.model, &rows[..3]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,v_0,v_1,v_2,p_1,p_2,a_1,a_2,reward\n"));
    assert_eq!(text.lines().count(), 4);
}

fn arb_actions() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..0.5, -1.0f64..0.5), 80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectory_invariants(bus in 0usize..3, dur in 0.0f64..0.3, actions in arb_actions()) {
        let spec = spec_3bus();
        let task = Task::new(bus, dur);
        let mut env = GridEnv::new(&spec, task).unwrap();
        let mut prev_p = env.state().p.clone();
        let mut prev_t = env.state().t;
        let mut k = 0;
        while !env.is_done() {
            let (a, b) = actions[k];
            let out = env.step(&[a, b]).unwrap();
            let s = &out.state;
            prop_assert!(s.p.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!(s.w.iter().all(|w| (0.0..=1.0).contains(w)));
            prop_assert!(s.v.iter().all(|v| (0.0..=1.2).contains(v)));
            prop_assert!(s.p.iter().zip(&prev_p).all(|(p, q)| p <= q));
            prop_assert!(s.t >= prev_t);
            prop_assert!(out.reward <= 0.0);
            prev_p = s.p.clone();
            prev_t = s.t;
            k += 1;
        }
        prop_assert!(env.summary().total_reward <= 0.0);
    }

    #[test]
    fn shedding_never_lowers_voltage(
        w1 in 0.0f64..1.0, w2 in 0.0f64..1.0,
        p1 in 0.0f64..1.0, p2 in 0.0f64..1.0,
        cut in 0.0f64..1.0, which in 0usize..2, faulted in any::<bool>(),
    ) {
        let model = surrogate_3bus();
        let task = Task::new(1, 0.1);
        let mut s = reset(&model, &task).unwrap();
        s.t = if faulted { 1.04 } else { 3.0 };
        s.w = vec![w1, w2];
        s.p = vec![p1, p2];
        let mut shed = s.clone();
        shed.p[which] *= cut;
        let a = dynamics_substep(&s, &model, &task, 0.02).unwrap();
        let b = dynamics_substep(&shed, &model, &task, 0.02).unwrap();
        prop_assert!(a.v.iter().zip(&b.v).all(|(x, y)| y >= x));
    }

    #[test]
    fn trajectories_are_deterministic(bus in 0usize..3, dur in 0.0f64..0.3, actions in arb_actions()) {
        let spec = spec_3bus();
        let run = || simulate(&spec, Task::new(bus, dur), |_, k| vec![actions[k].0, actions[k].1]).unwrap();
        prop_assert_eq!(run(), run());
    }
}
