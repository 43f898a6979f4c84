use memdep_core::envgym::{
    expert_pairs, expert_rollout, replay, reset, Action, TaskKind, TaskParams, NUM_ACTIONS,
};
use memdep_core::profile::Profile;
use proptest::prelude::*;

const TASKS: [TaskKind; 4] = [TaskKind::Hallway, TaskKind::Ordering, TaskKind::Counting, TaskKind::CommandRecall];

fn all_params() -> Vec<TaskParams> {
    [Profile::Desk, Profile::Full].iter().flat_map(|p| TASKS.iter().map(move |&t| p.task_params(t))).collect()
}

#[test]
fn experts_solve_every_seed() {
    for params in all_params() {
        for seed in 0..1000 {
            let r = expert_rollout(&params, seed).unwrap();
            assert!(r.result.success, "{params:?} seed {seed}: {:?}", r.result);
            let len = r.actions.len();
            assert_eq!(r.observations.len(), len);
            assert_eq!(r.result.length, len);
            assert!(len <= params.horizon());
            // Counting episodes may draw no query rooms.
            if params.kind() != TaskKind::Counting {
                assert!(!r.pairs.is_empty(), "{params:?} seed {seed} has no memory pairs");
            }
            assert!(r.pairs.iter().all(|&(p, q)| p < q && q < len));
            assert!(r.pairs.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

#[test]
fn desk_horizons_fit_the_desk_model() {
    let max = Profile::Desk.model_config().max_steps;
    for t in TASKS {
        assert!(Profile::Desk.task_params(t).horizon() <= max);
    }
    let max = Profile::Full.model_config().max_steps;
    for t in TASKS {
        assert!(Profile::Full.task_params(t).horizon() <= max);
    }
}

#[test]
fn horizon_ends_episodes() {
    for params in all_params() {
        let (mut env, _) = reset(&params, 1).unwrap();
        let mut n = 0;
        while !env.is_done() {
            env.step(Action::Nop).unwrap();
            n += 1;
        }
        assert!(n <= params.horizon());
        assert!(!env.result().unwrap().success);
    }
}

#[test]
fn invalid_action_id_is_rejected() {
    let (mut env, _) = reset(&Profile::Desk.task_params(TaskKind::Hallway), 0).unwrap();
    assert!(env.step_id(NUM_ACTIONS).is_err());
    assert_eq!(env.steps(), 0);
}

fn task_strategy() -> impl Strategy<Value = TaskParams> {
    prop::sample::select(all_params())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reset_is_deterministic(params in task_strategy(), seed in any::<u64>(),
                              actions in prop::collection::vec(0usize..NUM_ACTIONS, 0..40)) {
        let acts: Vec<Action> = actions.iter().map(|&a| Action::from_id(a).unwrap()).collect();
        // Actions past the end of an episode are an error on both runs.
        prop_assert_eq!(replay(&params, seed, &acts), replay(&params, seed, &acts));
    }

    #[test]
    fn expert_replay_reproduces_rollout(params in task_strategy(), seed in any::<u64>()) {
        let r = expert_rollout(&params, seed).unwrap();
        let (obs, result) = replay(&params, seed, &r.actions).unwrap();
        prop_assert_eq!(&obs, &r.observations);
        prop_assert_eq!(result, Some(r.result));
        prop_assert_eq!(expert_pairs(&params, seed, &r.actions).unwrap(), r.pairs);
    }

    #[test]
    fn random_play_terminates_within_horizon(params in task_strategy(), seed in any::<u64>(),
                                             actions in prop::collection::vec(0usize..NUM_ACTIONS, 200)) {
        let (mut env, _) = reset(&params, seed).unwrap();
        for &a in &actions {
            if env.step_id(a).unwrap().done {
                break;
            }
        }
        prop_assert!(env.steps() <= params.horizon());
        if env.steps() < params.horizon() && !env.is_done() {
            prop_assert!(actions.len() < params.horizon());
        }
        let pairs = expert_pairs(&params, seed, &[]).unwrap();
        prop_assert!(pairs.is_empty());
    }
}

mod dynamics {
    use memdep_core::envgym::{
        expert_rollout, hallway, reset, Action, CommandRecallParams, EnvError, HallwayParams, TaskKind, TaskParams,
        TerminalReason,
    };

    fn hallway(length: usize) -> TaskParams {
        TaskParams::Hallway(HallwayParams { length, object_pool: 18 })
    }

    fn command_recall(commands: usize) -> TaskParams {
        TaskParams::CommandRecall(CommandRecallParams { commands, show: 1, delay: 2, hold: 0 })
    }

    #[test]
    fn forward_into_wall_keeps_position_and_counts_step() {
        let (mut env, _) = reset(&hallway(6), 3).unwrap();
        let before = env.hallway().unwrap().position();
        // facing south from the start cell: the start room's bottom row
        env.step(Action::Forward).unwrap();
        env.step(Action::Forward).unwrap();
        let after = env.hallway().unwrap().position();
        assert_eq!(after.0, (before.0 .0, 4));
        assert_eq!(env.steps(), 2);
    }

    #[test]
    fn stepping_after_done_is_an_error() {
        let (mut env, _) = reset(&command_recall(1), 0).unwrap();
        // never moving misses the first checkpoint
        while !env.is_done() {
            env.step(Action::Interact).unwrap();
        }
        assert_eq!(env.result().unwrap().reason, TerminalReason::WrongChoice);
        assert_eq!(env.step(Action::Nop), Err(EnvError::EpisodeDone));
        assert_eq!(env.expert_action(), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn action_ids_are_checked() {
        let (mut env, _) = reset(&hallway(6), 0).unwrap();
        assert_eq!(env.step_id(7), Err(EnvError::InvalidAction(7)));
        assert!(env.step_id(6).is_ok());
    }

    #[test]
    fn command_recall_pairs_link_display_to_window_start() {
        let params = command_recall(2);
        let r = expert_rollout(&params, 11).unwrap();
        assert!(r.result.success);
        assert_eq!(r.actions.len(), params.horizon());
        assert_eq!(r.pairs, [(0, 4), (1, 6)]);
    }

    #[test]
    fn hallway_annotations_point_at_the_sighting() {
        for seed in 0..50 {
            let r = expert_rollout(&hallway(6), seed).unwrap();
            assert!(r.result.success);
            assert!(!r.pairs.is_empty());
            assert!(r.pairs.iter().all(|&(p, _)| p == hallway::SIGHTING_STEP));
        }
    }

    #[test]
    fn task_names_round_trip() {
        for k in TaskKind::ALL {
            assert_eq!(k.name().parse::<TaskKind>().unwrap(), k);
        }
        assert_eq!("command-recall".parse::<TaskKind>().unwrap(), TaskKind::CommandRecall);
        assert!("maze".parse::<TaskKind>().is_err());
    }
}
