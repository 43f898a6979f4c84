use memdep_core::dataset::{
    annotated_target, generate, perturb_pairs, split, subsample_annotations, Dataset, DatasetError,
};
use memdep_core::envgym::TaskKind;
use memdep_core::profile::Profile;
use proptest::prelude::*;
use std::sync::OnceLock;

fn base() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| generate(&Profile::Desk.task_params(TaskKind::CommandRecall), 40, 3).unwrap())
}

#[test]
fn generated_dataset_validates_and_is_fully_annotated() {
    let ds = base();
    ds.validate().unwrap();
    assert_eq!(ds.len(), 40);
    assert_eq!(ds.annotated_count(), 40);
    assert_eq!(ds.manifest.task(), TaskKind::CommandRecall);
}

#[test]
fn validation_catches_corruption() {
    let mut ds = base().clone();
    ds.trajectories[0].pairs.push((5, 5));
    assert!(matches!(ds.validate(), Err(DatasetError::Invalid { field: "pairs", .. })));

    let mut ds = base().clone();
    ds.trajectories[1].actions.pop();
    assert!(ds.validate().is_err());

    let mut ds = base().clone();
    ds.trajectories[2].id = 0;
    assert!(ds.validate().is_err());

    let mut ds = base().clone();
    ds.trajectories[3].actions[0] = 99;
    assert!(ds.validate().is_err());
}

#[test]
fn pair_editing() {
    let mut t = base().trajectories[0].clone();
    let n = t.len();
    assert!(t.insert_pair(0, n - 1).unwrap());
    assert!(!t.insert_pair(0, n - 1).unwrap());
    assert!(t.insert_pair(3, 3).is_err());
    assert!(t.insert_pair(0, n).is_err());
    assert!(t.pairs.windows(2).all(|w| w[0] < w[1]));
    assert!(t.remove_pair(0, n - 1));
    assert!(!t.remove_pair(0, n - 1));
    t.validate().unwrap();
}

#[test]
fn out_of_range_knobs_are_rejected() {
    assert!(subsample_annotations(base(), 1.5, 0).is_err());
    assert!(perturb_pairs(base(), -1.0, 0.0, 0).is_err());
    assert!(perturb_pairs(base(), 0.0, f64::NAN, 0).is_err());
}

#[test]
fn sigma_zero_is_identity() {
    assert_eq!(&perturb_pairs(base(), 0.0, 0.0, 9).unwrap(), base());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn subsampling_keeps_exact_count(fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let ds = base();
        let sub = subsample_annotations(ds, fraction, seed).unwrap();
        prop_assert_eq!(sub.annotated_count(), annotated_target(fraction, ds.len()));
        sub.validate().unwrap();
        for (a, b) in sub.trajectories.iter().zip(&ds.trajectories) {
            prop_assert_eq!(&a.observations, &b.observations);
            prop_assert_eq!(&a.actions, &b.actions);
            if a.annotated { prop_assert_eq!(&a.pairs, &b.pairs) } else { prop_assert!(a.pairs.is_empty()) }
        }
    }

    #[test]
    fn perturbed_pairs_stay_valid(sp in 0.0f64..6.0, sq in 0.0f64..6.0, seed in any::<u64>()) {
        let out = perturb_pairs(base(), sp, sq, seed).unwrap();
        out.validate().unwrap();
        for (a, b) in out.trajectories.iter().zip(&base().trajectories) {
            prop_assert!(a.pairs.len() <= b.pairs.len());
            prop_assert!(a.pairs.iter().all(|&(p, q)| p < q && q < a.len()));
        }
    }

    #[test]
    fn p_only_mode_leaves_q_untouched(sp in 0.0f64..6.0, seed in any::<u64>()) {
        let out = perturb_pairs(base(), sp, 0.0, seed).unwrap();
        for (a, b) in out.trajectories.iter().zip(&base().trajectories) {
            let qs: Vec<usize> = b.pairs.iter().map(|x| x.1).collect();
            prop_assert!(a.pairs.iter().all(|x| qs.contains(&x.1)));
        }
    }

    #[test]
    fn split_partitions(fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let ds = base();
        let (train, test) = split(&ds.trajectories, fraction, seed).unwrap();
        prop_assert_eq!(test.len(), annotated_target(fraction, ds.len()));
        prop_assert_eq!(train.len() + test.len(), ds.len());
        let mut ids: Vec<u64> = train.iter().chain(&test).map(|t| t.id).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..ds.len() as u64).collect::<Vec<_>>());
    }
}

#[test]
fn annotated_target_rounds_half_up() {
    use memdep_core::dataset::annotated_target;
    assert_eq!(annotated_target(0.25, 10), 3);
    assert_eq!(annotated_target(0.1, 4000), 400);
    assert_eq!(annotated_target(0.0, 7), 0);
    assert_eq!(annotated_target(1.0, 7), 7);
}
