use optlearn::harness::validate::{random_option_model, random_tiny_mdp};
use optlearn::mdp::{TabularMdp, TransitionModel, Trajectory};
use optlearn::objective::{
    expected_terminations, kl_regularizer, sample_trajectory, trajectory_probability, ObjectiveConfig, PosteriorRecursion,
};
use optlearn::options::{kl_divergence, softmax, OptionSet, OptionTable, PolicyOverOptions, PolicyTable};
use optlearn::seed::rng_for;
use proptest::prelude::*;

struct Instance {
    mdp: TabularMdp,
    options: OptionSet,
    table: OptionTable,
    pi: PolicyTable,
    h: Trajectory,
}

fn instance(seed: u64, n_states: usize, n_learned: usize, len: usize) -> Instance {
    let mut rng = rng_for(seed, &["properties"]);
    let mdp = random_tiny_mdp(n_states, 2, &mut rng).unwrap();
    let (options, policy): (OptionSet, PolicyOverOptions) = random_option_model(n_states, 2, n_learned, 6, 1.0, &mut rng).unwrap();
    let table = OptionTable::from_options(&options);
    let pi = PolicyTable::from_policy(&policy);
    let h = sample_trajectory(&pi, &table, &mdp, len, &mut rng);
    Instance {
        mdp,
        options,
        table,
        pi,
        h,
    }
}

fn probability(inst: &Instance, mdp: &TabularMdp, config: &ObjectiveConfig) -> f64 {
    let p = TransitionModel::exact(mdp);
    trajectory_probability(&inst.h, &inst.pi, &inst.table, &p, mdp.start_dist(), config)
        .unwrap()
        .probability
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expected_terminations_lie_between_zero_and_length(
        seed in any::<u64>(), n_states in 2usize..6, n_learned in 0usize..4, len in 1usize..7,
    ) {
        let inst = instance(seed, n_states, n_learned, len);
        let p = TransitionModel::exact(&inst.mdp);
        let (t, _) = expected_terminations(&inst.h, &inst.pi, &inst.table, &p, PosteriorRecursion::Filtered).unwrap();
        let n = inst.h.len() as f64;
        prop_assert!(t >= 0.0 && t <= n + 1e-12, "E[T] = {t} for |h| = {n}");
    }

    #[test]
    fn terminations_do_not_depend_on_the_dynamics(
        seed in any::<u64>(), other in any::<u64>(), n_states in 2usize..5, len in 1usize..6,
    ) {
        // the transition factors cancel in the normalised posterior over options
        let inst = instance(seed, n_states, 2, len);
        let alt = random_tiny_mdp(n_states, 2, &mut rng_for(other, &["alt"])).unwrap();
        let recursion = PosteriorRecursion::Filtered;
        let (a, _) = expected_terminations(&inst.h, &inst.pi, &inst.table, &TransitionModel::exact(&inst.mdp), recursion).unwrap();
        let (b, _) = expected_terminations(&inst.h, &inst.pi, &inst.table, &TransitionModel::exact(&alt), recursion).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn probability_ratio_between_dynamics_is_the_environment_factor_ratio(
        seed in any::<u64>(), other in any::<u64>(), n_states in 2usize..5, len in 1usize..6,
    ) {
        let inst = instance(seed, n_states, 2, len);
        let alt = random_tiny_mdp(n_states, 2, &mut rng_for(other, &["alt"])).unwrap();
        let env = |mdp: &TabularMdp| {
            let h = &inst.h;
            mdp.start_dist()[h.states[0]]
                * (0..h.len()).map(|t| mdp.prob(h.states[t], h.actions[t], h.states[t + 1])).product::<f64>()
        };
        let config = ObjectiveConfig::default();
        let ratio = probability(&inst, &inst.mdp, &config) / probability(&inst, &alt, &config);
        let expected = env(&inst.mdp) / env(&alt);
        prop_assert!((ratio - expected).abs() <= 1e-10 * expected, "{ratio} vs {expected}");
    }

    #[test]
    fn rescaling_does_not_change_the_probability(
        seed in any::<u64>(), n_states in 2usize..6, n_learned in 0usize..4, len in 1usize..8,
    ) {
        let inst = instance(seed, n_states, n_learned, len);
        let plain = probability(&inst, &inst.mdp, &ObjectiveConfig { rescale: false, ..Default::default() });
        let scaled = probability(&inst, &inst.mdp, &ObjectiveConfig { rescale: true, ..Default::default() });
        prop_assert!((plain - scaled).abs() <= 1e-13 * plain, "{plain} vs {scaled}");
    }

    #[test]
    fn kl_terms_are_non_negative(
        logits_p in prop::collection::vec(-8.0f64..8.0, 2..6), shift in prop::collection::vec(-8.0f64..8.0, 6),
        seed in any::<u64>(), n_learned in 0usize..4, len in 1usize..6,
    ) {
        let p = softmax(&logits_p);
        let q = softmax(&shift[..p.len()]);
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
        let inst = instance(seed, 3, n_learned, len);
        prop_assert!(kl_regularizer(&inst.h, &inst.table) >= 0.0);
    }

    #[test]
    fn option_and_policy_outputs_are_distributions(
        seed in any::<u64>(), n_states in 2usize..8, n_learned in 0usize..4,
    ) {
        let inst = instance(seed, n_states, n_learned, 1);
        let n = inst.options.n_states();
        for o in 0..inst.table.n_options() {
            for s in 0..n {
                let row = inst.table.mu_row(o, s);
                prop_assert!(row.iter().all(|&m| (0.0..=1.0).contains(&m)));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                let beta = inst.table.beta(o, s);
                if inst.table.is_primitive(o) {
                    prop_assert_eq!(beta, 1.0);
                } else {
                    prop_assert!(beta > 0.0 && beta < 1.0);
                }
            }
        }
        for s in 0..n {
            let row = inst.pi.row(s);
            prop_assert_eq!(row.len(), inst.options.len());
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn primitives_only_collapse_to_one_decision_per_step(
        seed in any::<u64>(), n_states in 2usize..6, len in 1usize..8,
    ) {
        let inst = instance(seed, n_states, 0, len);
        let p = TransitionModel::exact(&inst.mdp);
        let h = &inst.h;
        for recursion in [PosteriorRecursion::Filtered, PosteriorRecursion::AsPrinted] {
            let (t, _) = expected_terminations(h, &inst.pi, &inst.table, &p, recursion).unwrap();
            prop_assert_eq!(t, h.len() as f64);
        }
        let formula = inst.mdp.start_dist()[h.states[0]]
            * (0..h.len())
                .map(|t| inst.mdp.prob(h.states[t], h.actions[t], h.states[t + 1]) * inst.pi.prob(h.states[t], h.actions[t]))
                .product::<f64>();
        let pr = probability(&inst, &inst.mdp, &ObjectiveConfig::default());
        prop_assert!((pr - formula).abs() <= 1e-12 * formula.max(f64::MIN_POSITIVE), "{pr} vs {formula}");
    }
}
