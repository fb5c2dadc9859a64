//! The soft NN module against the unmodified base learners.

use nnrl::agent_soft::{alpha, BetaSchedule, SoftAgent, SoftNnConfig};
use nnrl::baseline::{BaseAgent, BaseAlgo, LiteConfig, LiteNets};
use nnrl::envs::{CartPole, Reacher1d};
use proptest::prelude::*;

fn same_bits(a: &LiteNets, b: &LiteNets) -> bool {
    let bits = |n: &LiteNets| -> Vec<u64> {
        let mut v: Vec<u64> = n.actor.params().iter().map(|x| x.to_bits()).collect();
        v.extend(n.actor_target.params().iter().map(|x| x.to_bits()));
        for q in n.critics.iter().chain(&n.critic_targets) {
            v.extend(q.params().iter().map(|x| x.to_bits()));
        }
        v
    };
    bits(a) == bits(b)
}

fn lite(algo: BaseAlgo, seed: u64) -> LiteConfig {
    LiteConfig {
        algo,
        hidden: 16,
        batch_size: 16,
        warmup_steps: 100,
        eval_every: 200,
        eval_episodes: 2,
        seed,
        ..Default::default()
    }
}

fn nn_off() -> SoftNnConfig {
    SoftNnConfig {
        alpha0: 0.0,
        ..Default::default()
    }
}

#[test]
fn alpha_zero_is_bitwise_base() {
    for algo in [BaseAlgo::DdpgLite, BaseAlgo::Td3Lite] {
        for seed in [1, 2] {
            let env = Reacher1d::default();
            let mut base = BaseAgent::new(&env, lite(algo, seed)).unwrap();
            let mut soft = SoftAgent::new(&env, lite(algo, seed), nn_off()).unwrap();
            let cb = base.train(&env, 600).unwrap();
            let cs = soft.train(&env, 600).unwrap();
            assert!(same_bits(&base.nets, &soft.nets), "{algo:?} seed {seed}");
            assert_eq!(cb, cs);
            assert_eq!(soft.nn_evaluations, 0);
        }
    }
}

#[test]
fn alpha_zero_is_bitwise_base_on_continuous_cartpole() {
    let env = CartPole::continuous();
    let mut base = BaseAgent::new(&env, lite(BaseAlgo::Td3Lite, 3)).unwrap();
    let mut soft = SoftAgent::new(&env, lite(BaseAlgo::Td3Lite, 3), nn_off()).unwrap();
    assert_eq!(base.train(&env, 400).unwrap(), soft.train(&env, 400).unwrap());
    assert!(same_bits(&base.nets, &soft.nets));
}

#[test]
fn nn_on_diverges_from_base() {
    let env = Reacher1d::default();
    let mut base = BaseAgent::new(&env, lite(BaseAlgo::DdpgLite, 1)).unwrap();
    let mut soft = SoftAgent::new(&env, lite(BaseAlgo::DdpgLite, 1), SoftNnConfig::default()).unwrap();
    base.train(&env, 300).unwrap();
    soft.train(&env, 300).unwrap();
    assert!(!same_bits(&base.nets, &soft.nets));
    assert!(soft.nn_evaluations > 0);
}

#[test]
fn soft_training_is_reproducible() {
    let env = Reacher1d::default();
    let run = || {
        let mut a = SoftAgent::new(&env, lite(BaseAlgo::Td3Lite, 4), SoftNnConfig::default()).unwrap();
        let c = a.train(&env, 400).unwrap();
        (c, a.nets)
    };
    let (c1, n1) = run();
    let (c2, n2) = run();
    assert_eq!(c1, c2);
    assert!(same_bits(&n1, &n2));
}

proptest! {
    #[test]
    fn geometric_schedule_matches_closed_form(a0 in 0.0..=1.0f64, beta in 0.0..1.0f64, k in 0usize..2000) {
        let cfg = SoftNnConfig { alpha0: a0, beta: BetaSchedule::Geometric(beta), ..Default::default() };
        let want = a0 * (1.0 - beta).powi(k as i32);
        prop_assert!((alpha(&cfg, k) - want).abs() <= 1e-12);
    }

    #[test]
    fn piecewise_schedule_switches_once(a0 in 0.0..=1.0f64, switch in 0usize..100, k in 0usize..200) {
        let cfg = SoftNnConfig { alpha0: a0, beta: BetaSchedule::Piecewise { switch_episode: switch }, ..Default::default() };
        prop_assert_eq!(alpha(&cfg, k), if k < switch { a0 } else { 0.0 });
    }
}
