use proptest::prelude::*;

use super::*;
use crate::rng::stream;

fn unit(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::normalized(v.to_vec()).unwrap()
}

fn quiet_config() -> EnvConfig {
    EnvConfig {
        noise_enabled: false,
        ..EnvConfig::default()
    }
}

/// Two-dimensional hand-built world: user 0 and items 0..=2.
fn hand_env(e_u: &[f64], r_u: f64, e0: f64, items: &[(&[f64], f64)], session_mean: f64) -> Environment {
    let config = EnvConfig {
        embedding_dim: e_u.len(),
        num_users: 1,
        num_items: items.len(),
        noise_enabled: false,
        session_intent: NormalParams::new(session_mean, 0.0),
        ..EnvConfig::default()
    };
    let population = Population {
        users: vec![UserProfile {
            id: UserId(0),
            embedding: unit(e_u),
            fixed_effect: r_u,
            intrinsic_intent: e0,
        }],
        items: items
            .iter()
            .enumerate()
            .map(|(i, (e, r))| ItemEntry {
                id: ItemId(i),
                embedding: unit(e),
                fixed_effect: *r,
            })
            .collect(),
    };
    Environment::with_population(&config, 0, population)
}

#[test]
fn one_dimensional_embeddings_are_one() {
    let config = EnvConfig {
        embedding_dim: 1,
        num_users: 20,
        num_items: 20,
        ..EnvConfig::default()
    };
    let pop = generate_population(&config, 3).unwrap();
    for e in pop.users.iter().map(|u| &u.embedding).chain(pop.items.iter().map(|i| &i.embedding)) {
        assert_eq!(e.as_slice(), &[1.0]);
    }
}

#[test]
fn zero_dimension_is_a_config_error() {
    let config = EnvConfig {
        embedding_dim: 0,
        ..EnvConfig::default()
    };
    match generate_population(&config, 0) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "env.embedding_dim"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn user_fixed_effects_follow_their_distribution() {
    let n = 100_000;
    let config = EnvConfig {
        num_users: n,
        num_items: 1,
        embedding_dim: 2,
        ..EnvConfig::default()
    };
    let pop = generate_population(&config, 17).unwrap();
    let xs: Vec<f64> = pop.users.iter().map(|u| u.fixed_effect).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    assert!((mean - 0.5).abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    assert!((std - 1.0).abs() < 0.05, "std {std}");
}

#[test]
fn same_seed_gives_identical_population() {
    let config = EnvConfig::default();
    let a = generate_population(&config, 9).unwrap();
    let b = generate_population(&config, 9).unwrap();
    let c = generate_population(&config, 10).unwrap();
    assert!(a.to_parameter_set().unwrap().bitwise_eq(&b.to_parameter_set().unwrap()));
    assert_ne!(a, c);
    for e in a.users.iter().map(|u| &u.embedding).chain(a.items.iter().map(|i| &i.embedding)) {
        assert!((e.norm() - 1.0).abs() < 1e-6);
        assert!(e.as_slice().iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn relevance_examples() {
    let a = unit(&[0.3, 0.4]);
    assert!((relevance(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(relevance(&unit(&[1.0, 0.0]), &unit(&[0.0, 1.0])).unwrap(), 0.0);
    assert!((relevance(&unit(&[0.6, 0.8]), &unit(&[1.0, 0.0])).unwrap() - 0.6).abs() < 1e-15);
    assert!(matches!(relevance(&unit(&[1.0]), &unit(&[1.0, 0.0])), Err(Error::Shape(_))));
}

#[test]
fn novelty_examples() {
    let a = unit(&[0.6, 0.8]);
    assert_eq!(item_novelty(&a, &a).unwrap(), 0.0);
    let orth = item_novelty(&unit(&[1.0, 0.0]), &unit(&[0.0, 1.0])).unwrap();
    assert!((orth - 2f64.sqrt()).abs() < 1e-15);
    let d = item_novelty(&a, &unit(&[1.0, 0.0])).unwrap();
    assert!((d - (0.4f64.powi(2) + 0.8f64.powi(2)).sqrt()).abs() < 1e-12);
    assert!((d - 0.8944).abs() < 1e-4);
}

#[test]
fn session_intent_is_additive_and_constant_within_a_session() {
    let mut env = hand_env(&[1.0, 0.0], 0.0, 0.3, &[(&[1.0, 0.0], 0.0)], -0.5);
    assert!((env.session_intent(UserId(0), 3).unwrap() - (-0.2)).abs() < 1e-15);

    let mut env = Environment::generate(&EnvConfig::default(), 4).unwrap();
    let u = UserId(7);
    let first: Vec<f64> = (1..=5).map(|t| env.session_intent(u, t).unwrap()).collect();
    assert!(first.iter().all(|&x| x == first[0]));
    assert_eq!(env.session_index(5), 1);
    assert_eq!(env.session_index(6), 2);
    assert_ne!(env.session_intent(u, 6).unwrap(), first[0]);
}

#[test]
fn session_intent_draws_are_order_independent() {
    let mut a = Environment::generate(&EnvConfig::default(), 4).unwrap();
    let mut b = Environment::generate(&EnvConfig::default(), 4).unwrap();
    let x1 = a.session_intent(UserId(1), 12).unwrap();
    let x2 = a.session_intent(UserId(2), 1).unwrap();
    let y2 = b.session_intent(UserId(2), 1).unwrap();
    let y1 = b.session_intent(UserId(1), 12).unwrap();
    assert_eq!((x1, x2), (y1, y2));
}

#[test]
fn session_draws_are_standard_normal() {
    let mut table = SessionIntentTable::new(21, NormalParams::new(0.0, 1.0), true);
    let n = 20_000;
    let xs: Vec<f64> = (0..n).map(|k| table.get(UserId(k % 100), k / 100 + 1)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 / (n as f64).sqrt());
    assert!((std - 1.0).abs() < 0.05);
}

#[test]
fn reward_examples_without_noise() {
    let mut rng = stream(0, "noise", &[0]);
    // e_u = e_i = e_prev: A = 1, N = 0.
    let mut env = hand_env(&[0.6, 0.8], 0.25, 1.7, &[(&[0.6, 0.8], -0.4), (&[0.6, 0.8], 0.0)], 0.9);
    let r = env.simulate_reward(UserId(0), ItemId(0), 2, Some(ItemId(1)), &mut rng).unwrap();
    assert!((r - (1.0 + 0.25 - 0.4)).abs() < 1e-12);

    // Orthogonal user, zero fixed effects, item equals the previous one.
    let mut env = hand_env(&[0.0, 1.0], 0.0, 0.0, &[(&[1.0, 0.0], 0.0), (&[1.0, 0.0], 0.0)], 0.0);
    let r = env.simulate_reward(UserId(0), ItemId(0), 2, Some(ItemId(1)), &mut rng).unwrap();
    assert!(r.abs() < 1e-15);

    // A = 0.5, E = -0.2, N = |(1,0) - (0.6,0.8)|, r_u = 0.1, r_i = 0.2.
    let mut env = hand_env(&[0.5, 0.75f64.sqrt()], 0.1, 0.3, &[(&[1.0, 0.0], 0.2), (&[0.6, 0.8], 0.0)], -0.5);
    let r = env.simulate_reward(UserId(0), ItemId(0), 2, Some(ItemId(1)), &mut rng).unwrap();
    let oracle = 0.5 + (-0.2) * (0.16f64 + 0.64).sqrt() + 0.1 + 0.2;
    assert!((r - oracle).abs() < 1e-12);
    assert!((r - 0.62111).abs() < 1e-5);
}

#[test]
fn first_step_has_no_novelty_term() {
    let mut env = hand_env(&[1.0, 0.0], 0.0, 5.0, &[(&[0.0, 1.0], 0.0)], 5.0);
    let r = env.expected_reward(UserId(0), ItemId(0), 1, None).unwrap();
    assert_eq!(r, 0.0);
}

#[test]
fn noise_free_rewards_decompose_exactly() {
    let mut env = Environment::generate(&quiet_config(), 8).unwrap();
    let mut rng = stream(8, "noise", &[0]);
    for (u, i, p, t) in [(0, 3, 9, 2), (5, 100, 7, 17), (199, 499, 0, 40)] {
        let r = env.simulate_reward(UserId(u), ItemId(i), t, Some(ItemId(p)), &mut rng).unwrap();
        let user = env.users()[u].clone();
        let item = env.items()[i].clone();
        let prev = env.items()[p].clone();
        let e = env.session_intent(UserId(u), t).unwrap();
        let a = relevance(&user.embedding, &item.embedding).unwrap();
        let n = item_novelty(&item.embedding, &prev.embedding).unwrap();
        let residual = r - user.fixed_effect - item.fixed_effect - a - e * n;
        assert!(residual.abs() < 1e-12, "residual {residual}");
    }
}

#[test]
fn identical_seeds_give_identical_reward_trajectories() {
    let run = || {
        let mut env = Environment::generate(&EnvConfig::default(), 2).unwrap();
        let mut rng = stream(2, "noise", &[3]);
        (1..=30)
            .map(|t| {
                env.simulate_reward(UserId(3), ItemId(t * 7), t, Some(ItemId(t)), &mut rng)
                    .unwrap()
                    .to_bits()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn variance_reading_uses_square_root() {
    let config = EnvConfig {
        noise_reading: NoiseReading::Variance,
        ..EnvConfig::default()
    };
    assert!((config.noise_std() - 0.1f64.sqrt()).abs() < 1e-15);
    assert_eq!(EnvConfig::default().noise_std(), 0.1);
}

#[test]
fn history_is_append_only() {
    let env = Environment::generate(&EnvConfig::default(), 0).unwrap();
    let mut h = UserHistory::new();
    env.advance_history(&mut h, ItemId(7), 0.1).unwrap();
    assert_eq!(h.items(), &[ItemId(7)]);
    assert_eq!(h.prev(), Some(ItemId(7)));
    let mut h = UserHistory::new();
    env.advance_history(&mut h, ItemId(3), 0.0).unwrap();
    env.advance_history(&mut h, ItemId(9), 0.0).unwrap();
    assert_eq!(h.items(), &[ItemId(3), ItemId(9)]);
    assert_eq!(h.prev(), Some(ItemId(9)));
    assert!(matches!(env.advance_history(&mut h, ItemId(10_000), 0.0), Err(Error::Lookup(_))));
    assert_eq!(h.len(), 2);
}

#[test]
fn masking_removes_consumed_items() {
    let config = EnvConfig {
        mask_history: true,
        num_items: 10,
        ..EnvConfig::default()
    };
    let env = Environment::generate(&config, 0).unwrap();
    let mut h = UserHistory::new();
    env.advance_history(&mut h, ItemId(4), 0.0).unwrap();
    let c = env.candidates(&h);
    assert_eq!(c.len(), 9);
    assert!(!c.contains(&ItemId(4)));
}

#[test]
fn population_survives_tensor_packing() {
    let pop = generate_population(&EnvConfig::default(), 5).unwrap();
    let back = Population::from_parameter_set(&pop.to_parameter_set().unwrap()).unwrap();
    assert_eq!(pop, back);
}

fn unit_vec(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| EmbeddingVector::normalized(v).unwrap())
}

proptest! {
    #[test]
    fn relevance_and_novelty_are_well_behaved(a in unit_vec(4), b in unit_vec(4), c in unit_vec(4)) {
        let ab = relevance(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, relevance(&b, &a).unwrap());
        let dab = item_novelty(&a, &b).unwrap();
        prop_assert!((0.0..=2.0 + 1e-12).contains(&dab));
        prop_assert_eq!(dab, item_novelty(&b, &a).unwrap());
        prop_assert_eq!(item_novelty(&a, &a).unwrap(), 0.0);
        let dbc = item_novelty(&b, &c).unwrap();
        let dac = item_novelty(&a, &c).unwrap();
        prop_assert!(dac <= dab + dbc + 1e-12);
    }
}
