use proptest::prelude::*;
use rand::seq::index::sample;
use rand::Rng;

use super::*;
use crate::encoder::StateTrajectory;
use crate::nn::{blend, check_parameter_gradient, gradient_check};
use crate::rng::stream;

const EMB: usize = 4;

fn small_config() -> AgentConfig {
    AgentConfig {
        state_dim: 6,
        goal_dim: 3,
        hidden: vec![5],
        gamma: 0.9,
        ..AgentConfig::default()
    }
}

fn agent_with(config: &AgentConfig, hierarchical: bool) -> HrlAgent {
    HrlAgent::new(config, EMB, hierarchical, 11).unwrap()
}

fn agent() -> HrlAgent {
    agent_with(&small_config(), true)
}

fn catalog(n: usize, seed: u64) -> Vec<ItemEntry> {
    let mut rng = stream(seed, "catalog", &[]);
    (0..n)
        .map(|i| ItemEntry {
            id: ItemId(i),
            embedding: EmbeddingVector::normalized((0..EMB).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap(),
            fixed_effect: 0.0,
        })
        .collect()
}

fn random_state<R: Rng>(rng: &mut R, dim: usize) -> UserState {
    UserState {
        hidden: (0..dim).map(|_| rng.random_range(-0.9..0.9)).collect(),
        step: 3,
    }
}

fn random_goal<R: Rng>(rng: &mut R, dim: usize) -> GoalVector {
    GoalVector {
        values: (0..dim).map(|_| rng.random_range(-0.9..0.9)).collect(),
        session: 1,
    }
}

fn set(ps: &mut ParameterSet, name: &str, values: &[f64]) {
    let t = ps.by_name_mut(name).unwrap_or_else(|| panic!("no parameter {name}"));
    t.data_mut().copy_from_slice(values);
}

fn values_eq(a: &ParameterSet, b: &ParameterSet) -> bool {
    a.iter()
        .zip(b.iter())
        .all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
}

/// A trajectory of `n` consumptions plus the window for its last state.
fn trajectory(agent: &HrlAgent, items: &[ItemEntry], n: usize) -> StateTrajectory {
    let features = EmbeddingVector::normalized(vec![0.3, 0.5, 0.2, 0.9]).unwrap();
    let mut traj = agent.start_trajectory(&features).unwrap();
    for k in 0..n {
        agent
            .advance(&mut traj, &items[k % items.len()].embedding, 0.25 * k as f64 - 0.4)
            .unwrap();
    }
    traj
}

fn interaction_transition(agent: &HrlAgent, items: &[ItemEntry], with_window: bool) -> InteractionTransition {
    let traj = trajectory(agent, items, 7);
    let mut rng = stream(5, "tr", &[]);
    InteractionTransition {
        state: traj.state_at(6).unwrap(),
        window: with_window.then(|| traj.window(6, 5).unwrap()),
        action: ItemId(2),
        reward: 0.7,
        next_state: traj.state_at(7).unwrap(),
        goal: random_goal(&mut rng, agent.config().goal_dim),
        terminal: false,
        next_candidates: (0..items.len()).map(ItemId).collect(),
    }
}

fn session_transition(agent: &HrlAgent, items: &[ItemEntry], with_window: bool) -> SessionTransition {
    let traj = trajectory(agent, items, 10);
    let state = traj.state_at(5).unwrap();
    let goal = agent.propose_goal(&state, 2, false).unwrap();
    SessionTransition {
        state,
        window: with_window.then(|| traj.window(5, 5).unwrap()),
        goal,
        reward: 1.3,
        next_state: traj.state_at(10).unwrap(),
        terminal: false,
    }
}

#[test]
fn zero_actor_gives_zero_goal() {
    let mut a = agent();
    a.group_mut(Group::Session).unwrap().fill(0.0);
    let s = random_state(&mut stream(1, "s", &[]), 6);
    assert_eq!(a.propose_goal(&s, 1, false).unwrap().values, vec![0.0; 3]);
}

#[test]
fn goals_are_deterministic_and_bounded() {
    let a = agent();
    let mut rng = stream(2, "s", &[]);
    for _ in 0..50 {
        let s = random_state(&mut rng, 6);
        let g1 = a.propose_goal(&s, 4, false).unwrap();
        let g2 = a.propose_goal(&s, 4, false).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.session, 4);
        assert!(g1.values.iter().all(|v| v.abs() < 1.0));
        assert_eq!(a.propose_goal(&s, 4, true).unwrap(), g1, "target starts as a copy");
    }
}

#[test]
fn flat_agent_has_zero_goals_and_no_session_group() {
    let a = agent_with(&small_config(), false);
    let s = random_state(&mut stream(3, "s", &[]), 6);
    assert_eq!(a.propose_goal(&s, 1, false).unwrap().values, vec![0.0; 3]);
    assert!(a.group(Group::Session).is_none());
    assert!(matches!(a.session_q(&s, &a.zero_goal(1), false), Err(Error::State(_))));
    let flat = a.parameters().unwrap();
    assert!(flat.iter().all(|(n, _)| !n.starts_with("ses")));
}

#[test]
fn session_q_dueling_identity() {
    let mut a = agent();
    let mut rng = stream(4, "s", &[]);
    let s = random_state(&mut rng, 6);
    let g = random_goal(&mut rng, 3);
    let nets = a.session_nets().unwrap().clone();
    let input = concat(&s.hidden, &g.values);
    for _ in 0..20 {
        let s = random_state(&mut rng, 6);
        let g = random_goal(&mut rng, 3);
        let ps = a.group(Group::Session).unwrap();
        let (v, adv) = nets.critic.components(ps, &concat(&s.hidden, &g.values)).unwrap();
        assert_eq!(a.session_q(&s, &g, false).unwrap(), v + adv);
    }
    {
        let ps = a.group_mut(Group::Session).unwrap();
        for name in ["critic.advantage.l0.weight", "critic.advantage.l1.weight"] {
            ps.by_name_mut(name).unwrap().data_mut().fill(0.0);
        }
        ps.by_name_mut("critic.advantage.l0.bias").unwrap().data_mut().fill(0.0);
        set(ps, "critic.advantage.l1.bias", &[0.0]);
    }
    let ps = a.group(Group::Session).unwrap();
    let v = nets.critic.components(ps, &input).unwrap().0;
    assert_eq!(a.session_q(&s, &g, false).unwrap(), v);

    let ps = a.group_mut(Group::Session).unwrap();
    ps.fill(0.0);
    set(ps, "critic.value.l1.bias", &[0.5]);
    set(ps, "critic.advantage.l1.bias", &[0.1]);
    assert!((a.session_q(&s, &g, false).unwrap() - 0.6).abs() < 1e-15);
}

#[test]
fn interaction_q_examples() {
    let mut a = agent();
    let items = catalog(6, 1);
    let mut rng = stream(5, "s", &[]);
    let s = random_state(&mut rng, 6);
    let g = random_goal(&mut rng, 3);
    assert!(matches!(a.interaction_q(&s, &g, &items, ItemId(6), false), Err(Error::Lookup(_))));

    let ps = a.group_mut(Group::Interaction).unwrap();
    for name in ["advantage.l0.weight", "advantage.l0.bias", "advantage.l1.weight", "advantage.l1.bias"] {
        ps.by_name_mut(name).unwrap().data_mut().fill(0.0);
    }
    let q0 = a.interaction_q(&s, &g, &items, ItemId(0), false).unwrap();
    for i in 1..6 {
        assert_eq!(a.interaction_q(&s, &g, &items, ItemId(i), false).unwrap(), q0);
    }

    let ps = a.group_mut(Group::Interaction).unwrap();
    ps.fill(0.0);
    set(ps, "value.l1.bias", &[0.2]);
    set(ps, "advantage.l1.bias", &[-0.05]);
    assert!((a.interaction_q(&s, &g, &items, ItemId(3), false).unwrap() - 0.15).abs() < 1e-15);
}

#[test]
fn interaction_q_depends_on_goal() {
    let a = agent();
    let items = catalog(6, 2);
    let mut rng = stream(6, "s", &[]);
    for _ in 0..10 {
        let s = random_state(&mut rng, 6);
        let g = random_goal(&mut rng, 3);
        let eps = 1e-5;
        let mut max_slope = 0.0f64;
        for k in 0..3 {
            let mut gp = g.clone();
            gp.values[k] += eps;
            let mut gm = g.clone();
            gm.values[k] -= eps;
            let plus = a.interaction_q(&s, &gp, &items, ItemId(1), false).unwrap();
            let minus = a.interaction_q(&s, &gm, &items, ItemId(1), false).unwrap();
            max_slope = max_slope.max(((plus - minus) / (2.0 * eps)).abs());
        }
        assert!(max_slope > 1e-6);
    }
}

#[test]
fn scores_match_pointwise_q() {
    let a = agent();
    let items = catalog(9, 3);
    let mut rng = stream(7, "s", &[]);
    let s = random_state(&mut rng, 6);
    let g = random_goal(&mut rng, 3);
    let cands: Vec<ItemId> = [4, 0, 8, 2].map(ItemId).to_vec();
    for target in [false, true] {
        let scores = a.interaction_scores(&s, &g, &items, &cands, target).unwrap();
        for (c, sc) in cands.iter().zip(&scores) {
            let q = a.interaction_q(&s, &g, &items, *c, target).unwrap();
            assert!((q - sc).abs() < 1e-12);
        }
    }
}

/// Interaction net whose Q is the first embedding coordinate.
fn first_coordinate_agent() -> HrlAgent {
    let mut a = agent();
    let ps = a.group_mut(Group::Interaction).unwrap();
    ps.fill(0.0);
    let mut w = vec![0.0; 5 * (6 + 3 + EMB)];
    w[6 + 3] = 1.0;
    set(ps, "advantage.l0.weight", &w);
    let mut out = vec![0.0; 5];
    out[0] = 1.0;
    set(ps, "advantage.l1.weight", &out);
    a
}

fn items_with_first_coordinates(xs: &[f64]) -> Vec<ItemEntry> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| ItemEntry {
            id: ItemId(i),
            embedding: EmbeddingVector::from_unit(vec![x, (1.0 - x * x).sqrt(), 0.0, 0.0]).unwrap(),
            fixed_effect: 0.0,
        })
        .collect()
}

#[test]
fn select_action_examples() {
    let a = first_coordinate_agent();
    let items = items_with_first_coordinates(&[0.1, 0.9, 0.3, 0.9]);
    let mut rng = stream(8, "sel", &[]);
    let s = random_state(&mut rng, 6);
    let g = random_goal(&mut rng, 3);
    let scores = a.interaction_scores(&s, &g, &items, &[ItemId(0), ItemId(1), ItemId(2), ItemId(3)], false).unwrap();
    for (got, want) in scores.iter().zip([0.1, 0.9, 0.3, 0.9]) {
        assert!((got - want).abs() < 1e-12);
    }
    let order = [ItemId(3), ItemId(2), ItemId(1), ItemId(0)];
    assert_eq!(a.select_action(&s, &g, &items, &order, 0.0, &mut rng).unwrap(), ItemId(1));
    assert_eq!(a.select_action(&s, &g, &items, &[ItemId(2)], 0.0, &mut rng).unwrap(), ItemId(2));
    assert_eq!(a.select_action(&s, &g, &items, &[ItemId(0)], 1.0, &mut rng).unwrap(), ItemId(0));
    assert!(matches!(a.select_action(&s, &g, &items, &[], 0.0, &mut rng), Err(Error::Argument(_))));
    assert_eq!(a.rank(&s, &g, &items, &order, 3).unwrap(), vec![ItemId(1), ItemId(3), ItemId(2)]);
}

#[test]
fn full_exploration_is_uniform() {
    let a = agent();
    let items = catalog(4, 4);
    let mut rng = stream(9, "sel", &[]);
    let s = random_state(&mut rng, 6);
    let g = random_goal(&mut rng, 3);
    let cands: Vec<ItemId> = (0..4).map(ItemId).collect();
    let n = 10_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[a.select_action(&s, &g, &items, &cands, 1.0, &mut rng).unwrap().0] += 1;
    }
    let sigma = (n as f64 * 0.25 * 0.75).sqrt();
    for c in counts {
        assert!((c as f64 - 2500.0).abs() < 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn greedy_selection_matches_exhaustive_oracle() {
    let a = agent();
    let items = catalog(40, 5);
    let mut rng = stream(10, "sel", &[]);
    for _ in 0..200 {
        let s = random_state(&mut rng, 6);
        let g = random_goal(&mut rng, 3);
        let n = rng.random_range(1..=40);
        let cands: Vec<ItemId> = sample(&mut rng, 40, n).into_iter().map(ItemId).collect();
        let mut best: Option<(f64, ItemId)> = None;
        for &c in &cands {
            let q = a.interaction_q(&s, &g, &items, c, false).unwrap();
            if best.is_none_or(|(bq, bid)| q > bq || (q == bq && c < bid)) {
                best = Some((q, c));
            }
        }
        assert_eq!(a.select_action(&s, &g, &items, &cands, 0.0, &mut rng).unwrap(), best.unwrap().1);
    }
}

#[test]
fn interaction_td_arithmetic() {
    let mut a = agent();
    let items = catalog(5, 6);
    a.group_mut(Group::Interaction).unwrap().fill(0.0);
    set(a.group_mut(Group::Interaction).unwrap(), "advantage.l1.bias", &[1.4]);
    a.group_mut(Group::InteractionTarget).unwrap().fill(0.0);
    set(a.group_mut(Group::InteractionTarget).unwrap(), "advantage.l1.bias", &[1.0]);
    let mut tr = interaction_transition(&a, &items, false);
    tr.reward = 0.5;
    let l = a.interaction_td_loss(&tr, &items).unwrap();
    assert!((l.target - 1.4).abs() < 1e-15);
    assert!((l.q - 1.4).abs() < 1e-15);
    assert!(l.loss < 1e-28);

    tr.terminal = true;
    let l = a.interaction_td_loss(&tr, &items).unwrap();
    assert_eq!(l.target, 0.5);
    assert!((l.loss - 0.81).abs() < 1e-12);
}

#[test]
fn interaction_fixed_point_has_zero_gradient() {
    let mut a = agent();
    let items = catalog(5, 7);
    let mut tr = interaction_transition(&a, &items, false);
    let l = a.interaction_td_loss(&tr, &items).unwrap();
    tr.reward += l.q - l.target;
    let l = a.interaction_td_loss(&tr, &items).unwrap();
    assert!(l.loss < 1e-28);
    assert!(l.grads.int.as_ref().unwrap().max_abs() < 1e-12);
    // Exact zero when every value is exactly representable.
    a.group_mut(Group::Interaction).unwrap().fill(0.0);
    a.group_mut(Group::InteractionTarget).unwrap().fill(0.0);
    tr.reward = 0.0;
    let l = a.interaction_td_loss(&tr, &items).unwrap();
    assert_eq!(l.loss, 0.0);
    assert_eq!(l.grads.int.unwrap().max_abs(), 0.0);
}

#[test]
fn session_td_arithmetic() {
    let mut a = agent();
    let items = catalog(5, 8);
    a.group_mut(Group::Session).unwrap().fill(0.0);
    let t = a.group_mut(Group::SessionTarget).unwrap();
    t.fill(0.0);
    set(t, "critic.value.l1.bias", &[2.0]);
    let mut tr = session_transition(&a, &items, false);
    tr.reward = 1.0;
    let l = a.session_td_loss(&tr).unwrap();
    assert_eq!(l.q, 0.0);
    assert!((l.target - 2.8).abs() < 1e-15);
    assert!((l.loss - 7.84).abs() < 1e-12);
    assert!(l.grads.int.is_none());
}

fn check_group<F>(agent: &HrlAgent, group: Group, analytic: &ParameterSet, loss: F) -> f64
where
    F: Fn(View<'_>) -> Result<f64>,
{
    let mut ps = agent.group(group).unwrap().clone();
    let mut rng = stream(12, "fd", &[]);
    let f = |p: &ParameterSet| {
        let mut v = agent.view();
        match group {
            Group::Encoder => v.enc = p,
            Group::Session => v.ses = Some(p),
            Group::Interaction => v.int = p,
            _ => unreachable!("targets are constants"),
        }
        loss(v)
    };
    check_parameter_gradient(f, &mut ps, analytic, None, 1e-5, &mut rng).unwrap()
}

#[test]
fn interaction_gradients_match_finite_differences() {
    let a = agent();
    let items = catalog(8, 9);
    let tr = interaction_transition(&a, &items, true);
    let l = a.interaction_td_loss(&tr, &items).unwrap();
    assert!(l.grads.ses.is_none());
    let loss = |v: View<'_>| a.interaction_td_loss_in(v, &tr, &items).map(|l| l.loss);
    let e_int = check_group(&a, Group::Interaction, l.grads.int.as_ref().unwrap(), loss);
    let e_enc = check_group(&a, Group::Encoder, l.grads.enc.as_ref().unwrap(), loss);
    assert!(e_int < 1e-4 && e_enc < 1e-4, "{e_int} {e_enc}");
}

#[test]
fn session_gradients_match_finite_differences_through_actor() {
    let a = agent();
    let items = catalog(8, 10);
    let tr = session_transition(&a, &items, true);
    let l = a.session_td_loss(&tr).unwrap();
    let ses = l.grads.ses.as_ref().unwrap();
    let actor_grad = ses.iter().filter(|(n, _)| n.starts_with("actor")).map(|(_, t)| t.data().iter().map(|x| x.abs()).sum::<f64>()).sum::<f64>();
    assert!(actor_grad > 0.0, "the TD loss reaches the actor");
    let loss = |v: View<'_>| a.session_td_loss_in(v, &tr).map(|l| l.loss);
    let e_ses = check_group(&a, Group::Session, ses, loss);
    let e_enc = check_group(&a, Group::Encoder, l.grads.enc.as_ref().unwrap(), loss);
    assert!(e_ses < 1e-4 && e_enc < 1e-4, "{e_ses} {e_enc}");
}

#[test]
fn actor_critic_path_passes_block_check() {
    let a = agent();
    let nets = a.session_nets().unwrap().clone();
    let mut ps = a.group(Group::Session).unwrap().clone();
    let err = gradient_check(&nets, &mut ps, 100, 1e-5, &mut stream(13, "fd", &[])).unwrap();
    assert!(err < 1e-4, "{err}");
    let mut int = a.group(Group::Interaction).unwrap().clone();
    let err = gradient_check(a.interaction_head(), &mut int, 100, 1e-5, &mut stream(14, "fd", &[])).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn policy_gradient_mode() {
    let cfg = AgentConfig {
        actor_update: ActorUpdate::PolicyGradient,
        ..small_config()
    };
    let a = agent_with(&cfg, true);
    let items = catalog(8, 11);
    let tr = session_transition(&a, &items, false);
    let l = a.session_td_loss(&tr).unwrap();
    let ses = l.grads.ses.as_ref().unwrap();
    let nets = a.session_nets().unwrap();
    let mut ps = a.group(Group::Session).unwrap().clone();

    // Critic coordinates follow the TD loss at the stored goal.
    let td = |p: &ParameterSet| -> Result<f64> {
        let q = nets.q(p, &tr.state.hidden, &tr.goal.values)?;
        Ok((q - l.target) * (q - l.target))
    };
    let mut critic_err = 0.0f64;
    let mut actor_err = 0.0f64;
    // Actor coordinates follow −Q(s, μ(s)).
    let pg = |p: &ParameterSet| -> Result<f64> {
        let g = nets.propose(p, &tr.state.hidden)?;
        Ok(-nets.q(p, &tr.state.hidden, &g)?)
    };
    for (name, t) in ses.iter() {
        let f: &dyn Fn(&ParameterSet) -> Result<f64> = if name.starts_with("actor") { &pg } else { &td };
        for k in 0..t.len() {
            let id = ps.id(name).unwrap();
            let orig = ps.get(id).data()[k];
            ps.get_mut(id).data_mut()[k] = orig + 1e-5;
            let plus = f(&ps).unwrap();
            ps.get_mut(id).data_mut()[k] = orig - 1e-5;
            let minus = f(&ps).unwrap();
            ps.get_mut(id).data_mut()[k] = orig;
            let e = crate::nn::relative_error(t.data()[k], (plus - minus) / 2e-5);
            if name.starts_with("actor") {
                actor_err = actor_err.max(e);
            } else {
                critic_err = critic_err.max(e);
            }
        }
    }
    assert!(critic_err < 1e-4 && actor_err < 1e-4, "{critic_err} {actor_err}");
}

#[test]
fn zero_losses_leave_parameters_unchanged() {
    let mut a = agent();
    let items = catalog(5, 12);
    for g in [Group::Session, Group::SessionTarget, Group::Interaction, Group::InteractionTarget] {
        a.group_mut(g).unwrap().fill(0.0);
    }
    let mut itr = interaction_transition(&a, &items, false);
    itr.reward = 0.0;
    let mut str_ = session_transition(&a, &items, false);
    str_.reward = 0.0;
    let before = a.clone();
    let report = a.joint_update(&itr, Some(&str_), &items).unwrap();
    assert_eq!(report.interaction_loss, Some(0.0));
    assert_eq!(report.session_loss, Some(0.0));
    for g in Group::ALL {
        assert!(values_eq(a.group(g).unwrap(), before.group(g).unwrap()), "{g:?}");
    }
}

#[test]
fn session_groups_untouched_without_session_transition() {
    let mut a = agent();
    let items = catalog(5, 13);
    let itr = interaction_transition(&a, &items, true);
    let before = a.clone();
    let report = a.joint_update(&itr, None, &items).unwrap();
    assert!(report.session_loss.is_none());
    assert!(a.group(Group::Session).unwrap().bitwise_eq(before.group(Group::Session).unwrap()));
    assert!(!values_eq(a.group(Group::Interaction).unwrap(), before.group(Group::Interaction).unwrap()));
    assert!(!values_eq(a.group(Group::Encoder).unwrap(), before.group(Group::Encoder).unwrap()));
    assert_eq!(a.updates(), 1);
}

#[test]
fn joint_step_equals_sequential_steps_with_frozen_encoder() {
    let mut joint = agent();
    let items = catalog(6, 14);
    let itr = interaction_transition(&joint, &items, false);
    let str_ = session_transition(&joint, &items, false);
    let mut seq = joint.clone();

    joint.joint_update(&itr, Some(&str_), &items).unwrap();

    let l = seq.interaction_td_loss(&itr, &items).unwrap();
    seq.apply_gradients(&l.grads).unwrap();
    let l = seq.session_td_loss(&str_).unwrap();
    seq.apply_gradients(&l.grads).unwrap();
    seq.sync_targets().unwrap();

    assert!(joint.parameters().unwrap().bitwise_eq(&seq.parameters().unwrap()));
}

#[test]
fn targets_follow_polyak_exactly() {
    let cfg = AgentConfig {
        tau: 0.3,
        ..small_config()
    };
    let mut a = agent_with(&cfg, true);
    let items = catalog(6, 15);
    let itr = interaction_transition(&a, &items, true);
    let str_ = session_transition(&a, &items, true);
    for round in 0..3 {
        let old_int = a.group(Group::InteractionTarget).unwrap().clone();
        let old_ses = a.group(Group::SessionTarget).unwrap().clone();
        a.joint_update(&itr, (round != 1).then_some(&str_), &items).unwrap();
        for (old, tgt, online) in [
            (&old_int, Group::InteractionTarget, Group::Interaction),
            (&old_ses, Group::SessionTarget, Group::Session),
        ] {
            let new_t = a.group(tgt).unwrap();
            let on = a.group(online).unwrap();
            for ((_, t_old), ((_, t_new), (_, o))) in old.iter().zip(new_t.iter().zip(on.iter())) {
                for ((&x, &y), &z) in t_old.data().iter().zip(t_new.data()).zip(o.data()) {
                    assert_eq!(y.to_bits(), blend(x, z, 0.3).to_bits());
                    assert!((y - (0.3 * z + 0.7 * x)).abs() <= 1e-15 * (1.0 + z.abs() + x.abs()));
                }
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_through_flat_set() {
    let mut a = agent();
    let items = catalog(6, 16);
    let itr = interaction_transition(&a, &items, true);
    let str_ = session_transition(&a, &items, true);
    a.joint_update(&itr, Some(&str_), &items).unwrap();
    let flat = a.parameters().unwrap();
    assert!(flat.by_name("ses/adam.step").is_some());
    assert!(flat.by_name("ses.target/adam.step").is_none());

    let mut b = HrlAgent::new(&small_config(), EMB, true, 99).unwrap();
    assert!(!b.parameters().unwrap().bitwise_eq(&flat));
    b.load_parameters(&flat).unwrap();
    assert!(b.parameters().unwrap().bitwise_eq(&flat));

    let mut flat_agent = agent_with(&small_config(), false);
    assert!(matches!(flat_agent.load_parameters(&flat), Err(Error::Shape(_))));
}

#[test]
fn replay_buffer_is_bounded() {
    let cfg = AgentConfig {
        replay: Some(ReplayConfig {
            capacity: 3,
            batch_size: 2,
        }),
        ..small_config()
    };
    let mut a = agent_with(&cfg, true);
    let items = catalog(6, 17);
    let itr = interaction_transition(&a, &items, true);
    let str_ = session_transition(&a, &items, true);
    for k in 0..5 {
        let report = a.joint_update(&itr, (k % 2 == 0).then_some(&str_), &items).unwrap();
        assert!(report.interaction_loss.unwrap().is_finite());
    }
    assert_eq!(a.replay.as_ref().unwrap().len(), (3, 3));
}

#[test]
fn config_validation_names_keys() {
    let bad = |f: fn(&mut AgentConfig)| {
        let mut c = AgentConfig::default();
        f(&mut c);
        match c.validate() {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    };
    assert_eq!(bad(|c| c.gamma = 1.5), "agent.gamma");
    assert_eq!(bad(|c| c.tau = 0.0), "agent.tau");
    assert_eq!(bad(|c| c.learning_rate = 0.0), "agent.learning_rate");
    assert_eq!(bad(|c| c.goal_dim = 0), "agent.goal_dim");
    assert!(AgentConfig::default().validate().is_ok());
    let e = Exploration {
        start: 1.0,
        end: 0.1,
        decay_steps: 10,
    };
    assert_eq!(e.epsilon(0), 1.0);
    assert!((e.epsilon(5) - 0.55).abs() < 1e-15);
    assert_eq!(e.epsilon(10), 0.1);
    assert_eq!(e.epsilon(1000), 0.1);
}

#[test]
fn top_k_orders_by_score_then_id() {
    let ids = [ItemId(5), ItemId(2), ItemId(9), ItemId(1)];
    let scores = [0.3, 0.7, 0.3, -1.0];
    assert_eq!(top_k(&ids, &scores, 3).unwrap(), vec![ItemId(2), ItemId(5), ItemId(9)]);
    assert_eq!(top_k(&ids, &scores, 10).unwrap().len(), 4);
    assert_eq!(argmax_smallest_id(&ids, &scores).unwrap().0, ItemId(2));
    assert!(argmax_smallest_id(&[], &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn td_losses_are_squared_errors(reward in -5.0f64..5.0, terminal in any::<bool>()) {
        let a = agent();
        let items = catalog(5, 18);
        let mut itr = interaction_transition(&a, &items, false);
        itr.reward = reward;
        itr.terminal = terminal;
        let l = a.interaction_td_loss(&itr, &items).unwrap();
        prop_assert!(l.loss >= 0.0);
        prop_assert_eq!(l.loss, (l.q - l.target) * (l.q - l.target));
        let mut str_ = session_transition(&a, &items, false);
        str_.reward = reward;
        str_.terminal = terminal;
        let l = a.session_td_loss(&str_).unwrap();
        prop_assert!(l.loss >= 0.0);
        prop_assert_eq!(l.loss, (l.q - l.target) * (l.q - l.target));
        if terminal {
            prop_assert_eq!(l.target, reward);
        }
    }
}
