//! Reverse-mode gradients against central finite differences.

use pegrad_core::nets::{standard_normal, Activation, Bind, Mlp, MlpSpec, QNetwork, SquashedGaussianPolicy};
use pegrad_core::oracle::{compare, finite_diff, FD_EPS};
use pegrad_core::ppo::{clipped_surrogate, policy_direction, PolicyMinibatch};
use pegrad_core::rng::seeded;
use pegrad_core::sac::{actor_loss_grad, Channel, ChannelCritic};
use pegrad_core::{Combiner, Graph, ParamVector, Tensor};

const MAX_REL: f64 = 1e-5;

fn check(name: &str, analytic: &ParamVector, numeric: &ParamVector) {
    let r = compare(analytic.values(), numeric.values(), FD_EPS).unwrap();
    assert!(
        r.max_rel_error <= MAX_REL,
        "{name}: rel error {:.3e} at {} (analytic {}, numeric {})",
        r.max_rel_error,
        r.argmax,
        analytic.values()[r.argmax],
        numeric.values()[r.argmax]
    );
}

#[test]
fn mlp_regression_loss() {
    let spec = MlpSpec::new(3, &[5, 4], 2, Activation::Tanh).unwrap();
    let mut rng = seeded(1);
    let mlp = Mlp::new(spec.clone(), &mut rng).unwrap();
    let x = standard_normal(6, 3, &mut rng);
    let y = standard_normal(6, 2, &mut rng);
    let loss = |theta: &ParamVector| -> pegrad_core::Result<(f64, ParamVector)> {
        let m = Mlp::from_params(spec.clone(), theta.clone())?;
        let mut g = Graph::new();
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let out = m.forward(&mut g, xv, Bind::Trainable)?;
        let d = g.sub(out, yv)?;
        let sq = g.square(d)?;
        let l = g.mean(sq)?;
        let v = g.value(l).item();
        Ok((v, g.backward(l)?))
    };
    let (_, analytic) = loss(mlp.params()).unwrap();
    let numeric = finite_diff(|t| Ok(loss(t)?.0), mlp.params(), FD_EPS).unwrap();
    check("mlp", &analytic, &numeric);
}

fn actor_fixture(channel: Channel) -> (SquashedGaussianPolicy, ChannelCritic, Tensor, Tensor) {
    let mut rng = seeded(7);
    let pspec = MlpSpec::new(3, &[8, 8], 2, Activation::Tanh).unwrap();
    let policy = SquashedGaussianPolicy::new(pspec, &[-2.0, -1.0], &[2.0, 1.0], &mut rng).unwrap();
    let qspec = QNetwork::spec_for(3, 2, &[8, 8], Activation::Tanh).unwrap();
    let q = QNetwork::new(3, 2, qspec, &mut rng).unwrap();
    let critic = ChannelCritic::new(channel, vec![q], 1e-3).unwrap();
    let obs = standard_normal(5, 3, &mut rng);
    let noise = standard_normal(5, 2, &mut rng);
    (policy, critic, obs, noise)
}

/// Exercises the gradient path through the action input of a frozen critic,
/// the tanh squash and the log-density, for both channels.
#[test]
fn sac_actor_losses() {
    for channel in [Channel::Task, Channel::Energy] {
        let (policy, critic, obs, noise) = actor_fixture(channel);
        let (_, analytic) = actor_loss_grad(&policy, &critic, &obs, &noise, 0.2).unwrap();
        let spec = policy.spec().clone();
        let (low, high) = (vec![-2.0, -1.0], vec![2.0, 1.0]);
        let numeric = finite_diff(
            |t| {
                let p = SquashedGaussianPolicy::from_params(spec.clone(), t.clone(), &low, &high)?;
                Ok(actor_loss_grad(&p, &critic, &obs, &noise, 0.2)?.0)
            },
            policy.params(),
            FD_EPS,
        )
        .unwrap();
        check(&format!("{channel:?} actor"), &analytic, &numeric);
    }
}

#[test]
fn critic_action_input_gradient() {
    // d Q / d a through the concatenated input, via a parameter standing in
    // for the action.
    let mut rng = seeded(11);
    let qspec = QNetwork::spec_for(2, 2, &[6], Activation::Tanh).unwrap();
    let q = QNetwork::new(2, 2, qspec, &mut rng).unwrap();
    let obs = standard_normal(3, 2, &mut rng);
    let act = standard_normal(3, 2, &mut rng);
    let eval = |a: &Tensor| -> pegrad_core::Result<(f64, ParamVector)> {
        let mut g = Graph::new();
        let o = g.constant(obs.clone());
        let av = g.param("act", a.clone());
        let out = q.forward(&mut g, o, av, Bind::Frozen)?;
        let l = g.sum(out)?;
        let v = g.value(l).item();
        Ok((v, g.backward(l)?))
    };
    let (_, analytic) = eval(&act).unwrap();
    let theta = ParamVector::from_tensors([("act", act.clone())]);
    let numeric = finite_diff(
        |t| Ok(eval(&Tensor::new(vec![3, 2], t.values().to_vec())?)?.0),
        &theta,
        FD_EPS,
    )
    .unwrap();
    check("q action input", &analytic, &numeric);
}

fn ppo_fixture() -> (SquashedGaussianPolicy, PolicyMinibatch) {
    let mut rng = seeded(21);
    let spec = MlpSpec::new(3, &[8], 2, Activation::Tanh).unwrap();
    let policy = SquashedGaussianPolicy::new(spec, &[-1.0; 2], &[1.0; 2], &mut rng).unwrap();
    let obs = standard_normal(12, 3, &mut rng);
    let sample = policy.sample(&obs, &mut rng).unwrap();
    // Old log-probs shifted so that some ratios fall outside the clip range
    // (by a clear margin, away from the kinks).
    let shifts = [0.0, 0.5, -0.5, 0.05, -0.05, 0.4, -0.4, 0.1, 0.0, 0.3, -0.3, 0.02];
    let log_prob_old = sample.log_prob.iter().zip(shifts).map(|(l, s)| l + s).collect();
    let mb = PolicyMinibatch {
        obs,
        raw: sample.raw,
        log_prob_old,
        adv_task: standard_normal(12, 1, &mut rng).into_data(),
        adv_energy: standard_normal(12, 1, &mut rng).into_data().into_iter().map(f64::abs).collect(),
    };
    (policy, mb)
}

#[test]
fn clipped_surrogate_and_entropy_bonus() {
    let (policy, mb) = ppo_fixture();
    let spec = policy.spec().clone();
    let objective = |p: &SquashedGaussianPolicy| -> pegrad_core::Result<f64> {
        let mut g = Graph::new();
        let o = g.constant(mb.obs.clone());
        let logp = p.log_prob_raw(&mut g, o, &mb.raw, Bind::Trainable)?;
        let old = g.constant(Tensor::new(vec![12, 1], mb.log_prob_old.clone())?);
        let d = g.sub(logp, old)?;
        let ratio = g.exp(d)?;
        let surr = clipped_surrogate(&mut g, ratio, &mb.adv_task, 0.2)?;
        let (_, ls) = p.distribution(&mut g, o, Bind::Trainable)?;
        let h = p.gaussian_entropy(&mut g, ls)?;
        let h = g.mean(h)?;
        let bonus = g.scale(h, 0.01)?;
        let l = g.sub(surr, bonus)?;
        Ok(g.value(l).item())
    };
    let analytic = policy_direction(&policy, &mb, 0.2, 0.01, Combiner::Scalarized { lambda: 0.0 })
        .unwrap()
        .direction;
    let numeric = finite_diff(
        |t| objective(&SquashedGaussianPolicy::from_params(spec.clone(), t.clone(), &[-1.0; 2], &[1.0; 2])?),
        policy.params(),
        FD_EPS,
    )
    .unwrap();
    check("ppo surrogate", &analytic, &numeric);
}
