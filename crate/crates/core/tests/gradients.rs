//! Finite-difference verification of every differentiable loss term.

use sfc_core::context::{ContextEncoder, ContextSource};
use sfc_core::diffkit::{grad_check, GruCell, ParameterSet, Tape, DEFAULT_STEP};
use sfc_core::envs::Transition;
use sfc_core::mmd::{pairwise_separation_on_tape, KernelConfig, SeparationSign};
use sfc_core::policy::{build_loss_bc, ContextPolicy};
use sfc_core::rng;
use sfc_core::sfnet::{
    build_loss_mmd_omega, build_loss_recon, build_loss_reward, build_loss_td, td_targets,
    SfNetwork, SfSets,
};

use rand::Rng;

fn toy_transitions(n: usize, seed: u64) -> Vec<Transition> {
    let mut stream = rng::named_stream(seed, "gradtest");
    (0..n)
        .map(|_| {
            let mut v = |k: usize| -> Vec<f64> {
                (0..k).map(|_| stream.gen_range(-1.0..1.0)).collect()
            };
            Transition {
                state: v(2),
                action: v(2),
                reward: v(1)[0],
                next_state: v(2),
                done: false,
                task_id: 0,
            }
        })
        .collect()
}

fn net_from_sets(template: &SfNetwork, params: &[&ParameterSet]) -> SfNetwork {
    let mut n = template.clone();
    n.phi.params = params[0].clone();
    n.sf_head.params = params[1].clone();
    n.omega_head.params = params[2].clone();
    n.recon_head.params = params[3].clone();
    n
}

fn check_sf_term<F>(name: &str, tol: f64, build: F)
where
    F: Fn(&SfNetwork, &mut Tape, &SfSets) -> sfc_core::Result<sfc_core::diffkit::NodeId>,
{
    let net = SfNetwork::new(2, 2, 3, &[4], 0.9, 21).unwrap();
    let mut live = net.clone();
    let report = grad_check(
        &mut [
            &mut live.phi.params,
            &mut live.sf_head.params,
            &mut live.omega_head.params,
            &mut live.recon_head.params,
        ],
        DEFAULT_STEP,
        |tape, ids, params| {
            let sets = SfSets { phi: ids[0], sf: ids[1], omega: ids[2], recon: ids[3] };
            let current = net_from_sets(&net, params);
            build(&current, tape, &sets)
        },
    )
    .unwrap();
    assert!(
        report.max_rel_error <= tol,
        "{name}: max rel error {} at {} ({} params checked)",
        report.max_rel_error,
        report.worst_param,
        report.checked
    );
}

#[test]
fn reward_loss_gradients_match_finite_differences() {
    let ts = toy_transitions(4, 1);
    let batch: Vec<&Transition> = ts.iter().collect();
    check_sf_term("loss_reward", 1e-4, |n, tape, sets| {
        build_loss_reward(n, tape, sets, &batch, false)
    });
}

#[test]
fn recon_loss_gradients_match_finite_differences() {
    let ts = toy_transitions(4, 2);
    let batch: Vec<&Transition> = ts.iter().collect();
    check_sf_term("loss_recon", 1e-4, |n, tape, sets| {
        build_loss_recon(n, tape, sets, &batch, false)
    });
}

#[test]
fn td_loss_gradients_match_finite_differences_with_frozen_targets() {
    let ts = toy_transitions(4, 3);
    let batch: Vec<&Transition> = ts.iter().collect();
    let net = SfNetwork::new(2, 2, 3, &[4], 0.9, 21).unwrap();
    let targets = td_targets(&net, &batch, true).unwrap();
    check_sf_term("loss_td", 1e-4, |n, tape, sets| {
        build_loss_td(n, tape, sets, &batch, &targets, false)
    });
}

#[test]
fn omega_mmd_loss_gradients_match_finite_differences() {
    let ts = toy_transitions(6, 4);
    let batch: Vec<&Transition> = ts.iter().collect();
    let kernel = KernelConfig::fixed(0.8);
    check_sf_term("loss_mmd_omega", 1e-4, |n, tape, sets| {
        let per_task = vec![batch[..3].to_vec(), batch[3..].to_vec()];
        build_loss_mmd_omega(n, tape, sets, &per_task, &kernel, false)
    });
}

#[test]
fn combined_four_term_loss_gradients_match_finite_differences() {
    let ts = toy_transitions(4, 5);
    let batch: Vec<&Transition> = ts.iter().collect();
    let kernel = KernelConfig::fixed(1.0);
    let net = SfNetwork::new(2, 2, 3, &[4], 0.9, 21).unwrap();
    let targets = td_targets(&net, &batch, true).unwrap();
    check_sf_term("loss_sf_combined", 1e-4, |n, tape, sets| {
        let a = build_loss_reward(n, tape, sets, &batch, false)?;
        let b = build_loss_recon(n, tape, sets, &batch, false)?;
        let c = build_loss_td(n, tape, sets, &batch, &targets, false)?;
        let per_task = vec![batch[..2].to_vec(), batch[2..].to_vec()];
        let d = build_loss_mmd_omega(n, tape, sets, &per_task, &kernel, false)?;
        let ab = tape.add(a, b)?;
        let abc = tape.add(ab, c)?;
        tape.add(abc, d)
    });
}

#[test]
fn gru_three_step_unroll_gradients_are_tight() {
    let cell = GruCell::new(3, 4, 31).unwrap();
    let mut live = cell.clone();
    let inputs: Vec<Vec<f64>> = {
        let mut stream = rng::named_stream(31, "gru-inputs");
        (0..3)
            .map(|_| (0..3).map(|_| stream.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let report = grad_check(&mut [&mut live.params], DEFAULT_STEP, |tape, ids, params| {
        let mut current = cell.clone();
        current.params = params[0].clone();
        let mut h = tape.constant(&[0.0; 4]);
        for x in &inputs {
            let xn = tape.constant(x);
            h = current.step(tape, ids[0], h, xn)?;
        }
        Ok(tape.sum(h))
    })
    .unwrap();
    assert!(
        report.max_rel_error <= 1e-5,
        "gru unroll: max rel error {} at {}",
        report.max_rel_error,
        report.worst_param
    );
}

#[test]
fn bc_loss_gradients_flow_through_policy_and_encoder_jointly() {
    let ts = toy_transitions(5, 6);
    let window: Vec<&Transition> = ts.iter().collect();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        ts.iter().map(|t| (t.state.clone(), t.action.clone())).collect();
    let encoder = ContextEncoder::new(ContextSource::RawTransitions, 7, 3, 41).unwrap();
    let pol = ContextPolicy::new(2, 3, 2, &[4], 1.0, 41).unwrap();
    let mut live_p = pol.clone();
    let mut live_e = encoder.clone();
    let report = grad_check(
        &mut [&mut live_p.net.params, &mut live_e.gru.params],
        DEFAULT_STEP,
        |tape, ids, params| {
            let mut cur_p = pol.clone();
            cur_p.net.params = params[0].clone();
            let mut cur_e = encoder.clone();
            cur_e.gru.params = params[1].clone();
            let z = cur_e.encode_on_tape(tape, ids[1], None, &window)?;
            let pair_refs: Vec<(&[f64], &[f64])> =
                pairs.iter().map(|(s, a)| (s.as_slice(), a.as_slice())).collect();
            build_loss_bc(&cur_p, tape, ids[0], z, &pair_refs)
        },
    )
    .unwrap();
    assert!(
        report.max_rel_error <= 1e-4,
        "bc loss: max rel error {} at {}",
        report.max_rel_error,
        report.worst_param
    );
}

#[test]
fn context_separation_gradients_match_finite_differences() {
    let ts = toy_transitions(8, 7);
    let windows: Vec<Vec<&Transition>> = vec![
        ts[..2].iter().collect(),
        ts[2..5].iter().collect(),
        ts[5..].iter().collect(),
    ];
    let kernel = KernelConfig::fixed(0.7);
    let encoder = ContextEncoder::new(ContextSource::RawTransitions, 7, 3, 43).unwrap();
    let mut live = encoder.clone();
    for sign in [SeparationSign::Separate, SeparationSign::Attract] {
        let report = grad_check(&mut [&mut live.gru.params], DEFAULT_STEP, |tape, ids, params| {
            let mut cur = encoder.clone();
            cur.gru.params = params[0].clone();
            let mut groups = Vec::new();
            for w in &windows {
                let z = cur.encode_on_tape(tape, ids[0], None, w)?;
                groups.push(vec![z]);
            }
            pairwise_separation_on_tape(tape, &groups, sign, &kernel)
        })
        .unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "context separation ({sign:?}): max rel error {} at {}",
            report.max_rel_error,
            report.worst_param
        );
    }
}
