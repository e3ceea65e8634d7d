//! Analytic gradients against central finite differences.

mod common;

use common::grad::*;
use common::FD_REL_TOL;

const INSTANCES: u64 = 20;

fn check(instance: Instance) {
    for seed in 0..INSTANCES {
        let err = instance(seed);
        assert!(err <= FD_REL_TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn im_loss_logit_gradient() {
    check(im_instance);
}

#[test]
fn pcc_loss_logit_gradient() {
    check(pcc_instance);
}

#[test]
fn mixup_loss_logit_gradient() {
    check(mixup_instance);
}

#[test]
fn full_backprop_through_mlp() {
    check(backprop_instance);
}

#[test]
fn total_objective_through_both_passes() {
    check(total_objective_instance);
}
