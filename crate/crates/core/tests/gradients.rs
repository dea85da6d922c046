//! Central finite-difference checks of reverse-mode gradients through the
//! whole velocity network and the combined training objective.

mod common;

use common::{case, gradient_errors, randomized, small};
use edgeflow::net::Phase;

fn assert_close(errors: Vec<(String, f64)>) {
    for (name, e) in errors {
        assert!(e < 1e-5, "{name}: relative error {e:e}");
    }
}

#[test]
fn pretrain_fm_gradients() {
    let mut net = randomized(small(), 1);
    net.set_phase(Phase::Pretrain);
    let c = case(&net, 2);
    assert_close(gradient_errors(net, &c, false, false));
}

#[test]
fn finetune_fm_gradients() {
    let mut net = randomized(small(), 3);
    net.set_phase(Phase::Finetune);
    let c = case(&net, 4);
    assert_close(gradient_errors(net, &c, true, false));
}

#[test]
fn finetune_proxy_pixel_gradients() {
    let mut net = randomized(small(), 5);
    net.set_phase(Phase::Finetune);
    let c = case(&net, 6);
    assert_close(gradient_errors(net, &c, true, true));
}

#[test]
fn every_parameter_with_condition() {
    let mut net = randomized(small(), 7);
    net.params_mut().set_trainable_where(|_| true);
    let c = case(&net, 8);
    assert_close(gradient_errors(net, &c, true, true));
}
