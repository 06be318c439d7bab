use lffd_core::conv::ConvGeometry;
use lffd_core::gradcheck::{check_conv, check_losses, check_network, check_relu, GradReport};

const TOL: f64 = 1e-3;

fn ok(r: GradReport) {
    assert!(r.passes(TOL), "{}: worst relative error {:.3e} over {} entries", r.name, r.worst, r.checked);
}

#[test]
fn conv3x3_stride1() {
    ok(check_conv(ConvGeometry::conv3x3(1), 3, 4, 7, 6, 1).unwrap());
}

#[test]
fn conv3x3_stride2_odd_input() {
    ok(check_conv(ConvGeometry::conv3x3(2), 2, 3, 9, 7, 2).unwrap());
    ok(check_conv(ConvGeometry::conv3x3(2), 3, 2, 8, 11, 7).unwrap());
}

#[test]
fn conv1x1() {
    ok(check_conv(ConvGeometry::conv1x1(), 5, 2, 4, 6, 3).unwrap());
}

#[test]
fn relu_away_from_kink() {
    ok(check_relu(4).unwrap());
}

#[test]
fn classification_and_regression_losses() {
    for seed in [5, 6, 7] {
        ok(check_losses(seed).unwrap());
    }
}

#[test]
fn end_to_end_desk_step() {
    for seed in [11, 12] {
        ok(check_network(seed).unwrap());
    }
}
