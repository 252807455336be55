mod common;

#[test]
fn stage1_loss_gradient_matches_central_differences() {
    let r = common::stage1_fd(16, 1e-4);
    eprintln!("{r:?}");
    assert!(r.checked > 100);
    assert!(r.max_rel_error <= 1e-3, "{r:?}");
}

#[test]
fn stage2_loss_gradient_matches_central_differences() {
    let r = common::stage2_fd(16, 1e-4);
    eprintln!("{r:?}");
    assert!(r.checked > 100);
    assert!(r.max_rel_error <= 1e-3, "{r:?}");
}
