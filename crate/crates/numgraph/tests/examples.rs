mod fit_linear {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/fit_linear.rs"));
}

#[test]
fn fit_linear_drives_the_loss_down() {
    let (first, last) = fit_linear::run_example();
    assert!(last < 1e-4 && last < first, "{first} -> {last}");
}
