mod expert_demos {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/expert_demos.rs"));
}
mod render_views {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/render_views.rs"));
}

#[test]
fn expert_demos_roundtrip() {
    let (n, steps) = expert_demos::run_example();
    assert_eq!(n, 4);
    assert!(steps > 4);
}

#[test]
fn render_views_draw_something() {
    let (front, wrist) = render_views::run_example();
    assert!(front.chars().any(|c| c == '#' || c == '+'));
    assert_eq!(front.lines().count(), wrist.lines().count());
}
