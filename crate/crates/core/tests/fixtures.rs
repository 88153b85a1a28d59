#[path = "../examples/inverted_u_fixture.rs"]
#[allow(dead_code)]
mod inverted_u;

#[test]
fn shipped_inverted_u_fixture_is_current() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demand_inverted_u.jsonl");
    let shipped = std::fs::read_to_string(&path).unwrap();
    let fresh = inverted_u::fixture_lines();
    assert_eq!(shipped.lines().count(), fresh.len());
    for (i, (a, b)) in shipped.lines().zip(&fresh).enumerate() {
        assert_eq!(a, b, "line {} differs; regenerate with the inverted_u_fixture example", i + 1);
    }
}
