mod common;

#[test]
fn analytic_gradients_match_central_differences() {
    for (term, err, n) in common::gradient_suite() {
        assert!(n > 0, "{term}: nothing checked");
        assert!(err < 1e-4, "{term}: max relative error {err:e} over {n} coordinates");
    }
}
