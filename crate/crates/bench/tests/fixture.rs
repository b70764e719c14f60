use splitguard_bench::fixture;

#[test]
fn fixture_runs_the_full_pipeline() {
    for n in [1, 8] {
        let (model, img) = fixture(n);
        assert_eq!(model.n_branches(), n);
        assert_eq!(img.shape(), model.plan().input_shape);
        let t = model.trunk_forward(&img).unwrap();
        let set = model.all_branches(&t).unwrap();
        assert_eq!(set.len(), n);
        assert_eq!(
            model.head_forward(&set).unwrap(),
            model.forward(&img).unwrap()
        );
    }
}
