use smartsizer::trialsim::{
    estimate_sigma_true, generate, Aipw, Augmentation, Design1, Design2, Estimator, Ipw, SmartDesign,
};

fn max_z(design: &dyn SmartDesign, est: &dyn Estimator, n: usize, seed: u64) -> f64 {
    let data = generate(design, n, design.default_delta(), seed);
    let fit = est.fit(design, &data).unwrap();
    let truth = design.true_theta(design.default_delta());
    fit.theta_hat
        .iter()
        .zip(fit.theta_se())
        .zip(truth)
        .map(|((t, se), truth)| (t - truth).abs() / se)
        .fold(0.0, f64::max)
}

#[test]
fn consistent_across_sample_sizes() {
    let designs: [&dyn SmartDesign; 2] = [&Design1, &Design2];
    let methods: [&dyn Estimator; 3] = [&Ipw, &Aipw::default(), &Aipw::full()];
    for d in designs {
        for est in methods {
            for (k, n) in [1_000, 10_000, 100_000].into_iter().enumerate() {
                let z = max_z(d, est, n, 31 + k as u64);
                assert!(z < 3.0, "design {} {} n={n}: |z| = {z}", d.id(), est.name());
            }
        }
    }
}

#[test]
fn misspecified_means_stay_unbiased() {
    let wrong = Aipw { augmentation: Augmentation::Misspecified };
    for (k, d) in [&Design1 as &dyn SmartDesign, &Design2].into_iter().enumerate() {
        let z = max_z(d, &wrong, 100_000, 77 + k as u64);
        assert!(z < 3.0, "design {}: |z| = {z}", d.id());
    }
}

#[test]
fn sandwich_stabilizes_with_n() {
    for d in [&Design1 as &dyn SmartDesign, &Design2] {
        let small = estimate_sigma_true(d, &Aipw::default(), d.default_delta(), 10_000, 40, 3).unwrap();
        let large = estimate_sigma_true(d, &Aipw::default(), d.default_delta(), 100_000, 4, 4).unwrap();
        let k = small.dim();
        for i in 0..k {
            for j in 0..k {
                let scale = (large.get(i, i) * large.get(j, j)).sqrt();
                let drift = (small.get(i, j) - large.get(i, j)).abs() / scale;
                assert!(drift < 0.05, "design {} entry ({i}, {j}) drifts {drift}", d.id());
            }
        }
    }
}
