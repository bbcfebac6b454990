use nopg::analysis::{run_gradient_study, Estimator, GradientStudyConfig, StudyBandwidths};
use nopg::envs::lqg::{lqg_true_gradient, LqgSpec};

#[test]
#[ignore]
fn calibrate_study_bandwidths() {
    let lqg = LqgSpec::benchmark_2d();
    let g_det = lqg_true_gradient(&lqg.deterministic(), &[-0.6, -0.8]).unwrap();
    let g_sto = lqg_true_gradient(&lqg, &[-0.6, -0.8]).unwrap();
    println!("g* det {:?} (norm {:.3})", g_det, (g_det[0].powi(2)+g_det[1].powi(2)).sqrt());
    println!("g* stoch {:?}", g_sto);
    for bw in [(0.05, 0.1, 0.05), (0.1, 0.15, 0.1), (0.15, 0.25, 0.15), (0.25, 0.5, 0.25)] {
        let config = GradientStudyConfig {
            estimators: vec![Estimator::NopgD, Estimator::DpgQ, Estimator::GpomdpN],
            sizes: vec![500],
            alphas: vec![0.0, 0.5],
            seeds: 20,
            bandwidths: StudyBandwidths { state: bw.0, action: bw.1, next: bw.2 },
            master_seed: 45,
            n_boot: 200,
            ..GradientStudyConfig::default()
        };
        let report = run_gradient_study(&lqg, &config).unwrap();
        for c in &report.cells {
            println!(
                "h={:?} {} n={} a={}: bias {:.4} var {:.4} mse {:.4} angle_med {:.2} fail {}",
                bw, c.estimator.label(), c.n, c.alpha, c.bias_norm, c.variance, c.mse,
                c.angle_median, c.failures
            );
        }
    }
}
