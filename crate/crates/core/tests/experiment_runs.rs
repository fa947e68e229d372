use edgepart::experiment::{run_experiment, run_folds, ExperimentConfig, ModelKind};

fn config(model: ModelKind, jobs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(
        "synthetic = 18x16;0-9:0-8;6-18:5-16;noise=0.03;seed=7\nT = 3,6\niterations = 12\nretain = 5\nfolds = 3\nseed = 21\n",
    )
    .unwrap();
    cfg.model = model;
    cfg.jobs = jobs;
    cfg
}

#[test]
fn results_do_not_depend_on_worker_count() {
    for model in ModelKind::ALL {
        let serial = run_folds(&config(model, 1)).unwrap();
        let parallel = run_folds(&config(model, 4)).unwrap();
        assert_eq!(serial.runs.len(), parallel.runs.len());
        for (a, b) in serial.runs.iter().zip(&parallel.runs) {
            assert_eq!((a.truncation, a.fold), (b.truncation, b.fold));
            assert_eq!(a.report.tdll, b.report.tdll, "{model}");
            assert_eq!(a.report.tdauc_pr, b.report.tdauc_pr);
            assert_eq!(a.report.mean_active_atoms, b.report.mean_active_atoms);
            let strip = |r: &edgepart::eval::EvalReport| -> Vec<(usize, usize, u64, u64)> {
                r.trace
                    .iter()
                    .map(|t| {
                        (
                            t.iteration,
                            t.active_atoms,
                            t.tdll.to_bits(),
                            t.tdll_running.to_bits(),
                        )
                    })
                    .collect()
            };
            assert_eq!(strip(&a.report), strip(&b.report));
        }
    }
}

#[test]
fn truncation_level_chains_do_not_depend_on_the_sweep() {
    let both = run_folds(&config(ModelKind::Depm, 1)).unwrap();
    let mut single = config(ModelKind::Depm, 1);
    single.truncations = vec![6];
    let alone = run_folds(&single).unwrap();
    let from_both: Vec<f64> = both.runs_at(Some(6)).map(|r| r.report.tdll).collect();
    let from_alone: Vec<f64> = alone.runs_at(Some(6)).map(|r| r.report.tdll).collect();
    assert_eq!(from_both, from_alone);
}

#[test]
fn outputs_have_one_trace_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(ModelKind::Cepm, 2);
    cfg.out_dir = dir.path().to_path_buf();
    run_experiment(&cfg).unwrap();
    for t in [3, 6] {
        let mean = std::fs::read_to_string(dir.path().join(format!("trace_T{t}.csv"))).unwrap();
        assert_eq!(mean.lines().count(), 1 + cfg.iterations);
        for fold in 0..3 {
            let path = dir
                .path()
                .join("folds")
                .join(format!("trace_T{t}_fold{fold}.csv"));
            let text = std::fs::read_to_string(path).unwrap();
            assert_eq!(text.lines().count(), 1 + cfg.iterations);
        }
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * (3 + 2));
    let written = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(ExperimentConfig::parse(&written).unwrap(), cfg);
}
