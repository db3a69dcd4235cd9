mod common;

use ppp_cusum::baselines::{BaselineConfig, BaselineKind, KieDetector, MmdDetector};
use ppp_cusum::calibration::{calibrate, scan_threshold, CalibrationSettings, ThresholdMethod};
use ppp_cusum::detector::DetectorConfig;
use ppp_cusum::embedding::{embed_window, CoordinateSplit, PointWindow, RescaleStats};
use ppp_cusum::events::{ingest_events, write_events, IngestOptions};
use ppp_cusum::harness::{
    report_for_scenario, run_replications, run_variants, DetectorSpec, ExperimentSpec,
};
use ppp_cusum::sim::{Scenario, ScenarioKind};

fn scenario_3d(seed: u64, n_train: usize, n_total: usize, change_at: Option<usize>) -> Scenario {
    Scenario {
        kind: ScenarioKind::Scenario3d { change_scale: 1.0 },
        n_train,
        n_total,
        change_at,
        seed,
    }
}

#[test]
fn simulator_dump_ingests_to_identical_embeddings() {
    let sc = scenario_3d(3, 40, 80, Some(60));
    let windows = sc.generate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.csv");
    write_events(std::fs::File::create(&path).unwrap(), &windows, 3).unwrap();
    let opts = IngestOptions {
        bounds: Some(RescaleStats::new(vec![0.0; 3], vec![1.0; 3]).unwrap()),
        ..IngestOptions::default()
    };
    let got = ingest_events(&path, &opts).unwrap();
    assert_eq!((got.training.len(), got.stream.len()), (40, 40));
    let split = CoordinateSplit::new(vec![1], vec![0, 2]).unwrap();
    for (a, b) in windows.iter().zip(got.training.iter().chain(&got.stream)) {
        assert_eq!(a.index, b.index);
        let ea = embed_window(a, &split, 3).unwrap();
        let eb = embed_window(b, &split, 3).unwrap();
        assert!(ea.max_abs_diff(&eb) < 1e-10);
    }
}

fn small_training(seed: u64) -> Vec<PointWindow> {
    Scenario {
        kind: ScenarioKind::ConstIntensity {
            dim: 2,
            rate: 25.0,
            post_rate: None,
        },
        n_train: 80,
        n_total: 80,
        change_at: None,
        seed,
    }
    .generate()
    .unwrap()
}

#[test]
fn calibration_is_deterministic_and_monotone_in_alpha() {
    let training = small_training(8);
    let cfg = DetectorConfig {
        gamma: 2.0,
        split: CoordinateSplit::leading(1, 2).unwrap(),
        rank: 1,
        window: 10,
        threshold_const: 0.0,
    };
    let mut prev = f64::INFINITY;
    for alpha in [0.01, 0.05, 0.1, 0.25, 0.5] {
        let c = scan_threshold(&training, &cfg, alpha, 60, 4).unwrap();
        assert_eq!(c, scan_threshold(&training, &cfg, alpha, 60, 4).unwrap());
        assert!(c <= prev, "alpha {alpha}: {c} > {prev}");
        prev = c;
    }
    for method in [ThresholdMethod::Scan, ThresholdMethod::HalfSplit] {
        let mut prev = f64::INFINITY;
        for alpha in [0.02, 0.1, 0.4] {
            let settings = CalibrationSettings {
                window: 10,
                alpha,
                permutations: 50,
                seed: 2,
                method,
                ..CalibrationSettings::default()
            };
            let rep = calibrate(&training, &settings).unwrap();
            assert_eq!(rep.method, method);
            assert!(rep.threshold_const <= prev);
            prev = rep.threshold_const;
        }
    }
}

fn spec(detectors: Vec<DetectorSpec>) -> ExperimentSpec {
    ExperimentSpec {
        scenario: scenario_3d(0, 120, 200, Some(160)),
        detectors,
        replications: 3,
        alpha: 0.05,
        permutations: 30,
        seed: 5,
        workers: 1,
    }
}

#[test]
fn variants_share_calibration_and_prefix() {
    let spec = spec(vec![DetectorSpec::matrix(20)]);
    let no_change = Scenario {
        change_at: None,
        ..spec.scenario.clone()
    };
    let both = run_variants(&spec, &[spec.scenario.clone(), no_change.clone()]).unwrap();
    let alone = run_replications(&spec).unwrap();
    assert_eq!(both[0], alone);
    for (a, b) in both[0].iter().zip(&both[1]) {
        let (ta, tb) = (&a.trajectories[0], &b.trajectories[0]);
        assert_eq!(ta.threshold, tb.threshold);
        // Identical up to and including the last pre-change window.
        assert_eq!(ta.statistics[..40], tb.statistics[..40]);
    }
    let report = report_for_scenario(&spec, &no_change, &both[1]);
    assert_eq!(report.change_at, None);
    let mismatched = Scenario {
        n_train: 100,
        ..spec.scenario.clone()
    };
    assert!(run_variants(&spec, &[spec.scenario.clone(), mismatched]).is_err());
}

#[test]
fn experiment_is_reproducible_and_detects_the_3d_change() {
    let spec = spec(vec![
        DetectorSpec::matrix(20),
        DetectorSpec::Mmd {
            window: 10,
            bandwidth: None,
            threshold: None,
        },
        DetectorSpec::Kie {
            window: 10,
            bandwidth: None,
            grid_res: Some(8),
            threshold: None,
        },
    ]);
    let a = run_replications(&spec).unwrap();
    assert_eq!(a, run_replications(&spec).unwrap());
    let report = report_for_scenario(&spec, &spec.scenario, &a);
    for d in &report.detectors {
        let total = d.false_alarm_rate + d.correct_detection_rate + d.no_alarm_rate;
        assert!((total - 1.0).abs() < 1e-12);
    }
    let matrix = &report.detectors[0];
    assert!(matrix.correct_detection_rate > 0.0, "{:?}", matrix.alarm_times);
}

fn peak_statistics<F>(windows: &[PointWindow], mut stat: F) -> f64
where
    F: FnMut(&PointWindow) -> f64,
{
    windows.iter().map(|w| stat(w)).fold(0.0, f64::max)
}

#[test]
fn mmd_reacts_to_a_shape_change() {
    // The 3D change moves mass towards the far corner as well as thinning it,
    // so the pooled point locations change. MMD compares locations only.
    let windows = scenario_3d(1, 60, 130, Some(90)).generate().unwrap();
    let mut mmd = MmdDetector::new(BaselineConfig::new(BaselineKind::Mmd, 8), &windows[..60]).unwrap();
    let before = peak_statistics(&windows[60..90], |w| mmd.step_statistic(w).unwrap());
    let after = peak_statistics(&windows[90..110], |w| mmd.step_statistic(w).unwrap());
    assert!(after > 2.0 * before, "{before} {after}");
}

#[test]
fn kie_reacts_to_a_rate_change() {
    let windows = Scenario {
        kind: ScenarioKind::ConstIntensity {
            dim: 2,
            rate: 20.0,
            post_rate: Some(60.0),
        },
        n_train: 60,
        n_total: 120,
        change_at: Some(90),
        seed: 1,
    }
    .generate()
    .unwrap();
    let mut kie = KieDetector::new(BaselineConfig::new(BaselineKind::Kie, 8), &windows[..60]).unwrap();
    let before = peak_statistics(&windows[60..90], |w| kie.step_statistic(w).unwrap());
    let after = peak_statistics(&windows[90..110], |w| kie.step_statistic(w).unwrap());
    assert!(after > 2.0 * before, "{before} {after}");
}
