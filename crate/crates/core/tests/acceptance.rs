//! Acceptance suite. Runs every criterion in sequence, prints one line per
//! criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use gradfeat::check::{self, CheckConfig, SuiteResult};
use gradfeat::grad::{encode_features, gradient_shapes};
use gradfeat::kernel::{encode_cross_gram, encode_gram};
use gradfeat::pipeline::{self, compare_modes, format_comparison, PipelineConfig};
use gradfeat::{FeatureMode, KernelKind, SyntheticTask};

struct Outcome {
    passed: bool,
    detail: String,
}

fn suite_outcome(r: &SuiteResult, elapsed: Duration, budget: Option<Duration>) -> Outcome {
    let in_time = budget.is_none_or(|b| elapsed < b);
    Outcome {
        passed: r.passed && in_time,
        detail: format!(
            "cases={} max_error={:.3e} tolerance={:.0e} time={:.2}s{}{}",
            r.cases,
            r.max_error,
            r.tolerance,
            elapsed.as_secs_f64(),
            budget.map(|b| format!(" (budget {}s)", b.as_secs())).unwrap_or_default(),
            if r.detail.is_empty() { String::new() } else { format!(" [{}]", r.detail) }
        ),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn criterion_1(cfg: &CheckConfig) -> Outcome {
    let (r, t) = timed(|| check::factorized_trace(cfg).expect("trace suite runs"));
    let mut o = suite_outcome(&r, t, Some(Duration::from_secs(5)));
    if r.cases < 50 {
        o.passed = false;
    }
    o
}

fn criterion_2(cfg: &CheckConfig) -> Outcome {
    let (r, t) = timed(|| check::finite_difference(cfg).expect("finite-difference suite runs"));
    suite_outcome(&r, t, Some(Duration::from_secs(10)))
}

fn criterion_3() -> Outcome {
    let shapes = gradient_shapes(&[9216, 4096, 4096, 1000]);
    let implied: Vec<u64> = shapes.iter().map(|s| s.implied_entries()).collect();
    let stored: Vec<u64> = shapes.iter().map(|s| s.factorized_len()).collect();
    Outcome {
        passed: implied == [37_748_736, 16_777_216, 4_096_000] && stored == [13_312, 8_192, 5_096],
        detail: format!("implied={implied:?} factorized={stored:?}"),
    }
}

fn criterion_4(cfg: &CheckConfig) -> Outcome {
    let (r, t) = timed(|| check::psd(cfg).expect("psd suite runs"));
    let mut o = suite_outcome(&r, t, None);
    o.detail = format!("worst violation/tolerance ratio {:.3e} over {} grams of {} features", r.max_error, r.cases, cfg.psd_features);
    o.passed = r.passed && cfg.psd_features >= 30;
    o
}

fn criterion_5(cfg: &CheckConfig) -> Outcome {
    let (r, t) = timed(|| check::frobenius(cfg).expect("frobenius suite runs"));
    let mut o = suite_outcome(&r, t, None);
    o.passed = r.passed && r.cases >= 100;
    o
}

fn criterion_6(cfg: &CheckConfig) -> Outcome {
    let (r, t) = timed(|| check::smo_vs_qp(cfg).expect("smo suite runs"));
    let mut o = suite_outcome(&r, t, None);
    o.passed = r.passed && r.cases > 20;
    o
}

fn criterion_7() -> Outcome {
    let (r, t) = timed(|| check::ap_hand_cases().expect("AP cases run"));
    suite_outcome(&r, t, None)
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let task = SyntheticTask::default();
    let data = task.generate().expect("synthetic task");
    let k = data.net.num_layers() - 1;
    let cfg = PipelineConfig {
        kernel: KernelKind::Trace,
        ..PipelineConfig::new(FeatureMode::Gradient, k)
    };
    let clean = pipeline::run(&data.net, &data.train, &data.test, &cfg).expect("noiseless pipeline");
    let map = clean.report.map.mean;

    let noisy = SyntheticTask { noise: 1.5, ..task }.generate().expect("noisy task");
    let layers: Vec<usize> = (1..=noisy.net.num_layers()).collect();
    let rows = compare_modes(&noisy.net, &noisy.train, &noisy.test, &layers, &PipelineConfig::default())
        .expect("comparison runs");
    let elapsed = start.elapsed();
    println!("noisy task (noise 1.5) comparison:\n{}", format_comparison(&rows));
    Outcome {
        passed: map == 1.0 && rows.len() == 3 * layers.len() && elapsed < Duration::from_secs(60),
        detail: format!(
            "noiseless mAP={map} (n={}, P={}, k={k}); comparison rows={} time={:.2}s (budget 60s)",
            data.train.n(),
            data.train.classes(),
            rows.len(),
            elapsed.as_secs_f64()
        ),
    }
}

fn artifacts(threads: usize) -> Vec<Vec<u8>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    pool.install(|| {
        let data = SyntheticTask {
            noise: 0.8,
            ..SyntheticTask::default()
        }
        .generate()
        .expect("task");
        let mut out = Vec::new();
        for mode in [FeatureMode::Gradient, FeatureMode::Concat] {
            let cfg = PipelineConfig::new(mode, 2);
            let run = pipeline::run(&data.net, &data.train, &data.test, &cfg).expect("pipeline");
            out.push(encode_features(&run.train_features));
            out.push(encode_features(&run.test_features));
            out.push(encode_gram(&run.gram));
            out.push(encode_cross_gram(&run.cross));
            out.push(run.model.to_json().into_bytes());
            out.push(run.report.to_text().into_bytes());
        }
        out
    })
}

fn criterion_9() -> Outcome {
    let one = artifacts(1);
    let again = artifacts(1);
    let four = artifacts(4);
    let bytes: usize = one.iter().map(Vec::len).sum();
    Outcome {
        passed: one == again && one == four,
        detail: format!("{} files, {bytes} bytes compared across 1, 1 and 4 threads", one.len()),
    }
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let cfg = CheckConfig::default();
    let criteria: Vec<Criterion> = vec![
        ("1 factorization oracle", Box::new(|| criterion_1(&cfg))),
        ("2 gradient oracle", Box::new(|| criterion_2(&cfg))),
        ("3 dimensionality arithmetic", Box::new(criterion_3)),
        ("4 kernel properties", Box::new(|| criterion_4(&cfg))),
        ("5 normalization identity", Box::new(|| criterion_5(&cfg))),
        ("6 svm solver", Box::new(|| criterion_6(&cfg))),
        ("7 average precision", Box::new(criterion_7)),
        ("8 end-to-end", Box::new(criterion_8)),
        ("9 determinism", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!("criterion {name}: {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
