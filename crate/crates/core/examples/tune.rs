use std::time::Instant;
use sakdn_core::presets;

// args: seed fusion_layers lr_t lr_s iters momentum [noise pixel_noise]
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut experiment = presets::synthetic_experiment();
    if let Some(layers) = args.get(2) {
        experiment.teacher_config.fusion_layers =
            layers.split(',').filter(|s| !s.is_empty()).map(|s| s.to_string()).collect();
    }
    if let Some(lr) = args.get(3).and_then(|s| s.parse().ok()) {
        experiment.teacher_schedule.learning_rate = lr;
    }
    if let Some(lr) = args.get(4).and_then(|s| s.parse().ok()) {
        experiment.student_schedule.learning_rate = lr;
    }
    if let Some(iters) = args.get(5).and_then(|s| s.parse().ok()) {
        experiment.teacher_schedule.iterations = iters;
        experiment.student_schedule.iterations = iters;
        experiment.teacher_schedule.decay_interval = iters / 2;
        experiment.student_schedule.decay_interval = iters / 2;
    }
    if let Some(m) = args.get(6).and_then(|s| s.parse().ok()) {
        experiment.teacher_schedule.momentum = m;
        experiment.student_schedule.momentum = m;
    }
    if let Some(n) = args.get(7).and_then(|s| s.parse().ok()) {
        experiment.task.noise_sigma = n;
    }
    if let Some(n) = args.get(8).and_then(|s| s.parse().ok()) {
        experiment.task.pixel_noise = n;
    }
    let t0 = Instant::now();
    match presets::run_seed(&experiment, seed) {
        Ok(outcome) => {
            println!("seed {} in {:.1}s  teachers {:?}", seed, t0.elapsed().as_secs_f64(), outcome.teacher_test_accuracy);
            for run in &outcome.runs {
                println!(
                    "  {:8} train {:.3} test {:.3}  (ce {:.3} -> total {:.3})",
                    run.config, run.train_accuracy, run.test_accuracy,
                    run.reports.first().map(|r| r.ce).unwrap_or(f64::NAN),
                    run.reports.last().map(|r| r.total).unwrap_or(f64::NAN),
                );
            }
        }
        Err(e) => println!("seed {seed} FAILED after {:.1}s: {e}", t0.elapsed().as_secs_f64()),
    }
}
