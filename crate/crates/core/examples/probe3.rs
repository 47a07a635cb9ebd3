use sakdn_core::data::generate_synthetic;
use sakdn_core::losses::LossWeights;
use sakdn_core::models::*;
use sakdn_core::presets;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let alpha: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let beta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let gamma: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.02);

    let mut experiment = presets::synthetic_experiment();
    if let Some(d) = args.get(5).and_then(|s| s.parse().ok()) {
        experiment.student_config.dropout = d;
    }
    if let Some(n) = args.get(7).and_then(|s| s.parse().ok()) {
        experiment.task.pixel_noise = n;
    }
    let mut task = experiment.task.clone();
    task.seed = 1;
    let data = generate_synthetic(&task).unwrap();
    let embeddings = presets::experiment_embeddings(&experiment, &data.class_names);
    let mut teachers =
        TeacherEnsemble::init(experiment.teacher_config.clone(), task.modalities, 1).unwrap();
    train_teachers(
        &mut teachers, &data.train, &[], &data.class_names, &embeddings,
        &experiment.teacher_schedule, FusionMode::Joint, 1,
    ).unwrap();

    let mut student = StudentNet::init(experiment.student_config.clone(), 1).unwrap();
    let mut schedule = experiment.student_schedule.clone();
    schedule.learning_rate = lr;
    if let Some(iters) = args.get(9).and_then(|s| s.parse().ok()) {
        schedule.iterations = iters;
        schedule.decay_interval = iters / 2;
    }
    let mut options = StudentTrainOptions {
        weights: LossWeights { alpha, beta, gamma, temperature: 4.0 },
        ..Default::default()
    };
    if args.get(6).map(|s| s == "gt").unwrap_or(false) {
        options.semantic_source = sakdn_core::gsdm::SemanticSource::GroundTruth;
    }
    if let Some(pairs) = args.get(8).filter(|p| p.contains(':')) {
        options.pairing = pairs
            .split(',')
            .map(|p| {
                let (a, b) = p.split_once(':').unwrap();
                (a.to_string(), b.to_string())
            })
            .collect();
    }
    let report = train_student(
        &mut student, &teachers, &data.train, &data.test, &data.class_names,
        &embeddings, &schedule, &options, 1,
    ).unwrap();
    println!("alpha {alpha} beta {beta} gamma {gamma} lr {lr}");
    let n = report.reports.len();
    for i in (0..n).step_by(n / 12).chain([n - 1]) {
        let r = &report.reports[i];
        println!(
            "  step {:3}  ce {:.3}  st {:.3}  gsdm {:.3}  sp {:.3}  total {:.3}",
            r.step, r.ce, r.soft_target, r.gsdm, r.semantic_preserve, r.total
        );
    }
    println!("  train {:.3} test {:.3}", report.train_accuracy, report.test_accuracy);
}
