use sakdn_core::data::generate_synthetic;
use sakdn_core::embeddings::pseudo_embed;
use sakdn_core::models::*;
use sakdn_core::presets;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let layers = args.get(1).cloned().unwrap_or_default();
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(600);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.02);

    let mut experiment = presets::synthetic_experiment();
    experiment.teacher_config.fusion_layers =
        layers.split(',').filter(|s| !s.is_empty()).map(|s| s.to_string()).collect();
    experiment.teacher_schedule.iterations = iters;
    experiment.teacher_schedule.decay_interval = iters / 2;
    experiment.teacher_schedule.learning_rate = lr;
    let mut task = experiment.task.clone();
    task.seed = 1;
    let data = generate_synthetic(&task).unwrap();
    let embeddings = presets::experiment_embeddings(&experiment, &data.class_names);
    let mut ensemble =
        TeacherEnsemble::init(experiment.teacher_config.clone(), task.modalities, 1).unwrap();
    match train_teachers(
        &mut ensemble, &data.train, &data.test, &data.class_names, &embeddings,
        &experiment.teacher_schedule, FusionMode::Joint, 1,
    ) {
        Ok(report) => {
            let n = report.reports.len();
            print!("fusion [{layers}] lr {lr} it {iters}: ");
            for i in [0, n / 2, n - 1] {
                print!("ce@{} {:.3}  ", report.reports[i].step, report.reports[i].ce);
            }
            println!("train {:?} test {:?}", report.per_modality_train_accuracy, report.per_modality_test_accuracy);
        }
        Err(e) => println!("fusion [{layers}] lr {lr}: FAILED {e}"),
    }
}
