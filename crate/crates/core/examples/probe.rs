use sakdn_core::data::{generate_synthetic, SyntheticTaskSpec};
use sakdn_core::embeddings::pseudo_embed;
use sakdn_core::models::*;
use sakdn_core::losses::LossWeights;
use sakdn_core::gsdm::{GraphNorm, SemanticSource};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(|s| s.as_str()).unwrap_or("teacher");
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
    let momentum: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let dropout: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let task = SyntheticTaskSpec {
        classes: 4, modalities: 2, train_per_class: 50, test_per_class: 25,
        window_len: 32, frame_count: 12, segments: 3, frame_side: 16,
        noise_sigma: 0.4, pixel_noise: args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.1), distractors: 0, phase_jitter: 1.0, seed: 1,
    };
    let data = generate_synthetic(&task).unwrap();
    let embeddings = pseudo_embed(&data.class_names, 32, 2024).unwrap();
    let schedule = TrainSchedule {
        batch_size: 8, learning_rate: lr, decay_ratio: 0.5,
        decay_interval: iters * 2 / 3, iterations: iters, momentum, clip_norm: Some(25.0),
    };

    if what == "teacher" {
        let config = TeacherConfig {
            input_channels: 3, input_side: 16, block_channels: [6, 12, 12, 24, 24],
            fc1_width: 24, embed_dim: 32, classes: 4, fusion_layers: vec![],
        };
        let mut ensemble = TeacherEnsemble::init(config, 2, 1).unwrap();
        let report = train_teachers(
            &mut ensemble, &data.train, &data.test, &data.class_names, &embeddings,
            &schedule, FusionMode::Independent, 1,
        ).unwrap();
        let n = report.reports.len();
        for i in [0, n/4, n/2, 3*n/4, n-1] {
            let r = &report.reports[i];
            println!("step {:3}  ce {:.4}  sp {:.4}", r.step, r.ce, r.semantic_preserve);
        }
        println!("train acc {:?}", report.per_modality_train_accuracy);
        println!("test  acc {:?}", report.per_modality_test_accuracy);
    } else {
        let config = StudentConfig {
            input_channels: 1, input_side: 16, block_channels: [6, 12, 12, 24, 24],
            segments: 3, relation_width: 48, embed_dim: 32, classes: 4,
            dropout, tap_frame: TapFrame::Middle,
        };
        let mut student = StudentNet::init(config, 1).unwrap();
        let teacher_config = TeacherConfig {
            input_channels: 3, input_side: 16, block_channels: [6, 12, 12, 24, 24],
            fc1_width: 24, embed_dim: 32, classes: 4, fusion_layers: vec![],
        };
        let teachers = TeacherEnsemble::init(teacher_config, 2, 1).unwrap();
        let options = StudentTrainOptions {
            weights: LossWeights::ce_only(4.0),
            pairing: default_pairing(),
            graph_norm: GraphNorm::PaperLiteral,
            semantic_source: SemanticSource::Predicted,
            t2_scaled: true,
            slope_epsilon: 1e-8,
        };
        let report = train_student(
            &mut student, &teachers, &data.train, &data.test, &data.class_names,
            &embeddings, &schedule, &options, 1,
        ).unwrap();
        let n = report.reports.len();
        for i in [0, n/4, n/2, 3*n/4, n-1] {
            let r = &report.reports[i];
            println!("step {:3}  ce {:.4}", r.step, r.ce);
        }
        println!("train acc {:.3}  test acc {:.3}", report.train_accuracy, report.test_accuracy);
    }
}
