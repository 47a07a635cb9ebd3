use std::collections::BTreeMap;
use sakdn_core::data::{generate_synthetic, make_aligned_batches, Split};
use sakdn_core::models::*;
use sakdn_core::presets;
use sakdn_core::tensor::{Graph, Tensor};
use sakdn_core::{gsdm, losses};
use sakdn_core::gsdm::GraphNorm;
use sakdn_core::losses::LossWeights;

// Print global grad norm of each loss component at init.
fn main() {
    let experiment = presets::synthetic_experiment();
    let mut task = experiment.task.clone();
    task.seed = 1;
    let data = generate_synthetic(&task).unwrap();
    let embeddings = presets::experiment_embeddings(&experiment, &data.class_names);
    let mut teachers = TeacherEnsemble::init(experiment.teacher_config.clone(), 2, 1).unwrap();
    train_teachers(&mut teachers, &data.train, &[], &data.class_names, &embeddings,
        &experiment.teacher_schedule, FusionMode::Joint, 1).unwrap();
    let student = StudentNet::init(experiment.student_config.clone(), 1).unwrap();

    let batches = make_aligned_batches(&data.train, 8, 0, Split::Train).unwrap();
    let gaf = prepare_gaf_inputs(&data.train, 16).unwrap();

    for which in ["ce", "st", "gsdm", "sp"] {
        for bi in 0..3usize {
            let batch = &batches[bi];
            let labels: Vec<usize> = batch.indices.iter().map(|&i| data.train[i].label).collect();
            let stack = |m: usize| {
                let mut d = Vec::new();
                for &i in &batch.indices { d.extend_from_slice(gaf[i][m].data()); }
                Tensor::new(vec![8, 3, 16, 16], d).unwrap()
            };
            let t_in = [stack(0), stack(1)];
            let packs = teachers.forward(&t_in, FusionMode::Joint).unwrap();
            let zero_in: Vec<Tensor> = (0..2).map(|_| Tensor::zeros(&[8, 3, 16, 16])).collect();
            let ablated = teachers.forward(&zero_in, FusionMode::Joint).unwrap();

            let mut frames_data = Vec::new();
            for &i in &batch.indices { frames_data.extend_from_slice(data.train[i].frames.data()); }
            let frames = Tensor::new(vec![8, 3, 1, 16, 16], frames_data).unwrap();
            let mut g = Graph::new();
            let fnode = g.constant(frames.clone());
            let (snodes, pnodes) = student.forward_nodes(&mut g, fnode, StudentMode::Train{step:bi}, true).unwrap();

            let loss = match which {
                "ce" => losses::cross_entropy_node(&mut g, snodes.logits, &labels).unwrap(),
                "st" => {
                    let tl: Vec<Tensor> = packs.iter().map(|p| p.logits.clone()).collect();
                    losses::soft_target_kl_node(&mut g, &tl, snodes.logits, 4.0, true).unwrap()
                }
                "sp" => {
                    let t0 = g.constant(packs[0].features.clone());
                    let t1 = g.constant(packs[1].features.clone());
                    let a = losses::semantic_preserving_node(&mut g, snodes.features, t0).unwrap();
                    let b = losses::semantic_preserving_node(&mut g, snodes.features, t1).unwrap();
                    let s = g.add(a, b).unwrap();
                    g.scale(s, 0.5).unwrap()
                }
                _ => {
                    let mut tmaps = Vec::new();
                    for (pack, abl) in packs.iter().zip(&ablated) {
                        let f = gsdm::embed_predictions(&pack.logits, &data.class_names, &embeddings).unwrap();
                        let fa = gsdm::embed_predictions(&abl.logits, &data.class_names, &embeddings).unwrap();
                        let q = gsdm::graph_normalize(&pack.features, GraphNorm::PaperLiteral).unwrap();
                        let qa = gsdm::graph_normalize(&abl.features, GraphNorm::PaperLiteral).unwrap();
                        let omega = gsdm::slope_metric(&q, &f, &qa, &fa, 1e-8).unwrap();
                        let mut maps = BTreeMap::new();
                        for layer in ["t1","t2","t3","t4","t5"] {
                            maps.insert(layer.to_string(), gsdm::saliency_map(&omega, &pack.taps[layer]).unwrap());
                        }
                        tmaps.push(maps);
                    }
                    let zpack = student.forward(&Tensor::zeros(frames.shape()), StudentMode::Eval).unwrap();
                    let slog = g.value(snodes.logits).clone();
                    let sfeat = g.value(snodes.features).clone();
                    let f = gsdm::embed_predictions(&slog, &data.class_names, &embeddings).unwrap();
                    let fa = gsdm::embed_predictions(&zpack.logits, &data.class_names, &embeddings).unwrap();
                    let q = gsdm::graph_normalize(&sfeat, GraphNorm::PaperLiteral).unwrap();
                    let qa = gsdm::graph_normalize(&zpack.features, GraphNorm::PaperLiteral).unwrap();
                    let omega = gsdm::slope_metric(&q, &f, &qa, &fa, 1e-8).unwrap();
                    let mut smaps = BTreeMap::new();
                    for (_, sl) in default_pairing() {
                        smaps.insert(sl.clone(), gsdm::saliency_node(&mut g, &omega, snodes.taps[&sl]).unwrap());
                    }
                    gsdm::gsdm_loss_node(&mut g, &tmaps, &smaps, &default_pairing()).unwrap()
                }
            };
            let value = g.value(loss).item();
            let grads = g.backward_scalar(loss).unwrap();
            let mut sq = 0.0;
            for &n in pnodes.values() {
                if let Some(gr) = grads.get(n) { sq += gr.data().iter().map(|v| v*v).sum::<f64>(); }
            }
            // weighted norms: full total uses alpha=0.1, beta=1, gamma=1
            let w: f64 = match which { "st" => 0.1, _ => 1.0 };
            println!("{which} batch{bi}: value {:.3}  grad-norm {:.3e}  weighted {:.3e}", value, sq.sqrt(), w * sq.sqrt());
        }
    }

    let _ = LossWeights::default();
}
