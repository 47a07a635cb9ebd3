use std::collections::BTreeMap;
use sakdn_core::data::{generate_synthetic, make_aligned_batches, Split};
use sakdn_core::models::*;
use sakdn_core::presets;
use sakdn_core::tensor::{Graph, Tensor};
use sakdn_core::{gsdm, losses};
use sakdn_core::gsdm::GraphNorm;

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
    let batch = &batches[0];
    let labels: Vec<usize> = batch.indices.iter().map(|&i| data.train[i].label).collect();
    let gaf = prepare_gaf_inputs(&data.train, 16).unwrap();
    let stack = |m: usize| {
        let mut d = Vec::new();
        for &i in &batch.indices { d.extend_from_slice(gaf[i][m].data()); }
        Tensor::new(vec![8, 3, 16, 16], d).unwrap()
    };
    let t_in = [stack(0), stack(1)];
    let packs = teachers.forward(&t_in, FusionMode::Joint).unwrap();
    let zero_in: Vec<Tensor> = (0..2).map(|_| Tensor::zeros(&[8, 3, 16, 16])).collect();
    let ablated = teachers.forward(&zero_in, FusionMode::Joint).unwrap();

    // teacher omegas and maps
    let mut teacher_maps = Vec::new();
    for (pack, abl) in packs.iter().zip(&ablated) {
        let f = gsdm::embed_predictions(&pack.logits, &data.class_names, &embeddings).unwrap();
        let fa = gsdm::embed_predictions(&abl.logits, &data.class_names, &embeddings).unwrap();
        let q = gsdm::graph_normalize(&pack.features, GraphNorm::PaperLiteral).unwrap();
        let qa = gsdm::graph_normalize(&abl.features, GraphNorm::PaperLiteral).unwrap();
        let omega = gsdm::slope_metric(&q, &f, &qa, &fa, 1e-8).unwrap();
        let om = omega.data().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        println!("teacher omega max |entry| {:.3e}", om);
        let mut maps = BTreeMap::new();
        for layer in ["t1","t2","t3","t4","t5"] {
            let m = gsdm::saliency_map(&omega, &pack.taps[layer]).unwrap();
            let norm: f64 = m.data().iter().map(|v| v*v).sum::<f64>().sqrt();
            println!("  teacher map {layer}: norm {:.3e}", norm);
            maps.insert(layer.to_string(), m);
        }
        teacher_maps.push(maps);
    }

    // student graph with maps
    let mut frames_data = Vec::new();
    for &i in &batch.indices { frames_data.extend_from_slice(data.train[i].frames.data()); }
    let frames = Tensor::new(vec![8, 3, 1, 16, 16], frames_data).unwrap();
    let mut g = Graph::new();
    let fnode = g.constant(frames.clone());
    let (snodes, pnodes) = student.forward_nodes(&mut g, fnode, StudentMode::Train{step:0}, true).unwrap();
    let zpack = student.forward(&Tensor::zeros(frames.shape()), StudentMode::Eval).unwrap();
    let slog = g.value(snodes.logits).clone();
    let sfeat = g.value(snodes.features).clone();
    let f = gsdm::embed_predictions(&slog, &data.class_names, &embeddings).unwrap();
    let fa = gsdm::embed_predictions(&zpack.logits, &data.class_names, &embeddings).unwrap();
    let q = gsdm::graph_normalize(&sfeat, GraphNorm::PaperLiteral).unwrap();
    let qa = gsdm::graph_normalize(&zpack.features, GraphNorm::PaperLiteral).unwrap();
    let omega = gsdm::slope_metric(&q, &f, &qa, &fa, 1e-8).unwrap();
    println!("student omega max |entry| {:.3e}  mean weights: {:?}",
        omega.data().iter().fold(0.0f64, |a, &b| a.max(b.abs())),
        gsdm::omega_weights(&omega).unwrap().iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>());
    let mut smaps = BTreeMap::new();
    for (_, sl) in default_pairing() {
        let node = gsdm::saliency_node(&mut g, &omega, snodes.taps[&sl]).unwrap();
        let norm: f64 = g.value(node).data().iter().map(|v| v*v).sum::<f64>().sqrt();
        println!("  student map {sl}: norm {:.3e}", norm);
        smaps.insert(sl, node);
    }
    let loss = gsdm::gsdm_loss_node(&mut g, &teacher_maps, &smaps, &default_pairing()).unwrap();
    println!("gsdm loss {:.4}", g.value(loss).item());
    let ce = losses::cross_entropy_node(&mut g, snodes.logits, &labels).unwrap();
    let total = g.add(loss, ce).unwrap();
    let grads = g.backward_scalar(total).unwrap();
    for (name, &node) in &pnodes {
        if let Some(gr) = grads.get(node) {
            let mx = gr.data().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            if mx > 1.0 { println!("grad {name}: max {:.3e}", mx); }
        }
    }
    println!("(grads ≤ 1 not shown)");
}
