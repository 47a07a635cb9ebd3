use std::collections::BTreeMap;
use sakdn_core::data::{generate_synthetic, make_aligned_batches, Split};
use sakdn_core::models::*;
use sakdn_core::presets;
use sakdn_core::tensor::{Graph, Tensor};
use sakdn_core::{gsdm, losses};
use sakdn_core::gsdm::GraphNorm;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let lr = 0.02;
    let momentum = 0.9;

    let experiment = presets::synthetic_experiment();
    let mut task = experiment.task.clone();
    task.seed = 1;
    let data = generate_synthetic(&task).unwrap();
    let embeddings = presets::experiment_embeddings(&experiment, &data.class_names);
    let mut teachers = TeacherEnsemble::init(experiment.teacher_config.clone(), 2, 1).unwrap();
    train_teachers(&mut teachers, &data.train, &[], &data.class_names, &embeddings,
        &experiment.teacher_schedule, FusionMode::Joint, 1).unwrap();
    let mut student = StudentNet::init(experiment.student_config.clone(), 1).unwrap();

    let batches = make_aligned_batches(&data.train, 8, 0, Split::Train).unwrap();
    let gaf = prepare_gaf_inputs(&data.train, 16).unwrap();
    let zero_in: Vec<Tensor> = (0..2).map(|_| Tensor::zeros(&[8, 3, 16, 16])).collect();
    let t_abl = teachers.forward(&zero_in, FusionMode::Joint).unwrap();

    let mut velocity: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for step in 0..steps {
        let batch = &batches[step % batches.len()];
        let labels: Vec<usize> = batch.indices.iter().map(|&i| data.train[i].label).collect();
        let stack = |m: usize| {
            let mut d = Vec::new();
            for &i in &batch.indices { d.extend_from_slice(gaf[i][m].data()); }
            Tensor::new(vec![8, 3, 16, 16], d).unwrap()
        };
        let t_in = [stack(0), stack(1)];
        let packs = teachers.forward(&t_in, FusionMode::Joint).unwrap();
        let mut tmaps = Vec::new();
        for (pack, abl) in packs.iter().zip(&t_abl) {
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

        let mut frames_data = Vec::new();
        for &i in &batch.indices { frames_data.extend_from_slice(data.train[i].frames.data()); }
        let frames = Tensor::new(vec![8, 3, 1, 16, 16], frames_data).unwrap();
        let mut g = Graph::new();
        let fnode = g.constant(frames.clone());
        let (snodes, pnodes) = student.forward_nodes(&mut g, fnode, StudentMode::Train{step}, true).unwrap();
        let zpack = student.forward(&Tensor::zeros(frames.shape()), StudentMode::Eval).unwrap();
        let slog = g.value(snodes.logits).clone();
        let sfeat = g.value(snodes.features).clone();
        let f = gsdm::embed_predictions(&slog, &data.class_names, &embeddings).unwrap();
        let fa = gsdm::embed_predictions(&zpack.logits, &data.class_names, &embeddings).unwrap();
        let q = gsdm::graph_normalize(&sfeat, GraphNorm::PaperLiteral).unwrap();
        let qa = gsdm::graph_normalize(&zpack.features, GraphNorm::PaperLiteral).unwrap();
        let omega = gsdm::slope_metric(&q, &f, &qa, &fa, 1e-8).unwrap();
        let weights = gsdm::omega_weights(&omega).unwrap();
        let live = weights.iter().filter(|&&w| w > 0.0).count();
        let mut smaps = BTreeMap::new();
        let mut min_live_norm = f64::INFINITY;
        for (_, sl) in default_pairing() {
            let node = gsdm::saliency_node(&mut g, &omega, snodes.taps[&sl]).unwrap();
            let v = g.value(node);
            for r in 0..8 {
                let row = &v.data()[r * v.len()/8..(r+1)*v.len()/8];
                let n: f64 = row.iter().map(|x| x*x).sum::<f64>().sqrt();
                if n > 1e-12 && n < min_live_norm { min_live_norm = n; }
            }
            smaps.insert(sl.clone(), node);
        }
        let gs = gsdm::gsdm_loss_node(&mut g, &tmaps, &smaps, &default_pairing()).unwrap();
        let ce = losses::cross_entropy_node(&mut g, snodes.logits, &labels).unwrap();
        let total = g.add(ce, gs).unwrap();
        let ce_v = g.value(ce).item();
        let gs_v = g.value(gs).item();
        let grads = g.backward_scalar(total).unwrap();
        let mut sq = 0.0;
        for &n in pnodes.values() {
            if let Some(gr) = grads.get(n) { sq += gr.data().iter().map(|v| v*v).sum::<f64>(); }
        }
        println!("step {step:3}  ce {ce_v:.4}  gsdm {gs_v:.4}  grad {:.3e}  pos-w {live}/8  min-live-norm {:.2e}", sq.sqrt(), min_live_norm);

        // plain sgd with momentum, no clip
        for (name, &node) in &pnodes {
            if let Some(gr) = grads.get(node) {
                let t = student.params.get_mut(name).unwrap();
                let mut d = t.data().to_vec();
                let v = velocity.entry(name.clone()).or_insert_with(|| vec![0.0; d.len()]);
                for ((x, ge), vel) in d.iter_mut().zip(gr.data()).zip(v.iter_mut()) {
                    *vel = momentum * *vel + ge;
                    *x -= lr * *vel;
                }
                *t = Tensor::new(t.shape().to_vec(), d).unwrap();
            }
        }
    }
}
