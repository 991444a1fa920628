use bimvfi::autodiff::Graph;
use bimvfi::data::{synth_triplet, uniform_spec};
use bimvfi::kdvcf::*;
use bimvfi::net::{Model, ModelConfig};
use bimvfi::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let spec = uniform_spec(64, 64, 0.5, &mut rng);
    let item = synth_triplet::<f32>(&spec, 64, 64).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 1;
    cfg.lr_init = 2e-4;
    let mut model = Model::<f32>::new(cfg.model.clone(), cfg.seed).unwrap();
    // run a few real optimizer steps first so zero-init heads move off zero
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    if steps > 0 {
        let mut state = bimvfi::net::OptimState::default();
        let adam = bimvfi::optim::AdamW::default();
        for k in 0..steps {
            let r = train_step(&mut model, &adam, &mut state, std::slice::from_ref(&item), &cfg, k, cfg.lr_init).unwrap();
            if k % 5 == 0 { println!("warm step {k}: total {:.5}", r.total); }
        }
    }

    // one step's gradients via the public API path
    let mut g = Graph::new();
    let bind = model.params.bind(&mut g);
    let mut srng = ChaCha8Rng::seed_from_u64(1);
    let teacher = teacher_pass(&model, &mut g, &bind, &item.i0, &item.it, &item.i1, 2, &mut srng).unwrap();
    let bims = build_student_bim(&g, &teacher, 1e-6, &mut srng).unwrap();
    let student = student_pass_cached(&model, &mut g, &bind, &teacher.pyramid0, &teacher.pyramid1, &bims).unwrap();
    // pure charbonnier on the teacher cross reconstruction at level 0:
    let target = g.constant(teacher.target_frames[0].clone());
    let loss = bimvfi::losses::charbonnier_g(&mut g, teacher.cross[0].interp, target, 1e-3);
    let loss2 = bimvfi::losses::charbonnier_g(&mut g, student[0].interp, target, 1e-3);
    let total = g.add(loss, loss2);
    println!("char loss T {:.5} S {:.5}", g.value(loss).data()[0], g.value(loss2).data()[0]);
    let grads = g.backward(total);

    // check gradient flowing into the teacher pair flows and student flows:
    for (name, var) in [
        ("teacher feat_flow0 L0", teacher.pair_first[0].feat_flow0),
        ("teacher residual0 L0", teacher.pair_first[0].residual0),
        ("teacher carried0 L0", teacher.pair_first[0].carried0),
        ("cross full0 L0", teacher.cross[0].flow_full0),
        ("student feat_flow0 L0", student[0].feat_flow0),
        ("student interp L0", student[0].interp),
    ] {
        match grads.get(var) {
            Some(t) => println!("{name}: grad max {:.3e} mean|.| {:.3e}", t.abs_max(), t.map(|v| v.abs()).mean()),
            None => println!("{name}: NO GRAD"),
        }
    }
    // parameter gradient magnitudes by group
    let mut by_group: std::collections::BTreeMap<String, (f32, usize)> = Default::default();
    for (name, var) in bind.iter() {
        let group = name.split('.').next().unwrap().to_string();
        let e = by_group.entry(group).or_insert((0.0, 0));
        if let Some(t) = grads.get(var) {
            e.0 = e.0.max(t.abs_max());
        }
        e.1 += 1;
    }
    for (gname, (mx, n)) in by_group {
        println!("param group {gname:8} ({n:2} tensors): grad max {mx:.3e}");
    }
    let _ = &mut model;
}
