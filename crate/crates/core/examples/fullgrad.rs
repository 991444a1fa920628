// Full-pyramid gradient check: analytic vs central finite differences, f64.
use bimvfi::autodiff::Graph;
use bimvfi::kdvcf::*;
use bimvfi::net::{Model, ModelConfig, DescriptorMode};
use bimvfi::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Loss with stop-gradient quantities frozen to reference values, so finite
/// differences probe exactly the function the analytic gradient describes.
fn loss_for(
    model: &Model<f64>,
    item: &TripletBatch<f64>,
    cfg: &TrainConfig,
    frozen_bims: &[bimvfi::motionfield::BimField<f64>],
    frozen_targets: &(Tensor<f64>, Tensor<f64>),
) -> f64 {
    let mut g = Graph::new();
    let bind = model.params.bind(&mut g);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let teacher = teacher_pass(model, &mut g, &bind, &item.i0, &item.it, &item.i1, cfg.levels, &mut rng).unwrap();
    let student = student_pass_cached(model, &mut g, &bind, &teacher.pyramid0, &teacher.pyramid1, frozen_bims).unwrap();
    let target0 = g.constant(teacher.target_frames[0].clone());
    let l1 = bimvfi::losses::charbonnier_g(&mut g, teacher.cross[0].interp, target0, 1e-3);
    let l2 = bimvfi::losses::charbonnier_g(&mut g, student[0].interp, target0, 1e-3);
    let s1 = bimvfi::losses::smoothness_g(&mut g, teacher.cross[0].flow_full0, &teacher.target_frames[0], 150.0);
    let r1 = bimvfi::losses::zero_flow_reg_g(&mut g, teacher.pair_first[0].flow_full1);
    let t0 = g.constant(frozen_targets.0.clone());
    let t1 = g.constant(frozen_targets.1.clone());
    let d = bimvfi::losses::distillation_g(&mut g, (student[0].flow_full0, student[0].flow_full1), (t0, t1));
    let a = g.add(l1, l2);
    let b = g.add(s1, r1);
    let c = g.add(a, b);
    let total = g.add(c, d);
    g.value(total).data()[0]
}

fn main() {
    let mut cfg = TrainConfig::default();
    cfg.levels = 2;
    cfg.model = ModelConfig { base_channels: 4, cost_radius: 1, trunk_channels: 8, levels_train: 2, descriptor: DescriptorMode::Bim };
    let mut model = Model::<f64>::new(cfg.model.clone(), 3).unwrap();
    // randomize all params (incl. zero-init heads) so gradients are generic
    let mut prng = ChaCha8Rng::seed_from_u64(99);
    let names: Vec<String> = model.params.names().map(|s| s.to_string()).collect();
    for n in &names {
        let t = model.params.get_mut(n);
        let r = Tensor::<f64>::rand_normal(t.shape(), 0.05, &mut prng);
        *t = t.add(&r).unwrap();
    }
    let mut irng = ChaCha8Rng::seed_from_u64(7);
    let item = TripletBatch {
        i0: Tensor::rand_uniform(&[3, 8, 8], 0.1, 0.9, &mut irng),
        it: Tensor::rand_uniform(&[3, 8, 8], 0.1, 0.9, &mut irng),
        i1: Tensor::rand_uniform(&[3, 8, 8], 0.1, 0.9, &mut irng),
        t: 0.5, gt: None,
    };
    // capture frozen stop-gradient quantities at the base point
    let (bims0, targets0) = {
        let mut g = Graph::new();
        let bind = model.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let teacher = teacher_pass(&model, &mut g, &bind, &item.i0, &item.it, &item.i1, cfg.levels, &mut rng).unwrap();
        let bims = build_student_bim(&g, &teacher, 1e-6, &mut rng).unwrap();
        let t0 = g.value(teacher.cross[0].flow_full0).clone();
        let t1 = g.value(teacher.cross[0].flow_full1).clone();
        (bims, (t0, t1))
    };
    // analytic grads
    let (analytic, base) = {
        let mut g = Graph::new();
        let bind = model.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let teacher = teacher_pass(&model, &mut g, &bind, &item.i0, &item.it, &item.i1, cfg.levels, &mut rng).unwrap();
        let student = student_pass_cached(&model, &mut g, &bind, &teacher.pyramid0, &teacher.pyramid1, &bims0).unwrap();
        let target0 = g.constant(teacher.target_frames[0].clone());
        let l1 = bimvfi::losses::charbonnier_g(&mut g, teacher.cross[0].interp, target0, 1e-3);
        let l2 = bimvfi::losses::charbonnier_g(&mut g, student[0].interp, target0, 1e-3);
        let s1 = bimvfi::losses::smoothness_g(&mut g, teacher.cross[0].flow_full0, &teacher.target_frames[0], 150.0);
        let r1 = bimvfi::losses::zero_flow_reg_g(&mut g, teacher.pair_first[0].flow_full1);
        let d = bimvfi::losses::distillation_g(&mut g, (student[0].flow_full0, student[0].flow_full1), (teacher.cross[0].flow_full0, teacher.cross[0].flow_full1));
        let a = g.add(l1, l2);
        let b = g.add(s1, r1);
        let c = g.add(a, b);
        let total = g.add(c, d);
        let mut grads = g.backward(total);
        let mut out = indexmap::IndexMap::new();
        for (name, var) in bind.iter() {
            out.insert(name.to_string(), grads.take(var));
        }
        (out, g.value(total).data()[0])
    };
    println!("loss {base:.8}");
    let eps = 1e-5;
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checked = 0;
    let mut zero_grads = Vec::new();
    for n in &names {
        let numel = model.params.get(n).numel();
        let ga = analytic.get(n).unwrap();
        if ga.is_none() {
            zero_grads.push(n.clone());
            continue;
        }
        let ga = ga.as_ref().unwrap();
        let step = (numel / 3).max(1);
        for i in (0..numel).step_by(step).take(4) {
            let orig = model.params.get(n).data()[i];
            model.params.get_mut(n).data_mut()[i] = orig + eps;
            let lp = loss_for(&model, &item, &cfg, &bims0, &targets0);
            model.params.get_mut(n).data_mut()[i] = orig - eps;
            let lm = loss_for(&model, &item, &cfg, &bims0, &targets0);
            model.params.get_mut(n).data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let a = ga.data()[i];
            let rel = (fd - a).abs() / fd.abs().max(1e-6);
            checked += 1;
            if rel > worst.0 { worst = (rel, format!("{n}[{i}] fd {fd:.4e} vs {a:.4e}")); }
        }
    }
    println!("checked {checked} entries; worst rel err: {:.3e} at {}", worst.0, worst.1);
    println!("params with NO grad: {zero_grads:?}");
}
