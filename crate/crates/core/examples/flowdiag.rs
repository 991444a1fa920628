use bimvfi::autodiff::Graph;
use bimvfi::data::{synth_triplet, uniform_spec};
use bimvfi::kdvcf::*;
use bimvfi::motionfield::FlowField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let lr: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut dataset = Vec::new();
    for i in 0..20 {
        let t = (i % 7 + 1) as f64 / 8.0;
        let spec = uniform_spec(64, 64, t, &mut rng);
        dataset.push(synth_triplet::<f32>(&spec, 64, 64).unwrap());
    }
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 2;
    cfg.steps = steps;
    cfg.lr_init = lr;
    cfg.seed = 17;
    // rebalance: weaken the zero-pulling terms
    cfg.weights.lambda_smooth = std::env::var("LS").map(|v| v.parse().unwrap()).unwrap_or(0.01);
    cfg.weights.lambda_reg = std::env::var("LR").map(|v| v.parse().unwrap()).unwrap_or(0.001);
    cfg.weights.lambda_distill = std::env::var("LD").map(|v| v.parse().unwrap()).unwrap_or(0.002);
    cfg.augment = std::env::var("AUG").map(|v| v == "1").unwrap_or(true);
    cfg.batch_size = std::env::var("BS").map(|v| v.parse().unwrap()).unwrap_or(2);
    cfg.weights.lambda_census_teacher = std::env::var("LC").map(|v| v.parse().unwrap()).unwrap_or(1.0);
    cfg.weights.lambda_census_student = cfg.weights.lambda_census_teacher;
    let mut tr = Trainer::<f32>::new(cfg).unwrap();
    for s in 0..steps {
        let r = tr.run_step(&dataset).unwrap();
        if s % 25 == 0 || s + 1 == steps {
            let proj = tr.model.params.get("bimfn.proj.w");
            let projb = tr.model.params.get("bimfn.proj.b");
            // measure teacher flow magnitude on object for item 0
            let item = &dataset[0];
            let gt = item.gt.as_ref().unwrap();
            let mut g = Graph::new();
            let bind = tr.model.params.bind(&mut g);
            let mut r2 = ChaCha8Rng::seed_from_u64(7);
            let teacher = teacher_pass(&tr.model, &mut g, &bind, &item.i0, &item.it, &item.i1, 2, &mut r2).unwrap();
            let est0 = FlowField::from_tensor(g.value(teacher.cross[0].flow_full0).clone()).unwrap();
            let mut mag = 0.0; let mut n = 0.0;
            let mut gtmag = 0.0;
            for y in 0..64 { for x in 0..64 {
                let (gu, gv) = gt.flow_t0.get(x, y);
                if gu != 0.0 || gv != 0.0 {
                    let (u, v) = est0.get(x, y);
                    mag += (u*u + v*v).sqrt(); gtmag += (gu*gu+gv*gv).sqrt(); n += 1.0;
                }
            }}
            println!("step {s}: total {:.4} char_t {:.5} |proj.w| {:.4} |proj.b| {:.4} obj |est| {:.3} vs |gt| {:.3}",
                r.total, r.term("char_teacher").unwrap(), proj.abs_max(), projb.abs_max(), mag/n, gtmag/n);
        }
    }
}
