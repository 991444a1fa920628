use bimvfi::data::{synth_triplet, uniform_spec};
use bimvfi::kdvcf::{interpolate_uniform, TrainConfig, Trainer, TripletBatch};
use bimvfi::metrics::{epe, psnr};
use bimvfi::motionfield::FlowField;
use bimvfi::net::Model;
use bimvfi::autodiff::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn eval_student(model: &Model<f32>, data: &[TripletBatch<f32>], levels: usize) -> (f64, f64) {
    let mut psnr_acc = 0.0;
    for item in data {
        let out = interpolate_uniform(model, &item.i0, &item.i1, item.t, levels).unwrap();
        psnr_acc += psnr(&out.image, &item.it).unwrap();
    }
    // teacher-flow EPE at finest level
    let mut epe_acc = 0.0;
    let mut obj_epe_acc = 0.0;
    for item in data {
        let mut g = Graph::new();
        let bind = model.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let teacher = bimvfi::kdvcf::teacher_pass(model, &mut g, &bind, &item.i0, &item.it, &item.i1, levels, &mut rng).unwrap();
        let gt = item.gt.as_ref().unwrap();
        let est0 = FlowField::from_tensor(g.value(teacher.cross[0].flow_full0).clone()).unwrap();
        let est1 = FlowField::from_tensor(g.value(teacher.cross[0].flow_full1).clone()).unwrap();
        let e0 = epe(&est0, &gt.flow_t0, Some(&gt.valid)).unwrap();
        let e1 = epe(&est1, &gt.flow_t1, Some(&gt.valid)).unwrap();
        epe_acc += 0.5 * (e0 + e1);
        // object-core mask: valid AND moving
        let (_, h, w) = gt.valid.dims3();
        let mut obj = bimvfi::Tensor::<f32>::zeros(&[1, h, w]);
        for y in 0..h { for x in 0..w {
            let (u, v) = gt.flow_t0.get(x, y);
            if gt.valid.at3(0,y,x) > 0.5 && (u != 0.0 || v != 0.0) { obj.set3(0,y,x,1.0); }
        }}
        let oe0 = epe(&est0, &gt.flow_t0, Some(&obj)).unwrap();
        let oe1 = epe(&est1, &gt.flow_t1, Some(&obj)).unwrap();
        obj_epe_acc += 0.5 * (oe0 + oe1);
    }
    println!("    object-EPE {:.3} px", obj_epe_acc / data.len() as f64);
    (psnr_acc / data.len() as f64, epe_acc / data.len() as f64)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(300);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2e-4);

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
    let mut tr = Trainer::<f32>::new(cfg).unwrap();
    let t0 = Instant::now();
    for s in 0..steps {
        let r = tr.run_step(&dataset).unwrap();
        if s % 50 == 0 || s + 1 == steps {
            println!("step {s}: total {:.5} char_s {:.5} distill {:.6} reg {:.6}",
                r.total, r.term("char_student").unwrap(), r.term("distill").unwrap(), r.term("reg").unwrap());
        }
        if (s + 1) % 100 == 0 {
            let (p, e) = eval_student(&tr.model, &dataset[..6.min(dataset.len())], 2);
            println!("  [eval@{}] psnr {:.2} dB, teacher EPE {:.3} px ({:.1}s elapsed)", s + 1, p, e, t0.elapsed().as_secs_f64());
        }
    }
    let (p, e) = eval_student(&tr.model, &dataset, 2);
    println!("FINAL: psnr {:.2} dB, teacher EPE {:.3} px, wall {:.1} min", p, e, t0.elapsed().as_secs_f64() / 60.0);
}
