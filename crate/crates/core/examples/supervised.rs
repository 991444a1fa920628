// Oracle probe: fit teacher flows with direct EPE supervision.
use bimvfi::autodiff::Graph;
use bimvfi::data::{synth_triplet, uniform_spec};
use bimvfi::kdvcf::*;
use bimvfi::net::{Model, OptimState};
use bimvfi::optim::AdamW;
use bimvfi::motionfield::FlowField;
use bimvfi::metrics::epe;
use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let lr: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut data = Vec::new();
    for i in 0..4 {
        let t = (i % 7 + 1) as f64 / 8.0;
        let spec = uniform_spec(64, 64, t, &mut rng);
        data.push(synth_triplet::<f32>(&spec, 64, 64).unwrap());
    }
    let cfg = TrainConfig::default();
    let mut model = Model::<f32>::new(cfg.model.clone(), 0).unwrap();
    let mut state = OptimState::default();
    let adam = AdamW::default();
    for k in 0..steps {
        let item = &data[k % data.len()];
        let gt = item.gt.as_ref().unwrap();
        let mut g = Graph::new();
        let bind = model.params.bind(&mut g);
        let mut srng = ChaCha8Rng::seed_from_u64(k as u64);
        let teacher = teacher_pass(&model, &mut g, &bind, &item.i0, &item.it, &item.i1, 2, &mut srng).unwrap();
        // supervised: L2 to GT flows at finest level full res
        let gt0 = g.constant(gt.flow_t0.tensor().clone());
        let gt1 = g.constant(gt.flow_t1.tensor().clone());
        let d0 = g.sub(teacher.cross[0].flow_full0, gt0);
        let d1 = g.sub(teacher.cross[0].flow_full1, gt1);
        let s0 = g.mul(d0, d0);
        let s1 = g.mul(d1, d1);
        let m0 = g.mean_all(s0);
        let m1 = g.mean_all(s1);
        let loss = g.add(m0, m1);
        let grads_all = g.backward(loss);
        let mut grads = IndexMap::new();
        let mut taken = g.backward(loss); let _ = grads_all;
        for (name, var) in bind.iter() {
            if let Some(gr) = taken.take(var) { grads.insert(name.to_string(), gr); }
        }
        adam.apply(&mut model.params, &mut state, &grads, lr as f32);
        if k % 25 == 0 || k + 1 == steps {
            // measure object EPE
            let item0 = &data[0];
            let gt = item0.gt.as_ref().unwrap();
            let mut g2 = Graph::new();
            let bind2 = model.params.bind(&mut g2);
            let mut r2 = ChaCha8Rng::seed_from_u64(7);
            let t2 = teacher_pass(&model, &mut g2, &bind2, &item0.i0, &item0.it, &item0.i1, 2, &mut r2).unwrap();
            let est0 = FlowField::from_tensor(g2.value(t2.cross[0].flow_full0).clone()).unwrap();
            let (_, h, w) = gt.valid.dims3();
            let mut obj = bimvfi::Tensor::<f32>::zeros(&[1, h, w]);
            for y in 0..h { for x in 0..w {
                let (u, v) = gt.flow_t0.get(x, y);
                if gt.valid.at3(0,y,x) > 0.5 && (u != 0.0 || v != 0.0) { obj.set3(0,y,x,1.0); }
            }}
            println!("step {k}: loss {:.5} obj-EPE {:.3}", g.value(loss).data()[0], epe(&est0, &gt.flow_t0, Some(&obj)).unwrap());
        }
    }
}
