// Is the photometric pull on the flow field pointing toward ground truth?
use bimvfi::autodiff::Graph;
use bimvfi::data::{synth_triplet, uniform_spec};
use bimvfi::kdvcf::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let spec = uniform_spec(64, 64, 0.5, &mut rng);
    let item = synth_triplet::<f64>(&spec, 64, 64).unwrap();
    let gt = item.gt.as_ref().unwrap();
    let cfg = TrainConfig::default();
    let model = bimvfi::net::Model::<f64>::new(cfg.model.clone(), 0).unwrap();

    let mut g = Graph::new();
    let bind = model.params.bind(&mut g);
    let mut srng = ChaCha8Rng::seed_from_u64(5);
    let teacher = teacher_pass(&model, &mut g, &bind, &item.i0, &item.it, &item.i1, 2, &mut srng).unwrap();
    let target = g.constant(teacher.target_frames[0].clone());
    let loss = bimvfi::losses::charbonnier_g(&mut g, teacher.cross[0].interp, target, 1e-6);
    println!("char at zero flows: {:.6}", g.value(loss).data()[0]);
    let grads = g.backward(loss);

    // full-res cross flow gradient vs (GT - 0)
    for (name, var, gtf) in [
        ("full0", teacher.cross[0].flow_full0, &gt.flow_t0),
        ("full1", teacher.cross[0].flow_full1, &gt.flow_t1),
    ] {
        let gr = grads.get(var).expect("grad");
        let (_, h, w) = gr.dims3();
        let hw = h * w;
        let mut dot = 0.0; let mut gnorm = 0.0; let mut dnorm = 0.0;
        let mut obj_dot = 0.0; let mut obj_gnorm = 0.0; let mut obj_dnorm = 0.0;
        for y in 0..h { for x in 0..w {
            let (gu, gv) = gtf.get(x, y);
            let pu = -gr.data()[y*w+x];
            let pv = -gr.data()[hw+y*w+x];
            dot += pu*gu + pv*gv; gnorm += pu*pu + pv*pv; dnorm += gu*gu + gv*gv;
            if gu != 0.0 || gv != 0.0 {
                obj_dot += pu*gu + pv*gv; obj_gnorm += pu*pu+pv*pv; obj_dnorm += gu*gu+gv*gv;
            }
        }}
        println!("{name}: cos(all) {:.3} cos(obj) {:.3}  |g| {:.3e}", 
            dot/(gnorm.sqrt()*dnorm.sqrt()+1e-30), obj_dot/(obj_gnorm.sqrt()*obj_dnorm.sqrt()+1e-30), gnorm.sqrt());
    }
    // feat-res flow gradients (the ones proj actually produces)
    for (name, var) in [("feat0 pairA", teacher.pair_first[0].feat_flow0), ("feat1 pairB", teacher.pair_second[0].feat_flow1)] {
        let gr = grads.get(var).expect("grad");
        let (_, h, w) = gr.dims3();
        let hw = h*w;
        // downsample GT by averaging 4x4 blocks, scale 1/4
        let gtf = if name.contains("feat0") { &gt.flow_t0 } else { &gt.flow_t1 };
        let mut dot = 0.0; let mut gn = 0.0; let mut dn = 0.0;
        for y in 0..h { for x in 0..w {
            let mut au = 0.0; let mut av = 0.0;
            for dy in 0..4 { for dx in 0..4 {
                let (u, v) = gtf.get(x*4+dx, y*4+dy);
                au += u/16.0/4.0; av += v/16.0/4.0;
            }}
            let pu = -gr.data()[y*w+x];
            let pv = -gr.data()[hw+y*w+x];
            dot += pu*au + pv*av; gn += pu*pu+pv*pv; dn += au*au+av*av;
        }}
        println!("{name}: cos {:.3} |g| {:.3e}", dot/(gn.sqrt()*dn.sqrt()+1e-30), gn.sqrt());
    }
}
