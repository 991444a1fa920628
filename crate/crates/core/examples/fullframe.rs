// Probe: train on full-frame uniform translation (crops of a big canvas).
use bimvfi::autodiff::Graph;
use bimvfi::kdvcf::*;
use bimvfi::motionfield::{BimField, FlowField};
use bimvfi::{Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lattice(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    // same hash trick as the generator
    fn h(seed: u64, ix: i64, iy: i64) -> f64 {
        let mut v = seed ^ (ix as u64).wrapping_mul(0x9E3779B97F4A7C15) ^ (iy as u64).wrapping_mul(0xC2B2AE3D27D4EB4F);
        v ^= v >> 33; v = v.wrapping_mul(0xFF51AFD7ED558CCD); v ^= v >> 33;
        (v >> 11) as f64 / (1u64 << 53) as f64
    }
    let gx = x / cell; let gy = y / cell;
    let x0 = gx.floor(); let y0 = gy.floor();
    let fx = gx - x0; let fy = gy - y0;
    let sx = fx*fx*(3.0-2.0*fx); let sy = fy*fy*(3.0-2.0*fy);
    let (x0, y0) = (x0 as i64, y0 as i64);
    h(seed,x0,y0)*(1.0-sx)*(1.0-sy) + h(seed,x0+1,y0)*sx*(1.0-sy) + h(seed,x0,y0+1)*(1.0-sx)*sy + h(seed,x0+1,y0+1)*sx*sy
}

fn frame(seed: u64, ox: f64, oy: f64, size: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[3, size, size]);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let gx = x as f64 + ox; let gy = y as f64 + oy;
                let v = 0.7*lattice(seed + c as u64, gx, gy, 16.0) + 0.3*lattice(seed ^ 0xA5A5 ^ c as u64, gx, gy, 7.0);
                t.set3(c, y, x, (0.08 + 0.84*v) as f32);
            }
        }
    }
    t
}

fn main() {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let lr: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut data = Vec::new();
    for i in 0..12 {
        let t = (i % 7 + 1) as f64 / 8.0;
        let dx: f64 = rng.gen_range(-6.0..6.0);
        let dy: f64 = rng.gen_range(-6.0..6.0);
        let seed: u64 = rng.gen();
        let i0 = frame(seed, 0.0, 0.0, 64);
        let it = frame(seed, t*dx, t*dy, 64);
        let i1 = frame(seed, dx, dy, 64);
        // GT flows at It: V_t0 = -(t)(dx,dy)?? careful: It(x) = canvas(x + t*d); I0(x) = canvas(x).
        // It pixel x corresponds to I0 pixel x + t*d: V_t0 = +t*d... wait out(x)=src(x+u): warp(I0,V)(x)=I0(x+u)=canvas(x+u); want canvas(x+t*d) -> u = t*d.
        let f0 = FlowField::from_tensor(Tensor::new(&[2,64,64], {
            let mut v = vec![0f32; 2*64*64];
            v[..64*64].fill((t*dx) as f32); v[64*64..].fill((t*dy) as f32); v
        }).unwrap()).unwrap();
        let f1 = FlowField::from_tensor(Tensor::new(&[2,64,64], {
            let mut v = vec![0f32; 2*64*64];
            v[..64*64].fill(-((1.0-t)*dx) as f32); v[64*64..].fill(-((1.0-t)*dy) as f32); v
        }).unwrap()).unwrap();
        // hmm: I1(x) = canvas(x + d)?? I1 = frame(seed, dx, dy) -> I1(x) = canvas(x + d). It corresponds at x: canvas(x+t*d) = I1(x + t*d - d): V_t1 = (t-1)*d ✓ as set.
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        let bim = bimvfi::motionfield::bim_from_flows(&f0, &f1, 1e-6, &mut rng2).unwrap();
        data.push(TripletBatch { i0, it, i1, t, gt: Some(GroundTruth { flow_t0: f0, flow_t1: f1, bim, valid: Tensor::full(&[1,64,64], 1.0) }) });
    }
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 2; cfg.steps = steps; cfg.lr_init = lr; cfg.seed = 3;
    cfg.weights.lambda_census_teacher = 0.3;
    cfg.weights.lambda_census_student = 0.3;
    let mut tr = Trainer::<f32>::new(cfg).unwrap();
    for s in 0..steps {
        let r = tr.run_step(&data).unwrap();
        if s % 25 == 0 || s + 1 == steps {
            let item = &data[0];
            let gt = item.gt.as_ref().unwrap();
            let mut g = Graph::new();
            let bind = tr.model.params.bind(&mut g);
            let mut r2 = ChaCha8Rng::seed_from_u64(7);
            let teacher = teacher_pass(&tr.model, &mut g, &bind, &item.i0, &item.it, &item.i1, 2, &mut r2).unwrap();
            let est0 = FlowField::from_tensor(g.value(teacher.cross[0].flow_full0).clone()).unwrap();
            let e = bimvfi::metrics::epe(&est0, &gt.flow_t0, None).unwrap();
            println!("step {s}: total {:.4} char_t {:.5} item0 EPE {:.3} (gt |v0| {:.2})", r.total, r.term("char_teacher").unwrap(), e, {let (u,v)=gt.flow_t0.get(0,0); ((u*u+v*v) as f64).sqrt()});
        }
    }
    let _ = BimField::new(Tensor::<f32>::zeros(&[1,1]), Tensor::zeros(&[1,1]));
}
