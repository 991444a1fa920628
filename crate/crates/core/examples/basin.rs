// Photometric landscape probe: charbonnier of the ideal blend as flows move
// from zero toward ground truth.
use bimvfi::data::{synth_triplet, uniform_spec};
use bimvfi::losses::charbonnier_loss;
use bimvfi::motionfield::{backward_warp, FlowField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for item_idx in 0..3 {
        let t = [0.5, 0.25, 0.625][item_idx];
        let spec = uniform_spec(64, 64, t, &mut rng);
        let trip = synth_triplet::<f64>(&spec, 64, 64).unwrap();
        let gt = trip.gt.as_ref().unwrap();
        print!("item {item_idx} (t={t}): ");
        for k in 0..=6 {
            let alpha = k as f64 / 4.0; // 0 .. 1.5
            let f0 = FlowField::from_tensor(gt.flow_t0.tensor().scale(alpha)).unwrap();
            let f1 = FlowField::from_tensor(gt.flow_t1.tensor().scale(alpha)).unwrap();
            let w0 = backward_warp(&trip.i0, &f0).unwrap();
            let w1 = backward_warp(&trip.i1, &f1).unwrap();
            let blend = w0.zip_map(&w1, |a, b| 0.5 * (a + b)).unwrap();
            let l = charbonnier_loss(&blend, &trip.it, 1e-6).unwrap();
            print!("a={alpha:.2}: {l:.5}  ");
        }
        println!();
    }
}
