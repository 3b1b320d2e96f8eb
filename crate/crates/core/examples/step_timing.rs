use std::time::Instant;
use vstain_core::synth::ImagePair;
use vstain_core::train::{build_dataset, train_step, Adam, Models, TrainConfig};

fn main() {
    let cfg = TrainConfig::default();
    let t = Instant::now();
    let (train_pairs, test_pairs) = build_dataset(&cfg).unwrap();
    println!("dataset ({} train / {} test): {:.2}s", train_pairs.len(), test_pairs.len(), t.elapsed().as_secs_f64());

    let models = Models::new(&cfg).unwrap();
    let mut opt_d = Adam::new(&models.disc_side(), cfg.lr, cfg.beta1, cfg.beta2);
    let mut opt_g = Adam::new(&models.gen_side(), cfg.lr, cfg.beta1, cfg.beta2);

    // warmup
    let batch: Vec<&ImagePair> = train_pairs[0..4].iter().collect();
    for s in 0..2 {
        train_step(&models, &batch, &mut opt_d, &mut opt_g, &cfg, s).unwrap();
    }
    let t = Instant::now();
    let n = 10;
    for s in 0..n {
        let batch: Vec<&ImagePair> = train_pairs[s * 4..s * 4 + 4].iter().collect();
        let l = train_step(&models, &batch, &mut opt_d, &mut opt_g, &cfg, s).unwrap();
        if s == n - 1 { println!("losses: {:?}", l); }
    }
    let per = t.elapsed().as_secs_f64() / n as f64;
    println!("step: {:.3}s  -> 2000 steps = {:.1} min; 18 runs = {:.1} h", per, per * 2000.0 / 60.0, per * 2000.0 * 18.0 / 3600.0);

    let t = Instant::now();
    let e = vstain_core::train::evaluate(&models, &test_pairs).unwrap();
    println!("eval over {}: {:.2}s  {:?}", test_pairs.len(), t.elapsed().as_secs_f64(), e);
}
