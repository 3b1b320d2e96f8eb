use std::time::Instant;
use vstain_core::detector::{fit_affine, warp};
use vstain_core::losses::{loss_perc, loss_kp};
use vstain_core::train::{build_dataset, Models, TrainConfig};

fn time<R>(label: &str, n: usize, mut f: impl FnMut() -> R) -> R {
    let mut out = None;
    let t = Instant::now();
    for _ in 0..n {
        out = Some(f());
    }
    println!("{label}: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / n as f64);
    out.unwrap()
}

fn main() {
    let cfg = TrainConfig::default();
    let (train_pairs, _) = build_dataset(&cfg).unwrap();
    let models = Models::new(&cfg).unwrap();
    let pair = &train_pairs[0];

    let kps = time("detect fwd", 10, || models.detector.detect(&pair.source).unwrap());
    let kpd = models.detector.detect(&pair.target).unwrap();
    let fake = time("generate fwd", 10, || models.generator.generate(&pair.source, &kps).unwrap());
    time("discriminate fwd", 10, || models.discriminator.discriminate(&fake, &kpd).unwrap());
    let aff = time("fit_affine", 10, || fit_affine(&kps, &kpd, 1e-6).unwrap());
    time("warp", 10, || warp(&pair.source, &aff).unwrap());
    time("loss_perc fwd", 10, || loss_perc(&fake, &pair.target, &models.feat).unwrap());

    // full generator-side backward
    time("gen-side fwd+bwd", 5, || {
        let kh = models.detector.detect(&pair.source).unwrap();
        let ki = models.detector.detect(&pair.target).unwrap();
        let fake = models.generator.generate(&pair.source, &kh).unwrap();
        let d = models.discriminator.discriminate(&fake, &ki.detach()).unwrap();
        let ladv = vstain_core::losses::loss_adv_g(&d).unwrap();
        let lperc = loss_perc(&fake, &pair.target, &models.feat).unwrap();
        let a = fit_affine(&kh, &ki, 1e-6).unwrap();
        let w = warp(&pair.source, &a).unwrap();
        let kw = a.apply_kps(&kh).unwrap();
        let gw = models.generator.generate(&w, &kw).unwrap();
        let lkp = loss_kp(&gw, &pair.target).unwrap();
        let total = vstain_core::losses::total_loss(&ladv, &lperc, &lkp, &cfg.loss_weights()).unwrap();
        total.backward().unwrap();
        models.param_set().unwrap().zero_grads();
    });
    // discriminator-side fwd+bwd
    time("disc-side fwd+bwd", 5, || {
        let ki = models.detector.detect(&pair.target).unwrap().detach();
        let dr = models.discriminator.discriminate(&pair.target, &ki).unwrap();
        let df = models.discriminator.discriminate(&fake.detach(), &ki).unwrap();
        let l = vstain_core::losses::loss_adv_d(&dr, &df).unwrap();
        l.backward().unwrap();
        models.param_set().unwrap().zero_grads();
    });
}
