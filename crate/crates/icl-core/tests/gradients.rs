use icl_core::designs::{DesignSpec, Prompt};
use icl_core::models::{AttnParams, LoraParams, ModelParams, SsmParams};
use icl_core::numerics::{Matrix, RngStream};
use icl_core::training::{batch_loss_and_grad_flat, LossMode};

fn random(rng: &mut RngStream, r: usize, c: usize) -> Matrix {
    Matrix::new(r, c, rng.normal_vec(r * c).iter().map(|v| 0.5 * v).collect()).unwrap()
}

fn models(d: usize, n: usize, rng: &mut RngStream) -> Vec<ModelParams> {
    let big = d + 1;
    let attn = AttnParams::new(random(rng, big, big), random(rng, big, big), random(rng, big, big), rng.normal_vec(big)).unwrap();
    let low = AttnParams::new(random(rng, big, 2), random(rng, big, 2), random(rng, big, big), rng.normal_vec(big)).unwrap();
    let ssm = SsmParams::new(
        random(rng, big, big),
        random(rng, big, big),
        random(rng, big, big),
        rng.normal_vec(big),
        rng.normal_vec(n + 1),
    )
    .unwrap();
    let lora = LoraParams::new(random(rng, big, 2), random(rng, big, 2)).unwrap();
    vec![
        ModelParams::Attn(attn.clone()),
        ModelParams::Attn(low),
        ModelParams::Ssm(ssm),
        ModelParams::Lora { base: attn, lora },
    ]
}

fn check(model: &ModelParams, batch: &[Prompt], mode: LossMode) {
    let (_, grad) = batch_loss_and_grad_flat(model, batch, mode).unwrap();
    let theta = model.trainable();
    let h = 1e-5;
    for i in 0..theta.len() {
        let mut plus = model.clone();
        let mut minus = model.clone();
        let mut tp = theta.clone();
        tp[i] += h;
        plus.set_trainable(&tp);
        let mut tm = theta.clone();
        tm[i] -= h;
        minus.set_trainable(&tm);
        let lp = batch_loss_and_grad_flat(&plus, batch, mode).unwrap().0;
        let lm = batch_loss_and_grad_flat(&minus, batch, mode).unwrap().0;
        let fd = (lp - lm) / (2.0 * h);
        let tol = 1e-5 * grad[i].abs().max(fd.abs()).max(1.0);
        assert!((fd - grad[i]).abs() <= tol, "coordinate {i}: analytic {} vs central {fd} ({mode:?})", grad[i]);
    }
}

#[test]
fn central_differences_all_models() {
    let (d, n) = (3, 4);
    let mut rng = RngStream::new(2024, 1);
    let spec = DesignSpec::isotropic(d, n, 0.2).unwrap();
    let batch: Vec<Prompt> = (0..8).map(|_| spec.sample(&mut rng)).collect();
    for model in models(d, n, &mut rng) {
        check(&model, &batch, LossMode::LastPosition);
        check(&model, &batch, LossMode::AveragedPositions);
    }
}

#[test]
fn central_differences_other_designs() {
    let mut rng = RngStream::new(7, 7);
    for spec in [DesignSpec::rag(2, 3, 0.5, 0.0).unwrap(), DesignSpec::evolving(2, 3).unwrap()] {
        let batch: Vec<Prompt> = (0..4).map(|_| spec.sample(&mut rng)).collect();
        for model in models(2, 3, &mut rng) {
            check(&model, &batch, LossMode::AveragedPositions);
        }
    }
}
