use proptest::prelude::*;
use protseg::losses::{ce_loss, dice_loss, step1_loss, step2_loss, step3_loss, DiceForm, LossConfig};
use protseg::seed::rng_from;
use protseg::tensornet::Shape;
use protseg::{Graph, Tensor};
use rand::Rng;

const TOL: f64 = 1e-6;

fn channel(t: &Tensor<f64>, c: usize) -> Vec<f64> {
    let s = t.shape();
    let mut out = Vec::new();
    for n in 0..s.n {
        out.extend_from_slice(t.volume(n, c).data());
    }
    out
}

fn naive_dice(p: &[f64], t: &[f64], delta: f64, squared: bool) -> f64 {
    let mut inter = 0.0;
    let mut den = 0.0;
    for i in 0..p.len() {
        inter += p[i] * t[i];
        den += if squared { p[i] * p[i] + t[i] * t[i] } else { p[i] + t[i] };
    }
    1.0 - (2.0 * inter + delta) / (den + delta)
}

fn naive_ce(p: &[f64], t: &[f64], eps: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let ts = t[i] * (1.0 - eps) + eps / 2.0;
        let q = p[i].clamp(1e-12, 1.0 - f64::EPSILON);
        s += -(ts * q.ln() + (1.0 - ts) * (1.0 - q).ln());
    }
    s / p.len() as f64
}

fn random_case(seed: u64, c: usize) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = rng_from(seed);
    let shape = Shape::new(rng.random_range(1..3), c, rng.random_range(1..5), rng.random_range(1..5), rng.random_range(2..6));
    random_on(&mut rng, shape)
}

fn random_on(rng: &mut impl Rng, shape: Shape) -> (Tensor<f64>, Tensor<f64>) {
    let p = (0..shape.numel()).map(|_| rng.random_range(0.001..0.999)).collect();
    let t = (0..shape.numel()).map(|_| (rng.random::<f64>() < 0.4) as u8 as f64).collect();
    (Tensor::new(shape, p).unwrap(), Tensor::new(shape, t).unwrap())
}

fn single(t: &Tensor<f64>, c: usize) -> Tensor<f64> {
    let s = t.shape();
    let vols: Vec<_> = (0..s.n).map(|n| t.volume(n, c)).collect();
    Tensor::from_volumes(&vols.iter().collect::<Vec<_>>()).unwrap()
}

fn eval(f: impl FnOnce(&mut Graph<f64>) -> protseg::tensornet::Var) -> f64 {
    let mut g = Graph::new();
    let v = f(&mut g);
    g.value(v).item()
}

#[test]
fn dice_and_ce_match_plain_loops() {
    for seed in 0..50 {
        let (p, t) = random_case(seed, 1 + seed as usize % 3);
        let c = p.shape().c;
        for (form, squared) in [(DiceForm::Squared, true), (DiceForm::Plain, false)] {
            let got = eval(|g| {
                let (a, b) = (g.input(p.clone()), g.input(t.clone()));
                dice_loss(g, a, b, 1e-5, form).unwrap()
            });
            let want = (0..c).map(|k| naive_dice(&channel(&p, k), &channel(&t, k), 1e-5, squared)).sum::<f64>() / c as f64;
            assert!((got - want).abs() < TOL, "seed {seed} dice {got} vs {want}");
        }
        for eps in [0.0, 0.01, 0.2] {
            let got = eval(|g| {
                let (a, b) = (g.input(p.clone()), g.input(t.clone()));
                ce_loss(g, a, b, eps).unwrap()
            });
            let want = naive_ce(p.data(), t.data(), eps);
            assert!((got - want).abs() < TOL, "seed {seed} ce {got} vs {want}");
        }
    }
}

#[test]
fn step_objectives_match_plain_loops() {
    let cfg = LossConfig::default();
    let seg = |p: &[f64], t: &[f64]| 0.5 * naive_dice(p, t, cfg.dice_delta, true) + 0.5 * naive_ce(p, t, 0.0);
    for seed in 100..150 {
        let (base, _) = random_case(seed, 2);
        let mut rng = rng_from(seed + 1000);
        let one = base.shape().with_channels(1);
        let (fusion, tumor) = random_on(&mut rng, one);
        let (_, kidney) = random_on(&mut rng, one);
        let s1 = seg(&channel(&base, 0), kidney.data()) + seg(&channel(&base, 1), tumor.data());
        let got1 = eval(|g| {
            let (b, k, t) = (g.input(base.clone()), g.input(kidney.clone()), g.input(tumor.clone()));
            step1_loss(g, b, k, t, &cfg).unwrap()
        });
        assert!((got1 - s1).abs() < TOL, "seed {seed} step1 {got1} vs {s1}");
        let got2 = eval(|g| {
            let (f, t) = (g.input(fusion.clone()), g.input(tumor.clone()));
            step2_loss(g, f, t, &cfg).unwrap()
        });
        let s2 = naive_ce(fusion.data(), tumor.data(), 0.01);
        assert!((got2 - s2).abs() < TOL, "seed {seed} step2 {got2} vs {s2}");
        let got3 = eval(|g| {
            let (f, b) = (g.input(fusion.clone()), g.input(base.clone()));
            let (k, t) = (g.input(kidney.clone()), g.input(tumor.clone()));
            step3_loss(g, f, b, k, t, &cfg).unwrap()
        });
        let s3 = seg(fusion.data(), tumor.data()) + s1;
        assert!((got3 - s3).abs() < TOL, "seed {seed} step3 {got3} vs {s3}");
    }
}

#[test]
fn dice_of_mask_with_itself_is_zero() {
    for seed in 0..20 {
        let (_, t) = random_case(seed, 2);
        if t.data().iter().all(|&v| v == 0.0) {
            continue;
        }
        let got = eval(|g| {
            let (a, b) = (g.input(t.clone()), g.input(t.clone()));
            dice_loss(g, a, b, 1e-5, DiceForm::Squared).unwrap()
        });
        assert!(got < TOL);
    }
}

#[test]
fn loss_shape_mismatch_is_an_error() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(Shape::new(1, 1, 2, 2, 2)));
    let b = g.input(Tensor::zeros(Shape::new(1, 1, 2, 2, 3)));
    assert!(dice_loss(&mut g, a, b, 1e-5, DiceForm::Squared).is_err());
    assert!(ce_loss(&mut g, a, b, 0.0).is_err());
    let c = g.input(Tensor::zeros(Shape::new(1, 1, 2, 2, 2)));
    assert!(ce_loss(&mut g, a, c, 0.5).is_err());
}

#[test]
fn single_channel_slices_agree_with_full() {
    let (p, t) = random_case(7, 2);
    let full = eval(|g| {
        let (a, b) = (g.input(p.clone()), g.input(t.clone()));
        dice_loss(g, a, b, 1e-5, DiceForm::Squared).unwrap()
    });
    let parts: f64 = (0..2)
        .map(|c| {
            eval(|g| {
                let (a, b) = (g.input(single(&p, c)), g.input(single(&t, c)));
                dice_loss(g, a, b, 1e-5, DiceForm::Squared).unwrap()
            })
        })
        .sum();
    assert!((full - parts / 2.0).abs() < TOL);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Moving every prediction toward its target never raises either loss.
    #[test]
    fn interpolating_toward_target_lowers_loss(seed in 0u64..10_000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (p, t) = random_case(seed, 1);
        let mix = |w: f64| Tensor::new(p.shape(), p.data().iter().zip(t.data()).map(|(&x, &y)| (1.0 - w) * x + w * y.clamp(0.001, 0.999)).collect()).unwrap();
        let (pl, ph) = (mix(lo), mix(hi));
        let ce = |q: &Tensor<f64>| naive_ce(q.data(), t.data(), 0.0);
        prop_assert!(ce(&ph) <= ce(&pl) + 1e-12);
        let d = |q: &Tensor<f64>| eval(|g| {
            let (x, y) = (g.input(q.clone()), g.input(t.clone()));
            dice_loss(g, x, y, 1e-5, DiceForm::Plain).unwrap()
        });
        prop_assert!(d(&ph) <= d(&pl) + 1e-9);
    }
}
