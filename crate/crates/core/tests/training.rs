use ucae::io::model_to_checkpoint;
use ucae::linalg::gauss_sample;
use ucae::metrics::{check_latent_match, mmd_test, CheckConfig};
use ucae::model::{translate, Architecture, Autoencoder, DomainModel};
use ucae::nn::{Activation, LayerSpec, Mlp, OptimizerConfig};
use ucae::sem::{make_sem, sample_marginals, DomainGen, LatentLaw, SemSpec};
use ucae::train::{
    add_domain, conditioned_discriminator_input, encode_bank, learn_latent_alternating, new_model, objective_value, recon_loss,
    train_autoencoder, LabeledBatch, BankOrigin, LatentSource, SampleBank, TrainConfig, TrainLog, Trainer,
};
use ucae::{Matrix, Rng};

fn linear_arch() -> Architecture {
    Architecture {
        encoder_hidden: vec![],
        decoder_hidden: vec![],
        hidden_activation: Activation::Identity,
        ..Architecture::default()
    }
}

/// Exact inverse pair for a linear generator: `E(x) = Mᵀ(x − c)`,
/// `D(u) = M u + c`, with a freshly initialised discriminator.
fn oracle_mlp_model(id: &str, g: &DomainGen, rng: &mut Rng) -> DomainModel {
    let (n, k) = g.mix.shape();
    let mt = g.mix.transpose();
    let enc_bias: Vec<f64> = (0..k).map(|r| -(0..n).map(|c| mt.get(r, c) * g.offset[c]).sum::<f64>()).collect();
    let encoder = Mlp::from_parts(&[LayerSpec::new(n, k, Activation::Identity)], vec![mt], vec![enc_bias]).unwrap();
    let decoder =
        Mlp::from_parts(&[LayerSpec::new(k, n, Activation::Identity)], vec![g.mix.clone()], vec![g.offset.clone()]).unwrap();
    let arch = Architecture::default();
    let disc = Mlp::with_architecture(k, &arch.disc_hidden, 1, arch.hidden_activation, Activation::Identity, rng).unwrap();
    DomainModel::from_parts(id, g.latent_dim(), g.noise_dim, 0, encoder, decoder, disc).unwrap()
}

fn linear_world(seed: u64) -> SemSpec {
    make_sem(2, &[(4, 1), (3, 0)], 0.0, LatentLaw::StandardNormal, &mut Rng::new(seed)).unwrap()
}

fn marginals(world: &SemSpec, count: usize, seed: u64) -> Vec<Matrix> {
    sample_marginals(world, count, &mut Rng::new(seed)).unwrap().into_iter().map(|(x, _)| x).collect()
}

fn all_params(m: &DomainModel) -> Vec<f64> {
    [m.encoder.parameters(), m.decoder.parameters(), m.discriminator.parameters()].concat()
}

fn ckpt(m: &DomainModel) -> String {
    model_to_checkpoint(m, &[]).to_text()
}

#[test]
fn zero_steps_leave_the_model_untouched() {
    let world = linear_world(1);
    let x = marginals(&world, 100, 2).swap_remove(0);
    let data = LabeledBatch::unlabeled(x);
    let cfg = TrainConfig {
        steps: 0,
        latent_dim: 2,
        noise_dim: 1,
        ..TrainConfig::default()
    };
    let mut model = new_model("domain_1", &data, &cfg, &mut Rng::new(3)).unwrap();
    let before = ckpt(&model);
    let log = train_autoencoder(&mut model, &data, &LatentSource::Prior, &cfg, &mut Rng::new(4)).unwrap();
    assert!(log.is_empty());
    assert_eq!(ckpt(&model), before);
}

#[test]
fn lambda_zero_sgd_step_lowers_reconstruction_on_its_batch() {
    let world = linear_world(1);
    let x = marginals(&world, 256, 2).swap_remove(0);
    let cfg = TrainConfig {
        lambda: 0.0,
        gen_optimizer: OptimizerConfig::sgd(1e-3),
        latent_dim: 2,
        noise_dim: 1,
        ..TrainConfig::default()
    };
    let data = LabeledBatch::unlabeled(x.clone());
    let mut model = new_model("domain_1", &data, &cfg, &mut Rng::new(5)).unwrap();
    let before = recon_loss(&model, &x).unwrap();
    let disc_before = model.discriminator.parameters();
    let mut trainer = Trainer::new(&mut model, &cfg).unwrap();
    let (reported, _) = trainer.generator_step(&x, None).unwrap();
    assert!((reported - before).abs() <= 1e-12 * before);
    let after = recon_loss(&model, &x).unwrap();
    assert!(after < before, "{after} >= {before}");
    assert_eq!(model.discriminator.parameters(), disc_before);
}

#[test]
fn identity_world_converges_in_2000_steps() {
    let world = SemSpec::identity_world();
    let x = marginals(&world, 20_000, 1).swap_remove(0);
    let data = LabeledBatch::unlabeled(x.clone());
    let cfg = TrainConfig {
        steps: 2000,
        latent_dim: 1,
        noise_dim: 0,
        ..TrainConfig::default()
    };
    let mut model = new_model("domain_1", &data, &cfg, &mut Rng::new(0).split("init")).unwrap();
    let log = train_autoencoder(&mut model, &data, &LatentSource::Prior, &cfg, &mut Rng::new(0).split("train")).unwrap();
    assert_eq!(log.len(), 2000);
    let mse = recon_loss(&model, &x).unwrap();
    assert!(mse < 1e-3, "recon mse {mse}");
    let prior = gauss_sample(&mut Rng::new(7), 2000, 1);
    let r = check_latent_match(&model, &x, &prior, &mut Rng::new(8), &CheckConfig::default()).unwrap();
    assert!(r.permutation_p > 0.01, "{r:?}");
    let (_, _, disc) = log.tail_means(200);
    assert!((-1.6..=-1.2).contains(&disc), "discriminator loss {disc}");
}

#[test]
fn unlabeled_training_is_deterministic() {
    let world = linear_world(3);
    let x = marginals(&world, 500, 4).swap_remove(1);
    let cfg = TrainConfig {
        steps: 30,
        batch_size: 32,
        latent_dim: 2,
        noise_dim: 0,
        ..TrainConfig::default()
    };
    let run = || {
        let data = LabeledBatch::unlabeled(x.clone());
        let mut m = new_model("domain_2", &data, &cfg, &mut Rng::new(1)).unwrap();
        let log = train_autoencoder(&mut m, &data, &LatentSource::Prior, &cfg, &mut Rng::new(2)).unwrap();
        (ckpt(&m), log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert!(conditioned_discriminator_input(&[0.5, -1.0], &[], 0).is_err());
}

#[test]
fn conditioned_input_has_code_plus_label_width() {
    let v = conditioned_discriminator_input(&[1.0, 2.0, 3.0], &[0.0, 1.0], 2).unwrap();
    assert_eq!(v, vec![1.0, 2.0, 3.0, 0.0, 1.0]);
    assert!(conditioned_discriminator_input(&[1.0], &[1.0], 2).is_err());
}

#[test]
fn add_domain_requires_a_frozen_bank_and_is_reproducible() {
    let world = linear_world(5);
    let x = marginals(&world, 400, 6).swap_remove(0);
    let data = LabeledBatch::unlabeled(x);
    let cfg = TrainConfig {
        steps: 20,
        batch_size: 32,
        latent_dim: 2,
        noise_dim: 1,
        ..TrainConfig::default()
    };
    let z = gauss_sample(&mut Rng::new(1), 300, 2);
    let open = SampleBank::new(z.clone(), None, BankOrigin::Prior).unwrap();
    let mut m = new_model("domain_3", &data, &cfg, &mut Rng::new(2)).unwrap();
    let before = ckpt(&m);
    assert!(add_domain(&mut m, &data, &open, &cfg, &mut Rng::new(3)).is_err());
    assert_eq!(ckpt(&m), before);

    let frozen = open.freeze();
    let run = || {
        let mut m = new_model("domain_3", &data, &cfg, &mut Rng::new(2)).unwrap();
        add_domain(&mut m, &data, &frozen, &cfg, &mut Rng::new(3)).unwrap();
        ckpt(&m)
    };
    assert_eq!(run(), run());

    let wrong = SampleBank::new(gauss_sample(&mut Rng::new(1), 10, 3), None, BankOrigin::Prior).unwrap().freeze();
    let mut m = new_model("domain_3", &data, &cfg, &mut Rng::new(2)).unwrap();
    assert!(add_domain(&mut m, &data, &wrong, &cfg, &mut Rng::new(3)).is_err());
}

#[test]
fn oracle_pair_is_a_near_fixed_point_of_the_alternation() {
    let world = linear_world(7);
    let xs = marginals(&world, 20_000, 8);
    let rng = Rng::new(9);
    let mut a = oracle_mlp_model("domain_1", &world.domains[0], &mut rng.split("a"));
    let mut b = oracle_mlp_model("domain_2", &world.domains[1], &mut rng.split("b"));
    assert!(recon_loss(&a, &xs[0]).unwrap() < 1e-20);
    let (a0, b0) = (all_params(&a), all_params(&b));
    let (da, db) = (LabeledBatch::unlabeled(xs[0].clone()), LabeledBatch::unlabeled(xs[1].clone()));
    let cfg = TrainConfig {
        lambda: 1.0,
        gen_optimizer: OptimizerConfig::sgd(1e-4),
        disc_optimizer: OptimizerConfig::sgd(1e-4),
        arch: linear_arch(),
        latent_dim: 2,
        ..TrainConfig::default()
    };
    let out = learn_latent_alternating(&mut a, &mut b, &da, &db, &cfg, 1, 1000, &mut Rng::new(10)).unwrap();
    let moved = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(moved(&all_params(&a), &a0) < 1e-3);
    assert!(moved(&all_params(&b), &b0) < 1e-3);

    let bank = out.bank.samples();
    assert_eq!(bank.rows(), 2000);
    let reference = gauss_sample(&mut Rng::new(11), 1000, 2);
    let r = mmd_test(bank, &reference, &mut Rng::new(12), 500).unwrap();
    assert!(r.permutation_p > 0.01, "{r:?}");
}

#[test]
fn alternation_trains_b_against_the_updated_a() {
    let world = linear_world(2);
    let xs = marginals(&world, 600, 3);
    let (da, db) = (LabeledBatch::unlabeled(xs[0].clone()), LabeledBatch::unlabeled(xs[1].clone()));
    let cfg = TrainConfig {
        batch_size: 64,
        latent_dim: 2,
        arch: Architecture {
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            disc_hidden: vec![16],
            ..Architecture::default()
        },
        ..TrainConfig::default()
    };
    let mut a = new_model("domain_1", &da, &cfg, &mut Rng::new(4)).unwrap();
    let mut b = new_model("domain_2", &db, &cfg, &mut Rng::new(6)).unwrap();
    let (mut ra, mut rb) = (a.clone(), b.clone());
    let out = learn_latent_alternating(&mut a, &mut b, &da, &db, &cfg, 2, 200, &mut Rng::new(5)).unwrap();

    let rng = Rng::new(5);
    let (steps_a, steps_b) = (cfg.epoch_steps(da.rows()), cfg.epoch_steps(db.rows()));
    let mut ta = Trainer::new(&mut ra, &cfg).unwrap().with_horizon(2 * steps_a);
    let mut tb = Trainer::new(&mut rb, &cfg).unwrap().with_horizon(2 * steps_b);
    let (mut la, mut lb) = (TrainLog::default(), TrainLog::default());
    for round in 0..2 {
        let bank_b = encode_bank(tb.model(), &db, 200, &mut rng.split(&format!("round{round}/bank_b"))).unwrap();
        ta.run(&da, &LatentSource::Bank(&bank_b), steps_a, &mut rng.split(&format!("round{round}/train_a")), &mut la)
            .unwrap();
        let bank_a = encode_bank(ta.model(), &da, 200, &mut rng.split(&format!("round{round}/bank_a"))).unwrap();
        tb.run(&db, &LatentSource::Bank(&bank_a), steps_b, &mut rng.split(&format!("round{round}/train_b")), &mut lb)
            .unwrap();
    }
    drop((ta, tb));
    assert_eq!(ckpt(&a), ckpt(&ra));
    assert_eq!(ckpt(&b), ckpt(&rb));
    assert_eq!(out.log_a, la);
    assert_eq!(out.log_b, lb);
    assert_eq!(out.bank.samples().rows(), 400);
    assert!(out.bank.is_frozen());
}

#[test]
fn alternation_rejects_bad_arguments() {
    let world = linear_world(2);
    let x = marginals(&world, 50, 3).swap_remove(1);
    let data = LabeledBatch::unlabeled(x);
    let cfg = TrainConfig {
        latent_dim: 2,
        ..TrainConfig::default()
    };
    let mut a = new_model("a", &data, &cfg, &mut Rng::new(1)).unwrap();
    let mut b = new_model("b", &data, &cfg, &mut Rng::new(2)).unwrap();
    assert!(learn_latent_alternating(&mut a, &mut b, &data, &data, &cfg, 0, 10, &mut Rng::new(3)).is_err());
    let other = TrainConfig {
        latent_dim: 1,
        ..cfg.clone()
    };
    let mut c = new_model("c", &data, &other, &mut Rng::new(2)).unwrap();
    assert!(learn_latent_alternating(&mut a, &mut c, &data, &data, &cfg, 1, 10, &mut Rng::new(3)).is_err());
}

#[test]
fn oracle_objective_is_no_worse_than_trained() {
    let world = linear_world(13);
    let xs = marginals(&world, 20_000, 14);
    let g = &world.domains[0];
    let cfg = TrainConfig {
        steps: 5000,
        arch: linear_arch(),
        latent_dim: 2,
        noise_dim: 1,
        ..TrainConfig::default()
    };
    let data = LabeledBatch::unlabeled(xs[0].clone());
    let mut trained = new_model("domain_1", &data, &cfg, &mut Rng::new(15)).unwrap();
    train_autoencoder(&mut trained, &data, &LatentSource::Prior, &cfg, &mut Rng::new(16)).unwrap();
    let oracle = oracle_mlp_model("domain_1", g, &mut Rng::new(17));

    let held = marginals(&world, 5000, 18).swap_remove(0);
    let reference = gauss_sample(&mut Rng::new(19), 5000, 3);
    let value = |m: &dyn Autoencoder| objective_value(m, &held, &reference, 1.0, 1500, &mut Rng::new(20)).unwrap();
    let (vo, vt) = (value(&oracle), value(&trained));
    assert!(vo <= vt, "oracle objective {vo} > trained {vt}");
}

#[test]
fn alternating_two_domain_linear_world_translates_marginals() {
    let world = linear_world(21);
    let xs = marginals(&world, 5000, 22);
    let (da, db) = (LabeledBatch::unlabeled(xs[0].clone()), LabeledBatch::unlabeled(xs[1].clone()));
    let cfg = TrainConfig {
        latent_dim: 2,
        ..TrainConfig::default()
    };
    let mut a = DomainModel::new("domain_1", 4, 2, 1, 0, &cfg.arch, &mut Rng::new(23)).unwrap();
    let mut b = DomainModel::new("domain_2", 3, 2, 0, 0, &cfg.arch, &mut Rng::new(24)).unwrap();
    learn_latent_alternating(&mut a, &mut b, &da, &db, &cfg, 100, cfg.bank_size(), &mut Rng::new(25)).unwrap();
    let eval = CheckConfig::default();
    let src = ucae::metrics::subsample(&xs[0], eval.samples, &mut Rng::new(26));
    let y = translate(&a, &b, &src, &mut Rng::new(27)).unwrap();
    let target = ucae::metrics::subsample(&xs[1], eval.samples, &mut Rng::new(28));
    let r = mmd_test(&y, &target, &mut Rng::new(29), eval.n_permutations).unwrap();
    assert!(r.permutation_p > eval.alpha, "{r:?}");
}

#[test]
fn lr_schedule_is_flat_then_linear_to_the_floor() {
    let cfg = TrainConfig { lr_decay: 0.5, lr_floor: 0.1, ..TrainConfig::default() };
    assert_eq!(cfg.lr_scale(0, 100), 1.0);
    assert_eq!(cfg.lr_scale(49, 100), 1.0);
    assert_eq!(cfg.lr_scale(50, 100), 1.0);
    assert!((cfg.lr_scale(75, 100) - 0.55).abs() < 1e-12);
    assert!((cfg.lr_scale(99, 100) - (1.0 - 0.9 * 49.0 / 50.0)).abs() < 1e-12);
    assert_eq!(cfg.lr_scale(100, 100), 0.1);
    let flat = TrainConfig { lr_decay: 0.0, ..cfg.clone() };
    assert!((0..200).all(|s| flat.lr_scale(s, 100) == 1.0));
    assert!(TrainConfig { lr_floor: 0.0, ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { lr_decay: 1.5, ..cfg }.validate().is_err());
}
