//! Finite-difference checks for every gradient path: the GAN's source/class
//! losses and overlap regularizer, the adversarial objective through the
//! gradient reversal, and the bottleneck term through the reparameterized
//! sample with frozen noise. Plus sign tests for the two adversarial
//! directions.

use frida_core::dannib::{dannib_loss, DannArch, DannIbModel, DannMode};
use frida_core::data::{DomainId, FeatureDataset};
use frida_core::dgacgan::{
    disc_grads, gen_grads, pair_fakes, GanArch, GanModel, PairingMode, PairingPlan,
};
use frida_core::loss::grad_rel_error;
use frida_core::net::DenseNet;
use frida_core::opt::AdamState;
use frida_core::rng::{gauss_sample, RngStream};
use frida_core::tensor::Tensor2;

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

/// Central finite differences of `scalar` w.r.t. every tensor produced by
/// `tensors_of`, compared against the aligned `analytic` gradients.
/// Returns the worst relative error.
fn fd_worst_error<M, FT, FS>(model: &M, tensors_of: FT, scalar: FS, analytic: &[&Tensor2]) -> f64
where
    M: Clone,
    FT: Fn(&mut M) -> Vec<&mut Tensor2>,
    FS: Fn(&M) -> f64,
{
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    assert_eq!(
        tensors_of(&mut probe).len(),
        analytic.len(),
        "tensor/gradient count mismatch"
    );
    for (ti, reference) in analytic.iter().enumerate() {
        let mut fd = Tensor2::zeros(reference.rows(), reference.cols());
        for i in 0..fd.data().len() {
            let mut up = model.clone();
            tensors_of(&mut up)[ti].data_mut()[i] += FD_H;
            let mut down = model.clone();
            tensors_of(&mut down)[ti].data_mut()[i] -= FD_H;
            fd.data_mut()[i] = (scalar(&up) - scalar(&down)) / (2.0 * FD_H);
        }
        worst = worst.max(grad_rel_error(reference, &fd));
    }
    worst
}

fn gan_tensors(m: &mut GanModel) -> (Vec<&mut Tensor2>, usize) {
    let mut v = m.generator.params_mut();
    let gen_count = v.len();
    v.extend(m.trunk.params_mut());
    v.extend(m.head_rf.params_mut());
    v.extend(m.head_cls.params_mut());
    (v, gen_count)
}

fn random_gan(rng: &mut RngStream, c: usize, d: usize) -> GanModel {
    let arch = GanArch {
        z_dim: 1 + rng.next_index(4),
        gen_hidden: vec![2 + rng.next_index(4)],
        trunk_hidden: vec![2 + rng.next_index(4), 2 + rng.next_index(3)],
    };
    GanModel::init(&arch, c, d, 3, rng).unwrap()
}

fn random_batch(rng: &mut RngStream, n: usize, c: usize, d: usize, tau: usize) -> FeatureDataset {
    let features = gauss_sample(rng, n, d);
    let labels: Vec<usize> = (0..n).map(|_| rng.next_index(c)).collect();
    FeatureDataset::new(features, Some(labels), DomainId::new(tau, 3).unwrap(), c).unwrap()
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let mut rng = RngStream::new(2024);
    for trial in 0..8 {
        let c = 2 + rng.next_index(3);
        let d = 2 + rng.next_index(3);
        let model = random_gan(&mut rng, c, d);
        let n_r = 3 + rng.next_index(3);
        let real = random_batch(&mut rng, n_r, c, d, 0);
        let fake_x = gauss_sample(&mut rng, 4, d);
        let y_fake: Vec<usize> = (0..4).map(|_| rng.next_index(c)).collect();
        let real_y = real.labels().unwrap().to_vec();

        let (_, trunk_g, rf_g, cls_g) =
            disc_grads(&model, real.features(), &real_y, 0, &fake_x, &y_fake, 0).unwrap();
        let analytic: Vec<&Tensor2> = trunk_g
            .tensors()
            .into_iter()
            .chain(rf_g.tensors())
            .chain(cls_g.tensors())
            .collect();
        let scalar = |m: &GanModel| {
            let (loss, _, _, _) =
                disc_grads(m, real.features(), &real_y, 0, &fake_x, &y_fake, 0).unwrap();
            loss.l_source + loss.l_class
        };
        let worst = fd_worst_error(
            &model,
            |m| {
                let (v, gc) = gan_tensors(m);
                v.into_iter().skip(gc).collect()
            },
            scalar,
            &analytic,
        );
        assert!(worst < FD_TOL, "trial {trial}: worst rel err {worst}");
    }
}

#[test]
fn generator_gradients_match_finite_differences() {
    let mut rng = RngStream::new(777);
    for saturating in [false, true] {
        for trial in 0..6 {
            let c = 2 + rng.next_index(3);
            let d = 2 + rng.next_index(3);
            let model = random_gan(&mut rng, c, d);
            let real = random_batch(&mut rng, 5, c, d, 1);
            let n_f = 4;
            let z = gauss_sample(&mut rng, n_f, model.z_dim());
            let y_fake: Vec<usize> = (0..n_f).map(|_| rng.next_index(c)).collect();
            // freeze the pairing so finite differences see a fixed objective
            let plan: PairingPlan =
                pair_fakes(&real, &y_fake, 1, PairingMode::Uniform, &mut rng.clone()).unwrap();

            let (_, _, _, gen_g) = gen_grads(&model, &z, &y_fake, 1, &plan, saturating).unwrap();
            let analytic = gen_g.tensors();
            let scalar = |m: &GanModel| {
                let (adv, ce, r, _) = gen_grads(m, &z, &y_fake, 1, &plan, saturating).unwrap();
                adv + ce + r
            };
            let worst = fd_worst_error(&model, |m| m.generator.params_mut(), scalar, &analytic);
            assert!(
                worst < FD_TOL,
                "saturating={saturating} trial {trial}: worst rel err {worst}"
            );
        }
    }
}

#[test]
fn adversarial_objective_matches_finite_differences_all_modes() {
    // encoder gradients against FD of the full scalar
    // l_task - lambda*l_dom + beta*r_ib, with frozen reparameterization
    // noise; head gradients against FD of their own terms.
    let mut rng = RngStream::new(31337);
    for mode in [DannMode::Binary, DannMode::Multiclass, DannMode::Ib] {
        for trial in 0..7 {
            let c = 2 + rng.next_index(3);
            let d = 2 + rng.next_index(3);
            let arch = DannArch {
                latent_dim: 2 + rng.next_index(3),
                enc_hidden: vec![2 + rng.next_index(4)],
            };
            let model = DannIbModel::init(&arch, mode, c, d, &mut rng).unwrap();
            let n_s = 3 + rng.next_index(3);
            let n_t = 3 + rng.next_index(3);
            let sx = gauss_sample(&mut rng, n_s, d);
            let sy: Vec<usize> = (0..n_s).map(|_| rng.next_index(c)).collect();
            let tx = gauss_sample(&mut rng, n_t, d);
            let lambda = 0.3 + 0.5 * rng.next_unit();
            let beta = 0.05;
            // the loss draws its noise from the stream, so reusing the same
            // stream position freezes epsilon across FD probes
            let frozen = rng.clone();

            let (_, grads) =
                dannib_loss(&model, &sx, &sy, &tx, lambda, beta, &mut frozen.clone()).unwrap();

            // encoder against the full objective
            let scalar_total = |m: &DannIbModel| {
                let (r, _) =
                    dannib_loss(m, &sx, &sy, &tx, lambda, beta, &mut frozen.clone()).unwrap();
                r.total
            };
            let worst_enc = fd_worst_error(
                &model,
                |m| m.encoder.params_mut(),
                scalar_total,
                &grads.encoder.tensors(),
            );
            assert!(
                worst_enc < FD_TOL,
                "{mode:?} trial {trial}: encoder rel err {worst_enc}"
            );

            // task head against l_task alone
            let scalar_task = |m: &DannIbModel| {
                let (r, _) =
                    dannib_loss(m, &sx, &sy, &tx, lambda, beta, &mut frozen.clone()).unwrap();
                r.l_task
            };
            let worst_task = fd_worst_error(
                &model,
                |m| m.head_task.params_mut(),
                scalar_task,
                &grads.head_task.tensors(),
            );
            assert!(
                worst_task < FD_TOL,
                "{mode:?} trial {trial}: task rel err {worst_task}"
            );

            // domain head minimizes l_dom (unflipped)
            let scalar_dom = |m: &DannIbModel| {
                let (r, _) =
                    dannib_loss(m, &sx, &sy, &tx, lambda, beta, &mut frozen.clone()).unwrap();
                r.l_dom
            };
            let worst_dom = fd_worst_error(
                &model,
                |m| m.head_dom.params_mut(),
                scalar_dom,
                &grads.head_dom.tensors(),
            );
            assert!(
                worst_dom < FD_TOL,
                "{mode:?} trial {trial}: dom rel err {worst_dom}"
            );
        }
    }
}

#[test]
fn discriminator_step_improves_its_objective() {
    // one Adam step on the discriminator with the generator frozen should
    // lower l_source + l_class (raise the source/class log-likelihood) on
    // the same batch; sign test at >= 15 of 20
    let mut rng = RngStream::new(555);
    let mut improved = 0;
    for _ in 0..20 {
        let c = 2 + rng.next_index(3);
        let d = 2 + rng.next_index(3);
        let mut model = random_gan(&mut rng, c, d);
        let real = random_batch(&mut rng, 6, c, d, 0);
        let real_y = real.labels().unwrap().to_vec();
        let z = gauss_sample(&mut rng, 6, model.z_dim());
        let fake = model.gen_forward(&z, &real_y, 0).unwrap();

        let (before, trunk_g, rf_g, cls_g) =
            disc_grads(&model, real.features(), &real_y, 0, &fake, &real_y, 0).unwrap();
        let grads: Vec<&Tensor2> = trunk_g
            .tensors()
            .into_iter()
            .chain(rf_g.tensors())
            .chain(cls_g.tensors())
            .collect();
        let mut adam = {
            let mut refs = model.trunk.params();
            refs.extend(model.head_rf.params());
            refs.extend(model.head_cls.params());
            AdamState::new(&refs, 0.001, 0.5, 0.9).unwrap()
        };
        {
            let mut refs: Vec<&mut Tensor2> = model.trunk.params_mut();
            refs.extend(model.head_rf.params_mut());
            refs.extend(model.head_cls.params_mut());
            adam.step(&mut refs, &grads).unwrap();
        }
        let (after, _, _, _) =
            disc_grads(&model, real.features(), &real_y, 0, &fake, &real_y, 0).unwrap();
        if after.l_source + after.l_class < before.l_source + before.l_class {
            improved += 1;
        }
    }
    assert!(
        improved >= 15,
        "discriminator improved on only {improved}/20 batches"
    );
}

#[test]
fn reversed_encoder_step_confuses_the_domain_head() {
    // applying the encoder's (sign-flipped) domain gradients as a descent
    // update is ascent on l_dom: the domain loss should rise with all other
    // parameters frozen; sign test at >= 15 of 20
    let mut rng = RngStream::new(4242);
    let mut rose = 0;
    for _ in 0..20 {
        let c = 2 + rng.next_index(3);
        let d = 2 + rng.next_index(3);
        let arch = DannArch {
            latent_dim: 2 + rng.next_index(3),
            enc_hidden: vec![3 + rng.next_index(3)],
        };
        let mut model = DannIbModel::init(&arch, DannMode::Multiclass, c, d, &mut rng).unwrap();
        let sx = gauss_sample(&mut rng, 6, d);
        let sy: Vec<usize> = (0..6).map(|_| rng.next_index(c)).collect();
        let tx = gauss_sample(&mut rng, 6, d);
        let lambda = 1.0;
        let frozen = rng.clone();
        let (before, grads) =
            dannib_loss(&model, &sx, &sy, &tx, lambda, 0.0, &mut frozen.clone()).unwrap();
        // isolate the domain term: subtract the task contribution by zeroing
        // it out with a plain supervised gradient at lambda = 0
        let (_, grads_task_only) =
            dannib_loss(&model, &sx, &sy, &tx, 0.0, 0.0, &mut frozen.clone()).unwrap();
        let lr = 0.05;
        {
            // full - task-only leaves exactly the reversed domain component
            let full = grads.encoder.tensors();
            let task = grads_task_only.encoder.tensors();
            let mut params = model.encoder.params_mut();
            for ((p, g), t) in params.iter_mut().zip(full.iter()).zip(task.iter()) {
                for j in 0..g.data().len() {
                    let dom_component = g.data()[j] - t.data()[j];
                    p.data_mut()[j] -= lr * dom_component;
                }
            }
        }
        let (after, _) =
            dannib_loss(&model, &sx, &sy, &tx, lambda, 0.0, &mut frozen.clone()).unwrap();
        if after.l_dom > before.l_dom {
            rose += 1;
        }
    }
    assert!(
        rose >= 15,
        "domain loss rose on only {rose}/20 reversed steps"
    );
}

#[test]
fn plain_dann_objective_matches_independent_evaluation() {
    // binary mode with beta = 0: value equality against a from-scratch
    // evaluation of task-CE minus lambda times domain-CE
    let mut rng = RngStream::new(808);
    for _ in 0..10 {
        let c = 2 + rng.next_index(3);
        let d = 2 + rng.next_index(3);
        let arch = DannArch {
            latent_dim: 2 + rng.next_index(3),
            enc_hidden: vec![2 + rng.next_index(4)],
        };
        let model = DannIbModel::init(&arch, DannMode::Binary, c, d, &mut rng).unwrap();
        let n_s = 4;
        let n_t = 5;
        let sx = gauss_sample(&mut rng, n_s, d);
        let sy: Vec<usize> = (0..n_s).map(|_| rng.next_index(c)).collect();
        let tx = gauss_sample(&mut rng, n_t, d);
        let lambda = rng.next_unit();
        let (report, _) =
            dannib_loss(&model, &sx, &sy, &tx, lambda, 0.0, &mut rng.clone()).unwrap();

        let independent = independent_plain_dann(&model, &sx, &sy, &tx, lambda);
        let rel = (report.total - independent).abs()
            / report.total.abs().max(independent.abs()).max(1e-300);
        assert!(rel < 1e-10, "relative gap {rel}");
    }
}

/// From-scratch plain-DANN objective: deterministic encoding, task CE on
/// source, binary domain CE over the union, composed with raw loops.
fn independent_plain_dann(
    model: &DannIbModel,
    sx: &Tensor2,
    sy: &[usize],
    tx: &Tensor2,
    lambda: f64,
) -> f64 {
    let latent = |net: &DenseNet, x: &Tensor2, l: usize| -> Vec<Vec<f64>> {
        let out = net.forward(x).unwrap();
        (0..out.rows()).map(|r| out.row(r)[..l].to_vec()).collect()
    };
    let l = model.latent_dim();
    let zs = latent(&model.encoder, sx, l);
    let zt = latent(&model.encoder, tx, l);
    let dense = |layer: &DenseNet, z: &[f64]| -> Vec<f64> {
        let w = &layer.layers()[0].w;
        let b = &layer.layers()[0].b;
        (0..w.cols())
            .map(|j| {
                let mut s = b.get(0, j);
                for (i, &zi) in z.iter().enumerate() {
                    s += zi * w.get(i, j);
                }
                s
            })
            .collect()
    };
    let ce = |logits: &[f64], target: usize| -> f64 {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
        sum.ln() - (logits[target] - max)
    };
    let mut l_task = 0.0;
    for (z, &y) in zs.iter().zip(sy.iter()) {
        l_task += ce(&dense(&model.head_task, z), y);
    }
    l_task /= zs.len() as f64;
    let mut l_dom = 0.0;
    for z in &zs {
        l_dom += ce(&dense(&model.head_dom, z), 0);
    }
    for z in &zt {
        l_dom += ce(&dense(&model.head_dom, z), 1);
    }
    l_dom /= (zs.len() + zt.len()) as f64;
    l_task - lambda * l_dom
}
