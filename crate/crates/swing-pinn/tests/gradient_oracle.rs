//! Finite-difference oracles for the loss gradients: the expected values
//! are computed by central differences of the loss itself, independently of
//! the backward sweep under test.

use swing_pinn::dataset::{CollocationPoint, LabeledSample};
use swing_pinn::dynamics::{preset_1bus, preset_2bus, BusSystem};
use swing_pinn::pinn::{loss_gradient, PinnModel};

fn tiny_sets(system: &BusSystem, n: usize) -> (Vec<LabeledSample>, Vec<CollocationPoint>) {
    let (t0, t1) = system.t_span;
    let (p0, p1) = system.p_range;
    let mut labeled = Vec::new();
    let mut colloc = Vec::new();
    for k in 0..n {
        let f = (k as f64 + 0.5) / n as f64;
        let t = t0 + f * (t1 - t0);
        let p = p0 + (1.0 - f) * (p1 - p0);
        labeled.push(LabeledSample {
            t,
            p,
            labels: (0..system.n_gen).map(|g| 0.3 * f + 0.1 * g as f64).collect(),
        });
        colloc.push(CollocationPoint { t: t1 - f * (t1 - t0) * 0.9, p });
    }
    (labeled, colloc)
}

fn loss_of(model: &PinnModel, labeled: &[LabeledSample], colloc: &[CollocationPoint]) -> f64 {
    model.total_loss(labeled, colloc, 1.0, 1.0).unwrap().total
}

/// Central finite difference in one parameter of the flat vector.
fn fd_component(
    model: &PinnModel,
    labeled: &[LabeledSample],
    colloc: &[CollocationPoint],
    idx: usize,
    h: f64,
) -> f64 {
    let mut params = model.flat_params();
    let base = params[idx];
    let mut m = model.clone();
    params[idx] = base + h;
    m.set_flat_params(&params);
    let up = loss_of(&m, labeled, colloc);
    params[idx] = base - h;
    m.set_flat_params(&params);
    let dn = loss_of(&m, labeled, colloc);
    (up - dn) / (2.0 * h)
}

#[test]
fn full_pinn_loss_gradient_matches_finite_differences() {
    // Five small models across both presets; every component checked.
    let cases: Vec<(BusSystem, u64)> = vec![
        (preset_1bus(), 11),
        (preset_1bus(), 22),
        (preset_1bus(), 33),
        (preset_2bus(), 44),
        (preset_2bus(), 55),
    ];
    for (system, seed) in cases {
        let model = PinnModel::with_hidden(system.clone(), &[6], &[4], seed).unwrap();
        let (labeled, colloc) = tiny_sets(&system, 8);
        let (_, grad) = loss_gradient(&model, &labeled, &colloc, 1.0, 1.0).unwrap();

        let h = 1e-5;
        let mut worst_rel: f64 = 0.0;
        for (idx, &g) in grad.iter().enumerate() {
            let fd = fd_component(&model, &labeled, &colloc, idx, h);
            let err = (g - fd).abs();
            if fd.abs() < 1e-6 {
                assert!(err <= 1e-8, "seed {seed} param {idx}: {g} vs {fd} (abs)");
            } else {
                let rel = err / fd.abs();
                worst_rel = worst_rel.max(rel);
                assert!(rel <= 1e-5, "seed {seed} param {idx}: {g} vs {fd} rel {rel:.2e}");
            }
        }
        assert!(worst_rel > 0.0, "degenerate check for seed {seed}");
    }
}

#[test]
fn physics_gradient_in_constant_inertia_matches_affine_formula() {
    // Force the inertia network to a constant head: zero weights, final
    // bias z, so m̂ = softplus(z) everywhere. The physics loss is affine in
    // m̂, hence ∂L_f/∂z = (2/N_f) Σ f_j · δ̂''_j · σ(z).
    let system = preset_1bus();
    let mut model = PinnModel::with_hidden(system.clone(), &[8], &[4], 7).unwrap();
    {
        let inn = model.inertia_net.as_mut().unwrap();
        for w in &mut inn.weights {
            w.fill(0.0);
        }
        for b in &mut inn.biases {
            b.fill(0.0);
        }
        let z = -0.35;
        *inn.biases.last_mut().unwrap() = vec![z];
    }
    let z = -0.35f64;
    let sigmoid = 1.0 / (1.0 + (-z).exp());

    let (_, colloc) = tiny_sets(&system, 16);
    let (_, grad) = loss_gradient(&model, &[], &colloc, 1.0, 1.0).unwrap();
    // The final bias of the inertia net is the last flat parameter.
    let engine = *grad.last().unwrap();

    let mut hand = 0.0;
    for c in &colloc {
        let f = model.physics_residual(c.t, c.p).unwrap()[0];
        let jets = model.predict_angle_jets(c.t, c.p).unwrap();
        hand += 2.0 * f * jets[0].d2_dt2;
    }
    hand = hand / colloc.len() as f64 * sigmoid;

    assert!(
        (engine - hand).abs() <= 1e-10 * (1.0 + hand.abs()),
        "{engine} vs {hand}"
    );
}

#[test]
fn mixed_derivative_consistency_on_network_output() {
    // ∂θ of d²δ̂/dt² computed by the engine (backward sweep seeded on the
    // second-derivative channel) against central finite differences of the
    // forward-propagated channel under parameter perturbation.
    use swing_pinn::autodiff::{DiffValue, TapeBuffer};
    let system = preset_1bus();
    let model = PinnModel::with_hidden(system, &[6], &[4], 3).unwrap();
    let (t, p) = (5.0, 0.12);

    let programs = model.programs();
    let params = model.flat_params();
    let mut buf = TapeBuffer::default();
    programs.physics.forward(&params, &[t, p], &mut buf);
    let mut engine_grad = vec![0.0; programs.n_params];
    programs.physics.backward_seeded(
        &mut buf,
        &params,
        programs.angle_nodes[0],
        DiffValue {
            value: 0.0,
            d_dt: 0.0,
            d2_dt2: 1.0,
        },
        &mut engine_grad,
    );

    let d2_of = |m: &PinnModel| m.predict_angle_jets(t, p).unwrap()[0].d2_dt2;
    let h = 1e-5;
    let n_angle = model.angle_net.n_params();
    let mut checked = 0;
    for idx in 0..n_angle {
        let mut pp = params.clone();
        let mut m = model.clone();
        pp[idx] = params[idx] + h;
        m.set_flat_params(&pp);
        let up = d2_of(&m);
        pp[idx] = params[idx] - h;
        m.set_flat_params(&pp);
        let dn = d2_of(&m);
        let fd = (up - dn) / (2.0 * h);
        if fd.abs() < 1e-7 {
            assert!(
                engine_grad[idx].abs() <= 1e-6,
                "param {idx}: {} vs {fd} (abs)",
                engine_grad[idx]
            );
        } else {
            let rel = (engine_grad[idx] - fd).abs() / fd.abs();
            assert!(rel <= 1e-4, "param {idx}: {} vs {fd} rel {rel:.2e}", engine_grad[idx]);
            checked += 1;
        }
    }
    assert!(checked > 10, "only {checked} informative components");
}
