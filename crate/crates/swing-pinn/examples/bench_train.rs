use std::time::Instant;
use swing_pinn::dataset::{generate_dataset, partition};
use swing_pinn::dynamics::preset_1bus;
use swing_pinn::pinn::{train, PinnModel, TrainConfig};
use swing_pinn::solver::SolverConfig;

fn main() {
    let sys = preset_1bus();
    let scfg = SolverConfig::default();
    let ds = generate_dataset(&sys, "1bus", 50, 201, 7, &scfg).unwrap();
    let part = partition(&ds, 4500, 0.5, 11).unwrap();
    let model = PinnModel::new(sys, 3).unwrap();
    let cfg = TrainConfig {
        iterations: 500,
        physics_batch: 256,
        data_batch: 256,
        seed: 9,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (_, hist) = train(&model, &part, &cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "500 iters in {dt:.2}s ({:.2} ms/iter); L_u {:.3e} -> {:.3e}",
        dt / 500.0 * 1e3,
        hist[0].data_term,
        hist.last().unwrap().data_term
    );
}
