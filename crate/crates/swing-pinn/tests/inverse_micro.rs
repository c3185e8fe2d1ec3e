//! Micro inverse problem: recover the inertia coefficient from a single
//! trajectory with the combined data + physics loss.

use swing_pinn::dataset::{generate_dataset, partition};
use swing_pinn::dynamics::preset_1bus;
use swing_pinn::pinn::{train, PinnModel, TrainConfig};
use swing_pinn::solver::SolverConfig;

#[test]
fn single_trajectory_recovers_inertia() {
    let sys = preset_1bus();
    // Ground truth from the adaptive solver at tight tolerance.
    let ds = generate_dataset(&sys, "1bus", 1, 201, 21, &SolverConfig::default()).unwrap();
    let p_traj = ds.trajectories[0].p_input;

    // All 201 samples as collocation points, sixty percent labeled.
    let part = partition(&ds, 201, 0.6, 4).unwrap();
    let model = PinnModel::new(sys, 8).unwrap();
    let cfg = TrainConfig {
        physics_batch: 128,
        data_batch: 128,
        seed: 2,
        ..TrainConfig::default() // full 20k-iteration schedule
    };
    let (trained, history) = train(&model, &part, &cfg).unwrap();
    assert!(history.last().unwrap().total < history[0].total);

    // Estimate on the observed trajectory's power slice.
    let grid: Vec<(f64, f64)> = (0..21).map(|i| (i as f64, p_traj)).collect();
    let m_hat = trained.inertia_estimate(&grid).unwrap()[0];
    assert!(
        (m_hat - 0.4).abs() <= 0.05,
        "recovered inertia {m_hat:.4}, truth 0.4"
    );
}
