//! Ground-truth trajectory datasets: generation, noise corruption,
//! labeled/collocation partitioning, and CSV persistence.
//!
//! CSV formats (fixed headers):
//! - dataset: `traj,t,P,delta_1[,delta_2,...]`, one row per (trajectory, time);
//! - partition: `kind,t,P[,label_1,...]` with kind ∈ {labeled, collocation};
//!   collocation rows leave the label cells empty.
//!
//! Numbers are written in scientific notation with 18 significant digits so
//! that every field round-trips to the exact same f64.

use crate::dynamics::{BusSystem, DynamicsError, GenState};
use crate::solver::{integrate_adaptive, SolverConfig, SolverError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least 1 trajectory and 2 steps (got {n_traj}, {n_steps})")]
    BadShape { n_traj: usize, n_steps: usize },
    #[error("solver failed on trajectory {traj}: {source}")]
    SolverFailure {
        traj: usize,
        #[source]
        source: SolverError,
    },
    #[error("dynamics error: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("noise standard deviation must be nonnegative (got {0})")]
    NegativeSigma(f64),
    #[error("{requested} collocation points requested but the grid has {available}")]
    CollocationExceedsGrid { requested: usize, available: usize },
    #[error("labeled fraction must lie in [0, 1] (got {0})")]
    BadLabeledFraction(f64),
    #[error("{requested} interior labeled points requested but only {available} collocation points have t > 0")]
    LabeledExceedsInterior { requested: usize, available: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },
    #[error("non-numeric cell at row {row}, column {col} (`{cell}`)")]
    NonNumericCell { row: usize, col: usize, cell: String },
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
}

/// One simulated rotor-angle time series over the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub p_input: f64,
    pub times: Vec<f64>,
    /// angles[time_index][generator]
    pub angles: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDescriptor {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rtol: f64,
    pub atol: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Free-form label, normally the preset name.
    pub system_id: String,
    pub n_gen: usize,
    pub trajectories: Vec<Trajectory>,
    /// Set when the angles carry additive noise.
    pub noise: Option<NoiseDescriptor>,
    /// Absent for datasets re-read from CSV.
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.times.len()).sum()
    }
}

/// Integrate `n_traj` flat-start trajectories at inputs drawn uniformly from
/// the system's p_range, sampled on an `n_steps`-point uniform grid.
pub fn generate_dataset(
    system: &BusSystem,
    system_id: &str,
    n_traj: usize,
    n_steps: usize,
    seed: u64,
    solver_cfg: &SolverConfig,
) -> Result<Dataset, DatasetError> {
    if n_traj < 1 || n_steps < 2 {
        return Err(DatasetError::BadShape { n_traj, n_steps });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_inputs: Vec<f64> = (0..n_traj)
        .map(|_| rng.random_range(system.p_range.0..system.p_range.1))
        .collect();

    let (t0, t1) = system.t_span;
    let grid: Vec<f64> = (0..n_steps)
        .map(|i| t0 + (t1 - t0) * i as f64 / (n_steps - 1) as f64)
        .collect();

    let trajectories: Vec<Result<Trajectory, DatasetError>> = p_inputs
        .par_iter()
        .enumerate()
        .map(|(idx, &p)| {
            let y0 = GenState::flat_start(system.n_gen).to_flat();
            let sol = integrate_adaptive(
                |_, y| {
                    system
                        .swing_rhs(&GenState::from_flat(y), p)
                        .expect("swing rhs on finite state")
                        .to_flat()
                },
                &y0,
                system.t_span,
                solver_cfg,
            )
            .map_err(|source| DatasetError::SolverFailure { traj: idx, source })?;
            let rows = sol
                .sample_at(&grid)
                .map_err(|source| DatasetError::SolverFailure { traj: idx, source })?;
            let angles: Vec<Vec<f64>> = rows.iter().map(|r| r[..system.n_gen].to_vec()).collect();
            Ok(Trajectory {
                p_input: p,
                times: grid.clone(),
                angles,
            })
        })
        .collect();

    let trajectories = trajectories.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        system_id: system_id.to_string(),
        n_gen: system.n_gen,
        trajectories,
        noise: None,
        provenance: Some(Provenance {
            rtol: solver_cfg.rtol,
            atol: solver_cfg.atol,
            master_seed: seed,
        }),
    })
}

/// Copy of `dataset` with independent zero-mean Gaussian noise of standard
/// deviation `sigma` added to every angle sample. Times, inputs, and counts
/// are untouched; the original is not modified.
pub fn corrupt_with_noise(
    dataset: &Dataset,
    sigma: f64,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if sigma < 0.0 {
        return Err(DatasetError::NegativeSigma(sigma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = dataset.clone();
    for traj in &mut out.trajectories {
        for row in &mut traj.angles {
            for angle in row {
                *angle += sigma * normal.sample(&mut rng);
            }
        }
    }
    out.noise = Some(NoiseDescriptor { sigma, seed });
    Ok(out)
}

/// A labeled training sample: location in the (t, P) domain plus the
/// (possibly noisy) rotor angles of every generator.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub t: f64,
    pub p: f64,
    pub labels: Vec<f64>,
}

/// A collocation point: physics residual is penalized here, no labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollocationPoint {
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partition {
    pub labeled: Vec<LabeledSample>,
    pub collocation: Vec<CollocationPoint>,
}

impl Partition {
    pub fn n_u(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_f(&self) -> usize {
        self.collocation.len()
    }
}

/// Split a dataset into collocation and labeled sets.
///
/// Collocation points are `n_collocation` grid samples drawn uniformly
/// without replacement. The labeled set is every initial-condition sample
/// (t = 0 row of each trajectory) plus `round(labeled_fraction ·
/// n_collocation)` interior points drawn from the collocation set.
pub fn partition(
    dataset: &Dataset,
    n_collocation: usize,
    labeled_fraction: f64,
    seed: u64,
) -> Result<Partition, DatasetError> {
    let total = dataset.n_samples();
    if n_collocation > total {
        return Err(DatasetError::CollocationExceedsGrid {
            requested: n_collocation,
            available: total,
        });
    }
    if !(0.0..=1.0).contains(&labeled_fraction) {
        return Err(DatasetError::BadLabeledFraction(labeled_fraction));
    }

    // Flat view: (trajectory, time) in row-major order.
    let mut flat: Vec<(u32, u32)> = Vec::with_capacity(total);
    for (ti, traj) in dataset.trajectories.iter().enumerate() {
        for si in 0..traj.times.len() {
            flat.push((ti as u32, si as u32));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, n_collocation);
    let colloc_cells: Vec<(u32, u32)> = picks.iter().map(|i| flat[i]).collect();

    let interior: Vec<(u32, u32)> = colloc_cells
        .iter()
        .copied()
        .filter(|&(_, s)| s > 0)
        .collect();
    let k = (labeled_fraction * n_collocation as f64).round() as usize;
    if k > interior.len() {
        return Err(DatasetError::LabeledExceedsInterior {
            requested: k,
            available: interior.len(),
        });
    }
    let interior_picks = rand::seq::index::sample(&mut rng, interior.len(), k);

    let sample_at = |(ti, si): (u32, u32)| {
        let traj = &dataset.trajectories[ti as usize];
        LabeledSample {
            t: traj.times[si as usize],
            p: traj.p_input,
            labels: traj.angles[si as usize].clone(),
        }
    };

    let mut labeled: Vec<LabeledSample> = dataset
        .trajectories
        .iter()
        .map(|traj| LabeledSample {
            t: traj.times[0],
            p: traj.p_input,
            labels: traj.angles[0].clone(),
        })
        .collect();
    labeled.extend(interior_picks.iter().map(|i| sample_at(interior[i])));

    let collocation: Vec<CollocationPoint> = colloc_cells
        .iter()
        .map(|&(ti, si)| {
            let traj = &dataset.trajectories[ti as usize];
            CollocationPoint {
                t: traj.times[si as usize],
                p: traj.p_input,
            }
        })
        .collect();

    Ok(Partition {
        labeled,
        collocation,
    })
}

/// Exact-round-trip decimal formatting (18 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64, DatasetError> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| DatasetError::NonNumericCell {
            row,
            col,
            cell: cell.to_string(),
        })?;
    if !v.is_finite() {
        return Err(DatasetError::NonNumericCell {
            row,
            col,
            cell: cell.to_string(),
        });
    }
    Ok(v)
}

fn dataset_header(n_gen: usize) -> Vec<String> {
    let mut h = vec!["traj".to_string(), "t".to_string(), "P".to_string()];
    h.extend((1..=n_gen).map(|g| format!("delta_{g}")));
    h
}

/// Write a dataset as CSV (one row per trajectory sample).
pub fn save_dataset_csv(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(std::fs::File::create(path)?));
    w.write_record(dataset_header(dataset.n_gen))?;
    for (ti, traj) in dataset.trajectories.iter().enumerate() {
        for (si, t) in traj.times.iter().enumerate() {
            let mut rec = vec![ti.to_string(), fmt_f64(*t), fmt_f64(traj.p_input)];
            rec.extend(traj.angles[si].iter().map(|a| fmt_f64(*a)));
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset written by [`save_dataset_csv`]. Provenance and noise
/// metadata do not travel through CSV; the numeric content round-trips
/// exactly. Row numbers in errors are 1-based over data rows.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset, DatasetError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(std::fs::File::open(path)?));
    let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    if header.len() < 4 || header[0] != "traj" || header[1] != "t" || header[2] != "P" {
        return Err(DatasetError::MalformedHeader {
            expected: "traj,t,P,delta_1[,delta_2,...]".to_string(),
            found: header.join(","),
        });
    }
    let n_gen = header.len() - 3;
    for (g, name) in header[3..].iter().enumerate() {
        if name != &format!("delta_{}", g + 1) {
            return Err(DatasetError::MalformedHeader {
                expected: "traj,t,P,delta_1[,delta_2,...]".to_string(),
                found: header.join(","),
            });
        }
    }

    let mut trajectories: Vec<Trajectory> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(DatasetError::MalformedRow {
                row,
                message: format!("expected {} cells, found {}", header.len(), rec.len()),
            });
        }
        let traj_idx: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| DatasetError::NonNumericCell {
                row,
                col: 1,
                cell: rec[0].to_string(),
            })?;
        let t = parse_cell(&rec[1], row, 2)?;
        let p = parse_cell(&rec[2], row, 3)?;
        let angles: Vec<f64> = (0..n_gen)
            .map(|g| parse_cell(&rec[3 + g], row, 4 + g))
            .collect::<Result<_, _>>()?;

        if traj_idx == trajectories.len() {
            trajectories.push(Trajectory {
                p_input: p,
                times: Vec::new(),
                angles: Vec::new(),
            });
        } else if traj_idx + 1 != trajectories.len() {
            return Err(DatasetError::MalformedRow {
                row,
                message: format!("trajectory index {traj_idx} out of order"),
            });
        }
        let traj = trajectories.last_mut().unwrap();
        if traj.p_input != p {
            return Err(DatasetError::MalformedRow {
                row,
                message: format!(
                    "inconsistent P within trajectory {traj_idx}: {} vs {}",
                    traj.p_input, p
                ),
            });
        }
        traj.times.push(t);
        traj.angles.push(angles);
    }

    Ok(Dataset {
        system_id: String::new(),
        n_gen,
        trajectories,
        noise: None,
        provenance: None,
    })
}

fn partition_header(n_gen: usize) -> Vec<String> {
    let mut h = vec!["kind".to_string(), "t".to_string(), "P".to_string()];
    h.extend((1..=n_gen).map(|g| format!("label_{g}")));
    h
}

/// Write a partition as CSV. Collocation rows leave the label cells empty.
pub fn save_partition_csv(
    part: &Partition,
    n_gen: usize,
    path: &Path,
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(std::fs::File::create(path)?));
    w.write_record(partition_header(n_gen))?;
    for s in &part.labeled {
        let mut rec = vec!["labeled".to_string(), fmt_f64(s.t), fmt_f64(s.p)];
        rec.extend(s.labels.iter().map(|l| fmt_f64(*l)));
        w.write_record(rec)?;
    }
    for c in &part.collocation {
        let mut rec = vec!["collocation".to_string(), fmt_f64(c.t), fmt_f64(c.p)];
        rec.extend(std::iter::repeat_n(String::new(), n_gen));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a partition written by [`save_partition_csv`].
pub fn load_partition_csv(path: &Path) -> Result<Partition, DatasetError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(std::fs::File::open(path)?));
    let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    if header.len() < 3 || header[0] != "kind" || header[1] != "t" || header[2] != "P" {
        return Err(DatasetError::MalformedHeader {
            expected: "kind,t,P[,label_1,...]".to_string(),
            found: header.join(","),
        });
    }
    let n_gen = header.len() - 3;
    let mut part = Partition::default();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let t = parse_cell(&rec[1], row, 2)?;
        let p = parse_cell(&rec[2], row, 3)?;
        match &rec[0] {
            "labeled" => {
                let labels: Vec<f64> = (0..n_gen)
                    .map(|g| parse_cell(&rec[3 + g], row, 4 + g))
                    .collect::<Result<_, _>>()?;
                part.labeled.push(LabeledSample { t, p, labels });
            }
            "collocation" => part.collocation.push(CollocationPoint { t, p }),
            other => {
                return Err(DatasetError::MalformedRow {
                    row,
                    message: format!("unknown kind `{other}`"),
                })
            }
        }
    }
    Ok(part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::preset_1bus;

    fn small_dataset() -> Dataset {
        let sys = preset_1bus();
        let cfg = SolverConfig {
            rtol: 1e-6,
            atol: 1e-8,
            ..SolverConfig::default()
        };
        generate_dataset(&sys, "1bus", 5, 21, 42, &cfg).unwrap()
    }

    #[test]
    fn default_counts() {
        let ds = small_dataset();
        assert_eq!(ds.n_samples(), 5 * 21);
        assert_eq!(ds.trajectories.len(), 5);
    }

    #[test]
    fn p_inputs_within_range() {
        let ds = small_dataset();
        for traj in &ds.trajectories {
            assert!(traj.p_input >= 0.08 && traj.p_input <= 0.18);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let sys = preset_1bus();
        let cfg = SolverConfig {
            rtol: 1e-6,
            atol: 1e-8,
            ..SolverConfig::default()
        };
        let a = generate_dataset(&sys, "1bus", 3, 11, 7, &cfg).unwrap();
        let b = generate_dataset(&sys, "1bus", 3, 11, 7, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flat_start_and_uniform_grid() {
        let ds = small_dataset();
        for traj in &ds.trajectories {
            assert_eq!(traj.times[0], 0.0);
            assert_eq!(traj.angles[0], vec![0.0]);
            let dt = traj.times[1] - traj.times[0];
            for w in traj.times.windows(2) {
                assert!((w[1] - w[0] - dt).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let ds = small_dataset();
        let noisy = corrupt_with_noise(&ds, 0.0, 9).unwrap();
        for (a, b) in ds.trajectories.iter().zip(noisy.trajectories.iter()) {
            assert_eq!(a.angles, b.angles);
        }
        assert_eq!(noisy.noise, Some(NoiseDescriptor { sigma: 0.0, seed: 9 }));
    }

    #[test]
    fn noise_statistics() {
        let sys = preset_1bus();
        let cfg = SolverConfig {
            rtol: 1e-6,
            atol: 1e-8,
            ..SolverConfig::default()
        };
        let ds = generate_dataset(&sys, "1bus", 100, 201, 1, &cfg).unwrap();
        let sigma = 0.01;
        let noisy = corrupt_with_noise(&ds, sigma, 2).unwrap();
        let mut devs = Vec::new();
        for (a, b) in ds.trajectories.iter().zip(noisy.trajectories.iter()) {
            for (ra, rb) in a.angles.iter().zip(b.angles.iter()) {
                for (x, y) in ra.iter().zip(rb.iter()) {
                    devs.push(y - x);
                }
            }
        }
        let n = devs.len() as f64;
        assert_eq!(devs.len(), 20_100);
        let mean = devs.iter().sum::<f64>() / n;
        let var = devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(std > 0.0098 && std < 0.0102, "std {std}");
        assert!(mean.abs() <= 3.0 * sigma / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn noise_changes_nothing_but_angles() {
        let ds = small_dataset();
        let noisy = corrupt_with_noise(&ds, 0.05, 3).unwrap();
        assert_eq!(ds.n_samples(), noisy.n_samples());
        for (a, b) in ds.trajectories.iter().zip(noisy.trajectories.iter()) {
            assert_eq!(a.times, b.times);
            assert_eq!(a.p_input, b.p_input);
        }
    }

    #[test]
    fn same_noise_seed_same_result() {
        let ds = small_dataset();
        let a = corrupt_with_noise(&ds, 0.01, 5).unwrap();
        let b = corrupt_with_noise(&ds, 0.01, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_counts_match_composition() {
        let ds = small_dataset(); // 5 trajectories × 21 steps = 105 samples
        let part = partition(&ds, 40, 0.25, 11).unwrap();
        assert_eq!(part.n_f(), 40);
        assert_eq!(part.n_u(), 5 + 10); // ICs + round(0.25 · 40)
    }

    #[test]
    fn zero_fraction_keeps_only_initial_conditions() {
        let ds = small_dataset();
        let part = partition(&ds, 40, 0.0, 11).unwrap();
        assert_eq!(part.n_u(), 5);
        for s in &part.labeled {
            assert_eq!(s.t, 0.0);
        }
    }

    #[test]
    fn labeled_interior_subset_of_collocation() {
        let ds = small_dataset();
        let part = partition(&ds, 60, 0.5, 13).unwrap();
        let colloc: std::collections::HashSet<(u64, u64)> = part
            .collocation
            .iter()
            .map(|c| (c.t.to_bits(), c.p.to_bits()))
            .collect();
        for s in part.labeled.iter().filter(|s| s.t > 0.0) {
            assert!(colloc.contains(&(s.t.to_bits(), s.p.to_bits())));
        }
    }

    #[test]
    fn collocation_points_are_distinct_grid_cells() {
        let ds = small_dataset();
        let part = partition(&ds, 105, 0.3, 17).unwrap();
        let set: std::collections::HashSet<(u64, u64)> = part
            .collocation
            .iter()
            .map(|c| (c.t.to_bits(), c.p.to_bits()))
            .collect();
        assert_eq!(set.len(), 105);
    }

    #[test]
    fn partition_is_deterministic() {
        let ds = small_dataset();
        let a = partition(&ds, 30, 0.4, 23).unwrap();
        let b = partition(&ds, 30, 0.4, 23).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_collocation_rejected() {
        let ds = small_dataset();
        assert!(matches!(
            partition(&ds, 106, 0.3, 1),
            Err(DatasetError::CollocationExceedsGrid {
                requested: 106,
                available: 105
            })
        ));
    }

    #[test]
    fn csv_round_trip_dataset() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset_csv(&ds, &path).unwrap();
        let back = load_dataset_csv(&path).unwrap();
        assert_eq!(back.trajectories, ds.trajectories);
        assert_eq!(back.n_gen, ds.n_gen);
    }

    #[test]
    fn csv_round_trip_partition() {
        let ds = small_dataset();
        let part = partition(&ds, 50, 0.3, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("part.csv");
        save_partition_csv(&part, ds.n_gen, &path).unwrap();
        let back = load_partition_csv(&path).unwrap();
        assert_eq!(back, part);
    }

    #[test]
    fn tiny_fragment_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frag.csv");
        std::fs::write(&path, "traj,t,P,delta_1\n0,0.0,0.1,0.0\n").unwrap();
        let ds = load_dataset_csv(&path).unwrap();
        assert_eq!(ds.trajectories.len(), 1);
        assert_eq!(ds.trajectories[0].times, vec![0.0]);
        assert_eq!(ds.trajectories[0].p_input, 0.1);
    }

    #[test]
    fn nan_cell_reports_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "traj,t,P,delta_1\n0,0.0,0.1,0.0\n0,0.1,0.1,NaN\n").unwrap();
        match load_dataset_csv(&path) {
            Err(DatasetError::NonNumericCell { row: 2, col: 4, .. }) => {}
            other => panic!("expected NonNumericCell at row 2, got {other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hdr.csv");
        std::fs::write(&path, "time,P,delta_1\n0.0,0.1,0.0\n").unwrap();
        assert!(matches!(
            load_dataset_csv(&path),
            Err(DatasetError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn one_bus_trajectories_settle_to_arcsin() {
        let sys = preset_1bus();
        let cfg = SolverConfig::default();
        let ds = generate_dataset(&sys, "1bus", 20, 201, 99, &cfg).unwrap();
        for traj in &ds.trajectories {
            let eq = (traj.p_input / 0.2).asin();
            let last = traj.angles.last().unwrap()[0];
            assert!(
                (last - eq).abs() <= 1e-2,
                "P={}: final {last} vs eq {eq}",
                traj.p_input
            );
        }
    }
}
