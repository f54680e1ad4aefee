//! Property suite behind `srlab verify`.

use rand::Rng;
use serde::Serialize;
use srlab_core::frame_bundle::{self, ADMISSIBILITY_TOL};
use srlab_core::roughpath::{self, Level2Path};
use srlab_core::stochastics::{self, stream_rng, SimSpec};
use srlab_core::variational::{self, DistanceOptions};
use srlab_core::{CameronMartinPath, FramePoint, ManifoldModel, PiecewiseLinearPath, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub check: String,
    pub passed: bool,
    /// Worst value observed.
    pub value: f64,
    pub threshold: f64,
}

impl Row {
    fn at_most(check: &str, value: f64, threshold: f64) -> Self {
        Row {
            check: check.to_string(),
            passed: value <= threshold,
            value,
            threshold,
        }
    }
}

pub fn random_points(model: &ManifoldModel, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0x5eed);
    (0..count)
        .map(|_| (0..model.dim_n()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Smooth control with three random Fourier modes per coordinate.
fn random_control(d: usize, segments: usize, rng: &mut impl Rng) -> Result<CameronMartinPath> {
    let coef: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    PiecewiseLinearPath::from_fn(d, 1.0, segments, |t| {
        (0..d)
            .map(|i| {
                (1..=3)
                    .map(|k| coef[3 * i + k - 1] * (k as f64 * std::f64::consts::PI * t).sin() / k as f64)
                    .sum::<f64>()
                    + coef[3 * i] * t
            })
            .collect()
    })
}

type TestFn = fn(&[f64]) -> f64;

const TEST_FUNCTIONS: [TestFn; 5] = [
    |x| x.iter().map(|v| v.sin()).sum(),
    |x| (0.3 * x.iter().sum::<f64>()).exp(),
    |x| x.iter().map(|v| (0.7 * v).cos()).product(),
    |x| x.iter().map(|v| v * v).sum(),
    |x| x[0] * (x[0] + 2.0 * x[x.len() - 1]).sin(),
];

pub fn run(model: &ManifoldModel, points: usize, seed: u64) -> Result<Vec<Row>> {
    let pts = random_points(model, points.max(1), seed);
    let mut rows = Vec::new();
    let rep = model.validate(&pts, &Default::default());
    rows.push(Row {
        check: "model validation".into(),
        passed: rep.passed(),
        value: rep.failures().count() as f64,
        threshold: 0.0,
    });

    let mut rng = stream_rng(seed, 1);
    let mut worst = 0.0_f64;
    for x in &pts {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let u = if model.dim_d() >= 2 {
            FramePoint::rotated(model, x, theta)?
        } else {
            FramePoint::identity(model, x)?
        };
        for f in TEST_FUNCTIONS {
            worst = worst.max(frame_bundle::verify_generator(model, &u, &f, 1e-3)?);
        }
    }
    rows.push(Row::at_most("generator identity", worst, 1e-4));

    let (mut energy_err, mut trip_err) = (0.0_f64, 0.0_f64);
    let mut ortho = 0.0_f64;
    for x in pts.iter().take(10) {
        let u0 = FramePoint::identity(model, x)?;
        let h = random_control(model.dim_d(), 1 << 12, &mut rng)?;
        let e = variational::energy(&h);
        let traj = frame_bundle::develop(model, &u0, &h, None, 1)?;
        ortho = ortho.max(traj.max_orthogonality_defect());
        let pe = variational::energy_path(model, &traj.base(), ADMISSIBILITY_TOL)?;
        energy_err = energy_err.max((pe.energy - e).abs() / e);
        let back = frame_bundle::antidevelop(model, &u0, &traj.base(), ADMISSIBILITY_TOL)?;
        trip_err = trip_err.max(h.sup_distance(&back)? / e.sqrt());
    }
    rows.push(Row::at_most("development energy", energy_err, 1e-6));
    rows.push(Row::at_most("development round trip", trip_err, 1e-4));

    for i in 0..4 {
        let u0 = FramePoint::identity(model, &pts[i % pts.len()])?;
        let tr = stochastics::simulate(model, &u0, &SimSpec::new(0.5, 10, seed), i as u64)?;
        ortho = ortho.max(tr.max_orthogonality_defect());
    }
    rows.push(Row::at_most("frame orthogonality", ortho, 1e-8));

    let (mut jk, mut neg) = (0.0_f64, 0.0_f64);
    for x in pts.iter().take(5) {
        let u0 = FramePoint::identity(model, x)?;
        let h = random_control(model.dim_d(), 32, &mut rng)?;
        let m = variational::malliavin_cov(model, &u0, &h, 1.0, 16)?;
        jk = jk.max(m.jk_residual);
        neg = neg.max(-m.min_eigenvalue);
    }
    rows.push(Row::at_most("malliavin JK residual", jk, 1e-8));
    rows.push(Row::at_most("malliavin PSD (-min eig)", neg, 1e-10));

    let opts = DistanceOptions {
        n_starts: 2,
        ..Default::default()
    };
    let d0 = variational::sr_distance(model, &pts[0], &pts[0], &opts)?.d_sr;
    rows.push(Row::at_most("distance to self", d0, 1e-6));

    rows.extend(rough_path_identities(model.dim_d(), 8, seed)?);
    Ok(rows)
}

fn max_cell_diff(p: &Level2Path, q: &Level2Path) -> f64 {
    let cells = (0..p.cells()).map(|c| p.cell(c).max_diff(&q.cell(c)));
    cells.fold(p.increment(0, p.cells()).max_diff(&q.increment(0, q.cells())), f64::max)
}

/// Chen, geometricity, translation and dilation on a Brownian lift at level `top`.
pub fn rough_path_identities(dim: usize, top: u32, seed: u64) -> Result<Vec<Row>> {
    let mut rng = stream_rng(seed, 2);
    let w = stochastics::sample_brownian(top, dim, 1.0, &mut rng)?;
    let lift = roughpath::lift_dyadic(&w);
    let k = lift.cells();
    let mut chen = 0.0_f64;
    for (i, j) in [(0, k), (0, k / 2), (k / 3, k), (k / 4, 3 * k / 4)] {
        chen = chen.max(lift.increment(i, j).max_diff(&lift.increment_direct(i, j)));
    }
    let h = random_control(dim, 1 << (top - 2), &mut rng)?;
    let shifted = roughpath::translate(&lift, &h)?;
    let sum = roughpath::lift_dyadic(&w.add(&h.refine(4))?);
    let c = 0.37;
    let dil = max_cell_diff(&roughpath::dilate(&lift, c), &roughpath::lift_dyadic(&w.scale(c)));
    Ok(vec![
        Row::at_most("chen identity", chen, 1e-12),
        Row::at_most(
            "geometricity",
            lift.geometricity_defect().max(shifted.geometricity_defect()),
            1e-12,
        ),
        Row::at_most("translation", max_cell_diff(&shifted, &sum), 1e-12),
        Row::at_most("dilation", dil, 1e-12),
    ])
}

pub fn print_table(rows: &[Row]) {
    println!("{:<28} {:>12} {:>10}  result", "check", "value", "limit");
    for r in rows {
        println!(
            "{:<28} {:>12.3e} {:>10.1e}  {}",
            r.check,
            r.value,
            r.threshold,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
}
