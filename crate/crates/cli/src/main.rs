//! `srlab`: command-line driver for the simulation and diagnostics library.
//!
//! Every subcommand resolves a `key = value` configuration (file first, then
//! flags), echoes it into each artifact it writes, and exits with 0 on
//! success, 2 on invalid input and 3 on numerical failure.

mod verify;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use srlab_core::bridge::{self, BridgeSpec, LadderSpec};
use srlab_core::config::KeyValues;
use srlab_core::heatkernel::{self, Bandwidth};
use srlab_core::roughpath::{self, BesovConfig};
use srlab_core::stochastics::{self, SimSpec};
use srlab_core::variational::{self, DistanceOptions};
use srlab_core::{models, report, Error, FramePoint, ManifoldModel, Result};

#[derive(Parser)]
#[command(
    name = "srlab",
    version,
    about = "Hypoelliptic diffusions on sub-Riemannian manifolds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// `key = value` file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long)]
    model: Option<String>,
    /// Side length of the flat torus models.
    #[arg(long)]
    side: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// CSV output (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON run summary.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Worker threads; does not change any output.
    #[arg(long, env = "SRLAB_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check frame, connection and bracket generation at random points.
    ValidateModel {
        #[command(flatten)]
        common: Common,
        /// Number of random points.
        #[arg(long)]
        points: Option<String>,
    },
    /// Simulate one trajectory (n = 1) or an ensemble of endpoints.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        level: Option<String>,
        #[arg(long)]
        horizon: Option<String>,
        /// `on` adds the drift `V = Z_1`; the drift correction is always present.
        #[arg(long)]
        drift: Option<String>,
        /// `csv` or `binary` (ensembles only; needs `--out`).
        #[arg(long)]
        format: Option<String>,
    },
    /// Sub-Riemannian distance by multistart energy minimization.
    Distance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        starts: Option<String>,
        #[arg(long)]
        controls: Option<String>,
    },
    /// Monte Carlo heat kernel estimate with a positivity certificate.
    Heatkernel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        level: Option<String>,
        /// `plug-in` or a positive number.
        #[arg(long)]
        bandwidth: Option<String>,
    },
    /// `ε² log p` along a list of ε against `-d²/2`.
    LdpCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        a: Option<String>,
        /// Comma-separated ε values.
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        level: Option<String>,
        /// Distance `d(x, a)`; the model's closed form or the optimizer when absent.
        #[arg(long)]
        d: Option<String>,
        #[arg(long)]
        bandwidth: Option<String>,
    },
    /// Sample bridges by endpoint rejection.
    Bridge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        delta: Option<String>,
        /// Accepted bridges wanted.
        #[arg(long)]
        n: Option<String>,
        /// Maximum number of proposals.
        #[arg(long)]
        budget: Option<String>,
        #[arg(long)]
        level: Option<String>,
        /// Stored cells per path (power of two).
        #[arg(long)]
        record: Option<String>,
        /// Flat models: compare the marginal at this time with the exact bridge law.
        #[arg(long)]
        t_mid: Option<String>,
    },
    /// Bridge concentration around the minimizing geodesic along an ε ladder.
    Concentration {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        eps: Option<String>,
        /// Acceptance radius as a multiple of ε.
        #[arg(long)]
        delta_factor: Option<String>,
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        budget: Option<String>,
        #[arg(long)]
        level: Option<String>,
        /// Rotations of the geodesic used when the model symmetry fixes x and a.
        #[arg(long)]
        orbit: Option<String>,
        #[arg(long)]
        starts: Option<String>,
    },
    /// Chen, geometricity, translation and dilation identities, and dyadic convergence.
    RoughpathCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dim: Option<String>,
        /// Finest dyadic level.
        #[arg(long)]
        top: Option<String>,
        /// Brownian samples for the dyadic study.
        #[arg(long)]
        samples: Option<String>,
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long)]
        m: Option<String>,
    },
    /// Run the property suite for a model and print a pass/fail table.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        points: Option<String>,
    },
}

/// Resolved configuration plus the run-time-only settings.
struct Run {
    kv: KeyValues,
    out: Option<PathBuf>,
    json: Option<PathBuf>,
}

impl Run {
    fn new(name: &str, common: Common, flags: Vec<(&str, Option<String>)>, allowed: &[&str]) -> Result<Self> {
        let mut kv = match &common.config {
            Some(p) => KeyValues::parse(&std::fs::read_to_string(p).map_err(|e| Error::Config {
                line: 0,
                field: p.display().to_string(),
                message: e.to_string(),
            })?)?,
            None => KeyValues::default(),
        };
        let mut all = vec![("model", common.model), ("side", common.side), ("seed", common.seed)];
        all.extend(flags);
        for (k, v) in all {
            if let Some(v) = v {
                kv.set(k, v);
            }
        }
        kv.set("command", name);
        let mut keys = vec!["command", "model", "side", "seed"];
        keys.extend_from_slice(allowed);
        kv.ensure_known(&keys)?;
        if let Some(w) = common.workers {
            // A second initialization only happens in tests; the first one wins.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
        }
        Ok(Run {
            kv,
            out: common.out,
            json: common.json,
        })
    }

    fn model(&self) -> Result<ManifoldModel> {
        if !self.kv.contains("model") {
            return Err(Error::Config {
                line: 0,
                field: "model".into(),
                message: format!("missing (known: {})", models::BUILTIN_NAMES.join(", ")),
            });
        }
        models::from_config(&self.kv)
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        self.kv.get_or(key, default)
    }

    fn seed(&self) -> Result<u64> {
        self.get("seed", 0)
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.kv.get(key)?.ok_or_else(|| Error::Config {
            line: 0,
            field: key.into(),
            message: "missing".into(),
        })
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.kv.get_list(key)
    }

    fn point(&self, key: &str, model: &ManifoldModel, default_origin: bool) -> Result<Vec<f64>> {
        let n = model.dim_n();
        let p = match self.list(key)? {
            Some(p) => p,
            None if default_origin => vec![0.0; n],
            None => {
                return Err(Error::Config {
                    line: 0,
                    field: key.into(),
                    message: "missing".into(),
                })
            }
        };
        if p.len() != n {
            return Err(Error::Config {
                line: self.kv.line_of(key),
                field: key.into(),
                message: format!("expected {n} coordinates, got {}", p.len()),
            });
        }
        Ok(p)
    }

    fn bandwidth(&self) -> Result<Bandwidth> {
        match self.kv.raw("bandwidth") {
            None | Some("plug-in") => Ok(Bandwidth::PlugIn),
            Some(_) => {
                let h: f64 = self.required("bandwidth")?;
                if h.is_nan() || h <= 0.0 {
                    return Err(Error::Config {
                        line: self.kv.line_of("bandwidth"),
                        field: "bandwidth".into(),
                        message: "must be positive or `plug-in`".into(),
                    });
                }
                Ok(Bandwidth::Scalar(h))
            }
        }
    }

    fn csv_sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout())),
        })
    }

    fn summary<T: serde::Serialize>(&self, value: &T) -> Result<()> {
        if let Some(p) = &self.json {
            report::write_json(BufWriter::new(File::create(p)?), &self.kv, value)?;
        }
        Ok(())
    }
}

fn f(v: f64) -> String {
    v.to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        // A closed downstream pipe (`srlab ... | head`) is not a failure.
        Err(e) if e.is_broken_pipe() => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::ValidateModel { common, points } => {
            let run = Run::new("validate-model", common, vec![("points", points)], &["points"])?;
            validate_model(&run)
        }
        Command::Simulate {
            common,
            x,
            eps,
            n,
            level,
            horizon,
            drift,
            format,
        } => {
            let flags = vec![
                ("x", x),
                ("eps", eps),
                ("n", n),
                ("level", level),
                ("horizon", horizon),
                ("drift", drift),
                ("format", format),
            ];
            let run = Run::new(
                "simulate",
                common,
                flags,
                &["x", "eps", "n", "level", "horizon", "drift", "format"],
            )?;
            simulate(&run)
        }
        Command::Distance {
            common,
            x,
            a,
            starts,
            controls,
        } => {
            let flags = vec![("x", x), ("a", a), ("starts", starts), ("controls", controls)];
            let run = Run::new("distance", common, flags, &["x", "a", "starts", "controls"])?;
            distance(&run)
        }
        Command::Heatkernel {
            common,
            x,
            a,
            eps,
            n,
            level,
            bandwidth,
        } => {
            let flags = vec![
                ("x", x),
                ("a", a),
                ("eps", eps),
                ("n", n),
                ("level", level),
                ("bandwidth", bandwidth),
            ];
            let run = Run::new(
                "heatkernel",
                common,
                flags,
                &["x", "a", "eps", "n", "level", "bandwidth"],
            )?;
            heat_kernel(&run)
        }
        Command::LdpCurve {
            common,
            x,
            a,
            eps,
            n,
            level,
            d,
            bandwidth,
        } => {
            let flags = vec![
                ("x", x),
                ("a", a),
                ("eps", eps),
                ("n", n),
                ("level", level),
                ("d", d),
                ("bandwidth", bandwidth),
            ];
            let run = Run::new(
                "ldp-curve",
                common,
                flags,
                &["x", "a", "eps", "n", "level", "d", "bandwidth"],
            )?;
            ldp_curve(&run)
        }
        Command::Bridge {
            common,
            x,
            a,
            eps,
            delta,
            n,
            budget,
            level,
            record,
            t_mid,
        } => {
            let flags = vec![
                ("x", x),
                ("a", a),
                ("eps", eps),
                ("delta", delta),
                ("n", n),
                ("budget", budget),
                ("level", level),
                ("record", record),
                ("t_mid", t_mid),
            ];
            let keys = ["x", "a", "eps", "delta", "n", "budget", "level", "record", "t_mid"];
            let run = Run::new("bridge", common, flags, &keys)?;
            bridges(&run)
        }
        Command::Concentration {
            common,
            x,
            a,
            eps,
            delta_factor,
            n,
            budget,
            level,
            orbit,
            starts,
        } => {
            let flags = vec![
                ("x", x),
                ("a", a),
                ("eps", eps),
                ("delta_factor", delta_factor),
                ("n", n),
                ("budget", budget),
                ("level", level),
                ("orbit", orbit),
                ("starts", starts),
            ];
            let keys = [
                "x",
                "a",
                "eps",
                "delta_factor",
                "n",
                "budget",
                "level",
                "orbit",
                "starts",
            ];
            let run = Run::new("concentration", common, flags, &keys)?;
            concentration(&run)
        }
        Command::RoughpathCheck {
            common,
            dim,
            top,
            samples,
            alpha,
            m,
        } => {
            let flags = vec![
                ("dim", dim),
                ("top", top),
                ("samples", samples),
                ("alpha", alpha),
                ("m", m),
            ];
            let run = Run::new(
                "roughpath-check",
                common,
                flags,
                &["dim", "top", "samples", "alpha", "m"],
            )?;
            roughpath_check(&run)
        }
        Command::Verify { common, points } => {
            let run = Run::new("verify", common, vec![("points", points)], &["points"])?;
            let model = run.model()?;
            let rows = verify::run(&model, run.get("points", 20)?, run.seed()?)?;
            verify::print_table(&rows);
            if run.out.is_some() {
                report::write_csv(run.csv_sink()?, &run.kv, &rows)?;
            }
            run.summary(&rows)?;
            Ok(if rows.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
    }
}

fn validate_model(run: &Run) -> Result<ExitCode> {
    let model = run.model()?;
    let points = verify::random_points(&model, run.get("points", 20)?, run.seed()?);
    let rep = model.validate(&points, &Default::default());
    report::write_csv(run.csv_sink()?, &run.kv, &rep.checks)?;
    run.summary(&rep)?;
    Ok(if rep.passed() {
        ExitCode::SUCCESS
    } else {
        for c in rep.failures() {
            eprintln!("failed: {} at point {}: {}", c.check, c.point, c.detail);
        }
        ExitCode::from(3)
    })
}

fn simulate(run: &Run) -> Result<ExitCode> {
    let model = run.model()?;
    let x = run.point("x", &model, true)?;
    let u0 = FramePoint::identity(&model, &x)?;
    let mut spec =
        SimSpec::new(run.get("eps", 1.0)?, run.get("level", 10)?, run.seed()?).with_horizon(run.get("horizon", 1.0)?);
    match run.kv.raw("drift").unwrap_or("off") {
        "off" => {}
        "on" => {
            let m = model.clone();
            spec = spec.with_drift(Arc::new(move |p: &[f64], out: &mut [f64]| {
                let n = m.dim_n();
                let mut fr = vec![0.0; n * n];
                m.frame_into(p, &mut fr);
                // Column 0 of the row-major frame is Z_1.
                for k in 0..n {
                    out[k] = fr[k * n];
                }
            }));
        }
        other => {
            return Err(Error::Config {
                line: run.kv.line_of("drift"),
                field: "drift".into(),
                message: format!("expected `on` or `off`, got `{other}`"),
            })
        }
    }
    let count: usize = run.get("n", 1)?;
    let format = run.kv.raw("format").unwrap_or("csv");
    if count == 1 && format == "csv" {
        let traj = stochastics::simulate(&model, &u0, &spec, 0)?;
        let mut w = run.csv_sink()?;
        report::write_header(&mut w, &run.kv)?;
        traj.write_csv(&mut w)?;
        run.summary(
            &json!({ "end": traj.x(traj.len() - 1), "orthogonality_defect": traj.max_orthogonality_defect() }),
        )?;
        return Ok(ExitCode::SUCCESS);
    }
    let ens = stochastics::generate_ensemble(&model, &u0, &spec, count, false)?;
    match format {
        "csv" => {
            let mut w = run.csv_sink()?;
            report::write_header(&mut w, &run.kv)?;
            ens.write_csv(&mut w)?;
        }
        "binary" => {
            let Some(p) = &run.out else {
                return Err(Error::InvalidInput("binary output needs --out".into()));
            };
            ens.write_binary(BufWriter::new(File::create(p)?))?;
        }
        other => {
            return Err(Error::Config {
                line: run.kv.line_of("format"),
                field: "format".into(),
                message: format!("expected `csv` or `binary`, got `{other}`"),
            })
        }
    }
    run.summary(&json!({ "count": ens.len(), "dim": ens.dim }))?;
    Ok(ExitCode::SUCCESS)
}

fn distance_options(run: &Run) -> Result<DistanceOptions> {
    let defaults = DistanceOptions::default();
    Ok(DistanceOptions {
        n_starts: run.get("starts", defaults.n_starts)?,
        n_controls: run.get("controls", defaults.n_controls)?,
        seed: run.seed()?,
        ..defaults
    })
}

fn path_table(run: &Run, path: &srlab_core::BasePath) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.n()).map(|k| format!("x{k}")));
    let rows = (0..path.len()).map(|i| {
        let mut r = vec![f(path.times()[i])];
        r.extend(path.point(i).iter().map(|&v| f(v)));
        r
    });
    report::write_table(run.csv_sink()?, &run.kv, &header, rows)
}

fn distance(run: &Run) -> Result<ExitCode> {
    let model = run.model()?;
    let x = run.point("x", &model, true)?;
    let a = run.point("a", &model, false)?;
    let res = variational::sr_distance(&model, &x, &a, &distance_options(run)?)?;
    path_table(run, &res.path)?;
    run.summary(&res)?;
    eprintln!("d = {} (energy {}, converged {})", res.d_sr, res.energy, res.converged);
    Ok(ExitCode::SUCCESS)
}

fn heat_kernel(run: &Run) -> Result<ExitCode> {
    let model = run.model()?;
    let x = run.point("x", &model, true)?;
    let a = run.point("a", &model, false)?;
    let eps: f64 = run.required("eps")?;
    let spec = SimSpec::new(eps, run.get("level", 10)?, run.seed()?).with_horizon(1.0);
    let pos = heatkernel::positivity(&model, &x, &a, &spec, run.get("n", 100_000)?, &run.bandwidth()?)?;
    let e = &pos.estimate;
    let header: Vec<String> = ["eps", "p_hat", "stderr", "lower_bound", "certified"]
        .map(String::from)
        .to_vec();
    let row = vec![
        f(e.eps),
        f(e.p_hat),
        f(e.stderr),
        f(pos.lower_bound),
        pos.certified.to_string(),
    ];
    report::write_table(run.csv_sink()?, &run.kv, &header, [row])?;
    run.summary(&pos)?;
    Ok(ExitCode::SUCCESS)
}

fn distance_to(run: &Run, model: &ManifoldModel, x: &[f64], a: &[f64]) -> Result<f64> {
    if let Some(d) = run.kv.get::<f64>("d")? {
        return Ok(d);
    }
    if let Some(oracle) = &model.oracles().distance {
        return Ok(oracle(x, a));
    }
    Ok(variational::sr_distance(model, x, a, &distance_options(run)?)?.d_sr)
}

fn ldp_curve(run: &Run) -> Result<ExitCode> {
    let model = run.model()?;
    let x = run.point("x", &model, true)?;
    let a = run.point("a", &model, false)?;
    let eps = run.list("eps")?.unwrap_or_else(|| vec![0.5, 0.35, 0.25]);
    let d = distance_to(run, &model, &x, &a)?;
    let curve = heatkernel::ldp_curve(
        &model,
        &x,
        &a,
        &eps,
        run.get("n", 200_000)?,
        run.get("level", 12)?,
        run.seed()?,
        d,
        &run.bandwidth()?,
    )?;
    let header: Vec<String> = ["eps", "p_hat", "stderr", "eps2logp", "target", "feasible"]
        .map(String::from)
        .to_vec();
    let rows = curve.rows.iter().map(|r| {
        vec![
            f(r.eps),
            f(r.p_hat),
            f(r.stderr),
            f(r.eps2logp),
            f(r.target),
            r.feasible.to_string(),
        ]
    });
    report::write_table(run.csv_sink()?, &run.kv, &header, rows)?;
    run.summary(&curve)?;
    Ok(ExitCode::SUCCESS)
}

fn bridges(run: &Run) -> Result<ExitCode> {
    let model = run.model()?;
    let x = run.point("x", &model, true)?;
    let a = run.point("a", &model, false)?;
    let eps: f64 = run.required("eps")?;
    let mut spec = BridgeSpec::new(
        eps,
        run.get("delta", 0.1 * eps)?,
        run.get("level", 10)?,
        run.seed()?,
        run.get("n", 1000)?,
        run.get("budget", 1_000_000)?,
    );
    spec.record = run.get("record", spec.record)?;
    let ens = bridge::sample_bridges(&model, &x, &a, &spec)?;
    let n = model.dim_n();
    let mut header = vec!["path".to_string(), "proposal".to_string(), "t".to_string()];
    header.extend((1..=n).map(|k| format!("x{k}")));
    let rows = (0..ens.len()).flat_map(|i| {
        let ens = &ens;
        ens.times.iter().enumerate().map(move |(j, &t)| {
            let mut r = vec![i.to_string(), ens.indices[i].to_string(), f(t)];
            r.extend(ens.point(i, j).iter().map(|&v| f(v)));
            r
        })
    });
    report::write_table(run.csv_sink()?, &run.kv, &header, rows)?;
    let fdd = match run.kv.get::<f64>("t_mid")? {
        Some(t) => Some(bridge::fdd_consistency(&model, &x, &a, t, &spec)?),
        None => None,
    };
    if let Some(r) = &fdd {
        eprintln!(
            "max KS = {} ({} accepted, pass {}, inconclusive {})",
            r.max_ks, r.accepted, r.pass, r.inconclusive
        );
    }
    run.summary(&json!({
        "accepted": ens.len(),
        "proposals": ens.proposals,
        "acceptance_rate": ens.acceptance_rate,
        "max_endpoint_error": ens.max_endpoint_error(&model),
        "fdd": fdd,
    }))?;
    eprintln!("accepted {} of {} proposals", ens.len(), ens.proposals);
    Ok(ExitCode::SUCCESS)
}

fn concentration(run: &Run) -> Result<ExitCode> {
    let model = run.model()?;
    let x = run.point("x", &model, true)?;
    let a = run.point("a", &model, false)?;
    let eps = run.list("eps")?.unwrap_or_else(|| vec![0.5, 0.35, 0.25]);
    let geo = variational::sr_distance(&model, &x, &a, &distance_options(run)?)?;
    let ladder = LadderSpec {
        delta_factor: run.get("delta_factor", 0.1)?,
        level: run.get("level", 8)?,
        seed: run.seed()?,
        n_target: run.get("n", 1000)?,
        budget: run.get("budget", 2_000_000)?,
        record: 64,
    };
    let curve = bridge::concentration_curve(&model, &x, &a, &eps, &geo.path, run.get("orbit", 16)?, &ladder)?;
    report::write_csv(run.csv_sink()?, &run.kv, &curve.rows)?;
    run.summary(&curve)?;
    Ok(ExitCode::SUCCESS)
}

fn roughpath_check(run: &Run) -> Result<ExitCode> {
    let dim: usize = run.get("dim", 2)?;
    let top: u32 = run.get("top", 10)?;
    let seed = run.seed()?;
    if dim == 0 || !(5..=16).contains(&top) {
        return Err(Error::InvalidInput("need dim >= 1 and 5 <= top <= 16".into()));
    }
    let cfg = BesovConfig::new(run.get("alpha", 0.35)?, run.get("m", 25)?)?;
    let checks = verify::rough_path_identities(dim, top, seed)?;
    for c in &checks {
        eprintln!(
            "{:<24} {:>12.3e}  {}",
            c.check,
            c.value,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let rows = roughpath::dyadic_cauchy(dim, 4..=top - 1, top, run.get("samples", 50)?, seed, &cfg)?;
    report::write_csv(run.csv_sink()?, &run.kv, &rows)?;
    run.summary(&json!({ "identities": checks, "cauchy": rows }))?;
    Ok(if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}
