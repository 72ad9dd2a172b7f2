use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rnqg::linalg::{parse_matrix, spectral_abscissa};
use rnqg::riccati::{care_residual, solve_care, CareProblem, RiccatiError};
use rnqg::sdc::PlantModel;
use rnqg::simulate::cases::{case_spec, pendulum_domain, CaseSpec, DesignChoices, Experiment, DEFAULT_TRAIN_SEED};
use rnqg::simulate::{csv_string, ControllerKind, DisturbanceProfile, Metrics, MetricsRecord, SimError};
use rnqg::value_approx::{io, BasisSpec, TrainConfig, ValueError, WeightSchedule};
use rnqg::{DMatrix, DVector};
use serde_json::json;

use crate::config::{self, Config};
use crate::manifest::RunManifest;
use crate::stats::summarize;
use crate::{CareArgs, Cli, Command, CompareArgs, Format, GainArgs, SimulateArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad config, arguments or missing inputs.
    Config(String),
    /// Solver or controller failure, or an output that could not be written.
    Failure(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_out(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Failure(other.to_string()),
    }
}

fn train_error(e: ValueError) -> CliError {
    match e {
        ValueError::InvalidConfig(_) | ValueError::InvalidBasis(_) | ValueError::DimensionMismatch(_) => {
            CliError::Config(e.to_string())
        }
        other => CliError::Failure(other.to_string()),
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let loaded = config::load(cli.config.as_deref()).map_err(CliError::Config)?;
    let ctx = Ctx { cli, cfg: &loaded.config, raw: &loaded.raw };
    match &cli.command {
        Command::Simulate(a) => ctx.with_manifest("simulate", vec![ctx.seed(0)], |m| ctx.simulate(a, m)),
        Command::Train(a) => ctx.with_manifest("train", vec![ctx.seed(DEFAULT_TRAIN_SEED)], |m| ctx.train(a, m)),
        Command::Compare(a) => {
            let seeds = parse_seeds(&a.seeds)?;
            ctx.with_manifest("compare", seeds.clone(), |m| ctx.compare(a, &seeds, m))
        }
        Command::Gain(a) => ctx.gain(a),
        Command::CareSolve(a) => care_solve(a, cli.quiet),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: &'a Config,
    raw: &'a [u8],
}

impl Ctx<'_> {
    fn seed(&self, default: u64) -> u64 {
        self.cli.seed.unwrap_or(default)
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.cli.quiet {
            println!("{}", line.as_ref());
        }
    }

    /// Writes the manifest before running `body` and again afterwards.
    fn with_manifest(
        &self,
        command: &str,
        seeds: Vec<u64>,
        body: impl FnOnce(&mut RunManifest) -> Result<()>,
    ) -> Result<()> {
        let mut m = RunManifest::begin(command, self.cli.config.as_deref(), self.raw, seeds, &self.cli.out);
        m.write().map_err(|e| CliError::Failure(format!("cannot write manifest: {e}")))?;
        let out = body(&mut m);
        let code = out.as_ref().map_or_else(|e| i32::from(e.code()), |_| 0);
        m.finish(code).map_err(|e| CliError::Failure(format!("cannot write manifest: {e}")))?;
        out
    }

    fn experiment(&self, case: Option<&CaseSpec>, seed: u64) -> Experiment {
        let c = self.cfg;
        let choices = DesignChoices {
            sigma_l: c.noise.sigma_l,
            h_level: c.noise.h_level,
            gamma1: c.weights.gamma1,
            gamma2: c.weights.gamma2,
        };
        let mut exp = Experiment::new(c.plant.pendulum, choices);
        let (r, s) = (c.weights.r, c.weights.s_scale);
        exp.weights.r_of_x = Arc::new(move |_| DMatrix::from_element(1, 1, r));
        exp.weights.s_of_x = Arc::new(move |_| DMatrix::identity(4, 4) * s);
        exp = match case {
            Some(spec) => exp.with_case(spec, seed),
            None => {
                exp.sim.noise.seed = seed;
                exp
            }
        };
        let sim = &c.sim;
        exp.sim.dt = sim.dt;
        exp.sim.t_end = sim.t_end;
        exp.sim.integrator = sim.integrator;
        if let Some(x0) = sim.x0 {
            exp.sim.x0 = DVector::from_iterator(4, x0.iter().map(|a| a.0));
        }
        if let Some(d) = sim.disturbance {
            exp.sim.disturbance = d;
        } else if case.is_none() {
            exp.sim.disturbance = DisturbanceProfile::none();
        }
        if let Some(q) = c.noise.state_noise_std {
            exp.sim.noise.state_noise_std = q;
        }
        exp.sim.noise.measurement_noise_std = c.noise.measurement_noise_std;
        exp.sim.resolve_every = sim.resolve_every;
        exp.sim.substeps = sim.substeps;
        exp.sim.stiffness_target = sim.stiffness_target;
        exp.sim.noise_into_plant = sim.noise_into_plant;
        exp.sim.record_gains = sim.record_gains;
        exp
    }

    fn train_config(&self, seed: u64) -> Result<(BasisSpec, TrainConfig)> {
        let t = &self.cfg.train;
        let basis = BasisSpec::monomials(4, t.degree).map_err(train_error)?;
        let domain = match &t.domain {
            Some(d) => d.iter().map(|[lo, hi]| (lo.0, hi.0)).collect(),
            None => pendulum_domain(),
        };
        let cfg = TrainConfig {
            horizon: t.horizon,
            eta: t.eta.unwrap_or(40 * basis.count()),
            domain,
            seed,
            mode: t.mode,
            resample_each_step: t.resample_each_step,
        };
        Ok((basis, cfg))
    }

    fn trained(&self, exp: &Experiment, kind: ControllerKind, seed: u64) -> Result<WeightSchedule> {
        let (basis, cfg) = self.train_config(seed)?;
        exp.train(kind, &basis, &cfg, self.cfg.train.dt).map_err(train_error)
    }

    fn simulate(&self, a: &SimulateArgs, m: &mut RunManifest) -> Result<()> {
        let kind = ControllerKind::from(a.controller);
        let spec = match a.case {
            None => None,
            Some(c) => Some(
                u8::try_from(c)
                    .ok()
                    .and_then(case_spec)
                    .ok_or_else(|| CliError::Config(format!("--case: unknown case {c} (expected 1, 2 or 3)")))?,
            ),
        };
        if let Some(spec) = &spec {
            if !spec.controllers.contains(&kind) {
                return Err(CliError::Config(format!(
                    "--controller: case {} does not compare {}",
                    spec.id,
                    kind.name()
                )));
            }
        }
        let schedule = match (&a.schedule, kind.is_approx()) {
            (Some(p), true) => Some(
                io::load(p).map_err(|e| CliError::Config(format!("--schedule {}: {e}", p.display())))?,
            ),
            (None, true) => {
                return Err(CliError::Config(format!(
                    "--controller {} needs a weight schedule: run `rnqg train --controller {}` and pass \
                     --schedule <file>",
                    kind.name(),
                    kind.name()
                )))
            }
            (Some(_), false) => return Err(CliError::Config("--schedule only applies to approximate controllers".into())),
            (None, false) => None,
        };
        let seed = self.seed(0);
        let exp = self.experiment(spec.as_ref(), seed);
        let case_id = spec.as_ref().map_or(0, |s| s.id);
        let stem = match case_id {
            0 => format!("custom_{}_seed{seed}", kind.name()),
            c => format!("case{c}_{}_seed{seed}", kind.name()),
        };
        let csv_path = m.output(&format!("{stem}.csv"));
        let (rec, metrics) = match exp.run(kind, schedule.as_ref()) {
            Ok(r) => r,
            Err(e) => {
                if let Some(partial) = e.partial() {
                    write_out(&csv_path, csv_string(partial).as_bytes())?;
                }
                return Err(sim_error(e));
            }
        };
        write_out(&csv_path, csv_string(&rec).as_bytes())?;
        let record = metrics_record(case_id, kind, seed, &metrics);
        let json = serde_json::to_string_pretty(&record).expect("metrics serialize") + "\n";
        write_out(&m.output(&format!("{stem}.metrics.json")), json.as_bytes())?;
        self.say(format!(
            "{}: IAE {:.4} ITAE {:.4} CEF {:.4} ({} samples) -> {}",
            kind.name(),
            metrics.iae,
            metrics.itae,
            metrics.cef,
            rec.len(),
            csv_path.display()
        ));
        Ok(())
    }

    fn train(&self, a: &TrainArgs, m: &mut RunManifest) -> Result<()> {
        let kind = ControllerKind::from(a.controller);
        if !kind.is_approx() {
            return Err(CliError::Config(format!(
                "--controller {}: only sdre-approx and rnqg-approx are trained",
                kind.name()
            )));
        }
        let seed = self.seed(DEFAULT_TRAIN_SEED);
        let exp = self.experiment(None, seed);
        let schedule = self.trained(&exp, kind, seed)?;
        for (i, d) in schedule.step_changes.iter().enumerate() {
            // step_changes[i] compares W at step N−1−i with the one before it.
            self.say(format!("step {:>6}  |W_k - W_k+1| = {d:.6e}", schedule.horizon - 1 - i));
        }
        let name = a.name.clone().unwrap_or_else(|| format!("{}.schedule", kind.name()));
        if name.contains(['/', '\\']) {
            return Err(CliError::Config("--name must be a bare file name".into()));
        }
        let path = m.output(&name);
        m.outputs.push(path.with_extension("json").file_name().unwrap().to_string_lossy().into_owned());
        fs::create_dir_all(&self.cli.out).map_err(|e| CliError::Failure(e.to_string()))?;
        io::save(&schedule, &path).map_err(|e| CliError::Failure(format!("cannot write schedule: {e}")))?;
        self.say(format!(
            "{} schedule: {} terms, horizon {}, eta {}, converged {} -> {}",
            kind.name(),
            schedule.basis.count(),
            schedule.horizon,
            schedule.eta,
            schedule.converged,
            path.display()
        ));
        Ok(())
    }

    fn compare(&self, a: &CompareArgs, seeds: &[u64], m: &mut RunManifest) -> Result<()> {
        let cases: Vec<CaseSpec> = split_list(&a.cases)
            .map(|c| {
                c.parse::<u8>()
                    .ok()
                    .and_then(case_spec)
                    .ok_or_else(|| CliError::Config(format!("--cases: unknown case {c:?}")))
            })
            .collect::<Result<_>>()?;
        if cases.is_empty() {
            return Err(CliError::Config("--cases is empty".into()));
        }
        let wanted: Vec<ControllerKind> = if a.controllers.trim() == "all" {
            ControllerKind::ALL.to_vec()
        } else {
            split_list(&a.controllers)
                .map(|c| {
                    ControllerKind::parse(c)
                        .ok_or_else(|| CliError::Config(format!("--controllers: unknown controller {c:?}")))
                })
                .collect::<Result<_>>()?
        };
        let rows: Vec<(u8, ControllerKind)> = cases
            .iter()
            .flat_map(|spec| {
                ControllerKind::ALL
                    .into_iter()
                    .filter(|k| wanted.contains(k) && spec.controllers.contains(k))
                    .map(move |k| (spec.id, k))
            })
            .collect();
        if rows.is_empty() {
            return Err(CliError::Config("no (case, controller) pair to compare".into()));
        }

        let base = self.experiment(None, 0);
        let mut schedules = BTreeMap::new();
        for (kind, given) in [(ControllerKind::SdreApprox, &a.sdre_schedule), (ControllerKind::RnqgApprox, &a.rnqg_schedule)] {
            if !rows.iter().any(|(_, k)| *k == kind) {
                continue;
            }
            let s = match given {
                Some(p) => io::load(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
                None => {
                    let seed = self.seed(DEFAULT_TRAIN_SEED);
                    self.say(format!("training {} (seed {seed})", kind.name()));
                    let s = self.trained(&base, kind, seed)?;
                    let path = m.output(&format!("{}.schedule", kind.name()));
                    fs::create_dir_all(&self.cli.out).map_err(|e| CliError::Failure(e.to_string()))?;
                    io::save(&s, &path).map_err(|e| CliError::Failure(format!("cannot write schedule: {e}")))?;
                    s
                }
            };
            schedules.insert(kind, s);
        }

        let jobs: Vec<(u8, ControllerKind, u64)> =
            rows.iter().flat_map(|&(c, k)| seeds.iter().map(move |&s| (c, k, s))).collect();
        let results: Vec<Result<MetricsRecord>> = jobs
            .par_iter()
            .map(|&(case, kind, seed)| {
                let exp = self.experiment(case_spec(case).as_ref(), seed);
                let (_, metrics) = exp
                    .run(kind, schedules.get(&kind))
                    .map_err(|e| CliError::Failure(format!("case {case} {} seed {seed}: {e}", kind.name())))?;
                let rec = metrics_record(case, kind, seed, &metrics);
                let json = serde_json::to_string_pretty(&rec).expect("metrics serialize") + "\n";
                let job = Path::new(&self.cli.out).join("jobs").join(format!("case{case}_{}_seed{seed}.json", kind.name()));
                write_out(&job, json.as_bytes())?;
                Ok(rec)
            })
            .collect();
        m.outputs.push("jobs/".into());

        // Reduce in (case, controller, seed) order regardless of completion order.
        let mut by_row: BTreeMap<(u8, usize), Vec<MetricsRecord>> = BTreeMap::new();
        for r in results {
            let r = r?;
            let kind = ControllerKind::parse(&r.controller).expect("known controller");
            let order = ControllerKind::ALL.iter().position(|k| *k == kind).unwrap();
            by_row.entry((r.case, order)).or_default().push(r);
        }
        let mut csv = String::from("case,controller,seeds,iae_median,iae_iqr,itae_median,itae_iqr,cef_median,cef_iqr\n");
        let mut text = format!(
            "{:<5} {:<12} {:>5} {:>12} {:>10} {:>12} {:>10} {:>12} {:>10}\n",
            "case", "controller", "seeds", "IAE med", "IAE IQR", "ITAE med", "ITAE IQR", "CEF med", "CEF IQR"
        );
        for ((case, order), recs) in &by_row {
            let name = ControllerKind::ALL[*order].name();
            let col = |f: fn(&MetricsRecord) -> f64| summarize(&recs.iter().map(f).collect::<Vec<_>>());
            let (iae, itae, cef) = (col(|r| r.iae), col(|r| r.itae), col(|r| r.cef));
            csv.push_str(&format!(
                "{case},{name},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                recs.len(),
                iae.median,
                iae.iqr,
                itae.median,
                itae.iqr,
                cef.median,
                cef.iqr
            ));
            text.push_str(&format!(
                "{case:<5} {name:<12} {:>5} {:>12.4} {:>10.4} {:>12.4} {:>10.4} {:>12.4} {:>10.4}\n",
                recs.len(),
                iae.median,
                iae.iqr,
                itae.median,
                itae.iqr,
                cef.median,
                cef.iqr
            ));
        }
        write_out(&m.output("compare.csv"), csv.as_bytes())?;
        write_out(&m.output("compare.txt"), text.as_bytes())?;
        if !self.cli.quiet {
            print!("{text}");
        }
        Ok(())
    }

    fn gain(&self, a: &GainArgs) -> Result<()> {
        let kind = ControllerKind::from(a.controller);
        if kind.is_approx() {
            return Err(CliError::Config("gain: choose sdre, h2hinf or rnqg".into()));
        }
        let state = config::parse_state(&a.state).map_err(|e| CliError::Config(format!("--state: {e}")))?;
        if state.len() != 4 {
            return Err(CliError::Config(format!("--state: expected 4 entries, got {}", state.len())));
        }
        let x = DVector::from_vec(state);
        let exp = self.experiment(None, 0);
        let ctrl = rnqg::simulate::GainController::new(
            match kind {
                ControllerKind::Sdre => rnqg::synthesis::Scheme::Sdre,
                ControllerKind::H2hinf => rnqg::synthesis::Scheme::H2Hinf,
                _ => rnqg::synthesis::Scheme::Rnqg,
            },
            exp.plant.clone() as Arc<dyn PlantModel>,
            exp.weights.clone(),
            exp.intensities.clone(),
            exp.synthesis,
        );
        let sol = ctrl.solve_at(&x).map_err(CliError::Failure)?;
        let d = sol.diagnostics;
        match a.format {
            Format::Json => {
                let out = json!({
                    "controller": kind.name(),
                    "state": x.as_slice(),
                    "k": sol.k_gain.row(0).iter().collect::<Vec<_>>(),
                    "p": rows(&sol.p_mat),
                    "u": sol.control(&x)[0],
                    "riccati_residual": d.riccati_residual,
                    "gamma_form_residual": d.gamma_form_residual,
                    "closed_loop_abscissa": d.closed_loop_abscissa,
                    "closed_loop_stable": d.closed_loop_stable,
                    "newton_steps": d.newton_steps,
                });
                println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            }
            Format::Csv => {
                println!("matrix,row,c1,c2,c3,c4");
                let k = sol.k_gain.row(0);
                println!("K,1,{:.16e},{:.16e},{:.16e},{:.16e}", k[0], k[1], k[2], k[3]);
                for (i, r) in rows(&sol.p_mat).iter().enumerate() {
                    println!("P,{},{:.16e},{:.16e},{:.16e},{:.16e}", i + 1, r[0], r[1], r[2], r[3]);
                }
            }
        }
        Ok(())
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn metrics_record(case: u8, kind: ControllerKind, seed: u64, m: &Metrics) -> MetricsRecord {
    MetricsRecord { case, controller: kind.name().to_string(), seed, iae: m.iae, itae: m.itae, cef: m.cef }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty())
}

/// `1-10`, `3,5,8` or a mix; duplicates removed, order kept.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Config(format!("--seeds: cannot parse {s:?}"));
    let mut out = Vec::new();
    for part in split_list(s) {
        let range = match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi): (u64, u64) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
                if lo > hi {
                    return Err(bad());
                }
                lo..=hi
            }
            None => {
                let v: u64 = part.parse().map_err(|_| bad())?;
                v..=v
            }
        };
        for v in range {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("--seeds: empty seed list".into()));
    }
    Ok(out)
}

fn care_solve(a: &CareArgs, quiet: bool) -> Result<()> {
    let parse = |name: &str, t: &str| parse_matrix(t).map_err(|e| CliError::Config(format!("--{name}: {e}")));
    let prob = CareProblem::new(parse("a", &a.a)?, parse("b", &a.b)?, parse("q", &a.q)?, parse("r", &a.r)?);
    let sol = solve_care(&prob).map_err(|e| match e {
        RiccatiError::DimensionMismatch(_)
        | RiccatiError::NonSymmetricInput { .. }
        | RiccatiError::NotPositiveDefinite { .. } => CliError::Config(e.to_string()),
        other => CliError::Failure(other.to_string()),
    })?;
    let k = prob.gain(&sol.p_mat).ok_or_else(|| CliError::Failure("R is singular".into()))?;
    let residual = care_residual(&prob, &sol.p_mat).map_err(|e| CliError::Failure(e.to_string()))?;
    let out = json!({
        "p": rows(&sol.p_mat),
        "k": rows(&k),
        "residual": residual,
        "relative_residual": residual / (1.0 + sol.p_mat.norm()),
        "stable": sol.stable,
        "closed_loop_abscissa": spectral_abscissa(&(&prob.a_mat + &prob.b_mat * &k)),
        "newton_steps": sol.newton_steps,
    });
    if !quiet {
        println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    }
    if !sol.stable {
        return Err(CliError::Failure("solution does not stabilize A + BK (is (A, B) stabilizable?)".into()));
    }
    Ok(())
}
