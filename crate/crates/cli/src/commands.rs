use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use boolnet::harness::{
    cell_count_oracle_check, edge_count_oracle_check, ldp_slope, mean_degree_check, tail_oracle_check, EventSpec,
    ReplicaModel, ReplicaSchedule, Verdict,
};
use boolnet::measures::{empirical_connectivity_measure, empirical_mark_measure};
use boolnet::network::{build_hard, build_soft};
use boolnet::rates::{infimize_rate, mark_rate, CellKernel, Constraint, KernelAveraging, RateReference};
use boolnet::sampler::{replica_seed, sample_marked_ppp};
use boolnet::{BinnedMeasure, BinnedPairMeasure, BooleanNetwork, Error, KernelSpec, Mode};

use crate::config::ExperimentConfig;
use crate::CliError;

pub struct Context {
    pub cfg: ExperimentConfig,
    digest: String,
    command: &'static str,
    deterministic: bool,
    files: Vec<String>,
}

pub struct Status {
    pub verdict: String,
    pub summary: Value,
}

impl Status {
    fn ok(summary: Value) -> Self {
        Self { verdict: "OK".into(), summary }
    }

    fn checked(verdict: Verdict, summary: Value) -> Self {
        Self { verdict: verdict.to_string(), summary }
    }

    pub fn failed(&self) -> bool {
        self.verdict == Verdict::Fail.to_string()
    }
}

impl Context {
    pub fn new(cfg: ExperimentConfig, command: &'static str, deterministic: bool) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out)
            .map_err(|e| CliError::Input(format!("out: cannot create {}: {e}", cfg.out.display())))?;
        Ok(Self {
            digest: cfg.digest(),
            cfg,
            command,
            deterministic,
            files: Vec::new(),
        })
    }

    fn digest(&self) -> Option<&str> {
        Some(&self.digest)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.cfg.out.join(name);
        let file = File::create(&path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(name.to_owned());
        Ok(BufWriter::new(file))
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let mut out = self.create(name)?;
        serde_json::to_writer_pretty(&mut out, value).map_err(Error::from)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    /// Writes run.json, the manifest of this invocation.
    pub fn finish(&mut self, status: &Status) -> Result<(), CliError> {
        let mut manifest = json!({
            "command": self.command,
            "config_digest": self.digest,
            "config": self.cfg,
            "files": self.files,
            "verdict": status.verdict,
            "summary": status.summary,
        });
        if !self.deterministic {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            manifest["timestamp"] = json!(secs);
        }
        self.write_json("run.json", &manifest)
    }
}

fn network(cfg: &ExperimentConfig) -> Result<BooleanNetwork, CliError> {
    let regime = cfg.regime()?;
    let dom = cfg.domain()?;
    let config = sample_marked_ppp(&regime, &dom, replica_seed(cfg.seed, 0))?;
    Ok(match cfg.mode {
        Mode::Hard => build_hard(&config, &dom)?,
        Mode::Soft => build_soft(&config, &regime, replica_seed(cfg.seed, 1))?,
    })
}

pub fn simulate(ctx: &mut Context) -> Result<Status, CliError> {
    let net = network(&ctx.cfg)?;
    let digest = ctx.digest().map(str::to_owned);
    let mut points = ctx.create("points.txt")?;
    net.config().write_text(&mut points, digest.as_deref())?;
    points.flush()?;
    let mut edges = ctx.create("edges.csv")?;
    net.write_edges_csv(&mut edges, digest.as_deref())?;
    edges.flush()?;
    Ok(Status::ok(json!({ "points": net.config().len(), "edges": net.edge_count() })))
}

pub fn measures(ctx: &mut Context) -> Result<Status, CliError> {
    let net = network(&ctx.cfg)?;
    let part = ctx.cfg.partition()?;
    let l1 = empirical_mark_measure(&net, &part)?;
    let l2 = empirical_connectivity_measure(&net, &part)?;
    let reference = ctx.cfg.reference()?;
    let digest = ctx.digest().map(str::to_owned);

    let mut out = ctx.create("l1.json")?;
    writeln!(out, "{}", l1.to_json(digest.as_deref())?)?;
    out.flush()?;
    let mut out = ctx.create("l2.csv")?;
    l2.write_csv(&mut out, digest.as_deref())?;
    out.flush()?;
    let mut out = ctx.create("reference.json")?;
    writeln!(out, "{}", reference.to_json(digest.as_deref())?)?;
    out.flush()?;
    Ok(Status::ok(json!({
        "points": net.config().len(),
        "edges": net.edge_count(),
        "l1_total": l1.total(),
        "l2_total": l2.total(),
    })))
}

fn read_measure(path: &Path, flag: &str) -> Result<BinnedMeasure, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("--{flag}: cannot read {}: {e}", path.display())))?;
    BinnedMeasure::from_json(&text).map_err(|e| CliError::Input(format!("--{flag}: {}: {e}", path.display())))
}

pub fn rate(
    ctx: &mut Context,
    omega_path: &Path,
    pi_path: Option<&Path>,
    reference_path: Option<&Path>,
) -> Result<Status, CliError> {
    let omega = read_measure(omega_path, "omega")?;
    let reference = match reference_path {
        Some(p) => read_measure(p, "reference")?,
        None => ctx.cfg.reference()?,
    };
    let mark = mark_rate(&omega, &reference)?;
    let mut report = json!({
        "config_digest": ctx.digest,
        "mark": mark.to_json(None),
    });
    if let Some(p) = pi_path {
        let file = File::open(p).map_err(|e| CliError::Input(format!("--pi: cannot read {}: {e}", p.display())))?;
        let pi = BinnedPairMeasure::read_csv(BufReader::new(file), omega.partition().clone())
            .map_err(|e| CliError::Input(format!("--pi: {}: {e}", p.display())))?;
        let kernel = CellKernel::from_regime(&ctx.cfg.regime()?, omega.partition(), KernelAveraging::Midpoint)?;
        let cond = kernel.conditional_rate(&pi, &omega)?;
        let total = mark.value + cond.value;
        report["conditional"] = cond.to_json(None);
        report["joint"] = if total.is_finite() { json!(total) } else { json!("inf") };
    }
    ctx.write_json("rate.json", &report)?;
    Ok(Status::ok(json!({ "mark": report["mark"]["value"].clone() })))
}

fn predicted_rate(ctx: &Context, event: &EventSpec, model: &ReplicaModel) -> Result<Option<f64>, CliError> {
    let value = match (event, model) {
        (EventSpec::MarkMassAtLeast { cells, threshold }, ReplicaModel::CellLaw | ReplicaModel::Geometric { .. }) => {
            let reference = ctx.cfg.reference()?;
            let c = Constraint::MarkMass { cells: cells.clone(), threshold: *threshold, normalized: false };
            infimize_rate(&c, RateReference::Mark(&reference))?.value
        }
        (
            EventSpec::PairMassAtLeast { threshold },
            ReplicaModel::ConditionalBinomial { omega } | ReplicaModel::ConditionalSoft { omega },
        ) => {
            let kernel = CellKernel::from_regime(&ctx.cfg.regime()?, &ctx.cfg.partition()?, KernelAveraging::Midpoint)?;
            let k = kernel.pair_reference(omega)?;
            infimize_rate(&Constraint::PairMass { threshold: *threshold }, RateReference::Pair(&k))?.value
        }
        _ => return Ok(None),
    };
    Ok(Some(value))
}

pub fn ldp_verify(ctx: &mut Context) -> Result<Status, CliError> {
    let ldp = ctx.cfg.ldp()?.clone();
    let model = ctx.cfg.replica_model(&ldp.model)?;
    let predicted = match ldp.predicted_rate {
        Some(r) => Some(r),
        None => predicted_rate(ctx, &ldp.event, &model)?,
    };
    let exp = ctx.cfg.experiment(model)?;
    let schedule = ldp.schedule.unwrap_or(ReplicaSchedule::Fixed { replicas: ctx.cfg.replicas });
    let grid = ctx.cfg.lambda_grid();
    match ldp_slope(&ldp.event, &exp, &grid, schedule, ctx.cfg.seed, predicted, ldp.tolerance) {
        Ok(sweep) => {
            let digest = ctx.digest.clone();
            let mut out = ctx.create("sweep.csv")?;
            sweep.write_csv(&mut out, Some(&digest))?;
            out.flush()?;
            ctx.write_json("sweep.json", &sweep.to_json(Some(&digest)))?;
            Ok(Status::checked(
                sweep.verdict,
                json!({ "slope": sweep.fit.as_ref().map(|f| f.slope), "predicted_rate": predicted }),
            ))
        }
        Err(Error::InsufficientHits(msg)) => {
            eprintln!("ldp-verify: insufficient hits: {msg}");
            let report = json!({
                "config_digest": ctx.digest,
                "verdict": Verdict::Fail,
                "predicted": predicted,
                "notes": [format!("insufficient hits: {msg}")],
            });
            ctx.write_json("sweep.json", &report)?;
            Ok(Status::checked(Verdict::Fail, json!({ "predicted_rate": predicted, "error": msg })))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn mean_degree(ctx: &mut Context) -> Result<Status, CliError> {
    let exp = ctx.cfg.experiment(ReplicaModel::Geometric { mode: Mode::Soft })?;
    let grid = ctx.cfg.lambda_grid();
    let sweep = mean_degree_check(&exp, &grid, ctx.cfg.replicas, ctx.cfg.seed, ctx.cfg.mean_degree.tolerance)?;
    let digest = ctx.digest.clone();
    let mut out = ctx.create("mean_degree.csv")?;
    sweep.write_csv(&mut out, Some(&digest))?;
    out.flush()?;
    ctx.write_json("mean_degree.json", &sweep.to_json(Some(&digest)))?;
    let last = sweep.points.last().map(|p| p.estimate);
    Ok(Status::checked(sweep.verdict, json!({ "estimate": last, "target": sweep.predicted })))
}

fn combine(verdicts: &[Verdict]) -> Verdict {
    if verdicts.contains(&Verdict::Fail) {
        Verdict::Fail
    } else if verdicts.iter().all(|v| *v == Verdict::NotAssessed) {
        Verdict::NotAssessed
    } else {
        Verdict::Pass
    }
}

pub fn oracle_check(ctx: &mut Context) -> Result<Status, CliError> {
    let cfg = &ctx.cfg;
    let lambda = cfg.oracle.lambda.unwrap_or(cfg.regime.lambda);
    let exp = cfg.experiment(ReplicaModel::Geometric { mode: cfg.mode })?;
    let cells = cell_count_oracle_check(&exp, lambda, cfg.replicas, replica_seed(cfg.seed, 0), cfg.oracle.tolerance)?;
    let mut verdicts = vec![cells.verdict];
    let mut report = json!({
        "config_digest": ctx.digest,
        "lambda": lambda,
        "cell_counts": cells,
    });
    let regime = cfg.regime_at(lambda)?;
    if matches!(regime.kernel(), KernelSpec::Constant { .. }) {
        let edges = edge_count_oracle_check(
            &regime,
            cfg.oracle.edge_points,
            cfg.replicas,
            replica_seed(cfg.seed, 1),
            cfg.oracle.tolerance,
        )?;
        verdicts.push(edges.verdict);
        report["edge_counts"] = json!(edges);
    } else {
        report["edge_counts"] = json!({ "verdict": Verdict::NotAssessed, "reason": "kernel is not constant" });
    }
    let threshold = (2.0 * lambda).floor() as i64;
    let (est, exact, tail_verdict) = tail_oracle_check(lambda, threshold, cfg.replicas, replica_seed(cfg.seed, 2))?;
    verdicts.push(tail_verdict);
    report["point_count_tail"] = json!({
        "threshold": threshold,
        "estimate": est,
        "exact": exact,
        "verdict": tail_verdict,
    });
    let verdict = combine(&verdicts);
    report["verdict"] = json!(verdict);
    ctx.write_json("oracle.json", &report)?;
    Ok(Status::checked(verdict, json!({ "cell_counts_tv": report["cell_counts"]["total_variation"].clone() })))
}
