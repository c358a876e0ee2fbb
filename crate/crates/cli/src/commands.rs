use std::path::{Path, PathBuf};
use std::time::Instant;

use quench_core::dataset::{generate_labels, sidecar_path, split_indices, LabeledDataset};
use quench_core::dynamics::{fmt17, write_trace_csv};
use quench_core::experiment::{ExperimentOptions, Prepared};
use quench_core::kernels::{
    build_gram, compute_states, GramMatrix, KernelMatrix, KernelMethod, KernelSpec, SubMatrix, DEFAULT_CLASSICAL_GAMMA,
};
use quench_core::singularity::{Label, QuenchAnalyzer, Scenario};
use quench_core::spin_model::FieldVector;
use quench_core::svm::{cross_validate, predict, train, Confusion, CvResult, SvmModel, TrainConfig};
use quench_core::verify::{self, Fault, VerifyOptions};
use serde::{Deserialize, Serialize};

use crate::args::{
    Command, EvalArgs, ExportArgs, ExportKind, FaultArg, GramArgs, LabelArgs, MethodArg, SweepArgs, TrainArgs,
    VerifyArgs,
};
use crate::config::RunConfig;
use crate::error::{at, io_err, CliError, CliResult};
use crate::manifest::{file_hash, read_json, write_json, Artifact};

/// Qubit counts from which runs take long enough to need `--yes`.
pub const LONG_RUN_QUBITS: usize = 7;

/// Settings shared by every command in one invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub workers: usize,
    /// Stamped into dataset sidecars.
    pub timestamp: u64,
    /// Used instead of reading `--config` (reruns replay the recorded config).
    pub config: Option<RunConfig>,
    /// Ignore caches (reruns always recompute).
    pub force: bool,
}

impl Context {
    fn load_config(&self, path: &Path) -> CliResult<RunConfig> {
        match &self.config {
            Some(config) => Ok(config.clone()),
            None => RunConfig::load(path),
        }
    }
}

/// What a command read and wrote, for its manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Primary output; the manifest is written next to it.
    pub out: Option<PathBuf>,
    pub config: Option<RunConfig>,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Error to report after the outputs and manifest are written.
    pub deferred: Option<CliError>,
}

pub fn run(command: &Command, ctx: &Context) -> CliResult<Outcome> {
    match command {
        Command::Label(a) => label(a, ctx),
        Command::Gram(a) => gram(a, ctx),
        Command::Train(a) => train_cmd(a, ctx),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a, ctx),
        Command::Export(a) => export(a, ctx),
        Command::Verify(a) => verify_cmd(a),
        Command::Rerun(_) => Err(CliError::Usage("a manifest cannot record a rerun".into())),
    }
}

fn refuse_long_run(n_qubits: usize, yes: bool) -> CliResult<()> {
    if n_qubits >= LONG_RUN_QUBITS && !yes {
        return Err(CliError::Refused(format!("N = {n_qubits} takes hours per grid; pass --yes to run it anyway")));
    }
    Ok(())
}

fn read_dataset(path: &Path) -> CliResult<LabeledDataset> {
    LabeledDataset::read_csv(path).map_err(at(path))
}

fn labels_of(dataset: &LabeledDataset) -> Vec<Label> {
    dataset.rows.iter().filter_map(|r| r.label).collect()
}

fn label(args: &LabelArgs, ctx: &Context) -> CliResult<Outcome> {
    let config = ctx.load_config(&args.config)?;
    refuse_long_run(config.scenario.system.n_qubits, args.yes)?;
    let grid = config.grid()?.clone();
    let rows = grid.rows()?;
    log::info!("labelling {} rows with {} workers", rows.len(), ctx.workers);
    let mut dataset = generate_labels(&rows, &config.scenario, ctx.workers)?.with_grid(grid);
    dataset.meta.generated_unix = ctx.timestamp;
    dataset.write_csv(&args.out).map_err(at(&args.out))?;

    let failed = dataset.meta.failures.len();
    let (pos, neg) = dataset.class_counts();
    log::info!("labels: {pos} positive, {neg} negative, {failed} failed");
    Ok(Outcome {
        out: Some(args.out.clone()),
        seed: Some(config.scenario.system.seed),
        inputs: if ctx.config.is_none() { vec![Artifact::new(&args.config)?] } else { Vec::new() },
        outputs: vec![Artifact::new(&args.out)?, Artifact::new(&sidecar_path(&args.out))?],
        config: Some(config),
        deferred: (failed > 0).then_some(CliError::RowFailures { failed, total: dataset.len() }),
    })
}

fn default_spec(method: MethodArg) -> KernelSpec {
    match method {
        MethodArg::Gsk => KernelSpec::gsk_default(),
        MethodArg::Dsk => KernelSpec::dsk_default(),
        MethodArg::Classical => KernelSpec::classical(DEFAULT_CLASSICAL_GAMMA),
    }
}

fn same_family(method: MethodArg, spec: &KernelSpec) -> bool {
    matches!(
        (method, spec.method),
        (MethodArg::Gsk, KernelMethod::Gsk)
            | (MethodArg::Dsk, KernelMethod::Dsk)
            | (MethodArg::Classical, KernelMethod::ClassicalRbf { .. })
    )
}

/// `--kernel` picks the family; a config `kernel` section of the same family
/// supplies the map.
fn resolve_spec(method: Option<MethodArg>, configured: Option<KernelSpec>) -> CliResult<KernelSpec> {
    match (method, configured) {
        (Some(m), Some(spec)) if same_family(m, &spec) => Ok(spec),
        (Some(m), _) => Ok(default_spec(m)),
        (None, Some(spec)) => Ok(spec),
        (None, None) => Err(CliError::Usage("give --kernel or a config with a \"kernel\" section".into())),
    }
}

fn gram(args: &GramArgs, ctx: &Context) -> CliResult<Outcome> {
    let config = match &args.config {
        Some(path) => Some(ctx.load_config(path)?),
        None => None,
    };
    let spec = resolve_spec(args.kernel, config.as_ref().and_then(|c| c.kernel))?;
    spec.validate()?;
    let dataset = read_dataset(&args.dataset)?;
    let fingerprint = dataset.fingerprint()?;
    let inputs = vec![Artifact::new(&args.dataset)?];
    let outcome = |config| -> CliResult<Outcome> {
        Ok(Outcome {
            out: Some(args.out.clone()),
            config,
            seed: None,
            inputs,
            outputs: vec![Artifact::new(&args.out)?],
            deferred: None,
        })
    };

    if args.out.exists() && !args.force && !ctx.force {
        // An unreadable cache is an error rather than silently overwritten.
        let cached = GramMatrix::load(&args.out).map_err(at(&args.out))?;
        if cached.matches(&spec, &fingerprint) {
            log::info!("cache hit: {} already holds this kernel", args.out.display());
            return outcome(config);
        }
        log::info!("{} was built for another kernel or dataset; rebuilding", args.out.display());
    }

    let labeled = dataset.labeled_indices();
    let rows: Vec<_> = labeled.iter().map(|&i| dataset.rows[i]).collect();
    log::info!("computing {} states for {:?}", rows.len(), spec.method);
    let states = compute_states(&rows, &dataset.meta.scenario, &spec, ctx.workers)?;
    if !states.degenerate_rows.is_empty() {
        log::warn!("{} rows have a degenerate ground level", states.degenerate_rows.len());
    }
    let matrix =
        build_gram(&states.states, &spec, &fingerprint, ctx.workers)?.with_degenerate_rows(states.degenerate_rows);
    log::info!("min eigenvalue {:e}", matrix.meta().min_eigenvalue);
    matrix.save(&args.out).map_err(at(&args.out))?;
    outcome(config)
}

/// Contents of a `train` output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: SvmModel,
    /// Positions among the dataset's labelled rows (= Gram indices).
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub cv: CvResult,
}

fn check_fingerprint(expected: &str, found: &str) -> CliResult<()> {
    if expected != found {
        return Err(quench_core::Error::FingerprintMismatch { expected: expected.into(), found: found.into() }.into());
    }
    Ok(())
}

fn train_cmd(args: &TrainArgs, ctx: &Context) -> CliResult<Outcome> {
    let config = match &args.config {
        Some(path) => Some(ctx.load_config(path)?),
        None => None,
    };
    let mut options = config.as_ref().map(|c| c.experiment.clone()).unwrap_or_default();
    if let Some(seed) = args.seed {
        options.split_seed = seed;
    }
    let dataset = read_dataset(&args.dataset)?;
    let matrix = GramMatrix::load(&args.gram).map_err(at(&args.gram))?;
    check_fingerprint(&dataset.fingerprint()?, &matrix.meta().dataset_fingerprint)?;
    let labels = labels_of(&dataset);
    if labels.len() != matrix.n() {
        return Err(quench_core::Error::LengthMismatch { expected: labels.len(), found: matrix.n() }.into());
    }

    let (train_rows, test_rows) = split_indices(labels.len(), options.train_fraction, options.split_seed)?;
    let train_labels: Vec<Label> = train_rows.iter().map(|&i| labels[i]).collect();
    let mut template = TrainConfig::new(1.0);
    template.seed = options.split_seed;
    if let Some(tol) = options.kkt_tol {
        template.kkt_tol = tol;
    }
    let sub = SubMatrix::new(&matrix, &train_rows);
    let cv = cross_validate(&sub, &train_labels, options.folds, &options.c_grid, matrix.meta().spec.map, &template)?;
    log::info!("C = {} (cv accuracy {:.4})", cv.config.c, cv.mean_accuracy);
    let mut model = train(&sub, &train_labels, &cv.config)?;
    if !model.converged {
        log::warn!("SMO stopped at the iteration cap");
    }
    model.spec = Some(matrix.meta().spec);
    model.dataset_fingerprint = Some(matrix.meta().dataset_fingerprint.clone());
    model.gram_fingerprint = Some(file_hash(&args.gram)?);
    write_json(&args.out, &ModelFile { model, train_rows, test_rows, cv })?;

    let mut inputs = vec![Artifact::new(&args.dataset)?, Artifact::new(&args.gram)?];
    if let (Some(path), None) = (&args.config, &ctx.config) {
        inputs.push(Artifact::new(path)?);
    }
    Ok(Outcome {
        out: Some(args.out.clone()),
        config,
        seed: Some(options.split_seed),
        inputs,
        outputs: vec![Artifact::new(&args.out)?],
        deferred: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: Confusion,
    pub n_support: usize,
    pub c: f64,
    pub spec: Option<KernelSpec>,
    pub n_train: usize,
    pub n_test: usize,
    pub cv_accuracy: f64,
    pub converged: bool,
    pub dataset_fingerprint: String,
    pub gram_fingerprint: String,
    pub model_fingerprint: String,
    pub runtime_secs: f64,
}

/// Timing fields excluded from rerun comparisons.
pub const VOLATILE: [&str; 2] = ["runtime_secs", "seconds"];

fn eval(args: &EvalArgs) -> CliResult<Outcome> {
    let start = Instant::now();
    let dataset = read_dataset(&args.dataset)?;
    let matrix = GramMatrix::load(&args.gram).map_err(at(&args.gram))?;
    let file: ModelFile = read_json(&args.model)?;
    let model = &file.model;
    let dataset_fp = dataset.fingerprint()?;
    let gram_fp = file_hash(&args.gram)?;
    check_fingerprint(model.dataset_fingerprint.as_deref().unwrap_or(""), &dataset_fp)?;
    check_fingerprint(model.gram_fingerprint.as_deref().unwrap_or(""), &gram_fp)?;
    let labels = labels_of(&dataset);
    if file.train_rows.len() != model.n_train || file.test_rows.iter().any(|&i| i >= matrix.n()) {
        return Err(CliError::Usage(format!("{}: row indices do not fit the Gram", args.model.display())));
    }

    let mut confusion = Confusion::default();
    let mut row = vec![0.0; file.train_rows.len()];
    for &i in &file.test_rows {
        for (r, &t) in row.iter_mut().zip(&file.train_rows) {
            *r = matrix.get(i, t);
        }
        confusion.record(predict(model, &row)?, labels[i]);
    }
    let metrics = Metrics {
        accuracy: confusion.accuracy(),
        confusion,
        n_support: model.support.len(),
        c: model.config.c,
        spec: model.spec,
        n_train: file.train_rows.len(),
        n_test: file.test_rows.len(),
        cv_accuracy: file.cv.mean_accuracy,
        converged: model.converged,
        dataset_fingerprint: dataset_fp,
        gram_fingerprint: gram_fp,
        model_fingerprint: file_hash(&args.model)?,
        runtime_secs: start.elapsed().as_secs_f64(),
    };
    log::info!("accuracy {:.4} on {} rows", metrics.accuracy, metrics.n_test);
    write_json(&args.out, &metrics)?;
    Ok(Outcome {
        out: Some(args.out.clone()),
        inputs: vec![Artifact::new(&args.dataset)?, Artifact::new(&args.gram)?, Artifact::new(&args.model)?],
        outputs: vec![Artifact::with_volatile(&args.out, &VOLATILE)?],
        ..Default::default()
    })
}

pub const SWEEP_HEADER: [&str; 14] = [
    "n_qubits",
    "method",
    "map",
    "accuracy",
    "cv_accuracy",
    "c",
    "n_train",
    "n_test",
    "n_support",
    "n_positive",
    "n_negative",
    "min_eigenvalue",
    "runtime_secs",
    "status",
];

fn map_name(spec: &KernelSpec) -> String {
    match spec.map {
        quench_core::kernels::KernelMap::Qlin => "qlin".into(),
        quench_core::kernels::KernelMap::Qrbf { gamma } => format!("qrbf({gamma})"),
    }
}

fn method_name(method: MethodArg) -> &'static str {
    match method {
        MethodArg::Gsk => "gsk",
        MethodArg::Dsk => "dsk",
        MethodArg::Classical => "classical",
    }
}

fn sweep(args: &SweepArgs, ctx: &Context) -> CliResult<Outcome> {
    if args.n_list.is_empty() {
        return Err(CliError::Usage("--n-list is empty".into()));
    }
    if args.methods.is_empty() {
        return Err(CliError::Usage("--methods is empty".into()));
    }
    let config = ctx.load_config(&args.config)?;
    let rows = config.grid()?.rows()?;
    let mut scenarios = Vec::with_capacity(args.n_list.len());
    for &n in &args.n_list {
        refuse_long_run(n, args.yes)?;
        let mut scenario: Scenario = config.scenario;
        scenario.system.n_qubits = n;
        scenario.validate()?;
        scenarios.push(scenario);
    }
    let options: &ExperimentOptions = &config.experiment;

    let mut writer = csv::Writer::from_path(&args.out).map_err(|e| CliError::Usage(e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::Usage(format!("{}: {e}", args.out.display()));
    writer.write_record(SWEEP_HEADER).map_err(csv_err)?;
    let mut failures = 0;
    for scenario in &scenarios {
        let n = scenario.system.n_qubits;
        let start = Instant::now();
        let prepared = Prepared::generate(&rows, scenario, ctx.workers);
        let label_secs = start.elapsed().as_secs_f64();
        log::info!("N = {n}: labelled {} rows in {label_secs:.1}s", rows.len());
        for &method in &args.methods {
            let spec = resolve_spec(Some(method), config.kernel)?;
            let mut record = vec![n.to_string(), method_name(method).into(), map_name(&spec)];
            let result = prepared
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|p| p.evaluate(&spec, options, ctx.workers).map(|r| (p, r)).map_err(|e| e.to_string()));
            match result {
                Ok((p, report)) => {
                    let (pos, neg) = p.dataset.class_counts();
                    record[2] = map_name(&report.spec);
                    record.extend([
                        fmt17(report.test_accuracy),
                        fmt17(report.cv_accuracy),
                        fmt17(report.c),
                        report.n_train.to_string(),
                        report.n_test.to_string(),
                        report.n_support.to_string(),
                        pos.to_string(),
                        neg.to_string(),
                        fmt17(report.min_eigenvalue),
                        fmt17(report.runtime_secs + label_secs),
                        if report.converged { "ok".into() } else { "unconverged".into() },
                    ]);
                    log::info!("N = {n} {}: accuracy {:.4}", method_name(method), report.test_accuracy);
                }
                Err(message) => {
                    failures += 1;
                    log::warn!("N = {n} {}: {message}", method_name(method));
                    record.extend(std::iter::repeat_n(String::new(), SWEEP_HEADER.len() - 4));
                    record.push(format!("error: {message}"));
                }
            }
            writer.write_record(&record).map_err(csv_err)?;
            writer.flush().map_err(io_err(&args.out))?;
        }
    }
    drop(writer);

    Ok(Outcome {
        out: Some(args.out.clone()),
        seed: Some(config.experiment.split_seed),
        inputs: if ctx.config.is_none() { vec![Artifact::new(&args.config)?] } else { Vec::new() },
        outputs: vec![Artifact::with_volatile(&args.out, &VOLATILE)?],
        config: Some(config),
        deferred: (failures > 0)
            .then(|| CliError::Usage(format!("{failures} sweep cells failed; see the status column"))),
    })
}

fn export(args: &ExportArgs, ctx: &Context) -> CliResult<Outcome> {
    let mut outcome = Outcome { out: Some(args.out.clone()), ..Default::default() };
    let label_text = |l: Option<Label>| l.map(|l| l.to_string()).unwrap_or_default();
    match args.kind {
        ExportKind::Sphere | ExportKind::Contour => {
            let path =
                args.dataset.as_ref().ok_or_else(|| CliError::Usage("--dataset is required for this export".into()))?;
            let dataset = read_dataset(path)?;
            let mut writer = csv::Writer::from_path(&args.out).map_err(|e| CliError::Usage(e.to_string()))?;
            let csv_err = |e: csv::Error| CliError::Usage(format!("{}: {e}", args.out.display()));
            if args.kind == ExportKind::Sphere {
                writer.write_record(["x", "y", "z", "label"]).map_err(csv_err)?;
                for row in &dataset.rows {
                    let [x, y, z] = row.field().map_err(at(path))?.cartesian();
                    writer.write_record([fmt17(x), fmt17(y), fmt17(z), label_text(row.label)]).map_err(csv_err)?;
                }
            } else {
                writer.write_record(["theta", "phi", "label"]).map_err(csv_err)?;
                for row in &dataset.rows {
                    writer.write_record([fmt17(row.theta), fmt17(row.phi), label_text(row.label)]).map_err(csv_err)?;
                }
            }
            writer.flush().map_err(io_err(&args.out))?;
            outcome.inputs.push(Artifact::new(path)?);
        }
        ExportKind::Traces => {
            let path = args.config.as_ref().ok_or_else(|| CliError::Usage("--config is required for traces".into()))?;
            let missing = |name: &str| CliError::Usage(format!("--{name} is required for traces"));
            let field = FieldVector::new(
                args.h.ok_or_else(|| missing("h"))?,
                args.theta.ok_or_else(|| missing("theta"))?,
                args.phi.ok_or_else(|| missing("phi"))?,
            )?;
            let config = ctx.load_config(path)?;
            let result = QuenchAnalyzer::new(config.scenario)?.with_trace(true).analyze(&field)?;
            log::info!("label {} with {} crossings", result.report.label, result.report.crossing_times.len());
            let file = std::fs::File::create(&args.out).map_err(io_err(&args.out))?;
            write_trace_csv(std::io::BufWriter::new(file), result.trace.as_deref().unwrap_or_default())
                .map_err(at(&args.out))?;
            if ctx.config.is_none() {
                outcome.inputs.push(Artifact::new(path)?);
            }
            outcome.config = Some(config);
        }
    }
    outcome.outputs.push(Artifact::new(&args.out)?);
    Ok(outcome)
}

fn verify_cmd(args: &VerifyArgs) -> CliResult<Outcome> {
    let options = VerifyOptions {
        seed: args.seed,
        quick: args.quick,
        fault: args.inject_fault.map(|f| match f {
            FaultArg::Hermiticity => Fault::Hermiticity,
        }),
    };
    let report = verify::run_all(&options);
    for check in &report.checks {
        println!(
            "{} {:<22} {:>7.2}s  {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.seconds,
            check.detail
        );
    }
    let mut outcome = Outcome { seed: Some(args.seed), ..Default::default() };
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        outcome.out = Some(out.clone());
        outcome.outputs.push(Artifact::with_volatile(out, &VOLATILE)?);
    }
    if !report.all_passed() {
        let names: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
        outcome.deferred = Some(CliError::VerifyFailed(names.join(", ")));
    }
    Ok(outcome)
}
