use std::path::Path;

use dmlshot_core::dataio::{
    generate_blobs, load_dataset, read_jsonl, save_dataset, stratified_sample, write_jsonl,
    BlobSpec, Dataset,
};
use dmlshot_core::eval::{
    compare_models, distance_bucket_accuracy, evaluate, fit_and_evaluate, group_analysis,
    plan_folds, run_cv, CVResult, Evaluation,
};
use dmlshot_core::losses::{grad_check, CombinedConfig, DmlConfig, LossInput, SoftTripleConfig};
use dmlshot_core::model::{
    init_params, model_grad_check, save_checkpoint, Activation, ModelLayout,
};
use dmlshot_core::numerics::{project_2d, Mat64, Rng};
use dmlshot_core::trainer::{self, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::dump::{self, DumpRecord};
use crate::train_args::parse_list;
use crate::{
    CvArgs, DistanceArgs, Failure, GradcheckArgs, GroupsArgs, IngestArgs, ProjectArgs, ReportArgs,
    SweepArgs, SynthArgs, TrainCmd,
};

const GRAD_TOLERANCE: f64 = 1e-5;

fn arm(cfg: &TrainConfig) -> &'static str {
    match cfg.loss.dml {
        DmlConfig::None => "CCE",
        DmlConfig::SupCon(_) => "CCE+SupCon",
        DmlConfig::SoftTriple(_) => "CCE+SoftTriple",
    }
}

/// `mean ± std` of an F1 series in percent.
fn cell(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

fn tokens(list: &Option<String>) -> Option<Vec<String>> {
    list.as_ref().map(|s| {
        s.split(',')
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect()
    })
}

fn ingest(args: &IngestArgs) -> Result<Dataset, Failure> {
    let mut ds = load_dataset(&args.data)?;
    if let Some(t) = tokens(&args.tag_tokens) {
        ds.tag_tokens(&t);
    }
    Ok(ds)
}

fn check_jobs(jobs: usize) -> Result<(), Failure> {
    if jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let ds = generate_blobs(&BlobSpec {
        num_classes: a.classes,
        dim: a.dim,
        per_class_count: a.per_class,
        centroid_separation: a.sep,
        noise_sigma: a.sigma,
        outlier_fraction: a.outliers,
        seed: a.seed,
    })?;
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} examples ({} classes, dim {}) to {}",
        ds.len(),
        a.classes,
        a.dim,
        a.out.display()
    );
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    if a.instances == 0 {
        return Err(Failure::Usage("--instances must be at least 1".into()));
    }
    let mut rng = Rng::new(a.seed);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for _ in 0..a.instances {
        let groups = if a.loss == "model" {
            vec![("parameters".to_string(), model_instance(&a, &mut rng)?)]
        } else {
            let input = LossInput::random(&a.loss, a.n, a.d, a.c, a.k, a.beta, &mut rng)?;
            grad_check(&input, a.eps)?.groups
        };
        for (name, err) in groups {
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some((_, w)) => *w = w.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    let mut failed = false;
    for (name, err) in &worst {
        let ok = *err < GRAD_TOLERANCE;
        failed |= !ok;
        println!(
            "{:<12} {:<12} {:.3e} {}",
            a.loss,
            name,
            err,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed {
        return Err(Failure::Check(format!(
            "{} gradient error above {GRAD_TOLERANCE:e}",
            a.loss
        )));
    }
    Ok(())
}

/// Small encoder with proxies checked end to end through the combined loss.
fn model_instance(a: &GradcheckArgs, rng: &mut Rng) -> Result<f64, Failure> {
    let layout = ModelLayout {
        input_dim: a.d,
        hidden: vec![5],
        output_dim: a.d,
        classes: a.c,
        proxies_per_class: Some(a.k),
        activation: Activation::Tanh,
        activate_output: false,
    };
    let model = init_params(&layout, rng)?;
    let x = Mat64::new(a.n, a.d, (0..a.n * a.d).map(|_| rng.gaussian()).collect())?;
    let labels: Vec<usize> = (0..a.n).map(|_| rng.below(a.c)).collect();
    let cfg = CombinedConfig {
        beta: a.beta,
        dml: DmlConfig::SoftTriple(SoftTripleConfig {
            k: a.k,
            gamma: 0.1,
            lambda: 4.0,
            delta: 0.7,
        }),
        normalize: true,
    };
    Ok(model_grad_check(&model, &x, &labels, &cfg, a.eps)?)
}

fn print_scores(prefix: &str, e: &Evaluation) {
    let m = &e.metrics;
    print!(
        "{prefix}: f1 {:.4}  accuracy {:.4}  precision {:.4}  recall {:.4}",
        m.f1, m.accuracy, m.precision, m.recall
    );
    match m.auc {
        Some(auc) => println!("  auc {auc:.4}"),
        None => println!(),
    }
}

pub fn train(a: TrainCmd) -> Result<(), Failure> {
    let ds = ingest(&a.ingest)?;
    let (train_set, test) = match (&a.test, a.train_size) {
        (Some(path), _) => {
            let mut test = load_dataset(path)?;
            if let Some(t) = tokens(&a.ingest.tag_tokens) {
                test.tag_tokens(&t);
            }
            (ds, Some(test))
        }
        (None, Some(n)) => {
            let mut rng = Rng::new(a.split_seed).fork();
            let (tr, te) = stratified_sample(&ds, n, &mut rng)?;
            (tr, Some(te))
        }
        (None, None) => (ds, None),
    };
    let cfg = a.train.resolve(train_set.len(), None)?;
    let (model, history) = trainer::train(&train_set, &cfg)?;
    let last = history.steps.last().map_or(f64::NAN, |s| s.loss);
    println!(
        "{} on {} examples: {} epochs, {} steps, final loss {:.6}",
        arm(&cfg),
        train_set.len(),
        cfg.epochs,
        history.steps.len(),
        last
    );

    if let Some(path) = &a.checkpoint {
        save_checkpoint(&model.flatten(), path)?;
    }
    if let Some(path) = &a.history {
        write_jsonl(path, &history.steps)?;
    }
    let on_train = evaluate(model.clone(), &train_set)?;
    print_scores("train", &on_train);
    let on_test = test.as_ref().map(|t| evaluate(model, t)).transpose()?;
    if let Some(e) = &on_test {
        print_scores("test", e);
    }
    if let Some(path) = &a.out {
        let m = on_test.as_ref().unwrap_or(&on_train);
        write_jsonl(path, &[&m.metrics])?;
    }
    if let Some(path) = &a.dump {
        let mut recs = dump::records("train", &train_set, &on_train);
        if let (Some(t), Some(e)) = (&test, &on_test) {
            recs.extend(dump::records("test", t, e));
        }
        write_jsonl(path, &recs)?;
    }
    Ok(())
}

fn load_result(path: &Path) -> Result<CVResult, Failure> {
    let mut rows: Vec<CVResult> = read_jsonl(path)?;
    if rows.len() != 1 {
        return Err(Failure::Runtime(format!(
            "{}: expected one result record, found {}",
            path.display(),
            rows.len()
        )));
    }
    Ok(rows.remove(0))
}

pub fn cv(a: CvArgs) -> Result<(), Failure> {
    check_jobs(a.jobs)?;
    let ds = ingest(&a.ingest)?;
    let cfg = a.train.resolve(a.train_size, None)?;
    let other = a.compare.as_deref().map(load_result).transpose()?;
    let result = run_cv(
        &ds,
        a.train_size,
        a.folds,
        a.repeats,
        &cfg,
        &mut Rng::new(a.split_seed),
        a.jobs,
    )?;

    for f in &result.per_fold {
        println!(
            "fold {:>3}  f1 {:.4}  accuracy {:.4}",
            f.fold, f.scores.f1, f.scores.accuracy
        );
    }
    println!("{:<16} {:>6}  F1", "loss", "N");
    println!(
        "{:<16} {:>6}  {}",
        arm(&cfg),
        a.train_size,
        cell(result.mean.f1, result.std.f1)
    );

    if let Some(path) = &a.records {
        write_jsonl(path, &result.runs)?;
    }
    if let Some(path) = &a.dump {
        let plan = plan_folds(
            &ds,
            a.train_size,
            a.folds,
            a.repeats,
            &mut Rng::new(a.split_seed),
        )?;
        let first = &plan[0];
        let cfg = TrainConfig {
            seed: first.seeds[0],
            ..cfg.clone()
        };
        let on_test = fit_and_evaluate(&first.train, &first.test, &cfg)?;
        let on_train = evaluate(on_test.model.clone(), &first.train)?;
        let mut recs = dump::records("train", &first.train, &on_train);
        recs.extend(dump::records("test", &first.test, &on_test));
        write_jsonl(path, &recs)?;
    }
    if let Some(path) = &a.out {
        write_jsonl(path, &[&result])?;
    }
    if let (Some(path), Some(other)) = (&a.compare, &other) {
        let p = compare_models(&result.fold_f1(), &other.fold_f1(), a.test)?;
        println!(
            "{:<16} {:>6}  p = {:.4} ({} vs {})",
            "p-value",
            a.train_size,
            p,
            a.test,
            path.display()
        );
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    loss: String,
    train_size: usize,
    lr: f64,
    f1_mean: f64,
    f1_std: f64,
    fold_f1: Vec<f64>,
    /// Best learning rate for this loss and size.
    best: bool,
    /// Test of this row's folds against the best CCE row, on best rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_vs_cce: Option<f64>,
}

pub fn sweep(a: SweepArgs) -> Result<(), Failure> {
    check_jobs(a.jobs)?;
    let losses: Vec<String> = parse_list("losses", &a.losses)?;
    let sizes: Vec<usize> = parse_list("train-sizes", &a.train_sizes)?;
    let lrs: Vec<f64> = parse_list("lrs", &a.lrs)?;
    if losses.is_empty() || sizes.is_empty() || lrs.is_empty() {
        return Err(Failure::Usage(
            "every grid axis needs at least one value".into(),
        ));
    }
    let ds = ingest(&a.ingest)?;

    let mut rows = Vec::new();
    for &size in &sizes {
        let first = rows.len();
        for loss in &losses {
            let block = rows.len();
            for &lr in &lrs {
                let mut cfg = a.train.resolve(size, Some(loss))?;
                cfg.base_lr = lr;
                cfg.validate()?;
                let r = run_cv(
                    &ds,
                    size,
                    a.folds,
                    a.repeats,
                    &cfg,
                    &mut Rng::new(a.split_seed),
                    a.jobs,
                )?;
                rows.push(SweepRow {
                    loss: loss.clone(),
                    train_size: size,
                    lr,
                    f1_mean: r.mean.f1,
                    f1_std: r.std.f1,
                    fold_f1: r.fold_f1(),
                    best: false,
                    p_vs_cce: None,
                });
            }
            let best = (block..rows.len())
                .reduce(|b, i| {
                    if rows[i].f1_mean > rows[b].f1_mean {
                        i
                    } else {
                        b
                    }
                })
                .expect("non-empty lr grid");
            rows[best].best = true;
        }
        let cce = (first..rows.len()).find(|&i| rows[i].best && rows[i].loss == "cce");
        if let Some(c) = cce {
            for i in first..rows.len() {
                if rows[i].best && i != c {
                    rows[i].p_vs_cce =
                        Some(compare_models(&rows[i].fold_f1, &rows[c].fold_f1, a.test)?);
                }
            }
        }
    }

    println!(
        "{:<12} {:>6} {:>8}  {:<16} p vs cce",
        "loss", "N", "lr", "F1"
    );
    for r in &rows {
        let mark = if r.best { "*" } else { " " };
        let p = r.p_vs_cce.map_or(String::new(), |p| format!("{p:.4}"));
        println!(
            "{:<12} {:>6} {:>8.0e}{mark} {:<16} {p}",
            r.loss,
            r.train_size,
            r.lr,
            cell(r.f1_mean, r.f1_std)
        );
    }
    if let Some(path) = &a.out {
        write_jsonl(path, &rows)?;
    }
    Ok(())
}

/// Records of the test split, or every record when the dump has none.
fn eval_records(recs: &[DumpRecord]) -> Vec<&DumpRecord> {
    let test = dump::select(recs, "test");
    if test.is_empty() {
        dump::select(recs, "all")
    } else {
        test
    }
}

pub fn analyze_distance(a: DistanceArgs) -> Result<(), Failure> {
    let recs = dump::load(&a.dump)?;
    let geometry = match &a.geometry {
        Some(p) => dump::load(p)?,
        None => recs.clone(),
    };
    let mut reference = dump::select(&geometry, "train");
    if reference.is_empty() {
        reference = dump::select(&geometry, "all");
    }
    let eval = eval_records(&recs);
    let buckets = distance_bucket_accuracy(
        &dump::embeddings(&reference)?,
        &dump::embeddings_from(&eval, &geometry)?,
        &eval.iter().map(|r| r.pred).collect::<Vec<_>>(),
        &eval.iter().map(|r| r.label).collect::<Vec<_>>(),
        a.buckets,
    )?;
    println!(
        "{:>6} {:>6} {:>9} {:>10} {:>10}",
        "bucket", "count", "accuracy", "min dist", "max dist"
    );
    for b in &buckets {
        println!(
            "{:>6} {:>6} {:>9.4} {:>10.4} {:>10.4}",
            b.bucket, b.count, b.accuracy, b.min_distance, b.max_distance
        );
    }
    if let Some(path) = &a.out {
        write_jsonl(path, &buckets)?;
    }
    Ok(())
}

pub fn analyze_groups(a: GroupsArgs) -> Result<(), Failure> {
    let recs = dump::load(&a.dump)?;
    let selected = dump::select(&recs, &a.split);
    if selected.is_empty() {
        return Err(Failure::Runtime(format!("dump has no {} records", a.split)));
    }
    let mut ds = dump::to_dataset(&selected)?;
    if let Some(t) = tokens(&a.tag_tokens) {
        ds.tag_tokens(&t);
    }
    let preds: Vec<usize> = selected.iter().map(|r| r.pred).collect();
    let reports = group_analysis(&ds, &preds, a.min_count)?;
    if ds.examples().iter().all(|e| e.groups.is_empty()) {
        eprintln!("warning: no group tags in the dump; pass --tag-tokens to tag the text");
    }
    println!(
        "{:<16} {:>6} {:>9} {:>9} {:>10} {:>10}",
        "group", "count", "accuracy", "rest", "U", "p"
    );
    for r in &reports {
        println!(
            "{:<16} {:>6} {:>9.4} {:>9.4} {:>10.1} {:>10.4}",
            r.group, r.count, r.group_accuracy, r.complement_accuracy, r.u_statistic, r.p_value
        );
    }
    if let Some(path) = &a.out {
        write_jsonl(path, &reports)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Point {
    id: String,
    split: String,
    label: usize,
    pred: usize,
    x: f64,
    y: f64,
}

pub fn project(a: ProjectArgs) -> Result<(), Failure> {
    let recs = dump::load(&a.dump)?;
    let selected = dump::select(&recs, &a.split);
    let coords = project_2d(
        &dump::embeddings(&selected)?,
        a.method,
        &mut Rng::new(a.seed),
        a.perplexity,
    )?;
    let points: Vec<Point> = selected
        .iter()
        .zip(coords.iter_rows())
        .map(|(r, xy)| Point {
            id: r.id.clone(),
            split: r.split.clone(),
            label: r.label,
            pred: r.pred,
            x: xy[0],
            y: xy[1],
        })
        .collect();
    write_jsonl(&a.out, &points)?;
    println!("wrote {} points to {}", points.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportRow {
    source: String,
    arm: String,
    train_size: usize,
    folds: usize,
    f1_mean: f64,
    f1_std: f64,
    accuracy_mean: f64,
    cell: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_vs_baseline: Option<f64>,
}

pub fn report(a: ReportArgs) -> Result<(), Failure> {
    let results = a
        .results
        .iter()
        .map(|p| load_result(p))
        .collect::<Result<Vec<_>, _>>()?;
    let base = results[0].fold_f1();
    let mut rows = Vec::with_capacity(results.len());
    for (i, (path, r)) in a.results.iter().zip(&results).enumerate() {
        let p = if i == 0 {
            None
        } else {
            Some(compare_models(&r.fold_f1(), &base, a.test)?)
        };
        rows.push(ReportRow {
            source: path.display().to_string(),
            arm: arm(&r.config).to_string(),
            train_size: r.train_size,
            folds: r.folds,
            f1_mean: r.mean.f1,
            f1_std: r.std.f1,
            accuracy_mean: r.mean.accuracy,
            cell: cell(r.mean.f1, r.std.f1),
            p_vs_baseline: p,
        });
    }
    println!(
        "{:<16} {:>6} {:>6}  {:<16} {:>9}  p",
        "loss", "N", "folds", "F1", "accuracy"
    );
    for r in &rows {
        println!(
            "{:<16} {:>6} {:>6}  {:<16} {:>9.4}  {}",
            r.arm,
            r.train_size,
            r.folds,
            r.cell,
            r.accuracy_mean,
            r.p_vs_baseline
                .map_or("-".to_string(), |p| format!("{p:.4}"))
        );
    }
    if let Some(path) = &a.out {
        write_jsonl(path, &rows)?;
    }
    Ok(())
}
