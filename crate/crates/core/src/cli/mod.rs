//! The `modsplit` command line: argument parsing, artifact bookkeeping and
//! dispatch to the library.

mod store;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

pub use store::{hash_path, input_key, ArtifactStore, Entry, HOME_VAR};

use crate::analysis::GroupRule;
use crate::bench::{self, BenchConfig, Scenario};
use crate::composer::{
    compose, decode, evaluate_and_recommend, load_bundle, load_bundle_header, patch, save_bundle, save_composed, BinaryScore, BundleMetrics, Mode,
    Provenance, SlicedModule,
};
use crate::datasets::{
    gen_synthetic, load_cifar10_binary, load_manifest, load_record_files, save_dataset, split_pair, LabeledDataset, RecordLayout, SplitTag,
    CIFAR10_CLASSES,
};
use crate::error::{Error, Result};
use crate::ga::{self, build_search_space, load_genome, save_genome, GaConfig};
use crate::grad::{self, GradConfig};
use crate::zoo::{build_model, count_flops, load_model, save_model, train, ArchitectureSpec, Family, FlopsConvention, Scale, TrainConfig, TrainedModel};

#[derive(Debug, Parser)]
#[command(name = "modsplit", version, about = "Decompose trained CNN classifiers into reusable per-class modules")]
pub struct Cli {
    /// Re-run even when the output is up to date.
    #[arg(long, global = true)]
    pub force: bool,
    /// Artifact-store root; defaults to $MODSPLIT_HOME, then ~/.modsplit.
    #[arg(long, global = true)]
    pub home: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a dataset manifest (synthetic or CIFAR-10 binary).
    Data(DataArgs),
    /// Train a model on a dataset manifest (split 8:2 into train/valid).
    Train(TrainArgs),
    /// Modularize with the genetic search.
    SplitGa(SplitGaArgs),
    /// Modularize with gradient-trained masks.
    SplitGrad(SplitGradArgs),
    /// Cut a module out of a model from a genome or a kernel mask.
    Decode(DecodeArgs),
    /// Score candidate modules by F1 and recommend one per class.
    EvalModules(EvalArgs),
    /// Compose one module per class into a classifier.
    Compose(ComposeArgs),
    /// Patch a weak model's target class with a module.
    Patch(PatchArgs),
    /// Run an experiment scenario and write its report.
    Bench(BenchArgs),
    /// Print the FLOPs report of a model or architecture preset.
    Flops(FlopsArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[command(subcommand)]
    pub source: DataSource,
}

#[derive(Debug, Subcommand)]
pub enum DataSource {
    Synth {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// First universe class id; classes are consecutive from here.
        #[arg(long, default_value_t = 0)]
        first_class: usize,
        #[arg(long, default_value = "data")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    Cifar {
        /// Directory of CIFAR-10 binary batch files.
        #[arg(long)]
        dir: PathBuf,
        /// Only `data_batch*` files (train) or `test_batch*` files (test); all `*.bin` otherwise.
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value = "cifar10")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub arch: Family,
    #[arg(long, default_value = "desk")]
    pub scale: Scale,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Training schedule JSON; defaults to the preset of `--scale`.
    #[arg(long)]
    pub cfg: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Test manifest to record test accuracy.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitGaArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cfg: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Groups per layer (`fixed:G`) or the 10/100 rule (`paper`).
    #[arg(long, default_value = "fixed:8")]
    pub groups: String,
    #[arg(long)]
    pub class_agnostic: bool,
    /// Seed of the train/valid split; defaults to the model's training seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitGradArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cfg: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Genome file written by `split-ga`.
    #[arg(long, conflicts_with = "mask")]
    pub genome: Option<PathBuf>,
    /// Grouping plans for the genome; defaults to `groupings.json` beside the genome directory.
    #[arg(long)]
    pub groupings: Option<PathBuf>,
    /// File holding a base64 per-kernel retention bitset.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Glob matching module bundle directories.
    #[arg(long)]
    pub candidates: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub modules: Vec<PathBuf>,
    #[arg(long, default_value = "parallel")]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset for min-max score calibration.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Test manifest to report accuracy on.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[arg(long)]
    pub weak: PathBuf,
    #[arg(long)]
    pub module: PathBuf,
    #[arg(long)]
    pub tc: usize,
    /// Training manifest; its class-`tc` samples calibrate the patch.
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Directory for the patched-model record.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long)]
    pub cfg: Option<PathBuf>,
    /// Comma-separated seeds when no config file is given.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long, conflicts_with_all = ["arch", "scale"])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<Family>,
    #[arg(long, default_value = "paper")]
    pub scale: Scale,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value = "mac")]
    pub convention: FlopsConvention,
}

/// Parses `argv`, runs the command and returns the process exit code:
/// 0 on success, 1 on a failed command (JSON error on stderr), 2 on usage errors.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(out) => {
            // a closed pipe downstream is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&out).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}

pub fn error_json(e: &Error) -> Value {
    json!({ "error": { "kind": e.kind(), "message": e.to_string() } })
}

pub fn dispatch(cli: Cli) -> Result<Value> {
    let mut store = ArtifactStore::open(cli.home.clone().unwrap_or_else(ArtifactStore::default_root))?;
    let ctx = Ctx { force: cli.force };
    match cli.command {
        Command::Data(a) => ctx.data(&mut store, a),
        Command::Train(a) => ctx.train(&mut store, a),
        Command::SplitGa(a) => ctx.split_ga(&mut store, a),
        Command::SplitGrad(a) => ctx.split_grad(&mut store, a),
        Command::Decode(a) => ctx.decode(&mut store, a),
        Command::EvalModules(a) => eval_modules(&mut store, a),
        Command::Compose(a) => ctx.compose(&mut store, a),
        Command::Patch(a) => patch_cmd(&mut store, a),
        Command::Bench(a) => bench_cmd(&mut store, a),
        Command::Flops(a) => flops(a),
    }
}

struct Ctx {
    force: bool,
}

impl Ctx {
    /// Runs `body` unless the store already holds this exact output; records it afterwards.
    fn gated(
        &self,
        store: &mut ArtifactStore,
        kind: &str,
        out: &Path,
        key_parts: Vec<String>,
        parents: Vec<String>,
        body: impl FnOnce() -> Result<Value>,
    ) -> Result<Value> {
        let key = input_key(&key_parts);
        if !self.force {
            if let Some(e) = store.up_to_date(&key, out) {
                return Ok(json!({ "status": "up to date", "kind": kind, "path": e.path, "hash": e.hash }));
            }
        }
        let mut summary = body()?;
        let id = store.record(kind, out, parents, &key)?;
        if let Value::Object(m) = &mut summary {
            m.insert("artifact".into(), json!(id));
            m.insert("path".into(), json!(out));
        }
        Ok(summary)
    }

    fn data(&self, store: &mut ArtifactStore, a: DataArgs) -> Result<Value> {
        match a.source {
            DataSource::Synth {
                classes,
                per_class,
                side,
                seed,
                first_class,
                name,
                out,
            } => {
                let key = vec!["data-synth".into(), format!("{classes}/{per_class}/{side}/{seed}/{first_class}/{name}")];
                let manifest = out.join(format!("{name}.json"));
                self.gated(store, "data", &manifest, key, vec![], || {
                    let ds = if first_class == 0 {
                        gen_synthetic(classes, per_class, side, seed)?
                    } else {
                        crate::datasets::SyntheticConfig {
                            class_ids: (first_class..first_class + classes).collect(),
                            ..crate::datasets::SyntheticConfig::new(classes, per_class, side, seed)
                        }
                        .generate()?
                    };
                    save_dataset(&out, &name, &ds)?;
                    Ok(json!({ "manifest": manifest, "samples": ds.len(), "classes": ds.n_classes() }))
                })
            }
            DataSource::Cifar { dir, split, name, out } => {
                let manifest = out.join(format!("{name}.json"));
                let key = vec!["data-cifar".into(), hash_path(&dir)?, format!("{split:?}/{name}")];
                self.gated(store, "data", &manifest, key, vec![], || {
                    let ds = match split.as_deref() {
                        None => load_cifar10_binary(&dir)?,
                        Some(s) => {
                            let (prefix, tag) = match s {
                                "train" => ("data_batch", SplitTag::Train),
                                "test" => ("test_batch", SplitTag::Test),
                                other => return Err(Error::Argument(format!("unknown split {other}"))),
                            };
                            let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
                                .filter_map(|e| e.ok().map(|e| e.path()))
                                .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with(prefix)))
                                .collect();
                            files.sort();
                            if files.is_empty() {
                                return Err(Error::NoBatchFiles(dir.clone()));
                            }
                            let names = CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect();
                            load_record_files(&files, RecordLayout::CIFAR10, names, tag)?
                        }
                    };
                    save_dataset(&out, &name, &ds)?;
                    Ok(json!({ "manifest": manifest, "samples": ds.len(), "classes": ds.n_classes() }))
                })
            }
        }
    }

    fn train(&self, store: &mut ArtifactStore, a: TrainArgs) -> Result<Value> {
        let data_hash = hash_path(&a.data)?;
        let cfg = match &a.cfg {
            Some(p) => read_config::<TrainConfig>(p)?,
            None => match a.scale {
                Scale::Desk => TrainConfig::desk(a.epochs.unwrap_or(20), a.seed),
                Scale::Paper => TrainConfig::paper(a.seed),
            },
        };
        let cfg = TrainConfig {
            seed: a.seed,
            epochs: a.epochs.unwrap_or(cfg.epochs),
            ..cfg
        };
        let mut key = vec!["train".into(), format!("{:?}/{:?}", a.arch, a.scale), data_hash.clone(), serde_json::to_string(&cfg)?];
        let mut parents = vec![data_hash];
        if let Some(t) = &a.test {
            let h = hash_path(t)?;
            key.push(h.clone());
            parents.push(h);
        }
        self.gated(store, "model", &a.out, key, parents, || {
            let (_, all) = load_manifest(&a.data)?;
            let (train_set, valid) = split_pair(&all, a.seed, (SplitTag::Train, SplitTag::Valid))?;
            let spec = ArchitectureSpec::preset(a.arch, a.scale, all.n_classes()).with_input_side(all.dims().0);
            let mut tm = train(build_model(spec, a.seed)?, &train_set, &valid, &cfg)?;
            if let Some(t) = &a.test {
                tm.evaluate_test(&load_manifest(t)?.1)?;
            }
            save_model(&a.out, &tm)?;
            Ok(json!({ "model_hash": tm.hash(), "metrics": metrics_json(&tm) }))
        })
    }

    fn split_ga(&self, store: &mut ArtifactStore, a: SplitGaArgs) -> Result<Value> {
        let cfg = match &a.cfg {
            Some(p) => read_config::<GaConfig>(p)?,
            None => GaConfig::desk(0),
        };
        cfg.validate()?;
        let rule = parse_groups(&a.groups)?;
        let (model_hash, data_hash) = (hash_path(&a.model)?, hash_path(&a.data)?);
        let key = vec![
            "split-ga".into(),
            model_hash.clone(),
            data_hash.clone(),
            serde_json::to_string(&cfg)?,
            format!("{}/{}/{:?}", a.groups, a.class_agnostic, a.split_seed),
        ];
        self.gated(store, "ga-split", &a.out, key, vec![model_hash, data_hash], || {
            let tm = load_model(&a.model)?;
            let (train_set, valid) = model_split(&tm, &a.data, a.split_seed)?;
            let space = build_search_space(&tm, &train_set, &valid, rule, a.class_agnostic, 0.05, cfg.seed)?;
            let result = ga::search(&tm, &valid, &space, &cfg)?;
            fs::create_dir_all(&a.out)?;
            fs::write(a.out.join("groupings.json"), serde_json::to_vec_pretty(&space.groupings)?)?;
            fs::write(a.out.join("log.csv"), result.log_csv())?;
            let widths = widths(&tm);
            let modules = result.modules(&tm, &space.groupings)?;
            for (g, m) in result.genomes.iter().zip(&modules) {
                save_genome(a.out.join("genomes").join(format!("class{}.json", g.class_id)), &tm.hash(), g)?;
                save_bundle(a.out.join("modules").join(format!("class{}", m.class_id)), m, &widths, Some(&module_metrics(m, &tm, None)))?;
            }
            let cm = compose(modules.clone(), Mode::Parallel)?;
            Ok(json!({
                "status": format!("{:?}", result.status),
                "generations": result.log.len(),
                "valid_cm_acc": cm.accuracy(&valid)?,
                "retained_fraction": bench::retained_fraction(&modules, tm.spec().total_kernels()),
            }))
        })
    }

    fn split_grad(&self, store: &mut ArtifactStore, a: SplitGradArgs) -> Result<Value> {
        let cfg = match &a.cfg {
            Some(p) => read_config::<GradConfig>(p)?,
            None => GradConfig::desk(60, 0),
        };
        cfg.validate()?;
        let (model_hash, data_hash) = (hash_path(&a.model)?, hash_path(&a.data)?);
        let key = vec![
            "split-grad".into(),
            model_hash.clone(),
            data_hash.clone(),
            serde_json::to_string(&cfg)?,
            format!("{:?}", a.split_seed),
        ];
        self.gated(store, "grad-split", &a.out, key, vec![model_hash, data_hash], || {
            let tm = load_model(&a.model)?;
            let (train_set, valid) = model_split(&tm, &a.data, a.split_seed)?;
            let result = grad::split(&tm, &train_set, &valid, &cfg)?;
            fs::create_dir_all(&a.out)?;
            fs::write(a.out.join("log.csv"), result.to_csv())?;
            let widths = widths(&tm);
            let modules = result.modules(&tm)?;
            let selected = result.selected().valid_acc;
            for m in &modules {
                save_bundle(
                    a.out.join("modules").join(format!("class{}", m.class_id)),
                    m,
                    &widths,
                    Some(&module_metrics(m, &tm, Some(selected))),
                )?;
            }
            Ok(json!({
                "selected_epoch": result.selected_epoch,
                "valid_cm_acc": selected,
                "retained_fraction": result.retained_fraction(),
            }))
        })
    }

    fn decode(&self, store: &mut ArtifactStore, a: DecodeArgs) -> Result<Value> {
        let model_hash = hash_path(&a.model)?;
        let source = a
            .genome
            .as_ref()
            .or(a.mask.as_ref())
            .ok_or_else(|| Error::Argument("one of --genome or --mask is required".into()))?;
        let source_hash = hash_path(source)?;
        let key = vec!["decode".into(), model_hash.clone(), source_hash.clone(), format!("{:?}/{:?}", a.groupings, a.class)];
        self.gated(store, "module", &a.out, key, vec![model_hash, source_hash], || {
            let tm = load_model(&a.model)?;
            let widths = widths(&tm);
            let module = match (&a.genome, &a.mask) {
                (Some(g), _) => {
                    let (genome, hash) = load_genome(g)?;
                    if hash != tm.hash() {
                        return Err(Error::Artifact(format!("genome was searched on model {hash}, not {}", tm.hash())));
                    }
                    let plans_path = a.groupings.clone().unwrap_or_else(|| {
                        g.parent().and_then(Path::parent).unwrap_or(Path::new(".")).join("groupings.json")
                    });
                    let plans: Vec<crate::analysis::GroupingPlan> = serde_json::from_slice(&fs::read(&plans_path)?)?;
                    let plan = plans
                        .get(genome.class_id)
                        .ok_or_else(|| Error::Artifact(format!("no grouping plan for class {}", genome.class_id)))?;
                    ga::genome_module(&tm, plan, &genome)?
                }
                (None, Some(m)) => {
                    let class = a.class.ok_or_else(|| Error::Argument("--mask needs --class".into()))?;
                    let text = fs::read_to_string(m)?;
                    let bits = crate::bits::decode(text.trim(), tm.spec().total_kernels())?;
                    decode(&tm, class, &bits, None, Provenance::Grad)?
                }
                (None, None) => unreachable!(),
            };
            save_bundle(&a.out, &module, &widths, Some(&module_metrics(&module, &tm, None)))?;
            Ok(json!({ "class_id": module.class_id, "retained_kernels": module.retained_kernels() }))
        })
    }

    fn compose(&self, store: &mut ArtifactStore, a: ComposeArgs) -> Result<Value> {
        let mut parents = Vec::new();
        for m in &a.modules {
            parents.push(hash_path(m)?);
        }
        let mut key = vec!["compose".into(), format!("{:?}", a.mode)];
        key.extend(parents.iter().cloned());
        if let Some(c) = &a.calib {
            key.push(hash_path(c)?);
        }
        self.gated(store, "composed", &a.out, key, parents, || {
            let modules = a.modules.iter().map(load_bundle).collect::<Result<Vec<_>>>()?;
            let mut order: Vec<usize> = (0..modules.len()).collect();
            order.sort_by_key(|&i| modules[i].class_id);
            let mut cm = compose(modules, a.mode)?;
            if let Some(c) = &a.calib {
                cm.calibrate(&load_manifest(c)?.1)?;
            }
            let dirs: Vec<PathBuf> = order.iter().map(|&i| absolute(&a.modules[i])).collect();
            save_composed(a.out.join("composed.json"), &cm, &dirs)?;
            let mut out = json!({ "manifest": a.out.join("composed.json"), "classes": cm.n_classes() });
            if let Some(t) = &a.test {
                out["test_acc"] = json!(cm.accuracy(&load_manifest(t)?.1)?);
            }
            Ok(out)
        })
    }
}

fn eval_modules(store: &mut ArtifactStore, a: EvalArgs) -> Result<Value> {
    let mut dirs: Vec<PathBuf> = glob::glob(&a.candidates)
        .map_err(|e| Error::Argument(format!("bad glob {}: {e}", a.candidates)))?
        .filter_map(|p| p.ok())
        .filter(|p| p.join("bundle.json").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Argument(format!("no module bundles match {}", a.candidates)));
    }
    let (_, data) = load_manifest(&a.data)?;
    let n = data.n_classes();
    let mut candidates: Vec<Vec<SlicedModule>> = vec![Vec::new(); n];
    let mut paths: Vec<Vec<PathBuf>> = vec![Vec::new(); n];
    for d in &dirs {
        let header = load_bundle_header(d)?;
        if header.class_id >= n {
            return Err(Error::ClassSpace(format!("{} recognizes class {} of a {n}-class dataset", d.display(), header.class_id)));
        }
        candidates[header.class_id].push(load_bundle(d)?);
        paths[header.class_id].push(d.clone());
    }
    if let Some(c) = candidates.iter().position(Vec::is_empty) {
        return Err(Error::Argument(format!("no candidate module for class {c}")));
    }
    let rec = evaluate_and_recommend(&candidates, &data)?;
    if let Some(p) = a.report.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(&a.report, rec.to_csv())?;
    let parents = dirs.iter().map(|d| hash_path(d)).collect::<Result<Vec<_>>>()?;
    let id = store.record("f1-report", &a.report, parents, &input_key(&["eval-modules".into(), a.candidates.clone()]))?;
    let best: Vec<&PathBuf> = rec.best.iter().enumerate().map(|(c, &j)| &paths[c][j]).collect();
    Ok(json!({ "report": a.report, "artifact": id, "best": best, "f1": rec.f1 }))
}

fn patch_cmd(store: &mut ArtifactStore, a: PatchArgs) -> Result<Value> {
    let weak = load_model(&a.weak)?;
    let module = load_bundle(&a.module)?;
    let (_, calib_all) = load_manifest(&a.calib)?;
    let calib = calib_all.subset(&calib_all.indices_of_class(a.tc), SplitTag::Train);
    let patched = patch(weak.clone(), module, a.tc, &calib)?;
    let mut out = json!({ "tc": a.tc, "calibration": patched.calibration });
    if let Some(t) = &a.test {
        let (_, test) = load_manifest(t)?;
        let labels = test.labels();
        let before = weak.net.predict_labels(&test)?;
        let after = patched.predict(&test.full_batch())?;
        out["tc_f1_before"] = json!(BinaryScore::for_class(&before, labels, a.tc).f1);
        out["tc_f1_after"] = json!(BinaryScore::for_class(&after, labels, a.tc).f1);
        out["acc_before"] = json!(crate::zoo::accuracy(&before, labels));
        out["acc_after"] = json!(crate::zoo::accuracy(&after, labels));
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let record = json!({
            "format": "modsplit-patched",
            "version": 1,
            "weak": absolute(&a.weak),
            "module": absolute(&a.module),
            "tc": a.tc,
            "calibration": patched.calibration,
        });
        fs::write(dir.join("patched.json"), serde_json::to_vec_pretty(&record)?)?;
        let parents = vec![hash_path(&a.weak)?, hash_path(&a.module)?];
        let key = input_key(&["patch".into(), parents[0].clone(), parents[1].clone(), a.tc.to_string(), hash_path(&a.calib)?]);
        out["artifact"] = json!(store.record("patched", dir, parents, &key)?);
    }
    Ok(out)
}

fn bench_cmd(store: &mut ArtifactStore, a: BenchArgs) -> Result<Value> {
    let mut value = match &a.cfg {
        Some(p) => serde_json::from_slice::<Value>(&fs::read(p)?)?,
        None => json!({}),
    };
    let obj = value.as_object_mut().ok_or_else(|| Error::Config("bench config must be a JSON object".into()))?;
    match obj.get("scenario") {
        Some(s) if s.as_str().and_then(|s| s.parse::<Scenario>().ok()) != Some(a.scenario) => {
            return Err(Error::Config(format!("config scenario {s} differs from --scenario {}", a.scenario.name())));
        }
        _ => {
            obj.insert("scenario".into(), json!(a.scenario));
        }
    }
    if !a.seeds.is_empty() {
        obj.insert("seeds".into(), json!(a.seeds));
    }
    obj.entry("seeds").or_insert(json!([]));
    let cfg: BenchConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| store.root().join("bench").join(a.scenario.name()));
    let report = bench::run(&cfg)?;
    report.write(&out)?;
    let key = input_key(&["bench".into(), serde_json::to_string(&cfg)?]);
    let id = store.record("report", &out, vec![], &key)?;
    if !report.is_complete() {
        return Err(Error::Artifact(format!(
            "{} stage(s) failed, partial report at {}: {}",
            report.failures.len(),
            out.display(),
            report.failures.join("; ")
        )));
    }
    Ok(json!({ "report": out.join("report.md"), "artifact": id, "summary": report.summary }))
}

fn flops(a: FlopsArgs) -> Result<Value> {
    let spec = match (&a.model, a.arch) {
        (Some(m), _) => load_model(m)?.spec().clone(),
        (None, Some(f)) => ArchitectureSpec::preset(f, a.scale, a.classes),
        (None, None) => return Err(Error::Argument("one of --model or --arch is required".into())),
    };
    Ok(serde_json::to_value(count_flops(&spec, a.convention)?)?)
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_groups(s: &str) -> Result<GroupRule> {
    match s.split_once(':') {
        _ if s == "paper" => Ok(GroupRule::Paper),
        Some(("fixed", g)) => g
            .parse()
            .map(GroupRule::Fixed)
            .map_err(|_| Error::Argument(format!("bad group count {g}"))),
        _ => Err(Error::Argument(format!("unknown grouping rule {s}"))),
    }
}

fn widths(tm: &TrainedModel) -> Vec<usize> {
    tm.net.conv.iter().map(|c| c.out_channels).collect()
}

fn module_metrics(m: &SlicedModule, tm: &TrainedModel, valid_acc: Option<f64>) -> BundleMetrics {
    BundleMetrics {
        retained_kernels: m.retained_kernels(),
        total_kernels: tm.spec().total_kernels(),
        valid_acc,
        f1: None,
    }
}

fn metrics_json(tm: &TrainedModel) -> Value {
    tm.metrics
        .as_ref()
        .map(|m| json!({ "train_acc": m.train_acc, "valid_acc": m.valid_acc, "test_acc": m.test_acc, "best_epoch": m.best_epoch }))
        .unwrap_or(Value::Null)
}

/// The train/valid split a model was trained on, reproduced from its seed.
fn model_split(tm: &TrainedModel, data: &Path, seed: Option<u64>) -> Result<(LabeledDataset, LabeledDataset)> {
    let (_, all) = load_manifest(data)?;
    if all.n_classes() != tm.net.n_classes() {
        return Err(Error::ClassSpace(format!(
            "model has {} classes, dataset {} has {}",
            tm.net.n_classes(),
            data.display(),
            all.n_classes()
        )));
    }
    let seed = seed.or(tm.train_config.as_ref().map(|c| c.seed)).unwrap_or(0);
    split_pair(&all, seed, (SplitTag::Train, SplitTag::Valid))
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}
