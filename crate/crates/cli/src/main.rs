use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adveval::attacks::{fgsm, pgd, AttackBudget};
use adveval::attribution::{derive_seed, read_grid, write_grid, AttributionMethod, BuiltinMethod};
use adveval::harness::pipeline::{combos, load_dataset, train_combo};
use adveval::harness::{analyze_file, read_pnm, run_pipeline, write_pnm, ExperimentConfig};
use adveval::metrics::{
    deletion_curve, insertion_blur_curve, insertion_curve, perturbation_curve, CurveMetric,
};
use adveval::nn::serialize::{read_model, write_model};
use adveval::nn::Model;
use adveval::Error;
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "adveval",
    version,
    about = "Evaluate attribution maps with adversarial perturbations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per (dataset, architecture, seed) of a config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compute an attribution map for one image.
    Attribute {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        method: String,
        /// Class to explain; defaults to the prediction.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes `<out>.grid` (float32) and `<out>.pgm` (preview).
        #[arg(long)]
        out: PathBuf,
    },
    /// Attack one image; writes the adversarial image and a JSON sidecar.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum, default_value_t = AttackKind::Fgsm)]
        method: AttackKind,
        #[arg(long, default_value_t = 1)]
        eps_steps: u8,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Label whose loss is increased; defaults to the prediction.
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one map on one image with a curve metric.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Float32 grid written by `attribute`.
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        metric: CurveMetric,
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 5.0)]
        blur_sigma: f64,
        #[arg(long, default_value_t = 1)]
        eps_steps: u8,
        /// Curve CSV (step,x,y).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rankings, consistency and sanity reports from a scores file.
    Analyze {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
    },
    /// Run every stage and write all reports.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    Fgsm,
    Pgd,
}

/// A TOML config with optional overrides of its top-level fields.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    model_seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<CurveMetric>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eps_steps: Option<u8>,
    #[arg(long)]
    pgd_iterations: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
}

impl ConfigArgs {
    fn resolve(self) -> adveval::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.output_dir {
            c.output_dir = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.model_seeds {
            c.model_seeds = v;
        }
        if let Some(v) = self.methods {
            c.methods = v;
        }
        if let Some(v) = self.metrics {
            c.metrics = v;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.eps_steps {
            c.attack.eps_steps = v;
        }
        if let Some(v) = self.pgd_iterations {
            c.attack.pgd_iterations = v;
        }
        if let Some(v) = self.top_k {
            c.top_k = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_model(BufReader::new(f))?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let c = config.resolve()?;
            let dir = c.output_dir.join("models");
            std::fs::create_dir_all(&dir)?;
            let mut report = Vec::new();
            for d in &c.datasets {
                let (train, test) = load_dataset(d).map_err(|e| e.in_stage("dataset"))?;
                for combo in combos(&c).iter().filter(|k| k.dataset == d.name) {
                    let t =
                        train_combo(&c, combo, &train, &test).map_err(|e| e.in_stage("train"))?;
                    let path = dir.join(format!("{}.aemd", combo.label));
                    write_model(&t.model, BufWriter::new(File::create(&path)?))?;
                    println!(
                        "{}: train {:.4} test {:.4}",
                        combo.label, t.train_accuracy, t.test_accuracy
                    );
                    report.push(json!({
                        "combo": combo.label,
                        "train_accuracy": t.train_accuracy,
                        "test_accuracy": t.test_accuracy,
                        "final_loss": t.final_loss,
                        "model_path": format!("models/{}.aemd", combo.label),
                    }));
                }
            }
            write_json(&c.output_dir.join("train.json"), &json!(report))?;
        }
        Command::Attribute {
            model,
            image,
            method,
            class,
            seed,
            out,
        } => {
            let model = load_model(&model)?;
            let img = read_pnm(&image)?;
            let x = img.to_tensor();
            let method = BuiltinMethod::from_name(&method, &Default::default())?;
            let class = match class {
                Some(c) => c,
                None => model.predict(&x)?.class,
            };
            let map = method.attribute(&model, &x, class, derive_seed(seed, 0, method.name()))?;
            write_grid(&map, BufWriter::new(File::create(with_ext(&out, "grid"))?))?;
            write_pnm(&with_ext(&out, "pgm"), &map.normalized()?.to_preview()?)?;
        }
        Command::Attack {
            model,
            image,
            method,
            eps_steps,
            iters,
            target,
            out,
        } => {
            let model = load_model(&model)?;
            let img = read_pnm(&image)?;
            let target = match target {
                Some(t) => t,
                None => model.predict(&img.to_tensor())?.class,
            };
            let (name, r) = match method {
                AttackKind::Fgsm => (
                    "fgsm",
                    fgsm(&model, &img, &AttackBudget::fgsm(eps_steps, target))?,
                ),
                AttackKind::Pgd => (
                    "pgd",
                    pgd(&model, &img, &AttackBudget::pgd(eps_steps, iters, target))?,
                ),
            };
            let adv = r.adversarial();
            write_pnm(&out, adv)?;
            let after = model.predict(&adv.to_tensor())?;
            write_json(
                &with_ext(&out, "json"),
                &json!({
                    "method": name,
                    "eps_steps": eps_steps,
                    "target": target,
                    "success": r.success,
                    "probability_drop": r.probability_drop,
                    "iterations_used": r.iterations_used,
                    "adversarial_class": after.class,
                }),
            )?;
            println!(
                "success={} probability_drop={:.6}",
                r.success, r.probability_drop
            );
        }
        Command::Evaluate {
            model,
            image,
            map,
            metric,
            class,
            steps,
            blur_sigma,
            eps_steps,
            out,
        } => {
            let model = load_model(&model)?;
            let img = read_pnm(&image)?;
            let map = read_grid(BufReader::new(File::open(&map)?))?.normalized()?;
            let class = match class {
                Some(c) => c,
                None => model.predict(&img.to_tensor())?.class,
            };
            let curve = match metric {
                CurveMetric::Deletion => deletion_curve(&model, &img, &map, steps, class)?,
                CurveMetric::Insertion => insertion_curve(&model, &img, &map, steps, class)?,
                CurveMetric::InsertionBlur => {
                    insertion_blur_curve(&model, &img, &map, steps, class, blur_sigma)?
                }
                CurveMetric::Perturbation => {
                    let a = fgsm(&model, &img, &AttackBudget::fgsm(eps_steps, class))?;
                    perturbation_curve(&model, &img, &a, &map, steps, class)?
                }
            };
            if let Some(path) = out {
                let mut w = BufWriter::new(File::create(&path)?);
                writeln!(w, "step,x,y")?;
                for (i, (x, y)) in curve.x().iter().zip(curve.y()).enumerate() {
                    writeln!(w, "{i},{x},{y}")?;
                }
                w.flush()?;
            }
            println!("{} auc={}", metric, curve.auc());
        }
        Command::Analyze { scores, out, top_k } => {
            let report = analyze_file(&scores, &out, top_k).map_err(|e| e.in_stage("analyze"))?;
            for (metric, t) in &report.suite_rankings {
                println!("{metric}: {}", t.methods().join(" > "));
            }
        }
        Command::Pipeline { config } => {
            let c = config.resolve()?;
            let out = run_pipeline(&c)?;
            println!(
                "{} combos, {} scores, {} files in {}",
                out.manifest.combos.len(),
                out.scores.len(),
                out.manifest.files.len(),
                c.output_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<Error>().is_some_and(Error::is_config);
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}
