use std::collections::BTreeMap;
use std::path::Path;

use adveval::harness::{run_pipeline, ExperimentConfig};

const MINIMAL: &str = r#"
model_seeds = [0]
methods = ["gradients", "uniform"]
steps = 32

[[datasets]]
name = "shapes"
kind = "shapes"
train = 600
test = 10

[[architectures]]
name = "conv2"
preset = "conv2"

[training]
learning_rate = 0.005
epochs = 2
batch_size = 16
seed = 0
init_scale = 0.4

[sweep]
eps_steps = [1, 4]
"#;

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(text).unwrap();
    c.output_dir = out.to_path_buf();
    c
}

fn read_all(dir: &Path, files: &[String]) -> BTreeMap<String, Vec<u8>> {
    files
        .iter()
        .map(|f| (f.clone(), std::fs::read(dir.join(f)).unwrap()))
        .collect()
}

#[test]
fn minimal_config_ranks_two_methods_per_metric_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run_pipeline(&config(MINIMAL, &a)).unwrap();
    let m = &out.manifest;
    assert!(!m.partial && m.error.is_none());
    assert_eq!(m.images.len(), 10);
    for table in out.analysis.rankings["shapes-conv2-s0"].values() {
        assert_eq!(table.rows.len(), 2, "{}", table.metric);
    }
    for f in [
        "manifest.json",
        "scores.json",
        "rankings.json",
        "curves/shapes-conv2-s0.csv",
        "models/shapes-conv2-s0.aemd",
    ] {
        assert!(m.files.iter().any(|x| x == f), "{f} missing from manifest");
    }
    for f in &m.files {
        assert!(a.join(f).is_file(), "{f} listed but absent");
    }
    for e in &m.exclusions {
        assert_eq!(
            e.images_in,
            e.scored + e.misclassified + e.attack_failed,
            "{e:?}"
        );
    }
    assert_eq!(m.config_hash, config(MINIMAL, &b).hash());

    let again = run_pipeline(&config(MINIMAL, &b)).unwrap();
    assert_eq!(again.manifest.files, m.files);
    let (ra, rb) = (read_all(&a, &m.files), read_all(&b, &m.files));
    for f in &m.files {
        assert!(ra[f] == rb[f], "{f} differs between reruns");
    }
}

#[test]
fn consistency_matrix_spans_seeds_times_architectures() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL
        .replace(
            "model_seeds = [0]",
            "model_seeds = [0, 1]\nscalar_metrics = false\nwrite_curves = false",
        )
        .replace("test = 10", "test = 6")
        .replace("eps_steps = [1, 4]", "eps_steps = []")
        + "\n[[architectures]]\nname = \"conv3\"\npreset = \"conv3\"\n";
    let out = run_pipeline(&config(&text, dir.path())).unwrap();
    let c = &out.analysis.consistency["deletion"];
    assert_eq!(c.labels.len(), 4);
    assert_eq!(c.tau.len(), 4);
    assert!(c.tau.iter().all(|row| row.len() == 4));
    for i in 0..4 {
        assert_eq!(c.tau[i][i], 1.0);
    }
    assert!(!out
        .manifest
        .files
        .iter()
        .any(|f| f.starts_with("curves/") || f == "sweep.json"));
}

#[test]
fn failed_stage_leaves_a_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(
        "kind = \"shapes\"\ntrain = 600\ntest = 10",
        "kind = \"idx\"\ntrain_images = \"/nonexistent\"\ntrain_labels = \"/nonexistent\"\ntest_images = \"/nonexistent\"\ntest_labels = \"/nonexistent\"",
    );
    let err = run_pipeline(&config(&text, dir.path())).unwrap_err();
    assert!(err.to_string().starts_with("dataset stage failed"), "{err}");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["partial"], true);
    assert!(manifest["error"].as_str().unwrap().contains("dataset"));
}
