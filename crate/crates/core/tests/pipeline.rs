use hotleg_core::dataset::{load_dataset, load_manifest, save_dataset, split_dataset, SplitSpec};
use hotleg_core::deeponet::{checkpoint_load, checkpoint_save, InferenceModel};
use hotleg_core::evalbench::{evaluate_model, export_artifacts, verify_untouched};
use hotleg_core::flowgen::{generate_dataset, FluidConfig, GeometryConfig, SurrogateCoeffs, V_RANGE};
use hotleg_core::training::fit;
use hotleg_core::{ScenarioDataset, Space, TrainConfig};

fn small() -> ScenarioDataset {
    let geom = GeometryConfig { n_s: 10, n_r: 4, ..GeometryConfig::desk() };
    generate_dataset(24, V_RANGE, &geom, &FluidConfig::default(), &SurrogateCoeffs::default(), 5).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig { epochs: 5, batch_size: 6, branch_hidden: vec![12, 12], trunk_hidden: vec![12, 6], ..TrainConfig::desk() }
}

#[test]
fn dataset_round_trip_keeps_digest() {
    let ds = small();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(load_manifest(dir.path()).unwrap(), manifest);
    assert_eq!(back.content_digest(), manifest.content_sha256);
    assert_eq!(back.n_scenarios(), 24);
    assert_eq!(back.n_points(), 40);
    // stored as f32: a second round trip is exact
    let dir2 = tempfile::tempdir().unwrap();
    save_dataset(&back, dir2.path()).unwrap();
    assert_eq!(load_dataset(dir2.path()).unwrap().fields, back.fields);
}

#[test]
fn train_checkpoint_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&small(), &dir.path().join("data")).unwrap();
    let ds = load_dataset(&dir.path().join("data")).unwrap();
    let spec = SplitSpec::new(0.75, 9);
    let split = split_dataset(ds.n_scenarios(), &spec).unwrap();
    let out = fit(&ds, &split, &spec, &cfg()).unwrap();
    assert_eq!(out.history.len(), 5);
    assert!(out.history.train_loss().iter().all(|l| l.is_finite()));

    let ckpt = dir.path().join("ckpt");
    let header = checkpoint_save(&out.model, &ckpt).unwrap();
    assert_eq!(header.param_count, out.model.param_count());
    let loaded = checkpoint_load(&ckpt).unwrap();
    let inputs = ndarray::array![[0.65], [0.7], [0.81]];
    let a = out.model.predict(inputs.view(), Space::Scaled).unwrap().values;
    let b = loaded.predict(inputs.view(), Space::Scaled).unwrap().values;
    // f32 storage bounds the round-trip error
    let rel = (&a - &b).mapv(|d| d * d).sum().sqrt() / a.mapv(|v| v * v).sum().sqrt();
    assert!(rel <= 1e-6, "{rel}");

    let serving = InferenceModel::from_checkpoint(&ckpt).unwrap();
    assert_eq!(serving.checksum(), header.blob_sha256);
    let eval = evaluate_model(&serving, &ds, &split.test, Space::Scaled).unwrap();
    assert_eq!(eval.report.n_scenarios, 6);
    assert_eq!(eval.per_scenario.len(), 6);
    assert!(eval.report.params.iter().all(|p| p.rel_l2.average.is_finite()));
    let provenance = &serving.binding().provenance;
    assert!(verify_untouched(provenance, &ds, &split.test).unwrap());

    let files = export_artifacts(&eval, ds.coords.view(), ds.meta.grid, &dir.path().join("export")).unwrap().files;
    assert!(files.iter().all(|f| f.exists()));
    assert!(files.iter().any(|f| f.extension().is_some_and(|e| e == "svg")));
}

#[test]
fn fit_is_deterministic() {
    let ds = small();
    let spec = SplitSpec::new(0.75, 9);
    let split = split_dataset(ds.n_scenarios(), &spec).unwrap();
    let a = fit(&ds, &split, &spec, &cfg()).unwrap();
    let b = fit(&ds, &split, &spec, &cfg()).unwrap();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ha = checkpoint_save(&a.model, da.path()).unwrap();
    let hb = checkpoint_save(&b.model, db.path()).unwrap();
    assert_eq!(ha.blob_sha256, hb.blob_sha256);
}
