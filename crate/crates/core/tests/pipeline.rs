mod common;

use std::path::Path;
use std::sync::Arc;

use dmalign_core::grid::BitGrid;
use dmalign_core::grounding::{FixtureProvider, GroundingProvider, NullProvider};
use dmalign_core::io::{load_mask_pgm, load_png};
use dmalign_core::pipeline::{run_edit, AblationFlags, EditConfig, EditOutcome, Models, RunOptions, SessionStore, ARTIFACTS};
use dmalign_core::planner::Verdict;
use dmalign_core::scenes::{self, Scene};
use dmalign_core::Error;

fn models_for(dir: &Path) -> Models {
    let provider: Arc<dyn GroundingProvider> = Arc::new(FixtureProvider::new(dir));
    Models::shipped(provider).unwrap()
}

fn run(scene: &Scene, flags: AblationFlags, out: Option<&Path>) -> EditOutcome {
    let dir = tempfile::tempdir().unwrap();
    scene.write(dir.path()).unwrap();
    let cfg = EditConfig { ablations: flags, ..EditConfig::default() };
    let options = RunOptions { out_dir: out.map(Path::to_path_buf), dump_latents: false };
    let outcome = run_edit(&scene.image, scene.source, scene.target, &cfg, &models_for(dir.path()), &options).unwrap();
    common::assert_background_untouched(&scene.image, &outcome);
    outcome
}

fn overlap(a: &BitGrid, b: &BitGrid) -> usize {
    a.intersect(b).unwrap().popcount()
}

#[test]
fn ship_scene_plan_and_masks() {
    let scene = scenes::ship_on_sand();
    let o = run(&scene, AblationFlags::default(), None);
    let alter: Vec<_> = o.plan.alter.iter().map(|n| (o.source.lemma(n.source.head_index), n.verdict)).collect();
    let keep: Vec<_> = o.plan.keep.iter().map(|n| (o.source.lemma(n.source.head_index), n.verdict)).collect();
    assert_eq!(alter, vec![("sand".to_string(), Verdict::Substituted)]);
    assert_eq!(keep, vec![("sky".to_string(), Verdict::Identical), ("ship".to_string(), Verdict::Identical)]);
    assert_eq!(overlap(&o.refined.mask, scene.region("ship").unwrap()), 0);
    assert_eq!(overlap(&o.refined.mask, scene.region("sky").unwrap()), 0);
    let sand = scene.region("sand").unwrap();
    assert_eq!(overlap(&o.refined.mask, sand), sand.popcount());
}

#[test]
fn identical_captions_are_identity() {
    let scene = scenes::ship_on_sand();
    let dir = tempfile::tempdir().unwrap();
    scene.write(dir.path()).unwrap();
    let o = run_edit(
        &scene.image,
        scene.source,
        scene.source,
        &EditConfig::default(),
        &models_for(dir.path()),
        &RunOptions::default(),
    )
    .unwrap();
    assert!(o.plan.alter.is_empty());
    assert!(o.refined.mask.is_empty_region());
    assert_eq!(o.output, scene.image);
}

#[test]
fn deleted_noun_ablation_frees_its_region() {
    let scene = scenes::motorcycle_and_man();
    let man = scene.region("man").unwrap();
    let base = run(&scene, AblationFlags::default(), None);
    assert_eq!(base.plan.keep.iter().find(|n| n.verdict == Verdict::Deleted).map(|n| base.source.lemma(n.source.head_index)), Some("man".into()));
    assert_eq!(overlap(&base.refined.mask, man), 0);
    let ablated = run(&scene, AblationFlags { no_nonshared_keep: true, ..Default::default() }, None);
    assert!(overlap(&ablated.refined.mask, man) > 0);
    assert!(ablated.refined.mask.popcount() > base.refined.mask.popcount());
}

#[test]
fn refinement_ablation_changes_mask() {
    let scene = scenes::ship_on_sand();
    let base = run(&scene, AblationFlags::default(), None);
    let ablated = run(&scene, AblationFlags { no_refinement: true, ..Default::default() }, None);
    assert_ne!(base.refined.mask, ablated.refined.mask);
    assert_eq!(ablated.refined.mask, ablated.diffusion_mask.upsample(4));
}

#[test]
fn modifier_ablation_empties_alter() {
    let scene = scenes::red_jacket();
    let base = run(&scene, AblationFlags::default(), None);
    assert_eq!(base.plan.alter.len(), 1);
    assert_eq!(base.plan.alter[0].verdict, Verdict::ModifierChanged);
    let ablated = run(&scene, AblationFlags { no_modifiers: true, ..Default::default() }, None);
    assert!(ablated.plan.alter.is_empty());
}

#[test]
fn diffusion_mask_ablation_uses_grounded_regions() {
    let scene = scenes::ship_on_sand();
    let o = run(&scene, AblationFlags { no_diffusion_mask: true, ..Default::default() }, None);
    let expected = scene.region("sand").unwrap().minus(&o.keep_region).unwrap();
    assert_eq!(o.refined.mask, expected);
}

#[test]
fn cancellation_ablation_only_touches_later_stages() {
    let scene = scenes::ship_on_sand();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let base = run(&scene, AblationFlags::default(), Some(a.path()));
    let ablated = run(&scene, AblationFlags { no_noise_cancellation: true, ..Default::default() }, Some(b.path()));
    for f in ["alignment.json", "plan.json", "grounding.json", "refined_mask.pgm", "soft_mask.pgm"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert!(base.cancel.popcount() > 0);
    assert!(ablated.cancel.is_empty_region());
}

#[test]
fn reruns_are_byte_identical() {
    let scene = scenes::red_square();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&scene, AblationFlags::default(), Some(a.path()));
    run(&scene, AblationFlags::default(), Some(b.path()));
    for (_, f) in ARTIFACTS {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn artifacts_round_trip() {
    let scene = scenes::red_square();
    let out = tempfile::tempdir().unwrap();
    let o = run(&scene, AblationFlags::default(), Some(out.path()));
    assert_eq!(load_png(&out.path().join("output.png")).unwrap(), o.output);
    assert_eq!(load_mask_pgm(&out.path().join("refined_mask.pgm")).unwrap(), o.refined.mask);
    let plan: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["schema_version"], 1);
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["background"]["pwmse"], 0.0);
}

#[test]
fn stage_errors_are_wrapped_and_partial_artifacts_kept() {
    let scene = scenes::ship_on_sand();
    let fixtures = tempfile::tempdir().unwrap();
    dmalign_core::io::save_mask_pgm(&fixtures.path().join("sand.pgm"), &BitGrid::new(8, 8)).unwrap();
    let out = tempfile::tempdir().unwrap();
    let options = RunOptions { out_dir: Some(out.path().to_path_buf()), dump_latents: false };
    let err = run_edit(&scene.image, scene.source, scene.target, &EditConfig::default(), &models_for(fixtures.path()), &options)
        .unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "ground", .. }), "{err}");
    assert!(matches!(err.root(), Error::DimensionMismatch { .. }));
    assert!(out.path().join("plan.json").exists());
    assert!(out.path().join("error.txt").exists());
    assert!(!out.path().join("output.png").exists());

    let models = Models::shipped(Arc::new(NullProvider)).unwrap();
    let err = run_edit(&scene.image, "   ", scene.target, &EditConfig::default(), &models, &RunOptions::default()).unwrap_err();
    assert!(matches!(err.root(), Error::EmptyCaption));
    let odd = image::RgbImage::new(30, 30);
    let err = run_edit(&odd, scene.source, scene.target, &EditConfig::default(), &models, &RunOptions::default()).unwrap_err();
    assert!(matches!(err.root(), Error::BadDimensions { .. }));
}

#[test]
fn latents_are_dumped_per_step() {
    let scene = scenes::red_square();
    let out = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    scene.write(dir.path()).unwrap();
    let cfg = EditConfig { steps: 10, ..EditConfig::default() };
    let options = RunOptions { out_dir: Some(out.path().to_path_buf()), dump_latents: true };
    let o = run_edit(&scene.image, scene.source, scene.target, &cfg, &models_for(dir.path()), &options).unwrap();
    assert_eq!(o.latents.len(), 9);
    assert!(out.path().join("latents/x_000.dmg").exists());
    assert!(out.path().join("latents/x_008.dmg").exists());
}

#[test]
fn sessions_keep_ordered_history() {
    let scene = scenes::red_square();
    let data = tempfile::tempdir().unwrap();
    let fixtures = tempfile::tempdir().unwrap();
    scene.write(fixtures.path()).unwrap();
    let models = models_for(fixtures.path());
    let store = SessionStore::open(data.path()).unwrap();
    let s = store.create(&scene.image, scene.source).unwrap();
    let r1 = store.post_edit(&s.id, "a blue square", &EditConfig::default(), &models, false).unwrap().unwrap();
    let r2 = store.post_edit(&s.id, "a green square", &EditConfig::default(), &models, false).unwrap().unwrap();
    let m = store.get(&s.id).unwrap().unwrap();
    assert_eq!(m.history.iter().map(|r| r.run_id.clone()).collect::<Vec<_>>(), vec![r1.run_id.clone(), r2.run_id]);
    for (kind, _) in ARTIFACTS {
        assert!(store.artifact_path(&s.id, &r1.run_id, kind).unwrap().unwrap().exists(), "{kind}");
    }
    assert!(store.get("no-such-session").unwrap().is_none());
    assert!(store.post_edit("no-such-session", "a cat", &EditConfig::default(), &models, false).unwrap().is_none());
    assert!(matches!(store.post_edit(&s.id, "", &EditConfig::default(), &models, false), Err(Error::EmptyCaption)));
    assert_eq!(store.get(&s.id).unwrap().unwrap().history.len(), 2);
    assert!(store.create(&scene.image, " ").is_err());
}
