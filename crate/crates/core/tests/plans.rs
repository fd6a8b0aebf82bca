use std::time::Instant;

use dmalign_core::pipeline::{align_captions, plan_edit, AblationFlags, Models};
use dmalign_core::planner::{EditPlan, Verdict};

fn plan(models: &Models, c1: &str, c2: &str) -> (Vec<(String, Verdict)>, Vec<(String, Verdict)>) {
    let (s, t, a) = align_captions(c1, c2, models).unwrap();
    let p: EditPlan = plan_edit(&s, &t, &a, AblationFlags::default()).unwrap();
    let names = |v: &[dmalign_core::planner::PlannedNoun]| v.iter().map(|n| (s.lemma(n.source.head_index), n.verdict)).collect();
    (names(&p.alter), names(&p.keep))
}

fn v(items: &[(&str, Verdict)]) -> Vec<(String, Verdict)> {
    items.iter().map(|(n, v)| (n.to_string(), *v)).collect()
}

#[test]
fn reference_captions_classify_as_described() {
    use Verdict::*;
    let models = Models::without_grounding().unwrap();
    let start = Instant::now();
    let (alter, keep) = plan(
        &models,
        "A girl in a white dress sitting on a sofa with a cat",
        "A girl in a red dress sitting on a bench",
    );
    assert_eq!(alter, v(&[("dress", ModifierChanged), ("sofa", Substituted)]));
    assert_eq!(keep, v(&[("girl", Identical), ("cat", Deleted)]));

    let (alter, keep) = plan(&models, "A woman with a red jacket", "A woman with a green jacket");
    assert_eq!(alter, v(&[("jacket", ModifierChanged)]));
    assert_eq!(keep, v(&[("woman", Identical)]));

    let (alter, keep) = plan(&models, "A motorcycle near a man", "A motorcycle");
    assert!(alter.is_empty());
    assert_eq!(keep, v(&[("motorcycle", Identical), ("man", Deleted)]));

    let (alter, keep) = plan(
        &models,
        "A clear sky and a ship landed on the sand",
        "A clear sky and a ship landed on the ocean",
    );
    assert_eq!(alter, v(&[("sand", Substituted)]));
    assert_eq!(keep, v(&[("sky", Identical), ("ship", Identical)]));
    assert!(start.elapsed().as_secs_f64() < 1.0, "took {:?}", start.elapsed());
}
