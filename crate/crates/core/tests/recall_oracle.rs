use std::collections::{BTreeMap, BTreeSet};

use patchview_core::dataset_io::{generate_synthetic_rig, SyntheticRigSpec, ViewSetConfig};
use patchview_core::detector::{toy_detect, Detection, ToyDetector, ToyDetectorSpec};
use patchview_core::evaluation::{
    co_visible, cross_view_recall, difference_pct, iou, match_detections, run_experiment,
    EvalParams, FrameSource, GroundTruthBox, MatchTable,
};
use patchview_core::imaging::{place_patch, project_patch, BBox, ImageBuffer, PatchPlacement};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lexicographically best assignment by exhaustive enumeration: detections in
/// score order, each preferring higher IoU, then lower person id, over no match.
fn brute_force(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_t: f64,
    conf_t: f64,
) -> BTreeSet<u32> {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].objectness >= conf_t)
        .collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .objectness
            .total_cmp(&dets[a].objectness)
            .then(a.cmp(&b))
    });

    type Key = Vec<(f64, i64)>;
    fn search(
        k: usize,
        order: &[usize],
        dets: &[Detection],
        gts: &[GroundTruthBox],
        iou_t: f64,
        used: &mut Vec<bool>,
        key: &mut Key,
        chosen: &mut Vec<Option<usize>>,
        best: &mut Option<(Key, Vec<Option<usize>>)>,
    ) {
        if k == order.len() {
            if best.as_ref().is_none_or(|(bk, _)| *key > *bk) {
                *best = Some((key.clone(), chosen.clone()));
            }
            return;
        }
        key.push((f64::NEG_INFINITY, 0));
        chosen.push(None);
        search(k + 1, order, dets, gts, iou_t, used, key, chosen, best);
        key.pop();
        chosen.pop();
        for g in 0..gts.len() {
            let o = iou(&dets[order[k]].bbox, &gts[g].bbox);
            if used[g] || o < iou_t {
                continue;
            }
            used[g] = true;
            key.push((o, -(gts[g].person_id as i64)));
            chosen.push(Some(g));
            search(k + 1, order, dets, gts, iou_t, used, key, chosen, best);
            key.pop();
            chosen.pop();
            used[g] = false;
        }
    }

    let mut best = None;
    search(
        0,
        &order,
        dets,
        gts,
        iou_t,
        &mut vec![false; gts.len()],
        &mut Vec::new(),
        &mut Vec::new(),
        &mut best,
    );
    best.map(|(_, c)| c.into_iter().flatten().map(|g| gts[g].person_id).collect())
        .unwrap_or_default()
}

/// Boxes on a coarse lattice so IoU ties and score ties actually occur.
fn lattice_box(rng: &mut ChaCha8Rng) -> BBox {
    let x = 4.0 * rng.gen_range(0..5) as f64;
    let y = 4.0 * rng.gen_range(0..3) as f64;
    let w = 8.0 + 4.0 * rng.gen_range(0..2) as f64;
    BBox::new(x, y, x + w, y + 12.0).unwrap()
}

fn fixture(rng: &mut ChaCha8Rng, nd: usize, ng: usize) -> (Vec<Detection>, Vec<GroundTruthBox>) {
    let mut ids: Vec<u32> = (0..20).collect();
    let gts = (0..ng)
        .map(|_| {
            let pid = ids.remove(rng.gen_range(0..ids.len()));
            GroundTruthBox {
                view_id: 1,
                frame_id: 0,
                person_id: pid,
                bbox: lattice_box(rng),
            }
        })
        .collect();
    let dets = (0..nd)
        .map(|_| Detection::person(lattice_box(rng), 0.1 * rng.gen_range(2..10) as f64))
        .collect();
    (dets, gts)
}

#[test]
fn greedy_matching_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    for nd in 0..=6 {
        for ng in 0..=6 {
            for _ in 0..40 {
                let (dets, gts) = fixture(&mut rng, nd, ng);
                for (iou_t, conf_t) in [(0.5, 0.5), (0.3, 0.25)] {
                    assert_eq!(
                        match_detections(&dets, &gts, iou_t, conf_t),
                        brute_force(&dets, &gts, iou_t, conf_t),
                        "dets {dets:?}\ngts {gts:?}"
                    );
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 7 * 7 * 40 * 2);
}

#[test]
fn three_detections_four_people_one_below_confidence() {
    let b = |x: f64| BBox::new(x, 0.0, x + 10.0, 20.0).unwrap();
    let gts: Vec<GroundTruthBox> = (0..4)
        .map(|p| GroundTruthBox {
            view_id: 1,
            frame_id: 0,
            person_id: p,
            bbox: b(15.0 * p as f64),
        })
        .collect();
    let dets = vec![
        Detection::person(b(1.0), 0.9),
        Detection::person(b(16.0), 0.8),
        Detection::person(b(45.0), 0.3),
    ];
    let got = match_detections(&dets, &gts, 0.5, 0.5);
    assert_eq!(got, BTreeSet::from([0, 1]));
    assert_eq!(got, brute_force(&dets, &gts, 0.5, 0.5));
}

/// Recall by direct counting.
fn naive_recall(matches: &MatchTable, gts: &[GroundTruthBox], r: u32, d: u32) -> Option<f64> {
    let mut denom = 0;
    let mut hit = 0;
    for g in gts.iter().filter(|g| g.view_id == r) {
        let in_dst = gts
            .iter()
            .any(|h| h.view_id == d && h.frame_id == g.frame_id && h.person_id == g.person_id);
        if in_dst {
            denom += 1;
            if matches
                .get(&(d, g.frame_id))
                .is_some_and(|m| m.contains(&g.person_id))
            {
                hit += 1;
            }
        }
    }
    (denom > 0).then(|| 100.0 * hit as f64 / denom as f64)
}

#[test]
fn cross_view_recall_matches_direct_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let mut gts = Vec::new();
        let mut matches = MatchTable::new();
        for f in 0..3 {
            for v in 1..=3 {
                let mut m = BTreeSet::new();
                for p in 0..6 {
                    if rng.gen_bool(0.6) {
                        gts.push(GroundTruthBox {
                            view_id: v,
                            frame_id: f,
                            person_id: p,
                            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                        });
                        if rng.gen_bool(0.5) {
                            m.insert(p);
                        }
                    }
                }
                matches.insert((v, f), m);
            }
        }
        for d in 1..=3 {
            assert_eq!(
                cross_view_recall(&matches, &gts, 1, d).ok(),
                naive_recall(&matches, &gts, 1, d)
            );
        }
    }
}

#[test]
fn only_co_visible_people_count() {
    let b = BBox::new(0.0, 0.0, 10.0, 20.0).unwrap();
    let gt = |view, person| GroundTruthBox {
        view_id: view,
        frame_id: 0,
        person_id: person,
        bbox: b,
    };
    // A (0) in both views, B (1) only in the destination view.
    let gts = vec![gt(1, 0), gt(2, 0), gt(2, 1)];
    assert_eq!(co_visible(&gts, 1, 2), BTreeSet::from([(0, 0)]));
    let mut m = MatchTable::new();
    m.insert((2, 0), BTreeSet::from([1]));
    assert_eq!(cross_view_recall(&m, &gts, 1, 2).unwrap(), 0.0);
    m.insert((2, 0), BTreeSet::from([0, 1]));
    assert_eq!(cross_view_recall(&m, &gts, 1, 2).unwrap(), 100.0);
}

proptest! {
    #[test]
    fn adding_a_detection_never_loses_matches(seed in 0u64..5000, nd in 0usize..6, ng in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut dets, gts) = fixture(&mut rng, nd, ng);
        let before = match_detections(&dets, &gts, 0.5, 0.5);
        let extra = Detection::person(lattice_box(&mut rng), 0.1 * rng.gen_range(2..10) as f64);
        dets.insert(rng.gen_range(0..=dets.len()), extra);
        let after = match_detections(&dets, &gts, 0.5, 0.5);
        prop_assert!(after.is_superset(&before));
    }

    #[test]
    fn difference_identities(c in 0.01f64..100.0) {
        prop_assert_eq!(difference_pct(c, c).unwrap(), 0.0);
        prop_assert_eq!(difference_pct(c, 0.0).unwrap(), -100.0);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in prop::array::uniform4(0.0f64..50.0), b in prop::array::uniform4(0.0f64..50.0)) {
        let mk = |v: [f64; 4]| BBox::new(v[0].min(v[2]), v[1].min(v[3]), v[0].max(v[2]) + 0.5, v[1].max(v[3]) + 0.5).unwrap();
        let (a, b) = (mk(a), mk(b));
        let o = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert_eq!(o, iou(&b, &a));
    }
}

fn two_view_rig(dir: &std::path::Path) -> patchview_core::dataset_io::DatasetManifest {
    let spec = SyntheticRigSpec {
        n_views: 2,
        n_frames: 3,
        persons_per_frame: 3,
        homographies: vec![[1.0, 0.002, 8.0, 0.0, 1.0, 0.0, 1e-5, 0.0, 1.0]],
        ..SyntheticRigSpec::sample()
    };
    generate_synthetic_rig(&spec, dir).unwrap()
}

/// Recomputes one experiment with the single-patch primitives.
fn step_by_step(
    m: &patchview_core::dataset_io::DatasetManifest,
    gts: &[GroundTruthBox],
    patch: &ImageBuffer,
    spec: &ToyDetectorSpec,
) -> Vec<(Option<f64>, Option<f64>)> {
    let h = m.homographies().unwrap().get(0, 1, 2).copied().unwrap();
    let mut clean = MatchTable::new();
    let mut patched = MatchTable::new();
    for &f in &m.frames {
        let mut ref_img = m.load(1, f).unwrap();
        let ref_clean = ref_img.clone();
        let mut quads = Vec::new();
        for g in gts.iter().filter(|g| g.view_id == 1 && g.frame_id == f) {
            let (img, q) = place_patch(&ref_img, patch, &PatchPlacement::centered(g.bbox)).unwrap();
            ref_img = img;
            quads.push(q);
        }
        let dst_clean = m.load(2, f).unwrap();
        let mut dst = dst_clean.clone();
        for q in &quads {
            dst = project_patch(&dst, &ref_img, q, &h).unwrap();
        }
        for (v, c, p) in [(1, &ref_clean, &ref_img), (2, &dst_clean, &dst)] {
            let g: Vec<_> = gts
                .iter()
                .filter(|g| g.view_id == v && g.frame_id == f)
                .copied()
                .collect();
            clean.insert(
                (v, f),
                match_detections(&toy_detect(c, spec).unwrap(), &g, 0.5, 0.5),
            );
            patched.insert(
                (v, f),
                match_detections(&toy_detect(p, spec).unwrap(), &g, 0.5, 0.5),
            );
        }
    }
    [1, 2]
        .map(|v| {
            (
                naive_recall(&clean, gts, 1, v),
                naive_recall(&patched, gts, 1, v),
            )
        })
        .to_vec()
}

#[test]
fn experiment_matches_step_by_step_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let m = two_view_rig(dir.path());
    let gts = m.load_annotations().unwrap();
    let spec = ToyDetectorSpec::default();
    let det = ToyDetector::new(spec.clone()).unwrap();
    let views = ViewSetConfig {
        reference_view: 1,
        destination_views: vec![2],
    };
    let table = m.homographies().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise: Vec<f64> = (0..20 * 20 * 3).map(|_| rng.gen()).collect();
    let patches = [
        ImageBuffer::filled(10, 10, [0.0; 3]).unwrap(),
        ImageBuffer::from_raw(20, 20, noise).unwrap(),
        ImageBuffer::filled(4, 4, [0.5; 3]).unwrap(),
    ];
    for patch in &patches {
        let out = run_experiment(
            &m,
            &gts,
            patch,
            &views,
            &table,
            &det,
            &EvalParams::default(),
        )
        .unwrap();
        let want = step_by_step(&m, &gts, patch, &spec);
        for (r, (c, p)) in out.reports.iter().zip(want) {
            assert_eq!(
                (r.clean_recall, r.patched_recall),
                (c, p),
                "view {}",
                r.view_id
            );
        }
    }
}

#[test]
fn occluding_patch_drops_recall_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let m = two_view_rig(dir.path());
    let gts = m.load_annotations().unwrap();
    let det = ToyDetector::new(ToyDetectorSpec::default()).unwrap();
    let views = m.view_set.clone().unwrap();
    let params = EvalParams {
        placement_scale: 1.0,
        ..EvalParams::default()
    };
    let black = ImageBuffer::filled(16, 16, [0.0; 3]).unwrap();
    let out = run_experiment(
        &m,
        &gts,
        &black,
        &views,
        &m.homographies().unwrap(),
        &det,
        &params,
    )
    .unwrap();
    for r in &out.reports {
        assert_eq!(r.clean_recall, Some(100.0), "view {}", r.view_id);
        assert_eq!(r.patched_recall, Some(0.0));
        assert_eq!(r.difference, Some(-100.0));
    }
}

#[test]
fn patch_identical_to_what_it_covers_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let m = two_view_rig(dir.path());
    let gts = m.load_annotations().unwrap();
    let det = ToyDetector::new(ToyDetectorSpec::default()).unwrap();
    // Every person is the same template, so its central crop is a no-op patch.
    let g = gts.iter().find(|g| g.view_id == 1).unwrap();
    let frame = m.load(1, g.frame_id).unwrap();
    let (x0, y0) = (g.bbox.xmin as usize + 4, g.bbox.ymin as usize + 4);
    let crop = ImageBuffer::from_fn(8, 8, |x, y| frame.get(x0 + x, y0 + y)).unwrap();
    let out = run_experiment(
        &m,
        &gts,
        &crop,
        &m.view_set.clone().unwrap(),
        &m.homographies().unwrap(),
        &det,
        &EvalParams {
            keep_frames: true,
            ..EvalParams::default()
        },
    )
    .unwrap();
    for r in &out.reports {
        assert_eq!(r.difference, Some(0.0), "view {}", r.view_id);
    }
    let by_key: BTreeMap<_, _> = out
        .patched_frames
        .iter()
        .map(|p| ((p.view, p.frame), &p.image))
        .collect();
    for &f in &m.frames {
        assert_eq!(by_key[&(1, f)], &m.load(1, f).unwrap());
    }
}
