use std::collections::BTreeSet;

use proptest::prelude::*;
use splatlift::evaluation::evaluate;
use splatlift::identity::{classify_gaussians, Classifier, IdentityField, IDENTITY_DIM};
use splatlift::manipulation::{apply, select_group, Edit, EditScript};
use splatlift::memory_bank::{associate, AssociationConfig, MemoryBank};
use splatlift::projection::{corresponding_gaussians, project, CorrespondingSet, PatchGrid};
use splatlift::rasterizer::{render, RenderOptions};
use splatlift::scene_io::{
    load_gaussian_ply, load_label_map, save_gaussian_ply, save_label_map, Camera, Gaussian, GaussianScene,
    LabelMap,
};
use splatlift::synthetic::{association_accuracy, corrupt, Corruption};

fn camera(w: u32, h: u32) -> Camera {
    Camera::look_at(0, w, h, w as f64, [0.0, 0.0, -4.0], [0.0; 3], [0.0, -1.0, 0.0])
}

prop_compose! {
    fn gaussian()(
        p in prop::array::uniform3(-1.0f64..1.0),
        q in prop::array::uniform4(-1.0f64..1.0),
        s in prop::array::uniform3(0.01f64..0.3),
        o in 0.05f64..1.0,
        rgb in prop::array::uniform3(0.0f64..1.0),
        rest in prop::collection::vec(-0.3f64..0.3, 45),
    ) -> Gaussian {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        let mut g = Gaussian::isotropic(p, 0.1, o, rgb);
        g.rotation = if n > 1e-2 { q.map(|v| v / n) } else { [1.0, 0.0, 0.0, 0.0] };
        g.scale = s;
        g.sh_rest.copy_from_slice(&rest);
        g
    }
}

fn scene_of(gs: &[Gaussian]) -> GaussianScene {
    let mut s = GaussianScene::new();
    for g in gs {
        s.push(g.clone());
    }
    s
}

fn label_map(w: u32, h: u32, k: u32) -> impl Strategy<Value = LabelMap> {
    prop::collection::vec(0..=k, (w * h) as usize).prop_map(move |l| LabelMap::from_labels(w, h, l).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bank_stays_disjoint_and_owns_every_input(
        sets in prop::collection::vec(prop::collection::btree_set(0u32..300, 1..40), 1..60),
        threshold in 0.0f64..0.5,
    ) {
        let mut bank = MemoryBank::new();
        let mut seen = BTreeSet::new();
        for s in &sets {
            let gm: CorrespondingSet = s.iter().copied().collect();
            let (_, ratio) = bank.best_overlap(&gm).unwrap();
            prop_assert!((0.0..=1.0).contains(&ratio));
            let a = bank.assign(&gm, threshold).unwrap();
            prop_assert!(a.created_new || a.ratio > threshold);
            seen.extend(s.iter().copied());
            bank.check_invariants().unwrap();
            prop_assert_eq!(bank.owned_count(), seen.len());
            prop_assert!(s.iter().all(|g| bank.owner_of(*g).is_some()));
        }
        let ids: Vec<u32> = bank.groups().map(|(id, _)| id).collect();
        prop_assert_eq!(ids, (1..bank.next_id()).collect::<Vec<_>>());
    }

    #[test]
    fn overlap_matches_counting(
        group in prop::collection::btree_set(0u32..60, 1..30),
        probe in prop::collection::btree_set(0u32..60, 1..30),
    ) {
        let mut bank = MemoryBank::new();
        bank.assign(&group.iter().copied().collect(), 0.1).unwrap();
        let (id, ratio) = bank.best_overlap(&probe.iter().copied().collect()).unwrap();
        prop_assert_eq!(id, Some(1));
        let shared = probe.intersection(&group).count();
        prop_assert_eq!(ratio, shared as f64 / probe.len() as f64);
    }

    #[test]
    fn evaluation_ignores_label_names(
        pred in label_map(6, 5, 4),
        gt in label_map(6, 5, 3),
        shift in 1u32..50,
    ) {
        prop_assume!(gt.labels.iter().any(|&l| l != 0));
        let gts = std::slice::from_ref(&gt);
        let a = evaluate(std::slice::from_ref(&pred), gts).unwrap();
        let renamed = pred.relabel(|l| l * 7 + shift);
        let b = evaluate(&[renamed], gts).unwrap();
        prop_assert!((a.mean_iou - b.mean_iou).abs() < 1e-12);
        prop_assert_eq!(a.precision, b.precision);
        prop_assert_eq!(a.recall, b.recall);
        let same = evaluate(gts, gts).unwrap();
        prop_assert_eq!((same.mean_iou, same.precision, same.recall), (1.0, 1.0, 1.0));
    }

    #[test]
    fn front_selection_is_monotone(
        gs in prop::collection::vec(gaussian(), 1..60),
        labels in label_map(16, 16, 2),
        lo in 1.0f64..100.0,
        hi in 1.0f64..100.0,
        n in 1u32..8,
    ) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let scene = scene_of(&gs);
        let proj = project(&scene, &camera(16, 16), 0.01, 0.0);
        for label in 1..=2 {
            let small = corresponding_gaussians(label, &labels, &proj, PatchGrid::square(n), lo);
            let big = corresponding_gaussians(label, &labels, &proj, PatchGrid::square(n), hi);
            prop_assert!(small.indices().iter().all(|&i| big.contains(i)));
            let all = corresponding_gaussians(label, &labels, &proj, PatchGrid::square(n), 100.0);
            let inside = (0..scene.len())
                .filter(|&i| proj.pixel(i).is_some_and(|(x, y)| labels.get(x, y) == label))
                .count();
            prop_assert_eq!(all.len(), inside);
        }
    }

    #[test]
    fn blend_weights_sum_to_at_most_one(gs in prop::collection::vec(gaussian(), 0..40)) {
        let scene = scene_of(&gs);
        let (r, _) = render(&scene, &camera(24, 20), None, None, true, &RenderOptions::default()).unwrap();
        let c = r.contribs.unwrap();
        for p in 0..c.pixel_count() {
            let total: f64 = c.pixel(p).iter().map(|&(_, w)| w as f64).sum();
            prop_assert!(total <= 1.0 + 1e-6, "pixel {} sums to {}", p, total);
            prop_assert!((total - r.alpha_acc[p]).abs() < 1e-5);
        }
    }

    #[test]
    fn features_are_linear_in_encodings(
        gs in prop::collection::vec(gaussian(), 1..20),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let scene = scene_of(&gs);
        let mut x = seed;
        let mut next = move || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let e1: Vec<[f64; IDENTITY_DIM]> = (0..scene.len()).map(|_| std::array::from_fn(|_| next())).collect();
        let e2: Vec<[f64; IDENTITY_DIM]> = (0..scene.len()).map(|_| std::array::from_fn(|_| next())).collect();
        let mix: Vec<[f64; IDENTITY_DIM]> =
            e1.iter().zip(&e2).map(|(u, v)| std::array::from_fn(|j| a * u[j] + b * v[j])).collect();
        let cam = camera(16, 16);
        let opts = RenderOptions::default();
        let f = |e: &[[f64; IDENTITY_DIM]]| render(&scene, &cam, Some(e), None, false, &opts).unwrap().0.feature.unwrap();
        let (f1, f2, fm) = (f(&e1), f(&e2), f(&mix));
        for p in 0..fm.len() {
            for j in 0..IDENTITY_DIM {
                prop_assert!((fm[p][j] - (a * f1[p][j] + b * f2[p][j])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn render_ignores_storage_order(gs in prop::collection::vec(gaussian(), 1..30), rot in 0usize..30) {
        let scene = scene_of(&gs);
        let mut shuffled = gs.clone();
        shuffled.rotate_left(rot % gs.len());
        let other = scene_of(&shuffled);
        let cam = camera(20, 20);
        let opts = RenderOptions::default();
        let (r1, _) = render(&scene, &cam, None, None, false, &opts).unwrap();
        let (r2, _) = render(&other, &cam, None, None, false, &opts).unwrap();
        for p in 0..r1.color.len() {
            for c in 0..3 {
                prop_assert!((r1.color[p][c] - r2.color[p][c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn ply_round_trip_is_bit_stable(gs in prop::collection::vec(gaussian(), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ply"), dir.path().join("b.ply"));
        save_gaussian_ply(&scene_of(&gs), &p1).unwrap();
        let loaded = load_gaussian_ply(&p1).unwrap();
        prop_assert_eq!(loaded.len(), gs.len());
        save_gaussian_ply(&loaded, &p2).unwrap();
        prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        prop_assert_eq!(load_gaussian_ply(&p2).unwrap(), loaded);
    }

    #[test]
    fn label_png_round_trip(map in label_map(9, 7, 65535)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("3.png");
        save_label_map(&map, &p).unwrap();
        prop_assert_eq!(load_label_map(&p).unwrap(), map);
    }

    #[test]
    fn perfect_association_recovers_partition(
        maps in prop::collection::vec(label_map(8, 8, 5), 1..6),
        seed in any::<u64>(),
    ) {
        let (bad, truth) = corrupt(&maps, Corruption::Permute, seed);
        let fixed: Vec<LabelMap> = bad.iter().zip(&truth).map(|(b, t)| b.relabel(|l| t[&l])).collect();
        prop_assert_eq!(&fixed, &maps);
        let score = association_accuracy(&bad, &fixed, &truth).unwrap();
        prop_assert!(score.n_masks == 0 || score.accuracy == 1.0);
    }

    #[test]
    fn classification_is_scale_invariant(
        enc in prop::collection::vec(prop::array::uniform16(-1.0f64..1.0), 1..20),
        weights in prop::collection::vec(prop::array::uniform16(-1.0f64..1.0), 2..5),
        scale in 0.01f64..100.0,
    ) {
        let classifier = Classifier { bias: vec![0.0; weights.len()], weights };
        let a = IdentityField { encodings: enc.clone(), classifier: classifier.clone() };
        let b = IdentityField { encodings: enc.iter().map(|e| e.map(|v| v * scale)).collect(), classifier };
        prop_assert_eq!(classify_gaussians(&a), classify_gaussians(&b));
    }

    #[test]
    fn transparent_gaussians_change_nothing(gs in prop::collection::vec(gaussian(), 1..30), at in 0usize..30) {
        let scene = scene_of(&gs);
        let mut extra = gs.clone();
        let mut ghost = gs[at % gs.len()].clone();
        ghost.opacity = 0.0;
        extra.insert(at % (gs.len() + 1), ghost);
        let cam = camera(20, 16);
        let opts = RenderOptions::default();
        let (a, _) = render(&scene, &cam, None, None, false, &opts).unwrap();
        let (b, _) = render(&scene_of(&extra), &cam, None, None, false, &opts).unwrap();
        prop_assert_eq!(a.color, b.color);
        prop_assert_eq!(a.alpha_acc, b.alpha_acc);
    }

    #[test]
    fn threshold_one_splits_partial_overlaps(
        sets in prop::collection::vec(prop::collection::btree_set(0u32..40, 1..10), 1..30),
    ) {
        let mut bank = MemoryBank::new();
        for s in &sets {
            let gm: CorrespondingSet = s.iter().copied().collect();
            let before = bank.len();
            let contained = bank.groups().any(|(_, g)| s.iter().all(|x| g.binary_search(x).is_ok()));
            let a = bank.assign(&gm, 1.0).unwrap();
            prop_assert!(contained || a.created_new);
            prop_assert!(bank.len() >= before);
        }
    }

    #[test]
    fn association_only_renames_masks(
        gs in prop::collection::vec(gaussian(), 1..40),
        maps in prop::collection::vec(label_map(12, 12, 3), 1..4),
        threshold in 0.0f64..1.0,
    ) {
        let scene = scene_of(&gs);
        let cams: Vec<_> = (0..maps.len() as u32).map(|i| {
            let a = i as f64;
            Camera::look_at(i, 12, 12, 12.0, [4.0 * a.sin(), 0.5, -4.0 * a.cos()], [0.0; 3], [0.0, -1.0, 0.0])
        }).collect();
        let cfg = AssociationConfig { overlap_threshold: threshold, grid: PatchGrid::square(3), ..Default::default() };
        let out = associate(&scene, &cams, &maps, &cfg).unwrap();
        out.bank.check_invariants().unwrap();
        for (orig, new) in maps.iter().zip(&out.relabeled) {
            let mut rename = std::collections::BTreeMap::new();
            for (&a, &b) in orig.labels.iter().zip(&new.labels) {
                prop_assert!(b < out.bank.next_id());
                prop_assert!(a != 0 || b == 0);
                prop_assert_eq!(*rename.entry(a).or_insert(b), b);
            }
        }
        let again = associate(&scene, &cams, &maps, &cfg).unwrap();
        prop_assert_eq!(again.relabeled, out.relabeled);
    }

    #[test]
    fn evaluation_scores_are_bounded(
        pred in prop::collection::vec(label_map(5, 4, 5), 2),
        gt in prop::collection::vec(label_map(5, 4, 4), 2),
    ) {
        prop_assume!(gt.iter().any(|m| m.labels.iter().any(|&l| l != 0)));
        let r = evaluate(&pred, &gt).unwrap();
        for v in [r.mean_iou, r.precision, r.recall] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.n_correct <= r.n_gt.min(r.n_pred));
    }

    #[test]
    fn removed_group_cannot_be_selected_again(
        classes in prop::collection::vec(1usize..4, 1..30),
        g in 1u32..4,
    ) {
        let mut classifier = Classifier::zeros(4);
        for k in 1..4 {
            classifier.weights[k][k] = 1.0;
        }
        let encodings = classes.iter().map(|&c| {
            let mut e = [0.0; IDENTITY_DIM];
            e[c] = 1.0;
            e
        }).collect();
        let field = IdentityField { encodings, classifier };
        let scene = scene_of(&vec![Gaussian::isotropic([0.0; 3], 0.1, 0.5, [0.5; 3]); classes.len()]);
        let edited = apply(&scene, &field, &EditScript { edits: vec![Edit::Remove { group_id: g }] }).unwrap();
        prop_assert!(select_group(&edited.field, g).is_empty());
        prop_assert_eq!(edited.scene.len(), classes.iter().filter(|&&c| c as u32 != g).count());
    }
}
