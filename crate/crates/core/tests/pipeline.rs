use bike_core::concept_spotting::Aggregation;
use bike_core::numerics::Matrix;
use bike_core::objective::{random_batch, symmetric_infonce, total_loss, Batch, RandomBatchSpec};
use bike_core::recognition::{evaluate, predict_topk, video_scores, FusionConfig};
use bike_core::store::{CategoryEntry, DatasetManifest, FrameEmbeddings, LabeledVideo};
use bike_core::Vector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LN2: f64 = std::f64::consts::LN_2;

fn e(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

fn m(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

#[test]
fn infonce_frozen_values() {
    let x = m(&[e(3, 0)]);
    let one = symmetric_infonce(&x, &x, &[0], 0.01).unwrap();
    assert_eq!((one.x2y, one.y2x, one.sym), (0.0, 0.0, 0.0));

    let same = m(&[e(2, 0), e(2, 0)]);
    for labels in [[0, 1], [0, 0]] {
        let t = symmetric_infonce(&same, &same, &labels, 1.0).unwrap();
        for v in [t.x2y, t.y2x, t.sym] {
            assert!((v - LN2).abs() < 1e-15, "{labels:?}: {v}");
        }
    }

    // anchors e0, e1 against candidates e0, e1 at tau = 1: each row is
    // lse(1, 0) - 1 = ln(1 + 1/e)
    let id = m(&[e(2, 0), e(2, 1)]);
    let t = symmetric_infonce(&id, &id, &[0, 1], 1.0).unwrap();
    assert!((t.sym - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
}

#[test]
fn aligned_batch_has_negligible_loss() {
    let rows: Vec<Vec<f64>> = (0..4).map(|i| e(4, i)).collect();
    let b = Batch::new(m(&rows), Some(m(&rows)), m(&rows), vec![0, 1, 2, 3], 0.01).unwrap();
    let l = total_loss(&b).unwrap();
    assert!(l.total < 1e-10 && l.total >= 0.0);
}

#[test]
fn duplicated_rows_match_hand_value() {
    // two copies each of e0 (label 0) and e1 (label 1), tau = 1:
    // every row sees logits (1, 1, 0, 0) with two positives at 1
    let rows = vec![e(2, 0), e(2, 0), e(2, 1), e(2, 1)];
    let b = Batch::new(m(&rows), None, m(&rows), vec![0, 0, 1, 1], 1.0).unwrap();
    let want = (2.0 * 1f64.exp() + 2.0).ln() - 1.0;
    let l = total_loss(&b).unwrap();
    assert!((l.total - want).abs() < 1e-15);
    assert_eq!(l.total, l.l_v);
}

proptest! {
    #[test]
    fn transpose_duality(seed in any::<u64>(), batch in 1usize..8, classes in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = RandomBatchSpec { batch, dim: 6, classes, tau: 0.1, with_attributes: false };
        let b = random_batch(&mut rng, spec).unwrap();
        let xy = symmetric_infonce(b.video(), b.cat(), b.labels(), b.tau()).unwrap();
        let yx = symmetric_infonce(b.cat(), b.video(), b.labels(), b.tau()).unwrap();
        prop_assert_eq!(xy.x2y, yx.y2x);
        prop_assert_eq!(xy.y2x, yx.x2y);
    }

    #[test]
    fn permutation_invariance(seed in any::<u64>(), batch in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = RandomBatchSpec { batch, dim: 5, classes: 3, tau: 0.05, with_attributes: true };
        let b = random_batch(&mut rng, spec).unwrap();
        let mut perm: Vec<usize> = (0..batch).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % batch);
        let (l, p) = (total_loss(&b).unwrap(), total_loss(&b.permuted(&perm).unwrap()).unwrap());
        for (x, y) in [(l.l_v2c, p.l_v2c), (l.l_c2v, p.l_c2v), (l.l_a2c, p.l_a2c), (l.l_c2a, p.l_c2a), (l.total, p.total)] {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>(), tau in prop::sample::select(vec![1.0, 0.1, 0.01])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = RandomBatchSpec { batch: 6, dim: 4, classes: 2, tau, with_attributes: true };
        let l = total_loss(&random_batch(&mut rng, spec).unwrap()).unwrap();
        for v in [l.l_v2c, l.l_c2v, l.l_v, l.l_a2c, l.l_c2a, l.l_a, l.total] {
            prop_assert!(v >= 0.0);
        }
        prop_assert!((l.l_v - 0.5 * (l.l_v2c + l.l_c2v)).abs() < 1e-15);
        prop_assert!((l.total - (l.l_v + l.l_a)).abs() < 1e-12);
    }
}

/// One frame of the true class and seven frames leaning toward a rival class.
/// Averaging lets the rival win; category-conditioned saliency does not.
#[test]
fn concept_spotting_resists_partially_aligned_distractors() {
    let d = 6;
    let cats: Vec<CategoryEntry> =
        (0..3).map(|i| CategoryEntry::new(format!("c{i}"), i, Vector::new(e(d, i)).unwrap(), m(&[e(d, i)])).unwrap()).collect();
    let mut videos = Vec::new();
    for (v, (label, rival)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        let mut rows = vec![e(d, label)];
        for t in 0..7 {
            // 0.5 toward the rival, the rest in directions no class uses
            let mut f = e(d, rival);
            f.iter_mut().for_each(|x| *x *= 0.5);
            f[3 + t % 3] = 0.75f64.sqrt();
            rows.push(f);
        }
        videos.push(LabeledVideo { frames: FrameEmbeddings::new(format!("v{v}"), m(&rows)).unwrap(), label });
    }
    let ds = DatasetManifest::new(d, cats, videos).unwrap();
    let top1 = |aggregation| evaluate(&ds, &FusionConfig { aggregation, tau_vcs: 0.05, ..Default::default() }, None).unwrap().top1;
    assert_eq!(top1(Aggregation::MeanPool), 0.0);
    assert_eq!(top1(Aggregation::ConceptSpotting), 1.0);

    let cfg = FusionConfig { tau_vcs: 0.05, ..Default::default() };
    let first = &ds.videos()[0];
    let s = video_scores(&first.frames, ds.categories(), &cfg).unwrap();
    assert_eq!(predict_topk(&s, 3).unwrap(), vec![0, 1, 2]);
    assert!(s.scores[0] > 0.99);
}
