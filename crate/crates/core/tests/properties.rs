use proptest::prelude::*;

use sdmtl::checkpoint::{decode, encode, load, save};
use sdmtl::data::{load_csv, preprocess, save_csv, split_indices, window, SkeletonSequence};
use sdmtl::loss::{temporal_weights, WeightScheme};
use sdmtl::schedule::build_schedule;
use sdmtl::{Error, Model32, ModelHyper};

fn sequence(joints: usize, frames: usize) -> impl Strategy<Value = SkeletonSequence> {
    prop::collection::vec(-1000.0f32..1000.0, joints * 3 * frames)
        .prop_map(move |v| SkeletonSequence::new("s", joints, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_count_matches_formula(len in 0usize..60, t in 1usize..12, h in 1usize..12, stride in 1usize..6) {
        let seq = SkeletonSequence::new("s", 1, vec![0.0; 3 * len]).unwrap();
        let w = window(&seq, 0, t, h, stride).unwrap();
        let expected = if len < t + h { 0 } else { (len - t - h) / stride + 1 };
        prop_assert_eq!(w.len(), expected);
        for x in &w {
            prop_assert_eq!(x.frames(), t);
            prop_assert_eq!(x.horizon(), h);
            prop_assert_eq!(&x.target[..], seq.frames(x.start + t, h));
        }
    }

    #[test]
    fn split_partitions_indices(n in 1usize..500) {
        let [a, b, c] = split_indices(n);
        prop_assert_eq!(a.start, 0);
        prop_assert_eq!(a.end, b.start);
        prop_assert_eq!(b.end, c.start);
        prop_assert_eq!(c.end, n);
        prop_assert!(a.len() >= b.len() && a.len() >= c.len());
    }

    #[test]
    fn preprocess_centres_root_and_is_idempotent(seq in sequence(4, 5), root in 0usize..4) {
        let (once, info) = preprocess(&seq, root).unwrap();
        let r = info.root_in_kept();
        for f in 0..once.len() {
            for c in 0..3 {
                prop_assert_eq!(once.coord(f, r, c), 0.0);
            }
        }
        let (twice, _) = preprocess(&once, r).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn csv_roundtrip_is_exact(seq in sequence(3, 4)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        save_csv(&path, &seq).unwrap();
        prop_assert_eq!(load_csv(&path).unwrap().values, seq.values);
    }

    #[test]
    fn weights_are_normalized(h in 1usize..40, alpha in 0.01f64..2.0) {
        for scheme in [WeightScheme::Exp, WeightScheme::Linear, WeightScheme::Uniform] {
            let w = temporal_weights(h, alpha, scheme).unwrap().w;
            prop_assert_eq!(w.len(), h);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.windows(2).all(|p| p[1] <= p[0]));
        }
    }

    #[test]
    fn schedule_levels_cover_frames(frames in 2usize..64) {
        let s = build_schedule(frames).unwrap();
        prop_assert_eq!(s.level_count(), frames - 1);
        prop_assert_eq!(s.dyadic_depth + s.extra_levels, frames - 1);
        prop_assert_eq!(s.node_counts()[0], frames.div_ceil(2));
        prop_assert!(s.node_counts().iter().skip(s.dyadic_depth).all(|&n| n == 1));
    }
}

fn small_model() -> Model32 {
    let hyper = ModelHyper {
        frames: 3,
        horizon: 1,
        joints: 2,
        channels: 2,
        stack_len: 1,
        ..ModelHyper::default()
    };
    Model32::new(hyper, 1).unwrap()
}

#[test]
fn file_roundtrip_and_unknown_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = small_model();
    save(&path, &model).unwrap();
    let back: Model32 = load(&path, Some(&model.hyper)).unwrap();
    assert_eq!(encode(&back), encode(&model));

    // Rename the first record and re-sign so only the name is wrong.
    let mut bytes = encode(&model);
    let first_name = 6 + 4 * 10 + 4;
    bytes[first_name] = b'~';
    let body = bytes.len() - 4;
    let crc = crc32fast::hash(&bytes[..body]);
    bytes[body..].copy_from_slice(&crc.to_le_bytes());
    match decode::<f32>(&bytes, None) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains('~'), "{msg}"),
        other => panic!("expected a checkpoint error, got {:?}", other.err()),
    }
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load::<f32>(&dir.path().join("absent.ckpt"), None).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}
