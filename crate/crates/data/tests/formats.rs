use mxj_autodiff::Tensor;
use mxj_data::manifest::MANIFEST_VERSION;
use mxj_data::{
    decode_flo, encode_flo, read_flo, read_landmarks, write_flo, write_landmarks, ClipRecord,
    DatasetManifest, GrayImage,
};
use proptest::prelude::*;

#[test]
fn flo_golden_bytes() {
    let zero = encode_flo(&Tensor::zeros(&[2, 1, 1])).unwrap();
    #[rustfmt::skip]
    let want: [u8; 20] = [
        b'P', b'I', b'E', b'H',
        1, 0, 0, 0,
        1, 0, 0, 0,
        0, 0, 0, 0, 0, 0, 0, 0,
    ];
    assert_eq!(zero, want);

    // 2 wide, 1 high: (u, v) = (1, -2) then (0.5, 0)
    let f = Tensor::new(&[2, 1, 2], vec![1.0, 0.5, -2.0, 0.0]).unwrap();
    #[rustfmt::skip]
    let want: [u8; 28] = [
        0x50, 0x49, 0x45, 0x48,
        2, 0, 0, 0,
        1, 0, 0, 0,
        0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0,
        0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x00, 0x00,
    ];
    assert_eq!(encode_flo(&f).unwrap(), want);
    assert_eq!(decode_flo(&want).unwrap(), f);
}

#[test]
fn flo_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.flo");
    let f = Tensor::from_fn(&[2, 3, 5], |i| (i as f32 * 0.37 - 2.0) as f64);
    write_flo(&path, &f).unwrap();
    assert_eq!(read_flo(&path).unwrap(), f);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[3] = 0;
    std::fs::write(&path, &bytes).unwrap();
    assert!(!read_flo(&path).unwrap_err().is_io());
    assert!(read_flo(&dir.path().join("missing.flo")).unwrap_err().is_io());
    assert!(encode_flo(&Tensor::zeros(&[3, 1, 1])).is_err());
}

#[test]
fn landmark_csv_header_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.csv");
    let rows = vec![vec![1.5, 2.25, 0.1 + 0.2, 1e-17], vec![-3.0, 4.0, 5.0, 6.0]];
    write_landmarks(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("x0,y0,x1,y1\n"));
    assert_eq!(read_landmarks(&path).unwrap(), rows);

    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    assert!(read_landmarks(&path).is_err());
    assert!(write_landmarks(&path, &[vec![1.0, 2.0, 3.0]]).is_err());
}

#[test]
fn manifest_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let clip = |id: &str, subject: &str, label| ClipRecord {
        clip_id: id.into(),
        subject_id: subject.into(),
        class_label: label,
        frame_paths: vec!["a/f0.pgm".into(), "a/f1.pgm".into()],
        landmark_path: "a/landmarks.csv".into(),
        flow_paths: vec!["a/flow0.flo".into()],
    };
    let m = DatasetManifest {
        version: MANIFEST_VERSION,
        n_classes: 3,
        t: 2,
        m: 68,
        clips: vec![clip("c0", "s1", 2), clip("c1", "s0", 0)],
    };
    m.save(dir.path()).unwrap();
    let (back, root) = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(back, m);
    assert_eq!(root, dir.path());
    assert_eq!(back.subjects(), vec!["s0".to_string(), "s1".to_string()]);

    let mut bad = m.clone();
    bad.clips[0].class_label = 3;
    assert!(bad.validate().is_err());
    let mut bad = m.clone();
    bad.clips[1].subject_id.clear();
    assert!(bad.validate().is_err());
    let mut bad = m;
    bad.clips[0].flow_paths.clear();
    assert!(bad.validate().is_err());
}

proptest! {
    #[test]
    fn flo_round_trip_at_f32(h in 1usize..6, w in 1usize..6, vals in proptest::collection::vec(-1e4f32..1e4, 50)) {
        let f = Tensor::from_fn(&[2, h, w], |i| vals[i % vals.len()] as f64);
        let bytes = encode_flo(&f).unwrap();
        prop_assert_eq!(bytes.len(), 12 + 8 * h * w);
        prop_assert_eq!(decode_flo(&bytes).unwrap(), f);
    }

    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let data: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let img = GrayImage::new(w, h, data);
        prop_assert_eq!(GrayImage::decode(&img.encode()).unwrap(), img.clone());
        let t = img.to_tensor();
        prop_assert_eq!(GrayImage::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn landmark_csv_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
        let n = vals.len() / 2 * 2;
        let rows = vec![vals[..n].to_vec(), vals[..n].iter().map(|v| v * 0.5).collect()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.csv");
        write_landmarks(&path, &rows).unwrap();
        prop_assert_eq!(read_landmarks(&path).unwrap(), rows);
    }
}
