use autalk_core::facs::*;
use autalk_core::ingest::landmark_io::{format_landmarks, parse_landmarks};
use autalk_core::ingest::openface::parse_openface_au_csv;
use autalk_core::ingest::*;
use proptest::prelude::*;

fn openface_text(rows: &[(usize, [f64; 18])]) -> String {
    let cat = canonical_au_catalogue();
    let mut s = String::from("frame, timestamp");
    for a in cat {
        s += &format!(", {}", if a.number() == 28 { "AU28_c".to_string() } else { a.intensity_column() });
    }
    s.push('\n');
    for (f, v) in rows {
        s += &format!("{}, {:.2}", f, *f as f64 / 25.0);
        for x in v {
            s += &format!(", {x}");
        }
        s.push('\n');
    }
    s
}

#[test]
fn openface_values_and_presence_mapping() {
    let o12 = ActionUnitId::new(12).unwrap().ordinal();
    let o28 = ActionUnitId::new(28).unwrap().ordinal();
    let mut a = [0.0; 18];
    a[o12] = 3.2;
    a[o28] = 1.0;
    let seq = parse_openface_au_csv(openface_text(&[(1, a), (2, [0.0; 18])]).as_bytes()).unwrap();
    assert_eq!(seq.len(), 2);
    assert_eq!(seq.frames()[0].as_slice()[o12], 3.2);
    assert_eq!(seq.frames()[0].as_slice()[o28], 5.0);
    assert_eq!(seq.frames()[1], AuVector::zeros());
}

#[test]
fn openface_missing_column_named() {
    let text = openface_text(&[(1, [0.0; 18])]).replace("AU04_r", "AU99_r");
    let e = parse_openface_au_csv(text.as_bytes()).unwrap_err();
    assert_eq!(e.category(), "schema");
    assert!(e.to_string().contains("AU04_r"));
}

#[test]
fn openface_out_of_range_rejected_with_row() {
    let mut bad = [0.0; 18];
    bad[0] = 5.5;
    let e = parse_openface_au_csv(openface_text(&[(1, [0.0; 18]), (2, bad)]).as_bytes()).unwrap_err();
    assert_eq!(e.category(), "data");
    // second data row sits on line 3 of the file
    assert!(matches!(e, autalk_core::Error::Data { row: 3, .. }), "{e}");
}

#[test]
fn openface_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("aus.csv");
    let v = emotion_to_au_vector(EmotionLabel::Happy, 2.5).unwrap();
    let seq = AuSequence::constant(v, 4, 25.0).unwrap();
    write_openface_au_csv(&seq, &path).unwrap();
    assert_eq!(read_openface_au_csv(&path).unwrap().frames(), seq.frames());
}

#[test]
fn landmark_truncated_file_is_error() {
    let frame = LandmarkFrame::new(vec![[0.25, 0.75]; 162]).unwrap();
    let seq = LandmarkSequence::new(vec![frame.clone(), frame], 25.0).unwrap();
    let text = format_landmarks(&seq);
    let cut = &text[..text.len() - 40];
    assert!(parse_landmarks(cut, 25.0).is_err());
    let e = parse_landmarks("x0,y0\n0.1,0.2\n", 25.0).unwrap_err();
    assert_eq!(e.category(), "schema");
}

#[test]
fn one_second_at_25_fps_is_25_frames() {
    let p = SpectralEnergyProvider::new(8).unwrap();
    let wave: Vec<f32> = (0..16_000).map(|i| (i as f32 * 0.05).sin()).collect();
    let a = audio_features(&p, &wave, 25.0).unwrap();
    assert_eq!((a.len(), a.width()), (25, 8));
    assert_eq!(a, audio_features(&p, &wave, 25.0).unwrap());
    let silence = audio_features(&p, &vec![0.0; 8000], 25.0).unwrap();
    assert!((1..silence.len()).all(|t| silence.row(t) == silence.row(0)));
    assert!(audio_features(&p, &[], 25.0).is_err());
}

#[test]
fn conditioning_layout() {
    let audio = AudioFeatureSequence::new((0..12).map(|i| i as f64).collect(), 4, 25.0).unwrap();
    let v = emotion_to_au_vector(EmotionLabel::Fear, 1.5).unwrap();
    let aus = AuSequence::constant(v, 3, 25.0).unwrap();
    let c = build_conditioning(&audio, &aus).unwrap();
    assert_eq!((c.len(), c.width()), (3, 22));
    assert_eq!(c.row(1)[..4], [4.0, 5.0, 6.0, 7.0]);
    assert_eq!(c.audio(), audio);
    assert_eq!(c.aus().frames(), aus.frames());
    let four = AuSequence::constant(v, 4, 25.0).unwrap();
    assert_eq!(build_conditioning(&audio, &four).unwrap_err().category(), "alignment");
}

fn small(num_clips: usize) -> SynthOptions {
    SynthOptions { num_clips, frames_per_clip: 6, image_size: 16, ..SynthOptions::default() }
}

#[test]
fn rig_zero_noise_is_the_linear_formula() {
    let spec = RigSpec::procedural(4, 0.0, 11).unwrap();
    let data = synth_rig_generate(&spec, &small(2)).unwrap();
    for clip in &data.clips {
        for t in 0..clip.len() {
            let want = spec.evaluate(&clip.aus.frames()[t], clip.audio.row(t));
            let got = clip.landmarks.frames()[t].to_flat();
            let err = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "frame {t}: {err}");
        }
    }
    assert_eq!(spec.evaluate(&AuVector::zeros(), &[0.0; 4]), spec.base_face);
}

#[test]
fn raising_au12_moves_points_by_five_basis_rows() {
    let spec = RigSpec::procedural(4, 0.0, 11).unwrap();
    let au12 = ActionUnitId::new(12).unwrap();
    let mut u = AuVector::zeros();
    u.set(au12, 5.0).unwrap();
    let moved = spec.evaluate(&u, &[0.0; 4]);
    for (k, b) in spec.au_direction(au12).iter().enumerate() {
        assert!((moved[k] - spec.base_face[k] - 5.0 * b).abs() < 1e-15);
    }
}

#[test]
fn rig_seed_contract() {
    let a = synth_rig_generate(&RigSpec::procedural(4, 0.005, 1).unwrap(), &small(3)).unwrap();
    let b = synth_rig_generate(&RigSpec::procedural(4, 0.005, 1).unwrap(), &small(3)).unwrap();
    let c = synth_rig_generate(&RigSpec::procedural(4, 0.005, 2).unwrap(), &small(3)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.clips[0].aus, c.clips[0].aus);
    for clip in &a.clips {
        assert_eq!(clip.audio.len(), clip.len());
        assert_eq!(clip.aus.len(), clip.len());
        assert_eq!(clip.frames.len(), clip.len());
    }
}

#[test]
fn rig_rejects_single_frame_clips() {
    let spec = RigSpec::procedural(4, 0.0, 0).unwrap();
    let opts = SynthOptions { frames_per_clip: 1, ..small(1) };
    assert!(synth_rig_generate(&spec, &opts).is_err());
}

#[test]
fn dataset_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_rig_generate(&RigSpec::procedural(4, 0.005, 5).unwrap(), &small(3)).unwrap();
    data.save(dir.path(), None).unwrap();
    let back = ToyDataset::load(dir.path()).unwrap();
    assert_eq!(back.clips.len(), 3);
    for (a, b) in data.clips.iter().zip(&back.clips) {
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.aus.frames(), b.aus.frames());
        assert_eq!(a.split, b.split);
    }
}

fn any_seq() -> impl Strategy<Value = LandmarkSequence> {
    prop::collection::vec(prop::num::f64::NORMAL.prop_map(|x| x.clamp(-1e6, 1e6)), 324..=324 * 3)
        .prop_map(|mut v| {
            v.truncate(v.len() / 324 * 324);
            LandmarkSequence::from_flat(&v, 25.0).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn landmark_text_is_lossless(seq in any_seq()) {
        let back = parse_landmarks(&format_landmarks(&seq), 25.0).unwrap();
        prop_assert_eq!(back.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            seq.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn conditioning_slices_back(t in 1usize..6, d in 1usize..5, seed in any::<u64>()) {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let audio = AudioFeatureSequence::new((0..t * d).map(|_| rng.random::<f64>()).collect(), d, 25.0).unwrap();
        let frames = (0..t).map(|_| AuVector::new(&(0..18).map(|_| rng.random_range(0.0..5.0)).collect::<Vec<_>>()).unwrap()).collect();
        let aus = AuSequence::new(frames, 25.0).unwrap();
        let c = build_conditioning(&audio, &aus).unwrap();
        prop_assert_eq!(c.audio(), audio);
        prop_assert_eq!(c.aus(), aus);
    }

    #[test]
    fn rig_is_affine_in_aus(a in prop::collection::vec(0.0f64..2.5, 18), b in prop::collection::vec(0.0f64..2.5, 18)) {
        let spec = RigSpec::procedural(3, 0.0, 4).unwrap();
        let audio = [0.3, -0.2, 0.1];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let l = |v: &[f64]| spec.evaluate(&AuVector::new(v).unwrap(), &audio);
        let (lab, la, lb, l0) = (l(&sum), l(&a), l(&b), l(&[0.0; 18]));
        for k in 0..324 {
            prop_assert!((lab[k] - la[k] - lb[k] + l0[k]).abs() < 1e-12);
        }
    }
}
