mod common;

use actgraph::features::Pattern;
use actgraph::training::{
    infer, load_student, load_teacher, save_checkpoint, train, Dataset, DecodeOptions, TrainError, STUDENT_FILE,
};

#[test]
fn checkpoint_round_trip_keeps_captions() {
    let cfg = common::desk_config(30);
    let (bundles, records) = common::synth_split(3, 4, &Pattern::ALL);
    let data = Dataset::build(bundles, &records, &cfg).unwrap();
    let out = train(&cfg, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &out.card, &out.teacher, &out.student).unwrap();

    let (card, student) = load_student(dir.path()).unwrap();
    assert_eq!(card, out.card);
    let (_, teacher) = load_teacher(dir.path()).unwrap();
    for (a, b) in student.named("s").iter().zip(out.student.named("s")) {
        assert_eq!(a.0, b.0);
        for (x, y) in a.1.data().iter().zip(b.1.data()) {
            assert_eq!(*x, f64::from(*y as f32));
        }
    }
    assert_eq!(teacher.named().len(), out.teacher.named().len());

    for item in &data.items {
        let opts = DecodeOptions { beam: 2, max_len: None };
        let a = infer(&student, &card, &item.bundle.visual_text, opts).unwrap();
        let b = infer(&student, &card, &item.bundle.visual_text, opts).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn missing_student_is_reported() {
    let cfg = common::desk_config(1);
    let (bundles, records) = common::synth_split(3, 2, &[Pattern::Drift]);
    let data = Dataset::build(bundles, &records, &cfg).unwrap();
    let out = train(&cfg, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &out.card, &out.teacher, &out.student).unwrap();
    std::fs::remove_file(dir.path().join(STUDENT_FILE)).unwrap();
    assert!(matches!(load_student(dir.path()), Err(TrainError::Checkpoint(_))));
}

#[test]
fn visual_width_mismatch_is_rejected() {
    let cfg = common::desk_config(1);
    let (bundles, records) = common::synth_split(3, 2, &[Pattern::Burst]);
    let data = Dataset::build(bundles, &records, &cfg).unwrap();
    let out = train(&cfg, &data).unwrap();
    let wrong = actgraph::Matrix::zeros(8, out.card.dims.visual_text + 1);
    assert!(matches!(
        infer(&out.student, &out.card, &wrong, DecodeOptions::default()),
        Err(TrainError::InvalidData(_))
    ));
}
