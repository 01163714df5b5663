use proptest::prelude::*;
use ttpoint::checkpoint::{Checkpoint, TrainState};
use ttpoint::clips_io::{decode_clip, encode_clip, read_archive, write_archive};
use ttpoint::config::RunConfig;
use ttpoint::events_io::{load_events, read_binary, read_text, write_binary, write_events, write_text, EventFormat};
use ttpoint_core::events::{ClipSample, Event, EventStream};
use ttpoint_core::harness::{SgdMomentum, SEED_MODEL_INIT};
use ttpoint_core::model::{clips_to_tensor, Model, ModelConfig};
use ttpoint_core::nn::{Mode, Module};
use ttpoint_core::rng::rng_from;
use ttpoint_core::Tensor;

fn arb_stream() -> impl Strategy<Value = EventStream> {
    (2u16..1024, 2u16..1024).prop_flat_map(|(w, h)| {
        prop::collection::vec((0u64..1 << 40, 0..w, 0..h, any::<bool>()), 1..200).prop_map(move |raw| {
            let mut events: Vec<Event> = raw.into_iter().map(|(t, x, y, p)| Event::new(t, x, y, p)).collect();
            events.sort_by_key(|e| e.t_us);
            EventStream::new(events, w, h, None).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn text_events_round_trip(s in arb_stream()) {
        let mut buf = Vec::new();
        write_text(&s, &mut buf).unwrap();
        prop_assert_eq!(read_text(&buf[..]).unwrap(), s);
    }

    #[test]
    fn binary_events_round_trip(s in arb_stream()) {
        let mut buf = Vec::new();
        write_binary(&s, &mut buf).unwrap();
        prop_assert_eq!(buf.len(), 16 + 14 * s.len());
        prop_assert_eq!(read_binary(&buf[..]).unwrap(), s);
    }

    #[test]
    fn clips_round_trip(
        pts in prop::collection::vec([0.0f32..=1.0, 0.0f32..=1.0, 0.0f32..=1.0], 1..300),
        label in prop::option::of(0u32..100),
        start in any::<u32>(),
        len in any::<u32>(),
        source in any::<u32>(),
    ) {
        let clip = ClipSample {
            points: pts,
            label,
            window_start_us: start as u64,
            window_end_us: start as u64 + len as u64,
            source_id: source,
        };
        let bytes = encode_clip(&clip);
        prop_assert_eq!(bytes.len(), 28 + 12 * clip.points.len());
        prop_assert_eq!(decode_clip(&bytes, source).unwrap(), clip);
    }
}

#[test]
fn files_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let events = (0..50).map(|i| Event::new(i * 37, (i % 17) as u16, (i % 5) as u16, i % 3 == 0)).collect();
    let s = EventStream::new(events, 32, 16, None).unwrap();
    for (name, fmt) in [("a.txt", EventFormat::Text), ("a.evt", EventFormat::Binary)] {
        let path = dir.path().join(name);
        write_events(&path, &s, fmt).unwrap();
        assert_eq!(EventFormat::from_path(&path), fmt);
        assert_eq!(load_events(&path, fmt).unwrap(), s);
    }
}

#[test]
fn archive_round_trip_keeps_order() {
    let dir = tempfile::tempdir().unwrap();
    let clip = |source, start| ClipSample {
        points: vec![[0.5, 0.25, start as f32 / 10.0]; 8],
        label: Some(source),
        window_start_us: start,
        window_end_us: start + 5,
        source_id: source,
    };
    let clips = vec![clip(0, 0), clip(0, 3), clip(2, 0), clip(11, 7)];
    write_archive(dir.path(), &clips).unwrap();
    assert_eq!(read_archive(dir.path()).unwrap(), clips);
}

fn tiny_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny(64, 4);
    cfg.window.num_points = 64;
    cfg
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny_run_config();
    let mut model = Model::<f32>::build(&cfg.model, &mut rng_from(5, &[SEED_MODEL_INIT])).unwrap();
    let clip = ClipSample {
        points: (0..64).map(|i| [i as f32 / 64.0, (i * 7 % 64) as f32 / 64.0, (i * 13 % 64) as f32 / 64.0]).collect(),
        label: Some(1),
        window_start_us: 0,
        window_end_us: 1,
        source_id: 0,
    };
    let x = clips_to_tensor::<f32>(&[&clip, &clip]).unwrap();
    model.forward(&x, Mode::Train).unwrap();
    let mut opt = SgdMomentum::new(0.9);
    let mut ps = model.params_mut_vec();
    for p in ps.iter_mut() {
        p.grad.fill(0.01);
    }
    drop(ps);
    opt.step(&mut model, 0.1).unwrap();

    let ck = Checkpoint::from_model(&model, &cfg, TrainState { epoch: 3, seed: 5 }, Some(&opt));
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..4], b"TTPT");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ttpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let mut restored = loaded.to_model().unwrap();
    let again = Checkpoint::from_model(&restored, &cfg, loaded.state.clone(), loaded.optimizer().unwrap().as_ref());
    assert_eq!(again.to_bytes(), bytes);
    let a = model.forward(&x, Mode::Eval).unwrap();
    let b = restored.forward(&x, Mode::Eval).unwrap();
    assert_eq!(a.data(), b.data());
    let v: Vec<Tensor<f32>> = loaded.optimizer().unwrap().unwrap().velocities().iter().map(|(_, t)| t.clone()).collect();
    let w: Vec<Tensor<f32>> = opt.velocities().iter().map(|(_, t)| t.clone()).collect();
    assert_eq!(v, w);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let cfg = tiny_run_config();
    let model = Model::<f32>::build(&cfg.model, &mut rng_from(5, &[SEED_MODEL_INIT])).unwrap();
    let bytes = Checkpoint::from_model(&model, &cfg, TrainState::default(), None).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(b"NOPE").is_err());
}
