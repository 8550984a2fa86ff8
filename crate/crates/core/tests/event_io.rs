//! Binary and text event I/O, ground-truth traces and striding.

mod common;

use proptest::prelude::*;
use rand::Rng;
use rotortrack::event_io::*;

fn random_stream(seed: u64, n: usize, sensor: SensorSize) -> Vec<Event> {
    let mut r = common::rng(seed);
    let mut t = 0u64;
    (0..n)
        .map(|_| {
            t += r.random_range(0..50);
            let p = if r.random_bool(0.5) {
                Polarity::On
            } else {
                Polarity::Off
            };
            Event::new(
                t,
                r.random_range(0..sensor.width),
                r.random_range(0..sensor.height),
                p,
            )
        })
        .collect()
}

#[test]
fn million_event_file_roundtrip() {
    let sensor = SensorSize::new(1280, 720);
    let events = random_stream(9, 1_000_000, sensor);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.bin");
    write_events(&path, sensor, &events).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 1_000_000 * RECORD_LEN);
    let back = read_events(&path).unwrap();
    assert_eq!(back.sensor, sensor);
    assert_eq!(back.events, events);
    let path2 = dir.path().join("b.bin");
    write_events(&path2, back.sensor, &back.events).unwrap();
    assert_eq!(std::fs::read(&path2).unwrap(), bytes);
}

#[test]
fn record_layout_is_little_endian() {
    let e = Event::new(0x0102030405060708, 0x0A0B, 0x0C0D, Polarity::Off);
    let b = encode_events(SensorSize::new(0xFFFF, 0xFFFF), &[e]);
    assert_eq!(&b[..8], MAGIC);
    assert_eq!(&b[12..20], &1u64.to_le_bytes());
    let rec = &b[HEADER_LEN..];
    assert_eq!(&rec[..8], &[8, 7, 6, 5, 4, 3, 2, 1]);
    assert_eq!(&rec[8..12], &[0x0B, 0x0A, 0x0D, 0x0C]);
    assert_eq!(rec[12] as i8, -1);
    assert_eq!(&rec[13..16], &[0, 0, 0]);
}

#[test]
fn zero_polarity_rejected() {
    let mut b = encode_events(SensorSize::new(4, 4), &[Event::new(1, 1, 1, Polarity::On)]);
    b[HEADER_LEN + 12] = 0;
    assert!(matches!(
        decode_events(&b),
        Err(EventIoError::InvalidPolarity { index: 0, value: 0 })
    ));
    let text = "0,1,1,0\n";
    assert!(matches!(
        parse_events_text(std::io::Cursor::new(text)),
        Err(EventIoError::InvalidPolarity { .. })
    ));
}

#[test]
fn stride_cardinality_law() {
    let events = random_stream(3, 10_007, SensorSize::new(64, 64));
    for k in 1..=64 {
        let s = stride_filter(&events, k).unwrap();
        assert_eq!(s.len(), events.len().div_ceil(k), "k={k}");
        assert_eq!(s[0], events[0]);
    }
    let half = stride_filter(&events, 2).unwrap().len() as i64;
    assert!((half - events.len() as i64 / 2).abs() <= 1);
    assert!(matches!(
        stride_filter(&events, 0),
        Err(EventIoError::InvalidStride)
    ));
}

#[test]
fn ground_truth_file_roundtrip() {
    let gt: Vec<GroundTruthSample> = (0..500)
        .map(|i| GroundTruthSample {
            t: i * 100,
            rpm_shaft: 6000.0 + i as f64 * 1.234567891,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gt.csv");
    write_ground_truth(&p, &gt).unwrap();
    assert_eq!(read_ground_truth(&p).unwrap(), gt);
}

proptest! {
    #[test]
    fn binary_roundtrip(seed in any::<u64>(), n in 0usize..500, w in 1u16..2000, h in 1u16..2000) {
        let sensor = SensorSize::new(w, h);
        let events = random_stream(seed, n, sensor);
        let bytes = encode_events(sensor, &events);
        let back = decode_events(&bytes).unwrap();
        prop_assert_eq!(&back.events, &events);
        prop_assert_eq!(encode_events(back.sensor, &back.events), bytes);
    }

    #[test]
    fn text_roundtrip(seed in any::<u64>(), n in 0usize..200) {
        let sensor = SensorSize::new(346, 260);
        let events = random_stream(seed, n, sensor);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        write_events_text(&p, sensor, &events).unwrap();
        let back = read_events(&p).unwrap();
        prop_assert_eq!(back.sensor, sensor);
        prop_assert_eq!(back.events, events);
    }

    #[test]
    fn stride_keeps_every_kth(seed in any::<u64>(), n in 0usize..300, k in 1usize..70) {
        let events = random_stream(seed, n, SensorSize::new(8, 8));
        let s = stride_filter(&events, k).unwrap();
        prop_assert_eq!(s.len(), n.div_ceil(k));
        for (i, e) in s.iter().enumerate() {
            prop_assert_eq!(*e, events[i * k]);
        }
    }
}
