use proptest::prelude::*;

use stripelight::io::{
    decode_ply, decode_pnm, encode_ply, encode_pnm, read_pattern, read_pnm, write_pattern, write_pnm, BitDepth, Config,
    FormatError, ImageBuffer, Report,
};
use stripelight::pattern::{synthesize_one_shot, synthesize_two_shot, ChannelSet, Levels, Pattern};

fn image() -> impl Strategy<Value = ImageBuffer> {
    (1usize..8, 1usize..8, prop_oneof![Just(1usize), Just(3)], any::<bool>()).prop_flat_map(|(w, h, c, wide)| {
        let depth = if wide { BitDepth::Sixteen } else { BitDepth::Eight };
        proptest::collection::vec(0..=depth.maxval(), w * h * c)
            .prop_map(move |s| ImageBuffer::new(w, h, c, depth, s).unwrap())
    })
}

proptest! {
    #[test]
    fn pnm_files_round_trip(img in image()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if img.channels() == 3 { "a.ppm" } else { "a.pgm" });
        write_pnm(&img, &path).unwrap();
        prop_assert_eq!(read_pnm(&path).unwrap(), img.clone());
        prop_assert_eq!(std::fs::read(&path).unwrap(), encode_pnm(&img));
    }

    #[test]
    fn every_proper_prefix_is_rejected(img in image()) {
        let bytes = encode_pnm(&img);
        for cut in 0..bytes.len() {
            prop_assert!(decode_pnm(&bytes[..cut]).is_err(), "prefix of {} bytes accepted", cut);
        }
    }

    #[test]
    fn pattern_files_round_trip(seed in any::<u64>(), two in any::<bool>(), min in 0.0f64..0.5) {
        let pattern = if two {
            Pattern::TwoShot(synthesize_two_shot(ChannelSet::gb(), 5, 60, 1, Levels { min, max: 1.0 }, seed).unwrap())
        } else {
            Pattern::OneShot(synthesize_one_shot(3, 5, 90, 2, seed).unwrap())
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.slpat");
        write_pattern(&pattern, &path).unwrap();
        let back = read_pattern(&path).unwrap();
        prop_assert_eq!(&back, &pattern);
        let again = dir.path().join("q.slpat");
        write_pattern(&back, &again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn ply_is_bit_exact(points in proptest::collection::vec(proptest::array::uniform3(any::<f64>().prop_filter("finite", |v| v.is_finite())), 0..30)) {
        let back = decode_ply(&encode_ply(&points)).unwrap();
        prop_assert_eq!(back.len(), points.len());
        for (a, b) in back.iter().flatten().zip(points.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn report_round_trip(entries in proptest::collection::vec(("[a-z]{1,6}\\.[a-z_]{1,8}", "[ -~]{0,12}"), 0..10)) {
        let mut r = Report::new();
        for (k, v) in &entries {
            r.push(k.clone(), v);
        }
        prop_assert_eq!(Report::decode(&r.encode()).unwrap(), r);
    }

    #[test]
    fn config_rejects_unknown_keys_with_line(pad in 0usize..5, key in "[a-z]{3,8}\\.[a-z]{3,8}") {
        prop_assume!(Config::parse(&format!("{key}=1")).is_err());
        let text = format!("{}{key}=1\n", "# note\n".repeat(pad));
        match Config::parse(&text) {
            Err(FormatError::UnknownKey { line, .. }) => prop_assert_eq!(line, pad + 1),
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }
}

#[test]
fn stated_pnm_examples() {
    let white = decode_pnm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
    assert_eq!(white.samples(), &[255, 255, 255]);
    let wide = decode_pnm(b"P5\n1 1\n65535\n\x01\x02").unwrap();
    assert_eq!(wide.samples(), &[258]);
    assert!(matches!(decode_pnm(b"P5\n1 1\n1023\n\x01\x02"), Err(FormatError::UnsupportedMaxval(1023))));
}

#[test]
fn config_examples() {
    let cfg = Config::parse("camera.focal_px=800\n").unwrap();
    assert_eq!(cfg.f64("camera.focal_px"), Some(800.0));
    assert!(matches!(Config::parse("camera.focal=800\n"), Err(FormatError::UnknownKey { line: 1, .. })));
    assert!(matches!(
        Config::parse("noise.sigma=0.1\nnoise.sigma=0.2\n"),
        Err(FormatError::DuplicateKey { line: 2, .. })
    ));
    let rig = Config::parse(stripelight::presets::RIG).unwrap();
    stripelight::scene::RigCalibration::from_config(&rig).unwrap();
}
