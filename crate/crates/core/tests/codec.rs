use clc::codec::{compress, decompress, CodecConfig};
use clc::dictionary::{build_dictionary, dict_from_bytes, dict_to_bytes, BuildConfig, Dictionary, TaggedPatch};
use clc::metrics::psnr;
use clc::synth::{natural_image, random_image, SceneParams};
use clc::{ClcError, Image};

fn dictionary(channels: usize) -> (Dictionary, Vec<Image>) {
    let params = SceneParams::default();
    let scenes: Vec<Image> = (0..3).map(|i| natural_image(128, 128, channels, 300 + i, &params)).collect();
    let patches: Vec<TaggedPatch> = scenes
        .iter()
        .flat_map(|s| s.tiles(64))
        .enumerate()
        .map(|(i, t)| TaggedPatch::new(t, format!("t{i}")))
        .collect();
    let dict = build_dictionary(
        patches,
        BuildConfig {
            clusters: 12,
            pca_dim: 16,
            ..BuildConfig::default()
        },
    )
    .unwrap();
    (dict, scenes)
}

#[test]
fn round_trip_over_shapes_and_configs() {
    let (dict, _) = dictionary(3);
    let tree = dict.ball_tree().unwrap();
    let images = [
        natural_image(64, 64, 3, 1, &SceneParams::default()),
        natural_image(37, 21, 1, 2, &SceneParams::default()),
        random_image(50, 33, 3, 3),
        Image::filled(16, 16, 1, 200).unwrap(),
    ];
    let configs = [
        CodecConfig::default(),
        CodecConfig { refs: 1, step: 4.0, ..CodecConfig::default() },
        CodecConfig { refs: 5, window: 0, alpha_w1: -10.0, ..CodecConfig::default() },
        CodecConfig { no_cond: true, step: 0.5, ..CodecConfig::default() },
        CodecConfig { no_align: true, patch: 8, slices: 4, ..CodecConfig::default() },
    ];
    for im in &images {
        for cfg in &configs {
            let enc = compress(im, &dict, &tree, None, cfg).unwrap();
            let dec = decompress(&enc.bytes, &dict).unwrap();
            assert_eq!(dec, enc.reconstruction, "{cfg:?}");
            assert_eq!(psnr(im, &dec).unwrap(), enc.stats.psnr);
            assert_eq!(enc.stats.total_bits, 8 * enc.bytes.len());
            assert_eq!(compress(im, &dict, &tree, None, cfg).unwrap().bytes, enc.bytes);
        }
    }
}

#[test]
fn decoding_survives_dictionary_serialization() {
    let (dict, _) = dictionary(1);
    let tree = dict.ball_tree().unwrap();
    let im = natural_image(64, 48, 1, 9, &SceneParams::default());
    let enc = compress(&im, &dict, &tree, None, &CodecConfig::default()).unwrap();
    let reloaded = dict_from_bytes(&dict_to_bytes(&dict)).unwrap();
    assert_eq!(decompress(&enc.bytes, &reloaded).unwrap(), enc.reconstruction);
}

#[test]
fn reencoding_a_reconstruction_is_stable() {
    let (dict, _) = dictionary(3);
    let tree = dict.ball_tree().unwrap();
    for (seed, step) in [(11, 1.0), (12, 2.0), (13, 4.0)] {
        let x = natural_image(64, 64, 3, seed, &SceneParams::default());
        let cfg = CodecConfig { step, ..CodecConfig::default() };
        let first = compress(&x, &dict, &tree, None, &cfg).unwrap();
        let second = compress(&first.reconstruction, &dict, &tree, None, &cfg).unwrap();
        assert!(second.stats.psnr >= first.stats.psnr - 0.01, "{} vs {}", second.stats.psnr, first.stats.psnr);
    }
}

#[test]
fn psnr_falls_as_the_step_grows() {
    let (dict, _) = dictionary(1);
    let tree = dict.ball_tree().unwrap();
    let x = natural_image(64, 64, 1, 21, &SceneParams::default());
    let q: Vec<f64> = [0.5, 1.0, 2.0, 4.0, 8.0]
        .iter()
        .map(|&step| compress(&x, &dict, &tree, None, &CodecConfig { step, ..CodecConfig::default() }).unwrap().stats.psnr)
        .collect();
    assert!(q.windows(2).all(|w| w[1] < w[0]), "{q:?}");
    assert!(q.iter().all(|v| v.is_finite()));
}

#[test]
fn self_reference_beats_unconditional_up_to_step_four() {
    let (dict, scenes) = dictionary(1);
    let tree = dict.ball_tree().unwrap();
    // a tile that is itself a dictionary payload
    let tile = dict.entries[0].payload.clone();
    assert!(scenes.iter().flat_map(|s| s.tiles(64)).any(|t| t == tile));
    for step in [0.5, 1.0, 2.0, 4.0] {
        let cond = compress(&tile, &dict, &tree, None, &CodecConfig { refs: 1, step, ..CodecConfig::default() }).unwrap();
        let plain = compress(&tile, &dict, &tree, None, &CodecConfig { no_cond: true, step, ..CodecConfig::default() })
            .unwrap();
        assert!(cond.stats.total_bits < plain.stats.total_bits, "step {step}");
    }
}

#[test]
fn rate_estimate_tracks_the_payload() {
    let (dict, _) = dictionary(3);
    let tree = dict.ball_tree().unwrap();
    for seed in 0..4 {
        let x = natural_image(96, 80, 3, 40 + seed, &SceneParams::default());
        let enc = compress(&x, &dict, &tree, None, &CodecConfig::default()).unwrap();
        let est = enc.stats.estimate.total();
        let actual = enc.stats.total_bits as f64;
        assert!((actual - est).abs() <= 0.005 * est + 64.0, "{actual} vs {est}");
    }
}

#[test]
fn stream_errors_are_typed() {
    let (dict, _) = dictionary(1);
    let (other, _) = dictionary(3);
    let tree = dict.ball_tree().unwrap();
    let x = natural_image(32, 32, 1, 5, &SceneParams::default());
    let bytes = compress(&x, &dict, &tree, None, &CodecConfig::default()).unwrap().bytes;
    assert!(matches!(decompress(&bytes, &other), Err(ClcError::DictionaryMismatch)));
    assert!(matches!(decompress(&bytes[..bytes.len() - 1], &dict), Err(ClcError::MalformedBitstream(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decompress(&bad, &dict), Err(ClcError::BadMagic { .. })));
    let mut bad = bytes.clone();
    bad[5] = 9;
    assert!(matches!(decompress(&bad, &dict), Err(ClcError::VersionMismatch { .. })));
}
