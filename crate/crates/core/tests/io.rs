mod common;

use common::*;
use proptest::prelude::*;
use qflow::bfor::BforBasisSpec;
use qflow::field::{DeformationField, Grid};
use qflow::io::*;
use qflow::phantom::hydi_scheme;
use qflow::Error;

fn bytes(v: &Volume) -> Vec<u8> {
    let mut out = Vec::new();
    write_volume_to(&mut out, v).unwrap();
    out
}

fn roundtrip_is_bit_identical(v: &Volume) {
    let first = bytes(v);
    let back = read_volume_from(&mut first.as_slice()).unwrap();
    assert_eq!(back.kind(), v.kind());
    assert_eq!(back.grid(), v.grid());
    assert_eq!(bytes(&back), first);
}

fn sample_volumes(seed: u64) -> Vec<Volume> {
    let g = Grid::new([3, 2, 4], [1.5, 2.0, 0.25], [-3.0, 0.1, 7.0]).unwrap();
    let spec = BforBasisSpec::new(2, 3, 71.3).unwrap();
    vec![
        Volume::Scalar { grid: g, data: random_vec(g.len(), seed) },
        Volume::from(DeformationField::new(g, random_direction(g.len(), seed + 1)).unwrap()),
        Volume::from(smooth_field(g, &spec, seed + 2)),
        Volume::Dwi { grid: g, samples: 5, data: random_vec(5 * g.len(), seed + 3) },
    ]
}

#[test]
fn every_volume_kind_roundtrips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for (i, v) in sample_volumes(1).into_iter().enumerate() {
        let path = dir.path().join(format!("v{i}.qf"));
        write_volume(&path, &v).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
        assert!(!dir.path().join(format!("v{i}.qf.partial")).exists());
    }
}

#[test]
fn payload_layout_is_x_fastest_with_channels_innermost() {
    let g = Grid::new([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
    let v = Volume::Vec3 { grid: g, data: vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]] };
    let b = bytes(&v);
    let payload = &b[b.len() - 48..];
    let vals: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(vals, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn volume_conversions_check_the_kind() {
    let vols = sample_volumes(2);
    assert!(vols[0].clone().into_mask().is_ok());
    assert!(vols[0].clone().into_bfor().is_err());
    assert!(vols[1].clone().into_deformation().is_ok());
    assert!(vols[2].clone().into_bfor().is_ok());
    assert!(vols[2].clone().into_mask().is_err());
    assert_eq!(vols[2].channels(), 18);
    assert_eq!(vols[3].channels(), 5);
}

#[test]
fn corrupted_headers_are_format_errors() {
    let good = bytes(&sample_volumes(3)[2]);
    let text_end = good.windows(4).position(|w| w == b"end\n").unwrap() + 4;
    let header = String::from_utf8(good[..text_end].to_vec()).unwrap();
    let payload = &good[text_end..];
    let cases = [
        header.replacen("QFLOW1", "QFLOW2", 1),
        header.replacen("dims 3 2 4", "dims 3 2", 1),
        header.replacen("dims 3 2 4", "dims 3 0 4", 1),
        header.replacen("spacing", "spacings", 1),
        header.replacen("bfor 2 3", "bfor 3 3", 1),
        header.replacen("table\n1 0 0", "table\n1 0 1", 1),
        header.replacen("background", "backdrop", 1),
        header.replacen("end\n", "", 1),
        String::new(),
    ];
    for (i, h) in cases.iter().enumerate() {
        let mut data = h.as_bytes().to_vec();
        data.extend_from_slice(payload);
        let err = read_volume_from(&mut data.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "case {i}: {err}");
    }
}

#[test]
fn payload_length_must_match_exactly() {
    let good = bytes(&sample_volumes(4)[0]);
    let short = &good[..good.len() - 1];
    assert!(matches!(read_volume_from(&mut &short[..]), Err(Error::Format(_))));
    let mut long = good.clone();
    long.extend_from_slice(&[0; 8]);
    assert!(matches!(read_volume_from(&mut long.as_slice()), Err(Error::Format(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(read_volume("/nonexistent/volume.qf"), Err(Error::Io(_))));
}

#[test]
fn scheme_roundtrips() {
    let s = hydi_scheme();
    let back = parse_scheme(&format_scheme(&s)).unwrap();
    assert_eq!(back.len(), 132);
    assert_eq!(back.shells().len(), s.shells().len());
    for (a, b) in s.samples().iter().zip(back.samples()) {
        assert_eq!(a.b, b.b);
        for i in 0..3 {
            assert!((a.q[i] - b.q[i]).abs() < 1e-12);
        }
    }
    assert!(parse_scheme("1 2 3\n").is_err());
    assert!(parse_scheme("1 0 0 x\n").is_err());
    assert!(parse_scheme("# only a comment\n").is_err());
}

#[test]
fn momentum_roundtrips_exactly() {
    let g = Grid::new([4, 3, 2], [1.0, 1.5, 2.0], [0.5, 0.0, -1.0]).unwrap();
    let m = random_momentum(g, 2.7, 4, 0.3, 5);
    let text = format_momentum(&m);
    assert_eq!(parse_momentum(&text).unwrap(), m);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.txt");
    write_momentum(&path, &m).unwrap();
    assert_eq!(read_momentum(&path).unwrap(), m);
    assert!(parse_momentum(&text.replacen(MOMENTUM_MAGIC, "NOPE", 1)).is_err());
    let truncated: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
    assert!(parse_momentum(&truncated).is_err());
}

#[test]
fn config_lines_parse() {
    let kv = parse_config("# comment\nsigma-v = 12\n\nlambda=0.5 # trailing\n").unwrap();
    assert_eq!(kv, vec![("sigma-v".to_string(), "12".to_string()), ("lambda".to_string(), "0.5".to_string())]);
    assert!(parse_config("no equals sign\n").is_err());
}

#[test]
fn tables_are_tab_separated() {
    let t = format_table(&["shell", "value"], &[vec!["1".into(), "0.5".into()]]);
    assert_eq!(t, "shell\tvalue\n1\t0.5\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_payload_bits_survive(bits in prop::collection::vec(any::<u64>(), 6)) {
        let g = Grid::new([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let data: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).collect();
        for v in [
            Volume::Dwi { grid: g, samples: 3, data: data.clone() },
            Volume::Vec3 { grid: g, data: vec![[data[0], data[1], data[2]], [data[3], data[4], data[5]]] },
            Volume::Scalar { grid: g, data: data[..2].to_vec() },
        ] {
            roundtrip_is_bit_identical(&v);
        }
    }

    #[test]
    fn random_volumes_roundtrip(seed in 0u64..10_000) {
        for v in sample_volumes(seed) {
            roundtrip_is_bit_identical(&v);
            prop_assert_eq!(read_volume_from(&mut bytes(&v).as_slice()).unwrap(), v);
        }
    }
}
