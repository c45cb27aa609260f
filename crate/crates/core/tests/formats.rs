use proptest::prelude::*;

use invrender::geomesh::{decode_obj, encode_obj, TriangleMesh};
use invrender::math::V3;
use invrender::nfield::{read_checkpoint, write_checkpoint, FieldConfig, HashGridConfig, Model, ModelSpec};
use invrender::sceneio::{decode_pfm, decode_pnm, encode_pfm, encode_pnm, parse_depth, Camera, Ldr, PfmImage};
use invrender::math::Aabb;

fn pfm_strategy() -> impl Strategy<Value = PfmImage> {
    (1usize..6, 1usize..6, prop_oneof![Just(1usize), Just(3usize)], any::<bool>(), 0.001f32..100.0).prop_flat_map(|(w, h, c, le, scale)| {
        prop::collection::vec(any::<u32>().prop_map(f32::from_bits), w * h * c)
            .prop_map(move |data| PfmImage { width: w, height: h, channels: c, little_endian: le, scale, data })
    })
}

fn ldr_strategy() -> impl Strategy<Value = Ldr> {
    (1usize..8, 1usize..8, prop_oneof![Just(1usize), Just(3usize)])
        .prop_flat_map(|(w, h, c)| prop::collection::vec(any::<u8>(), w * h * c).prop_map(move |data| Ldr { width: w, height: h, channels: c, data }))
}

fn mesh_strategy() -> impl Strategy<Value = TriangleMesh> {
    (1usize..20).prop_flat_map(|nv| {
        let verts = prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3).prop_map(|(x, y, z)| V3::new(x, y, z)), nv);
        let tris = prop::collection::vec([0..nv as u32, 0..nv as u32, 0..nv as u32], 0..30);
        (verts, tris).prop_map(|(vertices, triangles)| TriangleMesh { vertices, triangles, stamp: 0 })
    })
}

fn same_bits(a: &PfmImage, b: &PfmImage) -> bool {
    (a.width, a.height, a.channels, a.little_endian, a.scale) == (b.width, b.height, b.channels, b.little_endian, b.scale)
        && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.data.len() == b.data.len()
}

proptest! {
    #[test]
    fn pfm_round_trip_is_exact(img in pfm_strategy()) {
        let bytes = encode_pfm(&img);
        let back = decode_pfm(&bytes).unwrap();
        prop_assert!(same_bits(&img, &back));
        prop_assert_eq!(encode_pfm(&back), bytes);
    }

    #[test]
    fn pnm_round_trip_is_exact(img in ldr_strategy()) {
        let bytes = encode_pnm(&img);
        let back = decode_pnm(&bytes).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(encode_pnm(&back), bytes);
    }

    #[test]
    fn obj_round_trip_is_exact(mesh in mesh_strategy()) {
        let text = encode_obj(&mesh);
        let back = decode_obj(&text).unwrap();
        prop_assert_eq!(&back.vertices, &mesh.vertices);
        prop_assert_eq!(&back.triangles, &mesh.triangles);
        prop_assert_eq!(encode_obj(&back), text);
    }

    #[test]
    fn decoders_never_panic_on_noise(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_pfm(&bytes);
        let _ = decode_pnm(&bytes);
        let _ = decode_obj(&String::from_utf8_lossy(&bytes));
        let _ = read_checkpoint(&mut bytes.as_slice());
    }
}

/// Every prefix of a valid file, up to 1000 evenly spread cut points.
fn prefixes(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let n = bytes.len();
    let step = n.div_ceil(1000).max(1);
    (0..n).step_by(step).map(move |k| &bytes[..k])
}

#[test]
fn truncated_pfm_is_rejected() {
    let img = PfmImage { width: 17, height: 9, channels: 3, little_endian: false, scale: 1.0, data: (0..17 * 9 * 3).map(|i| i as f32 * 0.25).collect() };
    let bytes = encode_pfm(&img);
    for p in prefixes(&bytes) {
        assert!(decode_pfm(p).is_err(), "prefix of {} bytes accepted", p.len());
    }
}

#[test]
fn truncated_pnm_is_rejected() {
    for c in [1, 3] {
        let img = Ldr { width: 13, height: 11, channels: c, data: (0..13 * 11 * c).map(|i| i as u8).collect() };
        let bytes = encode_pnm(&img);
        for p in prefixes(&bytes) {
            assert!(decode_pnm(p).is_err(), "prefix of {} bytes accepted", p.len());
        }
    }
}

#[test]
fn truncated_obj_never_panics() {
    let mesh = TriangleMesh {
        vertices: (0..40).map(|i| V3::new(i as f64 * 0.1, -(i as f64), 1.0 / (i as f64 + 1.0))).collect(),
        triangles: (0..38).map(|i| [i, i + 1, i + 2]).collect(),
        stamp: 0,
    };
    let text = encode_obj(&mesh);
    for p in prefixes(text.as_bytes()) {
        // a cut can land on a record boundary and yield a valid smaller mesh
        if let Ok(m) = decode_obj(std::str::from_utf8(p).unwrap()) {
            assert!(m.check_indices());
        }
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let fields = FieldConfig {
        grid: HashGridConfig { levels: 2, log2_table: 6, features: 2, base_res: 4.0, top_res: 8.0 },
        hidden: 4,
        sky_width: 4,
        sky_layers: 2,
        ..FieldConfig::default()
    };
    let model = Model::new(ModelSpec { fields, bounds: Aabb { min: [-1.0; 3], max: [1.0; 3] }, n_illum: 2, n_images: 3 });
    let mut bytes = Vec::new();
    write_checkpoint(&model, &mut bytes).unwrap();
    let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(again, bytes);
    for p in prefixes(&bytes) {
        assert!(read_checkpoint(&mut &p[..]).is_err(), "prefix of {} bytes accepted", p.len());
    }
}

#[test]
fn malformed_text_inputs_have_messages() {
    let e = Camera::parse("1 0 0 0", None).unwrap_err().to_string();
    assert!(e.contains("expected 20 or 22"), "{e}");
    let e = parse_depth("0 0 0 0 0 1 -2\n").unwrap_err().to_string();
    assert!(e.contains("positive"), "{e}");
    let e = decode_obj("v 0 0 0\nf 1 2 3\n").unwrap_err().to_string();
    assert!(e.contains("line 2"), "{e}");
}
