use face::formats::{read_checkpoint, read_cloud, read_tokens, write_checkpoint, write_cloud, write_tokens, Checkpoint};
use face::obj::{parse_obj_str, write_obj};
use face_core::prep::{normalize_and_quantize, order_faces, OrderMode};
use face_core::sampling::PointCloud;
use face_core::tensor::Tensor;
use face_core::tokenizer::encode;
use face_core::RawMesh;
use proptest::prelude::*;

fn mesh() -> impl Strategy<Value = RawMesh> {
    (3usize..30).prop_flat_map(|nv| {
        let verts = prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), nv);
        let faces = prop::collection::vec(prop::array::uniform3(0..nv as u32), 0..40);
        (verts, faces).prop_map(|(vertices, faces)| RawMesh { vertices, faces })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn obj_round_trip(m in mesh()) {
        let (back, stats) = parse_obj_str(&write_obj(&m)).unwrap();
        prop_assert_eq!(stats.skipped_lines, 0);
        prop_assert_eq!(&back.faces, &m.faces);
        prop_assert_eq!(back.vertices.len(), m.vertices.len());
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() <= 5e-7);
            }
        }
        // Writing what was read gives the same text.
        prop_assert_eq!(write_obj(&back), write_obj(&m));
    }

    #[test]
    fn token_file_round_trip(m in mesh(), r in prop::sample::select(vec![8u32, 32, 1024, 65535])) {
        let m = RawMesh { faces: m.faces.into_iter().filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2]).collect(), ..m };
        let Ok(q) = normalize_and_quantize(&m, r) else { return Ok(()) };
        let tokens = encode(&order_faces(&q, OrderMode::Zyx)).unwrap();
        let mut bytes = Vec::new();
        write_tokens(&mut bytes, &tokens).unwrap();
        prop_assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 18 * tokens.len());
        prop_assert_eq!(read_tokens(&mut bytes.as_slice()).unwrap(), tokens);
    }

    #[test]
    fn cloud_file_round_trip(pts in prop::collection::vec(prop::array::uniform3(-0.5f32..0.5), 1..50)) {
        let positions: Vec<[f64; 3]> = pts.iter().map(|p| p.map(f64::from)).collect();
        let normals = vec![[0.0, 0.0, 1.0]; positions.len()];
        let cloud = PointCloud::new(positions, normals).unwrap();
        let mut bytes = Vec::new();
        write_cloud(&mut bytes, &cloud).unwrap();
        prop_assert_eq!(bytes.len(), 4 + 8 + 24 * cloud.len());
        prop_assert_eq!(read_cloud(&mut bytes.as_slice()).unwrap(), cloud);
    }

    #[test]
    fn checkpoint_round_trip(values in prop::collection::vec(-1e3f32..1e3, 1..64), config in "[a-z =\n]{0,40}") {
        let n = values.len();
        let ckpt = Checkpoint {
            config,
            tensors: vec![
                ("a".into(), Tensor::new(&[n], values.clone()).unwrap().into()),
                ("b.c".into(), Tensor::new(&[1, n], values.iter().map(|&v| f64::from(v) * 0.5).collect()).unwrap().into()),
            ],
        };
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ckpt).unwrap();
        prop_assert_eq!(read_checkpoint(&mut bytes.as_slice()).unwrap(), ckpt);
    }

    #[test]
    fn truncated_files_are_errors(cut in 0usize..40) {
        let tokens = encode(&order_faces(&normalize_and_quantize(&face_core::synth::cube_mesh(), 32).unwrap(), OrderMode::Zyx)).unwrap();
        let mut bytes = Vec::new();
        write_tokens(&mut bytes, &tokens).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(read_tokens(&mut &bytes[..cut]).is_err());
    }
}
