//! Round-trip and error-path coverage for the point cloud file formats.

use hfbm_core::pcio::{
    generate_synthetic, load_point_cloud, save_point_cloud, CloudFormat, PcioError, Shape,
};

fn round_trip(format: CloudFormat, ext: &str) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(format!("cloud.{ext}"));
    let cloud = generate_synthetic(Shape::Torus, 50, 3).unwrap();
    save_point_cloud(&cloud, &path, format).unwrap();
    let loaded = load_point_cloud(&path, format).unwrap();
    assert_eq!(loaded.points, cloud.points, "{format} round trip drifted");
}

#[test]
fn off_round_trip_is_exact() {
    round_trip(CloudFormat::Off, "off");
}

#[test]
fn ply_round_trip_is_exact() {
    round_trip(CloudFormat::PlyAscii, "ply");
}

#[test]
fn xyz_round_trip_is_exact() {
    round_trip(CloudFormat::Xyz, "xyz");
}

#[test]
fn format_follows_extension() {
    assert_eq!(CloudFormat::from_extension("model.OFF".as_ref()), Some(CloudFormat::Off));
    assert_eq!(CloudFormat::from_extension("a/b/c.ply".as_ref()), Some(CloudFormat::PlyAscii));
    assert_eq!(CloudFormat::from_extension("pts.xyz".as_ref()), Some(CloudFormat::Xyz));
    assert_eq!(CloudFormat::from_extension("notes.txt".as_ref()), None);
}

fn write_and_load(content: &str, ext: &str, format: CloudFormat) -> Result<(), PcioError> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(format!("bad.{ext}"));
    std::fs::write(&path, content).unwrap();
    load_point_cloud(&path, format).map(|_| ())
}

#[test]
fn off_with_wrong_magic_names_the_line() {
    let err = write_and_load("OFX\n1 0 0\n0 0 0\n", "off", CloudFormat::Off).unwrap_err();
    match err {
        PcioError::Parse { line, .. } => assert_eq!(line, 1),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn off_with_short_vertex_list_is_rejected() {
    let err = write_and_load("OFF\n3 0 0\n0 0 0\n1 1 1\n", "off", CloudFormat::Off).unwrap_err();
    assert!(matches!(err, PcioError::Parse { .. }), "got {err:?}");
}

#[test]
fn off_skips_comments_and_blank_lines() {
    let content = "# header comment\nOFF\n\n2 0 0\n# vertices\n0 0 0\n1 2 3\n";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ok.off");
    std::fs::write(&path, content).unwrap();
    let cloud = load_point_cloud(&path, CloudFormat::Off).unwrap();
    assert_eq!(cloud.points, vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
}

#[test]
fn ply_rejects_binary_format_declarations() {
    let content = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
    let err = write_and_load(content, "ply", CloudFormat::PlyAscii).unwrap_err();
    assert!(matches!(err, PcioError::Parse { .. }), "got {err:?}");
}

#[test]
fn ply_reads_extra_vertex_properties_and_other_elements() {
    let content = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty double confidence\nelement face 1\nproperty int a\nend_header\n0 0 0 0.5\n1 2 3 0.25\n7\n";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rich.ply");
    std::fs::write(&path, content).unwrap();
    let cloud = load_point_cloud(&path, CloudFormat::PlyAscii).unwrap();
    assert_eq!(cloud.points, vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
}

#[test]
fn ply_with_fewer_vertices_than_declared_is_rejected() {
    let content = "ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n1 1 1\n";
    let err = write_and_load(content, "ply", CloudFormat::PlyAscii).unwrap_err();
    assert!(matches!(err, PcioError::Parse { .. }), "got {err:?}");
}

#[test]
fn xyz_reports_the_offending_line() {
    let err = write_and_load("0 0 0\n1 1\n", "xyz", CloudFormat::Xyz).unwrap_err();
    match err {
        PcioError::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn empty_file_is_an_error() {
    let err = write_and_load("", "xyz", CloudFormat::Xyz).unwrap_err();
    assert!(matches!(err, PcioError::Empty { .. }), "got {err:?}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_point_cloud("/nonexistent/not_here.xyz".as_ref(), CloudFormat::Xyz).unwrap_err();
    assert!(matches!(err, PcioError::Io { .. }), "got {err:?}");
}
