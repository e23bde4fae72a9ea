use panosphere_web::{embedding_frame, normals_frame, projection_frame};

#[test]
fn projection_frame_covers_part_of_the_sphere() {
    let f = projection_frame(128, 64, 90.0, 30.0, -10.0).unwrap();
    assert_eq!((f.width(), f.height()), (128, 64));
    assert_eq!(f.pixels().len(), 128 * 64 * 4);
    assert!(f.pixels().chunks(4).all(|p| p[3] == 255));
    // a 90°×67.5° frustum covers roughly 13% of the sphere
    assert!(f.stat() > 0.10 && f.stat() < 0.16, "{}", f.stat());
    let wider = projection_frame(128, 64, 120.0, 30.0, -10.0).unwrap();
    assert!(wider.stat() > f.stat());
}

#[test]
fn projection_frame_rejects_bad_fov() {
    assert!(projection_frame(64, 32, 180.0, 0.0, 0.0).is_err());
    assert!(projection_frame(0, 32, 90.0, 0.0, 0.0).is_err());
}

#[test]
fn embedding_frame_matches_patch_grid() {
    let f = embedding_frame(8, 16, 16, 0).unwrap();
    assert_eq!(f.pixels().len(), 8 * 16 * 4);
    assert_eq!(f.stat(), 1.0);
    // D' = 4 frequencies 2^{(n-1)·3/4}; the last polar pair uses n = 4
    let last = embedding_frame(8, 16, 16, 15).unwrap();
    assert!((last.stat() - 2f64.powf(2.25)).abs() < 1e-12, "{}", last.stat());
    assert!(embedding_frame(8, 16, 16, 16).is_err());
    assert!(embedding_frame(8, 16, 6, 0).is_err());
}

#[test]
fn normals_frame_tracks_the_analytic_sphere() {
    let f = normals_frame(96, 48, 0.4, -0.3, 0.2).unwrap();
    assert_eq!(f.pixels().len(), 96 * 48 * 4);
    assert!(f.stat() < 2.0, "mean angular error {}°", f.stat());
    assert!(normals_frame(96, 48, 3.0, 0.0, 0.0).is_err());
}
