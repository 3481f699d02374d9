use ifan_web::demo::*;

#[test]
fn views_are_four_rgba_images() {
    let bytes = dual_pixel_views(3, 32, 2.5).unwrap();
    assert_eq!(bytes.len(), 4 * 32 * 32 * 4);
    assert!(bytes.chunks(4).all(|px| px[3] == 255));
    let (sharp, blurred) = (&bytes[..4096], &bytes[4096..8192]);
    assert_ne!(sharp, blurred);
    assert!(dual_pixel_views(3, 32, 40.0).is_err());
}

#[test]
fn zero_radius_leaves_every_view_sharp() {
    let bytes = dual_pixel_views(5, 32, 0.0).unwrap();
    let sharp = &bytes[..4096];
    for view in bytes.chunks(4096).skip(1) {
        assert_eq!(view, sharp);
    }
}

#[test]
fn impulse_support_matches_the_receptive_field() {
    for (n, k) in [(1, 3), (3, 3), (2, 5)] {
        let size = impulse_grid(n, k).unwrap();
        let resp = impulse_response(n, k).unwrap();
        assert_eq!(resp.len(), size * size);
        let cols = (0..size).filter(|&x| (0..size).any(|y| resp[y * size + x] > 0.0)).count();
        assert_eq!(cols, n * (k - 1) + 1);
        assert_eq!(resp.iter().cloned().fold(0.0, f32::max), 1.0);
    }
    assert!(impulse_response(2, 4).is_err());
}

#[test]
fn cost_ratio_of_the_matched_pair() {
    assert!((mac_ratio(17, 3, 11) - 102.0 / 121.0).abs() < 1e-15);
}
