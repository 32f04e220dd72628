mod support;

use cfos_core::{compute_grid, crop, stitch, GridMode, MaskBuffer};
use rand::Rng;
use support::oracles::{expected_stitch, random_image, random_mask, rng};

#[test]
fn stitch_inverts_crop_on_random_images() {
    let mut r = rng(77);
    for _ in 0..50 {
        let w = r.random_range(200..=2000);
        let h = r.random_range(200..=2000);
        let img = random_image(&mut r, w, h);
        for mode in [GridMode::Paper, GridMode::Full] {
            let grid = compute_grid(w, h, 128, 4, mode).unwrap();
            let back = stitch(&crop(&img, &grid).unwrap(), &grid).unwrap();
            let covered = grid.covered_dims();
            assert_eq!((back.width(), back.height()), covered);
            assert!(back.pixels() == expected_stitch(&img, covered).as_slice(), "{w}x{h} {mode:?}");
        }
    }
}

#[test]
fn masks_round_trip_with_other_windows() {
    let mut r = rng(78);
    for _ in 0..20 {
        let window = r.random_range(8..64);
        let margin = r.random_range(0..(window - 1) / 2);
        let w = r.random_range(window..300);
        let h = r.random_range(window..300);
        let mask = random_mask(&mut r, w, h, 0.3);
        for mode in [GridMode::Paper, GridMode::Full] {
            let grid = compute_grid(w, h, window, margin, mode).unwrap();
            let back: MaskBuffer = stitch(&crop(&mask, &grid).unwrap(), &grid).unwrap();
            let (cw, ch) = grid.covered_dims();
            for y in 0..ch {
                for x in 0..cw {
                    let want = if x < w && y < h { mask.get(x, y) } else { 0 };
                    assert_eq!(back.get(x, y), want);
                }
            }
        }
    }
}
