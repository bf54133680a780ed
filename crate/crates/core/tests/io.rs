use cmfd::imaging::{load_image, to_gray, GrayImage, RasterImage};
use cmfd::keypoints::detect_keypoints;
use cmfd::mask::TamperMask;
use cmfd::Error;

#[test]
fn rgb_png_and_bmp_load_to_same_gray() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<u8> = (0..12 * 10).flat_map(|i| [(i * 2) as u8, (i * 3) as u8, (255 - i) as u8]).collect();
    let rgb = RasterImage::new(12, 10, 3, data).unwrap();
    rgb.save_png(&dir.path().join("c.png")).unwrap();
    let png = load_image(&dir.path().join("c.png")).unwrap();
    assert_eq!(png, rgb);

    image::RgbImage::from_raw(12, 10, rgb.data.clone())
        .unwrap()
        .save(dir.path().join("c.bmp"))
        .unwrap();
    let bmp = load_image(&dir.path().join("c.bmp")).unwrap();
    assert_eq!(to_gray(&bmp), to_gray(&png));
}

#[test]
fn corrupt_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.png");
    std::fs::write(&p, [0x89, b'P', b'N', b'G', 0, 1, 2]).unwrap();
    assert!(matches!(load_image(&p), Err(Error::Format { .. })));
    assert!(matches!(load_image(&dir.path().join("none.png")), Err(Error::Io { .. })));
}

#[test]
fn mask_png_nonzero_is_tampered() {
    let dir = tempfile::tempdir().unwrap();
    let g = GrayImage::from_fn(8, 4, |x, _| if x < 3 { 0 } else { x as u8 });
    g.save_png(&dir.path().join("m.png")).unwrap();
    let m = TamperMask::load_png(&dir.path().join("m.png")).unwrap();
    assert_eq!(m.count(), 5 * 4);
    assert!(!m.get(2, 0) && m.get(3, 0));
}

#[test]
fn keypoint_csv_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let img = GrayImage::from_fn(48, 48, |x, y| if (x / 8 + y / 8) % 2 == 0 { 40 } else { 210 });
    let kps = detect_keypoints(&img, 0.0, 10.0).unwrap();
    let p = dir.path().join("k.csv");
    kps.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), kps.len() + 1);
}
