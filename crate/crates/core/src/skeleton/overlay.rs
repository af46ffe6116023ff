//! Skeleton overlays drawn onto pedestrian crops.

use super::FeatureError;
use crate::types::{joint9, BBox, RgbImage, Skeleton9};

/// Side length of classifier crops.
pub const OVERLAY_SIZE: usize = 64;

pub const LEFT_COLOR: [u8; 3] = [255, 0, 0];
pub const RIGHT_COLOR: [u8; 3] = [0, 0, 255];
pub const NECK_COLOR: [u8; 3] = [0, 255, 0];

/// Limb segments in drawing order, with their color.
pub const SEGMENTS: [(usize, usize, [u8; 3]); 8] = [
    (joint9::NECK, joint9::LEFT_SHOULDER, LEFT_COLOR),
    (joint9::LEFT_SHOULDER, joint9::LEFT_HIP, LEFT_COLOR),
    (joint9::LEFT_HIP, joint9::LEFT_KNEE, LEFT_COLOR),
    (joint9::LEFT_KNEE, joint9::LEFT_ANKLE, LEFT_COLOR),
    (joint9::NECK, joint9::RIGHT_SHOULDER, RIGHT_COLOR),
    (joint9::RIGHT_SHOULDER, joint9::RIGHT_HIP, RIGHT_COLOR),
    (joint9::RIGHT_HIP, joint9::RIGHT_KNEE, RIGHT_COLOR),
    (joint9::RIGHT_KNEE, joint9::RIGHT_ANKLE, RIGHT_COLOR),
];

/// Pixel of a frame coordinate inside a `width x height` crop of `bbox`,
/// clamped to the border.
pub fn project(x: f64, y: f64, bbox: &BBox, width: usize, height: usize) -> (i64, i64) {
    let u = ((x - bbox.x()) / bbox.w() * width as f64).floor();
    let v = ((y - bbox.y()) / bbox.h() * height as f64).floor();
    (
        u.clamp(0.0, (width - 1) as f64) as i64,
        v.clamp(0.0, (height - 1) as f64) as i64,
    )
}

fn stamp(img: &mut RgbImage, x: i64, y: i64, rgb: [u8; 3]) {
    for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
        let (px, py) = (x + dx, y + dy);
        if px >= 0 && py >= 0 && (px as usize) < img.width() && (py as usize) < img.height() {
            img.put(px as usize, py as usize, rgb);
        }
    }
}

/// Integer Bresenham line from `a` to `b`, both endpoints included.
pub fn line_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::new();
    loop {
        out.push((x, y));
        if (x, y) == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws the skeleton onto a copy of `crop`, which shows `bbox`.
///
/// Lines are two pixels thick (each line pixel plus its right and lower
/// neighbours). Segments with an absent endpoint are skipped. The neck is
/// drawn last as a green dot.
pub fn render_early_fusion(crop: &RgbImage, s: &Skeleton9, bbox: &BBox) -> Result<RgbImage, FeatureError> {
    if crop.is_empty() {
        return Err(FeatureError::EmptyCrop);
    }
    let mut out = crop.clone();
    let (w, h) = (crop.width(), crop.height());
    let px = |i: usize| project(s.points[i].x, s.points[i].y, bbox, w, h);
    let present = |i: usize| s.points[i].visibility.is_present();
    for &(a, b, rgb) in &SEGMENTS {
        if present(a) && present(b) {
            for (x, y) in line_pixels(px(a), px(b)) {
                stamp(&mut out, x, y, rgb);
            }
        }
    }
    if present(joint9::NECK) {
        let (x, y) = px(joint9::NECK);
        stamp(&mut out, x, y, NECK_COLOR);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use crate::fixtures::full_skeleton;
    use super::super::reduce_keypoints;
    use super::*;
    use crate::types::{Keypoint, SKELETON9_POINTS};

    fn crop() -> RgbImage {
        RgbImage::filled(OVERLAY_SIZE, OVERLAY_SIZE, [90, 90, 90])
    }

    #[test]
    fn bresenham_endpoints_and_connectivity() {
        let l = line_pixels((0, 0), (5, 2));
        assert_eq!(l.first(), Some(&(0, 0)));
        assert_eq!(l.last(), Some(&(5, 2)));
        assert_eq!(l.len(), 6);
        for w in l.windows(2) {
            assert!((w[1].0 - w[0].0).abs() <= 1 && (w[1].1 - w[0].1).abs() <= 1);
        }
        assert_eq!(line_pixels((3, 3), (3, 3)), vec![(3, 3)]);
    }

    #[test]
    fn absent_skeleton_leaves_crop_unchanged() {
        let b = BBox::new(0.0, 0.0, 10.0, 20.0).unwrap();
        let s = Skeleton9::from_vec(vec![Keypoint::ABSENT; SKELETON9_POINTS], b).unwrap();
        assert_eq!(render_early_fusion(&crop(), &s, &b).unwrap(), crop());
    }

    #[test]
    fn ankle_pixel_has_overlay_color() {
        let (s, b) = full_skeleton();
        let s9 = reduce_keypoints(&s, &b).unwrap();
        let out = render_early_fusion(&crop(), &s9, &b).unwrap();
        // left ankle (63,135) in box (25,5,50,140): u = floor(38/50*64) = 48, v = floor(130/140*64) = 59
        assert_eq!(project(63.0, 135.0, &b, 64, 64), (48, 59));
        assert_eq!(out.get(48, 59), LEFT_COLOR);
        let (rx, ry) = project(34.0, 137.0, &b, 64, 64);
        assert_eq!(out.get(rx as usize, ry as usize), RIGHT_COLOR);
        let (nx, ny) = project(50.25, 30.5, &b, 64, 64);
        assert_eq!(out.get(nx as usize, ny as usize), NECK_COLOR);
    }

    #[test]
    fn drawing_is_local() {
        let (s, b) = full_skeleton();
        let s9 = reduce_keypoints(&s, &b).unwrap();
        let out = render_early_fusion(&crop(), &s9, &b).unwrap();
        let mut line: Vec<(i64, i64)> = Vec::new();
        for &(a, c, _) in &SEGMENTS {
            let pa = project(s9.points[a].x, s9.points[a].y, &b, 64, 64);
            let pc = project(s9.points[c].x, s9.points[c].y, &b, 64, 64);
            line.extend(line_pixels(pa, pc));
        }
        let mut changed = 0;
        for y in 0..64i64 {
            for x in 0..64i64 {
                let near = line.iter().any(|&(lx, ly)| (lx - x).abs().max((ly - y).abs()) <= 2);
                if !near {
                    assert_eq!(out.get(x as usize, y as usize), [90, 90, 90]);
                } else if out.get(x as usize, y as usize) != [90, 90, 90] {
                    changed += 1;
                }
            }
        }
        assert!(changed > 50);
    }

    #[test]
    fn out_of_box_points_clamp_to_border() {
        let b = BBox::new(10.0, 10.0, 10.0, 10.0).unwrap();
        assert_eq!(project(-100.0, 500.0, &b, 64, 64), (0, 63));
    }

    #[test]
    fn empty_crop_rejected() {
        let (s, b) = full_skeleton();
        let s9 = reduce_keypoints(&s, &b).unwrap();
        assert_eq!(
            render_early_fusion(&RgbImage::new(0, 0), &s9, &b).unwrap_err(),
            FeatureError::EmptyCrop
        );
    }
}
