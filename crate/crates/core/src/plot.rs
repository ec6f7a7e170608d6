//! Landmark overlay images.

use crate::facs::{LandmarkFrame, LandmarkPartition};
use crate::image_buf::Image;

pub const FACE_COLOUR: [f32; 3] = [0.25, 0.85, 0.35];
pub const MOUTH_COLOUR: [f32; 3] = [0.95, 0.2, 0.2];
const BACKDROP: f32 = 0.08;

/// RGB `size`x`size` plot of one frame in normalized coordinates, drawn over
/// a dimmed, nearest-resampled background when given. Mouth points are drawn
/// last in their own colour.
pub fn plot_landmarks(frame: &LandmarkFrame, part: &LandmarkPartition, size: usize, background: Option<&Image>) -> Image {
    let mut img = match background {
        Some(bg) => backdrop(bg, size),
        None => Image::filled(size, size, 3, BACKDROP),
    };
    let radius = (size / 128).max(1) as i64;
    let pts = frame.points();
    for &i in part.face() {
        disk(&mut img, pts[i], radius, FACE_COLOUR);
    }
    for &i in part.mouth() {
        disk(&mut img, pts[i], radius, MOUTH_COLOUR);
    }
    img
}

fn backdrop(bg: &Image, size: usize) -> Image {
    let mut out = Image::filled(size, size, 3, 0.0);
    let c = bg.channels();
    for y in 0..size {
        let sy = y * bg.height() / size;
        for x in 0..size {
            let sx = x * bg.width() / size;
            for k in 0..3 {
                let v = bg.get(sx, sy, if c == 3 { k } else { 0 });
                out.data_mut()[(y * size + x) * 3 + k] = 0.5 * v;
            }
        }
    }
    out
}

fn disk(img: &mut Image, p: [f64; 2], r: i64, colour: [f32; 3]) {
    let size = img.width() as i64;
    let cx = (p[0] * size as f64).floor() as i64;
    let cy = (p[1] * size as f64).floor() as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            if dx * dx + dy * dy > r * r || x < 0 || y < 0 || x >= size || y >= size {
                continue;
            }
            let o = ((y * size + x) * 3) as usize;
            img.data_mut()[o..o + 3].copy_from_slice(&colour);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::rig::base_face_points;

    #[test]
    fn mouth_points_are_red() {
        let f = LandmarkFrame::new(base_face_points()).unwrap();
        let part = LandmarkPartition::default();
        let img = plot_landmarks(&f, &part, 128, None);
        let p = f.points()[part.mouth()[0]];
        let (x, y) = ((p[0] * 128.0) as usize, (p[1] * 128.0) as usize);
        assert_eq!([img.get(x, y, 0), img.get(x, y, 1), img.get(x, y, 2)], MOUTH_COLOUR);
    }
}
