//! Orientation estimate and border-aware hole filling.

use std::collections::VecDeque;

use crate::hierarchy::TensorMap;
use crate::mask::BinaryMask;

/// Direction in which the blade crosses the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Left to right; the left and right columns are the blade borders.
    Horizontal,
    /// Top to bottom; the top and bottom rows are the blade borders.
    Vertical,
}

/// Accumulated absolute Sobel responses `(sum |Gx|, sum |Gy|)` over the
/// interior of the grayscale (channel mean) image.
pub fn sobel_energy(image: &TensorMap) -> (f64, f64) {
    let (c, h, w) = image.shape();
    if h < 3 || w < 3 || c == 0 {
        return (0.0, 0.0);
    }
    let mut gray = vec![0f64; h * w];
    for ch in 0..c {
        for (g, &v) in gray.iter_mut().zip(image.plane(ch)) {
            *g += v as f64;
        }
    }
    gray.iter_mut().for_each(|g| *g /= c as f64);
    let at = |y: usize, x: usize| gray[y * w + x];
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            sx += gx.abs();
            sy += gy.abs();
        }
    }
    (sx, sy)
}

/// Strong variation along x means the blade edges run vertically. Ties,
/// including flat images, resolve to horizontal.
pub fn estimate_orientation(image: &TensorMap) -> Orientation {
    let (sx, sy) = sobel_energy(image);
    if sx > sy {
        Orientation::Vertical
    } else {
        Orientation::Horizontal
    }
}

/// Fills background regions enclosed by blade pixels and image borders.
///
/// Worked in the horizontal frame (vertical masks are transposed first):
///
/// 1. On the left and right columns, every pixel between the first and last
///    blade pixel becomes blade, so each border carries one solid run.
/// 2. Background is flooded (4-connected) from seeds: every background pixel
///    on the left or right column, plus the top row unless both border runs
///    start at row 0, plus the bottom row unless both end at the last row.
/// 3. Background that the flood does not reach becomes blade.
///
/// When the blade spans the whole top edge, a notch opening onto the top
/// border therefore counts as a hole. Only 0 to 1 flips occur and the
/// operation is idempotent.
pub fn fill_holes(mask: &BinaryMask, orientation: Orientation) -> BinaryMask {
    match orientation {
        Orientation::Horizontal => fill_horizontal(mask),
        Orientation::Vertical => fill_horizontal(&mask.transpose()).transpose(),
    }
}

fn column_run(mask: &BinaryMask, x: usize) -> Option<(usize, usize)> {
    let first = (0..mask.height()).find(|&y| mask.get(y, x))?;
    let last = (0..mask.height()).rev().find(|&y| mask.get(y, x))?;
    Some((first, last))
}

fn fill_horizontal(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.shape();
    let mut out = mask.clone();
    if h == 0 || w == 0 {
        return out;
    }
    let runs = [column_run(mask, 0), column_run(mask, w - 1)];
    for (x, run) in [0, w - 1].into_iter().zip(runs) {
        if let Some((a, b)) = run {
            for y in a..=b {
                out.set(y, x, true);
            }
        }
    }
    let spans_top = runs.iter().all(|r| matches!(r, Some((0, _))));
    let spans_bottom = runs.iter().all(|r| matches!(r, Some((_, b)) if *b == h - 1));

    let mut reached = vec![false; h * w];
    let mut queue = VecDeque::new();
    let mut seed = |y: usize, x: usize, out: &BinaryMask, q: &mut VecDeque<(usize, usize)>| {
        if !out.get(y, x) && !reached[y * w + x] {
            reached[y * w + x] = true;
            q.push_back((y, x));
        }
    };
    for y in 0..h {
        seed(y, 0, &out, &mut queue);
        seed(y, w - 1, &out, &mut queue);
    }
    for x in 0..w {
        if !spans_top {
            seed(0, x, &out, &mut queue);
        }
        if !spans_bottom {
            seed(h - 1, x, &out, &mut queue);
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        let mut visit = |ny: usize, nx: usize| {
            let i = ny * w + nx;
            if !reached[i] && !out.get(ny, nx) {
                reached[i] = true;
                queue.push_back((ny, nx));
            }
        };
        if y > 0 {
            visit(y - 1, x);
        }
        if y + 1 < h {
            visit(y + 1, x);
        }
        if x > 0 {
            visit(y, x - 1);
        }
        if x + 1 < w {
            visit(y, x + 1);
        }
    }
    for y in 0..h {
        for x in 0..w {
            if !reached[y * w + x] {
                out.set(y, x, true);
            }
        }
    }
    out
}
