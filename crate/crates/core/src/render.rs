//! Netpbm renders of assembly states.
//!
//! Step frames are grayscale: placed pixels black, the target outline mid
//! gray, everything else white. The composite colors every fragment.

use crate::env::AssemblyState;
use crate::geometry::RasterMask;

const PLACED: u8 = 0;
const OUTLINE: u8 = 128;
const BACKGROUND: u8 = 255;

/// Target pixels with a 4-neighbour outside the target or the canvas.
pub fn outline(target: &RasterMask) -> Vec<bool> {
    let (w, h) = target.dims();
    let on = |r: i64, c: i64| r >= 0 && c >= 0 && r < h as i64 && c < w as i64 && target.get(r as usize, c as usize) > 0.5;
    let mut out = vec![false; w * h];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            if on(r, c) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| !on(r + dr, c + dc)) {
                out[r as usize * w + c as usize] = true;
            }
        }
    }
    out
}

/// Gray levels of one frame, upscaled by `scale`.
pub fn frame(state: &AssemblyState, scale: usize) -> (usize, usize, Vec<u8>) {
    let edge = outline(&state.target);
    let cells = state.current.cells();
    let px: Vec<u8> = (0..cells.len())
        .map(|i| {
            if cells[i] > 0.5 {
                PLACED
            } else if edge[i] {
                OUTLINE
            } else {
                BACKGROUND
            }
        })
        .collect();
    let (w, h) = state.current.dims();
    upscale(w, h, 1, &px, scale)
}

/// Per-fragment colors over the target outline, as interleaved RGB.
pub fn composite(states: &[AssemblyState], scale: usize) -> (usize, usize, Vec<u8>) {
    let last = states.last().expect("at least the reset state");
    let (w, h) = last.current.dims();
    let edge = outline(&last.target);
    let mut rgb = vec![BACKGROUND; w * h * 3];
    for (i, &e) in edge.iter().enumerate() {
        if e {
            rgb[3 * i..3 * i + 3].fill(OUTLINE);
        }
    }
    for (k, pair) in states.windows(2).enumerate() {
        let color = palette(k);
        let (before, after) = (pair[0].current.cells(), pair[1].current.cells());
        for i in 0..w * h {
            if after[i] > 0.5 && before[i] <= 0.5 {
                rgb[3 * i..3 * i + 3].copy_from_slice(&color);
            }
        }
    }
    upscale(w, h, 3, &rgb, scale)
}

fn palette(k: usize) -> [u8; 3] {
    const COLORS: [[u8; 3]; 8] =
        [[230, 25, 75], [60, 180, 75], [0, 130, 200], [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230], [170, 110, 40]];
    COLORS[k % COLORS.len()]
}

fn upscale(w: usize, h: usize, channels: usize, px: &[u8], scale: usize) -> (usize, usize, Vec<u8>) {
    let s = scale.max(1);
    let mut out = Vec::with_capacity(w * h * s * s * channels);
    for r in 0..h * s {
        for c in 0..w * s {
            let i = ((r / s) * w + c / s) * channels;
            out.extend_from_slice(&px[i..i + channels]);
        }
    }
    (w * s, h * s, out)
}

/// Binary PGM (`P5`).
pub fn pgm(w: usize, h: usize, gray: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// Binary PPM (`P6`).
pub fn ppm(w: usize, h: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}
