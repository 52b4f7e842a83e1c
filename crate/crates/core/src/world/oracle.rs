//! Scripted hand classifiers that read glyph pixels directly.

use crate::world::catalog::Hand;
use crate::world::render::{ego_hand_rect, Rect};

fn pixel(frame: &[f32], w: usize, r: usize, c: usize) -> [f32; 3] {
    let i = (r * w + c) * 3;
    [frame[i], frame[i + 1], frame[i + 2]]
}

fn count_color(frame: &[f32], w: usize, rect: Rect, rgb: [f32; 3]) -> usize {
    let mut n = 0;
    for r in rect.r0..rect.r1 {
        for c in rect.c0..rect.c1 {
            if pixel(frame, w, r, c) == rgb {
                n += 1;
            }
        }
    }
    n
}

/// Hand read from one ego frame (`H×W×3` slice).
pub fn ego_hand(frame: &[f32], w: usize) -> Hand {
    let left = count_color(frame, w, ego_hand_rect(Hand::Left), Hand::Left.color());
    let right = count_color(frame, w, ego_hand_rect(Hand::Right), Hand::Right.color());
    if right > left {
        Hand::Right
    } else {
        Hand::Left
    }
}

/// Hand read from one exo frame: the first hand-coloured pixel wins; with
/// no hand pixel visible the classifier falls back to `Left`.
pub fn exo_hand(frame: &[f32]) -> Hand {
    for chunk in frame.chunks_exact(3) {
        let rgb = [chunk[0], chunk[1], chunk[2]];
        if rgb == Hand::Right.color() {
            return Hand::Right;
        }
        if rgb == Hand::Left.color() {
            return Hand::Left;
        }
    }
    Hand::Left
}
