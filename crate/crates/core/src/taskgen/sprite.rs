//! Bouncing sprites on a white canvas.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const CANVAS: usize = 42;
pub const SPRITE: usize = 28;
pub const SPEED: f64 = 3.0;
pub const TRANSITION_NOISE_STD: f64 = 0.5;

/// Square grayscale bitmap, row-major, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub size: usize,
    pub pixels: Vec<f64>,
}

impl Sprite {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size {
            return Err(Error::Invalid(format!("sprite of size {size} needs {} pixels", size * size)));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid("sprite intensities must lie in [0, 1]".into()));
        }
        Ok(Sprite { size, pixels })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    /// Swaps dark and light, e.g. for white-on-black digit images.
    pub fn inverted(&self) -> Sprite {
        Sprite { size: self.size, pixels: self.pixels.iter().map(|p| 1.0 - p).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpriteState {
    /// Top-left corner, `(row, col)`.
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    /// Largest allowed coordinate per axis, `canvas - sprite`.
    pub bound: f64,
}

impl SpriteState {
    pub fn new(pos: [f64; 2], vel: [f64; 2], canvas: usize, sprite: usize) -> Result<Self> {
        if sprite > canvas {
            return Err(Error::Invalid(format!("sprite of size {sprite} does not fit a {canvas} canvas")));
        }
        let bound = (canvas - sprite) as f64;
        if pos.iter().any(|p| !(0.0..=bound).contains(p)) {
            return Err(Error::Invalid(format!("position {pos:?} outside [0, {bound}]")));
        }
        Ok(SpriteState { pos, vel, bound })
    }

    /// Uniform position and a uniformly random heading at [`SPEED`].
    pub fn random<R: Rng + ?Sized>(rng: &mut R, canvas: usize, sprite: usize) -> Result<Self> {
        if sprite > canvas {
            return Err(Error::Invalid(format!("sprite of size {sprite} does not fit a {canvas} canvas")));
        }
        let bound = (canvas - sprite) as f64;
        let pos = [rng.random_range(0.0..=bound), rng.random_range(0.0..=bound)];
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        SpriteState::new(pos, [SPEED * theta.cos(), SPEED * theta.sin()], canvas, sprite)
    }
}

/// Moves by `vel + noise` and reflects about each boundary it overshoots,
/// flipping that velocity component.
pub fn step_sprite_with(s: &SpriteState, noise: [f64; 2]) -> SpriteState {
    let mut out = *s;
    for a in 0..2 {
        let mut p = s.pos[a] + s.vel[a] + noise[a];
        let mut v = s.vel[a];
        while p < 0.0 || p > s.bound {
            if p > s.bound {
                p = 2.0 * s.bound - p;
            } else {
                p = -p;
            }
            v = -v;
        }
        out.pos[a] = p;
        out.vel[a] = v;
    }
    out
}

pub fn step_sprite<R: Rng + ?Sized>(s: &SpriteState, rng: &mut R) -> SpriteState {
    let n = Normal::new(0.0, TRANSITION_NOISE_STD).expect("valid std");
    step_sprite_with(s, [n.sample(rng), n.sample(rng)])
}

/// Canvas of side `canvas`, white background, sprite composited by taking
/// the darker pixel. Position is rounded to the pixel grid.
pub fn render(s: &SpriteState, sprite: &Sprite, canvas: usize) -> Vec<f64> {
    let mut img = vec![1.0; canvas * canvas];
    let r0 = s.pos[0].round() as usize;
    let c0 = s.pos[1].round() as usize;
    for r in 0..sprite.size {
        for c in 0..sprite.size {
            let (rr, cc) = (r0 + r, c0 + c);
            if rr < canvas && cc < canvas {
                let px = &mut img[rr * canvas + cc];
                *px = f64::min(*px, sprite.get(r, c));
            }
        }
    }
    img
}

/// Parses a binary 8-bit PGM (`P5`) image of size `expected x expected`.
pub fn parse_pgm(bytes: &[u8], expected: usize) -> Result<Sprite> {
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("expected P5 magic, found {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field {s:?}")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(Error::Format(format!("only 8-bit PGM is supported, maxval {max}")));
    }
    if w != expected || h != expected {
        return Err(Error::Format(format!("PGM is {w}x{h}, expected {expected}x{expected}")));
    }
    let data = bytes.get(i + 1..).unwrap_or(&[]);
    if data.len() < w * h {
        return Err(Error::Format(format!("PGM has {} pixel bytes, expected {}", data.len(), w * h)));
    }
    Sprite::new(expected, data[..w * h].iter().map(|&b| f64::from(b) / max as f64).collect())
}

pub fn load_pgm(path: &Path, expected: usize) -> Result<Sprite> {
    let bytes = std::fs::read(path)?;
    parse_pgm(&bytes, expected).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Encodes a sprite as binary PGM.
pub fn to_pgm(sprite: &Sprite) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", sprite.size, sprite.size).into_bytes();
    out.extend(sprite.pixels.iter().map(|p| (p * 255.0).round() as u8));
    out
}

fn stamp_segment(px: &mut [f64], size: usize, a: (f64, f64), b: (f64, f64), width: f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for r in 0..size {
        for c in 0..size {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let t = if len2 == 0.0 { 0.0 } else { (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0) };
            let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
            let d = ((x - qx).powi(2) + (y - qy).powi(2)).sqrt();
            let ink = (width / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            let p = &mut px[r * size + c];
            *p = p.min(1.0 - ink);
        }
    }
}

fn glyph(size: usize, strokes: &[((f64, f64), (f64, f64))]) -> Sprite {
    let s = size as f64;
    let mut px = vec![1.0; size * size];
    for &(a, b) in strokes {
        stamp_segment(&mut px, size, (a.0 * s, a.1 * s), (b.0 * s, b.1 * s), s / 9.0);
    }
    Sprite { size, pixels: px }
}

/// 16 dark-on-white 28x28 glyphs: seven-segment digits 0-9 and six shapes.
pub fn bundled_sprites() -> Vec<Sprite> {
    let (l, r, t, m, b) = (0.25, 0.75, 0.15, 0.5, 0.85);
    let seg = [
        ((l, t), (r, t)),
        ((r, t), (r, m)),
        ((r, m), (r, b)),
        ((l, b), (r, b)),
        ((l, m), (l, b)),
        ((l, t), (l, m)),
        ((l, m), (r, m)),
    ];
    let digits: [&[usize]; 10] = [
        &[0, 1, 2, 3, 4, 5],
        &[1, 2],
        &[0, 1, 6, 4, 3],
        &[0, 1, 6, 2, 3],
        &[5, 6, 1, 2],
        &[0, 5, 6, 2, 3],
        &[0, 5, 6, 4, 3, 2],
        &[0, 1, 2],
        &[0, 1, 2, 3, 4, 5, 6],
        &[0, 1, 2, 3, 5, 6],
    ];
    let mut out: Vec<Sprite> = digits
        .iter()
        .map(|d| glyph(SPRITE, &d.iter().map(|&i| seg[i]).collect::<Vec<_>>()))
        .collect();
    let ring: Vec<_> = (0..12)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 12.0;
            let b = (k + 1) as f64 * std::f64::consts::TAU / 12.0;
            ((0.5 + 0.32 * a.cos(), 0.5 + 0.32 * a.sin()), (0.5 + 0.32 * b.cos(), 0.5 + 0.32 * b.sin()))
        })
        .collect();
    out.push(glyph(SPRITE, &ring));
    out.push(glyph(SPRITE, &[((0.2, 0.2), (0.8, 0.8)), ((0.8, 0.2), (0.2, 0.8))]));
    out.push(glyph(SPRITE, &[((0.5, 0.15), (0.5, 0.85)), ((0.15, 0.5), (0.85, 0.5))]));
    out.push(glyph(SPRITE, &[((0.5, 0.15), (0.85, 0.85)), ((0.85, 0.85), (0.15, 0.85)), ((0.15, 0.85), (0.5, 0.15))]));
    out.push(glyph(
        SPRITE,
        &[((0.5, 0.12), (0.88, 0.5)), ((0.88, 0.5), (0.5, 0.88)), ((0.5, 0.88), (0.12, 0.5)), ((0.12, 0.5), (0.5, 0.12))],
    ));
    out.push(glyph(
        SPRITE,
        &[((0.2, 0.2), (0.8, 0.2)), ((0.8, 0.2), (0.8, 0.8)), ((0.8, 0.8), (0.2, 0.8)), ((0.2, 0.8), (0.2, 0.2))],
    ));
    out
}
