//! Synthetic glyph scenes: a 5x7 bitmap atlas, a scene rasterizer, seeded
//! source/target pair generation and a template-matching recognizer.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::SeededRng;
use crate::raster::{luma, Image};

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;
/// Blank columns between glyphs, in atlas units.
pub const TRACKING: usize = 1;
pub const MIN_CONTRAST: f64 = 0.2;
pub const DEFAULT_CANVAS: (usize, usize) = (64, 64);

const NOISE_AMPLITUDE: f64 = 0.03;
const GRADIENT_AMPLITUDE: f64 = 0.05;
const BLANK_INK: f64 = 0.1;

// Rows top to bottom, bit 4 is the leftmost column.
const FONT: [(char, [u8; 7]); 36] = [
    ('A', [0b01110, 0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001]),
    ('B', [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110]),
    ('C', [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('D', [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100]),
    ('E', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111]),
    ('F', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('G', [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111]),
    ('H', [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('I', [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('J', [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100]),
    ('K', [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001]),
    ('L', [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111]),
    ('M', [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001]),
    ('N', [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001]),
    ('O', [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('P', [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('Q', [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101]),
    ('R', [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001]),
    ('S', [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110]),
    ('T', [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('U', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('V', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]),
    ('W', [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010]),
    ('X', [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001]),
    ('Y', [0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100]),
    ('Z', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111]),
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('3', [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]),
];

const WORDS: &[&str] = &[
    "GO", "UP", "NO", "OK", "ON", "IN", "AT", "TO", "BY", "MY", "CAT", "DOG", "SUN", "BUS", "MAP", "RED", "TEA", "BOX",
    "KEY", "ART", "OPEN", "SHOP", "CAFE", "BOOK", "PARK", "EXIT", "STOP", "FOOD", "MILK", "GOLD", "SALE", "ROAD", "HOTEL",
    "MUSIC", "PIZZA", "BREAD", "STORE", "PLAZA", "TRAIN", "LIGHT", "NORTH", "WATER", "MARKET", "GARDEN", "CINEMA",
    "BRIDGE", "SCHOOL", "OFFICE", "STREET", "2024", "24H", "A1", "B52", "7UP", "ROUTE66", "PARKING", "STATION",
];

/// Monospaced bitmap font for `A–Z` and `0–9`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphAtlas {
    glyphs: BTreeMap<char, [u8; GLYPH_H]>,
    scale: usize,
}

impl Default for GlyphAtlas {
    fn default() -> Self {
        Self {
            glyphs: FONT.iter().copied().collect(),
            scale: 1,
        }
    }
}

impl GlyphAtlas {
    pub fn new(scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::invalid("glyph scale must be >= 1"));
        }
        Ok(Self { scale, ..Self::default() })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.glyphs.keys().copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.glyphs.contains_key(&c)
    }

    pub fn glyph(&self, c: char) -> Result<&[u8; GLYPH_H]> {
        self.glyphs
            .get(&c)
            .ok_or_else(|| Error::invalid(format!("character {c:?} is not in the glyph atlas")))
    }

    /// Whether atlas cell `(x, y)` of `c` is inked.
    pub fn ink(&self, c: char, x: usize, y: usize) -> Result<bool> {
        Ok(self.glyph(c)?[y] >> (GLYPH_W - 1 - x) & 1 == 1)
    }

    /// Glyph as 35 values in `{0, 1}`, row-major.
    pub fn template(&self, c: char) -> Result<Vec<f64>> {
        let rows = self.glyph(c)?;
        Ok((0..GLYPH_H * GLYPH_W)
            .map(|i| f64::from(rows[i / GLYPH_W] >> (GLYPH_W - 1 - i % GLYPH_W) & 1))
            .collect())
    }

    /// Horizontal advance per glyph in pixels.
    pub fn advance(&self) -> usize {
        (GLYPH_W + TRACKING) * self.scale
    }

    /// Pixel extent `(w, h)` of a rendered string.
    pub fn text_extent(&self, n_chars: usize) -> (usize, usize) {
        if n_chars == 0 {
            return (0, 0);
        }
        (n_chars * self.advance() - TRACKING * self.scale, GLYPH_H * self.scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "seed")]
pub enum Background {
    Solid,
    /// Horizontal ramp of ±0.05 around the base colour.
    Gradient,
    /// Per-pixel luminance noise of amplitude ±0.03.
    Noise(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub text: String,
    pub fg: [f64; 3],
    pub bg: [f64; 3],
    pub background: Background,
    pub origin: (usize, usize),
    pub scale: usize,
}

impl SceneSpec {
    pub fn solid(text: &str, origin: (usize, usize), scale: usize) -> Self {
        Self {
            text: text.to_string(),
            fg: [0.0; 3],
            bg: [1.0; 3],
            background: Background::Solid,
            origin,
            scale,
        }
    }

    pub fn with_text(&self, text: &str) -> Self {
        Self {
            text: text.to_string(),
            ..self.clone()
        }
    }

    pub fn contrast(&self) -> f64 {
        (luma(self.fg) - luma(self.bg)).abs()
    }

    pub fn hint(&self) -> StyleHint {
        StyleHint {
            origin: self.origin,
            scale: self.scale,
            max_chars: None,
        }
    }

    fn validate(&self, atlas: &GlyphAtlas, canvas: (usize, usize)) -> Result<()> {
        if let Some(c) = self.text.chars().find(|&c| !atlas.contains(c)) {
            return Err(Error::invalid(format!("character {c:?} is not in the glyph atlas")));
        }
        let all = self.fg.iter().chain(&self.bg);
        if all.clone().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("scene colours must lie in [0, 1]"));
        }
        if self.contrast() < MIN_CONTRAST {
            return Err(Error::invalid(format!(
                "fg/bg luminance contrast {:.3} below {MIN_CONTRAST}",
                self.contrast()
            )));
        }
        let (w, h) = atlas.text_extent(self.text.chars().count());
        if self.origin.0 + w > canvas.0 || self.origin.1 + h > canvas.1 {
            return Err(Error::invalid(format!(
                "text {:?} at {:?} (scale {}) does not fit a {}x{} canvas",
                self.text, self.origin, self.scale, canvas.0, canvas.1
            )));
        }
        Ok(())
    }
}

fn background(spec: &SceneSpec, canvas: (usize, usize)) -> Image {
    let (w, h) = canvas;
    let mut img = Image::filled(w, h, spec.bg);
    match spec.background {
        Background::Solid => {}
        Background::Gradient => {
            for y in 0..h {
                for x in 0..w {
                    let ramp = if w > 1 { x as f64 / (w - 1) as f64 - 0.5 } else { 0.0 };
                    for v in img.pixel_mut(x, y) {
                        *v = (*v + 2.0 * GRADIENT_AMPLITUDE * ramp).clamp(0.0, 1.0);
                    }
                }
            }
        }
        Background::Noise(seed) => {
            let noise = SeededRng::new(seed).normals(w * h);
            for y in 0..h {
                for x in 0..w {
                    let d = NOISE_AMPLITUDE * noise[y * w + x].clamp(-1.0, 1.0);
                    for v in img.pixel_mut(x, y) {
                        *v = (*v + d).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    img
}

/// Rasterizes `spec` onto a `(w, h)` RGB canvas.
pub fn render_scene(spec: &SceneSpec, canvas: (usize, usize)) -> Result<Image> {
    let atlas = GlyphAtlas::new(spec.scale)?;
    spec.validate(&atlas, canvas)?;
    let mut img = background(spec, canvas);
    let s = spec.scale;
    for (k, c) in spec.text.chars().enumerate() {
        let x0 = spec.origin.0 + k * atlas.advance();
        for gy in 0..GLYPH_H {
            for gx in 0..GLYPH_W {
                if !atlas.ink(c, gx, gy)? {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..s {
                        img.pixel_mut(x0 + gx * s + dx, spec.origin.1 + gy * s + dy)
                            .copy_from_slice(&spec.fg);
                    }
                }
            }
        }
    }
    Ok(img)
}

/// A source scene and the text it should be edited to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePair {
    pub source: SceneSpec,
    pub target_text: String,
}

impl ScenePair {
    /// The target rendered in the source style, used as the reference image.
    pub fn target(&self) -> SceneSpec {
        self.source.with_text(&self.target_text)
    }
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Seeded source/target pairs with target length within one of the source.
pub fn gen_pairs(count: usize, canvas: (usize, usize), seed: u64) -> Result<Vec<ScenePair>> {
    if count == 0 {
        return Err(Error::invalid("count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fits = |n: usize, scale: usize| {
        let (w, h) = GlyphAtlas::new(scale).map(|a| a.text_extent(n)).unwrap_or((usize::MAX, usize::MAX));
        w + 4 <= canvas.0 && h + 4 <= canvas.1
    };
    let usable: Vec<&str> = WORDS.iter().copied().filter(|w| fits(w.len() + 1, 1)).collect();
    if usable.is_empty() {
        return Err(Error::invalid(format!("canvas {canvas:?} too small for any word")));
    }

    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let src = *usable.choose(&mut rng).expect("nonempty word list");
        let candidates: Vec<&str> = usable
            .iter()
            .copied()
            .filter(|t| *t != src && t.len().abs_diff(src.len()) <= 1)
            .collect();
        let Some(&tar) = candidates.choose(&mut rng) else {
            continue;
        };
        let longest = src.len().max(tar.len());
        let scales: Vec<usize> = (1..=3).filter(|&s| fits(longest, s)).collect();
        let scale = *scales.choose(&mut rng).expect("scale 1 fits by construction");
        let atlas = GlyphAtlas::new(scale)?;
        let (w, h) = atlas.text_extent(longest);
        let origin = (rng.random_range(2..=canvas.0 - w - 2), rng.random_range(2..=canvas.1 - h - 2));

        let (fg, bg) = loop {
            let (fg, bg) = (random_colour(&mut rng), random_colour(&mut rng));
            // headroom over the minimum so background texture cannot erode it
            if (luma(fg) - luma(bg)).abs() >= MIN_CONTRAST + 0.15 {
                break (fg, bg);
            }
        };
        let background = match rng.random_range(0..3) {
            0 => Background::Solid,
            1 => Background::Gradient,
            _ => Background::Noise(rng.random()),
        };
        pairs.push(ScenePair {
            source: SceneSpec {
                text: src.to_string(),
                fg,
                bg,
                background,
                origin,
                scale,
            },
            target_text: tar.to_string(),
        });
    }
    Ok(pairs)
}

/// Known text placement for the recognizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleHint {
    pub origin: (usize, usize),
    pub scale: usize,
    pub max_chars: Option<usize>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    num / (va * vb).sqrt()
}

struct InkMap<'a> {
    ink: Vec<f64>,
    width: usize,
    height: usize,
    atlas: &'a GlyphAtlas,
}

impl InkMap<'_> {
    /// Mean ink per atlas cell of the glyph slot at `(x0, y0)`; `None` if
    /// the slot leaves the image.
    fn cell(&self, x0: usize, y0: usize, scale: usize) -> Option<Vec<f64>> {
        if x0 + GLYPH_W * scale > self.width || y0 + GLYPH_H * scale > self.height {
            return None;
        }
        let area = (scale * scale) as f64;
        Some(
            (0..GLYPH_H * GLYPH_W)
                .map(|i| {
                    let (gy, gx) = (i / GLYPH_W, i % GLYPH_W);
                    let mut sum = 0.0;
                    for dy in 0..scale {
                        for dx in 0..scale {
                            sum += self.ink[(y0 + gy * scale + dy) * self.width + x0 + gx * scale + dx];
                        }
                    }
                    sum / area
                })
                .collect(),
        )
    }

    fn best_match(&self, cell: &[f64]) -> (char, f64) {
        self.atlas
            .chars()
            .map(|c| (c, ncc(cell, &self.atlas.template(c).expect("atlas char"))))
            .fold(('?', f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    /// Reads glyph slots left to right until a blank or out-of-bounds slot.
    fn read(&self, origin: (usize, usize), scale: usize, max_chars: Option<usize>) -> (String, f64) {
        let advance = (GLYPH_W + TRACKING) * scale;
        let (mut text, mut score) = (String::new(), 0.0);
        for k in 0..max_chars.unwrap_or(usize::MAX) {
            let Some(cell) = self.cell(origin.0 + k * advance, origin.1, scale) else {
                break;
            };
            if cell.iter().cloned().fold(0.0, f64::max) < BLANK_INK {
                break;
            }
            let (c, r) = self.best_match(&cell);
            text.push(c);
            score += r;
        }
        (text, score)
    }
}

/// Reads the text in `image` by per-slot template correlation.
///
/// Ink is the absolute luminance deviation from the median (background)
/// level. Without a hint the scale comes from the ink bounding-box height and
/// the horizontal origin is searched over the first glyph's blank columns.
pub fn recognize(image: &Image, atlas: &GlyphAtlas, hint: Option<StyleHint>) -> Result<String> {
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        return Ok(String::new());
    }
    let lum = image.luminance();
    let bg = median(&lum);
    let ink: Vec<f64> = lum.iter().map(|l| (l - bg).abs()).collect();
    let peak = ink.iter().cloned().fold(0.0, f64::max);
    if peak < BLANK_INK {
        return Ok(String::new());
    }
    let map = InkMap {
        ink,
        width: w,
        height: h,
        atlas,
    };
    if let Some(hint) = hint {
        if hint.scale == 0 {
            return Err(Error::invalid("hint scale must be >= 1"));
        }
        return Ok(map.read(hint.origin, hint.scale, hint.max_chars).0);
    }

    let strong = peak / 2.0;
    let (mut x_min, mut y_min, mut y_max) = (usize::MAX, usize::MAX, 0);
    for y in 0..h {
        for x in 0..w {
            if map.ink[y * w + x] >= strong {
                x_min = x_min.min(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    let scale = ((y_max + 1 - y_min) as f64 / GLYPH_H as f64).round().max(1.0) as usize;
    let candidates = (0..GLYPH_W).filter_map(|d| x_min.checked_sub(d * scale));
    let best = candidates
        .map(|x0| {
            let (text, total) = map.read((x0, y_min), scale, None);
            let mean = total / text.len().max(1) as f64;
            (text, mean)
        })
        .fold((String::new(), f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    fn random_string(rng: &mut ChaCha8Rng, atlas: &GlyphAtlas) -> String {
        let chars: Vec<char> = atlas.chars().collect();
        let n = rng.random_range(1..=8);
        (0..n).map(|_| *chars.choose(rng).unwrap()).collect()
    }

    #[test]
    fn atlas_is_complete_and_distinct() {
        let atlas = GlyphAtlas::default();
        let expected: Vec<char> = ('A'..='Z').chain('0'..='9').collect();
        for c in &expected {
            assert!(atlas.contains(*c));
            assert!(atlas.glyph(*c).unwrap().iter().all(|row| *row < 32));
        }
        assert_eq!(atlas.chars().count(), 36);
        let mut seen: Vec<[u8; 7]> = expected.iter().map(|c| *atlas.glyph(*c).unwrap()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 36);
        assert!(atlas.glyph('a').is_err());
    }

    #[test]
    fn single_glyph_footprint() {
        let img = render_scene(&SceneSpec::solid("A", (0, 0), 1), (8, 8)).unwrap();
        let atlas = GlyphAtlas::default();
        for y in 0..8 {
            for x in 0..8 {
                let inked = x < GLYPH_W && y < GLYPH_H && atlas.ink('A', x, y).unwrap();
                assert_eq!(img.pixel(x, y)[0] == 0.0, inked, "({x},{y})");
            }
        }
    }

    #[test]
    fn render_is_deterministic_and_validated() {
        let mut spec = SceneSpec::solid("CAT", (3, 5), 2);
        spec.background = Background::Noise(4);
        assert_eq!(render_scene(&spec, (64, 64)).unwrap(), render_scene(&spec, (64, 64)).unwrap());
        assert!(render_scene(&SceneSpec::solid("cat", (0, 0), 1), (64, 64)).is_err());
        assert!(render_scene(&SceneSpec::solid("TOOLONGWORDHERE", (0, 0), 1), (64, 64)).is_err());
        let mut low = SceneSpec::solid("CAT", (0, 0), 1);
        low.fg = [0.9; 3];
        assert!(render_scene(&low, (64, 64)).is_err());
    }

    #[test]
    fn recognize_render_identity_on_500_strings() {
        let atlas = GlyphAtlas::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let text = random_string(&mut rng, &atlas);
            let spec = SceneSpec::solid(&text, (rng.random_range(0..8), rng.random_range(0..50)), 1);
            let img = render_scene(&spec, (64, 64)).unwrap();
            assert_eq!(recognize(&img, &atlas, Some(spec.hint())).unwrap(), text);
            assert_eq!(recognize(&img, &atlas, None).unwrap(), text);
        }
    }

    #[test]
    fn recognizes_generated_styles_without_hint() {
        let atlas = GlyphAtlas::default();
        for pair in gen_pairs(64, DEFAULT_CANVAS, 3).unwrap() {
            for spec in [pair.source.clone(), pair.target()] {
                let img = render_scene(&spec, DEFAULT_CANVAS).unwrap();
                assert_eq!(recognize(&img, &atlas, None).unwrap(), spec.text);
                assert_eq!(recognize(&img, &atlas, Some(spec.hint())).unwrap(), spec.text);
            }
        }
    }

    // Flips 30% of the pixels of glyph `k`; returns the corrupted image.
    fn corrupt_glyph(img: &mut Image, spec: &SceneSpec, k: usize, rng: &mut ChaCha8Rng) {
        let (gw, gh) = (GLYPH_W * spec.scale, GLYPH_H * spec.scale);
        let x0 = spec.origin.0 + k * GlyphAtlas::new(spec.scale).unwrap().advance();
        let mut pixels: Vec<usize> = (0..gw * gh).collect();
        let flips = (0.3 * pixels.len() as f64).round() as usize;
        for _ in 0..flips {
            let i = pixels.swap_remove(rng.random_range(0..pixels.len()));
            let px = img.pixel_mut(x0 + i % gw, spec.origin.1 + i / gw);
            let flipped = if px[0] == 0.0 { 1.0 } else { 0.0 };
            px.fill(flipped);
        }
    }

    #[test]
    fn survives_thirty_percent_corruption_of_one_glyph() {
        let atlas = GlyphAtlas::default();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for text in ["CAT", "SHOP", "EXIT"] {
            let spec = SceneSpec::solid(text, (2, 20), 2);
            let mut img = render_scene(&spec, (64, 64)).unwrap();
            corrupt_glyph(&mut img, &spec, 1, &mut rng);
            assert_eq!(recognize(&img, &atlas, Some(spec.hint())).unwrap(), text);
        }
    }

    #[test]
    fn corruption_recovery_rate_at_scale_two() {
        let atlas = GlyphAtlas::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trials = 500;
        let mut recovered = 0;
        for _ in 0..trials {
            let text: String = random_string(&mut rng, &atlas).chars().take(4).collect();
            let spec = SceneSpec::solid(&text, (2, 20), 2);
            let mut img = render_scene(&spec, (64, 64)).unwrap();
            let k = rng.random_range(0..text.len());
            corrupt_glyph(&mut img, &spec, k, &mut rng);
            recovered += usize::from(recognize(&img, &atlas, Some(spec.hint())).unwrap() == text);
        }
        assert!(recovered as f64 >= 0.9 * trials as f64, "{recovered}/{trials}");
    }

    #[test]
    fn blank_images_read_as_empty() {
        let atlas = GlyphAtlas::default();
        assert_eq!(recognize(&Image::filled(64, 64, [0.4; 3]), &atlas, None).unwrap(), "");
        let noisy = render_scene(
            &SceneSpec {
                background: Background::Noise(1),
                ..SceneSpec::solid("", (0, 0), 1)
            },
            (32, 32),
        )
        .unwrap();
        assert_eq!(recognize(&noisy, &atlas, None).unwrap(), "");
    }

    #[test]
    fn pair_generation_contract() {
        let start = Instant::now();
        let pairs = gen_pairs(64, DEFAULT_CANVAS, 9).unwrap();
        for p in &pairs {
            render_scene(&p.source, DEFAULT_CANVAS).unwrap();
            render_scene(&p.target(), DEFAULT_CANVAS).unwrap();
        }
        assert!(start.elapsed().as_secs_f64() < 1.0);
        assert_eq!(pairs.len(), 64);
        assert_eq!(pairs, gen_pairs(64, DEFAULT_CANVAS, 9).unwrap());
        for p in &pairs {
            assert!(p.source.text.len().abs_diff(p.target_text.len()) <= 1);
            assert_ne!(p.source.text, p.target_text);
            assert!(p.source.contrast() >= MIN_CONTRAST);
        }
        assert!(gen_pairs(0, DEFAULT_CANVAS, 1).is_err());
    }
}
