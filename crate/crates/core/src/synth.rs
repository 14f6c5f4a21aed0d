//! Deterministic synthetic leaflet corpus.
//!
//! Twenty classes of rendered product cards. Classes `(2k, 2k+1)` for
//! `k < 8` look the same and differ only in the printed serving size;
//! classes (16, 17), (18, 19), (0, 2) and (4, 6) carry the same text in
//! different colors. Each card also gets a simulated eight-method OCR output,
//! so the text branch can run without an OCR engine installed.

use std::path::Path;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusManifest, ImageRecord, Split};
use crate::image_model::hsv_to_rgb;
use crate::ocr::{canonical_methods, compose_document, methods_version, CacheVersions, ExtractedDocument, ExtractionCache, OcrError};

pub const SYNTH_CLASSES: usize = 20;
pub const SIMULATED_ENGINE_VERSION: &str = "simulated-ocr/1";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const OCR_CACHE_FILE: &str = "ocr_cache.jsonl";

/// Pairs that share every visual attribute.
pub const VISUAL_PAIRS: [(usize, usize); 8] = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11), (12, 13), (14, 15)];
/// Pairs that share all printed text.
pub const TEXT_PAIRS: [(usize, usize); 4] = [(16, 17), (18, 19), (0, 2), (4, 6)];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode {path}: {message}")]
    Encode { path: std::path::PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Ocr(#[from] OcrError),
    #[error("need at least one train and one test image per class")]
    EmptySplit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_per_class: 30,
            test_per_class: 10,
            seed: 7,
        }
    }
}

/// Colors and emblem of one visual identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Look {
    pub background: [u8; 3],
    pub band: [u8; 3],
    pub emblem: [u8; 3],
    pub shape: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub class_id: usize,
    pub brand: &'static str,
    pub product: &'static str,
    pub size: &'static str,
    /// Index of the visual identity; classes sharing text differ here.
    pub design: usize,
    pub look: Look,
}

impl ClassSpec {
    pub fn name(&self) -> String {
        format!("{} {} {}", self.brand, self.product, self.size)
    }

    /// Unique manifest label: the printed name plus the design number.
    pub fn label(&self) -> String {
        format!("{} D{}", self.name(), self.design)
    }
}

fn rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let (r, g, b) = hsv_to_rgb((h % 360.0) / 60.0, s, v);
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

fn look(identity: usize) -> Look {
    let hue = (identity as f64 * 30.0 + 7.0) % 360.0;
    Look {
        background: rgb(hue, 0.18 + 0.04 * (identity % 3) as f64, 0.97),
        band: rgb((hue + 150.0) % 360.0, 0.75, 0.55 + 0.1 * (identity % 2) as f64),
        emblem: rgb(hue, 0.85, 0.8),
        shape: (identity % 4) as u8,
    }
}

/// The fixed 20-class table.
pub fn class_specs() -> Vec<ClassSpec> {
    // (brand, product, size, visual identity)
    const TABLE: [(&str, &str, &str, usize); SYNTH_CLASSES] = [
        ("ALPENHOF", "JOGHURT", "250g", 0),
        ("ALPENHOF", "JOGHURT", "290g", 0),
        ("ALPENHOF", "JOGHURT", "250g", 1),
        ("ALPENHOF", "JOGHURT", "500g", 1),
        ("SONNTAL", "KAFFEE", "500g", 2),
        ("SONNTAL", "KAFFEE", "1kg", 2),
        ("SONNTAL", "KAFFEE", "500g", 3),
        ("SONNTAL", "KAFFEE", "250g", 3),
        ("BERGLAND", "MUESLI", "375g", 4),
        ("BERGLAND", "MUESLI", "750g", 4),
        ("NORDKUH", "MILCH", "1l", 5),
        ("NORDKUH", "MILCH", "1.5l", 5),
        ("KORNGOLD", "NUDELN", "400g", 6),
        ("KORNGOLD", "NUDELN", "800g", 6),
        ("FRUCHTIG", "SAFT", "0.7l", 7),
        ("FRUCHTIG", "SAFT", "1l", 7),
        ("TEEHAUS", "KRAEUTER", "20st", 8),
        ("TEEHAUS", "KRAEUTER", "20st", 9),
        ("GOLDBAER", "HONIG", "350g", 10),
        ("GOLDBAER", "HONIG", "350g", 11),
    ];
    TABLE
        .iter()
        .enumerate()
        .map(|(class_id, &(brand, product, size, identity))| ClassSpec {
            class_id,
            brand,
            product,
            size,
            design: identity,
            look: look(identity),
        })
        .collect()
}

/// Retailer styling: frame color and promotional word.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retailer {
    pub id: &'static str,
    pub frame: [u8; 3],
    pub promo: &'static str,
}

pub fn retailers() -> Vec<Retailer> {
    const POOL: [(&str, &str); 12] = [
        ("rt01", "AKTION"),
        ("rt02", "ANGEBOT"),
        ("rt03", "SUPERPREIS"),
        ("rt04", "NUR"),
        ("rt05", "KNALLER"),
        ("rt06", "SPAREN"),
        ("rt07", "TIPP"),
        ("rt08", "NEU"),
        ("rt09", "BILLIGER"),
        ("rt10", "HIT"),
        ("rt11", "WOCHE"),
        ("rt12", "DEAL"),
    ];
    POOL.iter()
        .enumerate()
        .map(|(i, &(id, promo))| Retailer {
            id,
            frame: rgb(i as f64 * 360.0 / 12.0 + 15.0, 0.9, 0.45 + 0.05 * (i % 4) as f64),
            promo,
        })
        .collect()
}

/// Draws `text` with the 8x8 bitmap font, each font pixel `scale` wide.
/// Characters without a glyph are skipped.
pub fn draw_text(img: &mut RgbImage, text: &str, x: i64, y: i64, scale: u32, color: [u8; 3]) {
    let s = scale.max(1) as i64;
    for (n, ch) in text.chars().enumerate() {
        let Some(glyph) = BASIC_FONTS.get(ch) else { continue };
        let ox = x + n as i64 * 8 * s;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits >> col & 1 == 1 {
                    fill_rect(img, ox + col * s, y + row as i64 * s, s, s, color);
                }
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, color: [u8; 3]) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    for py in y.max(0)..(y + h).min(ih) {
        for px in x.max(0)..(x + w).min(iw) {
            img.put_pixel(px as u32, py as u32, Rgb(color));
        }
    }
}

fn text_width(text: &str, scale: u32) -> i64 {
    text.chars().count() as i64 * 8 * scale as i64
}

fn draw_emblem(img: &mut RgbImage, shape: u8, cx: i64, cy: i64, r: i64, color: [u8; 3]) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    for py in (cy - r).max(0)..(cy + r).min(ih) {
        for px in (cx - r).max(0)..(cx + r).min(iw) {
            let (dx, dy) = (px - cx, py - cy);
            let inside = match shape {
                0 => dx * dx + dy * dy <= r * r,
                1 => true,
                2 => dx.abs() + dy.abs() <= r,
                _ => (dy + r) / (r / 3).max(1) % 2 == 0,
            };
            if inside {
                img.put_pixel(px as u32, py as u32, Rgb(color));
            }
        }
    }
}

/// Text printed on a card, in reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct CardText {
    pub lines: Vec<String>,
}

/// Renders one card. The same RNG state always gives the same card.
pub fn render_card<R: Rng + ?Sized>(spec: &ClassSpec, retailer: &Retailer, rng: &mut R) -> (RgbImage, CardText) {
    let w = rng.random_range(150..=200u32);
    let h = rng.random_range(230..=300u32);
    let shade = |c: [u8; 3], d: i32| c.map(|v| (v as i32 + d).clamp(0, 255) as u8);
    let light = rng.random_range(-12..=12);
    let mut img = RgbImage::from_pixel(w, h, Rgb(shade(spec.look.background, light)));
    let (wi, hi) = (w as i64, h as i64);
    let jitter = |rng: &mut R, r: i64| rng.random_range(-r..=r);

    fill_rect(&mut img, 0, 0, wi, hi * 12 / 100, shade(spec.look.band, light));
    let r = (wi.min(hi) * 22 / 100) + jitter(rng, 3);
    let (cx, cy) = (wi / 2 + jitter(rng, 6), hi * 36 / 100 + jitter(rng, 6));
    draw_emblem(&mut img, spec.look.shape, cx, cy, r, shade(spec.look.emblem, light));

    let ink = [20, 20, 30];
    let mut y = hi * 60 / 100 + jitter(rng, 4);
    for word in [spec.brand, spec.product] {
        let scale = if text_width(word, 2) <= wi - 12 { 2 } else { 1 };
        draw_text(&mut img, word, (wi - text_width(word, scale)) / 2 + jitter(rng, 3), y, scale, ink);
        y += 8 * scale as i64 + 3;
    }
    draw_text(&mut img, spec.size, 8 + jitter(rng, 3), y + 4, 2, ink);

    let price = format!("{}.{:02}", rng.random_range(0..10), rng.random_range(0..100));
    let py = hi - 30 + jitter(rng, 3);
    draw_text(&mut img, &price, wi - text_width(&price, 2) - 8, py, 2, retailer.frame);
    fill_rect(&mut img, 0, hi - 12, wi, 12, retailer.frame);
    draw_text(&mut img, retailer.promo, 4, hi - 10, 1, [255, 255, 255]);
    for t in 0..3 {
        fill_rect(&mut img, t, 0, 1, hi, retailer.frame);
        fill_rect(&mut img, wi - 1 - t, 0, 1, hi, retailer.frame);
    }

    let noise = Normal::new(0.0, 6.0).expect("valid sigma");
    for p in img.pixels_mut() {
        for v in p.0.iter_mut() {
            *v = (*v as f64 + noise.sample(rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
    let lines = vec![
        spec.brand.to_string(),
        spec.product.to_string(),
        spec.size.to_string(),
        price,
        retailer.promo.to_string(),
    ];
    (img, CardText { lines })
}

/// Per-method behaviour of the simulated engine: (token drop rate, per-char
/// confusion rate, expected noise tokens). Later methods work on cleaner,
/// upscaled input and lose less.
const METHOD_NOISE: [(f64, f64, f64); 8] = [
    (0.35, 0.08, 1.5),
    (0.30, 0.08, 1.0),
    (0.35, 0.10, 2.0),
    (0.40, 0.10, 2.5),
    (0.25, 0.06, 1.0),
    (0.15, 0.04, 0.5),
    (0.15, 0.04, 1.0),
    (0.10, 0.03, 0.5),
];

fn confuse(c: char) -> char {
    match c {
        '0' => 'O',
        'O' => '0',
        '5' => 'S',
        'S' => '5',
        'g' => '9',
        '9' => 'g',
        '1' => 'l',
        'l' => '1',
        'I' => '1',
        'B' => '8',
        '8' => 'B',
        'E' => 'F',
        'U' => 'V',
        c => c,
    }
}

const JUNK: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789|~-";

/// Simulated output of the eight canonical methods for one card.
pub fn simulate_ocr<R: Rng + ?Sized>(text: &CardText, rng: &mut R) -> Vec<String> {
    METHOD_NOISE
        .iter()
        .map(|&(drop, confusion, junk)| {
            if rng.random_bool(0.05) {
                return String::new();
            }
            let mut words: Vec<String> = Vec::new();
            for line in &text.lines {
                if rng.random_bool(drop) {
                    continue;
                }
                words.push(
                    line.chars()
                        .map(|c| if rng.random_bool(confusion) { confuse(c) } else { c })
                        .collect(),
                );
            }
            let n_junk = (junk * 2.0 * rng.random::<f64>()).round() as usize;
            for _ in 0..n_junk {
                let len = rng.random_range(1..=4);
                let word: String = (0..len).map(|_| JUNK[rng.random_range(0..JUNK.len())] as char).collect();
                let at = rng.random_range(0..=words.len());
                words.insert(at, word);
            }
            words.join(" ")
        })
        .collect()
}

/// Everything the generator wrote.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: CorpusManifest,
    pub documents: Vec<ExtractedDocument>,
}

fn image_seed(seed: u64, class_id: usize, split: Split, n: usize) -> u64 {
    let s = match split {
        Split::Train => 0u64,
        Split::Test => 1,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((class_id as u64) << 40) ^ (s << 32) ^ n as u64
}

/// Renders the corpus into `dir`: PNGs under `images/`, `manifest.jsonl`, and
/// a simulated extraction cache `ocr_cache.jsonl`.
pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    if cfg.train_per_class == 0 || cfg.test_per_class == 0 {
        return Err(SynthError::EmptySplit);
    }
    let specs = class_specs();
    let pool = retailers();
    let mut plan = Vec::new();
    for spec in &specs {
        // disjoint train and test retailers per class
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ ((spec.class_id as u64 + 1) << 20)));
        let (train_r, test_r) = (&order[..4], &order[4..7]);
        for (split, count, rs) in [(Split::Train, cfg.train_per_class, train_r), (Split::Test, cfg.test_per_class, test_r)] {
            for n in 0..count {
                plan.push((spec, split, n, pool[rs[n % rs.len()]]));
            }
        }
    }

    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|source| SynthError::Io {
        path: images_dir.clone(),
        source,
    })?;
    let mv = methods_version(&canonical_methods());
    let rendered: Vec<Result<(ImageRecord, ExtractedDocument), SynthError>> = plan
        .par_iter()
        .map(|&(spec, split, n, retailer)| {
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(cfg.seed, spec.class_id, split, n));
            let (img, text) = render_card(spec, &retailer, &mut rng);
            let image_id = format!("c{:02}-{}-{:03}", spec.class_id, split, n);
            let rel = format!("images/{image_id}.png");
            let path = dir.join(&rel);
            img.save(&path).map_err(|e| SynthError::Encode {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let method_texts = simulate_ocr(&text, &mut rng);
            let document = compose_document(&method_texts);
            Ok((
                ImageRecord {
                    image_id: image_id.clone(),
                    class_id: spec.class_id,
                    split,
                    retailer_id: retailer.id.to_string(),
                    path: rel,
                    width: img.width(),
                    height: img.height(),
                },
                ExtractedDocument {
                    image_id,
                    method_texts,
                    document,
                    engine_version: SIMULATED_ENGINE_VERSION.to_string(),
                    methods_version: mv.clone(),
                },
            ))
        })
        .collect();
    let (records, documents): (Vec<_>, Vec<_>) = rendered.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();

    let mut manifest = CorpusManifest::new(specs.iter().map(ClassSpec::label).collect(), records);
    manifest.base_dir = dir.to_path_buf();
    manifest.write(&dir.join(MANIFEST_FILE))?;

    let cache_path = dir.join(OCR_CACHE_FILE);
    if cache_path.exists() {
        std::fs::remove_file(&cache_path).map_err(|source| SynthError::Io {
            path: cache_path.clone(),
            source,
        })?;
    }
    let cache = ExtractionCache::open(
        &cache_path,
        CacheVersions {
            engine_version: SIMULATED_ENGINE_VERSION.to_string(),
            methods_version: mv,
        },
    )?;
    cache.insert_batch(documents.clone())?;
    Ok(SynthCorpus { manifest, documents })
}
