//! Synthetic defocus data with dual-pixel views.
//!
//! A sharp procedural image is blurred with a spatially varying disc PSF
//! whose signed radius comes from a layered radius map. The left and right
//! dual-pixel views use the two halves of the disc, so a point at radius `r`
//! appears shifted by `±4r/(3π)` in the two views and the views disagree by
//! [`DISPARITY_PER_RADIUS`]` * r` pixels. The merged image is the mean of the
//! views, which equals blurring with the full disc.
//!
//! Sign convention: for `r > 0` the left view gathers through the right half
//! of the aperture and the right view through the left half, so warping the
//! right view by `+γr` (see [`crate::warp`]) aligns it with the left.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{area_downsample, map_indices};
use crate::tensor::{Shape4, Tensor4};

/// Horizontal centroid separation of the two half-discs per unit radius.
pub const DISPARITY_PER_RADIUS: f64 = 8.0 / (3.0 * std::f64::consts::PI);

/// Lower bound on the background blur magnitude, as a fraction of `r_max`.
pub const BACKGROUND_MIN_FRACTION: f64 = 0.25;

/// Supersampling rate per axis for anti-aliased coverage.
const COVERAGE_SAMPLES: usize = 8;

/// Radii are quantised to this step when caching kernels.
const RADIUS_STEP: f64 = 1.0 / 64.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// Square, odd-sized, normalised convolution kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub taps: Vec<f64>,
}

impl Kernel {
    fn delta() -> Self {
        Kernel {
            size: 1,
            taps: vec![1.0],
        }
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius() as isize;
        self.taps[((dy + r) * self.size as isize + dx + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// (x, y) centroid in pixels relative to the centre tap.
    pub fn centroid(&self) -> (f64, f64) {
        let r = self.radius() as f64;
        let (mut cx, mut cy, mut m) = (0.0, 0.0, 0.0);
        for (i, &v) in self.taps.iter().enumerate() {
            cx += v * ((i % self.size) as f64 - r);
            cy += v * ((i / self.size) as f64 - r);
            m += v;
        }
        (cx / m, cy / m)
    }

    fn normalised(mut self) -> Self {
        let s = self.sum();
        self.taps.iter_mut().for_each(|v| *v /= s);
        self
    }
}

/// Pixel-coverage of a disc of radius `r` centred on the middle tap.
fn disc_coverage(r: f64) -> Kernel {
    let half = r.ceil() as isize;
    let size = (2 * half + 1) as usize;
    let n = COVERAGE_SAMPLES;
    let mut taps = vec![0.0; size * size];
    let r2 = r * r;
    for dy in -half..=half {
        for dx in -half..=half {
            let mut inside = 0usize;
            for sy in 0..n {
                let py = dy as f64 + (sy as f64 + 0.5) / n as f64 - 0.5;
                for sx in 0..n {
                    let px = dx as f64 + (sx as f64 + 0.5) / n as f64 - 0.5;
                    if px * px + py * py <= r2 {
                        inside += 1;
                    }
                }
            }
            taps[((dy + half) as usize) * size + (dx + half) as usize] = inside as f64 / (n * n) as f64;
        }
    }
    Kernel { size, taps }
}

/// Normalised, anti-aliased disc kernel; radii below 0.5 give a delta.
pub fn disc_psf(r: f64) -> Kernel {
    if r < 0.5 {
        return Kernel::delta();
    }
    disc_coverage(r).normalised()
}

/// One half of the disc: `Left` keeps columns with `x < 0`, `Right` keeps
/// `x > 0`; both keep half of the centre column.
pub fn half_disc_psf(r: f64, side: Side) -> Kernel {
    if r < 0.5 {
        return Kernel::delta();
    }
    let mut k = disc_coverage(r);
    let half = k.radius() as isize;
    for (i, v) in k.taps.iter_mut().enumerate() {
        let dx = (i % k.size) as isize - half;
        let keep = match side {
            Side::Left => dx < 0,
            Side::Right => dx > 0,
        };
        if dx == 0 {
            *v *= 0.5;
        } else if !keep {
            *v = 0.0;
        }
    }
    k.normalised()
}

// ---------------------------------------------------------------------------
// procedural content

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Convex polygon as a list of vertices in counter-clockwise order.
fn random_polygon(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<(f64, f64)> {
    let cx = rng.random_range(0.0..w as f64);
    let cy = rng.random_range(0.0..h as f64);
    let rad = rng.random_range(0.08..0.3) * h.min(w) as f64;
    let verts = rng.random_range(3..8);
    let mut angles: Vec<f64> = (0..verts)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| (cx + rad * a.cos(), cy + rad * a.sin()))
        .collect()
}

fn inside_convex(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0.0
    })
}

fn coverage(h: usize, w: usize, inside: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    let n = 4;
    let mut cov = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut c = 0;
            for sy in 0..n {
                for sx in 0..n {
                    let px = x as f64 + (sx as f64 + 0.5) / n as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / n as f64;
                    if inside(px, py) {
                        c += 1;
                    }
                }
            }
            cov[y * w + x] = c as f64 / (n * n) as f64;
        }
    }
    cov
}

fn composite(img: &mut Tensor4, cov: &[f64], color: impl Fn(usize, usize) -> [f64; 3]) {
    let s = img.shape();
    for c in 0..3 {
        let plane = img.plane_mut(0, c);
        for (i, (v, &a)) in plane.iter_mut().zip(cov).enumerate() {
            if a > 0.0 {
                let col = color(i / s.w, i % s.w)[c];
                *v = (1.0 - a) * *v + a * col;
            }
        }
    }
}

/// Deterministic procedural sharp image (1, 3, h, w) with values in [0, 1]:
/// a colour gradient, a checkerboard patch and anti-aliased polygons.
pub fn gen_sharp(seed: u64, h: usize, w: usize) -> Result<Tensor4> {
    if h < 32 || w < 32 {
        return Err(Error::Contract(format!("gen_sharp needs at least 32x32, got {h}x{w}")));
    }
    let mut rng = rng_for(seed, 1);
    let mut img = Tensor4::zeros((1, 3, h, w));
    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let span = dx.abs() * w as f64 + dy.abs() * h as f64;
    let off = dx.min(0.0) * w as f64 + dy.min(0.0) * h as f64;
    for c in 0..3 {
        let plane = img.plane_mut(0, c);
        for y in 0..h {
            for x in 0..w {
                let t = ((x as f64 * dx + y as f64 * dy) - off) / span;
                plane[y * w + x] = c0[c] + (c1[c] - c0[c]) * t.clamp(0.0, 1.0);
            }
        }
    }
    // checkerboard patch
    let ph = rng.random_range(h / 4..h / 2);
    let pw = rng.random_range(w / 4..w / 2);
    let py = rng.random_range(0..h - ph) as f64;
    let px = rng.random_range(0..w - pw) as f64;
    let period = rng.random_range(3.0..10.0);
    let (ca, cb) = (random_color(&mut rng), random_color(&mut rng));
    let cov = coverage(h, w, |x, y| {
        x >= px && x < px + pw as f64 && y >= py && y < py + ph as f64
    });
    composite(&mut img, &cov, |y, x| {
        let cx = ((x as f64 + 0.5 - px) / period).floor() as i64;
        let cy = ((y as f64 + 0.5 - py) / period).floor() as i64;
        if (cx + cy).rem_euclid(2) == 0 { ca } else { cb }
    });
    for _ in 0..rng.random_range(3..7) {
        let poly = random_polygon(&mut rng, h, w);
        let col = random_color(&mut rng);
        let cov = coverage(h, w, |x, y| inside_convex(&poly, x, y));
        composite(&mut img, &cov, |_, _| col);
    }
    Ok(img)
}

/// Layered signed blur-radius field (1, 1, h, w) bounded by `±r_max`: a
/// planar background whose centre radius is at least
/// `BACKGROUND_MIN_FRACTION * r_max` in magnitude, plus 1-3 foreground
/// regions, each with its own smooth radius ramp.
pub fn gen_radius_map(seed: u64, h: usize, w: usize, r_max: f64) -> Result<Tensor4> {
    if !(r_max >= 0.0) {
        return Err(Error::Contract(format!("r_max must be >= 0, got {r_max}")));
    }
    let mut map = Tensor4::create((1, 1, h, w), crate::tensor::Init::Zeros)?;
    if r_max == 0.0 {
        return Ok(map);
    }
    let mut rng = rng_for(seed, 2);
    let ramp = |rng: &mut ChaCha8Rng, min_abs: f64| {
        let mag = rng.random_range(min_abs..=r_max);
        let base = if rng.random::<bool>() { mag } else { -mag };
        let gx = rng.random_range(-0.5..0.5) * r_max / w as f64;
        let gy = rng.random_range(-0.5..0.5) * r_max / h as f64;
        move |y: usize, x: usize| base + gx * (x as f64 - w as f64 / 2.0) + gy * (y as f64 - h as f64 / 2.0)
    };
    let bg = ramp(&mut rng, BACKGROUND_MIN_FRACTION * r_max);
    let plane = map.plane_mut(0, 0);
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = bg(y, x);
        }
    }
    for _ in 0..rng.random_range(1..4) {
        let poly = random_polygon(&mut rng, h, w);
        let f = ramp(&mut rng, 0.0);
        for y in 0..h {
            for x in 0..w {
                if inside_convex(&poly, x as f64 + 0.5, y as f64 + 0.5) {
                    plane[y * w + x] = f(y, x);
                }
            }
        }
    }
    plane.iter_mut().for_each(|v| *v = v.clamp(-r_max, r_max));
    Ok(map)
}

// ---------------------------------------------------------------------------
// rendering

struct KernelCache<F: Fn(f64) -> Kernel> {
    make: F,
    cache: HashMap<i64, Kernel>,
}

impl<F: Fn(f64) -> Kernel> KernelCache<F> {
    fn get(&mut self, r: f64) -> &Kernel {
        let key = (r / RADIUS_STEP).round() as i64;
        let make = &self.make;
        self.cache
            .entry(key)
            .or_insert_with(|| make(key as f64 * RADIUS_STEP))
    }
}

/// Per-output-pixel gather: `out(p) = sum_q psf_{r(p)}(q) * img(p + q)`,
/// edge pixels replicated. `pick` maps a signed radius to its kernel.
fn gather(img: &Tensor4, r_map: &Tensor4, pick: impl Fn(f64) -> Kernel) -> Result<Tensor4> {
    let s = img.shape();
    let rs = r_map.shape();
    if rs != Shape4::new(s.n, 1, s.h, s.w) {
        return Err(Error::Shape(format!(
            "radius map {rs} does not match image {s}"
        )));
    }
    let mut cache = KernelCache {
        make: pick,
        cache: HashMap::new(),
    };
    let mut out = Tensor4::zeros(s);
    let (h, w) = (s.h as isize, s.w as isize);
    for n in 0..s.n {
        let rp = r_map.plane(n, 0);
        for y in 0..s.h {
            for x in 0..s.w {
                let k = cache.get(rp[y * s.w + x]);
                let kr = k.radius() as isize;
                for c in 0..s.c {
                    let src = img.plane(n, c);
                    let mut acc = 0.0;
                    for dy in -kr..=kr {
                        let sy = (y as isize + dy).clamp(0, h - 1) as usize;
                        let row = &src[sy * s.w..][..s.w];
                        let krow = &k.taps[((dy + kr) as usize) * k.size..][..k.size];
                        for (dx, &kv) in (-kr..=kr).zip(krow) {
                            if kv != 0.0 {
                                let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                                acc += kv * row[sx];
                            }
                        }
                    }
                    *out.at_mut(n, c, y, x) = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Full-aperture defocus blur.
pub fn render_defocus(sharp: &Tensor4, r_map: &Tensor4) -> Result<Tensor4> {
    gather(sharp, r_map, |r| disc_psf(r.abs()))
}

/// Left and right dual-pixel views.
pub fn render_dual_pixel(sharp: &Tensor4, r_map: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    let view = |left: bool| {
        move |r: f64| {
            let side = match (left, r >= 0.0) {
                (true, true) | (false, false) => Side::Right,
                _ => Side::Left,
            };
            half_disc_psf(r.abs(), side)
        }
    };
    Ok((gather(sharp, r_map, view(true))?, gather(sharp, r_map, view(false))?))
}

/// Ground-truth disparity on the 1/s grid, in 1/s-grid pixels.
pub fn derive_gt_disparity(r_map: &Tensor4, s: usize) -> Result<Tensor4> {
    let scaled = r_map.scale(DISPARITY_PER_RADIUS / s as f64);
    area_downsample(&scaled, s)
}

/// One training or evaluation record. `radius` and `disparity` only exist
/// for synthetic data.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub sharp: Tensor4,
    pub blurred: Tensor4,
    pub left: Option<Tensor4>,
    pub right: Option<Tensor4>,
    pub radius: Option<Tensor4>,
    pub disparity: Option<Tensor4>,
}

impl Sample {
    /// Centred `h` x `w` window of every view; the disparity map is
    /// re-derived from the cropped radius map on the `s` grid.
    pub fn center_crop(&self, h: usize, w: usize, s: usize) -> Result<Sample> {
        let shape = self.sharp.shape();
        if h > shape.h || w > shape.w {
            return Err(Error::Contract(format!("crop {h}x{w} larger than the {}x{} sample", shape.h, shape.w)));
        }
        let (y0, x0) = ((shape.h - h) / 2, (shape.w - w) / 2);
        let crop = |t: &Tensor4| t.crop(y0, x0, h, w);
        let opt = |t: &Option<Tensor4>| t.as_ref().map(crop).transpose();
        let radius = opt(&self.radius)?;
        let disparity = match &radius {
            Some(r) if s > 0 && h % s == 0 && w % s == 0 => Some(derive_gt_disparity(r, s)?),
            _ => None,
        };
        Ok(Sample {
            name: self.name.clone(),
            sharp: crop(&self.sharp)?,
            blurred: crop(&self.blurred)?,
            left: opt(&self.left)?,
            right: opt(&self.right)?,
            radius,
            disparity,
        })
    }
}

/// Parameters of the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub h: usize,
    pub w: usize,
    pub r_max: f64,
    pub s: usize,
}

pub fn make_sample(seed: u64, cfg: &SynthConfig) -> Result<Sample> {
    let sharp = gen_sharp(seed, cfg.h, cfg.w)?;
    let radius = gen_radius_map(seed, cfg.h, cfg.w, cfg.r_max)?;
    let (left, right) = render_dual_pixel(&sharp, &radius)?;
    let blurred = left.add(&right)?.scale(0.5);
    let disparity = derive_gt_disparity(&radius, cfg.s)?;
    Ok(Sample {
        name: format!("synth_{seed:08}"),
        sharp,
        blurred,
        left: Some(left),
        right: Some(right),
        radius: Some(radius),
        disparity: Some(disparity),
    })
}

/// `count` samples with seeds `first_seed..`, generated in parallel but
/// returned in seed order.
pub fn make_samples(first_seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<Sample>> {
    map_indices(count, |i| make_sample(first_seed + i as u64, cfg))
        .into_iter()
        .collect()
}

// ---------------------------------------------------------------------------
// paired directories

/// A directory with `source/` (defocused) and `target/` (sharp) PNGs of
/// matching names, plus optional `left/` and `right/` dual-pixel views.
#[derive(Clone, Debug)]
pub struct PairedDir {
    root: PathBuf,
    names: Vec<String>,
    dual: bool,
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn mismatches(a: &[String], b: &[String], b_dir: &str) -> Vec<String> {
    a.iter()
        .filter(|n| b.binary_search(n).is_err())
        .map(|n| format!("{n} missing from {b_dir}/"))
        .collect()
}

pub fn load_paired_dir(root: impl AsRef<Path>) -> Result<PairedDir> {
    let root = root.as_ref().to_path_buf();
    let source = png_names(&root.join("source"))?;
    let target = png_names(&root.join("target"))?;
    let mut bad = mismatches(&source, &target, "target");
    bad.extend(mismatches(&target, &source, "source"));
    let dual = root.join("left").is_dir() && root.join("right").is_dir();
    if dual {
        for side in ["left", "right"] {
            let names = png_names(&root.join(side))?;
            bad.extend(mismatches(&source, &names, side));
        }
    }
    if !bad.is_empty() {
        return Err(Error::Manifest(bad));
    }
    Ok(PairedDir {
        root,
        names: source,
        dual,
    })
}

impl PairedDir {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_dual_pixel(&self) -> bool {
        self.dual
    }

    pub fn load(&self, i: usize) -> Result<Sample> {
        let name = &self.names[i];
        let read = |dir: &str| crate::io::read_png(self.root.join(dir).join(name));
        let (left, right) = if self.dual {
            (Some(read("left")?), Some(read("right")?))
        } else {
            (None, None)
        };
        Ok(Sample {
            name: name.clone(),
            sharp: read("target")?,
            blurred: read("source")?,
            left,
            right,
            radius: None,
            disparity: None,
        })
    }

    /// Samples in sorted-name order, loaded lazily.
    pub fn iter(&self) -> impl Iterator<Item = Result<Sample>> + '_ {
        (0..self.len()).map(|i| self.load(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psf_normalisation_and_delta() {
        assert_eq!(disc_psf(0.0).taps, vec![1.0]);
        assert_eq!(half_disc_psf(0.3, Side::Left).taps, vec![1.0]);
        for r in [0.5, 1.3, 2.0, 4.7, 6.0] {
            let k = disc_psf(r);
            assert_eq!(k.size, 2 * (r as f64).ceil() as usize + 1);
            assert!((k.sum() - 1.0).abs() < 1e-12);
            for side in [Side::Left, Side::Right] {
                assert!((half_disc_psf(r, side).sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn half_disc_centroid_separation() {
        let r = 6.0;
        let (lx, _) = half_disc_psf(r, Side::Left).centroid();
        let (rx, _) = half_disc_psf(r, Side::Right).centroid();
        let want = 8.0 * r / (3.0 * std::f64::consts::PI);
        assert!(((rx - lx) - want).abs() / want < 0.1, "{} vs {want}", rx - lx);
    }

    #[test]
    fn halves_average_to_disc() {
        for r in [1.0, 2.5, 4.0] {
            let d = disc_psf(r);
            let (l, rr) = (half_disc_psf(r, Side::Left), half_disc_psf(r, Side::Right));
            for i in 0..d.taps.len() {
                assert!((0.5 * (l.taps[i] + rr.taps[i]) - d.taps[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sharp_images_are_deterministic_and_bounded() {
        let a = gen_sharp(5, 48, 40).unwrap();
        assert_eq!(a, gen_sharp(5, 48, 40).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let b = gen_sharp(6, 48, 40).unwrap();
        let differing = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
        assert!(differing as f64 > 0.1 * a.len() as f64);
        assert!(gen_sharp(1, 16, 64).is_err());
    }

    #[test]
    fn radius_maps() {
        let z = gen_radius_map(1, 32, 32, 0.0).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let m = gen_radius_map(2, 32, 32, 3.0).unwrap();
        assert!(m.data().iter().all(|v| v.abs() <= 3.0));
        assert_eq!(m, gen_radius_map(2, 32, 32, 3.0).unwrap());
        assert!(gen_radius_map(2, 32, 32, -1.0).is_err());
    }

    #[test]
    fn zero_radius_renders_identity() {
        let img = gen_sharp(3, 32, 32).unwrap();
        let r = Tensor4::zeros((1, 1, 32, 32));
        assert_eq!(render_defocus(&img, &r).unwrap(), img);
        let (l, rr) = render_dual_pixel(&img, &r).unwrap();
        assert_eq!(l, img);
        assert_eq!(rr, img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor4::full((1, 3, 32, 32), 0.37);
        let r = gen_radius_map(4, 32, 32, 4.0).unwrap();
        let b = render_defocus(&img, &r).unwrap();
        assert!(b.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn merge_invariant() {
        let s = make_sample(9, &SynthConfig { h: 32, w: 32, r_max: 3.0, s: 8 }).unwrap();
        let full = render_defocus(&s.sharp, s.radius.as_ref().unwrap()).unwrap();
        assert!(full.max_abs_diff(&s.blurred).unwrap() < 1e-9);
    }

    #[test]
    fn gt_disparity_formula() {
        let r = Tensor4::full((1, 1, 16, 16), 3.0 * std::f64::consts::PI / 8.0);
        let d = derive_gt_disparity(&r, 8).unwrap();
        assert!(d.data().iter().all(|v| (v - 0.125).abs() < 1e-12));
        let neg = derive_gt_disparity(&r.scale(-1.0), 8).unwrap();
        assert!(neg.data().iter().all(|&v| v < 0.0));
        assert!(derive_gt_disparity(&Tensor4::zeros((1, 1, 12, 16)), 8).is_err());
    }
}
