//! Dataset loading, corruption and shift generation, and the on-disk
//! domain container.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{str_enum, AugmentProvenance, Domain, DomainKind, ImageShape, ShapeSignature};
use crate::error::{Error, Result};

// ---------------------------------------------------------------- sources

/// Parse an IDX file (optionally gzip-compressed) into its dimensions and
/// raw bytes.
pub fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let raw = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(format!("decompressing {}", path.display()), e))?;
        out
    } else {
        raw
    };
    parse_idx(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn parse_idx(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<u8>), String> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err("not an IDX file".into());
    }
    if bytes[2] != 0x08 {
        return Err(format!("unsupported IDX element type {:#x}", bytes[2]));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err("truncated IDX header".into());
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != header + n {
        return Err(format!("payload of {} bytes, expected {n}", bytes.len() - header));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Bilinear resize of one HWC image (half-pixel centers, edge clamped).
pub fn resize_bilinear(src: &[f32], from: ImageShape, height: usize, width: usize) -> Vec<f32> {
    let c = from.channels;
    let mut out = vec![0.0; height * width * c];
    let sy = from.height as f32 / height as f32;
    let sx = from.width as f32 / width as f32;
    for y in 0..height {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (from.height - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(from.height - 1);
        let wy = fy - y0 as f32;
        for x in 0..width {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (from.width - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(from.width - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * from.width + xx) * c + ch];
                let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                out[(y * width + x) * c + ch] = (top * (1.0 - wy) + bottom * wy).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// How a source dataset is read and shaped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceOptions {
    pub data_dir: PathBuf,
    /// Output side length; images are resized when it differs.
    pub size: usize,
    /// Duplicate grayscale into three channels.
    pub rgb: bool,
}

impl Default for SourceOptions {
    fn default() -> Self {
        Self { data_dir: PathBuf::from("data"), size: 32, rgb: true }
    }
}

fn verify_checksums(dir: &Path, files: &[(&str, &[u8])]) -> Result<()> {
    let Ok(text) = fs::read_to_string(dir.join("checksums.txt")) else {
        return Ok(());
    };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let (Some(want), Some(name)) = (parts.next(), parts.next()) else {
            return Err(Error::Data(format!("malformed checksum line `{line}`")));
        };
        if let Some((_, bytes)) = files.iter().find(|(n, _)| *n == name) {
            if hex::encode(Sha256::digest(bytes)) != want {
                return Err(Error::Checksum(dir.join(name).display().to_string()));
            }
        }
    }
    Ok(())
}

fn find_idx(dir: &Path, stem: &str) -> Option<PathBuf> {
    [format!("{stem}.gz"), stem.to_string()].into_iter().map(|n| dir.join(n)).find(|p| p.exists())
}

/// Load the first `limit` training samples of a dataset stored as IDX
/// files under `data_dir/name/`. Images may be gray (`n×h×w`) or RGB
/// (`n×h×w×3`).
pub fn load_source(name: &str, limit: usize, opts: &SourceOptions) -> Result<Domain> {
    let dir = opts.data_dir.join(name);
    let (img_stem, lbl_stem) = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
    let (Some(img_path), Some(lbl_path)) = (find_idx(&dir, img_stem), find_idx(&dir, lbl_stem)) else {
        return Err(Error::Data(format!(
            "dataset `{name}` not found in {}; place {img_stem}.gz and {lbl_stem}.gz there (scripts/vendor_mnist.py builds them for MNIST)",
            dir.display()
        )));
    };
    let (idims, ibytes) = read_idx(&img_path)?;
    let (ldims, lbytes) = read_idx(&lbl_path)?;
    verify_checksums(&dir, &[(img_stem, &rebuild_idx(&idims, &ibytes)), (lbl_stem, &rebuild_idx(&ldims, &lbytes))])?;
    let raw_channels = match idims.len() {
        3 => 1,
        4 if idims[3] == 3 => 3,
        _ => return Err(Error::Data(format!("unsupported image IDX shape {idims:?}"))),
    };
    if ldims.len() != 1 || idims[0] != ldims[0] {
        return Err(Error::Data(format!("inconsistent IDX shapes {idims:?} / {ldims:?}")));
    }
    if limit == 0 || limit > idims[0] {
        return Err(Error::config("limit", format!("must be in 1..={}, got {limit}", idims[0])));
    }
    let raw = ImageShape::new(idims[1], idims[2], raw_channels);
    let channels = if opts.rgb || raw_channels == 3 { 3 } else { 1 };
    let shape = ImageShape::new(opts.size, opts.size, channels);
    let plane = ImageShape::new(raw.height, raw.width, 1);
    let mut images = Vec::with_capacity(limit * shape.len());
    for i in 0..limit {
        let px: Vec<f32> = ibytes[i * raw.len()..(i + 1) * raw.len()].iter().map(|&b| b as f32 / 255.0).collect();
        let planes: Vec<Vec<f32>> = (0..raw_channels)
            .map(|c| {
                let p: Vec<f32> = px.iter().skip(c).step_by(raw_channels).copied().collect();
                if (raw.height, raw.width) == (opts.size, opts.size) {
                    p
                } else {
                    resize_bilinear(&p, plane, opts.size, opts.size)
                }
            })
            .collect();
        let planes = &planes;
        images.extend((0..opts.size * opts.size).flat_map(|k| (0..channels).map(move |c| planes[c.min(raw_channels - 1)][k])));
    }
    let labels: Vec<usize> = lbytes[..limit].iter().map(|&b| b as usize).collect();
    let n_classes = lbytes.iter().map(|&b| b as usize + 1).max().unwrap_or(0).max(2);
    let sig = ShapeSignature { image: shape, n_classes };
    Domain::new(name, DomainKind::Source, sig, images, labels)
}

fn rebuild_idx(dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

// ------------------------------------------------------------ corruptions

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionFamily {
    Noise,
    Blur,
    Weather,
    Digital,
}

str_enum!(CorruptionFamily, "corruption family", Noise => "noise", Blur => "blur", Weather => "weather", Digital => "digital");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    SpeckleNoise,
    DefocusBlur,
    GaussianBlur,
    MotionBlur,
    Fog,
    Brightness,
    Contrast,
    Jpeg,
    Pixelate,
}

str_enum!(
    CorruptionKind,
    "corruption",
    GaussianNoise => "gaussian_noise",
    ShotNoise => "shot_noise",
    ImpulseNoise => "impulse_noise",
    SpeckleNoise => "speckle_noise",
    DefocusBlur => "defocus_blur",
    GaussianBlur => "gaussian_blur",
    MotionBlur => "motion_blur",
    Fog => "fog",
    Brightness => "brightness",
    Contrast => "contrast",
    Jpeg => "jpeg",
    Pixelate => "pixelate",
);

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 12] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::SpeckleNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::GaussianBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::Fog,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Jpeg,
        CorruptionKind::Pixelate,
    ];

    pub fn family(&self) -> CorruptionFamily {
        severity_table()[self.as_str()].family
    }

    /// Kernel parameter at a severity level in 1..=5.
    pub fn parameter(&self, severity: u8) -> f64 {
        let entry = &severity_table()[self.as_str()];
        let levels = entry.params.values().next().expect("one parameter per corruption");
        levels[severity as usize - 1]
    }
}

#[derive(Deserialize)]
struct TableEntry {
    family: CorruptionFamily,
    #[serde(flatten)]
    params: BTreeMap<String, Vec<f64>>,
}

fn severity_table() -> &'static BTreeMap<String, TableEntry> {
    static TABLE: OnceLock<BTreeMap<String, TableEntry>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let table: BTreeMap<String, TableEntry> =
            toml::from_str(include_str!("../data/corruptions.toml")).expect("corruption table parses");
        for kind in CorruptionKind::ALL {
            let e = table.get(kind.as_str()).unwrap_or_else(|| panic!("no severity table for {kind}"));
            assert!(e.params.len() == 1 && e.params.values().all(|v| v.len() == 5), "{kind}: five levels of one parameter");
        }
        table
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// 1..=5, 5 most severe. 0 is the identity.
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if severity > 5 {
            return Err(Error::config("severity", format!("must be in 1..=5, got {severity}")));
        }
        Ok(Self { kind, severity })
    }

    pub fn family(&self) -> CorruptionFamily {
        self.kind.family()
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind, self.severity)
    }
}

impl FromStr for CorruptionSpec {
    type Err = Error;

    /// `kind-severity`, e.g. `gaussian_noise-3`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, sev) = s.rsplit_once('-').ok_or_else(|| Error::Unknown { what: "corruption spec", name: s.into() })?;
        let severity = sev.parse().map_err(|_| Error::config("severity", format!("`{sev}` is not an integer")))?;
        CorruptionSpec::new(kind.parse()?, severity)
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Apply `f` to every image with a per-sample generator, so results do not
/// depend on processing order.
fn map_samples(domain: &Domain, seed: u64, mut f: impl FnMut(&[f32], &mut ChaCha8Rng) -> Vec<f32>) -> Vec<f32> {
    let mut out = Vec::with_capacity(domain.images().len());
    for i in 0..domain.len() {
        let mut rng = sample_rng(seed, i);
        out.extend(f(domain.image(i), &mut rng).into_iter().map(|v| v.clamp(0.0, 1.0)));
    }
    out
}

/// Weighted sparse kernel with edge clamping.
fn convolve(img: &[f32], s: ImageShape, taps: &[(isize, isize, f32)]) -> Vec<f32> {
    let c = s.channels;
    let (h, w) = (s.height as isize, s.width as isize);
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            for &(dy, dx, wt) in taps {
                let yy = (y + dy).clamp(0, h - 1);
                let xx = (x + dx).clamp(0, w - 1);
                let src = ((yy * w + xx) as usize) * c;
                let dst = ((y * w + x) as usize) * c;
                for ch in 0..c {
                    out[dst + ch] += wt * img[src + ch];
                }
            }
        }
    }
    out
}

fn normalized(mut taps: Vec<(isize, isize, f32)>) -> Vec<(isize, isize, f32)> {
    let total: f32 = taps.iter().map(|t| t.2).sum();
    for t in &mut taps {
        t.2 /= total;
    }
    taps
}

fn gaussian_taps(sigma: f64) -> Vec<(isize, isize, f32)> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dy * dy + dx * dx) as f64;
            taps.push((dy, dx, (-d2 / (2.0 * sigma * sigma)).exp() as f32));
        }
    }
    normalized(taps)
}

fn disk_taps(radius: f64) -> Vec<(isize, isize, f32)> {
    let r = radius.ceil() as isize;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dy * dy + dx * dx) as f64) <= radius * radius {
                taps.push((dy, dx, 1.0));
            }
        }
    }
    normalized(taps)
}

fn motion_taps(length: f64, angle: f64) -> Vec<(isize, isize, f32)> {
    let n = length.round().max(1.0) as usize;
    let half = (n as f64 - 1.0) / 2.0;
    let taps = (0..n)
        .map(|t| {
            let d = t as f64 - half;
            ((d * angle.sin()).round() as isize, (d * angle.cos()).round() as isize, 1.0)
        })
        .collect();
    normalized(taps)
}

/// Smooth random field in [0, 1]: a coarse uniform grid upsampled.
fn smooth_field(s: ImageShape, grid: usize, rng: &mut impl Rng) -> Vec<f32> {
    let coarse: Vec<f32> = (0..grid * grid).map(|_| rng.gen_range(0.0..1.0)).collect();
    resize_bilinear(&coarse, ImageShape::new(grid, grid, 1), s.height, s.width)
}

fn dct_basis(n: usize) -> Vec<f32> {
    let mut b = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            b[k * n + i] = (scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos()) as f32;
        }
    }
    b
}

/// 8×8 block DCT quantization, applied per channel.
fn jpeg_like(img: &[f32], s: ImageShape, step: f64) -> Vec<f32> {
    const N: usize = 8;
    let basis = dct_basis(N);
    let c = s.channels;
    let mut out = img.to_vec();
    let mut block = [0.0f32; N * N];
    let mut coef = [0.0f32; N * N];
    for by in (0..s.height).step_by(N) {
        for bx in (0..s.width).step_by(N) {
            for ch in 0..c {
                for i in 0..N {
                    for j in 0..N {
                        let y = (by + i).min(s.height - 1);
                        let x = (bx + j).min(s.width - 1);
                        block[i * N + j] = img[(y * s.width + x) * c + ch] - 0.5;
                    }
                }
                for u in 0..N {
                    for v in 0..N {
                        let mut acc = 0.0;
                        for i in 0..N {
                            for j in 0..N {
                                acc += basis[u * N + i] * basis[v * N + j] * block[i * N + j];
                            }
                        }
                        let q = (step * (1.0 + (u + v) as f64 / 2.0)) as f32;
                        coef[u * N + v] = (acc / q).round() * q;
                    }
                }
                for i in 0..N {
                    for j in 0..N {
                        let (y, x) = (by + i, bx + j);
                        if y >= s.height || x >= s.width {
                            continue;
                        }
                        let mut acc = 0.0;
                        for u in 0..N {
                            for v in 0..N {
                                acc += basis[u * N + i] * basis[v * N + j] * coef[u * N + v];
                            }
                        }
                        out[(y * s.width + x) * c + ch] = acc + 0.5;
                    }
                }
            }
        }
    }
    out
}

fn pixelate(img: &[f32], s: ImageShape, scale: f64) -> Vec<f32> {
    let hs = ((s.height as f64 * scale).round() as usize).max(1);
    let ws = ((s.width as f64 * scale).round() as usize).max(1);
    let c = s.channels;
    let cell = |y: usize, x: usize| (y * hs / s.height, x * ws / s.width);
    let mut sums = vec![0.0f32; hs * ws * c];
    let mut counts = vec![0u32; hs * ws];
    for y in 0..s.height {
        for x in 0..s.width {
            let (cy, cx) = cell(y, x);
            counts[cy * ws + cx] += 1;
            for ch in 0..c {
                sums[(cy * ws + cx) * c + ch] += img[(y * s.width + x) * c + ch];
            }
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..s.height {
        for x in 0..s.width {
            let (cy, cx) = cell(y, x);
            for ch in 0..c {
                out[(y * s.width + x) * c + ch] = sums[(cy * ws + cx) * c + ch] / counts[cy * ws + cx] as f32;
            }
        }
    }
    out
}

fn corrupt_image(img: &[f32], s: ImageShape, kind: CorruptionKind, p: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    match kind {
        CorruptionKind::GaussianNoise => {
            let n = Normal::new(0.0, p).unwrap();
            img.iter().map(|&v| v + n.sample(rng) as f32).collect()
        }
        CorruptionKind::ShotNoise => img
            .iter()
            .map(|&v| {
                let lam = v as f64 * p;
                let k = if lam > 0.0 { Poisson::new(lam).unwrap().sample(rng) } else { 0.0 };
                (k / p) as f32
            })
            .collect(),
        CorruptionKind::ImpulseNoise => img
            .iter()
            .map(|&v| {
                if rng.gen_bool(p) {
                    if rng.gen_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
            .collect(),
        CorruptionKind::SpeckleNoise => {
            let n = Normal::new(0.0, p).unwrap();
            img.iter().map(|&v| v + v * n.sample(rng) as f32).collect()
        }
        CorruptionKind::DefocusBlur => convolve(img, s, &disk_taps(p)),
        CorruptionKind::GaussianBlur => convolve(img, s, &gaussian_taps(p)),
        CorruptionKind::MotionBlur => {
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            convolve(img, s, &motion_taps(p, angle))
        }
        CorruptionKind::Fog => {
            let field = smooth_field(s, 4, rng);
            let a = p as f32;
            img.iter()
                .enumerate()
                .map(|(i, &v)| v * (1.0 - a) + a * (0.4 + 0.6 * field[i / s.channels]))
                .collect()
        }
        CorruptionKind::Brightness => img.iter().map(|&v| v + p as f32).collect(),
        CorruptionKind::Contrast => {
            let mean = img.iter().sum::<f32>() / img.len() as f32;
            img.iter().map(|&v| (v - mean) * p as f32 + mean).collect()
        }
        CorruptionKind::Jpeg => jpeg_like(img, s, p),
        CorruptionKind::Pixelate => pixelate(img, s, p),
    }
}

/// Seeded corruption of every image at the given severity; labels kept.
pub fn corrupt(domain: &Domain, spec: CorruptionSpec, seed: u64) -> Result<Domain> {
    let spec = CorruptionSpec::new(spec.kind, spec.severity)?;
    let id = format!("{}-{spec}", domain.id);
    if spec.severity == 0 {
        return domain.map_images(id, DomainKind::Target, domain.images().to_vec());
    }
    let p = spec.kind.parameter(spec.severity);
    let s = domain.signature.image;
    let images = map_samples(domain, seed, |img, rng| corrupt_image(img, s, spec.kind, p, rng));
    domain.map_images(id, DomainKind::Target, images)
}

// ----------------------------------------------------------------- shifts

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// `1 − x`.
    Invert,
    /// Strokes and background recolored per image; background textured.
    ColorBackground,
    /// Seeded non-identity permutation of the color channels per image.
    ChannelSwap,
    /// Heavy gaussian noise plus salt-and-pepper clutter.
    NoiseOverlay,
}

str_enum!(
    ShiftKind,
    "shift",
    Invert => "invert",
    ColorBackground => "color_background",
    ChannelSwap => "channel_swap",
    NoiseOverlay => "noise_overlay",
);

impl ShiftKind {
    pub const ALL: [ShiftKind; 4] = [ShiftKind::Invert, ShiftKind::ColorBackground, ShiftKind::ChannelSwap, ShiftKind::NoiseOverlay];
}

fn luminance(c: &[f32]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn color_background(img: &[f32], s: ImageShape, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let c = s.channels;
    let pick = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..c).map(|_| rng.gen_range(0.0..1.0)).collect() };
    let lum = |v: &[f32]| if v.len() >= 3 { luminance(v) } else { v[0] };
    let bg = pick(rng);
    let mut fg = pick(rng);
    while (lum(&fg) - lum(&bg)).abs() < 0.3 {
        fg = pick(rng);
    }
    let texture = smooth_field(s, 6, rng);
    let mut out = vec![0.0; img.len()];
    for p in 0..s.height * s.width {
        let g = img[p * c..(p + 1) * c].iter().sum::<f32>() / c as f32;
        let t = 0.35 * (texture[p] - 0.5);
        for ch in 0..c {
            out[p * c + ch] = (bg[ch] + t) * (1.0 - g) + fg[ch] * g;
        }
    }
    out
}

fn channel_swap(img: &[f32], s: ImageShape, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let c = s.channels;
    let mut perm: Vec<usize> = (0..c).collect();
    if c > 1 {
        while perm.iter().enumerate().all(|(i, &p)| i == p) {
            perm.shuffle(rng);
        }
    }
    let mut out = vec![0.0; img.len()];
    for p in 0..s.height * s.width {
        for ch in 0..c {
            out[p * c + ch] = img[p * c + perm[ch]];
        }
    }
    out
}

fn noise_overlay(img: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = Normal::new(0.0, 0.3).unwrap();
    img.iter()
        .map(|&v| {
            let r: f64 = rng.gen();
            if r < 0.04 {
                0.0
            } else if r < 0.08 {
                1.0
            } else {
                v + n.sample(rng) as f32
            }
        })
        .collect()
}

/// Deterministic label-preserving appearance shift.
pub fn synth_shift(domain: &Domain, kind: ShiftKind, seed: u64) -> Result<Domain> {
    let s = domain.signature.image;
    let images = match kind {
        ShiftKind::Invert => domain.images().iter().map(|&v| 1.0 - v).collect(),
        ShiftKind::ColorBackground => map_samples(domain, seed, |img, rng| color_background(img, s, rng)),
        ShiftKind::ChannelSwap => map_samples(domain, seed, |img, rng| channel_swap(img, s, rng)),
        ShiftKind::NoiseOverlay => map_samples(domain, seed, noise_overlay),
    };
    domain.map_images(format!("{}-{kind}", domain.id), DomainKind::Target, images)
}

/// Shifts used as unseen target domains: background colour, noise overlay
/// and inversion. Channel swap is left out because it is the identity on
/// gray digits duplicated to RGB.
pub const SHIFT_SUITE: [ShiftKind; 3] = [ShiftKind::ColorBackground, ShiftKind::NoiseOverlay, ShiftKind::Invert];

pub fn shift_suite(domain: &Domain, seed: u64) -> Result<Vec<Domain>> {
    SHIFT_SUITE.iter().map(|&k| synth_shift(domain, k, seed)).collect()
}

// -------------------------------------------------------------- container

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

str_enum!(Split, "split", Train => "train", Test => "test");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataOrigin {
    Downloaded,
    Synthesized,
}

str_enum!(DataOrigin, "dataset source", Downloaded => "downloaded", Synthesized => "synthesized");

/// Contents of a container's `manifest.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub kind: DomainKind,
    pub split: Split,
    pub n_samples: usize,
    pub signature: ShapeSignature,
    /// SHA-256 over the image payload followed by the label payload.
    pub checksum: String,
    pub source: DataOrigin,
}

const IMAGES: &str = "images.f32";
const LABELS: &str = "labels.u32";
const MANIFEST: &str = "manifest.txt";
const CHECKSUMS: &str = "checksums.sha256";
const PROVENANCE: &str = "provenance.json";

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let s = self.signature.image;
        format!(
            "format = 1\nname = {}\nkind = {}\nsplit = {}\nn_samples = {}\nheight = {}\nwidth = {}\nchannels = {}\nn_classes = {}\n\
             dtype = float32-le\nlayout = nhwc\nlabels = uint32-le\nchecksum = {}\nsource = {}\n",
            self.name, self.kind, self.split, self.n_samples, s.height, s.width, s.channels, self.signature.n_classes, self.checksum, self.source
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| Error::Data(format!("manifest lacks `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Data(format!("manifest `{k}` is not an integer"))) };
        if get("format")? != "1" {
            return Err(Error::Data(format!("unsupported container format {}", get("format")?)));
        }
        if get("dtype")? != "float32-le" || get("layout")? != "nhwc" || get("labels")? != "uint32-le" {
            return Err(Error::Data("unsupported payload encoding".into()));
        }
        Ok(Self {
            name: get("name")?.to_string(),
            kind: get("kind")?.parse()?,
            split: get("split")?.parse()?,
            n_samples: num("n_samples")?,
            signature: ShapeSignature {
                image: ImageShape::new(num("height")?, num("width")?, num("channels")?),
                n_classes: num("n_classes")?,
            },
            checksum: get("checksum")?.to_string(),
            source: get("source")?.parse()?,
        })
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Data(format!("line {}: expected `key = value`", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn payloads(domain: &Domain) -> (Vec<u8>, Vec<u8>) {
    let images = domain.images().iter().flat_map(|v| v.to_le_bytes()).collect();
    let labels = domain.labels().iter().flat_map(|&l| (l as u32).to_le_bytes()).collect();
    (images, labels)
}

fn combined_checksum(images: &[u8], labels: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(images);
    h.update(labels);
    hex::encode(h.finalize())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Write a domain container. Files go to a sibling temporary directory
/// that is renamed into place once complete.
pub fn save_domain(domain: &Domain, path: &Path, split: Split, source: DataOrigin) -> Result<DatasetManifest> {
    let (images, labels) = payloads(domain);
    let manifest = DatasetManifest {
        name: domain.id.clone(),
        kind: domain.kind,
        split,
        n_samples: domain.len(),
        signature: domain.signature,
        checksum: combined_checksum(&images, &labels),
        source,
    };
    let name = path.file_name().ok_or_else(|| Error::Data(format!("bad container path {}", path.display())))?;
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    let tmp = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(format!("clearing {}", tmp.display()), e))?;
    }
    fs::create_dir(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    write_file(&tmp.join(IMAGES), &images)?;
    write_file(&tmp.join(LABELS), &labels)?;
    let sums = format!(
        "{}  {IMAGES}\n{}  {LABELS}\n",
        hex::encode(Sha256::digest(&images)),
        hex::encode(Sha256::digest(&labels))
    );
    write_file(&tmp.join(CHECKSUMS), sums.as_bytes())?;
    if let Some(p) = &domain.provenance {
        let json = serde_json::to_vec_pretty(p).map_err(|e| Error::Data(e.to_string()))?;
        write_file(&tmp.join(PROVENANCE), &json)?;
    }
    write_file(&tmp.join(MANIFEST), manifest.to_text().as_bytes())?;
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| Error::io(format!("replacing {}", path.display()), e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("moving container to {}", path.display()), e))?;
    Ok(manifest)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Read a container written by [`save_domain`], verifying every checksum.
pub fn load_domain(path: &Path) -> Result<(Domain, DatasetManifest)> {
    let text = String::from_utf8(read_file(&path.join(MANIFEST))?).map_err(|e| Error::Data(e.to_string()))?;
    let manifest = DatasetManifest::parse(&text)?;
    let images = read_file(&path.join(IMAGES))?;
    let labels = read_file(&path.join(LABELS))?;
    let sums = String::from_utf8(read_file(&path.join(CHECKSUMS))?).map_err(|e| Error::Data(e.to_string()))?;
    for line in sums.lines().filter(|l| !l.trim().is_empty()) {
        let (want, file) = line.split_once("  ").ok_or_else(|| Error::Data(format!("malformed checksum line `{line}`")))?;
        let bytes = match file {
            IMAGES => &images,
            LABELS => &labels,
            other => return Err(Error::Data(format!("checksum for unknown file `{other}`"))),
        };
        if hex::encode(Sha256::digest(bytes)) != want {
            return Err(Error::Checksum(path.join(file).display().to_string()));
        }
    }
    if combined_checksum(&images, &labels) != manifest.checksum {
        return Err(Error::Checksum(path.join(MANIFEST).display().to_string()));
    }
    let dim = manifest.signature.image.len();
    if images.len() != manifest.n_samples * dim * 4 || labels.len() != manifest.n_samples * 4 {
        return Err(Error::Data(format!("payload size does not match manifest in {}", path.display())));
    }
    let pixels = images.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let labels = labels.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize).collect();
    let mut domain = Domain::new(manifest.name.clone(), manifest.kind, manifest.signature, pixels, labels)?;
    let prov = path.join(PROVENANCE);
    if prov.exists() {
        let p: AugmentProvenance = serde_json::from_slice(&read_file(&prov)?).map_err(|e| Error::Data(format!("{}: {e}", prov.display())))?;
        domain = domain.with_provenance(p);
    }
    Ok((domain, manifest))
}
