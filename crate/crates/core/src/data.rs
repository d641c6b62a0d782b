//! Moving-shapes sequences and the `ARFD` dataset file format.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{self, Reader};
use crate::rng::{substream, Prng};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ARFD";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 32;

/// `(M, N, C, H, W)`: input frames, output frames, channels, frame size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub in_frames: usize,
    pub out_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { in_frames: 10, out_frames: 10, channels: 1, height: 64, width: 64 }
    }
}

impl Geometry {
    pub fn frames(&self) -> usize {
        self.in_frames + self.out_frames
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn sequence_len(&self) -> usize {
        self.frames() * self.frame_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_frames == 0 || self.out_frames == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("geometry dimensions must be ≥ 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {}, {})", self.in_frames, self.out_frames, self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpriteOptions {
    pub n_sprites: usize,
    pub sprite_size: usize,
    /// Velocities are integers drawn uniformly from `[-max_speed, max_speed]`.
    pub max_speed: usize,
}

impl Default for SpriteOptions {
    fn default() -> Self {
        SpriteOptions { n_sprites: 2, sprite_size: 12, max_speed: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpriteKind {
    Square,
    Circle,
    Cross,
}

impl SpriteKind {
    const ALL: [SpriteKind; 3] = [SpriteKind::Square, SpriteKind::Circle, SpriteKind::Cross];

    /// Binary `s×s` mask, row-major.
    pub fn mask(self, s: usize) -> Vec<bool> {
        let c = (s as f64 - 1.0) / 2.0;
        let r = s as f64 / 2.0;
        let half_bar = (s as f64 / 6.0).max(0.5);
        let mut out = Vec::with_capacity(s * s);
        for i in 0..s {
            for j in 0..s {
                let (di, dj) = (i as f64 - c, j as f64 - c);
                out.push(match self {
                    SpriteKind::Square => true,
                    SpriteKind::Circle => di * di + dj * dj <= r * r,
                    SpriteKind::Cross => di.abs() <= half_bar || dj.abs() <= half_bar,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Sprite {
    kind: SpriteKind,
    y: i64,
    x: i64,
    vy: i64,
    vx: i64,
}

/// Advances one coordinate by its velocity, reflecting off `[0, max]`.
fn bounce(p: &mut i64, v: &mut i64, max: i64) {
    *p += *v;
    loop {
        if *p < 0 {
            *p = -*p;
            *v = -*v;
        } else if *p > max {
            *p = 2 * max - *p;
            *v = -*v;
        } else {
            break;
        }
    }
}

fn box_blur3(src: &[f32], h: usize, w: usize, dst: &mut [f32]) {
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0f32;
            for ii in i.saturating_sub(1)..(i + 2).min(h) {
                for jj in j.saturating_sub(1)..(j + 2).min(w) {
                    acc += src[ii * w + jj];
                }
            }
            dst[i * w + j] = acc / 9.0;
        }
    }
}

/// Per-frame binary masks before blurring, `[frames][H·W]`. Exposed for
/// geometry tests.
pub fn sprite_masks(seed: u64, geometry: &Geometry, opts: &SpriteOptions) -> Result<Vec<Vec<Vec<bool>>>> {
    geometry.validate()?;
    let s = opts.sprite_size;
    if s == 0 || s >= geometry.height || s >= geometry.width {
        return Err(Error::Config(format!(
            "sprite size {s} must be ≥ 1 and smaller than the {}×{} frame",
            geometry.height, geometry.width
        )));
    }
    let (h, w) = (geometry.height, geometry.width);
    let (ymax, xmax) = ((h - s) as i64, (w - s) as i64);
    let speeds = 2 * opts.max_speed as u64 + 1;
    let mut rng = Prng::new(seed);
    let mut sprites: Vec<Sprite> = (0..opts.n_sprites)
        .map(|_| Sprite {
            kind: SpriteKind::ALL[rng.next_below(3) as usize],
            x: rng.next_below(xmax as u64 + 1) as i64,
            y: rng.next_below(ymax as u64 + 1) as i64,
            vx: rng.next_below(speeds) as i64 - opts.max_speed as i64,
            vy: rng.next_below(speeds) as i64 - opts.max_speed as i64,
        })
        .collect();
    let shapes: Vec<Vec<bool>> = sprites.iter().map(|sp| sp.kind.mask(s)).collect();

    let mut frames = Vec::with_capacity(geometry.frames());
    for _ in 0..geometry.frames() {
        let mut per_sprite = Vec::with_capacity(sprites.len());
        for (sp, shape) in sprites.iter().zip(&shapes) {
            let mut m = vec![false; h * w];
            for i in 0..s {
                for j in 0..s {
                    if shape[i * s + j] {
                        m[(sp.y as usize + i) * w + sp.x as usize + j] = true;
                    }
                }
            }
            per_sprite.push(m);
        }
        frames.push(per_sprite);
        for sp in &mut sprites {
            bounce(&mut sp.y, &mut sp.vy, ymax);
            bounce(&mut sp.x, &mut sp.vx, xmax);
        }
    }
    Ok(frames)
}

/// One sequence `[M+N, C, H, W]` with values in `[0, 1]`.
pub fn gen_sequence(seed: u64, geometry: &Geometry, opts: &SpriteOptions) -> Result<Tensor<f32>> {
    let masks = sprite_masks(seed, geometry, opts)?;
    let (h, w) = (geometry.height, geometry.width);
    let mut out = Vec::with_capacity(geometry.sequence_len());
    let mut composite = vec![0.0f32; h * w];
    let mut blurred = vec![0.0f32; h * w];
    for frame in &masks {
        for (p, c) in composite.iter_mut().enumerate() {
            *c = if frame.iter().any(|m| m[p]) { 1.0 } else { 0.0 };
        }
        box_blur3(&composite, h, w, &mut blurred);
        for _ in 0..geometry.channels {
            out.extend_from_slice(&blurred);
        }
    }
    Tensor::from_vec(&[geometry.frames(), geometry.channels, h, w], out)
}

/// Sequences stored as `[n, frames, C, H, W]`. The input/output split is
/// not part of the file; callers supply `M` when batching.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: Tensor<f32>,
}

impl Dataset {
    pub fn from_sequences(sequences: &[Tensor<f32>]) -> Result<Self> {
        let first = sequences.first().ok_or_else(|| Error::Config("dataset needs at least one sequence".into()))?;
        if first.rank() != 4 {
            return Err(Error::InvalidShape { shape: first.shape().to_vec(), reason: "sequence must be [frames, C, H, W]" });
        }
        let mut data = Vec::with_capacity(first.len() * sequences.len());
        for s in sequences {
            if s.shape() != first.shape() {
                return Err(Error::ShapeMismatch { op: "dataset", left: first.shape().to_vec(), right: s.shape().to_vec() });
            }
            data.extend_from_slice(s.data());
        }
        let mut shape = vec![sequences.len()];
        shape.extend_from_slice(first.shape());
        Ok(Dataset { data: Tensor::from_vec(&shape, data)? })
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(frames, C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.data.shape();
        (s[1], s[2], s[3], s[4])
    }

    pub fn geometry(&self, in_frames: usize) -> Result<Geometry> {
        let (f, c, h, w) = self.dims();
        if in_frames == 0 || in_frames >= f {
            return Err(Error::Config(format!("input frames {in_frames} must be in 1..{f} for {f}-frame sequences")));
        }
        Ok(Geometry { in_frames, out_frames: f - in_frames, channels: c, height: h, width: w })
    }

    pub fn sequence(&self, i: usize) -> Tensor<f32> {
        let (f, c, h, w) = self.dims();
        let n = f * c * h * w;
        Tensor::from_vec(&[f, c, h, w], self.data.data()[i * n..(i + 1) * n].to_vec()).unwrap()
    }

    /// Gathers sequences into model layout: inputs `[B, M·C, H, W]` and
    /// targets `[B, N·C, H, W]`.
    pub fn batch(&self, indices: &[usize], geometry: &Geometry) -> Result<SequenceBatch> {
        let (f, c, h, w) = self.dims();
        if (geometry.frames(), geometry.channels, geometry.height, geometry.width) != (f, c, h, w) {
            return Err(Error::Config(format!("geometry {geometry} does not match dataset ({f} frames, {c}, {h}, {w})")));
        }
        let frame = c * h * w;
        let split = geometry.in_frames * frame;
        let seq = f * frame;
        let mut inputs = Vec::with_capacity(indices.len() * split);
        let mut targets = Vec::with_capacity(indices.len() * (seq - split));
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Config(format!("sequence index {i} out of range for {} sequences", self.len())));
            }
            let s = &self.data.data()[i * seq..(i + 1) * seq];
            inputs.extend_from_slice(&s[..split]);
            targets.extend_from_slice(&s[split..]);
        }
        let b = indices.len();
        Ok(SequenceBatch {
            inputs: Tensor::from_vec(&[b, geometry.in_frames * c, h, w], inputs)?,
            targets: Tensor::from_vec(&[b, geometry.out_frames * c, h, w], targets)?,
            geometry: *geometry,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Tensor<f32>,
    pub targets: Tensor<f32>,
    pub geometry: Geometry,
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let (f, c, h, w) = dataset.dims();
    let mut out = Vec::with_capacity(HEADER_BYTES + dataset.data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, dataset.len() as u32, f as u32, c as u32, h as u32, w as u32, 0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    io::put_f32s(&mut out, dataset.data.data());
    io::write_atomic(path, &out)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = io::read(path)?;
    let mut r = Reader::new(path, &bytes);
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(r.error(0, "bad magic (expected \"ARFD\")"));
    }
    r.pos = 4;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for (d, name) in dims.iter_mut().zip(["sequence count", "frame count", "channels", "height", "width"]) {
        let at = r.pos;
        *d = r.u32(name)? as usize;
        if *d == 0 {
            return Err(r.error(at, format!("{name} must be ≥ 1")));
        }
    }
    if r.u32("reserved")? != 0 {
        return Err(r.error(28, "reserved field must be 0"));
    }
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.error(8, "dimensions overflow"))?;
    let values = r.f32s(n, "payload")?;
    if r.pos != bytes.len() {
        return Err(r.error(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Dataset { data: Tensor::from_vec(&dims, values)? })
}

/// Per-sequence seeds: train sequence `i` uses `substream(seed, 2i)`, test
/// sequence `i` uses `substream(seed, 2i + 1)`.
pub fn split_seeds(seed: u64, n_train: usize, n_test: usize) -> (Vec<u64>, Vec<u64>) {
    (
        (0..n_train as u64).map(|i| substream(seed, 2 * i)).collect(),
        (0..n_test as u64).map(|i| substream(seed, 2 * i + 1)).collect(),
    )
}

pub fn generate(seeds: &[u64], geometry: &Geometry, opts: &SpriteOptions) -> Result<Dataset> {
    let seqs = seeds.iter().map(|&s| gen_sequence(s, geometry, opts)).collect::<Result<Vec<_>>>()?;
    Dataset::from_sequences(&seqs)
}

pub const TRAIN_FILE: &str = "train.arfd";
pub const TEST_FILE: &str = "test.arfd";

/// Writes `train.arfd` and `test.arfd` into `dir`; returns their paths.
pub fn make_splits(
    dir: &Path,
    seed: u64,
    n_train: usize,
    n_test: usize,
    geometry: &Geometry,
    opts: &SpriteOptions,
) -> Result<(PathBuf, PathBuf)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config(format!("split counts must be ≥ 1, got train {n_train}, test {n_test}")));
    }
    let (train_seeds, test_seeds) = split_seeds(seed, n_train, n_test);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let train = dir.join(TRAIN_FILE);
    let test = dir.join(TEST_FILE);
    write_dataset(&train, &generate(&train_seeds, geometry, opts)?)?;
    write_dataset(&test, &generate(&test_seeds, geometry, opts)?)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_sums(seq: &Tensor<f32>) -> Vec<f64> {
        let n = seq.len() / seq.shape()[0];
        seq.data().chunks(n).map(|f| f.iter().map(|&v| v as f64).sum()).collect()
    }

    #[test]
    fn seed_42_first_frame_checksum() {
        let seq = gen_sequence(42, &Geometry::default(), &SpriteOptions::default()).unwrap();
        let bits = seq.data()[..64 * 64].iter().fold(0xcbf29ce484222325u64, |h, v| {
            (h ^ v.to_bits() as u64).wrapping_mul(0x100000001b3)
        });
        assert_eq!(frame_sums(&seq)[0], SEED42_FRAME0_SUM);
        assert_eq!(bits, SEED42_FRAME0_FNV);
    }

    const SEED42_FRAME0_SUM: f64 = 160.00000202655792;
    const SEED42_FRAME0_FNV: u64 = 0x1f083ed7f8610cb5;

    #[test]
    fn values_in_unit_range_and_never_empty() {
        let g = Geometry { height: 32, width: 32, ..Default::default() };
        for seed in 0..20 {
            let seq = gen_sequence(seed, &g, &SpriteOptions::default()).unwrap();
            assert!(seq.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(frame_sums(&seq).iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn zero_velocity_gives_static_frames() {
        let g = Geometry { height: 24, width: 24, channels: 2, ..Default::default() };
        let seq = gen_sequence(3, &g, &SpriteOptions { max_speed: 0, ..Default::default() }).unwrap();
        let n = g.frame_len();
        for f in 1..g.frames() {
            assert_eq!(&seq.data()[f * n..(f + 1) * n], &seq.data()[..n]);
        }
    }

    #[test]
    fn single_sprite_area_is_constant() {
        let g = Geometry { height: 20, width: 20, ..Default::default() };
        for seed in 0..10 {
            let masks = sprite_masks(seed, &g, &SpriteOptions { n_sprites: 1, ..Default::default() }).unwrap();
            let areas: Vec<usize> = masks.iter().map(|f| f[0].iter().filter(|&&b| b).count()).collect();
            assert!(areas.iter().all(|&a| a == areas[0] && a > 0), "{areas:?}");
        }
    }

    #[test]
    fn sprite_must_fit() {
        let g = Geometry { height: 12, width: 40, ..Default::default() };
        assert!(gen_sequence(0, &g, &SpriteOptions::default()).is_err());
    }

    #[test]
    fn reflection_stays_in_bounds() {
        let (mut p, mut v) = (1, -3);
        bounce(&mut p, &mut v, 10);
        assert_eq!((p, v), (2, 3));
        let (mut p, mut v) = (9, 3);
        bounce(&mut p, &mut v, 10);
        assert_eq!((p, v), (8, -3));
    }

    #[test]
    fn round_trip_and_file_size() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry { in_frames: 2, out_frames: 3, channels: 1, height: 16, width: 16 };
        let ds = generate(&(0..8).collect::<Vec<_>>(), &g, &SpriteOptions { sprite_size: 6, ..Default::default() }).unwrap();
        let path = dir.path().join("d.arfd");
        write_dataset(&path, &ds).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 32 + 8 * 5 * 16 * 16 * 4);
        let back = read_dataset(&path).unwrap();
        assert!(back.data.data().iter().zip(ds.data.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.data.shape(), ds.data.shape());
    }

    #[test]
    fn malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.arfd");
        std::fs::write(&path, b"").unwrap();
        let err = read_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic") && err.contains("offset 0"), "{err}");

        let g = Geometry { in_frames: 1, out_frames: 1, channels: 1, height: 4, width: 4 };
        let ds = generate(&[1, 2], &g, &SpriteOptions { sprite_size: 2, ..Default::default() }).unwrap();
        write_dataset(&path, &ds).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("truncated payload"), "{err}");

        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_dataset(&path).unwrap_err().to_string().contains("version 9"));
    }

    #[test]
    fn splits_are_deterministic_and_disjoint() {
        let g = Geometry { in_frames: 2, out_frames: 2, channels: 1, height: 16, width: 16 };
        let opts = SpriteOptions { sprite_size: 5, ..Default::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        make_splits(a.path(), 7, 4, 2, &g, &opts).unwrap();
        make_splits(b.path(), 7, 4, 2, &g, &opts).unwrap();
        for f in [TRAIN_FILE, TEST_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
        let (train, test) = split_seeds(7, 100, 100);
        assert!(train.iter().all(|s| !test.contains(s)));
        assert!(make_splits(a.path(), 7, 0, 2, &g, &opts).is_err());
    }

    #[test]
    fn batch_layout() {
        let g = Geometry { in_frames: 2, out_frames: 1, channels: 2, height: 3, width: 3 };
        let seq: Vec<Tensor<f32>> =
            (0..2).map(|s| Tensor::from_vec(&[3, 2, 3, 3], (0..54).map(|v| (v + 100 * s) as f32).collect()).unwrap()).collect();
        let ds = Dataset::from_sequences(&seq).unwrap();
        let b = ds.batch(&[1, 0], &g).unwrap();
        assert_eq!(b.inputs.shape(), &[2, 4, 3, 3]);
        assert_eq!(b.targets.shape(), &[2, 2, 3, 3]);
        assert_eq!(b.inputs.data()[0], 100.0);
        assert_eq!(b.targets.data()[18], 36.0);
        assert!(ds.batch(&[2], &g).is_err());
    }
}
