//! Parametric box-assembly furniture with template captions.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Manifest};
use crate::error::{Error, Result};
use crate::geometry::{format_point_cloud, PointCloud};

pub const SEG_TOP: usize = 0;
pub const SEG_LEG: usize = 1;
pub const SEG_SEAT: usize = 2;
pub const SEG_BACK: usize = 3;
pub const SEG_SIDE: usize = 5;
pub const SEG_BOARD: usize = 6;

/// Fraction of shapes held out for testing.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Archetype {
    Table { pedestal: bool },
    Chair { back: bool },
    Shelf { boards: usize },
}

const ARCHETYPES: [Archetype; 7] = [
    Archetype::Table { pedestal: false },
    Archetype::Table { pedestal: true },
    Archetype::Chair { back: true },
    Archetype::Chair { back: false },
    Archetype::Shelf { boards: 2 },
    Archetype::Shelf { boards: 3 },
    Archetype::Shelf { boards: 4 },
];

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub archetype: Archetype,
    pub tall: bool,
    pub wide: bool,
    pub thick: bool,
    pub height: f64,
    pub width: f64,
    pub depth: f64,
    pub thickness: f64,
}

#[derive(Clone, Copy, Debug)]
struct Part {
    lo: [f64; 3],
    hi: [f64; 3],
    seg: usize,
}

fn part(lo: [f64; 3], hi: [f64; 3], seg: usize) -> Part {
    Part { lo, hi, seg }
}

impl ShapeSpec {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let archetype = ARCHETYPES[rng.gen_range(0..ARCHETYPES.len())];
        let (tall, wide, thick) = (rng.gen_bool(0.5), rng.gen_bool(0.5), rng.gen_bool(0.5));
        let (base_h, base_w) = match archetype {
            Archetype::Table { .. } => (0.75, 1.0),
            Archetype::Chair { .. } => (0.45, 0.5),
            Archetype::Shelf { .. } => (1.2, 0.8),
        };
        let hf = if tall { rng.gen_range(1.3..1.5) } else { rng.gen_range(0.7..0.85) };
        let wf = if wide { rng.gen_range(1.4..1.7) } else { rng.gen_range(0.7..0.85) };
        let thickness = if thick { rng.gen_range(0.09..0.12) } else { rng.gen_range(0.03..0.045) };
        ShapeSpec {
            archetype,
            tall,
            wide,
            thick,
            height: base_h * hf,
            width: base_w * wf,
            depth: rng.gen_range(0.4..0.55),
            thickness,
        }
    }

    fn parts(&self) -> Vec<Part> {
        let (h, hw, hd, t) = (self.height, self.width / 2.0, self.depth / 2.0, self.thickness);
        let slab = 0.05;
        let legs = |top: f64, t: f64| -> Vec<Part> {
            let mut v = Vec::with_capacity(4);
            for sx in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let (cx, cz) = (sx * (hw - t), sz * (hd - t));
                    v.push(part([cx - t / 2.0, 0.0, cz - t / 2.0], [cx + t / 2.0, top, cz + t / 2.0], SEG_LEG));
                }
            }
            v
        };
        match self.archetype {
            Archetype::Table { pedestal } => {
                let mut v = vec![part([-hw, h - slab, -hd], [hw, h, hd], SEG_TOP)];
                if pedestal {
                    let r = 1.5 * t;
                    v.push(part([-r, 0.0, -r], [r, h - slab, r], SEG_LEG));
                } else {
                    v.extend(legs(h - slab, t));
                }
                v
            }
            Archetype::Chair { back } => {
                let mut v = vec![part([-hw, h - slab, -hd], [hw, h, hd], SEG_SEAT)];
                v.extend(legs(h - slab, t));
                if back {
                    v.push(part([-hw, h, -hd], [hw, h + 0.9 * h, -hd + slab], SEG_BACK));
                }
                v
            }
            Archetype::Shelf { boards } => {
                let mut v = vec![
                    part([-hw, 0.0, -hd], [-hw + t, h, hd], SEG_SIDE),
                    part([hw - t, 0.0, -hd], [hw, h, hd], SEG_SIDE),
                ];
                for b in 0..boards {
                    let y = (h - t) * b as f64 / (boards - 1) as f64;
                    v.push(part([-hw + t, y, -hd], [hw - t, y + t, hd], SEG_BOARD));
                }
                v
            }
        }
    }

    /// Area-weighted uniform samples on the part surfaces.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
        let mut faces = Vec::new();
        for p in self.parts() {
            let ext = [p.hi[0] - p.lo[0], p.hi[1] - p.lo[1], p.hi[2] - p.lo[2]];
            for axis in 0..3 {
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                for side in [p.lo[axis], p.hi[axis]] {
                    faces.push((p, axis, side, ext[a] * ext[b]));
                }
            }
        }
        let total: f64 = faces.iter().map(|f| f.3).sum();
        let mut pts = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pick = rng.gen_range(0.0..total);
            let mut chosen = faces.len() - 1;
            for (i, f) in faces.iter().enumerate() {
                if pick < f.3 {
                    chosen = i;
                    break;
                }
                pick -= f.3;
            }
            let (p, axis, side, _) = faces[chosen];
            let mut q = [0.0; 3];
            for a in 0..3 {
                q[a] = if a == axis { side } else { rng.gen_range(p.lo[a]..=p.hi[a]) };
            }
            pts.push(q);
            labels.push(p.seg);
        }
        PointCloud::new(pts)?.with_labels(labels)
    }

    pub fn caption(&self, rng: &mut ChaCha8Rng) -> String {
        let pick = |rng: &mut ChaCha8Rng, opts: &[&'static str]| *opts.choose(rng).expect("non-empty");
        let h = pick(rng, if self.tall { &["tall", "high"] } else { &["short", "low"] });
        let w = pick(rng, if self.wide { &["wide", "broad"] } else { &["narrow", "slim"] });
        let t = pick(rng, if self.thick { &["thick", "sturdy"] } else { &["thin", "slender"] });
        let (noun, clause) = match self.archetype {
            Archetype::Table { pedestal: false } => (pick(rng, &["table", "desk"]), format!("with four {t} legs")),
            Archetype::Table { pedestal: true } => (
                pick(rng, &["table", "desk"]),
                pick(rng, &["with a single {t} central leg", "on one {t} pedestal"]).replace("{t}", t),
            ),
            Archetype::Chair { back: true } => (pick(rng, &["chair", "seat"]), format!("with a backrest and four {t} legs")),
            Archetype::Chair { back: false } => (pick(rng, &["stool", "backless seat"]), format!("with four {t} legs")),
            Archetype::Shelf { boards } => {
                let count = ["two", "three", "four"][boards - 2];
                (pick(rng, &["shelf", "bookcase"]), format!("with {count} {t} shelves"))
            }
        };
        match rng.gen_range(0..4) {
            0 => format!("a {h} {w} {noun} {clause}"),
            1 => format!("a {noun} that is {h} and {w}, {clause}"),
            2 => format!("this {noun} is {w} and {h} {clause}"),
            _ => format!("a {w} and {h} {noun} {clause}"),
        }
    }
}

/// Writes a synthetic dataset under `out` and loads it back.
pub fn gen_synthetic(out: &Path, seed: u64, shapes: usize, captions_per_shape: usize, points: usize) -> Result<Dataset> {
    if shapes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 shapes, got {shapes}")));
    }
    if captions_per_shape == 0 || points == 0 {
        return Err(Error::InvalidArgument("captions per shape and points must be positive".into()));
    }
    let shape_dir = out.join("shapes");
    std::fs::create_dir_all(&shape_dir).map_err(|e| Error::io(&shape_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut captions = String::new();
    let mut ids = Vec::with_capacity(shapes);
    for i in 0..shapes {
        let id = format!("shape_{i:04}");
        let spec = ShapeSpec::random(&mut rng);
        let cloud = spec.sample(points, &mut rng)?;
        let path = shape_dir.join(format!("{id}.pts"));
        std::fs::write(&path, format_point_cloud(&cloud)).map_err(|e| Error::io(&path, e))?;
        for _ in 0..captions_per_shape {
            let _ = writeln!(captions, "{id}\t{}", spec.caption(&mut rng));
        }
        ids.push(id);
    }

    let n_test = ((shapes as f64 * TEST_FRACTION).round() as usize).clamp(1, shapes - 1);
    let mut order: Vec<usize> = (0..shapes).collect();
    order.shuffle(&mut rng);
    let mut is_test = vec![false; shapes];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let mut splits = String::new();
    for (id, test) in ids.iter().zip(&is_test) {
        let _ = writeln!(splits, "{id}\t{}", if *test { "test" } else { "train" });
    }

    let manifest = Manifest {
        seed,
        points,
        shapes,
        captions_per_shape,
    };
    let files = [
        ("manifest.toml", toml::to_string(&manifest).expect("manifest serialises")),
        ("captions.tsv", captions),
        ("splits.tsv", splits),
    ];
    for (name, body) in files {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Dataset::load(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn segments(spec: &ShapeSpec) -> BTreeSet<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        spec.sample(500, &mut rng).unwrap().segment_labels().unwrap().iter().copied().collect()
    }

    #[test]
    fn chair_back_is_a_segment_tables_lack() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut spec = ShapeSpec::random(&mut rng);
        spec.archetype = Archetype::Chair { back: true };
        let chair = segments(&spec);
        spec.archetype = Archetype::Table { pedestal: false };
        let table = segments(&spec);
        assert!(chair.contains(&SEG_BACK));
        assert!(!table.contains(&SEG_BACK));
    }

    #[test]
    fn counts_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let da = gen_synthetic(a.path(), 7, 2, 3, 64).unwrap();
        gen_synthetic(b.path(), 7, 2, 3, 64).unwrap();
        assert_eq!(std::fs::read_dir(a.path().join("shapes")).unwrap().count(), 2);
        assert_eq!(da.captions.len(), 6);
        assert_eq!(da.shapes_in(super::super::Split::Test).len(), 1);
        for name in ["captions.tsv", "splits.tsv", "manifest.toml", "shapes/shape_0001.pts"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap()
            );
        }
        assert!(gen_synthetic(a.path(), 7, 1, 3, 64).is_err());
    }

    #[test]
    fn captions_name_the_attributes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let spec = ShapeSpec::random(&mut rng);
            let c = spec.caption(&mut rng);
            let has = |ws: &[&str]| ws.iter().any(|w| c.split(|ch: char| !ch.is_alphanumeric()).any(|t| t == *w));
            assert!(has(if spec.tall { &["tall", "high"] } else { &["short", "low"] }), "{c}");
            assert!(has(if spec.thick { &["thick", "sturdy"] } else { &["thin", "slender"] }), "{c}");
        }
    }
}
