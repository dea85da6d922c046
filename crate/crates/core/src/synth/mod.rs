//! Synthetic paired data: rendered shape scenes with soft, multi-annotator
//! boundary ground truth; floor-plan style wall layouts; the training and
//! evaluation preprocessing; and the netpbm dataset layout.

mod dataset;
mod netpbm;
mod preprocess;

pub use dataset::{write_dataset, Dataset, MANIFEST};
pub use netpbm::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm,
};
pub use preprocess::{preprocess, Prepared, PreprocessConfig, PreprocessMode};

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};
use crate::numerics::Rng;
use crate::par;

/// One paired example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub gt: GrayImage,
    /// Binary wall mask for floor-plan data.
    pub walls: Option<GrayImage>,
}

impl Sample {
    pub fn check(&self) -> Result<()> {
        let (w, h) = (self.image.width(), self.image.height());
        let same = |g: &GrayImage| g.width() == w && g.height() == h;
        if !same(&self.gt) || !self.walls.as_ref().is_none_or(same) {
            return Err(Error::Data(format!(
                "sample `{}`: image and ground truth differ in size",
                self.id
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            id: self.id.clone(),
            image: self.image.map_planes(GrayImage::flip_horizontal),
            gt: self.gt.flip_horizontal(),
            walls: self.walls.as_ref().map(GrayImage::flip_horizontal),
        }
    }

    pub fn flip_vertical(&self) -> Self {
        Self {
            id: self.id.clone(),
            image: self.image.map_planes(GrayImage::flip_vertical),
            gt: self.gt.flip_vertical(),
            walls: self.walls.as_ref().map(GrayImage::flip_vertical),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Circle,
    Polyline,
}

/// Scene geometry in continuous pixel coordinates; pixel `(i, j)` has its
/// center at `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Circle { cx: f64, cy: f64, r: f64 },
    Polyline { points: Vec<(f64, f64)> },
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + s * dx - p.0, a.1 + s * dy - p.1);
    (qx.hypot(qy), s)
}

impl Shape {
    pub fn translated(&self, dx: f64, dy: f64) -> Shape {
        match self {
            Shape::Rect { x0, y0, x1, y1 } => Shape::Rect {
                x0: x0 + dx,
                y0: y0 + dy,
                x1: x1 + dx,
                y1: y1 + dy,
            },
            Shape::Circle { cx, cy, r } => Shape::Circle {
                cx: cx + dx,
                cy: cy + dy,
                r: *r,
            },
            Shape::Polyline { points } => Shape::Polyline {
                points: points.iter().map(|(x, y)| (x + dx, y + dy)).collect(),
            },
        }
    }

    /// Region membership; polylines have no interior.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Circle { cx, cy, r } => (x - cx).hypot(y - cy) < r,
            Shape::Polyline { .. } => false,
        }
    }

    /// Euclidean distance from `(x, y)` to the shape outline.
    pub fn boundary_distance(&self, x: f64, y: f64) -> f64 {
        match self {
            Shape::Rect { x0, y0, x1, y1 } => {
                let corners = [(*x0, *y0), (*x1, *y0), (*x1, *y1), (*x0, *y1)];
                (0..4)
                    .map(|i| segment_distance((x, y), corners[i], corners[(i + 1) % 4]).0)
                    .fold(f64::INFINITY, f64::min)
            }
            Shape::Circle { cx, cy, r } => ((x - cx).hypot(y - cy) - r).abs(),
            Shape::Polyline { points } => points
                .windows(2)
                .map(|w| segment_distance((x, y), w[0], w[1]).0)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Whether a polyline passes through the pixel centered at `(x, y)`
    /// under a one-pixel-wide raster along each segment's minor axis.
    fn on_stroke(&self, x: f64, y: f64) -> bool {
        let Shape::Polyline { points } = self else {
            return false;
        };
        points.windows(2).any(|w| {
            let (a, b) = (w[0], w[1]);
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            if len == 0.0 {
                return false;
            }
            let major = ((b.0 - a.0).abs()).max((b.1 - a.1).abs()) / len;
            let (d, _) = segment_distance((x, y), a, b);
            d <= 0.5 * major
        })
    }
}

/// Scene generator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub canvas: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub kinds: Vec<ShapeKind>,
    /// Standard deviation of per-pixel Gaussian texture noise.
    pub noise: f64,
    pub annotators: usize,
    /// Maximum per-annotator boundary displacement in pixels.
    pub jitter: f64,
    /// Generate floor-plan wall layouts instead of shape scenes.
    pub floor_plan: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            canvas: 32,
            min_shapes: 2,
            max_shapes: 3,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Circle, ShapeKind::Polyline],
            noise: 0.04,
            annotators: 5,
            jitter: 1.0,
            floor_plan: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.canvas < 8 {
            return bad("canvas must be at least 8 pixels");
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return bad("shape count range must satisfy 1 <= min <= max");
        }
        if self.kinds.is_empty() && !self.floor_plan {
            return bad("at least one shape kind is required");
        }
        if self.annotators == 0 {
            return bad("at least one annotator is required");
        }
        if !(self.noise >= 0.0 && self.jitter >= 0.0) {
            return bad("noise and jitter must be non-negative");
        }
        Ok(())
    }
}

/// A scene before rasterization.
#[derive(Clone, Debug)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    /// Filled regions in paint order with their label and color.
    pub regions: Vec<(Shape, usize, [f64; 3])>,
    /// Strokes painted over all regions.
    pub strokes: Vec<(Shape, [f64; 3])>,
}

fn luma(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn color_apart(rng: &mut Rng, avoid: &[[f64; 3]], min_gap: f64) -> [f64; 3] {
    let mut best = [0.5; 3];
    let mut best_gap = -1.0;
    for _ in 0..64 {
        let c = [rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)];
        let gap = avoid
            .iter()
            .map(|a| (luma(c) - luma(*a)).abs())
            .fold(f64::INFINITY, f64::min);
        if gap >= min_gap {
            return c;
        }
        if gap > best_gap {
            best = c;
            best_gap = gap;
        }
    }
    best
}

fn random_shape(rng: &mut Rng, kind: ShapeKind, size: f64) -> Shape {
    let lo = 0.1 * size;
    let hi = 0.9 * size;
    match kind {
        ShapeKind::Rectangle => {
            let w = rng.uniform(0.25, 0.6) * size;
            let h = rng.uniform(0.25, 0.6) * size;
            let x0 = rng.uniform(lo, hi - w);
            let y0 = rng.uniform(lo, hi - h);
            Shape::Rect {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            }
        }
        ShapeKind::Circle => {
            let r = rng.uniform(0.12, 0.3) * size;
            Shape::Circle {
                cx: rng.uniform(lo + r, hi - r),
                cy: rng.uniform(lo + r, hi - r),
                r,
            }
        }
        ShapeKind::Polyline => {
            let n = rng.range_inclusive(2, 3) as usize;
            let points = (0..=n)
                .map(|_| (rng.uniform(lo, hi), rng.uniform(lo, hi)))
                .collect();
            Shape::Polyline { points }
        }
    }
}

fn shape_scene(spec: &SceneSpec, rng: &mut Rng) -> Scene {
    let size = spec.canvas as f64;
    let background = [rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)];
    let count = rng.range_inclusive(spec.min_shapes as i64, spec.max_shapes as i64) as usize;
    let mut used = vec![background];
    let mut regions = Vec::new();
    let mut strokes = Vec::new();
    for i in 0..count {
        let kind = spec.kinds[rng.next_u64() as usize % spec.kinds.len()];
        let shape = random_shape(rng, kind, size);
        let color = color_apart(rng, &used, 0.2);
        used.push(color);
        if kind == ShapeKind::Polyline {
            strokes.push((shape, color));
        } else {
            regions.push((shape, i + 1, color));
        }
    }
    Scene {
        width: spec.canvas,
        height: spec.canvas,
        background,
        regions,
        strokes,
    }
}

/// Outer walls plus one interior wall of each orientation, each with a
/// door gap. All walls share label 1.
fn floor_plan_scene(spec: &SceneSpec, rng: &mut Rng) -> Scene {
    let s = spec.canvas as f64;
    let th = rng.uniform(2.0, 3.0);
    let m0 = rng.uniform(0.05, 0.12) * s;
    let m1 = s - rng.uniform(0.05, 0.12) * s;
    let rect = |x0: f64, y0: f64, x1: f64, y1: f64| Shape::Rect { x0, y0, x1, y1 };
    let mut walls = vec![
        rect(m0, m0, m1, m0 + th),
        rect(m0, m1 - th, m1, m1),
        rect(m0, m0, m0 + th, m1),
        rect(m1 - th, m0, m1, m1),
    ];
    let door = rng.uniform(0.15, 0.22) * s;
    let vx = rng.uniform(0.35, 0.65) * s;
    let gap_at = rng.uniform(m0 + th + 1.0, m1 - th - door - 1.0);
    walls.push(rect(vx, m0, vx + th, gap_at));
    walls.push(rect(vx, gap_at + door, vx + th, m1));
    let hy = rng.uniform(0.35, 0.65) * s;
    let left = rng.bernoulli(0.5);
    let (hx0, hx1) = if left { (m0, vx) } else { (vx + th, m1) };
    let span = hx1 - hx0;
    let gap = hx0 + rng.uniform(0.2, 0.5) * span;
    let door = (0.3 * span).min(door);
    walls.push(rect(hx0, hy, gap, hy + th));
    walls.push(rect(gap + door, hy, hx1, hy + th));

    let floor = rng.uniform(0.75, 0.95);
    let background = [floor, floor * rng.uniform(0.9, 1.0), floor * rng.uniform(0.85, 1.0)];
    let wall = rng.uniform(0.05, 0.25);
    let wall_color = [wall, wall, wall * rng.uniform(0.8, 1.2)];
    Scene {
        width: spec.canvas,
        height: spec.canvas,
        background,
        regions: walls.into_iter().map(|w| (w, 1, wall_color)).collect(),
        strokes: Vec::new(),
    }
}

impl Scene {
    fn label_map(&self, offsets: &[(f64, f64)]) -> Vec<usize> {
        let shapes: Vec<Shape> = self
            .regions
            .iter()
            .zip(offsets)
            .map(|((s, _, _), (dx, dy))| s.translated(*dx, *dy))
            .collect();
        let mut labels = vec![0; self.width * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                for (shape, (_, label, _)) in shapes.iter().zip(&self.regions) {
                    if shape.contains(px, py) {
                        labels[y * self.width + x] = *label;
                    }
                }
            }
        }
        labels
    }

    /// Renders the image with texture noise drawn from `rng`.
    pub fn render(&self, noise: f64, rng: &mut Rng) -> RgbImage {
        let (w, h) = (self.width, self.height);
        let mut planes = [GrayImage::new(w, h), GrayImage::new(w, h), GrayImage::new(w, h)];
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut c = self.background;
                for (shape, _, color) in &self.regions {
                    if shape.contains(px, py) {
                        c = *color;
                    }
                }
                for (shape, color) in &self.strokes {
                    if shape.boundary_distance(px, py) <= 0.75 {
                        c = *color;
                    }
                }
                for (plane, v) in planes.iter_mut().zip(c) {
                    plane.set(x, y, (v + noise * rng.normal()).clamp(0.0, 1.0));
                }
            }
        }
        RgbImage::from_planes(planes).expect("equal planes")
    }

    /// Binary boundary map of one annotator whose copy of every shape is
    /// displaced by an independent offset of length at most `jitter`.
    pub fn annotate(&self, jitter: f64, rng: &mut Rng) -> GrayImage {
        let mut offset = || {
            let r = jitter * rng.next_f64().sqrt();
            let a = std::f64::consts::TAU * rng.next_f64();
            (r * a.cos(), r * a.sin())
        };
        let region_offsets: Vec<_> = self.regions.iter().map(|_| offset()).collect();
        let stroke_offsets: Vec<_> = self.strokes.iter().map(|_| offset()).collect();
        let labels = self.label_map(&region_offsets);
        let (w, h) = (self.width, self.height);
        let strokes: Vec<Shape> = self
            .strokes
            .iter()
            .zip(&stroke_offsets)
            .map(|((s, _), (dx, dy))| s.translated(*dx, *dy))
            .collect();
        GrayImage::from_fn(w, h, |x, y| {
            let l = labels[y * w + x];
            let edge = (x + 1 < w && labels[y * w + x + 1] != l)
                || (y + 1 < h && labels[(y + 1) * w + x] != l);
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if edge || strokes.iter().any(|s| s.on_stroke(px, py)) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// All outlines, for geometric checks.
    pub fn outlines(&self) -> impl Iterator<Item = &Shape> {
        self.regions
            .iter()
            .map(|(s, _, _)| s)
            .chain(self.strokes.iter().map(|(s, _)| s))
    }
}

/// Scene for sample `index` of `spec`.
pub fn scene(spec: &SceneSpec, index: usize) -> Scene {
    let mut rng = Rng::derive(spec.seed, index as u64);
    if spec.floor_plan {
        floor_plan_scene(spec, &mut rng)
    } else {
        shape_scene(spec, &mut rng)
    }
}

/// Renders sample `index`: the image, the annotator-averaged boundary map,
/// and for floor plans the wall mask.
pub fn generate_one(spec: &SceneSpec, index: usize) -> Sample {
    let sc = scene(spec, index);
    let mut rng = Rng::derive(spec.seed ^ 0x7374_7564_696f, index as u64);
    let image = sc.render(spec.noise, &mut rng);
    let mut gt = GrayImage::new(sc.width, sc.height);
    for _ in 0..spec.annotators {
        let a = sc.annotate(spec.jitter, &mut rng);
        for (g, v) in gt.data_mut().iter_mut().zip(a.data()) {
            *g += v;
        }
    }
    let m = spec.annotators as f64;
    gt.data_mut().iter_mut().for_each(|v| *v /= m);
    let walls = spec.floor_plan.then(|| {
        let labels = sc.label_map(&vec![(0.0, 0.0); sc.regions.len()]);
        GrayImage::from_vec(
            sc.width,
            sc.height,
            labels.iter().map(|&l| if l > 0 { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask size")
    });
    Sample {
        id: format!("s{index:04}"),
        image,
        gt,
        walls,
    }
}

/// `n` samples with ids `s0000, s0001, …`, each from its own derived seed.
pub fn generate(spec: &SceneSpec, n: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    Ok(par::map(par::Mode::default(), &idx, |&i| generate_one(spec, i)))
}
