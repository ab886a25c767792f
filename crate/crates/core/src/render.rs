//! Deterministic procedural renderer. Boxes and spheres are ray cast through a
//! pinhole camera that looks along its local -Z with +Y up; each environment
//! map gets its own flat background color.

use std::io::Cursor;

use crate::config::Intrinsics;
use crate::episode::SceneSample;
use crate::geometry::{Aabb, Pose, Sphere, Vec3};
use crate::kinematics::Shape;
use crate::planner::{scene_at, PlanResult};
use crate::randomize::{fnv1a, Lighting};
use crate::scene::{SceneState, TABLE};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("png decode: {0}")]
    Decode(String),
    #[error("png image is not 8-bit RGB")]
    Format,
}

/// RGB8 image, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        Image {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(3 * n).collect(),
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        enc.set_filter(png::Filter::Sub);
        let mut w = enc.write_header().expect("in-memory png header");
        w.write_image_data(&self.pixels).expect("in-memory png data");
        w.finish().expect("in-memory png finish");
        out
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Image, RenderError> {
        let dec = png::Decoder::new(Cursor::new(bytes));
        let mut reader = dec.read_info().map_err(|e| RenderError::Decode(e.to_string()))?;
        let size = reader.output_buffer_size().ok_or(RenderError::Format)?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| RenderError::Decode(e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(RenderError::Format);
        }
        buf.truncate(info.buffer_size());
        Ok(Image {
            width: info.width,
            height: info.height,
            pixels: buf,
        })
    }
}

/// A drawable solid; `key` picks its color.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub key: String,
    pub shape: Shape,
}

/// Everything visible at one instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    pub primitives: Vec<Primitive>,
}

impl Snapshot {
    /// Table, object boxes (colored by asset) and arm spheres (colored per arm).
    pub fn of(scene: &SceneState) -> Self {
        let mut primitives = vec![Primitive {
            key: TABLE.to_string(),
            shape: Shape::Box(scene.table),
        }];
        for o in &scene.objects {
            for (_, b) in o.boxes() {
                primitives.push(Primitive {
                    key: o.asset.clone(),
                    shape: Shape::Box(b),
                });
            }
        }
        for a in &scene.arms {
            let key = a.key.to_string();
            for s in a.model.spheres(&a.q).unwrap_or_default() {
                primitives.push(Primitive {
                    key: key.clone(),
                    shape: Shape::Sphere(s.sphere),
                });
            }
        }
        Snapshot { primitives }
    }
}

pub fn base_color(key: &str) -> [u8; 3] {
    let h = fnv1a(key);
    [0, 8, 16].map(|s| 64 + ((h >> s) & 0xff) as u8 % 160)
}

/// Flat background for an environment map.
pub fn background(lighting: &Lighting) -> [u8; 3] {
    let h = fnv1a(&format!("env_map/{}", lighting.env_map_id));
    [0, 8, 16].map(|s| 24 + ((h >> s) & 0xff) as u8 % 72)
}

const AMBIENT: f64 = 0.3;
const LIGHT_ELEVATION_DEG: f64 = 50.0;
const NEAR: f64 = 1e-3;

struct Hit {
    t: f64,
    normal: Vec3,
}

fn ray_box(o: &Vec3, d: &Vec3, b: &Aabb) -> Option<Hit> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut normal = Vec3::zeros();
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i] < b.min[i] || o[i] > b.max[i] {
                return None;
            }
            continue;
        }
        let (mut a, mut c) = ((b.min[i] - o[i]) / d[i], (b.max[i] - o[i]) / d[i]);
        let mut sign = -1.0;
        if a > c {
            std::mem::swap(&mut a, &mut c);
            sign = 1.0;
        }
        if a > t0 {
            t0 = a;
            normal = Vec3::zeros();
            normal[i] = sign;
        }
        t1 = t1.min(c);
    }
    (t0 <= t1 && t0 > NEAR).then_some(Hit { t: t0, normal })
}

fn ray_sphere(o: &Vec3, d: &Vec3, s: &Sphere) -> Option<Hit> {
    let oc = o - s.center;
    let a = d.norm_squared();
    let b = oc.dot(d);
    let c = oc.norm_squared() - s.radius * s.radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    (t > NEAR).then(|| Hit {
        t,
        normal: (o + d * t - s.center).normalize(),
    })
}

fn bounding_sphere(shape: &Shape) -> Sphere {
    match shape {
        Shape::Sphere(s) => *s,
        Shape::Box(b) => Sphere::new(b.center(), 0.5 * (b.max - b.min).norm()),
    }
}

/// Conservative pixel rectangle `[x0, x1) × [y0, y1)` covered by a primitive.
fn screen_rect(s: &Sphere, cam_inv: &Pose, f: f64, cx: f64, cy: f64, w: u32, h: u32) -> Option<[u32; 4]> {
    let p = cam_inv.transform_point(&s.center);
    let d = -p.z;
    let r = s.radius;
    if d + r <= NEAR {
        return None;
    }
    if d - r <= NEAR {
        return Some([0, w, 0, h]);
    }
    let span = |x: f64| {
        let lo = ((x - r) / (d - r)).min((x - r) / (d + r));
        let hi = ((x + r) / (d - r)).max((x + r) / (d + r));
        (lo, hi)
    };
    let (ulo, uhi) = span(p.x);
    let (vlo, vhi) = span(p.y);
    let clamp = |v: f64, n: u32| v.floor().clamp(0.0, n as f64) as u32;
    let x0 = clamp(cx + f * ulo, w);
    let x1 = clamp(cx + f * uhi + 1.0, w);
    let y0 = clamp(cy - f * vhi, h);
    let y1 = clamp(cy - f * vlo + 1.0, h);
    (x0 < x1 && y0 < y1).then_some([x0, x1, y0, y1])
}

/// Renders `snapshot` from a camera at world pose `camera`.
pub fn render_frame(snapshot: &Snapshot, camera: &Pose, intrinsics: &Intrinsics, lighting: &Lighting) -> Image {
    let (w, h, f) = (intrinsics.width, intrinsics.height, intrinsics.focal);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut img = Image::filled(w, h, background(lighting));
    let cam_inv = camera.inverse();
    let visible: Vec<(&Primitive, [u32; 4], [u8; 3])> = snapshot
        .primitives
        .iter()
        .filter_map(|p| {
            let rect = screen_rect(&bounding_sphere(&p.shape), &cam_inv, f, cx, cy, w, h)?;
            Some((p, rect, base_color(&p.key)))
        })
        .collect();
    if visible.is_empty() {
        return img;
    }
    let el = LIGHT_ELEVATION_DEG.to_radians();
    let az = lighting.rotation_deg.to_radians();
    let light = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    let gain = 0.5 + 0.5 * (lighting.intensity / 7000.0).clamp(0.0, 1.5);
    let origin = camera.translation;
    for y in 0..h {
        for x in 0..w {
            let local = Vec3::new((x as f64 + 0.5 - cx) / f, -(y as f64 + 0.5 - cy) / f, -1.0);
            let dir = camera.rotation * local;
            let mut best: Option<(Hit, [u8; 3])> = None;
            for (p, [x0, x1, y0, y1], color) in &visible {
                if x < *x0 || x >= *x1 || y < *y0 || y >= *y1 {
                    continue;
                }
                let hit = match &p.shape {
                    Shape::Box(b) => ray_box(&origin, &dir, b),
                    Shape::Sphere(s) => ray_sphere(&origin, &dir, s),
                };
                if let Some(hit) = hit {
                    if best.as_ref().is_none_or(|(b, _)| hit.t < b.t) {
                        best = Some((hit, *color));
                    }
                }
            }
            if let Some((hit, color)) = best {
                let shade = (AMBIENT + (1.0 - AMBIENT) * hit.normal.dot(&light).max(0.0)) * gain;
                let i = 3 * (y as usize * w as usize + x as usize);
                for c in 0..3 {
                    img.pixels[i + c] = (color[c] as f64 * shade).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    img
}

/// Per-camera frames and world poses for every sample of a planned episode.
pub struct RenderedEpisode {
    pub cameras: Vec<RenderedCamera>,
}

pub struct RenderedCamera {
    pub name: String,
    pub intrinsics: Intrinsics,
    pub poses: Vec<Pose>,
    pub frames: Vec<Image>,
}

/// Renders every sample of `plan` from every camera of `scene`.
pub fn render_episode(scene: &SceneSample, plan: &PlanResult) -> RenderedEpisode {
    let n = plan.len();
    let mut cameras: Vec<RenderedCamera> = scene
        .cameras
        .iter()
        .map(|c| RenderedCamera {
            name: c.name.clone(),
            intrinsics: c.intrinsics.clone(),
            poses: Vec::with_capacity(n),
            frames: Vec::with_capacity(n),
        })
        .collect();
    for k in 0..n {
        let state = scene_at(plan, &scene.state, k);
        let snap = Snapshot::of(&state);
        for (rig, out) in scene.cameras.iter().zip(&mut cameras) {
            let pose = rig.world_pose(&state);
            out.frames.push(render_frame(&snap, &pose, &rig.intrinsics, &scene.lighting));
            out.poses.push(pose);
        }
    }
    RenderedEpisode { cameras }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion as UnitQuat;

    fn intr(w: u32, h: u32, f: f64) -> Intrinsics {
        Intrinsics {
            width: w,
            height: h,
            focal: f,
            extras: Default::default(),
        }
    }

    fn light() -> Lighting {
        Lighting {
            env_map_id: 3,
            intensity: 5000.0,
            rotation_deg: 30.0,
        }
    }

    #[test]
    fn empty_scene_is_uniform_background() {
        let img = render_frame(&Snapshot::default(), &Pose::identity(), &intr(16, 12, 10.0), &light());
        let bg = background(&light());
        assert!(img.pixels.chunks(3).all(|p| p == bg));
        assert_eq!(img.pixels.len(), 16 * 12 * 3);
    }

    #[test]
    fn sphere_on_axis_is_centered() {
        let snap = Snapshot {
            primitives: vec![Primitive {
                key: "ball".into(),
                shape: Shape::Sphere(Sphere::new(Vec3::new(0.0, 0.0, -2.0), 0.3)),
            }],
        };
        let img = render_frame(&snap, &Pose::identity(), &intr(40, 30, 30.0), &light());
        let bg = background(&light());
        let covered: Vec<(u32, u32)> = (0..30)
            .flat_map(|y| (0..40).map(move |x| (x, y)))
            .filter(|&(x, y)| img.pixel(x, y) != bg)
            .collect();
        assert!(!covered.is_empty());
        let n = covered.len() as f64;
        let mx = covered.iter().map(|p| p.0 as f64 + 0.5).sum::<f64>() / n;
        let my = covered.iter().map(|p| p.1 as f64 + 0.5).sum::<f64>() / n;
        assert!((mx - 20.0).abs() < 1e-9 && (my - 15.0).abs() < 1e-9, "centroid ({mx}, {my})");
    }

    #[test]
    fn nearer_primitive_occludes() {
        let far = Primitive {
            key: "far".into(),
            shape: Shape::Box(Aabb::new(Vec3::new(-1.0, -1.0, -5.0), Vec3::new(1.0, 1.0, -4.0))),
        };
        let near = Primitive {
            key: "near".into(),
            shape: Shape::Sphere(Sphere::new(Vec3::new(0.0, 0.0, -2.0), 0.2)),
        };
        let cam = Pose::identity();
        let a = render_frame(&Snapshot { primitives: vec![far.clone(), near.clone()] }, &cam, &intr(20, 20, 20.0), &light());
        let b = render_frame(&Snapshot { primitives: vec![near, far] }, &cam, &intr(20, 20, 20.0), &light());
        assert_eq!(a, b);
        let only_near = render_frame(
            &Snapshot {
                primitives: vec![Primitive {
                    key: "near".into(),
                    shape: Shape::Sphere(Sphere::new(Vec3::new(0.0, 0.0, -2.0), 0.2)),
                }],
            },
            &cam,
            &intr(20, 20, 20.0),
            &light(),
        );
        assert_eq!(a.pixel(10, 10), only_near.pixel(10, 10));
    }

    #[test]
    fn culling_matches_brute_force() {
        let prims: Vec<Primitive> = (0..12)
            .map(|i| {
                let t = i as f64 * 0.5;
                let c = Vec3::new(t.sin() * 0.8, t.cos() * 0.5, -1.5 - 0.2 * i as f64);
                Primitive {
                    key: format!("p{i}"),
                    shape: if i % 2 == 0 {
                        Shape::Sphere(Sphere::new(c, 0.15))
                    } else {
                        Shape::Box(Aabb::new(c - Vec3::repeat(0.1), c + Vec3::repeat(0.12)))
                    },
                }
            })
            .collect();
        let cam = Pose::new(Vec3::new(0.1, -0.05, 0.2), UnitQuat::from_euler_angles(0.1, -0.05, 0.2));
        let i = intr(32, 24, 25.0);
        let img = render_frame(&Snapshot { primitives: prims.clone() }, &cam, &i, &light());
        // One primitive at a time: any pixel a primitive colors alone must be
        // inside its culling rectangle.
        let bg = background(&light());
        for p in &prims {
            let solo = render_frame(&Snapshot { primitives: vec![p.clone()] }, &cam, &i, &light());
            let rect = screen_rect(&bounding_sphere(&p.shape), &cam.inverse(), 25.0, 16.0, 12.0, 32, 24);
            for y in 0..24 {
                for x in 0..32 {
                    if solo.pixel(x, y) != bg {
                        let [x0, x1, y0, y1] = rect.expect("visible primitive has a rect");
                        assert!(x >= x0 && x < x1 && y >= y0 && y < y1);
                    }
                }
            }
        }
        assert_ne!(img, Image::filled(32, 24, bg));
    }

    #[test]
    fn png_round_trip() {
        let snap = Snapshot {
            primitives: vec![Primitive {
                key: "ball".into(),
                shape: Shape::Sphere(Sphere::new(Vec3::new(0.0, 0.0, -2.0), 0.5)),
            }],
        };
        let img = render_frame(&snap, &Pose::identity(), &intr(24, 18, 20.0), &light());
        let bytes = img.encode_png();
        assert_eq!(Image::decode_png(&bytes).unwrap(), img);
        assert_eq!(bytes, img.encode_png());
    }
}
