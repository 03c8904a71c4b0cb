use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

/// Value reported by fields that contain no surface at all.
pub const FAR: f64 = 1e9;

/// Composable signed distance field. Negative inside; `value <= 0` counts as
/// occupied.
///
/// The serde representation is the JSON scene format used by the CLI, e.g.
///
/// ```json
/// { "type": "displace",
///   "base": { "type": "sphere", "radius": 0.4 },
///   "amplitude": 0.03, "frequency": 8.0, "seed": 7 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScalarField {
    /// No surface anywhere.
    Empty,
    Constant {
        value: f64,
    },
    Sphere {
        #[serde(default)]
        center: DVec3,
        radius: f64,
    },
    #[serde(rename = "box")]
    Cuboid {
        #[serde(default)]
        center: DVec3,
        half_extents: DVec3,
    },
    /// Torus around the y axis through `center`.
    Torus {
        #[serde(default)]
        center: DVec3,
        major_radius: f64,
        minor_radius: f64,
    },
    Capsule {
        a: DVec3,
        b: DVec3,
        radius: f64,
    },
    /// Half-space `dot(normal, p) <= offset` (normal is normalized on evaluation).
    Plane {
        normal: DVec3,
        #[serde(default)]
        offset: f64,
    },
    Union {
        children: Vec<ScalarField>,
    },
    SmoothUnion {
        a: Box<ScalarField>,
        b: Box<ScalarField>,
        k: f64,
    },
    Intersect {
        a: Box<ScalarField>,
        b: Box<ScalarField>,
    },
    /// `base` with `cut` removed.
    Subtract {
        base: Box<ScalarField>,
        cut: Box<ScalarField>,
    },
    /// `base(p) + amplitude * value_noise(frequency * p, seed)`.
    Displace {
        base: Box<ScalarField>,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl ScalarField {
    pub fn sphere(radius: f64) -> Self {
        Self::Sphere {
            center: DVec3::ZERO,
            radius,
        }
    }

    pub fn cuboid(half_extents: DVec3) -> Self {
        Self::Cuboid {
            center: DVec3::ZERO,
            half_extents,
        }
    }

    pub fn displaced(self, amplitude: f64, frequency: f64, seed: u64) -> Self {
        Self::Displace {
            base: Box::new(self),
            amplitude,
            frequency,
            seed,
        }
    }

    /// Half-space of points with `dot(normal, p) >= offset`.
    pub fn half_space(normal: DVec3, offset: f64) -> Self {
        Self::Plane {
            normal: -normal,
            offset: -offset,
        }
    }

    pub fn eval(&self, p: DVec3) -> f64 {
        match self {
            Self::Empty => FAR,
            Self::Constant { value } => *value,
            Self::Sphere { center, radius } => (p - *center).length() - radius,
            Self::Cuboid {
                center,
                half_extents,
            } => {
                let q = (p - *center).abs() - *half_extents;
                q.max(DVec3::ZERO).length() + q.max_element().min(0.0)
            }
            Self::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                let d = p - *center;
                let q = DVec2::new(DVec2::new(d.x, d.z).length() - major_radius, d.y);
                q.length() - minor_radius
            }
            Self::Capsule { a, b, radius } => {
                let pa = p - *a;
                let ba = *b - *a;
                let denom = ba.length_squared();
                let h = if denom > 0.0 {
                    (pa.dot(ba) / denom).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (pa - ba * h).length() - radius
            }
            Self::Plane { normal, offset } => normal.normalize_or_zero().dot(p) - offset,
            Self::Union { children } => children.iter().map(|c| c.eval(p)).fold(FAR, f64::min),
            Self::SmoothUnion { a, b, k } => {
                let (da, db) = (a.eval(p), b.eval(p));
                if *k <= 0.0 {
                    return da.min(db);
                }
                let h = (0.5 + 0.5 * (db - da) / k).clamp(0.0, 1.0);
                db + (da - db) * h - k * h * (1.0 - h)
            }
            Self::Intersect { a, b } => a.eval(p).max(b.eval(p)),
            Self::Subtract { base, cut } => base.eval(p).max(-cut.eval(p)),
            Self::Displace {
                base,
                amplitude,
                frequency,
                seed,
            } => base.eval(p) + amplitude * value_noise(p * *frequency, *seed),
        }
    }

    /// `true` when the point is occupied (`value <= 0`).
    pub fn contains(&self, p: DVec3) -> bool {
        self.eval(p) <= 0.0
    }
}

pub fn occupancy_at(field: &ScalarField, point: DVec3) -> bool {
    field.contains(point)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pseudo-random lattice value in `[-1, 1)` for integer cell `(x, y, z)`.
pub fn lattice_value(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ x as u64);
    h = splitmix64(h ^ y as u64);
    h = splitmix64(h ^ z as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Seeded value noise in `[-1, 1]`.
///
/// Lattice values come from [`lattice_value`] at the integer corners of the
/// cell containing `p`; they are blended trilinearly with the quintic fade
/// `6t^5 - 15t^4 + 10t^3`, which makes the noise C2 across cell faces.
pub fn value_noise(p: DVec3, seed: u64) -> f64 {
    let base = p.floor();
    let f = p - base;
    let (x0, y0, z0) = (base.x as i64, base.y as i64, base.z as i64);
    let (u, v, w) = (fade(f.x), fade(f.y), fade(f.z));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c = |dx: i64, dy: i64, dz: i64| lattice_value(x0 + dx, y0 + dy, z0 + dz, seed);
    let x00 = lerp(c(0, 0, 0), c(1, 0, 0), u);
    let x10 = lerp(c(0, 1, 0), c(1, 1, 0), u);
    let x01 = lerp(c(0, 0, 1), c(1, 0, 1), u);
    let x11 = lerp(c(0, 1, 1), c(1, 1, 1), u);
    lerp(lerp(x00, x10, v), lerp(x01, x11, v), w)
}
