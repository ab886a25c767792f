//! Domain-randomization samplers and per-episode random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::config::{CameraSpec, EnvMapSpec, RegionSpec};
use crate::geometry::{axis_angle, quat_from_wxyz, yaw_deg, Pose, Vec3};

/// Number of environment maps in the lighting library.
pub const LIBRARY_SIZE: u32 = 174;

pub type EpisodeRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RandomizeError {
    #[error("dimension mismatch: mean has {mean}, std has {std}, limits have {limits}")]
    DimensionMismatch { mean: usize, std: usize, limits: usize },
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Generator for `(root_seed, episode, tag)`.
///
/// The key comes from the root seed and the ChaCha stream id from the episode
/// index and tag, so every pair gets its own independent sequence.
pub fn substream(root_seed: u64, episode: u64, tag: &str) -> EpisodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(splitmix64(splitmix64(episode) ^ fnv1a(tag)));
    rng
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    rng.random_range(lo..=hi).clamp(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub env_map_id: u32,
    pub intensity: f64,
    pub rotation_deg: f64,
}

/// Pose relative to the region's target: uniform translation in the box and a
/// uniform yaw.
pub fn sample_region_pose<R: Rng + ?Sized>(spec: &RegionSpec, rng: &mut R) -> Pose {
    let [lo, hi] = spec.pos_range;
    let t = Vec3::new(
        uniform(rng, lo[0], hi[0]),
        uniform(rng, lo[1], hi[1]),
        uniform(rng, lo[2], hi[2]),
    );
    let yaw = uniform(rng, spec.yaw_range[0], spec.yaw_range[1]);
    Pose::new(t, yaw_deg(yaw))
}

/// The camera's pose in its parent frame as written, with a normalized rotation.
pub fn nominal_camera_pose(spec: &CameraSpec) -> Pose {
    let rotation = quat_from_wxyz(spec.orientation).unwrap_or_default();
    Pose::new(Vec3::from(spec.translation), rotation)
}

/// Nominal pose offset by a translation uniform in the box of half-width
/// `max_translation_noise` and a rotation about a uniform axis by an angle
/// uniform in `[0, max_orientation_noise]` degrees.
pub fn perturb_camera<R: Rng + ?Sized>(spec: &CameraSpec, rng: &mut R) -> Pose {
    let nominal = nominal_camera_pose(spec);
    if !spec.apply_randomization {
        return nominal;
    }
    let m = spec.max_translation_noise;
    let dt = Vec3::new(uniform(rng, -m, m), uniform(rng, -m, m), uniform(rng, -m, m));
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = uniform(rng, 0.0, spec.max_orientation_noise).to_radians();
    let dr = axis_angle(&Vec3::from(axis), angle);
    Pose::new(nominal.translation + dt, dr * nominal.rotation)
}

pub fn sample_env_map<R: Rng + ?Sized>(spec: &EnvMapSpec, library_size: u32, rng: &mut R) -> Lighting {
    let [ilo, ihi] = spec.intensity_range;
    let [rlo, rhi] = spec.rotation_range;
    if !spec.apply_randomization {
        return Lighting {
            env_map_id: 0,
            intensity: 0.5 * (ilo + ihi),
            rotation_deg: rlo,
        };
    }
    Lighting {
        env_map_id: rng.random_range(0..library_size.max(1)),
        intensity: uniform(rng, ilo, ihi),
        rotation_deg: uniform(rng, rlo, rhi),
    }
}

/// Independent normal draw per joint, clamped to the joint limits.
pub fn sample_home_config<R: Rng + ?Sized>(
    mean: &[f64],
    std: &[f64],
    limits: &[[f64; 2]],
    rng: &mut R,
) -> Result<Vec<f64>, RandomizeError> {
    if mean.len() != std.len() || mean.len() != limits.len() {
        return Err(RandomizeError::DimensionMismatch {
            mean: mean.len(),
            std: std.len(),
            limits: limits.len(),
        });
    }
    Ok(mean
        .iter()
        .zip(std)
        .zip(limits)
        .map(|((m, s), l)| {
            let z: f64 = StandardNormal.sample(rng);
            (m + s * z).clamp(l[0], l[1])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CameraParams, A_ON_B_SAMPLER};

    fn region(lo: [f64; 3], hi: [f64; 3], yaw: [f64; 2]) -> RegionSpec {
        RegionSpec {
            object: "o".into(),
            target: "table".into(),
            random_type: A_ON_B_SAMPLER.into(),
            pos_range: [lo, hi],
            yaw_range: yaw,
            extras: Default::default(),
            random_config_extras: Default::default(),
        }
    }

    fn camera(t: f64, o: f64) -> CameraSpec {
        CameraSpec {
            name: "c".into(),
            translation: [0.1, 0.2, 0.3],
            orientation: [0.0, 0.0, 0.965, 0.259],
            parent: "table".into(),
            params: CameraParams::Reference("${x}".into()),
            apply_randomization: true,
            max_translation_noise: t,
            max_orientation_noise: o,
            extras: Default::default(),
        }
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| substream(7, 3, "x").random()).collect();
        let mut r = substream(7, 3, "x");
        let b: Vec<u64> = (0..4).map(|_| r.random()).collect();
        assert_eq!(a[0], b[0]);
        let mut other = substream(7, 3, "y");
        let mut ep = substream(7, 4, "x");
        let first = substream(7, 3, "x").random::<u64>();
        assert_ne!(other.random::<u64>(), first);
        assert_ne!(ep.random::<u64>(), first);
    }

    #[test]
    fn degenerate_region_is_exact() {
        let mut rng = substream(1, 0, "r");
        let p = sample_region_pose(&region([0.1, -0.2, 0.005], [0.1, -0.2, 0.005], [0.0, 0.0]), &mut rng);
        assert_eq!(p.translation, Vec3::new(0.1, -0.2, 0.005));
        assert_eq!(p.rotation.angle(), 0.0);
    }

    #[test]
    fn zero_noise_camera_is_nominal() {
        let mut rng = substream(1, 0, "c");
        let spec = camera(0.0, 0.0);
        assert_eq!(perturb_camera(&spec, &mut rng), nominal_camera_pose(&spec));
    }

    #[test]
    fn disabled_env_map_is_canonical() {
        let spec = EnvMapSpec {
            apply_randomization: false,
            intensity_range: [4000.0, 7000.0],
            rotation_range: [10.0, 180.0],
            ..Default::default()
        };
        let l = sample_env_map(&spec, LIBRARY_SIZE, &mut substream(0, 0, "e"));
        assert_eq!((l.env_map_id, l.intensity, l.rotation_deg), (0, 5500.0, 10.0));
    }

    #[test]
    fn zero_std_home_is_mean() {
        let mean = [0.1, -0.2, 0.3];
        let q = sample_home_config(&mean, &[0.0; 3], &[[-1.0, 1.0]; 3], &mut substream(0, 0, "h")).unwrap();
        assert_eq!(q, mean.to_vec());
        assert!(sample_home_config(&mean, &[0.0; 2], &[[-1.0, 1.0]; 3], &mut substream(0, 0, "h")).is_err());
    }
}
