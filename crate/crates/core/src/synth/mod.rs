//! Synthetic multi-video hand corpus.
//!
//! Poses come from a planar kinematic chain (wrist, then four joints per
//! finger in the usual 21-joint order) with out-of-plane flexion that
//! foreshortens finger segments and feeds a per-joint depth channel. Each
//! video is a random walk in parameter space; `coherence` controls how far
//! consecutive frames move.

mod archive;
mod render;

pub use archive::{read_archive, write_archive, ImageArchive, IMAGE_MAGIC, IMAGE_VERSION};
pub use render::{render, Image, DEFAULT_IMAGE_SIZE};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Hand, KeypointRecord, Keypoints, RecordSet, NUM_JOINTS};

pub const NUM_FINGERS: usize = 5;

/// `(parent, child)` joint pairs drawn by the renderer.
pub const BONES: [(usize, usize); 20] = {
    let mut bones = [(0, 0); 20];
    let mut f = 0;
    while f < NUM_FINGERS {
        let base = 1 + 4 * f;
        bones[4 * f] = (0, base);
        bones[4 * f + 1] = (base, base + 1);
        bones[4 * f + 2] = (base + 1, base + 2);
        bones[4 * f + 3] = (base + 2, base + 3);
        f += 1;
    }
    bones
};

// Thumb, index, middle, ring, pinky.
const FINGER_ANGLE: [f64; NUM_FINGERS] = [-0.95, -0.28, 0.0, 0.24, 0.48];
const PALM_LENGTH: [f64; NUM_FINGERS] = [0.06, 0.12, 0.125, 0.115, 0.105];
const SEGMENT_LENGTH: [[f64; 3]; NUM_FINGERS] = [
    [0.05, 0.04, 0.035],
    [0.055, 0.035, 0.03],
    [0.06, 0.04, 0.03],
    [0.055, 0.035, 0.03],
    [0.045, 0.03, 0.025],
];
/// Share of the finger's flexion accumulated at each successive joint.
const FLEX_SHARE: [f64; 3] = [1.0, 2.0, 2.7];
/// In-plane curl per radian of flexion (the thumb folds across the palm).
const CURL: [f64; NUM_FINGERS] = [0.6, 0.0, 0.0, 0.0, 0.0];
const NOISE_SEED_SALT: u64 = 0x6a09_e667_f3bc_c908;
/// The palm fans out less than the fingers.
const PALM_FAN: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPoseParams {
    /// Per-finger flexion, radians.
    pub flexion: [f64; NUM_FINGERS],
    /// Multiplier offset on the finger fan angles.
    pub spread: f64,
    /// In-plane rotation about the wrist, radians, clockwise on screen.
    pub rotation: f64,
    pub wrist: [f64; 2],
}

impl SynthPoseParams {
    pub fn canonical() -> Self {
        Self {
            flexion: [0.0; NUM_FINGERS],
            spread: 0.0,
            rotation: 0.0,
            wrist: [0.5, 0.7],
        }
    }

    const DIMS: usize = NUM_FINGERS + 4;

    fn to_vec(self) -> [f64; Self::DIMS] {
        let mut v = [0.0; Self::DIMS];
        v[..NUM_FINGERS].copy_from_slice(&self.flexion);
        v[5] = self.spread;
        v[6] = self.rotation;
        v[7] = self.wrist[0];
        v[8] = self.wrist[1];
        v
    }

    fn from_vec(v: &[f64; Self::DIMS]) -> Self {
        let mut flexion = [0.0; NUM_FINGERS];
        flexion.copy_from_slice(&v[..NUM_FINGERS]);
        Self {
            flexion,
            spread: v[5],
            rotation: v[6],
            wrist: [v[7], v[8]],
        }
    }

    /// Parameter vector scaled so every coordinate spans `[0, 1]` over `bounds`.
    pub fn normalized(&self, bounds: &ArticulationBounds) -> [f64; Self::DIMS] {
        let (lo, hi) = bounds.ranges();
        let mut v = self.to_vec();
        for d in 0..Self::DIMS {
            v[d] = (v[d] - lo[d]) / (hi[d] - lo[d]);
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArticulationBounds {
    pub flexion: (f64, f64),
    pub spread: (f64, f64),
    pub rotation: (f64, f64),
    pub wrist: (f64, f64),
}

impl Default for ArticulationBounds {
    fn default() -> Self {
        Self {
            flexion: (0.0, 1.0),
            spread: (-0.3, 0.5),
            rotation: (-PI, PI),
            wrist: (0.3, 0.7),
        }
    }
}

impl ArticulationBounds {
    fn ranges(&self) -> ([f64; SynthPoseParams::DIMS], [f64; SynthPoseParams::DIMS]) {
        let mut lo = [0.0; SynthPoseParams::DIMS];
        let mut hi = [0.0; SynthPoseParams::DIMS];
        let per = [
            self.flexion,
            self.flexion,
            self.flexion,
            self.flexion,
            self.flexion,
            self.spread,
            self.rotation,
            self.wrist,
            self.wrist,
        ];
        for (d, (a, b)) in per.into_iter().enumerate() {
            lo[d] = a;
            hi[d] = b;
        }
        (lo, hi)
    }

    pub fn contains(&self, p: &SynthPoseParams) -> bool {
        let (lo, hi) = self.ranges();
        p.to_vec()
            .iter()
            .enumerate()
            .all(|(d, v)| v.is_finite() && *v >= lo[d] && *v <= hi[d])
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> SynthPoseParams {
        let (lo, hi) = self.ranges();
        let mut v = [0.0; SynthPoseParams::DIMS];
        for d in 0..SynthPoseParams::DIMS {
            v[d] = rng.random_range(lo[d]..=hi[d]);
        }
        SynthPoseParams::from_vec(&v)
    }
}

/// 2D keypoints plus per-joint depth (positive = away from the camera).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthPose {
    pub keypoints: Keypoints,
    pub depth: [f64; NUM_JOINTS],
}

fn direction(angle: f64) -> [f64; 2] {
    // angle 0 points up the image; y grows downward
    [angle.sin(), -angle.cos()]
}

/// Forward kinematics, without bounds checking.
pub fn pose_unchecked(p: &SynthPoseParams) -> SynthPose {
    let mut keypoints = [[0.0; 2]; NUM_JOINTS];
    let mut depth = [0.0; NUM_JOINTS];
    keypoints[0] = p.wrist;
    for f in 0..NUM_FINGERS {
        let fan = FINGER_ANGLE[f] * (1.0 + p.spread);
        let palm = direction(p.rotation + PALM_FAN * fan);
        let base = 1 + 4 * f;
        let mut pos = [
            p.wrist[0] + PALM_LENGTH[f] * palm[0],
            p.wrist[1] + PALM_LENGTH[f] * palm[1],
        ];
        let mut z = 0.0;
        keypoints[base] = pos;
        for s in 0..3 {
            let phi = p.flexion[f] * FLEX_SHARE[s];
            let dir = direction(p.rotation + fan + CURL[f] * phi);
            let len = SEGMENT_LENGTH[f][s];
            pos = [pos[0] + len * phi.cos() * dir[0], pos[1] + len * phi.cos() * dir[1]];
            z += len * phi.sin();
            keypoints[base + 1 + s] = pos;
            depth[base + 1 + s] = z;
        }
    }
    SynthPose { keypoints, depth }
}

pub fn generate_pose(params: &SynthPoseParams, bounds: &ArticulationBounds) -> Result<SynthPose> {
    if !bounds.contains(params) {
        return Err(Error::param(format!("pose parameters out of bounds: {params:?}")));
    }
    Ok(pose_unchecked(params))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub videos: usize,
    pub frames: usize,
    /// 1 freezes every video on its first pose; 0 takes full-size steps.
    pub coherence: f64,
    pub seed: u64,
    pub image_size: usize,
    /// Std-dev of Gaussian jitter added to stored keypoints (not renders).
    pub noise: f64,
    /// Per-frame random-walk step, as a fraction of each parameter's range.
    pub step_scale: f64,
    /// Odd-numbered videos show a left hand (mirrored keypoints and render).
    pub left_hands: bool,
    pub bounds: ArticulationBounds,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            videos: 50,
            frames: 200,
            coherence: 0.8,
            seed: 0,
            image_size: DEFAULT_IMAGE_SIZE,
            noise: 0.0,
            step_scale: 0.25,
            left_hands: true,
            bounds: ArticulationBounds::default(),
        }
    }
}

pub struct Corpus {
    pub records: RecordSet,
    pub images: ImageArchive,
    pub params: Vec<SynthPoseParams>,
    /// Noise-free poses with depth, in the same frame as the records.
    pub poses: Vec<SynthPose>,
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let mut t = (v - lo).rem_euclid(2.0 * span);
    if t > span {
        t = 2.0 * span - t;
    }
    lo + t
}

pub fn video_id(v: usize) -> String {
    format!("vid{v:04}")
}

/// Per-video random walks, rendered frame by frame.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.videos < 2 {
        return Err(Error::param("a corpus needs at least two videos"));
    }
    if !(0.0..=1.0).contains(&cfg.coherence) {
        return Err(Error::param(format!("coherence {} outside [0, 1]", cfg.coherence)));
    }
    if cfg.noise < 0.0 || !cfg.noise.is_finite() {
        return Err(Error::param("noise must be a non-negative real"));
    }
    let (lo, hi) = cfg.bounds.ranges();
    let step = 1.0 - cfg.coherence;

    let walks: Vec<Vec<(SynthPoseParams, f64, [[f64; 2]; NUM_JOINTS])>> = (0..cfg.videos)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(v as u64);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_SEED_SALT);
            noise_rng.set_stream(v as u64);
            let mut cur = cfg.bounds.sample(&mut rng).to_vec();
            let mut frames = Vec::with_capacity(cfg.frames);
            for f in 0..cfg.frames {
                if f > 0 && step > 0.0 {
                    for d in 0..SynthPoseParams::DIMS {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        cur[d] = reflect(cur[d] + step * cfg.step_scale * (hi[d] - lo[d]) * z, lo[d], hi[d]);
                    }
                }
                let score = rng.random_range(0.6..=1.0);
                let mut jitter = [[0.0; 2]; NUM_JOINTS];
                if cfg.noise > 0.0 {
                    let n = Normal::new(0.0, cfg.noise).expect("valid sigma");
                    for j in jitter.iter_mut() {
                        *j = [n.sample(&mut noise_rng), n.sample(&mut noise_rng)];
                    }
                }
                frames.push((SynthPoseParams::from_vec(&cur), score, jitter));
            }
            frames
        })
        .collect();

    let flat: Vec<(usize, usize, SynthPoseParams, f64, [[f64; 2]; NUM_JOINTS])> = walks
        .into_iter()
        .enumerate()
        .flat_map(|(v, frames)| {
            frames
                .into_iter()
                .enumerate()
                .map(move |(f, (p, s, j))| (v, f, p, s, j))
        })
        .collect();

    let rendered: Vec<(KeypointRecord, SynthPose, Image)> = flat
        .par_iter()
        .map(|(v, f, params, score, jitter)| {
            let mut pose = pose_unchecked(params);
            let hand = if cfg.left_hands && v % 2 == 1 {
                for k in pose.keypoints.iter_mut() {
                    k[0] = 1.0 - k[0];
                }
                Hand::Left
            } else {
                Hand::Right
            };
            let image = render(&pose.keypoints, cfg.image_size);
            let mut keypoints = pose.keypoints;
            for (k, j) in keypoints.iter_mut().zip(jitter) {
                k[0] = (k[0] + j[0]).clamp(0.0, 1.0);
                k[1] = (k[1] + j[1]).clamp(0.0, 1.0);
            }
            let rec = KeypointRecord {
                video_id: video_id(*v),
                frame_id: *f as u64,
                hand,
                keypoints,
                detection_score: *score,
            };
            (rec, pose, image)
        })
        .collect();

    let mut records = Vec::with_capacity(rendered.len());
    let mut poses = Vec::with_capacity(rendered.len());
    let mut images = ImageArchive::new(cfg.image_size, cfg.image_size);
    for (rec, pose, image) in rendered {
        records.push(rec);
        poses.push(pose);
        images.push(&image)?;
    }
    Ok(Corpus {
        records: RecordSet::new(records)?,
        images,
        params: flat.iter().map(|t| t.2).collect(),
        poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bones_cover_every_joint() {
        let mut seen = [false; NUM_JOINTS];
        for (a, b) in BONES {
            seen[a] = true;
            seen[b] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn canonical_pose_is_in_unit_square() {
        let pose = generate_pose(&SynthPoseParams::canonical(), &ArticulationBounds::default()).unwrap();
        assert!(pose.keypoints.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert!(pose.depth.iter().all(|&d| d == 0.0));
        // middle fingertip straight above the wrist
        assert!((pose.keypoints[12][0] - 0.5).abs() < 1e-12);
        assert!(pose.keypoints[12][1] < 0.5);
    }

    #[test]
    fn rotation_about_wrist() {
        let bounds = ArticulationBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut p = bounds.sample(&mut rng);
            p.rotation = 0.0;
            let base = generate_pose(&p, &bounds).unwrap();
            p.rotation = PI;
            let rotated = generate_pose(&p, &bounds).unwrap();
            let [wx, wy] = p.wrist;
            for (a, b) in base.keypoints.iter().zip(&rotated.keypoints) {
                // rotating by pi about the wrist
                let expect = [2.0 * wx - a[0], 2.0 * wy - a[1]];
                assert!((expect[0] - b[0]).abs() < 1e-9 && (expect[1] - b[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn flexion_is_local_to_its_finger() {
        let bounds = ArticulationBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for f in 0..NUM_FINGERS {
            let p = bounds.sample(&mut rng);
            let mut q = p;
            q.flexion[f] = (q.flexion[f] + 1e-3).min(bounds.flexion.1);
            if q.flexion[f] == p.flexion[f] {
                q.flexion[f] -= 1e-3;
            }
            let a = generate_pose(&p, &bounds).unwrap();
            let b = generate_pose(&q, &bounds).unwrap();
            for j in 0..NUM_JOINTS {
                let own = (1 + 4 * f..=4 + 4 * f).contains(&j);
                if !own {
                    assert_eq!(a.keypoints[j], b.keypoints[j], "finger {f} moved joint {j}");
                }
            }
            assert_ne!(a.keypoints[4 + 4 * f], b.keypoints[4 + 4 * f]);
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let mut p = SynthPoseParams::canonical();
        p.flexion[2] = 5.0;
        assert!(generate_pose(&p, &ArticulationBounds::default()).is_err());
        p = SynthPoseParams::canonical();
        p.wrist = [0.1, 0.5];
        assert!(generate_pose(&p, &ArticulationBounds::default()).is_err());
    }

    #[test]
    fn sampled_poses_stay_in_crop() {
        let bounds = ArticulationBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let pose = pose_unchecked(&bounds.sample(&mut rng));
            assert!(pose.keypoints.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    fn small(coherence: f64, seed: u64) -> CorpusConfig {
        CorpusConfig {
            videos: 3,
            frames: 6,
            coherence,
            seed,
            image_size: 16,
            ..Default::default()
        }
    }

    #[test]
    fn full_coherence_freezes_videos() {
        let c = generate_corpus(&small(1.0, 4)).unwrap();
        for rows in c.records.videos().values() {
            let first = &c.records.records()[rows[0]].keypoints;
            for &r in rows {
                assert_eq!(&c.records.records()[r].keypoints, first);
                assert_eq!(c.images.image(r), c.images.image(rows[0]));
            }
        }
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let cfg = small(0.5, 9);
        let a = generate_corpus(&cfg).unwrap();
        assert_eq!(a.records.len(), 18);
        assert_eq!(a.records.num_videos(), 3);
        assert_eq!(a.images.len(), 18);
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.images, b.images);
        let c = generate_corpus(&small(0.5, 10)).unwrap();
        assert_ne!(a.records, c.records);
        assert_eq!(a.records.count_hand(Hand::Left), 6);
    }

    #[test]
    fn noise_only_touches_records() {
        let clean = generate_corpus(&small(0.5, 5)).unwrap();
        let noisy = generate_corpus(&CorpusConfig {
            noise: 0.01,
            ..small(0.5, 5)
        })
        .unwrap();
        assert_eq!(clean.poses, noisy.poses);
        assert_ne!(clean.records, noisy.records);
        assert_eq!(clean.images, noisy.images);
    }

    #[test]
    fn needs_two_videos() {
        assert!(generate_corpus(&CorpusConfig {
            videos: 1,
            ..small(0.5, 0)
        })
        .is_err());
    }

    #[test]
    fn reflect_stays_inside() {
        for v in [-3.5, -0.2, 0.0, 0.4, 1.0, 1.7, 9.9] {
            let r = reflect(v, 0.0, 1.0);
            assert!((0.0..=1.0).contains(&r));
        }
        assert_eq!(reflect(1.25, 0.0, 1.0), 0.75);
    }
}
