//! Synthetic multi-modal demonstrations with known skill and trigger labels.
//!
//! Each demonstration mounts a cable into `clips_per_demo` clips. Every clip
//! cycles idle, grasped, under linear force, under torque and released, and
//! the demonstration ends idle. Signals are generated per frame on the
//! tactile grid and then sampled at each sensor's native rate.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featfuse::{EMBED_DIM, FT_DIM, POSE_DIM};
use crate::recdata::{save_recording, LabelTrack, Rate, Recording, SensorStream, StreamKind};
use crate::wrenchproc::{map_wrench, FrameTransform, Interval, IntervalSet, TriggerClass, Wrench, BASELINE_FRAMES};

pub const SKILL_VOCABULARY: [&str; 5] = ["idle", "grasped", "under_linear_force", "under_torque", "released"];
/// Demonstrations in the default dataset, about 30k frames at default durations.
pub const DEFAULT_DEMOS: usize = 68;
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

pub const TACTILE_STREAM: &str = "tactile";
pub const VISUAL_STREAM: &str = "visual";
pub const FT_STREAM: &str = "ft";
pub const POSE_LEFT_STREAM: &str = "pose_left";
pub const POSE_RIGHT_STREAM: &str = "pose_right";
/// Metadata keys holding [`FrameTransform`] JSON.
pub const META_FT_TRANSFORM: &str = "ft_transform";
pub const META_TCP_LEFT: &str = "tcp_offset_left";
pub const META_TCP_RIGHT: &str = "tcp_offset_right";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Grasped,
    UnderLinearForce,
    UnderTorque,
    Released,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Idle,
        Phase::Grasped,
        Phase::UnderLinearForce,
        Phase::UnderTorque,
        Phase::Released,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Inclusive frame-count range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationRange {
    pub min: usize,
    pub max: usize,
}

impl DurationRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub const fn fixed(n: usize) -> Self {
        Self { min: n, max: n }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.gen_range(self.min..=self.max)
    }

    fn mean(&self) -> f64 {
        (self.min + self.max) as f64 / 2.0
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.min == 0 || self.min > self.max {
            return Err(Error::Config(format!(
                "{what} duration range {}..={} is invalid",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseDurations {
    pub idle: DurationRange,
    pub grasped: DurationRange,
    pub under_linear_force: DurationRange,
    pub under_torque: DurationRange,
    pub released: DurationRange,
}

impl PhaseDurations {
    pub fn get(&self, phase: Phase) -> DurationRange {
        match phase {
            Phase::Idle => self.idle,
            Phase::Grasped => self.grasped,
            Phase::UnderLinearForce => self.under_linear_force,
            Phase::UnderTorque => self.under_torque,
            Phase::Released => self.released,
        }
    }

    /// Every range pinned to its minimum.
    pub fn minima(&self) -> Self {
        let f = |r: DurationRange| DurationRange::fixed(r.min);
        Self {
            idle: f(self.idle),
            grasped: f(self.grasped),
            under_linear_force: f(self.under_linear_force),
            under_torque: f(self.under_torque),
            released: f(self.released),
        }
    }
}

impl Default for PhaseDurations {
    fn default() -> Self {
        Self {
            idle: DurationRange::new(20, 60),
            grasped: DurationRange::new(15, 40),
            under_linear_force: DurationRange::new(20, 50),
            under_torque: DurationRange::new(15, 40),
            released: DurationRange::new(2, 5),
        }
    }
}

/// Standard deviations of the additive Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub tactile: f64,
    pub visual: f64,
    /// Newtons and newton-metres.
    pub ft: f64,
    /// Metres.
    pub pose: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        Self {
            tactile: 1.0,
            visual: 1.0,
            ft: 1.0,
            pose: 0.003,
        }
    }
}

/// How strongly each modality reveals the phase. Separations are distances
/// between phase means in units of that modality's noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Informativeness {
    pub tactile_separation: f64,
    pub visual_separation: f64,
    pub ft_separation: f64,
    /// Stationary deviation of the visual random walk, in visual noise units.
    pub visual_walk: f64,
    /// Lag-one correlation of the visual random walk.
    pub visual_walk_corr: f64,
    /// When false the camera cannot tell linear force from torque.
    pub visual_sees_force: bool,
}

impl Default for Informativeness {
    fn default() -> Self {
        Self {
            tactile_separation: 2.0,
            visual_separation: 0.5,
            ft_separation: 2.0,
            visual_walk: 1.0,
            visual_walk_corr: 0.98,
            visual_sees_force: false,
        }
    }
}

/// Operator trigger spikes injected into the raw F/T stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub enabled: bool,
    /// Spike height in F/T noise units.
    pub amplitude: f64,
    pub pull: DurationRange,
    pub lock: DurationRange,
    pub release: DurationRange,
}

impl Default for TriggerSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            amplitude: 8.0,
            pull: DurationRange::new(2, 4),
            lock: DurationRange::new(2, 4),
            release: DurationRange::new(2, 5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub clips_per_demo: usize,
    pub frame_rate_hz: f64,
    pub ft_rate_hz: f64,
    pub pose_rate_hz: f64,
    pub durations: PhaseDurations,
    pub noise: NoiseScales,
    pub informativeness: Informativeness,
    pub trigger: TriggerSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clips_per_demo: 3,
            frame_rate_hz: 16.67,
            ft_rate_hz: 100.0,
            pose_rate_hz: 60.0,
            durations: PhaseDurations::default(),
            noise: NoiseScales::default(),
            informativeness: Informativeness::default(),
            trigger: TriggerSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips_per_demo == 0 {
            return Err(Error::Config("clips_per_demo must be at least 1".into()));
        }
        for phase in Phase::ALL {
            self.durations.get(phase).check(SKILL_VOCABULARY[phase.index()])?;
        }
        for (name, v) in [
            ("tactile noise", self.noise.tactile),
            ("visual noise", self.noise.visual),
            ("ft noise", self.noise.ft),
            ("pose noise", self.noise.pose),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.informativeness.visual_walk_corr) {
            return Err(Error::Config("visual_walk_corr must lie in [0, 1)".into()));
        }
        let t = &self.trigger;
        if t.enabled {
            t.pull.check("pull")?;
            t.lock.check("lock")?;
            t.release.check("release")?;
            if self.durations.idle.min < BASELINE_FRAMES {
                return Err(Error::Config(format!(
                    "idle phases shorter than {BASELINE_FRAMES} frames would put trigger actions in the F/T baseline"
                )));
            }
            if t.pull.max + t.lock.max > self.durations.grasped.min {
                return Err(Error::Config("pull and lock must fit inside the grasped phase".into()));
            }
            if t.release.max > self.durations.idle.min {
                return Err(Error::Config("release must end before the next grasp".into()));
            }
        }
        Rate::from_hz(self.frame_rate_hz)?;
        Rate::from_hz(self.ft_rate_hz)?;
        Rate::from_hz(self.pose_rate_hz)?;
        Ok(())
    }

    /// Expected frames per demonstration at these duration ranges.
    pub fn mean_frames_per_demo(&self) -> f64 {
        let d = &self.durations;
        let clip: f64 = Phase::ALL.iter().map(|&p| d.get(p).mean()).sum();
        clip * self.clips_per_demo as f64 + d.idle.mean()
    }
}

/// Labels and injected artifacts of one demonstration, on the frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub skill_labels: Vec<usize>,
    pub trigger_labels: Vec<usize>,
    pub artifacts: IntervalSet,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    skill_vocabulary: Vec<String>,
    skill_labels: Vec<usize>,
    trigger_labels: Vec<usize>,
    artifacts: Vec<Interval>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.skill_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skill_labels.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GroundTruthFile {
            skill_vocabulary: SKILL_VOCABULARY.iter().map(|s| s.to_string()).collect(),
            skill_labels: self.skill_labels.clone(),
            trigger_labels: self.trigger_labels.clone(),
            artifacts: self.artifacts.intervals().to_vec(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: GroundTruthFile = serde_json::from_str(text)?;
        let len = f.skill_labels.len();
        if f.trigger_labels.len() != len {
            return Err(Error::Format("skill and trigger label lengths differ".into()));
        }
        let artifacts = IntervalSet::new(f.artifacts, len)?;
        if artifacts.to_labels(len) != f.trigger_labels {
            return Err(Error::Format("trigger labels disagree with artifact intervals".into()));
        }
        Ok(Self {
            skill_labels: f.skill_labels,
            trigger_labels: f.trigger_labels,
            artifacts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Directions and fixed transforms shared by every demo of one seed.
struct World {
    tactile_dirs: Vec<Array1<f64>>,
    visual_dirs: Vec<Array1<f64>>,
    trigger_dirs: [[f64; 6]; 3],
    ft_transform: FrameTransform,
    tcp_offset: FrameTransform,
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Array1<f64> {
    let v: Array1<f64> = Array1::from_shape_simple_fn(dim, || StandardNormal.sample(rng));
    let n = v.dot(&v).sqrt();
    v / n
}

impl World {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let tactile_dirs = (0..5).map(|_| unit_vector(&mut rng, EMBED_DIM)).collect();
        let mut visual_dirs: Vec<_> = (0..5).map(|_| unit_vector(&mut rng, EMBED_DIM)).collect();
        if !cfg.informativeness.visual_sees_force {
            visual_dirs[Phase::UnderTorque.index()] = visual_dirs[Phase::UnderLinearForce.index()].clone();
        }
        let mut trigger_dirs = [[0.0; 6]; 3];
        for dir in &mut trigger_dirs {
            let v = unit_vector(&mut rng, 6);
            dir.copy_from_slice(v.as_slice().unwrap());
        }
        // sensor mounted rotated a quarter turn about z, 10 cm below the flange
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let ft_transform = FrameTransform::new(*rz.matrix(), Vector3::new(0.0, 0.0, 0.1)).expect("rotation");
        let tcp_offset = FrameTransform::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.15)).expect("identity");
        Self {
            tactile_dirs,
            visual_dirs,
            trigger_dirs,
            ft_transform,
            tcp_offset,
        }
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Per-frame phase plan: labels plus the clip index and within-phase
/// progress of every frame.
struct Timeline {
    phases: Vec<Phase>,
    clip: Vec<usize>,
    progress: Vec<f64>,
    /// `(phase, clip, start, len)` for every run.
    runs: Vec<(Phase, usize, usize, usize)>,
}

fn build_timeline(cfg: &SynthConfig, rng: &mut impl Rng) -> Timeline {
    let mut runs = Vec::new();
    let mut start = 0;
    for clip in 0..cfg.clips_per_demo {
        for phase in Phase::ALL {
            let len = cfg.durations.get(phase).sample(rng);
            runs.push((phase, clip, start, len));
            start += len;
        }
    }
    let len = cfg.durations.idle.sample(rng);
    runs.push((Phase::Idle, cfg.clips_per_demo - 1, start, len));
    start += len;

    let mut t = Timeline {
        phases: Vec::with_capacity(start),
        clip: Vec::with_capacity(start),
        progress: Vec::with_capacity(start),
        runs,
    };
    for &(phase, clip, _, len) in &t.runs {
        for k in 0..len {
            t.phases.push(phase);
            t.clip.push(clip);
            t.progress.push(k as f64 / len as f64);
        }
    }
    t
}

fn inject_intervals(cfg: &SynthConfig, timeline: &Timeline, rng: &mut impl Rng) -> Result<IntervalSet> {
    let n = timeline.phases.len();
    let mut intervals = Vec::new();
    if cfg.trigger.enabled {
        for &(phase, _, start, _) in &timeline.runs {
            match phase {
                Phase::Grasped => {
                    let pull = cfg.trigger.pull.sample(rng);
                    let lock = cfg.trigger.lock.sample(rng);
                    intervals.push(Interval {
                        start,
                        end: start + pull,
                        class: TriggerClass::Pull,
                    });
                    intervals.push(Interval {
                        start: start + pull,
                        end: start + pull + lock,
                        class: TriggerClass::Lock,
                    });
                }
                Phase::Released => {
                    let len = cfg.trigger.release.sample(rng);
                    intervals.push(Interval {
                        start,
                        end: (start + len).min(n),
                        class: TriggerClass::Release,
                    });
                }
                _ => {}
            }
        }
    }
    IntervalSet::new(intervals, n)
}

fn frame_rows(frames: usize, dim: usize) -> Array2<f64> {
    Array2::zeros((frames, dim))
}

/// Sample indices `0..=last` of a stream at `rate` covering `[0, end]`.
fn sample_times(rate: Rate, end: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut k = 0;
    loop {
        let t = rate.grid_time(0.0, k);
        times.push(t);
        if t >= end - 1e-12 {
            break;
        }
        k += 1;
    }
    times
}

/// Frame containing time `t` on the frame grid.
fn frame_at(frame_rate: Rate, t: f64, frames: usize) -> usize {
    (((t * frame_rate.hz()) + 1e-9).floor() as usize).min(frames - 1)
}

fn pose_row(p: &Vector3<f64>, q: &UnitQuaternion<f64>) -> [f64; POSE_DIM] {
    let q = q.quaternion();
    let (w, i, j, k) = if q.w < 0.0 { (-q.w, -q.i, -q.j, -q.k) } else { (q.w, q.i, q.j, q.k) };
    [p.x, p.y, p.z, w, i, j, k]
}

/// Generates demonstration `index` of the dataset defined by `cfg`.
pub fn generate_demo(cfg: &SynthConfig, index: usize) -> Result<(Recording, GroundTruth)> {
    cfg.validate()?;
    let world = World::new(cfg);
    generate_with_world(cfg, &world, index)
}

fn generate_with_world(cfg: &SynthConfig, world: &World, index: usize) -> Result<(Recording, GroundTruth)> {
    let frame_rate = Rate::from_hz(cfg.frame_rate_hz)?;
    let ft_rate = Rate::from_hz(cfg.ft_rate_hz)?;
    let pose_rate = Rate::from_hz(cfg.pose_rate_hz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);

    let timeline = build_timeline(cfg, &mut rng);
    let n = timeline.phases.len();
    let artifacts = inject_intervals(cfg, &timeline, &mut rng)?;
    let info = &cfg.informativeness;
    let noise = &cfg.noise;

    // tactile: phase mean plus white noise
    let tac_scale = info.tactile_separation * noise.tactile / std::f64::consts::SQRT_2;
    let mut tactile = frame_rows(n, EMBED_DIM);
    for (t, mut row) in tactile.rows_mut().into_iter().enumerate() {
        let dir = &world.tactile_dirs[timeline.phases[t].index()];
        for (v, d) in row.iter_mut().zip(dir) {
            *v = tac_scale * d + noise.tactile * gauss(&mut rng);
        }
    }

    // visual: slow AR(1) drift, weak phase mean, white noise
    let vis_scale = info.visual_separation * noise.visual / std::f64::consts::SQRT_2;
    let rho = info.visual_walk_corr;
    let innov = info.visual_walk * noise.visual * (1.0 - rho * rho).sqrt();
    let mut walk: Array1<f64> =
        Array1::from_shape_simple_fn(EMBED_DIM, || info.visual_walk * noise.visual * gauss(&mut rng));
    let mut visual = frame_rows(n, EMBED_DIM);
    for (t, mut row) in visual.rows_mut().into_iter().enumerate() {
        walk.mapv_inplace(|w| rho * w);
        for w in walk.iter_mut() {
            *w += innov * gauss(&mut rng);
        }
        let dir = &world.visual_dirs[timeline.phases[t].index()];
        for ((v, d), w) in row.iter_mut().zip(dir).zip(&walk) {
            *v = w + vis_scale * d + noise.visual * gauss(&mut rng);
        }
    }

    // interaction wrench in the robot frame, per frame, before noise
    let clips = cfg.clips_per_demo;
    let pull_dirs: Vec<Vector3<f64>> = (0..clips)
        .map(|_| Vector3::new(0.3 * gauss(&mut rng), 0.3 * gauss(&mut rng), -1.0).normalize())
        .collect();
    let twist_dirs: Vec<Vector3<f64>> = (0..clips)
        .map(|_| Vector3::new(0.2 * gauss(&mut rng), 0.2 * gauss(&mut rng), 1.0).normalize())
        .collect();
    let baseline: [f64; 6] = std::array::from_fn(|_| 0.3 * noise.ft * gauss(&mut rng));
    let force_peak = info.ft_separation * noise.ft / 0.75;
    let torque_level = info.ft_separation * noise.ft;
    let sensor_from_robot = world.ft_transform.inverse();
    let mut ft_frames = frame_rows(n, FT_DIM);
    for t in 0..n {
        let clip = timeline.clip[t];
        let u = timeline.progress[t];
        let (force, torque) = match timeline.phases[t] {
            Phase::UnderLinearForce => (pull_dirs[clip] * force_peak * (0.5 + 0.5 * u), Vector3::zeros()),
            Phase::UnderTorque => (pull_dirs[clip] * 0.25 * force_peak, twist_dirs[clip] * torque_level),
            _ => (Vector3::zeros(), Vector3::zeros()),
        };
        let robot = Wrench {
            force: force + Vector3::new(baseline[0], baseline[1], baseline[2]),
            torque: torque + Vector3::new(baseline[3], baseline[4], baseline[5]),
        };
        let mut sensor = map_wrench(&robot, &sensor_from_robot).to_channels();
        for iv in artifacts.intervals() {
            if iv.start <= t && t < iv.end {
                let dir = &world.trigger_dirs[iv.class.index() - 1];
                let gain = cfg.trigger.amplitude * noise.ft * (0.8 + 0.4 * rng.gen::<f64>());
                for (s, d) in sensor.iter_mut().zip(dir) {
                    *s += gain * d;
                }
            }
        }
        for (c, v) in sensor.iter().enumerate() {
            ft_frames[[t, c]] = *v;
        }
    }

    let end_time = frame_rate.grid_time(0.0, n - 1);
    let ft_times = sample_times(ft_rate, end_time);
    let mut ft = frame_rows(ft_times.len(), FT_DIM);
    for (j, &time) in ft_times.iter().enumerate() {
        let f = frame_at(frame_rate, time, n);
        for c in 0..FT_DIM {
            ft[[j, c]] = ft_frames[[f, c]] + noise.ft * gauss(&mut rng);
        }
    }

    // poses: clip-level placement, small phase offsets, twist under torque
    let clip_pos: Vec<Vector3<f64>> = (0..clips)
        .map(|c| {
            Vector3::new(
                0.1 * c as f64 + 0.02 * gauss(&mut rng),
                0.02 * gauss(&mut rng),
                0.2 + 0.01 * gauss(&mut rng),
            )
        })
        .collect();
    let clip_yaw: Vec<f64> = (0..clips).map(|_| 0.17 * gauss(&mut rng)).collect();
    let pose_times = sample_times(pose_rate, end_time);
    let mut pose_left = frame_rows(pose_times.len(), POSE_DIM);
    let mut pose_right = frame_rows(pose_times.len(), POSE_DIM);
    let tcp_inv = world.tcp_offset.inverse();
    for (j, &time) in pose_times.iter().enumerate() {
        let f = frame_at(frame_rate, time, n);
        let clip = timeline.clip[f];
        let u = timeline.progress[f];
        let (offset, twist) = match timeline.phases[f] {
            Phase::Idle => (Vector3::new(0.0, 0.0, 0.05), 0.0),
            Phase::Grasped => (Vector3::zeros(), 0.0),
            Phase::UnderLinearForce => (Vector3::new(0.0, 0.0, -0.02 * u), 0.0),
            Phase::UnderTorque => (Vector3::new(0.0, 0.0, -0.02), 0.5 * u),
            Phase::Released => (Vector3::new(0.0, 0.0, 0.01), 0.5),
        };
        let jitter = |rng: &mut ChaCha8Rng| Vector3::new(gauss(rng), gauss(rng), gauss(rng)) * noise.pose;
        let tilt = |rng: &mut ChaCha8Rng| {
            UnitQuaternion::from_euler_angles(0.01 * gauss(rng), 0.01 * gauss(rng), 0.01 * gauss(rng))
        };
        let right_q = UnitQuaternion::from_euler_angles(0.0, 0.0, clip_yaw[clip] + twist) * tilt(&mut rng);
        let right_tcp = clip_pos[clip] + offset + jitter(&mut rng);
        let left_q = UnitQuaternion::from_euler_angles(0.0, 0.0, clip_yaw[clip]) * tilt(&mut rng);
        let left_tcp = clip_pos[clip] + Vector3::new(-0.15, 0.0, 0.03) + jitter(&mut rng);
        // store tracker poses; the TCP sits at the configured offset from them
        for (tcp, q, dst) in [(right_tcp, right_q, &mut pose_right), (left_tcp, left_q, &mut pose_left)] {
            let tracker_p = tcp + q * tcp_inv.displacement();
            let row = pose_row(&tracker_p, &q);
            for (c, v) in row.iter().enumerate() {
                dst[[j, c]] = *v;
            }
        }
    }

    let mut rec = Recording::new(format!("demo_{index:03}"));
    rec.add_stream(SensorStream::on_grid(TACTILE_STREAM, StreamKind::TactileEmbed, frame_rate, 0.0, tactile)?)?;
    rec.add_stream(SensorStream::on_grid(VISUAL_STREAM, StreamKind::VisualEmbed, frame_rate, 0.0, visual)?)?;
    rec.add_stream(SensorStream::new(FT_STREAM, StreamKind::Ft, ft_rate, ft_times, ft)?)?;
    rec.add_stream(SensorStream::new(POSE_LEFT_STREAM, StreamKind::Pose, pose_rate, pose_times.clone(), pose_left)?)?;
    rec.add_stream(SensorStream::new(POSE_RIGHT_STREAM, StreamKind::Pose, pose_rate, pose_times, pose_right)?)?;
    let skill_labels: Vec<usize> = timeline.phases.iter().map(|p| p.index()).collect();
    let vocab = SKILL_VOCABULARY.iter().map(|s| s.to_string()).collect();
    rec.set_labels(LabelTrack::new(vocab, skill_labels.clone())?, frame_rate);
    rec.meta.insert(META_FT_TRANSFORM.into(), world.ft_transform.to_json());
    rec.meta.insert(META_TCP_LEFT.into(), world.tcp_offset.to_json());
    rec.meta.insert(META_TCP_RIGHT.into(), world.tcp_offset.to_json());
    rec.meta.insert("synth_seed".into(), cfg.seed.to_string());

    let trigger_labels = artifacts.to_labels(n);
    Ok((
        rec,
        GroundTruth {
            skill_labels,
            trigger_labels,
            artifacts,
        },
    ))
}

pub type Demo = (Recording, GroundTruth);

/// Demonstrations partitioned by demo into train, validation and test.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: Vec<Demo>,
    pub val: Vec<Demo>,
    pub test: Vec<Demo>,
}

impl SynthDataset {
    pub fn total_frames(&self) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|(_, gt)| gt.len())
            .sum()
    }

    /// Demo names per split, in generation order.
    pub fn splits(&self) -> Splits {
        let names = |d: &[Demo]| d.iter().map(|(r, _)| r.name.clone()).collect();
        Splits {
            train: names(&self.train),
            val: names(&self.val),
            test: names(&self.test),
        }
    }

    /// Writes one directory per demo under `dir`, each holding the recording
    /// and its ground-truth sidecar, plus `splits.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (rec, gt) in self.train.iter().chain(&self.val).chain(&self.test) {
            save_demo(rec, gt, &dir.join(&rec.name))?;
        }
        self.splits().save(dir)
    }
}

pub const SPLITS_FILE: &str = "splits.json";

/// Names of the recording directories in each split of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: &str) -> Result<&[String]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split `{other}` (expected train, val or test)"))),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SPLITS_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SPLITS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let splits: Splits = serde_json::from_str(&text)?;
        let mut all: Vec<&String> = splits.train.iter().chain(&splits.val).chain(&splits.test).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        if all.len() != n {
            return Err(Error::Format(format!("{}: a demo appears in two splits", path.display())));
        }
        Ok(splits)
    }
}

pub fn save_demo(rec: &Recording, gt: &GroundTruth, dir: &Path) -> Result<()> {
    save_recording(rec, dir)?;
    gt.save(&dir.join(GROUND_TRUTH_FILE))
}

/// Splits `n` demos by the three fractions: train and validation counts are
/// rounded, test takes the remainder. When there are enough demos, every
/// split with a positive fraction then gets at least one, taken from the
/// largest split.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let train = (((n as f64) * fractions[0]).round() as usize).min(n);
    let val = (((n as f64) * fractions[1]).round() as usize).min(n - train);
    let mut counts = [train, val, n - train - val];
    let wanted = fractions.iter().filter(|&&f| f > 0.0).count();
    if n >= wanted {
        for i in 0..3 {
            if fractions[i] > 0.0 && counts[i] == 0 {
                let largest = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("three splits");
                counts[largest] -= 1;
                counts[i] += 1;
            }
        }
    }
    Ok(counts)
}

pub fn generate_dataset(cfg: &SynthConfig, n_demos: usize, fractions: [f64; 3]) -> Result<SynthDataset> {
    cfg.validate()?;
    let [n_train, n_val, _] = split_counts(n_demos, fractions)?;
    let world = World::new(cfg);
    let mut demos = (0..n_demos)
        .map(|i| generate_with_world(cfg, &world, i))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let train = demos.by_ref().take(n_train).collect();
    let val = demos.by_ref().take(n_val).collect();
    let test = demos.collect();
    Ok(SynthDataset { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recdata::synchronize;
    use crate::wrenchproc::intervals_from_labels;

    fn runs(labels: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut t = 0;
        while t < labels.len() {
            let s = t;
            while t < labels.len() && labels[t] == labels[s] {
                t += 1;
            }
            out.push((labels[s], t - s));
        }
        out
    }

    #[test]
    fn all_classes_and_short_releases() {
        let (_, gt) = generate_demo(&SynthConfig::default(), 0).unwrap();
        for c in 0..5 {
            assert!(gt.skill_labels.contains(&c));
        }
        let released = runs(&gt.skill_labels).into_iter().filter(|&(c, _)| c == 4).collect::<Vec<_>>();
        assert_eq!(released.len(), 3);
        assert!(released.iter().all(|&(_, len)| (2..=5).contains(&len)));
    }

    #[test]
    fn phase_runs_respect_ranges() {
        let cfg = SynthConfig::default();
        for i in 0..5 {
            let (_, gt) = generate_demo(&cfg, i).unwrap();
            let r = runs(&gt.skill_labels);
            assert_eq!(r.len(), 16);
            for (c, len) in r {
                let range = cfg.durations.get(Phase::ALL[c]);
                assert!(range.min <= len && len <= range.max, "class {c} run {len}");
            }
        }
    }

    #[test]
    fn minimum_durations_total() {
        let mut cfg = SynthConfig::default();
        cfg.durations = cfg.durations.minima();
        cfg.trigger.release = DurationRange::fixed(2);
        cfg.trigger.pull = DurationRange::fixed(2);
        cfg.trigger.lock = DurationRange::fixed(2);
        let (rec, gt) = generate_demo(&cfg, 0).unwrap();
        assert_eq!(gt.len(), 3 * (20 + 15 + 20 + 15 + 2) + 20);
        assert_eq!(gt.len(), 236);
        assert_eq!(rec.labels().unwrap().len(), 236);
    }

    #[test]
    fn same_seed_same_demo() {
        let cfg = SynthConfig::default();
        let a = generate_demo(&cfg, 3).unwrap();
        let b = generate_demo(&cfg, 3).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate_demo(&cfg, 4).unwrap();
        assert_ne!(a.1.skill_labels, c.1.skill_labels);
    }

    #[test]
    fn trigger_labels_match_intervals() {
        let (_, gt) = generate_demo(&SynthConfig::default(), 1).unwrap();
        assert_eq!(gt.artifacts.len(), 9);
        for (t, &l) in gt.trigger_labels.iter().enumerate() {
            assert_eq!(l != 0, gt.artifacts.contains(t));
        }
        assert_eq!(intervals_from_labels(&gt.trigger_labels).unwrap(), gt.artifacts);
        assert!(gt.trigger_labels[..BASELINE_FRAMES].iter().all(|&l| l == 0));
    }

    #[test]
    fn streams_synchronize_to_label_grid() {
        let (rec, gt) = generate_demo(&SynthConfig::default(), 2).unwrap();
        let sync = synchronize(&rec, Rate::TACTILE).unwrap();
        assert_eq!(sync.frame_count(), Some(gt.len()));
        assert_eq!(sync.labels().unwrap().labels(), gt.skill_labels.as_slice());
        // ft samples on frame times carry that frame's signal
        let ft = sync.stream(FT_STREAM).unwrap();
        assert_eq!(ft.len(), gt.len());
    }

    #[test]
    fn dataset_split_by_demo() {
        assert_eq!(split_counts(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert_eq!(split_counts(6, [0.8, 0.1, 0.1]).unwrap(), [4, 1, 1]);
        assert_eq!(split_counts(2, [0.8, 0.1, 0.1]).unwrap(), [2, 0, 0]);
        assert_eq!(split_counts(5, [1.0, 0.0, 0.0]).unwrap(), [5, 0, 0]);
        assert!(matches!(split_counts(10, [0.8, 0.1, 0.2]), Err(Error::Config(_))));
        let mut cfg = SynthConfig::default();
        cfg.seed = 9;
        let ds = generate_dataset(&cfg, 10, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (8, 1, 1));
        let mut names: Vec<_> = ds.train.iter().chain(&ds.val).chain(&ds.test).map(|(r, _)| r.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 10);
        assert!(matches!(
            generate_dataset(&cfg, 10, [0.5, 0.1, 0.1]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_size_near_thirty_thousand_frames() {
        let cfg = SynthConfig::default();
        let expected = cfg.mean_frames_per_demo() * DEFAULT_DEMOS as f64;
        assert!((expected - 30_000.0).abs() < 1_000.0, "{expected}");
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (rec, gt) = generate_demo(&SynthConfig::default(), 0).unwrap();
        save_demo(&rec, &gt, dir.path()).unwrap();
        assert_eq!(GroundTruth::load(&dir.path().join(GROUND_TRUTH_FILE)).unwrap(), gt);
        let back = crate::recdata::load_recording(dir.path()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn dataset_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&SynthConfig::default(), 3, [0.4, 0.3, 0.3]).unwrap();
        ds.save(dir.path()).unwrap();
        let splits = Splits::load(dir.path()).unwrap();
        assert_eq!(splits, ds.splits());
        assert_eq!(splits.get("train").unwrap().len(), 1);
        for name in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            assert!(dir.path().join(name).join(GROUND_TRUTH_FILE).is_file());
        }
        assert!(matches!(splits.get("dev"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SynthConfig::default();
        cfg.durations.released = DurationRange::new(0, 3);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = SynthConfig::default();
        cfg.durations.idle = DurationRange::new(5, 10);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.trigger.enabled = false;
        assert!(cfg.validate().is_ok());
    }
}
