//! Force/torque preprocessing: remapping wrenches between sensor frames and
//! replacing operator trigger artifacts with baseline noise.

mod artifacts;

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recdata::SensorStream;

pub use artifacts::{
    baseline_stats, baseline_stats_default, detect_trigger_intervals, filter_trigger_artifacts,
    intervals_from_labels, mean_iou, ChannelStats, Interval, IntervalSet, TriggerClass, BASELINE_FRAMES, DEFAULT_PAD,
    STD_FLOOR, TRIGGER_VOCABULARY,
};

const SO3_TOL: f64 = 1e-9;

/// A force (N) and torque (N·m) pair expressed in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: [f64; 3], torque: [f64; 3]) -> Self {
        Self {
            force: Vector3::from(force),
            torque: Vector3::from(torque),
        }
    }

    /// Channel order `(Fx, Fy, Fz, Tx, Ty, Tz)`.
    pub fn from_channels(c: &[f64]) -> Self {
        Self::new([c[0], c[1], c[2]], [c[3], c[4], c[5]])
    }

    pub fn to_channels(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }
}

/// Rotation from the gripper sensor frame to the robot sensor frame plus the
/// displacement between the two sensor centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTransform {
    rotation: Matrix3<f64>,
    displacement: Vector3<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformConfig {
    rotation: [f64; 9],
    displacement_m: [f64; 3],
}

impl FrameTransform {
    pub fn new(rotation: Matrix3<f64>, displacement: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(displacement.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if gram_err > SO3_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {gram_err:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > SO3_TOL {
            return Err(Error::InvalidTransform(format!("rotation determinant is {det}")));
        }
        Ok(Self {
            rotation,
            displacement,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            displacement: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn displacement(&self) -> &Vector3<f64> {
        &self.displacement
    }

    /// `self ∘ inner`: mapping by `inner` then by `self`.
    pub fn compose(&self, inner: &FrameTransform) -> FrameTransform {
        FrameTransform {
            rotation: self.rotation * inner.rotation,
            displacement: self.displacement + self.rotation * inner.displacement,
        }
    }

    pub fn inverse(&self) -> FrameTransform {
        let rt = self.rotation.transpose();
        FrameTransform {
            rotation: rt,
            displacement: -(rt * self.displacement),
        }
    }

    /// Parses `{"rotation": [9 row-major], "displacement_m": [x, y, z]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TransformConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidTransform(format!("bad transform config: {e}")))?;
        Self::new(
            Matrix3::from_row_slice(&cfg.rotation),
            Vector3::from(cfg.displacement_m),
        )
    }

    pub fn to_json(&self) -> String {
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r * 3 + c] = self.rotation[(r, c)];
            }
        }
        let cfg = TransformConfig {
            rotation,
            displacement_m: [self.displacement.x, self.displacement.y, self.displacement.z],
        };
        serde_json::to_string(&cfg).expect("plain numbers serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// `F_R = R F_G`, `τ_R = R τ_G + r × (R F_G)`.
pub fn map_wrench(w: &Wrench, tf: &FrameTransform) -> Wrench {
    let force = tf.rotation * w.force;
    let torque = tf.rotation * w.torque + tf.displacement.cross(&force);
    Wrench { force, torque }
}

/// Applies [`map_wrench`] to every frame of a 6-channel F/T stream.
pub fn map_wrench_stream(stream: &SensorStream, tf: &FrameTransform) -> Result<SensorStream> {
    if stream.dim() != 6 {
        return Err(Error::dim(format!(
            "F/T stream `{}` has {} channels, expected 6",
            stream.name(),
            stream.dim()
        )));
    }
    let mut out = Array2::zeros(stream.values().raw_dim());
    for (src, mut dst) in stream.values().rows().into_iter().zip(out.rows_mut()) {
        let mapped = map_wrench(&Wrench::from_channels(&src.to_vec()), tf);
        for (d, v) in dst.iter_mut().zip(mapped.to_channels()) {
            *d = v;
        }
    }
    stream.with_values(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recdata::{Rate, StreamKind};
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn rot_z(angle: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix()
    }

    #[test]
    fn identity_leaves_wrench_unchanged() {
        let w = Wrench::new([1.0, -2.0, 3.0], [0.4, 0.5, -0.6]);
        assert_eq!(map_wrench(&w, &FrameTransform::identity()), w);
    }

    #[test]
    fn pure_torque_only_rotates() {
        let rot = *Rotation3::from_euler_angles(0.3, -1.1, 2.0).matrix();
        let tf = FrameTransform::new(rot, Vector3::new(0.2, -0.5, 1.0)).unwrap();
        let w = Wrench::new([0.0; 3], [1.0, 0.0, 0.0]);
        let out = map_wrench(&w, &tf);
        assert_eq!(out.force, Vector3::zeros());
        assert_eq!(out.torque, rot * Vector3::x());
    }

    #[test]
    fn quarter_turn_with_offset() {
        let tf = FrameTransform::new(rot_z(FRAC_PI_2), Vector3::new(0.0, 0.0, 0.1)).unwrap();
        let out = map_wrench(&Wrench::new([1.0, 0.0, 0.0], [0.0; 3]), &tf);
        // r × F by hand: (0, 0, 0.1) × (0, 1, 0) = (-0.1, 0, 0)
        assert!((out.force - Vector3::new(0.0, 1.0, 0.0)).amax() < 1e-12);
        assert!((out.torque - Vector3::new(-0.1, 0.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn rejects_non_rotations() {
        let scaled = Matrix3::identity() * 1.01;
        assert!(matches!(FrameTransform::new(scaled, Vector3::zeros()), Err(Error::InvalidTransform(_))));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            FrameTransform::new(reflection, Vector3::zeros()),
            Err(Error::InvalidTransform(_))
        ));
    }

    #[test]
    fn json_config_roundtrip() {
        let tf = FrameTransform::new(rot_z(0.7), Vector3::new(0.01, 0.02, -0.03)).unwrap();
        let back = FrameTransform::from_json(&tf.to_json()).unwrap();
        assert_eq!(back, tf);
        let bad = r#"{"rotation":[1,0,0,0,1,0,0,0,2],"displacement_m":[0,0,0]}"#;
        assert!(FrameTransform::from_json(bad).is_err());
    }

    fn ft_stream(values: Array2<f64>) -> SensorStream {
        SensorStream::on_grid("ft", StreamKind::Ft, Rate::TACTILE, 0.0, values).unwrap()
    }

    #[test]
    fn stream_mapping_is_pointwise() {
        let values = Array2::from_shape_fn((100, 6), |(i, j)| ((i * 31 + j * 17) % 23) as f64 / 7.0 - 1.5);
        let s = ft_stream(values.clone());
        let tf = FrameTransform::new(*Rotation3::from_euler_angles(0.1, 0.2, 0.3).matrix(), Vector3::new(0.0, 0.05, 0.1))
            .unwrap();
        let mapped = map_wrench_stream(&s, &tf).unwrap();
        assert_eq!(mapped.timestamps(), s.timestamps());
        for (i, row) in values.rows().into_iter().enumerate() {
            let expect = map_wrench(&Wrench::from_channels(&row.to_vec()), &tf).to_channels();
            assert_eq!(mapped.values().row(i).to_vec(), expect.to_vec());
        }
        assert_eq!(map_wrench_stream(&s, &FrameTransform::identity()).unwrap(), s);
    }

    #[test]
    fn constant_stream_maps_to_constant() {
        let w = Wrench::new([0.5, 1.0, -2.0], [0.1, 0.0, 0.3]);
        let values = Array2::from_shape_fn((10, 6), |(_, j)| w.to_channels()[j]);
        let tf = FrameTransform::new(rot_z(1.0), Vector3::new(0.1, 0.0, 0.0)).unwrap();
        let mapped = map_wrench_stream(&ft_stream(values), &tf).unwrap();
        let expect = map_wrench(&w, &tf).to_channels();
        for row in mapped.values().rows() {
            assert_eq!(row.to_vec(), expect.to_vec());
        }
    }

    #[test]
    fn wrong_width_stream_rejected() {
        let s = SensorStream::on_grid("ft", StreamKind::Ft, Rate::TACTILE, 0.0, Array2::zeros((3, 5))).unwrap();
        assert!(matches!(map_wrench_stream(&s, &FrameTransform::identity()), Err(Error::DimMismatch(_))));
    }

    fn arb_transform() -> impl Strategy<Value = FrameTransform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.0f64..3.0,
            prop::array::uniform3(-0.5f64..0.5),
        )
            .prop_filter_map("degenerate axis", |(axis, angle, r)| {
                let axis = Vector3::from(axis);
                (axis.norm() > 1e-3).then(|| {
                    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
                    FrameTransform::new(*rot.matrix(), Vector3::from(r)).unwrap()
                })
            })
    }

    fn arb_wrench() -> impl Strategy<Value = Wrench> {
        (prop::array::uniform3(-50.0f64..50.0), prop::array::uniform3(-5.0f64..5.0))
            .prop_map(|(f, t)| Wrench::new(f, t))
    }

    proptest! {
        #[test]
        fn composition_matches_sequential_mapping(w in arb_wrench(), a in arb_transform(), b in arb_transform()) {
            let seq = map_wrench(&map_wrench(&w, &a), &b);
            let composed = map_wrench(&w, &b.compose(&a));
            prop_assert!((seq.force - composed.force).amax() < 1e-9);
            prop_assert!((seq.torque - composed.torque).amax() < 1e-9);
        }

        #[test]
        fn inverse_undoes_mapping(w in arb_wrench(), tf in arb_transform()) {
            let back = map_wrench(&map_wrench(&w, &tf), &tf.inverse());
            prop_assert!((back.force - w.force).amax() < 1e-9);
            prop_assert!((back.torque - w.torque).amax() < 1e-9);
        }
    }
}
