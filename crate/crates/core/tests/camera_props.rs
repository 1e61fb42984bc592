use ivbench_core::camera::*;
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

fn camera(yaw: f64, pitch: f64, roll: f64, pos: [f64; 3], convention: Convention) -> CameraParams {
    CameraParams {
        id: 7,
        intrinsics: Intrinsics {
            focal_x: 700.0,
            focal_y: 690.0,
            principal_x: 479.5,
            principal_y: 269.5,
            width: 960,
            height: 540,
        },
        pose: Pose {
            yaw_deg: yaw,
            pitch_deg: pitch,
            roll_deg: roll,
            position: pos,
            convention,
        },
    }
}

fn angles() -> impl Strategy<Value = (f64, f64, f64)> {
    (-179.0..179.0f64, -85.0..85.0f64, -179.0..179.0f64)
}

fn convention() -> impl Strategy<Value = Convention> {
    prop_oneof![Just(Convention::Miv), Just(Convention::Cv)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn euler_matrix_roundtrip((y, p, r) in angles(), conv in convention()) {
        let m = euler_to_rotation(y, p, r, conv).unwrap();
        prop_assert!((m * m.transpose() - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        let (y2, p2, r2) = rotation_to_euler(&m, conv).unwrap();
        prop_assert!((y - y2).abs() < 1e-9 && (p - p2).abs() < 1e-9 && (r - r2).abs() < 1e-9);
    }

    #[test]
    fn project_unproject_roundtrip(
        (y, p, r) in angles(),
        conv in convention(),
        pos in prop::array::uniform3(-2.0..2.0f64),
        u in 0.0..959.0f64,
        v in 0.0..539.0f64,
        depth in 0.2..50.0f64,
    ) {
        let cam = camera(y, p, r, pos, conv);
        let x = unproject(&Vector2::new(u, v), depth, &cam).unwrap();
        let back = project(&x, &cam).unwrap().unwrap();
        prop_assert!((back.pixel.x - u).abs() < 1e-9 && (back.pixel.y - v).abs() < 1e-9);
        prop_assert!((back.depth - depth).abs() < 1e-9 * depth.max(1.0));
    }

    #[test]
    fn conventions_project_identically(
        (y, p, r) in angles(),
        pos in prop::array::uniform3(-2.0..2.0f64),
        pt in prop::array::uniform3(-10.0..10.0f64),
    ) {
        let miv = camera(y, p, r, pos, Convention::Miv);
        let cv = convert_convention(&miv, Convention::Cv).unwrap();
        let back = convert_convention(&cv, Convention::Miv).unwrap();
        let (a, b) = (miv.pose.rotation().unwrap(), back.pose.rotation().unwrap());
        prop_assert!((a - b).abs().max() < 1e-12);
        let x = Vector3::from(pt);
        match (project(&x, &miv).unwrap(), project(&x, &cv).unwrap()) {
            (Some(m), Some(c)) => {
                prop_assert!((m.pixel - c.pixel).norm() < 1e-9 * (1.0 + m.pixel.norm() / 1e3));
                prop_assert!((m.depth - c.depth).abs() < 1e-12 * (1.0 + m.depth.abs()));
            }
            (None, None) => {}
            (m, c) => prop_assert!(false, "visibility differs: {m:?} vs {c:?}"),
        }
        let vf = ViewFrame::new(&miv).unwrap();
        if let (Some((u, v, d)), Some(m)) = (vf.project(&x), project(&x, &miv).unwrap()) {
            prop_assert!((u - m.pixel.x).abs() < 1e-9 && (v - m.pixel.y).abs() < 1e-9 && (d - m.depth).abs() < 1e-12 * (1.0 + d));
        }
    }
}
