//! Bundle-adjustment problem files in the BAL text layout.
//!
//! ```text
//! m n l [euler|angle-axis]
//! cam point u v          (l lines)
//! r1 r2 r3 t1 t2 t3 f k1 k2   (one value per line, m cameras)
//! x1 x2 x3                    (one value per line, n points)
//! ```
//!
//! The optional fourth header token selects the rotation encoding and
//! defaults to `euler`. Angle-axis rotations are converted to Euler angles on
//! load. The radial distortion terms `k1`, `k2` must be zero. Values are
//! written with 17 significant digits so a write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{euler_from_rotation, rotation_from_angle_axis, CameraParams, ImagePoint, ScenePoint};
use crate::problem::{Observation, ParamState, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationEncoding {
    #[default]
    Euler,
    AngleAxis,
}

impl FromStr for RotationEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "angle-axis" | "angle_axis" => Ok(Self::AngleAxis),
            other => Err(Error::Validation(format!("unknown rotation encoding '{other}'"))),
        }
    }
}

struct Tokens<'a> {
    inner: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    /// Tokens of `text` after its first `skip` lines, tagged with 1-based line numbers.
    fn new(text: &'a str, skip: usize) -> Self {
        let inner = text
            .lines()
            .enumerate()
            .skip(skip)
            .flat_map(|(k, line)| line.split_whitespace().map(move |t| (k + 1, t)));
        Self {
            inner: Box::new(inner),
            last_line: skip,
        }
    }

    fn next_raw(&mut self, what: &dyn Fn() -> String) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((line, tok)) => {
                self.last_line = line;
                Ok((line, tok))
            }
            None => Err(Error::Parse {
                line: self.last_line + 1,
                message: format!("unexpected end of file, expected {}", what()),
            }),
        }
    }

    fn next<T: FromStr>(&mut self, what: &dyn Fn() -> String) -> Result<T> {
        let (line, tok) = self.next_raw(what)?;
        tok.parse().map_err(|_| Error::Parse {
            line,
            message: format!("could not parse '{tok}' as {}", what()),
        })
    }
}

/// Parses a problem and its initial parameters from BAL text.
pub fn parse_str(text: &str) -> Result<(Problem, ParamState)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (header_no, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty file, expected header 'm n l'".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(Error::Parse {
            line: header_no + 1,
            message: format!("expected header 'm n l [encoding]', got '{}'", header.trim()),
        });
    }
    let count = |k: usize, name: &str| -> Result<usize> {
        fields[k].parse().map_err(|_| Error::Parse {
            line: header_no + 1,
            message: format!("could not parse {name} count '{}'", fields[k]),
        })
    };
    let (m, n, l) = (count(0, "camera")?, count(1, "point")?, count(2, "observation")?);
    let encoding = match fields.get(3) {
        Some(tok) => tok.parse()?,
        None => RotationEncoding::Euler,
    };
    if m == 0 || n == 0 || l == 0 {
        return Err(Error::Validation(format!(
            "empty problem: header declares {m} cameras, {n} points, {l} observations"
        )));
    }

    let mut tokens = Tokens::new(text, header_no + 1);

    let mut observations = Vec::with_capacity(l);
    for k in 0..l {
        let what = || format!("observation {} of {l} ('cam point u v')", k + 1);
        let camera: usize = tokens.next(&what)?;
        let point: usize = tokens.next(&what)?;
        let u: f64 = tokens.next(&what)?;
        let v: f64 = tokens.next(&what)?;
        observations.push(Observation {
            camera,
            point,
            z: ImagePoint::new(u, v),
        });
    }

    let mut cameras = Vec::with_capacity(m);
    for j in 0..m {
        let mut p = [0.0; 9];
        for (q, slot) in p.iter_mut().enumerate() {
            *slot = tokens.next(&|| format!("camera {j} parameter {} of 9", q + 1))?;
        }
        if p[7] != 0.0 || p[8] != 0.0 {
            return Err(Error::Validation(format!(
                "camera {j} has nonzero distortion ({}, {}); only the undistorted model is supported",
                p[7], p[8]
            )));
        }
        let angles = match encoding {
            RotationEncoding::Euler => [p[0], p[1], p[2]],
            RotationEncoding::AngleAxis => {
                let (a, b, c) = euler_from_rotation(&rotation_from_angle_axis(&Vector3::new(p[0], p[1], p[2])));
                [a, b, c]
            }
        };
        let cam = CameraParams::new(angles, Vector3::new(p[3], p[4], p[5]), p[6])
            .map_err(|e| Error::Validation(format!("camera {j}: {e}")))?;
        cameras.push(cam);
    }

    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = [0.0; 3];
        for (q, slot) in x.iter_mut().enumerate() {
            *slot = tokens.next(&|| format!("point {i} coordinate {} of 3", q + 1))?;
        }
        points.push(ScenePoint::new(x[0], x[1], x[2]));
    }

    if let Some((line, tok)) = tokens.inner.next() {
        return Err(Error::Validation(format!(
            "trailing data '{tok}' at line {} after the records declared in the header",
            line
        )));
    }

    let problem = Problem::new(m, n, observations).map_err(|e| Error::Validation(e.to_string()))?;
    Ok((problem, ParamState { cameras, points }))
}

/// Reads a problem file from disk.
pub fn parse_problem(path: impl AsRef<Path>) -> Result<(Problem, ParamState)> {
    parse_str(&fs::read_to_string(path)?)
}

/// Renders `problem` with parameters `state` in Euler encoding.
pub fn to_string(problem: &Problem, state: &ParamState) -> Result<String> {
    problem.check_state(state)?;
    let mut s = String::new();
    let num = |s: &mut String, v: f64| writeln!(s, "{v:.16e}").unwrap();
    writeln!(
        s,
        "{} {} {}",
        problem.num_cameras(),
        problem.num_points(),
        problem.num_observations()
    )
    .unwrap();
    for o in problem.observations() {
        writeln!(s, "{} {} {:.16e} {:.16e}", o.camera, o.point, o.z.u, o.z.v).unwrap();
    }
    for c in &state.cameras {
        for v in c.params().iter() {
            num(&mut s, *v);
        }
        num(&mut s, c.f);
        num(&mut s, 0.0);
        num(&mut s, 0.0);
    }
    for p in &state.points {
        for v in p.0.iter() {
            num(&mut s, *v);
        }
    }
    Ok(s)
}

pub fn write_problem(out: &mut impl Write, problem: &Problem, state: &ParamState) -> Result<()> {
    out.write_all(to_string(problem, state)?.as_bytes())?;
    Ok(())
}

pub fn serialize_problem(problem: &Problem, state: &ParamState, path: impl AsRef<Path>) -> Result<()> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    write_problem(&mut file, problem, state)?;
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_from_euler;
    use crate::scene_gen::{generate_scene, perturb, InitPerturbation, SceneConfig};
    use proptest::prelude::*;

    const MINIMAL: &str = "1 1 1\n0 0 1.5 -2.25\n0.1\n0.2\n0.3\n1\n2\n3\n500\n0\n0\n4\n5\n6\n";

    #[test]
    fn minimal_file() {
        let (problem, state) = parse_str(MINIMAL).unwrap();
        assert_eq!(problem.num_observations(), 1);
        assert_eq!(problem.observations()[0].z, ImagePoint::new(1.5, -2.25));
        assert_eq!(state.cameras[0].params().as_slice(), &[0.1, 0.2, 0.3, 1.0, 2.0, 3.0]);
        assert_eq!(state.cameras[0].f, 500.0);
        assert_eq!(state.points[0], ScenePoint::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn truncated_file_names_missing_record() {
        let cut = &MINIMAL[..MINIMAL.len() - 2];
        match parse_str(cut) {
            Err(Error::Parse { line, message }) => {
                assert!(message.contains("point 0 coordinate 3"), "{message}");
                assert_eq!(line, 14);
            }
            other => panic!("{other:?}"),
        }
        match parse_str("2 1 3\n0 0 1 2\n") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("observation 2 of 3"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_token_reports_its_line() {
        let text = MINIMAL.replace("\n2\n3\n", "\nx\n3\n");
        match parse_str(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_errors() {
        let distorted = MINIMAL.replace("500\n0\n0\n", "500\n0.1\n0\n");
        assert!(matches!(parse_str(&distorted), Err(Error::Validation(_))));
        assert!(matches!(parse_str("0 0 0\n"), Err(Error::Validation(_))));
        assert!(matches!(parse_str(&format!("{MINIMAL}7\n")), Err(Error::Validation(_))));
        let out_of_range = MINIMAL.replace("0 0 1.5", "0 3 1.5");
        assert!(matches!(parse_str(&out_of_range), Err(Error::Validation(_))));
        assert!(matches!(
            parse_str(&MINIMAL.replacen("1 1 1", "1 1 1 quaternion", 1)),
            Err(Error::Validation(_))
        ));
        assert!(matches!(parse_str(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn angle_axis_is_converted() {
        let w = Vector3::new(0.3, -0.2, 0.5);
        let text = format!(
            "1 1 1 angle-axis\n0 0 1 2\n{}\n{}\n{}\n1\n2\n3\n500\n0\n0\n4\n5\n6\n",
            w.x, w.y, w.z
        );
        let (_, state) = parse_str(&text).unwrap();
        let diff = state.cameras[0].rotation() - rotation_from_angle_axis(&w);
        assert!(diff.abs().max() < 1e-12);
        let c = &state.cameras[0];
        let back = rotation_from_euler(c.alpha, c.beta, c.gamma);
        assert!((back - rotation_from_angle_axis(&w)).abs().max() < 1e-12);
    }

    #[test]
    fn output_is_deterministic_and_round_trips() {
        let (problem, gt) = generate_scene(&SceneConfig::default()).unwrap();
        let a = to_string(&problem, &gt).unwrap();
        assert_eq!(a, to_string(&problem, &gt).unwrap());
        let (p2, s2) = parse_str(&a).unwrap();
        assert_eq!(p2, problem);
        assert_eq!(s2, gt);
        assert_eq!(to_string(&p2, &s2).unwrap(), a);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.txt");
        let (problem, gt) = generate_scene(&SceneConfig::default()).unwrap();
        serialize_problem(&problem, &gt, &path).unwrap();
        let (p2, s2) = parse_problem(&path).unwrap();
        assert_eq!((p2, s2), (problem, gt));
        assert!(matches!(parse_problem(dir.path().join("missing")), Err(Error::Io(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..10_000, cams in 2usize..8, extra in 0usize..30, sc in 0.0f64..0.5, sp in 0.0f64..3.0) {
            let cfg = SceneConfig { n_cameras: cams, n_points: cams + extra, visibility_window: 2, rng_seed: seed, ..Default::default() };
            let (problem, gt) = generate_scene(&cfg).unwrap();
            let state = perturb(&gt, &InitPerturbation { sigma_cam: sc, sigma_point: sp, rng_seed: seed }).unwrap();
            let (p2, s2) = parse_str(&to_string(&problem, &state).unwrap()).unwrap();
            for (a, b) in p2.observations().iter().zip(problem.observations()) {
                prop_assert_eq!(a.z.u.to_bits(), b.z.u.to_bits());
                prop_assert_eq!(a.z.v.to_bits(), b.z.v.to_bits());
            }
            prop_assert_eq!(s2, state);
        }
    }
}
