//! Scene and point-cloud files in binary little-endian PLY.
//!
//! Scene vertices carry float32 properties in this order:
//! `x y z t scale_0 scale_1 scale_2 scale_t rot_0..rot_3 vel_0..vel_2
//! opacity f_dc_0..f_dc_2 f_rest_*`. Scales are log-stored and opacity is a
//! logit. `f_rest` is channel-major, as in common splatting tools.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, SymmetricEigen, Vector3, Vector4};
use thiserror::Error;

use crate::scene::{Gaussian4D, Scene4D};
use crate::sh;

pub const FORMAT_COMMENT: &str = "format dis4dgs 1";

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {message}")]
    Header { path: PathBuf, message: String },
    #[error("{path}: missing property `{name}`")]
    MissingProperty { path: PathBuf, name: String },
    #[error("{path}: expected {expected} properties, found {found}")]
    PropertyCount { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: vertex {element}: property `{property}` is not finite")]
    NonFinite { path: PathBuf, element: usize, property: String },
    #[error("{path}: file ends inside vertex {element}")]
    Truncated { path: PathBuf, element: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PlyError + '_ {
    move |source| PlyError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Property names of the scene layout for a given SH degree.
pub fn scene_properties(sh_degree: u8) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "t", "scale_0", "scale_1", "scale_2", "scale_t"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.extend((0..3).map(|i| format!("vel_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    let rest = 3 * (sh::num_coeffs(sh_degree) - 1);
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names
}

/// Property names of the baseline layout that stores a 4D rotation as a
/// pair of unit quaternions.
pub fn slicing_first_properties(sh_degree: u8) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "t"].iter().map(|s| s.to_string()).collect();
    names.extend((0..4).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_l_{i}")));
    names.extend((0..4).map(|i| format!("rot_r_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    let rest = 3 * (sh::num_coeffs(sh_degree) - 1);
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names
}

fn write_header(
    w: &mut impl Write,
    count: usize,
    names: &[String],
    comments: &[String],
) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    for c in comments {
        writeln!(w, "comment {c}")?;
    }
    writeln!(w, "element vertex {count}")?;
    for n in names {
        writeln!(w, "property float {n}")?;
    }
    writeln!(w, "end_header")
}

fn scene_comments(scene: &Scene4D) -> Vec<String> {
    let bg = scene.background;
    vec![
        FORMAT_COMMENT.to_string(),
        format!("duration_seconds {:?}", scene.duration_seconds),
        format!("background {:?} {:?} {:?}", bg.x, bg.y, bg.z),
    ]
}

fn push_color(row: &mut Vec<f32>, coeffs: &[Vector3<f64>]) {
    row.extend(coeffs[0].iter().map(|&v| v as f32));
    for ch in 0..3 {
        row.extend(coeffs[1..].iter().map(|c| c[ch] as f32));
    }
}

fn write_rows(path: &Path, header: impl FnOnce(&mut BufWriter<std::fs::File>) -> std::io::Result<()>, rows: impl Iterator<Item = Vec<f32>>) -> Result<(), PlyError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    header(&mut w).map_err(io_err(path))?;
    for row in rows {
        for v in row {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Writes the scene with every parameter rounded to float32.
pub fn save_scene(scene: &Scene4D, path: &Path) -> Result<(), PlyError> {
    let names = scene_properties(scene.sh_degree);
    let comments = scene_comments(scene);
    write_rows(
        path,
        |w| write_header(w, scene.len(), &names, &comments),
        scene.gaussians.iter().map(|g| {
            let mut row: Vec<f32> = g.geometry_motion().iter().map(|&v| v as f32).collect();
            row.push(g.opacity_logit as f32);
            push_color(&mut row, &g.sh);
            row
        }),
    )
}

/// Writes the scene in the baseline layout: 4D mean, four log-scales of the
/// full 4D covariance and its rotation as a left/right quaternion pair.
pub fn save_slicing_first(scene: &Scene4D, path: &Path) -> crate::Result<()> {
    let names = slicing_first_properties(scene.sh_degree);
    let comments = scene_comments(scene);
    let rows = scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let full = crate::oracle::lift(&g.activate_indexed(i)?);
            let (log_scale, left, right) = decompose_covariance4d(&full.covariance4d());
            let mut row: Vec<f32> = g.mean.iter().map(|&v| v as f32).collect();
            row.extend(log_scale.iter().map(|&v| v as f32));
            row.extend(left.iter().map(|&v| v as f32));
            row.extend(right.iter().map(|&v| v as f32));
            row.push(g.opacity_logit as f32);
            push_color(&mut row, &g.sh);
            Ok(row)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    write_rows(path, |w| write_header(w, scene.len(), &names, &comments), rows.into_iter())?;
    Ok(())
}

/// Matrix of `p ↦ q p` on quaternions `(w, x, y, z)`.
pub fn left_mul_matrix(q: &Vector4<f64>) -> Matrix4<f64> {
    let (a, b, c, d) = (q[0], q[1], q[2], q[3]);
    Matrix4::new(a, -b, -c, -d, b, a, -d, c, c, d, a, -b, d, -c, b, a)
}

/// Matrix of `p ↦ p q` on quaternions `(w, x, y, z)`.
pub fn right_mul_matrix(q: &Vector4<f64>) -> Matrix4<f64> {
    let (a, b, c, d) = (q[0], q[1], q[2], q[3]);
    Matrix4::new(a, -b, -c, -d, b, a, d, -c, c, -d, a, b, d, c, -b, a)
}

/// Splits a symmetric positive definite 4×4 covariance into log-scales and
/// a rotation `x ↦ l x r` given by two unit quaternions.
pub fn decompose_covariance4d(cov: &Matrix4<f64>) -> (Vector4<f64>, Vector4<f64>, Vector4<f64>) {
    let eig = SymmetricEigen::new(*cov);
    let mut rot = eig.eigenvectors;
    let mut vals = eig.eigenvalues;
    if rot.determinant() < 0.0 {
        let col = -rot.column(3);
        rot.set_column(3, &col);
    }
    vals.iter_mut().for_each(|v| *v = v.max(f64::MIN_POSITIVE));
    let log_scale = vals.map(|v| 0.5 * v.ln());
    // rot = L(l) R(r); its coordinates in the basis L(e_i) R(e_j) form l rᵀ.
    let mut outer = Matrix4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            let basis = left_mul_matrix(&Vector4::ith(i, 1.0)) * right_mul_matrix(&Vector4::ith(j, 1.0));
            outer[(i, j)] = basis.component_mul(&rot).sum() / 4.0;
        }
    }
    let (row, _) = (0..4)
        .map(|i| (i, outer.row(i).norm()))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let right: Vector4<f64> = outer.row(row).transpose().normalize();
    let left: Vector4<f64> = (outer * right).normalize();
    (log_scale, left, right)
}

struct Header {
    count: usize,
    names: Vec<String>,
    comments: Vec<String>,
}

fn read_header(path: &Path, r: &mut impl BufRead) -> Result<Header, PlyError> {
    let bad = |message: String| PlyError::Header {
        path: path.to_owned(),
        message,
    };
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool, PlyError> {
        line.clear();
        Ok(r.read_line(line).map_err(io_err(path))? > 0)
    };
    if !next(&mut line)? || line.trim_end() != "ply" {
        return Err(bad("first line must be `ply`".into()));
    }
    let mut count = None;
    let mut names = Vec::new();
    let mut comments = Vec::new();
    let mut format_ok = false;
    let mut in_vertex = false;
    loop {
        if !next(&mut line)? {
            return Err(bad("missing end_header".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => return Err(bad(format!("unsupported format `{other}`"))),
            ["comment", rest @ ..] => comments.push(rest.join(" ")),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count `{n}`")))?);
                in_vertex = true;
            }
            ["element", name, ..] => return Err(bad(format!("unexpected element `{name}`"))),
            ["property", ty, name] if in_vertex => {
                if *ty != "float" && *ty != "uchar" {
                    return Err(bad(format!("property `{name}` has unsupported type `{ty}`")));
                }
                names.push(format!("{ty} {name}"));
            }
            [] => {}
            _ => return Err(bad(format!("unexpected line `{}`", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(bad("missing `format binary_little_endian 1.0`".into()));
    }
    let count = count.ok_or_else(|| bad("missing `element vertex`".into()))?;
    Ok(Header { count, names, comments })
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>, PlyError> {
    Ok(BufReader::new(std::fs::File::open(path).map_err(io_err(path))?))
}

/// Reads a scene written by [`save_scene`]. The SH degree is inferred
/// from the number of `f_rest` properties.
pub fn load_scene(path: &Path) -> Result<Scene4D, PlyError> {
    let mut r = open(path)?;
    let header = read_header(path, &mut r)?;
    let names: Vec<String> = header
        .names
        .iter()
        .map(|n| {
            let (ty, name) = n.split_once(' ').expect("typed name");
            if ty != "float" {
                return Err(PlyError::Header {
                    path: path.to_owned(),
                    message: format!("property `{name}` must be float"),
                });
            }
            Ok(name.to_string())
        })
        .collect::<Result<_, _>>()?;
    let n_rest = names.iter().filter(|n| n.starts_with("f_rest_")).count();
    let degree = sh::degree_from_coeffs(n_rest / 3 + 1).filter(|_| n_rest % 3 == 0);
    let expected = scene_properties(degree.unwrap_or(0));
    for name in &expected {
        if !names.contains(name) {
            return Err(PlyError::MissingProperty {
                path: path.to_owned(),
                name: name.clone(),
            });
        }
    }
    let Some(degree) = degree else {
        return Err(PlyError::Header {
            path: path.to_owned(),
            message: format!("{n_rest} f_rest properties do not match any SH degree"),
        });
    };
    if names.len() != expected.len() {
        return Err(PlyError::PropertyCount {
            path: path.to_owned(),
            expected: expected.len(),
            found: names.len(),
        });
    }
    if names != expected {
        let pos = names.iter().zip(&expected).position(|(a, b)| a != b).unwrap_or(0);
        return Err(PlyError::Header {
            path: path.to_owned(),
            message: format!("property {pos} is `{}`, expected `{}`", names[pos], expected[pos]),
        });
    }

    let mut scene = Scene4D::new(degree);
    for c in &header.comments {
        let toks: Vec<&str> = c.split_whitespace().collect();
        let parse = |s: &str| -> Result<f64, PlyError> {
            s.parse().map_err(|_| PlyError::Header {
                path: path.to_owned(),
                message: format!("bad number `{s}` in comment `{c}`"),
            })
        };
        match toks.as_slice() {
            ["duration_seconds", v] => scene.duration_seconds = parse(v)?,
            ["background", r, g, b] => scene.background = Vector3::new(parse(r)?, parse(g)?, parse(b)?),
            _ => {}
        }
    }

    let n_coeffs = sh::num_coeffs(degree);
    let mut buf = vec![0u8; 4 * names.len()];
    let mut row = vec![0.0f64; names.len()];
    scene.gaussians.reserve(header.count);
    for element in 0..header.count {
        r.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                PlyError::Truncated {
                    path: path.to_owned(),
                    element,
                }
            } else {
                PlyError::Io {
                    path: path.to_owned(),
                    source: e,
                }
            }
        })?;
        for (k, chunk) in buf.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(PlyError::NonFinite {
                    path: path.to_owned(),
                    element,
                    property: names[k].clone(),
                });
            }
            row[k] = v as f64;
        }
        let mut g = Gaussian4D::new(Vector3::zeros(), 0.0, degree);
        g.mean = Vector4::from_column_slice(&row[0..4]);
        g.log_scale = Vector4::from_column_slice(&row[4..8]);
        g.rotation = Vector4::from_column_slice(&row[8..12]);
        g.velocity = Vector3::from_column_slice(&row[12..15]);
        g.opacity_logit = row[15];
        g.sh[0] = Vector3::from_column_slice(&row[16..19]);
        let rest = &row[19..];
        for k in 1..n_coeffs {
            for ch in 0..3 {
                g.sh[k][ch] = rest[ch * (n_coeffs - 1) + k - 1];
            }
        }
        scene.gaussians.push(g);
    }
    Ok(scene)
}

/// Writes a colored point cloud (`x y z` float, `red green blue` uchar).
pub fn save_points(path: &Path, points: &[Vector3<f64>], colors: &[Vector3<f64>]) -> Result<(), PlyError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}", points.len())?;
        writeln!(w, "property float x\nproperty float y\nproperty float z")?;
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header")?;
        for (p, c) in points.iter().zip(colors) {
            for v in p.iter() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
            for v in c.iter() {
                w.write_all(&[(v.clamp(0.0, 1.0) * 255.0).round() as u8])?;
            }
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

/// Reads a point cloud with float `x y z` and optional uchar or float
/// `red green blue`. Missing colors default to mid gray.
pub fn load_points(path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>), PlyError> {
    let mut r = open(path)?;
    let header = read_header(path, &mut r)?;
    let find = |name: &str| header.names.iter().position(|n| n.split_once(' ').map(|x| x.1) == Some(name));
    let pos: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|n| {
            find(n).ok_or_else(|| PlyError::MissingProperty {
                path: path.to_owned(),
                name: n.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    let col: Vec<Option<usize>> = ["red", "green", "blue"].iter().map(|n| find(n)).collect();
    let sizes: Vec<usize> = header.names.iter().map(|n| if n.starts_with("uchar") { 1 } else { 4 }).collect();
    let offsets: Vec<usize> = sizes.iter().scan(0, |acc, s| {
        let o = *acc;
        *acc += s;
        Some(o)
    }).collect();
    let stride: usize = sizes.iter().sum();
    let mut buf = vec![0u8; stride];
    let value = |buf: &[u8], k: usize| -> f64 {
        let o = offsets[k];
        if sizes[k] == 1 {
            buf[o] as f64 / 255.0
        } else {
            f32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes")) as f64
        }
    };
    let mut points = Vec::with_capacity(header.count);
    let mut colors = Vec::with_capacity(header.count);
    for element in 0..header.count {
        r.read_exact(&mut buf).map_err(|_| PlyError::Truncated {
            path: path.to_owned(),
            element,
        })?;
        let p = Vector3::new(value(&buf, pos[0]), value(&buf, pos[1]), value(&buf, pos[2]));
        if !p.iter().all(|v| v.is_finite()) {
            return Err(PlyError::NonFinite {
                path: path.to_owned(),
                element,
                property: "x".into(),
            });
        }
        points.push(p);
        colors.push(Vector3::from_fn(|i, _| col[i].map_or(0.5, |k| value(&buf, k))));
    }
    Ok((points, colors))
}
