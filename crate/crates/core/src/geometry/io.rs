//! ASCII point-cloud and depth-map files.
//!
//! ```text
//! FFUSION-PCD v1 <N>
//! x y z [intensity]          (N lines, sensor frame, meters)
//!
//! FFUSION-DEPTH v1 <W> <H>
//! d d d ...                  (H lines of W values, meters; -1 = missing)
//! ```

use std::fmt::Write as _;

use super::{DenseDepthMap, PointCloud, SparseDepthMap};
use crate::error::{Error, Result};

pub const PCD_TAG: &str = "FFUSION-PCD v1";
pub const DEPTH_TAG: &str = "FFUSION-DEPTH v1";
pub const MISSING_DEPTH_FILE_VALUE: f64 = -1.0;

pub fn write_pcd(cloud: &PointCloud) -> String {
    let mut s = format!("{PCD_TAG} {}\n", cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        if let Some(int) = &cloud.intensity {
            let _ = write!(s, " {}", int[i]);
        }
        s.push('\n');
    }
    s
}

fn parse_f64(tok: &str, what: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::parse(what, format!("bad number `{tok}`")))
}

pub fn read_pcd(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let n: usize = header
        .strip_prefix(PCD_TAG)
        .map(str::trim)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse("point cloud", "missing FFUSION-PCD v1 header"))?;
    let mut points = Vec::with_capacity(n);
    let mut intensity: Vec<f64> = Vec::new();
    let mut with_intensity = None;
    for (i, line) in lines.enumerate().take(n) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| parse_f64(t, "point cloud"))
            .collect::<Result<_>>()?;
        let has = match vals.len() {
            3 => false,
            4 => true,
            k => {
                return Err(Error::parse(
                    "point cloud",
                    format!("line {} has {k} fields", i + 2),
                ))
            }
        };
        if *with_intensity.get_or_insert(has) != has {
            return Err(Error::parse("point cloud", "mixed intensity columns"));
        }
        points.push([vals[0], vals[1], vals[2]]);
        if has {
            intensity.push(vals[3]);
        }
    }
    if points.len() != n {
        return Err(Error::parse(
            "point cloud",
            format!("header declares {n} points, found {}", points.len()),
        ));
    }
    let cloud = PointCloud {
        points,
        intensity: (with_intensity == Some(true)).then_some(intensity),
    };
    cloud.check()?;
    Ok(cloud)
}

pub fn write_depth(width: usize, height: usize, depth: &[f64]) -> String {
    let mut s = format!("{DEPTH_TAG} {width} {height}\n");
    for row in 0..height {
        let line: Vec<String> = depth[row * width..(row + 1) * width]
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    v.to_string()
                } else {
                    MISSING_DEPTH_FILE_VALUE.to_string()
                }
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Returns `(width, height, depth)` with missing cells as `NaN`.
pub fn read_depth(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let dims: Vec<usize> = header
        .strip_prefix(DEPTH_TAG)
        .map(|s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect())
        .unwrap_or_default();
    let [w, h] = dims[..] else {
        return Err(Error::parse("depth map", "missing FFUSION-DEPTH v1 W H header"));
    };
    let mut depth = Vec::with_capacity(w * h);
    for tok in lines.flat_map(str::split_whitespace) {
        let v = parse_f64(tok, "depth map")?;
        if v == MISSING_DEPTH_FILE_VALUE {
            depth.push(f64::NAN);
        } else if v > 0.0 && v.is_finite() {
            depth.push(v);
        } else {
            return Err(Error::parse("depth map", format!("invalid depth `{tok}`")));
        }
    }
    if depth.len() != w * h {
        return Err(Error::parse(
            "depth map",
            format!("expected {} values, found {}", w * h, depth.len()),
        ));
    }
    Ok((w, h, depth))
}

pub fn write_sparse(map: &SparseDepthMap) -> String {
    write_depth(map.width, map.height, &map.depth)
}

pub fn write_dense(map: &DenseDepthMap) -> String {
    write_depth(map.width, map.height, &map.depth)
}

pub fn read_dense(text: &str) -> Result<DenseDepthMap> {
    let (w, h, d) = read_depth(text)?;
    DenseDepthMap::from_depth(w, h, d)
}

pub fn read_sparse(text: &str) -> Result<SparseDepthMap> {
    let (w, h, d) = read_depth(text)?;
    SparseDepthMap::from_depth(w, h, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn depth_missing_written_as_minus_one() {
        let text = write_depth(2, 1, &[f64::NAN, 2.5]);
        assert_eq!(text, "FFUSION-DEPTH v1 2 1\n-1 2.5\n");
        let back = read_dense(&text).unwrap();
        assert!(back.get(0, 0).is_none());
        assert_eq!(back.get(1, 0), Some(2.5));
    }

    #[test]
    fn pcd_header_count_enforced() {
        assert!(read_pcd("FFUSION-PCD v1 2\n0 0 1\n").is_err());
        assert!(read_pcd("PCD 1\n0 0 1\n").is_err());
    }

    proptest! {
        #[test]
        fn pcd_round_trip_is_lossless(
            pts in proptest::collection::vec(prop::array::uniform3(-100.0f64..100.0), 0..30),
        ) {
            let cloud = PointCloud::new(pts);
            prop_assert_eq!(read_pcd(&write_pcd(&cloud)).unwrap(), cloud);
        }
    }
}
