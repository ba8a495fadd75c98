//! Geo-referenced UAV poses to a local East-North-Up frame and COLMAP camera
//! records.
//!
//! Attitude follows the aircraft convention: yaw is clockwise from true north
//! about the down axis, then pitch about the right wing, then roll about the
//! nose. The body frame is forward-right-down. The camera looks along the nose
//! with x to the right and y down, so zero attitude looks north and a pitch of
//! -90° looks straight down (DJI gimbal convention).

use std::io::{Read, Write};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 semi-major axis (m).
pub const WGS84_A: f64 = 6378137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257223563;
/// WGS84 first eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPose {
    pub image_name: String,
    /// Degrees.
    pub latitude: f64,
    /// Degrees.
    pub longitude: f64,
    /// Meters above the WGS84 ellipsoid.
    pub altitude: f64,
    /// Degrees.
    pub yaw: f64,
    /// Degrees.
    pub pitch: f64,
    /// Degrees.
    pub roll: f64,
}

impl GeoPose {
    pub fn at(latitude: f64, longitude: f64, altitude: f64) -> Self {
        Self {
            image_name: String::new(),
            latitude,
            longitude,
            altitude,
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
        }
    }

    /// Checks ranges and wraps longitude into (-180, 180].
    pub fn validated(mut self) -> Result<Self, String> {
        let fields = [
            ("latitude", self.latitude),
            ("longitude", self.longitude),
            ("altitude", self.altitude),
            ("yaw", self.yaw),
            ("pitch", self.pitch),
            ("roll", self.roll),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("{name} is not finite ({v})"));
        }
        if self.latitude.abs() > 90.0 {
            return Err(format!("latitude {} outside [-90, 90]", self.latitude));
        }
        self.longitude = wrap_longitude(self.longitude);
        Ok(self)
    }

    pub fn ecef(&self) -> Vector3<f64> {
        wgs84_to_ecef(self.latitude, self.longitude, self.altitude)
    }
}

pub fn wrap_longitude(lon: f64) -> f64 {
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Geodetic (degrees, ellipsoidal meters) to Earth-centered Earth-fixed meters.
pub fn wgs84_to_ecef(lat_deg: f64, lon_deg: f64, alt: f64) -> Vector3<f64> {
    let (sin_lat, cos_lat) = lat_deg.to_radians().sin_cos();
    let (sin_lon, cos_lon) = lon_deg.to_radians().sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    Vector3::new(
        (n + alt) * cos_lat * cos_lon,
        (n + alt) * cos_lat * sin_lon,
        (n * (1.0 - WGS84_E2) + alt) * sin_lat,
    )
}

/// Rows are the east, north and up unit vectors expressed in ECEF.
pub fn ecef_to_enu_rotation(lat_deg: f64, lon_deg: f64) -> Matrix3<f64> {
    let (sin_lat, cos_lat) = lat_deg.to_radians().sin_cos();
    let (sin_lon, cos_lon) = lon_deg.to_radians().sin_cos();
    Matrix3::new(
        -sin_lon,
        cos_lon,
        0.0,
        -sin_lat * cos_lon,
        -sin_lat * sin_lon,
        cos_lat,
        cos_lat * cos_lon,
        cos_lat * sin_lon,
        sin_lat,
    )
}

pub fn ecef_to_enu(p: &Vector3<f64>, origin: &GeoPose) -> Vector3<f64> {
    let r = ecef_to_enu_rotation(origin.latitude, origin.longitude);
    r * (p - origin.ecef())
}

pub fn enu_to_ecef(enu: &Vector3<f64>, origin: &GeoPose) -> Vector3<f64> {
    let r = ecef_to_enu_rotation(origin.latitude, origin.longitude);
    origin.ecef() + r.transpose() * enu
}

/// Maps NED components to ENU components.
fn ned_to_enu() -> Matrix3<f64> {
    Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0)
}

/// Body (forward-right-down) to ENU rotation for an aircraft attitude in
/// degrees.
pub fn attitude_to_rotation(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw.to_radians());
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch.to_radians());
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), roll.to_radians());
    let body_to_ned = (rz * ry * rx).into_inner();
    ned_to_enu() * body_to_ned
}

/// Camera axes (x right, y down, z optical) expressed in body axes.
pub fn camera_to_body() -> Matrix3<f64> {
    // columns: camera x -> body right, camera y -> body down, camera z -> body forward
    Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColmapCamera {
    pub image_id: u32,
    /// World-to-camera rotation (w, x, y, z).
    pub qvec: [f64; 4],
    /// World-to-camera translation, `t = -R C`.
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub image_name: String,
}

impl ColmapCamera {
    pub fn from_rotation_center(
        image_id: u32,
        camera_id: u32,
        image_name: String,
        world_to_camera: &Matrix3<f64>,
        center: &Vector3<f64>,
    ) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            *world_to_camera,
        ));
        let mut q = q.into_inner();
        // canonical sign: non-negative w
        if q.w < 0.0 {
            q = -q;
        }
        let q = q.normalize();
        let r = UnitQuaternion::new_unchecked(q).to_rotation_matrix().into_inner();
        let t = -(r * center);
        Self {
            image_id,
            qvec: [q.w, q.i, q.j, q.k],
            tvec: [t.x, t.y, t.z],
            camera_id,
            image_name,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.qvec;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.tvec)
    }

    /// Camera center `C = -Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }
}

/// Converts poses to COLMAP records relative to `origin` (the first pose when
/// `None`). Image ids are assigned from 1 in input order.
pub fn to_colmap(poses: &[GeoPose], origin: Option<&GeoPose>) -> Vec<ColmapCamera> {
    let Some(origin) = origin.or(poses.first()) else {
        return Vec::new();
    };
    let cam_to_body = camera_to_body();
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let center = ecef_to_enu(&pose.ecef(), origin);
            let cam_to_enu = attitude_to_rotation(pose.yaw, pose.pitch, pose.roll) * cam_to_body;
            ColmapCamera::from_rotation_center(
                i as u32 + 1,
                1,
                pose.image_name.clone(),
                &cam_to_enu.transpose(),
                &center,
            )
        })
        .collect()
}

/// Reads `image_name,latitude,longitude,altitude,yaw,pitch,roll` rows.
pub fn read_pose_csv<R: Read>(reader: R) -> Result<Vec<GeoPose>, GeoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut poses = Vec::new();
    for (i, rec) in rdr.deserialize::<GeoPose>().enumerate() {
        let row = i + 1;
        let pose = rec.map_err(|e| GeoError::InvalidRow {
            row,
            message: e.to_string(),
        })?;
        let pose = pose
            .validated()
            .map_err(|message| GeoError::InvalidRow { row, message })?;
        poses.push(pose);
    }
    Ok(poses)
}

/// Writes the COLMAP `images.txt` text layout. Each image takes two lines; the
/// second (2D points) is left empty. The ENU origin is recorded in the header.
pub fn write_images_txt<W: Write>(
    w: &mut W,
    cameras: &[ColmapCamera],
    origin: Option<&GeoPose>,
) -> std::io::Result<()> {
    writeln!(w, "# Image list with two lines of data per image:")?;
    writeln!(w, "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME")?;
    writeln!(w, "#   POINTS2D[] as (X, Y, POINT3D_ID)")?;
    writeln!(w, "# Number of images: {}, mean observations per image: 0", cameras.len())?;
    if let Some(o) = origin {
        writeln!(
            w,
            "# ENU origin: latitude {:.12} longitude {:.12} altitude {:.6}",
            o.latitude, o.longitude, o.altitude
        )?;
    }
    for c in cameras {
        let [qw, qx, qy, qz] = c.qvec;
        let [tx, ty, tz] = c.tvec;
        writeln!(
            w,
            "{} {qw} {qx} {qy} {qz} {tx} {ty} {tz} {} {}",
            c.image_id, c.camera_id, c.image_name
        )?;
        writeln!(w)?;
    }
    Ok(())
}

/// Parses the records written by [`write_images_txt`].
pub fn parse_images_txt(text: &str) -> Result<Vec<ColmapCamera>, String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let mut out = Vec::new();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(format!("short image record `{line}`"));
        }
        let num = |i: usize| tok[i].parse::<f64>().map_err(|e| format!("{}: {e}", tok[i]));
        out.push(ColmapCamera {
            image_id: tok[0].parse().map_err(|e| format!("{e}"))?,
            qvec: [num(1)?, num(2)?, num(3)?, num(4)?],
            tvec: [num(5)?, num(6)?, num(7)?],
            camera_id: tok[8].parse().map_err(|e| format!("{e}"))?,
            image_name: tok[9..].join(" "),
        });
        // points line
        lines.next();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginRecord {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub datum: String,
    pub frame: String,
    pub source: String,
}

impl OriginRecord {
    pub fn new(origin: &GeoPose, source: impl Into<String>) -> Self {
        Self {
            latitude: origin.latitude,
            longitude: origin.longitude,
            altitude: origin.altitude,
            datum: "WGS84 ellipsoidal height".into(),
            frame: "ENU".into(),
            source: source.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ecef_equator_prime_meridian() {
        assert_relative_eq!(wgs84_to_ecef(0.0, 0.0, 0.0), Vector3::new(WGS84_A, 0.0, 0.0), epsilon = 1e-6);
    }

    #[test]
    fn ecef_pole() {
        let b = WGS84_A * (1.0 - WGS84_F);
        let p = wgs84_to_ecef(90.0, 37.0, 0.0);
        assert!(p.x.abs() < 1e-6 && p.y.abs() < 1e-6);
        assert_relative_eq!(p.z, b, epsilon = 1e-6);
        assert_relative_eq!(b, 6356752.314, epsilon = 1e-3);
    }

    #[test]
    fn ecef_altitude_adds_radially() {
        let p = wgs84_to_ecef(0.0, 90.0, 100.0);
        assert_relative_eq!(p, Vector3::new(0.0, 6378237.0, 0.0), epsilon = 1e-6);
    }

    #[test]
    fn enu_examples() {
        let origin = GeoPose::at(22.28, 114.23, 30.0);
        assert_eq!(ecef_to_enu(&origin.ecef(), &origin), Vector3::zeros());

        let o = GeoPose::at(0.0, 0.0, 0.0);
        let up = ecef_to_enu(&wgs84_to_ecef(0.0, 0.0, 50.0), &o);
        assert_relative_eq!(up, Vector3::new(0.0, 0.0, 50.0), epsilon = 1e-9);

        // meridional radius at the equator: a(1 - e²)
        let m0 = WGS84_A * (1.0 - WGS84_E2);
        let north = ecef_to_enu(&wgs84_to_ecef(1e-5, 0.0, 0.0), &o);
        assert_relative_eq!(north.y, m0 * 1e-5f64.to_radians(), epsilon = 1e-6);
        assert_relative_eq!(north.y, 1.1057, epsilon = 1e-4);
        assert!(north.x.abs() < 1e-3 && north.z.abs() < 1e-3);
    }

    #[test]
    fn attitude_examples() {
        let forward = Vector3::x();
        let r = attitude_to_rotation(0.0, 0.0, 0.0);
        assert_relative_eq!(r * forward, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        // body down maps to ENU down
        assert_relative_eq!(r * Vector3::z(), Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-15);

        let r = attitude_to_rotation(90.0, 0.0, 0.0);
        assert_relative_eq!(r * forward, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);

        let r = attitude_to_rotation(37.0, -90.0, 0.0);
        let optical = r * camera_to_body() * Vector3::z();
        assert_relative_eq!(optical, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
    }

    #[test]
    fn zero_attitude_camera_looks_north_upright() {
        let cams = to_colmap(&[GeoPose::at(10.0, 20.0, 5.0)], None);
        let r = cams[0].rotation();
        // camera axes in world: rows of R
        let optical = r.row(2).transpose();
        let down = r.row(1).transpose();
        let right = r.row(0).transpose();
        assert_relative_eq!(optical, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(down, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_relative_eq!(right, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_eq!(cams[0].tvec, [0.0; 3]);
    }

    #[test]
    fn longitude_wrapping() {
        assert_eq!(wrap_longitude(-180.0), 180.0);
        assert_eq!(wrap_longitude(190.0), -170.0);
        assert_eq!(wrap_longitude(180.0), 180.0);
        assert!(GeoPose::at(91.2, 0.0, 0.0).validated().is_err());
    }

    #[test]
    fn csv_reports_bad_row() {
        let csv = "image_name,latitude,longitude,altitude,yaw,pitch,roll\n\
                   a.jpg,22.0,114.0,10,0,-90,0\n\
                   b.jpg,91.2,114.0,10,0,-90,0\n";
        match read_pose_csv(csv.as_bytes()) {
            Err(GeoError::InvalidRow { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("latitude"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn images_txt_round_trip() {
        let poses = vec![
            GeoPose { image_name: "a.jpg".into(), yaw: 30.0, pitch: -60.0, roll: 2.0, ..GeoPose::at(22.28, 114.23, 80.0) },
            GeoPose { image_name: "b.jpg".into(), yaw: 31.0, pitch: -90.0, roll: 0.0, ..GeoPose::at(22.2801, 114.2302, 82.0) },
        ];
        let cams = to_colmap(&poses, None);
        let mut buf = Vec::new();
        write_images_txt(&mut buf, &cams, Some(&poses[0])).unwrap();
        let back = parse_images_txt(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in cams.iter().zip(&back) {
            assert_eq!(a.image_name, b.image_name);
            assert_eq!(a.qvec, b.qvec);
            assert_eq!(a.tvec, b.tvec);
        }
    }
}
