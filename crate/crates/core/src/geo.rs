//! Coordinate reference systems, pixel grids and great-circle distance.
//!
//! Only WGS84 geographic coordinates and WGS84 / UTM zones are supported;
//! that covers the Sentinel-2 tiling scheme and the geographic grids used by
//! coarse climate products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const UTM_K0: f64 = 0.9996;
const UTM_FALSE_EASTING: f64 = 500_000.0;
const UTM_FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BBox {
    /// Continental United States.
    pub const CONUS: BBox = BBox {
        min_lat: 24.396_308,
        max_lat: 49.384_358,
        min_lon: -124.848_974,
        max_lon: -66.885_444,
    };

    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self> {
        let b = BBox {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.min_lat <= self.max_lat
            && self.min_lon <= self.max_lon
            && self.min_lat >= -90.0
            && self.max_lat <= 90.0
            && self.min_lon >= -180.0
            && self.max_lon <= 180.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid bounding box {self}")))
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.min_lat && lat <= self.max_lat && lon >= self.min_lon && lon <= self.max_lon
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.min_lat + self.max_lat),
            0.5 * (self.min_lon + self.max_lon),
        )
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[lat {}..{}, lon {}..{}]",
            self.min_lat, self.max_lat, self.min_lon, self.max_lon
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Crs {
    Wgs84,
    Utm { zone: u8, north: bool },
}

impl Crs {
    pub fn from_epsg(code: u32) -> Result<Crs> {
        match code {
            4326 => Ok(Crs::Wgs84),
            32601..=32660 => Ok(Crs::Utm {
                zone: (code - 32600) as u8,
                north: true,
            }),
            32701..=32760 => Ok(Crs::Utm {
                zone: (code - 32700) as u8,
                north: false,
            }),
            other => Err(Error::Crs(format!(
                "EPSG:{other} has no transform to WGS84 in this build"
            ))),
        }
    }

    pub fn epsg(self) -> u32 {
        match self {
            Crs::Wgs84 => 4326,
            Crs::Utm { zone, north: true } => 32600 + zone as u32,
            Crs::Utm { zone, north: false } => 32700 + zone as u32,
        }
    }

    /// UTM zone whose central meridian is nearest to the given point.
    pub fn utm_for(lat: f64, lon: f64) -> Crs {
        let zone = (((lon + 180.0) / 6.0).floor() as i32).clamp(0, 59) + 1;
        Crs::Utm {
            zone: zone as u8,
            north: lat >= 0.0,
        }
    }

    pub fn is_geographic(self) -> bool {
        matches!(self, Crs::Wgs84)
    }

    /// Projects WGS84 `(lat, lon)` in degrees to `(x, y)` in this CRS.
    pub fn from_wgs84(self, lat: f64, lon: f64) -> (f64, f64) {
        match self {
            Crs::Wgs84 => (lon, lat),
            Crs::Utm { zone, north } => utm_forward(lat, lon, zone, north),
        }
    }

    /// Inverse of [`Crs::from_wgs84`]; returns `(lat, lon)`.
    pub fn to_wgs84(self, x: f64, y: f64) -> (f64, f64) {
        match self {
            Crs::Wgs84 => (y, x),
            Crs::Utm { zone, north } => utm_inverse(x, y, zone, north),
        }
    }
}

fn central_meridian(zone: u8) -> f64 {
    (zone as f64 * 6.0 - 183.0).to_radians()
}

// Krüger series coefficients to third order in the third flattening n.
struct TmSeries {
    a_rect: f64,
    e: f64,
    alpha: [f64; 3],
    beta: [f64; 3],
    delta: [f64; 3],
}

fn tm_series() -> TmSeries {
    let n = WGS84_F / (2.0 - WGS84_F);
    let (n2, n3) = (n * n, n * n * n);
    TmSeries {
        a_rect: WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n2 * n2 / 64.0),
        e: 2.0 * n.sqrt() / (1.0 + n),
        alpha: [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0,
            61.0 * n3 / 240.0,
        ],
        beta: [
            n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0,
            n2 / 48.0 + n3 / 15.0,
            17.0 * n3 / 480.0,
        ],
        delta: [
            2.0 * n - 2.0 * n2 / 3.0 - 2.0 * n3,
            7.0 * n2 / 3.0 - 8.0 * n3 / 5.0,
            56.0 * n3 / 15.0,
        ],
    }
}

fn utm_forward(lat: f64, lon: f64, zone: u8, north: bool) -> (f64, f64) {
    let s = tm_series();
    let phi = lat.to_radians();
    let dlam = lon.to_radians() - central_meridian(zone);
    let sin_phi = phi.sin();
    let t = (sin_phi.atanh() - s.e * (s.e * sin_phi).atanh()).sinh();
    let xi_p = t.atan2(dlam.cos());
    let eta_p = (dlam.sin() / (1.0 + t * t).sqrt()).atanh();
    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }
    let easting = UTM_FALSE_EASTING + UTM_K0 * s.a_rect * eta;
    let northing = UTM_K0 * s.a_rect * xi + if north { 0.0 } else { UTM_FALSE_NORTHING_SOUTH };
    (easting, northing)
}

fn utm_inverse(easting: f64, northing: f64, zone: u8, north: bool) -> (f64, f64) {
    let s = tm_series();
    let y = northing - if north { 0.0 } else { UTM_FALSE_NORTHING_SOUTH };
    let xi = y / (UTM_K0 * s.a_rect);
    let eta = (easting - UTM_FALSE_EASTING) / (UTM_K0 * s.a_rect);
    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }
    let chi = (xi_p.sin() / eta_p.cosh()).asin();
    let mut phi = chi;
    for (j, d) in s.delta.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        phi += d * (k * chi).sin();
    }
    let lam = central_meridian(zone) + eta_p.sinh().atan2(xi_p.cos());
    (phi.to_degrees(), lam.to_degrees())
}

/// Great-circle distance in meters between two WGS84 points.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// A north-up pixel grid. `origin` is the outer corner of the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub crs: Crs,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_width: f64,
    pub pixel_height: f64,
    pub width: usize,
    pub height: usize,
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid must have at least one pixel".into()));
        }
        if !(self.pixel_width > 0.0 && self.pixel_height > 0.0) {
            return Err(Error::Config("pixel sizes must be positive".into()));
        }
        Ok(())
    }

    /// Smallest grid of square `pixel_size` cells, in the local UTM zone,
    /// covering `bbox`. The origin is snapped to a multiple of the pixel size.
    pub fn covering_bbox(bbox: &BBox, pixel_size: f64) -> Result<Grid> {
        bbox.validate()?;
        if !(pixel_size > 0.0) {
            return Err(Error::Config(format!(
                "pixel size must be positive, got {pixel_size}"
            )));
        }
        let (clat, clon) = bbox.center();
        let crs = Crs::utm_for(clat, clon);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for lat in [bbox.min_lat, clat, bbox.max_lat] {
            for lon in [bbox.min_lon, clon, bbox.max_lon] {
                let (x, y) = crs.from_wgs84(lat, lon);
                xs.push(x);
                ys.push(y);
            }
        }
        let min_x = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_x = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_y = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_y = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let origin_x = (min_x / pixel_size).floor() * pixel_size;
        let origin_y = (max_y / pixel_size).ceil() * pixel_size;
        let width = (((max_x - origin_x) / pixel_size).ceil() as usize).max(1);
        let height = (((origin_y - min_y) / pixel_size).ceil() as usize).max(1);
        Ok(Grid {
            crs,
            origin_x,
            origin_y,
            pixel_width: pixel_size,
            pixel_height: pixel_size,
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_width,
            self.origin_y - (row as f64 + 0.5) * self.pixel_height,
        )
    }

    pub fn pixel_center_wgs84(&self, row: usize, col: usize) -> (f64, f64) {
        let (x, y) = self.pixel_center(row, col);
        self.crs.to_wgs84(x, y)
    }

    /// Continuous pixel coordinates `(col, row)` of a map point; pixel `(r, c)`
    /// spans `[c, c+1) × [r, r+1)`.
    pub fn fractional_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_width,
            (self.origin_y - y) / self.pixel_height,
        )
    }

    /// Pixel containing the given map point, if it lies inside the grid.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (c, r) = self.fractional_pixel(x, y);
        if c < 0.0 || r < 0.0 {
            return None;
        }
        let (r, c) = (r.floor() as usize, c.floor() as usize);
        (r < self.height && c < self.width).then_some((r, c))
    }

    pub fn pixel_of_wgs84(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let (x, y) = self.crs.from_wgs84(lat, lon);
        self.pixel_of(x, y)
    }

    /// Pixel sizes in meters, approximated at the grid center for geographic grids.
    pub fn pixel_size_m(&self) -> (f64, f64) {
        match self.crs {
            Crs::Utm { .. } => (self.pixel_width, self.pixel_height),
            Crs::Wgs84 => {
                let lat = self.origin_y - 0.5 * self.height as f64 * self.pixel_height;
                let m_per_deg = EARTH_RADIUS_M.to_radians();
                (
                    self.pixel_width * m_per_deg * lat.to_radians().cos(),
                    self.pixel_height * m_per_deg,
                )
            }
        }
    }
}
