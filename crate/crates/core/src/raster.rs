//! In-memory rasters plus GeoTIFF input and output.
//!
//! Reading goes through the `tiff` crate. Writing uses a small encoder of our
//! own so the byte layout is fixed: little-endian classic TIFF, 256×256 tiles,
//! chunky samples, zlib/deflate compression and GeoTIFF georeferencing keys.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::tags::Tag;

use crate::error::{Error, Result};
use crate::geo::{Crs, Grid};

const TAG_GDAL_METADATA: u16 = 42112;

/// A multi-band raster with one `f32` plane per band, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub grid: Grid,
    pub bands: Vec<Vec<f32>>,
    pub nodata: Option<f64>,
}

impl Raster {
    pub fn new(grid: Grid, bands: Vec<Vec<f32>>, nodata: Option<f64>) -> Result<Self> {
        grid.validate()?;
        if bands.is_empty() {
            return Err(Error::Data("raster needs at least one band".into()));
        }
        for band in &bands {
            if band.len() != grid.len() {
                return Err(Error::ShapeMismatch {
                    dimension: "raster band length",
                    expected: grid.len(),
                    found: band.len(),
                });
            }
        }
        Ok(Self {
            grid,
            bands,
            nodata,
        })
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn is_valid_value(&self, v: f32) -> bool {
        v.is_finite() && self.nodata.is_none_or(|nd| v as f64 != nd)
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> Option<f32> {
        let v = self.bands[band][row * self.grid.width + col];
        self.is_valid_value(v).then_some(v)
    }

    /// Value of the pixel containing map point `(x, y)`.
    pub fn sample_nearest(&self, band: usize, x: f64, y: f64) -> Option<f32> {
        let (row, col) = self.grid.pixel_of(x, y)?;
        self.get(band, row, col)
    }

    /// Bilinear interpolation between pixel centers. Any contributing
    /// neighbour that is nodata makes the result nodata; points outside the
    /// raster extent are nodata. Edge pixels are replicated up to the border.
    pub fn sample_bilinear(&self, band: usize, x: f64, y: f64) -> Option<f32> {
        let (fc, fr) = self.grid.fractional_pixel(x, y);
        let (w, h) = (self.grid.width as f64, self.grid.height as f64);
        if !(fc >= 0.0 && fr >= 0.0 && fc < w && fr < h) {
            return None;
        }
        let u = (fc - 0.5).clamp(0.0, w - 1.0);
        let v = (fr - 0.5).clamp(0.0, h - 1.0);
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        let (c1, r1) = (
            (c0 + 1).min(self.grid.width - 1),
            (r0 + 1).min(self.grid.height - 1),
        );
        let (tu, tv) = (u - c0 as f64, v - r0 as f64);
        let taps = [
            (r0, c0, (1.0 - tu) * (1.0 - tv)),
            (r0, c1, tu * (1.0 - tv)),
            (r1, c0, (1.0 - tu) * tv),
            (r1, c1, tu * tv),
        ];
        let mut acc = 0.0f64;
        for (r, c, wgt) in taps {
            if wgt == 0.0 {
                continue;
            }
            acc += wgt * self.get(band, r, c)? as f64;
        }
        Some(acc as f32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleType {
    U8,
    I16,
    F32,
}

impl SampleType {
    fn bytes(self) -> usize {
        match self {
            SampleType::U8 => 1,
            SampleType::I16 => 2,
            SampleType::F32 => 4,
        }
    }

    fn sample_format(self) -> u16 {
        match self {
            SampleType::U8 => 1,
            SampleType::I16 => 2,
            SampleType::F32 => 3,
        }
    }

    fn push(self, out: &mut Vec<u8>, v: f32) {
        match self {
            SampleType::U8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            SampleType::I16 => out.extend_from_slice(
                &(v.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16).to_le_bytes(),
            ),
            SampleType::F32 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeoTiffOptions {
    pub sample_type: SampleType,
    pub deflate: bool,
    pub tile_size: u32,
    /// Key/value pairs written as GDAL metadata items.
    pub metadata: Vec<(String, String)>,
}

impl Default for GeoTiffOptions {
    fn default() -> Self {
        Self {
            sample_type: SampleType::F32,
            deflate: true,
            tile_size: 256,
            metadata: Vec::new(),
        }
    }
}

struct IfdEntry {
    tag: u16,
    typ: u16,
    count: u32,
    data: Vec<u8>,
}

impl IfdEntry {
    fn shorts(tag: u16, values: &[u16]) -> Self {
        Self {
            tag,
            typ: 3,
            count: values.len() as u32,
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn longs(tag: u16, values: &[u32]) -> Self {
        Self {
            tag,
            typ: 4,
            count: values.len() as u32,
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn doubles(tag: u16, values: &[f64]) -> Self {
        Self {
            tag,
            typ: 12,
            count: values.len() as u32,
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn ascii(tag: u16, text: &str) -> Self {
        let mut data = text.as_bytes().to_vec();
        data.push(0);
        Self {
            tag,
            typ: 2,
            count: data.len() as u32,
            data,
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn format_nodata(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Encodes a raster as a tiled GeoTIFF byte stream.
pub fn encode_geotiff(raster: &Raster, opts: &GeoTiffOptions) -> Result<Vec<u8>> {
    let grid = &raster.grid;
    let spp = raster.band_count();
    let tile = opts.tile_size as usize;
    if tile == 0 || tile % 16 != 0 {
        return Err(Error::Config(format!(
            "tile size must be a positive multiple of 16, got {tile}"
        )));
    }
    let tiles_across = grid.width.div_ceil(tile);
    let tiles_down = grid.height.div_ceil(tile);
    let fill = raster.nodata.map(|v| v as f32).unwrap_or(0.0);

    let mut out = Vec::new();
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());

    let mut offsets = Vec::with_capacity(tiles_across * tiles_down);
    let mut counts = Vec::with_capacity(tiles_across * tiles_down);
    let mut raw = Vec::with_capacity(tile * tile * spp * opts.sample_type.bytes());
    for tr in 0..tiles_down {
        for tc in 0..tiles_across {
            raw.clear();
            for r in tr * tile..(tr + 1) * tile {
                for c in tc * tile..(tc + 1) * tile {
                    for band in &raster.bands {
                        let v = if r < grid.height && c < grid.width {
                            band[r * grid.width + c]
                        } else {
                            fill
                        };
                        opts.sample_type.push(&mut raw, v);
                    }
                }
            }
            let chunk = if opts.deflate {
                let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(6));
                enc.write_all(&raw).expect("in-memory write");
                enc.finish().expect("in-memory write")
            } else {
                raw.clone()
            };
            offsets.push(out.len() as u32);
            counts.push(chunk.len() as u32);
            out.extend_from_slice(&chunk);
            if out.len() % 2 == 1 {
                out.push(0);
            }
        }
    }

    let bits = (opts.sample_type.bytes() * 8) as u16;
    let mut entries = vec![
        IfdEntry::longs(256, &[grid.width as u32]),
        IfdEntry::longs(257, &[grid.height as u32]),
        IfdEntry::shorts(258, &vec![bits; spp]),
        IfdEntry::shorts(259, &[if opts.deflate { 8 } else { 1 }]),
        IfdEntry::shorts(262, &[1]),
        IfdEntry::shorts(277, &[spp as u16]),
        IfdEntry::shorts(284, &[1]),
        IfdEntry::longs(322, &[opts.tile_size]),
        IfdEntry::longs(323, &[opts.tile_size]),
        IfdEntry::longs(324, &offsets),
        IfdEntry::longs(325, &counts),
        IfdEntry::shorts(339, &vec![opts.sample_type.sample_format(); spp]),
        IfdEntry::doubles(33550, &[grid.pixel_width, grid.pixel_height, 0.0]),
        IfdEntry::doubles(33922, &[0.0, 0.0, 0.0, grid.origin_x, grid.origin_y, 0.0]),
    ];
    if spp > 1 {
        entries.push(IfdEntry::shorts(338, &vec![0; spp - 1]));
    }
    let geokeys: Vec<u16> = match grid.crs {
        Crs::Wgs84 => vec![1, 1, 0, 3, 1024, 0, 1, 2, 1025, 0, 1, 1, 2048, 0, 1, 4326],
        utm => vec![
            1,
            1,
            0,
            3,
            1024,
            0,
            1,
            1,
            1025,
            0,
            1,
            1,
            3072,
            0,
            1,
            utm.epsg() as u16,
        ],
    };
    entries.push(IfdEntry::shorts(34735, &geokeys));
    if !opts.metadata.is_empty() {
        let mut xml = String::from("<GDALMetadata>");
        for (k, v) in &opts.metadata {
            xml.push_str(&format!(
                "<Item name=\"{}\">{}</Item>",
                xml_escape(k),
                xml_escape(v)
            ));
        }
        xml.push_str("</GDALMetadata>");
        entries.push(IfdEntry::ascii(TAG_GDAL_METADATA, &xml));
    }
    if let Some(nd) = raster.nodata {
        entries.push(IfdEntry::ascii(42113, &format_nodata(nd)));
    }
    entries.sort_by_key(|e| e.tag);

    let ifd_offset = out.len();
    out[4..8].copy_from_slice(&(ifd_offset as u32).to_le_bytes());
    let mut extra_pos = ifd_offset + 2 + 12 * entries.len() + 4;
    let mut ifd = Vec::new();
    let mut extra = Vec::new();
    ifd.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for e in &entries {
        ifd.extend_from_slice(&e.tag.to_le_bytes());
        ifd.extend_from_slice(&e.typ.to_le_bytes());
        ifd.extend_from_slice(&e.count.to_le_bytes());
        if e.data.len() <= 4 {
            let mut inline = e.data.clone();
            inline.resize(4, 0);
            ifd.extend_from_slice(&inline);
        } else {
            ifd.extend_from_slice(&(extra_pos as u32).to_le_bytes());
            extra.extend_from_slice(&e.data);
            extra_pos += e.data.len();
            if extra_pos % 2 == 1 {
                extra.push(0);
                extra_pos += 1;
            }
        }
    }
    ifd.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&ifd);
    out.extend_from_slice(&extra);
    Ok(out)
}

pub fn write_geotiff(path: &Path, raster: &Raster, opts: &GeoTiffOptions) -> Result<()> {
    let bytes = encode_geotiff(raster, opts)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_f32_vec(result: DecodingResult) -> Option<Vec<f32>> {
    Some(match result {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        _ => return None,
    })
}

fn parse_geokeys(keys: &[u16]) -> Option<(Option<u16>, Vec<(u16, u16)>)> {
    if keys.len() < 4 {
        return None;
    }
    let n = keys[3] as usize;
    let mut raster_type = None;
    let mut out = Vec::new();
    for k in 0..n {
        let base = 4 + 4 * k;
        let entry = keys.get(base..base + 4)?;
        // only inline SHORT values are relevant here
        if entry[1] != 0 {
            continue;
        }
        if entry[0] == 1025 {
            raster_type = Some(entry[3]);
        }
        out.push((entry[0], entry[3]));
    }
    Some((raster_type, out))
}

/// Reads a georeferenced GeoTIFF into memory as `f32` bands.
pub fn read_geotiff(path: &Path) -> Result<Raster> {
    let err = |m: String| Error::raster(path, m);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| err(e.to_string()))?
        .with_limits(Limits::unlimited());
    let (width, height) = dec.dimensions().map_err(|e| err(e.to_string()))?;
    let spp: u16 = dec
        .find_tag_unsigned(Tag::SamplesPerPixel)
        .map_err(|e| err(e.to_string()))?
        .unwrap_or(1);
    let planar: u16 = dec
        .find_tag_unsigned(Tag::PlanarConfiguration)
        .map_err(|e| err(e.to_string()))?
        .unwrap_or(1);

    let scale = dec
        .get_tag_f64_vec(Tag::ModelPixelScaleTag)
        .map_err(|_| err("missing ModelPixelScale tag".into()))?;
    let tie = dec
        .get_tag_f64_vec(Tag::ModelTiepointTag)
        .map_err(|_| err("missing ModelTiepoint tag".into()))?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(err("malformed georeferencing tags".into()));
    }
    let keys = dec
        .get_tag_u16_vec(Tag::GeoKeyDirectoryTag)
        .map_err(|_| err("missing GeoKeyDirectory; CRS undefined".into()))?;
    let (raster_type, keys) =
        parse_geokeys(&keys).ok_or_else(|| err("malformed GeoKeyDirectory".into()))?;
    let epsg = keys
        .iter()
        .find(|(id, _)| *id == 3072)
        .or_else(|| keys.iter().find(|(id, _)| *id == 2048))
        .map(|(_, v)| *v as u32)
        .ok_or_else(|| err("no EPSG code in GeoKeyDirectory".into()))?;
    let crs = Crs::from_epsg(epsg).map_err(|e| err(e.to_string()))?;
    let nodata = match dec.find_tag(Tag::GdalNodata) {
        Ok(Some(v)) => {
            let s = v.into_string().map_err(|e| err(e.to_string()))?;
            let s = s.trim_matches(char::from(0)).trim();
            Some(
                s.parse::<f64>()
                    .map_err(|_| err(format!("unparseable nodata {s:?}")))?,
            )
        }
        _ => None,
    };

    let (sx, sy) = (scale[0], scale[1]);
    let mut origin_x = tie[3] - tie[0] * sx;
    let mut origin_y = tie[4] + tie[1] * sy;
    if raster_type == Some(2) {
        // PixelIsPoint: tie point refers to the pixel center
        origin_x -= 0.5 * sx;
        origin_y += 0.5 * sy;
    }
    let grid = Grid {
        crs,
        origin_x,
        origin_y,
        pixel_width: sx,
        pixel_height: sy,
        width: width as usize,
        height: height as usize,
    };

    let mut buf = DecodingResult::U8(Vec::new());
    dec.read_image_to_buffer(&mut buf)
        .map_err(|e| err(e.to_string()))?;
    let samples = to_f32_vec(buf).ok_or_else(|| err("unsupported sample type".into()))?;
    let n = grid.len();
    let spp = spp as usize;
    if samples.len() < n * spp {
        return Err(err(format!(
            "decoded {} samples, expected {}",
            samples.len(),
            n * spp
        )));
    }
    let bands: Vec<Vec<f32>> = if planar == 2 {
        samples.chunks(n).take(spp).map(|c| c.to_vec()).collect()
    } else {
        (0..spp)
            .map(|b| {
                samples
                    .iter()
                    .skip(b)
                    .step_by(spp)
                    .take(n)
                    .copied()
                    .collect()
            })
            .collect()
    };
    Raster::new(grid, bands, nodata)
}

/// GDAL metadata items of a GeoTIFF written by [`write_geotiff`].
pub fn read_geotiff_metadata(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec =
        Decoder::new(BufReader::new(file)).map_err(|e| Error::raster(path, e.to_string()))?;
    let xml = match dec.find_tag(Tag::Unknown(TAG_GDAL_METADATA)) {
        Ok(Some(v)) => v
            .into_string()
            .map_err(|e| Error::raster(path, e.to_string()))?,
        _ => return Ok(Vec::new()),
    };
    let mut items = Vec::new();
    let mut rest = xml.as_str();
    while let Some(start) = rest.find("<Item name=\"") {
        rest = &rest[start + 12..];
        let Some(q) = rest.find('"') else { break };
        let name = rest[..q].to_string();
        let Some(gt) = rest.find('>') else { break };
        rest = &rest[gt + 1..];
        let Some(end) = rest.find("</Item>") else {
            break;
        };
        let unescape = |s: &str| {
            s.replace("&quot;", "\"")
                .replace("&lt;", "<")
                .replace("&gt;", ">")
                .replace("&amp;", "&")
        };
        items.push((unescape(&name), unescape(&rest[..end])));
        rest = &rest[end..];
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(width: usize, height: usize) -> Grid {
        Grid {
            crs: Crs::Utm {
                zone: 11,
                north: true,
            },
            origin_x: 380_000.0,
            origin_y: 3_780_000.0,
            pixel_width: 10.0,
            pixel_height: 10.0,
            width,
            height,
        }
    }

    #[test]
    fn geotiff_roundtrip_multiband_tiled() {
        let g = grid(300, 270);
        let bands = (0..3)
            .map(|b| (0..g.len()).map(|i| (i * (b + 1)) as f32 * 0.25).collect())
            .collect();
        let raster = Raster::new(g, bands, Some(-9999.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.tif");
        let opts = GeoTiffOptions {
            metadata: vec![
                ("month".into(), "2024-01".into()),
                ("model".into(), "a<b>".into()),
            ],
            ..Default::default()
        };
        write_geotiff(&path, &raster, &opts).unwrap();
        let back = read_geotiff(&path).unwrap();
        assert_eq!(back, raster);
        assert_eq!(
            read_geotiff_metadata(&path).unwrap(),
            vec![
                ("month".to_string(), "2024-01".to_string()),
                ("model".into(), "a<b>".into())
            ]
        );
    }

    #[test]
    fn geotiff_integer_sample_types() {
        let g = Grid {
            crs: Crs::Wgs84,
            origin_x: -118.5,
            origin_y: 34.5,
            pixel_width: 0.1,
            pixel_height: 0.1,
            width: 5,
            height: 4,
        };
        for st in [SampleType::U8, SampleType::I16] {
            let raster = Raster::new(g, vec![(0..20).map(|v| v as f32).collect()], None).unwrap();
            let bytes = encode_geotiff(
                &raster,
                &GeoTiffOptions {
                    sample_type: st,
                    deflate: false,
                    tile_size: 16,
                    metadata: vec![],
                },
            )
            .unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("i.tif");
            std::fs::write(&path, bytes).unwrap();
            let back = read_geotiff(&path).unwrap();
            assert_eq!(back.grid, g);
            assert_eq!(back.bands, raster.bands);
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let g = grid(40, 40);
        let r = Raster::new(g, vec![vec![1.5; 1600]], Some(-1.0)).unwrap();
        let a = encode_geotiff(&r, &GeoTiffOptions::default()).unwrap();
        let b = encode_geotiff(&r, &GeoTiffOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bilinear_sampling() {
        let g = grid(2, 2);
        let r = Raster::new(g, vec![vec![0.0, 10.0, 20.0, 30.0]], Some(-1.0)).unwrap();
        // pixel centers reproduce values exactly
        let (x, y) = g.pixel_center(1, 0);
        assert_eq!(r.sample_bilinear(0, x, y), Some(20.0));
        // midpoint of all four centers
        let (x0, y0) = g.pixel_center(0, 0);
        assert_eq!(r.sample_bilinear(0, x0 + 5.0, y0 - 5.0), Some(15.0));
        // outside extent
        assert_eq!(r.sample_bilinear(0, x0 - 100.0, y0), None);
        // nodata neighbour with weight poisons the sample
        let r = Raster::new(g, vec![vec![0.0, -1.0, 20.0, 30.0]], Some(-1.0)).unwrap();
        assert_eq!(r.sample_bilinear(0, x0 + 5.0, y0 - 5.0), None);
        assert_eq!(r.sample_bilinear(0, x0, y0), Some(0.0));
    }

    #[test]
    fn missing_georeferencing_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.tif");
        let mut f = File::create(&path).unwrap();
        let mut enc = tiff::encoder::TiffEncoder::new(&mut f).unwrap();
        enc.write_image::<tiff::encoder::colortype::Gray32Float>(2, 2, &[0.0; 4])
            .unwrap();
        drop(f);
        assert!(matches!(read_geotiff(&path), Err(Error::Raster { .. })));
    }
}
