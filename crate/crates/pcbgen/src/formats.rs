//! Plain file formats: PGM images, response and training CSVs, geometry JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pcbgen_core::classifier::EpochLog;
use pcbgen_core::geometry::{assemble_model, AntennaModel, ComponentPos, DesignSpace, DimensionSet, Rect};
use pcbgen_core::raster::GeometryImage;
use pcbgen_core::scoring::FrequencyResponse;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};

/// Binary PGM (P5, maxval 255) of channel 1.
pub fn encode_pgm(img: &GeometryImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.codes());
    out
}

/// Parses a P5 image; channels 2 and 3 are regenerated from its shape.
pub fn decode_pgm(bytes: &[u8], resolution: f64) -> Result<GeometryImage> {
    let mut pos = 0;
    let mut fields = [0usize; 4];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments between header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        if k == 0 {
            if tok != "P5" {
                return Err(Error::format("PGM", format!("magic {tok:?}, expected P5")));
            }
        } else {
            *field = tok
                .parse()
                .map_err(|_| Error::format("PGM", format!("bad header field {tok:?}")))?;
        }
    }
    let [_, w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format("PGM", format!("maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    if data.len() != w * h {
        return Err(Error::format(
            "PGM",
            format!("{} raster bytes for a {w}x{h} image", data.len()),
        ));
    }
    Ok(GeometryImage::from_codes(w, h, resolution, data)?)
}

pub fn write_pgm(path: &Path, img: &GeometryImage) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(io_err(path))
}

pub fn read_pgm(path: &Path, resolution: f64) -> Result<GeometryImage> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_pgm(&bytes, resolution).map_err(|e| e.in_file(path))
}

/// `freq_ghz,s11_db` with round-trip exact numbers.
pub fn response_csv(resp: &FrequencyResponse) -> String {
    let mut out = String::from("freq_ghz,s11_db\n");
    for (f, s) in resp.iter() {
        let _ = writeln!(out, "{f},{s}");
    }
    out
}

fn parse_f64(what: &'static str, tok: &str) -> Result<f64> {
    tok.trim()
        .parse()
        .map_err(|_| Error::format(what, format!("not a number: {tok:?}")))
}

pub fn parse_response_csv(text: &str) -> Result<FrequencyResponse> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("freq_ghz,s11_db") {
        return Err(Error::format("response CSV", "header must be freq_ghz,s11_db"));
    }
    let mut freqs = Vec::new();
    let mut s11 = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (f, s) = line
            .split_once(',')
            .ok_or_else(|| Error::format("response CSV", format!("row {line:?}")))?;
        freqs.push(parse_f64("response CSV", f)?);
        s11.push(parse_f64("response CSV", s)?);
    }
    Ok(FrequencyResponse::new(freqs, s11)?)
}

pub fn write_response_csv(path: &Path, resp: &FrequencyResponse) -> Result<()> {
    fs::write(path, response_csv(resp)).map_err(io_err(path))
}

pub fn read_response_csv(path: &Path) -> Result<FrequencyResponse> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_response_csv(&text).map_err(|e| e.in_file(path))
}

/// `epoch,train_mse,val_mse,lr`; a missing validation loss is left empty.
pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse,lr\n");
    for e in log {
        let val = if e.val_mse.is_finite() {
            e.val_mse.to_string()
        } else {
            String::new()
        };
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_mse, val, e.lr);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceJson {
    pub w: f64,
    pub h: f64,
    pub margin: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub top_margin: f64,
    pub anchor_y: f64,
    #[serde(default, skip_serializing_if = "is_default")]
    pub anchor_mode: pcbgen_core::geometry::AnchorMode,
    #[serde(default)]
    pub port_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feed_w: Option<f64>,
    #[serde(default)]
    pub keepouts: Vec<Rect>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

impl From<&DesignSpace> for SpaceJson {
    fn from(s: &DesignSpace) -> Self {
        SpaceJson {
            w: s.width,
            h: s.height,
            margin: s.extension_margin,
            top_margin: s.top_margin,
            anchor_y: s.anchor_y,
            anchor_mode: s.anchor_mode,
            port_h: s.port_height,
            feed_w: s.feed_width,
            keepouts: s.keepouts.clone(),
        }
    }
}

impl From<&SpaceJson> for DesignSpace {
    fn from(s: &SpaceJson) -> Self {
        DesignSpace {
            width: s.w,
            height: s.h,
            extension_margin: s.margin,
            top_margin: s.top_margin,
            anchor_y: s.anchor_y,
            anchor_mode: s.anchor_mode,
            port_height: s.port_h,
            feed_width: s.feed_w,
            keepouts: s.keepouts.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentJson {
    pub w: f64,
    pub h: f64,
    pub x: f64,
    pub y: f64,
}

/// Geometry file: the design space plus every component's size and lower-left
/// corner. `port_h` holds the realized port height, so an external solver
/// sees exactly the feed that was rasterized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub space: SpaceJson,
    pub components: Vec<ComponentJson>,
}

impl GeometryJson {
    pub fn from_model(model: &AntennaModel) -> Self {
        let mut space = SpaceJson::from(&model.space);
        space.port_h = Some(model.port.h);
        GeometryJson {
            id: Some(model.dims.id.clone()),
            space,
            components: model
                .rects()
                .map(|r| ComponentJson {
                    w: r.w,
                    h: r.h,
                    x: r.x,
                    y: r.y,
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<AntennaModel> {
        let space = DesignSpace::from(&self.space);
        let pairs: Vec<(f64, f64)> = self.components.iter().map(|c| (c.w, c.h)).collect();
        let dims = DimensionSet::from_pairs(self.id.clone().unwrap_or_default(), &pairs);
        let pos: Vec<ComponentPos> = self
            .components
            .iter()
            .map(|c| ComponentPos::new(c.x, c.y))
            .collect();
        Ok(assemble_model(&space, &dims, &pos)?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

pub fn write_geometry(path: &Path, model: &AntennaModel) -> Result<()> {
    write_json(path, &GeometryJson::from_model(model))
}

pub fn read_geometry(path: &Path) -> Result<AntennaModel> {
    read_json::<GeometryJson>(path)?
        .to_model()
        .map_err(|e| e.in_file(path))
}
