//! Rectangle components, design spaces and the placement rules that turn
//! raw dimensions and positions into a legal antenna model.
//!
//! All lengths are millimeters. A component is positioned by its lower-left
//! corner. Random placement happens in the *extended area*: the design space
//! grown by `extension_margin` on the left, right and bottom edges, so that
//! components can reach the ground line at `y = 0`. Whatever sticks out of the
//! design space is clipped away before rasterization or simulation.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Slack for floating-point comparisons against extended-area bounds.
const EPS: f64 = 1e-9;

/// Axis-aligned rectangle, lower-left corner plus size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn top(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Intersection with positive area, if any.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.top().min(other.top());
        if x1 > x0 && y1 > y0 {
            Some(Rect::new(x0, y0, x1 - x0, y1 - y0))
        } else {
            None
        }
    }

    /// Half-open containment `[x, x+w) x [y, y+h)`.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.top()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDims {
    pub width: f64,
    pub height: f64,
}

impl ComponentDims {
    pub const fn new(width: f64, height: f64) -> Self {
        ComponentDims { width, height }
    }

    pub fn check(&self, index: usize) -> Result<()> {
        if !(self.width.is_finite() && self.height.is_finite()) {
            return Err(Error::InvalidDims {
                index,
                reason: "non-finite size",
            });
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidDims {
                index,
                reason: "width and height must be positive",
            });
        }
        Ok(())
    }
}

/// Lower-left corner of a component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentPos {
    pub x: f64,
    pub y: f64,
}

impl ComponentPos {
    pub const fn new(x: f64, y: f64) -> Self {
        ComponentPos { x, y }
    }
}

/// Ordered component dimensions. Component 0 carries the feed port.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionSet {
    pub id: alloc::string::String,
    pub dims: Vec<ComponentDims>,
}

impl DimensionSet {
    pub fn new(id: impl Into<alloc::string::String>, dims: Vec<ComponentDims>) -> Self {
        DimensionSet {
            id: id.into(),
            dims,
        }
    }

    /// Convenience constructor from `(width, height)` pairs.
    pub fn from_pairs(id: impl Into<alloc::string::String>, pairs: &[(f64, f64)]) -> Self {
        Self::new(
            id,
            pairs
                .iter()
                .map(|&(w, h)| ComponentDims::new(w, h))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidDims {
                index: 0,
                reason: "dimension set is empty",
            });
        }
        self.dims
            .iter()
            .enumerate()
            .try_for_each(|(i, d)| d.check(i))
    }
}

/// How the anchor coordinate pins component 1 vertically.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorMode {
    /// The horizontal center line of component 1 sits at `anchor_y`.
    #[default]
    Center,
    /// The lower edge of component 1 sits at `anchor_y`.
    LowerEdge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub width: f64,
    pub height: f64,
    pub extension_margin: f64,
    /// Extension above the design space. Zero unless a layout needs it.
    #[serde(default)]
    pub top_margin: f64,
    pub anchor_y: f64,
    #[serde(default)]
    pub anchor_mode: AnchorMode,
    /// Explicit port height. `None` derives it at assembly time.
    #[serde(default)]
    pub port_height: Option<f64>,
    /// Explicit feed width. `None` means `min(component-1 width, 1 mm)`.
    #[serde(default)]
    pub feed_width: Option<f64>,
    /// Fixed environment metal, outside the design-space interior.
    #[serde(default)]
    pub keepouts: Vec<Rect>,
}

impl DesignSpace {
    pub fn new(width: f64, height: f64) -> Self {
        DesignSpace {
            width,
            height,
            extension_margin: 1.0,
            top_margin: 0.0,
            anchor_y: 0.5,
            anchor_mode: AnchorMode::Center,
            port_height: None,
            feed_width: None,
            keepouts: Vec::new(),
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.extension_margin = margin;
        self
    }

    pub fn with_top_margin(mut self, margin: f64) -> Self {
        self.top_margin = margin;
        self
    }

    pub fn with_anchor(mut self, anchor_y: f64, mode: AnchorMode) -> Self {
        self.anchor_y = anchor_y;
        self.anchor_mode = mode;
        self
    }

    pub fn with_keepouts(mut self, keepouts: Vec<Rect>) -> Self {
        self.keepouts = keepouts;
        self
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width, self.height)
    }

    /// The design space grown by the margin on the left, right and bottom,
    /// and by `top_margin` on top.
    pub fn extended(&self) -> Rect {
        let m = self.extension_margin;
        Rect::new(-m, -m, self.width + 2.0 * m, self.height + m + self.top_margin)
    }

    pub fn check(&self) -> Result<()> {
        let finite = [
            self.width,
            self.height,
            self.extension_margin,
            self.top_margin,
            self.anchor_y,
        ]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSpace("non-finite field"));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidSpace("width and height must be positive"));
        }
        if self.extension_margin < 0.0 || self.top_margin < 0.0 {
            return Err(Error::InvalidSpace("extension margins must be >= 0"));
        }
        if self.anchor_y < 0.0 || self.anchor_y > self.height {
            return Err(Error::InvalidSpace("anchor_y must lie in [0, height]"));
        }
        if matches!(self.port_height, Some(p) if !(p >= 0.0)) {
            return Err(Error::InvalidSpace("port height must be >= 0"));
        }
        if matches!(self.feed_width, Some(f) if !(f > 0.0)) {
            return Err(Error::InvalidSpace("feed width must be > 0"));
        }
        if self
            .keepouts
            .iter()
            .any(|k| k.intersect(&self.bounds()).is_some())
        {
            return Err(Error::InvalidSpace(
                "keepouts must lie outside the design-space interior",
            ));
        }
        Ok(())
    }

    /// Legal lower-left corner range `(x_lo, x_hi, y_lo, y_hi)` for a
    /// component, or `None` when it cannot fit in the extended area.
    pub fn legal_range(&self, dims: &ComponentDims) -> Option<(f64, f64, f64, f64)> {
        let ext = self.extended();
        let x_hi = ext.right() - dims.width;
        let y_hi = ext.top() - dims.height;
        if x_hi < ext.x || y_hi < ext.y {
            None
        } else {
            Some((ext.x, x_hi, ext.y, y_hi))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Edge::Left => "left",
            Edge::Right => "right",
            Edge::Bottom => "bottom",
            Edge::Top => "top",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Legal,
    Illegal(Edge),
}

impl Verdict {
    pub fn is_legal(&self) -> bool {
        matches!(self, Verdict::Legal)
    }
}

/// Checks that `[x, x+w] x [y, y+h]` lies inside the extended area. The first
/// violated edge is reported, in left/right/bottom/top order.
pub fn validate_placement(space: &DesignSpace, dims: &ComponentDims, pos: &ComponentPos) -> Verdict {
    let ext = space.extended();
    if !pos.x.is_finite() || pos.x < ext.x - EPS {
        return Verdict::Illegal(Edge::Left);
    }
    if pos.x + dims.width > ext.right() + EPS {
        return Verdict::Illegal(Edge::Right);
    }
    if !pos.y.is_finite() || pos.y < ext.y - EPS {
        return Verdict::Illegal(Edge::Bottom);
    }
    if pos.y + dims.height > ext.top() + EPS {
        return Verdict::Illegal(Edge::Top);
    }
    Verdict::Legal
}

/// A legal antenna: dimensions, positions (component 1 anchored) and feed port.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntennaModel {
    pub space: DesignSpace,
    pub dims: DimensionSet,
    pub positions: Vec<ComponentPos>,
    pub port: Rect,
}

impl AntennaModel {
    pub fn rects(&self) -> impl Iterator<Item = Rect> + '_ {
        self.dims
            .dims
            .iter()
            .zip(&self.positions)
            .map(|(d, p)| Rect::new(p.x, p.y, d.width, d.height))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Vertical center of component 1.
    pub fn anchor_center(&self) -> f64 {
        self.positions[0].y + self.dims.dims[0].height / 2.0
    }
}

/// Lower edge of component 1 once the anchor rule is applied.
pub fn anchored_y(space: &DesignSpace, first: &ComponentDims) -> f64 {
    match space.anchor_mode {
        AnchorMode::Center => space.anchor_y - first.height / 2.0,
        AnchorMode::LowerEdge => space.anchor_y,
    }
}

/// Builds a model from raw positions: validates every placement, pins
/// component 1 to the anchor and attaches the feed port under its center.
///
/// The port spans `y in [0, port_height]`. When the space leaves the port
/// height open it is `max(anchor_y, lower edge of component 1)`, which bridges
/// any gap to ground and otherwise overlays the foot of component 1.
pub fn assemble_model(
    space: &DesignSpace,
    dims: &DimensionSet,
    positions: &[ComponentPos],
) -> Result<AntennaModel> {
    space.check()?;
    dims.check()?;
    if dims.len() != positions.len() {
        return Err(Error::LengthMismatch {
            dims: dims.len(),
            positions: positions.len(),
        });
    }
    for (index, (d, p)) in dims.dims.iter().zip(positions).enumerate() {
        // component 1's y is replaced by the anchor, so only its x is checked
        let p = if index == 0 {
            ComponentPos::new(p.x, space.extended().y)
        } else {
            *p
        };
        if let Verdict::Illegal(edge) = validate_placement(space, d, &p) {
            return Err(Error::IllegalPlacement { index, edge });
        }
    }

    let first = dims.dims[0];
    let y1 = anchored_y(space, &first);
    if y1 + first.height <= 0.0 {
        return Err(Error::BelowGround);
    }
    let mut positions = positions.to_vec();
    positions[0].y = y1;

    let feed_w = space.feed_width.unwrap_or(first.width.min(1.0));
    let port_h = space.port_height.unwrap_or(space.anchor_y.max(y1));
    let cx = positions[0].x + first.width / 2.0;
    let port = Rect::new(cx - feed_w / 2.0, 0.0, feed_w, port_h);

    Ok(AntennaModel {
        space: space.clone(),
        dims: dims.clone(),
        positions,
        port,
    })
}

/// Metal that survives clipping, in component order, plus the untouched
/// port region and environment keepouts.
#[derive(Clone, Debug, PartialEq)]
pub struct ClippedGeometry {
    pub metal: Vec<Rect>,
    pub port: Rect,
    pub keepouts: Vec<Rect>,
}

impl ClippedGeometry {
    pub fn metal_area(&self) -> f64 {
        self.metal.iter().map(Rect::area).sum()
    }

    /// Clips again against `bounds`; a no-op on output of [`clip_to_space`].
    pub fn reclip(&self, bounds: &Rect) -> ClippedGeometry {
        ClippedGeometry {
            metal: clip_rects(self.metal.iter().copied(), bounds),
            port: self.port,
            keepouts: self.keepouts.clone(),
        }
    }
}

pub fn clip_rects(rects: impl IntoIterator<Item = Rect>, bounds: &Rect) -> Vec<Rect> {
    rects
        .into_iter()
        .filter_map(|r| r.intersect(bounds))
        .collect()
}

/// Intersects every component with `[0, W] x [0, H]`, dropping empty ones.
pub fn clip_to_space(model: &AntennaModel) -> ClippedGeometry {
    ClippedGeometry {
        metal: clip_rects(model.rects(), &model.space.bounds()),
        port: model.port,
        keepouts: model.space.keepouts.clone(),
    }
}

/// Draws every component's lower-left corner uniformly from its legal range.
/// Component 1's `y` is drawn too and later replaced by the anchor.
pub fn random_placement<R: Rng + ?Sized>(
    space: &DesignSpace,
    dims: &DimensionSet,
    rng: &mut R,
) -> Result<Vec<ComponentPos>> {
    let ranges = dims
        .dims
        .iter()
        .enumerate()
        .map(|(index, d)| space.legal_range(d).ok_or(Error::Unplaceable { index }))
        .collect::<Result<Vec<_>>>()?;
    Ok(ranges
        .into_iter()
        .map(|(x0, x1, y0, y1)| ComponentPos::new(uniform(rng, x0, x1), uniform(rng, y0, y1)))
        .collect())
}

/// `random_placement` followed by `assemble_model`.
pub fn random_model<R: Rng + ?Sized>(
    space: &DesignSpace,
    dims: &DimensionSet,
    rng: &mut R,
) -> Result<AntennaModel> {
    let positions = random_placement(space, dims, rng)?;
    assemble_model(space, dims, &positions)
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}
