//! Regular-grid scalar fields of seabed complexity.
//!
//! Values live at cell centers. Cell `(i, j)` covers
//! `[origin.x + i*cell_size, origin.x + (i+1)*cell_size)` horizontally, with
//! row `j = 0` at the minimum-y edge. All values are normalized to `[0, 1]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    origin: Point2<f64>,
    cell_size: f64,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(
        origin: Point2<f64>,
        cell_size: f64,
        width: usize,
        height: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::param(format!(
                "field must be at least 2x2 cells, got {width}x{height}"
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::param(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(Error::param("field origin must be finite"));
        }
        if values.len() != width * height {
            return Err(Error::param(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::param(format!(
                "value {v} at index {k} is outside [0, 1]"
            )));
        }
        Ok(Self {
            origin,
            cell_size,
            width,
            height,
            values,
        })
    }

    pub fn constant(
        origin: Point2<f64>,
        cell_size: f64,
        width: usize,
        height: usize,
        level: f64,
    ) -> Result<Self> {
        Self::new(
            origin,
            cell_size,
            width,
            height,
            vec![level; width * height],
        )
    }

    /// Builds a field by evaluating `f` at every cell center. Results are
    /// clipped to `[0, 1]`.
    pub fn from_fn(
        origin: Point2<f64>,
        cell_size: f64,
        width: usize,
        height: usize,
        mut f: impl FnMut(Point2<f64>) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                let p = Point2::new(
                    origin.x + (i as f64 + 0.5) * cell_size,
                    origin.y + (j as f64 + 0.5) * cell_size,
                );
                values.push(f(p).clamp(0.0, 1.0));
            }
        }
        Self::new(origin, cell_size, width, height, values)
    }

    /// A field with the same geometry as `self` and the given values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.origin, self.cell_size, self.width, self.height, values)
    }

    pub fn origin(&self) -> Point2<f64> {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.cell_size,
            self.height as f64 * self.cell_size,
        )
    }

    pub fn max_corner(&self) -> Point2<f64> {
        let (w, h) = self.extent();
        Point2::new(self.origin.x + w, self.origin.y + h)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point2<f64> {
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.cell_size,
            self.origin.y + (j as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell centers in row-major order.
    pub fn cell_centers(&self) -> impl Iterator<Item = Point2<f64>> + '_ {
        (0..self.height).flat_map(move |j| (0..self.width).map(move |i| self.cell_center(i, j)))
    }

    pub fn contains(&self, p: Point2<f64>) -> bool {
        let max = self.max_corner();
        p.x >= self.origin.x && p.x <= max.x && p.y >= self.origin.y && p.y <= max.y
    }

    /// Cell containing `p`. Points on the far boundary map to the last cell.
    pub fn cell_of(&self, p: Point2<f64>) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let i = ((p.x - self.origin.x) / self.cell_size).floor() as usize;
        let j = ((p.y - self.origin.y) / self.cell_size).floor() as usize;
        Some((i.min(self.width - 1), j.min(self.height - 1)))
    }

    /// Bilinear interpolation between the four cell centers surrounding `p`.
    ///
    /// Within half a cell of the boundary the nearest row/column of centers
    /// is used, so the field is continuous over the whole bounding rectangle.
    pub fn sample_bilinear(&self, p: Point2<f64>) -> Result<f64> {
        if !self.contains(p) {
            return Err(Error::OutOfBounds { x: p.x, y: p.y });
        }
        Ok(self.sample_bilinear_unchecked(p))
    }

    pub(crate) fn sample_bilinear_unchecked(&self, p: Point2<f64>) -> f64 {
        let u = ((p.x - self.origin.x) / self.cell_size - 0.5).clamp(0.0, (self.width - 1) as f64);
        let v = ((p.y - self.origin.y) / self.cell_size - 0.5).clamp(0.0, (self.height - 1) as f64);
        let i0 = (u.floor() as usize).min(self.width - 2);
        let j0 = (v.floor() as usize).min(self.height - 2);
        let tu = u - i0 as f64;
        let tv = v - j0 as f64;
        let v00 = self.value(i0, j0);
        let v10 = self.value(i0 + 1, j0);
        let v01 = self.value(i0, j0 + 1);
        let v11 = self.value(i0 + 1, j0 + 1);
        let bottom = v00 + (v10 - v00) * tu;
        let top = v01 + (v11 - v01) * tu;
        bottom + (top - bottom) * tv
    }

    /// Marks every cell whose value is strictly above `threshold`.
    pub fn threshold_obstacles(&self, threshold: f64) -> Result<ObstacleGrid> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::param(format!(
                "threshold {threshold} is outside [0, 1]"
            )));
        }
        Ok(ObstacleGrid {
            origin: self.origin,
            cell_size: self.cell_size,
            width: self.width,
            height: self.height,
            occupied: self.values.iter().map(|&v| v > threshold).collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 20);
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            self.width, self.height, self.cell_size, self.origin.x, self.origin.y
        );
        for row in self.values.chunks(self.width) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text())
            .map_err(|e| Error::io(format!("writing field {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading field {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    /// Parses the plain-text field format; lines starting with `#` are
    /// comments. `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l))
            .filter(|(_, l)| !l.trim_start().starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(
                hline,
                format!(
                    "header needs 5 fields (width height cell_size origin_x origin_y), got {}",
                    fields.len()
                ),
            ));
        }
        let width: usize = fields[0]
            .parse()
            .map_err(|_| err(hline, format!("bad width '{}'", fields[0])))?;
        let height: usize = fields[1]
            .parse()
            .map_err(|_| err(hline, format!("bad height '{}'", fields[1])))?;
        let parse_real = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(hline, format!("bad {what} '{s}'")))
        };
        let cell_size = parse_real(fields[2], "cell_size")?;
        let ox = parse_real(fields[3], "origin_x")?;
        let oy = parse_real(fields[4], "origin_y")?;
        if width < 2 || height < 2 {
            return Err(err(
                hline,
                format!("grid must be at least 2x2, got {width}x{height}"),
            ));
        }
        if cell_size <= 0.0 {
            return Err(err(
                hline,
                format!("cell_size must be positive, got {cell_size}"),
            ));
        }

        let mut values = Vec::with_capacity(width * height);
        let mut rows = 0;
        for (line_no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if rows == height {
                return Err(err(line_no, format!("more than {height} data rows")));
            }
            let before = values.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| err(line_no, format!("bad value '{tok}'")))?;
                if !v.is_finite() {
                    return Err(err(line_no, format!("non-finite value '{tok}'")));
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(err(line_no, format!("value {v} is outside [0, 1]")));
                }
                values.push(v);
            }
            let n = values.len() - before;
            if n != width {
                return Err(err(line_no, format!("expected {width} values, found {n}")));
            }
            rows += 1;
        }
        if rows != height {
            return Err(err(
                text.lines().count().max(1),
                format!("expected {height} data rows, found {rows}"),
            ));
        }
        Self::new(Point2::new(ox, oy), cell_size, width, height, values)
    }
}

/// Boolean occupancy over the same grid as the field it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleGrid {
    origin: Point2<f64>,
    cell_size: f64,
    width: usize,
    height: usize,
    occupied: Vec<bool>,
}

impl ObstacleGrid {
    /// A grid with no occupied cells, matching `field`'s geometry.
    pub fn empty_like(field: &ScalarField) -> Self {
        Self {
            origin: field.origin,
            cell_size: field.cell_size,
            width: field.width,
            height: field.height,
            occupied: vec![false; field.len()],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Point2<f64> {
        self.origin
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        self.occupied[j * self.width + i]
    }

    pub fn set_occupied(&mut self, i: usize, j: usize, occupied: bool) {
        self.occupied[j * self.width + i] = occupied;
    }

    pub fn cell_of(&self, p: Point2<f64>) -> Option<(usize, usize)> {
        let max_x = self.origin.x + self.width as f64 * self.cell_size;
        let max_y = self.origin.y + self.height as f64 * self.cell_size;
        if !(p.x >= self.origin.x && p.x <= max_x && p.y >= self.origin.y && p.y <= max_y) {
            return None;
        }
        let i = ((p.x - self.origin.x) / self.cell_size).floor() as usize;
        let j = ((p.y - self.origin.y) / self.cell_size).floor() as usize;
        Some((i.min(self.width - 1), j.min(self.height - 1)))
    }

    /// True when `p` is inside the grid and its cell is free.
    pub fn is_free(&self, p: Point2<f64>) -> bool {
        self.cell_of(p)
            .is_some_and(|(i, j)| !self.is_occupied(i, j))
    }
}
