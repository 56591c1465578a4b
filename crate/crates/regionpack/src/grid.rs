//! Plain-text scalar field interchange format.
//!
//! Pixel fields (gradient/difference magnitudes, residuals) and macroblock
//! maps travel between tools as small text grids. Two flavors are accepted
//! on read and distinguished by the first line:
//!
//! ```text
//! GRID <rows> <cols>          GRID,<rows>,<cols>
//! v v v ... v                 r0c0,r0c1,...
//! ...                         ...
//! ```
//!
//! The CSV flavor carries a second header line of column labels which is
//! ignored. Writers emit the space-separated flavor with values rounded to
//! 6 significant digits; the format is an interchange surface, not a
//! bit-exact archive. All read errors carry a 1-based line number.

use std::fmt;
use std::fs;
use std::path::Path;

/// Row-major scalar grid as read from or written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    pub rows: usize,
    pub cols: usize,
    /// `rows * cols` values, row-major.
    pub values: Vec<f64>,
}

impl RawGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if rows == 0 || cols == 0 {
            return Err(GridError::EmptyShape { rows, cols });
        }
        if values.len() != rows * cols {
            return Err(GridError::LengthMismatch { rows, cols, len: values.len() });
        }
        Ok(RawGrid { rows, cols, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.values[row * self.cols + col]
    }
}

#[derive(Debug)]
pub enum GridError {
    Io(std::io::Error),
    EmptyShape { rows: usize, cols: usize },
    LengthMismatch { rows: usize, cols: usize, len: usize },
    /// Anything wrong with the text itself; `line` is 1-based.
    Malformed { line: usize, msg: String },
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::Io(e) => write!(f, "i/o error: {e}"),
            GridError::EmptyShape { rows, cols } => {
                write!(f, "grid must be non-empty, got {rows}x{cols}")
            }
            GridError::LengthMismatch { rows, cols, len } => {
                write!(f, "grid {rows}x{cols} needs {} values, got {len}", rows * cols)
            }
            GridError::Malformed { line, msg } => write!(f, "line {line}: {msg}"),
        }
    }
}

impl std::error::Error for GridError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            GridError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for GridError {
    fn from(e: std::io::Error) -> Self {
        GridError::Io(e)
    }
}

pub fn read_grid(path: &Path) -> Result<RawGrid, GridError> {
    read_grid_str(&fs::read_to_string(path)?)
}

pub fn read_grid_str(text: &str) -> Result<RawGrid, GridError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "empty input, expected GRID header"))?;

    let csv = header.contains(',');
    let sep: fn(char) -> bool = if csv { |c| c == ',' } else { char::is_whitespace };

    let head: Vec<&str> = header.split(sep).filter(|t| !t.is_empty()).collect();
    if head.len() != 3 || head[0] != "GRID" {
        return Err(malformed(1, format!("expected `GRID <rows> <cols>` header, got `{header}`")));
    }
    let rows: usize = head[1]
        .trim()
        .parse()
        .map_err(|_| malformed(1, format!("bad row count `{}`", head[1])))?;
    let cols: usize = head[2]
        .trim()
        .parse()
        .map_err(|_| malformed(1, format!("bad column count `{}`", head[2])))?;
    if rows == 0 || cols == 0 {
        return Err(malformed(1, format!("grid must be non-empty, got {rows}x{cols}")));
    }

    if csv {
        // Column-label line; content is irrelevant, presence is mandatory.
        lines
            .next()
            .ok_or_else(|| malformed(2, "missing column-label line in CSV grid"))?;
    }

    let mut values = Vec::with_capacity(rows * cols);
    let mut filled = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue; // tolerate trailing blank lines
        }
        if filled == rows {
            return Err(malformed(lineno, format!("expected {rows} data rows, found extra data")));
        }
        let mut count = 0usize;
        for tok in line.split(sep).map(str::trim).filter(|t| !t.is_empty()) {
            let v: f64 = tok
                .parse()
                .map_err(|_| malformed(lineno, format!("bad value `{tok}`")))?;
            if !v.is_finite() {
                return Err(malformed(lineno, format!("non-finite value `{tok}`")));
            }
            values.push(v);
            count += 1;
        }
        if count != cols {
            return Err(malformed(lineno, format!("expected {cols} values, got {count}")));
        }
        filled += 1;
    }
    if filled != rows {
        return Err(malformed(
            text.lines().count().max(1),
            format!("expected {rows} data rows, got {filled}"),
        ));
    }
    RawGrid::new(rows, cols, values)
}

fn malformed(line: usize, msg: impl Into<String>) -> GridError {
    GridError::Malformed { line, msg: msg.into() }
}

pub fn write_grid(path: &Path, grid: &RawGrid) -> Result<(), GridError> {
    fs::write(path, to_grid_string(grid)).map_err(GridError::Io)
}

pub fn to_grid_string(grid: &RawGrid) -> String {
    let mut out = String::with_capacity(grid.values.len() * 10 + 32);
    out.push_str(&format!("GRID {} {}\n", grid.rows, grid.cols));
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if c > 0 {
                out.push(' ');
            }
            out.push_str(&fmt_sig6(grid.get(r, c)));
        }
        out.push('\n');
    }
    out
}

/// Format with 6 significant digits, plain decimal where reasonable.
///
/// Magnitudes outside `[1e-4, 1e15)` switch to scientific notation so the
/// output never degenerates into long zero runs.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let mag = v.abs();
    if !(1e-4..1e15).contains(&mag) {
        return format!("{:.5e}", v);
    }
    let exp = mag.log10().floor() as i32;
    // Round at the 6th significant digit first; the format precision below
    // only controls decimals and cannot round the integer part.
    let scale = 10f64.powi(exp - 5);
    let rounded = (v / scale).round() * scale;
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{:.*}", decimals, rounded);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
