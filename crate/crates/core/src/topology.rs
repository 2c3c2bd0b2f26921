// SPDX-License-Identifier: Apache-2.0

//! Binary topology matrices.
//!
//! Row `0` is the lowest row of the layout (smallest y), column `0` the
//! leftmost. The text form is
//!
//! ```text
//! P-TOPO <rows> <cols>
//! 0110
//! ...
//! ```
//!
//! with exactly `rows` lines of `cols` characters, row 0 first, each line
//! terminated by `\n`.

use std::fmt;

use crate::error::{Error, Result};

const TEXT_MAGIC: &str = "P-TOPO";

/// Dense binary matrix, row-major.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topology {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl Topology {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Topology {
            rows,
            cols,
            cells: vec![0; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Topology {
            rows,
            cols,
            cells: vec![1; rows * cols],
        }
    }

    /// Builds a matrix from row-major cells, rejecting non-binary entries.
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Size(format!("empty topology {rows}x{cols}")));
        }
        if cells.len() != rows * cols {
            return Err(Error::Size(format!(
                "expected {} cells for {rows}x{cols}, got {}",
                rows * cols,
                cells.len()
            )));
        }
        if let Some(pos) = cells.iter().position(|&v| v > 1) {
            return Err(Error::validation(format!(
                "non-binary entry {} at row {}, col {}",
                cells[pos],
                pos / cols,
                pos % cols
            )));
        }
        Ok(Topology { rows, cols, cells })
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut cells = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_cols {
                return Err(Error::Size(format!(
                    "row {i} has {} entries, expected {n_cols}",
                    row.len()
                )));
            }
            cells.extend_from_slice(row);
        }
        Topology::from_cells(n_rows, n_cols, cells)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.cols + c]
    }

    #[inline]
    pub fn is_set(&self, r: usize, c: usize) -> bool {
        self.get(r, c) == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.cols + c] = v as u8;
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.cells[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<u8> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&v| v == 1).count()
    }

    pub fn transpose(&self) -> Topology {
        let mut out = Topology::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.cells[c * self.rows + r] = self.get(r, c);
            }
        }
        out
    }

    /// Sub-matrix `[r0, r0+h) x [c0, c0+w)`.
    pub fn window(&self, r0: usize, c0: usize, h: usize, w: usize) -> Result<Topology> {
        if r0 + h > self.rows || c0 + w > self.cols || h == 0 || w == 0 {
            return Err(Error::Size(format!(
                "window {h}x{w} at ({r0},{c0}) outside {}x{}",
                self.rows, self.cols
            )));
        }
        let mut cells = Vec::with_capacity(h * w);
        for r in r0..r0 + h {
            cells.extend_from_slice(&self.row(r)[c0..c0 + w]);
        }
        Ok(Topology {
            rows: h,
            cols: w,
            cells,
        })
    }

    /// 4-connected components of 1-cells, each as a sorted list of
    /// `(row, col)`, ordered by their first cell in row-major order.
    pub fn components(&self) -> Vec<Vec<(usize, usize)>> {
        let mut label = vec![usize::MAX; self.cells.len()];
        let mut out = Vec::new();
        for start in 0..self.cells.len() {
            if self.cells[start] != 1 || label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = Vec::new();
            let mut stack = vec![start];
            label[start] = id;
            while let Some(idx) = stack.pop() {
                let (r, c) = (idx / self.cols, idx % self.cols);
                comp.push((r, c));
                let mut visit = |rr: usize, cc: usize| {
                    let j = rr * self.cols + cc;
                    if self.cells[j] == 1 && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                };
                if r > 0 {
                    visit(r - 1, c);
                }
                if r + 1 < self.rows {
                    visit(r + 1, c);
                }
                if c > 0 {
                    visit(r, c - 1);
                }
                if c + 1 < self.cols {
                    visit(r, c + 1);
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{TEXT_MAGIC} {} {}\n", self.rows, self.cols);
        for r in 0..self.rows {
            for &v in self.row(r) {
                s.push(if v == 1 { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Topology> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("line 1: missing P-TOPO header".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != TEXT_MAGIC {
            return Err(Error::Format(format!(
                "line 1: expected `{TEXT_MAGIC} rows cols`, got `{header}`"
            )));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("line 1: bad dimension `{s}`")))
        };
        let (rows, cols) = (parse(parts[1])?, parse(parts[2])?);
        let mut cells = Vec::with_capacity(rows * cols);
        let mut seen = 0;
        for (lineno, line) in lines {
            if seen == rows {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::Format(format!(
                    "line {}: trailing data after {rows} rows",
                    lineno + 1
                )));
            }
            if line.len() != cols {
                return Err(Error::Format(format!(
                    "line {}: expected {cols} characters, got {}",
                    lineno + 1,
                    line.len()
                )));
            }
            for ch in line.chars() {
                match ch {
                    '0' => cells.push(0),
                    '1' => cells.push(1),
                    other => {
                        return Err(Error::Format(format!(
                            "line {}: invalid character `{other}`",
                            lineno + 1
                        )))
                    }
                }
            }
            seen += 1;
        }
        if seen != rows {
            return Err(Error::Format(format!("expected {rows} rows, found {seen}")));
        }
        Topology::from_cells(rows, cols, cells)
    }
}

impl fmt::Debug for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Topology {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, " ")?;
            }
            for &v in self.row(r) {
                write!(f, "{v}")?;
            }
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let t = Topology::from_rows(&[[1u8, 0, 1], [0, 1, 1]]).unwrap();
        let text = t.to_text();
        assert_eq!(text, "P-TOPO 2 3\n101\n011\n");
        assert_eq!(Topology::from_text(&text).unwrap(), t);
    }

    #[test]
    fn text_rejects_bad_rows() {
        assert!(Topology::from_text("P-TOPO 2 2\n10\n1\n").is_err());
        assert!(Topology::from_text("P-TOPO 1 2\n12\n").is_err());
        assert!(Topology::from_text("TOPO 1 1\n1\n").is_err());
        assert!(Topology::from_text("P-TOPO 2 1\n1\n").is_err());
    }

    #[test]
    fn rejects_non_binary() {
        assert!(matches!(
            Topology::from_cells(1, 2, vec![0, 2]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn components_are_four_connected() {
        let t = Topology::from_rows(&[[1u8, 0], [0, 1]]).unwrap();
        assert_eq!(t.components().len(), 2);
        let t = Topology::from_rows(&[[1u8, 1], [0, 1]]).unwrap();
        assert_eq!(t.components(), vec![vec![(0, 0), (0, 1), (1, 1)]]);
    }
}
