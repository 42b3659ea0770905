use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Pointwise maximum of `K` affine pieces `x ↦ α_k·x + c_k` on `R^d`.
///
/// Slopes are stored row-major (`K × d`). Every slope coordinate is bounded
/// by the Lipschitz constant in absolute value; convexity holds by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxAffineFn {
    dim: usize,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    lipschitz: f64,
    upper_bound: f64,
}

impl MaxAffineFn {
    /// Builds a function from `(slope, intercept)` pairs, checking the slope bound.
    pub fn new(dim: usize, pieces: Vec<(Vec<f64>, f64)>, lipschitz: f64, upper_bound: f64) -> Result<Self> {
        check_bounds(lipschitz, upper_bound)?;
        if pieces.is_empty() {
            return Err(Error::InvariantViolation("max-affine function needs at least one piece".into()));
        }
        let mut slopes = Vec::with_capacity(pieces.len() * dim);
        let mut intercepts = Vec::with_capacity(pieces.len());
        for (slope, c) in pieces {
            if slope.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: slope.len() });
            }
            if let Some(bad) = slope.iter().find(|a| !(a.abs() <= lipschitz)) {
                return Err(Error::InvariantViolation(format!(
                    "slope coordinate {bad} exceeds Lipschitz bound {lipschitz}"
                )));
            }
            if !c.is_finite() {
                return Err(Error::InvariantViolation(format!("non-finite intercept {c}")));
            }
            slopes.extend_from_slice(&slope);
            intercepts.push(c);
        }
        Ok(Self { dim, slopes, intercepts, lipschitz, upper_bound })
    }

    /// The constant function `x ↦ value`.
    pub fn constant(dim: usize, value: f64, lipschitz: f64, upper_bound: f64) -> Result<Self> {
        Self::new(dim, vec![(vec![0.0; dim], value)], lipschitz, upper_bound)
    }

    pub(crate) fn from_parts(
        dim: usize,
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
        lipschitz: f64,
        upper_bound: f64,
    ) -> Self {
        debug_assert_eq!(slopes.len(), dim * intercepts.len());
        Self { dim, slopes, intercepts, lipschitz, upper_bound }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_pieces(&self) -> usize {
        self.intercepts.len()
    }

    pub fn slope(&self, k: usize) -> &[f64] {
        &self.slopes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn intercept(&self, k: usize) -> f64 {
        self.intercepts[k]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    /// Iterates over `(slope, intercept)` pairs.
    pub fn pieces(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.slopes.chunks_exact(self.dim.max(1)).zip(self.intercepts.iter().copied())
    }

    /// `max_k α_k·x + c_k`, with a dimension check.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self.value(x))
    }

    /// Unchecked evaluation for hot loops; `x` must have length `dim`.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_and_argmax(x).0
    }

    /// Value together with the index of the first maximizing piece.
    #[inline]
    pub fn value_and_argmax(&self, x: &[f64]) -> (f64, usize) {
        debug_assert_eq!(x.len(), self.dim);
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (k, c) in self.intercepts.iter().enumerate() {
            let row = &self.slopes[k * self.dim..(k + 1) * self.dim];
            let v = row.iter().zip(x).fold(*c, |acc, (a, xi)| acc + a * xi);
            if v > best {
                best = v;
                arg = k;
            }
        }
        (best, arg)
    }

    /// Largest value over an axis-aligned box; attained at a vertex, so it is
    /// computed coordinate-wise per piece.
    pub fn max_over_box(&self, domain: &[(f64, f64)]) -> f64 {
        self.pieces().map(|(slope, c)| c + piece_box_max(slope, domain)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Drops exact duplicate pieces, keeping the first occurrence.
    pub fn dedup_pieces(&mut self) {
        let d = self.dim;
        let mut keep_slopes = Vec::with_capacity(self.slopes.len());
        let mut keep_intercepts: Vec<f64> = Vec::with_capacity(self.intercepts.len());
        for k in 0..self.num_pieces() {
            let row = &self.slopes[k * d..(k + 1) * d];
            let c = self.intercepts[k];
            let dup =
                keep_intercepts.iter().enumerate().any(|(j, cj)| *cj == c && &keep_slopes[j * d..(j + 1) * d] == row);
            if !dup {
                keep_slopes.extend_from_slice(row);
                keep_intercepts.push(c);
            }
        }
        self.slopes = keep_slopes;
        self.intercepts = keep_intercepts;
    }

    /// Plain-text model: header `maxaffine v1 d K L B`, then one
    /// `alpha_1 ... alpha_d c` line per piece.
    pub fn to_text(&self) -> String {
        let mut out =
            format!("maxaffine v1 {} {} {} {}\n", self.dim, self.num_pieces(), self.lipschitz, self.upper_bound);
        for (slope, c) in self.pieces() {
            for a in slope {
                write!(out, "{a} ").unwrap();
            }
            writeln!(out, "{c}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Config("empty model file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "maxaffine" || fields[1] != "v1" {
            return Err(Error::Config(format!("bad model header `{header}`")));
        }
        let dim: usize = parse_field(fields[2])?;
        let k: usize = parse_field(fields[3])?;
        let lipschitz: f64 = parse_field(fields[4])?;
        let upper_bound: f64 = parse_field(fields[5])?;
        let mut pieces = Vec::with_capacity(k);
        for line in lines {
            let nums = line.split_whitespace().map(parse_field::<f64>).collect::<Result<Vec<_>>>()?;
            if nums.len() != dim + 1 {
                return Err(Error::DimensionMismatch { expected: dim + 1, got: nums.len() });
            }
            pieces.push((nums[..dim].to_vec(), nums[dim]));
        }
        if pieces.len() != k {
            return Err(Error::Config(format!("header announces {k} pieces, found {}", pieces.len())));
        }
        Self::new(dim, pieces, lipschitz, upper_bound)
    }
}

pub(crate) fn piece_box_max(slope: &[f64], domain: &[(f64, f64)]) -> f64 {
    slope.iter().zip(domain).map(|(a, (lo, hi))| (a * lo).max(a * hi)).sum()
}

pub(crate) fn check_bounds(lipschitz: f64, upper_bound: f64) -> Result<()> {
    if !(lipschitz >= 0.0) {
        return Err(Error::InvalidBounds(format!("Lipschitz bound must be >= 0, got {lipschitz}")));
    }
    if !(upper_bound > 0.0) {
        return Err(Error::InvalidBounds(format!("upper bound must be > 0, got {upper_bound}")));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Config(format!("cannot parse `{s}`")))
}
