//! Finite measures on a bounded opinion interval.
//!
//! A measure is stored as sorted cell edges plus a nonnegative mass per
//! cell. Mass is spread uniformly inside a positive-width cell; a
//! zero-width cell carries its mass as an atom.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{exact_sum, DoubleDouble};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("interval bounds must satisfy lo < hi (got lo={lo}, hi={hi})")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("total mass must be positive and finite (got {0})")]
    NonPositiveMass(f64),
    #[error("a partition needs at least one cell")]
    NoCells,
    #[error("expected {expected} edges for {cells} cells, got {got}")]
    LengthMismatch { expected: usize, cells: usize, got: usize },
    #[error("edges must be finite and non-decreasing (violation at edge {0})")]
    UnsortedEdges(usize),
    #[error("cell {0} has a negative or non-finite mass")]
    InvalidCellMass(usize),
    #[error("window [{a}, {b}] is inverted")]
    InvertedWindow { a: f64, b: f64 },
    #[error("interval [{a}, {b}] is degenerate")]
    DegenerateInterval { a: f64, b: f64 },
    #[error("density bounds must satisfy 0 < min <= max < inf (got {min}, {max})")]
    InvalidDensity { min: f64, max: f64 },
    #[error("all mass is atomic; density bounds are undefined")]
    AllAtomic,
    #[error("atom positions must be finite and strictly increasing")]
    UnsortedAtoms,
    #[error("malformed partition data: {0}")]
    Parse(String),
}

/// Mass and first moment of a measure restricted to a window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowMoments {
    pub mass: f64,
    pub moment: f64,
}

impl WindowMoments {
    pub fn average(&self) -> Option<f64> {
        (self.mass > 0.0).then(|| self.moment / self.mass)
    }
}

impl std::ops::Add for WindowMoments {
    type Output = WindowMoments;
    fn add(self, rhs: Self) -> Self {
        WindowMoments { mass: self.mass + rhs.mass, moment: self.moment + rhs.moment }
    }
}

/// Minimum and maximum density over the positive-width, positive-mass cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityBounds {
    pub min: f64,
    pub max: f64,
    /// Some mass sits in atoms, which the bounds ignore.
    pub has_atoms: bool,
}

/// Piecewise-constant mass distribution over sorted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionPartition {
    edges: Vec<f64>,
    masses: Vec<f64>,
    total: f64,
}

impl OpinionPartition {
    pub fn new(edges: Vec<f64>, masses: Vec<f64>) -> Result<Self, MeasureError> {
        if masses.is_empty() {
            return Err(MeasureError::NoCells);
        }
        if edges.len() != masses.len() + 1 {
            return Err(MeasureError::LengthMismatch {
                expected: masses.len() + 1,
                cells: masses.len(),
                got: edges.len(),
            });
        }
        for (i, e) in edges.iter().enumerate() {
            if !e.is_finite() || (i > 0 && *e < edges[i - 1]) {
                return Err(MeasureError::UnsortedEdges(i));
            }
        }
        if let Some(i) = masses.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(MeasureError::InvalidCellMass(i));
        }
        let total = exact_sum(masses.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(MeasureError::NonPositiveMass(total));
        }
        Ok(Self { edges, masses, total })
    }

    /// `n_cells` equal-width cells on `[lo, hi]` sharing `total_mass` equally.
    pub fn from_uniform(lo: f64, hi: f64, total_mass: f64, n_cells: usize) -> Result<Self, MeasureError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(MeasureError::InvalidBounds { lo, hi });
        }
        if !(total_mass > 0.0 && total_mass.is_finite()) {
            return Err(MeasureError::NonPositiveMass(total_mass));
        }
        if n_cells == 0 {
            return Err(MeasureError::NoCells);
        }
        let width = hi - lo;
        // Upper half measured from `hi`, so `U(-x, x)` is exactly mirror symmetric.
        let n = n_cells as f64;
        let edges: Vec<f64> = (0..=n_cells)
            .map(|i| {
                if 2 * i <= n_cells {
                    lo + width * (i as f64) / n
                } else {
                    hi - width * ((n_cells - i) as f64) / n
                }
            })
            .collect();
        let masses = vec![total_mass / n_cells as f64; n_cells];
        Self::new(edges, masses)
    }

    /// Purely atomic measure; empty gap cells separate consecutive atoms.
    pub fn from_atoms(atoms: &[(f64, f64)]) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::NoCells);
        }
        for (i, &(p, m)) in atoms.iter().enumerate() {
            if !p.is_finite() || (i > 0 && p <= atoms[i - 1].0) {
                return Err(MeasureError::UnsortedAtoms);
            }
            if !(m > 0.0 && m.is_finite()) {
                return Err(MeasureError::InvalidCellMass(i));
            }
        }
        let mut edges = Vec::with_capacity(3 * atoms.len());
        let mut masses = Vec::with_capacity(2 * atoms.len());
        for (i, &(p, m)) in atoms.iter().enumerate() {
            if i > 0 {
                masses.push(0.0);
            }
            edges.push(p);
            edges.push(p);
            masses.push(m);
        }
        // edges currently [p0, p0, p1, p1, ...]: the gap cell between
        // consecutive atoms reuses their positions as edges.
        Self::new(edges, masses)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn n_cells(&self) -> usize {
        self.masses.len()
    }

    /// `(left, right, mass)` of cell `i`.
    pub fn cell(&self, i: usize) -> (f64, f64, f64) {
        (self.edges[i], self.edges[i + 1], self.masses[i])
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.n_cells()).map(move |i| self.cell(i))
    }

    /// Correctly rounded total mass (independent of cell order).
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    pub fn total_moment(&self) -> f64 {
        exact_sum(self.cells().map(|(l, r, m)| m * 0.5 * (l + r)))
    }

    /// Indices of the first and last positive-mass cells.
    fn supported_range(&self) -> (usize, usize) {
        let first = self.masses.iter().position(|&m| m > 0.0).unwrap_or(0);
        let last = self.masses.iter().rposition(|&m| m > 0.0).unwrap_or(0);
        (first, last)
    }

    /// Closed hull of the support, with leading and trailing empty cells trimmed.
    pub fn support(&self) -> (f64, f64) {
        let (first, last) = self.supported_range();
        (self.edges[first], self.edges[last + 1])
    }

    pub fn support_width(&self) -> f64 {
        let (lo, hi) = self.support();
        hi - lo
    }

    pub fn has_atoms(&self) -> bool {
        self.cells().any(|(l, r, m)| m > 0.0 && r == l)
    }

    /// No atoms and no empty cells inside the support, i.e. the measure has a
    /// density bounded away from zero on an interval.
    pub fn is_absolutely_continuous(&self) -> bool {
        let (first, last) = self.supported_range();
        (first..=last).all(|i| self.masses[i] > 0.0 && self.edges[i + 1] > self.edges[i])
    }

    pub fn density_bounds(&self) -> Result<DensityBounds, MeasureError> {
        let mut min = f64::INFINITY;
        let mut max = 0.0f64;
        let mut has_atoms = false;
        for (l, r, m) in self.cells() {
            if m <= 0.0 {
                continue;
            }
            if r > l {
                let rho = m / (r - l);
                min = min.min(rho);
                max = max.max(rho);
            } else {
                has_atoms = true;
            }
        }
        if max == 0.0 {
            return Err(MeasureError::AllAtomic);
        }
        Ok(DensityBounds { min, max, has_atoms })
    }

    /// Mass of cell `i` inside `[a, b]` and the centroid of that part.
    fn cell_window_centroid(&self, i: usize, a: f64, b: f64) -> (f64, f64) {
        let (l, r, m) = self.cell(i);
        if m == 0.0 {
            return (0.0, 0.0);
        }
        if r == l {
            return if a <= l && l <= b { (m, l) } else { (0.0, 0.0) };
        }
        let p = a.max(l);
        let q = b.min(r);
        if q <= p {
            return (0.0, 0.0);
        }
        if p == l && q == r {
            return (m, 0.5 * (l + r));
        }
        (m / (r - l) * (q - p), 0.5 * (q + p))
    }

    fn cell_window(&self, i: usize, a: f64, b: f64) -> WindowMoments {
        let (mass, c) = self.cell_window_centroid(i, a, b);
        WindowMoments { mass, moment: mass * c }
    }

    fn window_cell_range(&self, a: f64, b: f64) -> (usize, usize) {
        let lo = self.edges[..self.n_cells()].partition_point(|&e| e < a);
        let hi = self.edges[1..].partition_point(|&e| e <= b);
        (lo, hi.max(lo))
    }

    /// Mass and first moment of the measure on the closed window `[a, b]`,
    /// summed cell by cell.
    pub fn window_moments(&self, a: f64, b: f64) -> Result<WindowMoments, MeasureError> {
        if a > b || a.is_nan() || b.is_nan() {
            return Err(MeasureError::InvertedWindow { a, b });
        }
        let (lo, hi) = self.window_cell_range(a, b);
        let parts: Vec<WindowMoments> =
            (lo.saturating_sub(1)..(hi + 1).min(self.n_cells())).map(|i| self.cell_window(i, a, b)).collect();
        Ok(WindowMoments {
            mass: exact_sum(parts.iter().map(|w| w.mass)),
            moment: exact_sum(parts.iter().map(|w| w.moment)),
        })
    }

    /// Integral of `f` against the measure, midpoint rule inside each cell
    /// (exact on atoms).
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        exact_sum(
            self.cells()
                .filter(|&(_, _, m)| m > 0.0)
                .map(|(l, r, m)| m * f(0.5 * (l + r))),
        )
    }

    /// Mass-quantile: smallest `x` with `mu((-inf, x]) >= p * total`.
    pub fn quantile(&self, p: f64) -> f64 {
        let target = p.clamp(0.0, 1.0) * self.total;
        let mut acc = 0.0;
        for (l, r, m) in self.cells() {
            if m <= 0.0 {
                continue;
            }
            if acc + m >= target {
                if r == l {
                    return l;
                }
                let frac = ((target - acc) / m).clamp(0.0, 1.0);
                return l + frac * (r - l);
            }
            acc += m;
        }
        self.support().1
    }

    /// The point with mass `q * total` to its right; mirror image of
    /// [`OpinionPartition::quantile`].
    pub fn upper_quantile(&self, q: f64) -> f64 {
        let target = q.clamp(0.0, 1.0) * self.total;
        let mut acc = 0.0;
        for (l, r, m) in self.cells().collect::<Vec<_>>().into_iter().rev() {
            if m <= 0.0 {
                continue;
            }
            if acc + m >= target {
                if r == l {
                    return r;
                }
                let frac = ((target - acc) / m).clamp(0.0, 1.0);
                return r - frac * (r - l);
            }
            acc += m;
        }
        self.support().0
    }

    /// Mirror symmetry about `center`: cell `i` reflects onto cell `n-1-i`.
    pub fn is_symmetric_about(&self, center: f64, tol: f64) -> bool {
        let n = self.n_cells();
        let scale = self.total.max(f64::MIN_POSITIVE);
        (0..=n).all(|i| (self.edges[i] + self.edges[n - i] - 2.0 * center).abs() <= tol)
            && (0..n).all(|i| (self.masses[i] - self.masses[n - 1 - i]).abs() <= tol * scale)
    }

    /// Split each listed cell into `parts` equal-width, equal-mass sub-cells.
    /// The measure is unchanged; only the grid is refined. Returns the new
    /// partition and, for every old edge, its index in the new edge list.
    pub fn subdivide(&self, cells: &[usize], parts: usize) -> (OpinionPartition, Vec<usize>) {
        let parts = parts.max(1);
        let mut split = vec![false; self.n_cells()];
        for &c in cells {
            if c < split.len() {
                split[c] = true;
            }
        }
        let mut edges = Vec::with_capacity(self.edges.len() + cells.len() * parts);
        let mut masses = Vec::with_capacity(self.masses.len() + cells.len() * parts);
        let mut old_to_new = Vec::with_capacity(self.edges.len());
        for i in 0..self.n_cells() {
            let (l, r, m) = self.cell(i);
            old_to_new.push(edges.len());
            edges.push(l);
            if split[i] && r > l {
                for k in 1..parts {
                    edges.push(l + (r - l) * k as f64 / parts as f64);
                }
                masses.extend(std::iter::repeat_n(m / parts as f64, parts));
            } else {
                masses.push(m);
            }
        }
        old_to_new.push(edges.len());
        edges.push(*self.edges.last().unwrap());
        let total = exact_sum(masses.iter().copied());
        (OpinionPartition { edges, masses, total }, old_to_new)
    }

    pub fn header(&self) -> PartitionHeader {
        PartitionHeader { total_mass: self.total, n_cells: self.n_cells() }
    }

    /// CSV body with a `left_edge,right_edge,mass` header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("left_edge,right_edge,mass\n");
        for (l, r, m) in self.cells() {
            let _ = writeln!(out, "{l},{r},{m}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MeasureError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| MeasureError::Parse("empty input".into()))?;
        if header.trim() != "left_edge,right_edge,mass" {
            return Err(MeasureError::Parse(format!("unexpected header {header:?}")));
        }
        let mut edges = Vec::new();
        let mut masses = Vec::new();
        for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| MeasureError::Parse(format!("row {}: {e}", row + 1)))?;
            let [l, r, m] = fields[..] else {
                return Err(MeasureError::Parse(format!("row {}: expected 3 fields", row + 1)));
            };
            match edges.last() {
                None => edges.push(l),
                Some(&prev) if prev != l => {
                    return Err(MeasureError::Parse(format!("row {}: cells are not contiguous", row + 1)))
                }
                _ => {}
            }
            edges.push(r);
            masses.push(m);
        }
        Self::new(edges, masses)
    }

    /// Parse CSV data and cross-check it against its JSON header.
    pub fn from_csv_with_header(csv: &str, header_json: &str) -> Result<Self, MeasureError> {
        let header: PartitionHeader =
            serde_json::from_str(header_json).map_err(|e| MeasureError::Parse(e.to_string()))?;
        let part = Self::from_csv(csv)?;
        if part.n_cells() != header.n_cells || part.total != header.total_mass {
            return Err(MeasureError::Parse(format!(
                "header says {} cells / mass {}, data has {} cells / mass {}",
                header.n_cells,
                header.total_mass,
                part.n_cells(),
                part.total
            )));
        }
        Ok(part)
    }
}

/// JSON header accompanying a partition CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionHeader {
    pub total_mass: f64,
    pub n_cells: usize,
}

/// Prefix sums of cell masses and first moments for O(log n) window queries.
#[derive(Debug, Clone)]
pub struct MomentTable<'a> {
    part: &'a OpinionPartition,
    prefix_mass: Vec<DoubleDouble>,
    prefix_moment: Vec<DoubleDouble>,
}

impl<'a> MomentTable<'a> {
    pub fn new(part: &'a OpinionPartition) -> Self {
        let n = part.n_cells();
        let mut prefix_mass = Vec::with_capacity(n + 1);
        let mut prefix_moment = Vec::with_capacity(n + 1);
        let (mut pm, mut pz) = (DoubleDouble::default(), DoubleDouble::default());
        prefix_mass.push(pm);
        prefix_moment.push(pz);
        for (l, r, m) in part.cells() {
            pm = pm + DoubleDouble::new(m);
            pz = pz + DoubleDouble::product(m, 0.5 * (l + r));
            prefix_mass.push(pm);
            prefix_moment.push(pz);
        }
        Self { part, prefix_mass, prefix_moment }
    }

    pub fn partition(&self) -> &'a OpinionPartition {
        self.part
    }

    pub fn prefix_mass(&self) -> &[DoubleDouble] {
        &self.prefix_mass
    }

    pub fn prefix_moment(&self) -> &[DoubleDouble] {
        &self.prefix_moment
    }

    fn window_dd(&self, a: f64, b: f64) -> Result<(DoubleDouble, DoubleDouble), MeasureError> {
        if a > b || a.is_nan() || b.is_nan() {
            return Err(MeasureError::InvertedWindow { a, b });
        }
        let part = self.part;
        let n = part.n_cells();
        let (lo, hi) = part.window_cell_range(a, b);
        let (mut mass, mut moment) = if hi > lo {
            (self.prefix_mass[hi] - self.prefix_mass[lo], self.prefix_moment[hi] - self.prefix_moment[lo])
        } else {
            Default::default()
        };
        let mut edge_cell = |i: usize| {
            let (m, c) = part.cell_window_centroid(i, a, b);
            if m > 0.0 {
                mass = mass + DoubleDouble::new(m);
                moment = moment + DoubleDouble::product(m, c);
            }
        };
        if lo > 0 {
            edge_cell(lo - 1);
        }
        if hi < n {
            edge_cell(hi);
        }
        Ok((mass, moment))
    }

    pub fn window_moments(&self, a: f64, b: f64) -> Result<WindowMoments, MeasureError> {
        let (mass, moment) = self.window_dd(a, b)?;
        Ok(WindowMoments { mass: mass.value(), moment: moment.value() })
    }

    /// Window mass and first moment about `x`, `∫ (z - x) dμ` over
    /// `[a, b]`. Cancellation happens in extended precision, so an isolated
    /// atom at `x` has a centred moment of exactly zero.
    pub fn centered_window(&self, x: f64, a: f64, b: f64) -> Result<(f64, f64), MeasureError> {
        let (mass, moment) = self.window_dd(a, b)?;
        Ok((mass.value(), (moment - mass.scale(x)).value()))
    }
}

/// One atom (or collapsed group of cells) of a clustered measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub position: f64,
    pub mass: f64,
    /// Extent of the cells grouped into this cluster.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    /// Every group is narrower than the width tolerance and neighbouring
    /// groups are more than the gap threshold apart.
    pub converged: bool,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        exact_sum(self.clusters.iter().map(|c| c.mass))
    }

    pub fn min_gap(&self) -> Option<f64> {
        self.clusters.windows(2).map(|w| w[1].position - w[0].position).reduce(f64::min)
    }

    /// Cluster whose position is closest to `x`.
    pub fn nearest(&self, x: f64) -> Option<&Cluster> {
        self.clusters
            .iter()
            .min_by(|a, b| (a.position - x).abs().total_cmp(&(b.position - x).abs()))
    }
}

/// Group consecutive positive-mass cells separated by at most `width_tol`
/// and report each group at its mass centroid.
pub fn extract_clusters(part: &OpinionPartition, width_tol: f64, gap_min: f64) -> ClusterSet {
    struct Group {
        left: f64,
        right: f64,
        mass: Vec<f64>,
        moment: Vec<f64>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for (l, r, m) in part.cells() {
        if m <= 0.0 {
            continue;
        }
        let moment = m * 0.5 * (l + r);
        match groups.last_mut() {
            Some(g) if l - g.right <= width_tol => {
                g.right = g.right.max(r);
                g.mass.push(m);
                g.moment.push(moment);
            }
            _ => groups.push(Group { left: l, right: r, mass: vec![m], moment: vec![moment] }),
        }
    }
    let clusters: Vec<Cluster> = groups
        .iter()
        .map(|g| {
            let mass = exact_sum(g.mass.iter().copied());
            let position = if g.left == g.right {
                g.left
            } else {
                (exact_sum(g.moment.iter().copied()) / mass).clamp(g.left, g.right)
            };
            Cluster { position, mass, width: g.right - g.left }
        })
        .collect();
    let narrow = clusters.iter().all(|c| c.width <= width_tol);
    let separated = groups.windows(2).all(|w| w[1].left - w[0].right > gap_min)
        && clusters.windows(2).all(|w| w[1].position - w[0].position > gap_min);
    ClusterSet { converged: !clusters.is_empty() && narrow && separated, clusters }
}

/// Bounds on the average of a density in `[rho_min, rho_max]` over `[a, b]`.
pub fn lemma1_bounds(a: f64, b: f64, rho_min: f64, rho_max: f64) -> Result<(f64, f64), MeasureError> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(MeasureError::DegenerateInterval { a, b });
    }
    if !(rho_min > 0.0 && rho_min <= rho_max && rho_max.is_finite()) {
        return Err(MeasureError::InvalidDensity { min: rho_min, max: rho_max });
    }
    let k = (rho_max / rho_min).sqrt();
    let lower = (b + a * k) / (1.0 + k);
    let upper = (a + b * k) / (1.0 + k);
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_density() -> OpinionPartition {
        // rho = 1 on [0, 0.5), rho = 3 on [0.5, 1]
        OpinionPartition::new(vec![0.0, 0.5, 1.0], vec![0.5, 1.5]).unwrap()
    }

    #[test]
    fn uniform_construction() {
        let p = OpinionPartition::from_uniform(-1.0, 1.0, 1.0, 4).unwrap();
        assert_eq!(p.edges(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(p.masses(), &[0.25; 4]);

        let p = OpinionPartition::from_uniform(0.0, 1.0, 2.0, 1).unwrap();
        assert_eq!(p.n_cells(), 1);
        let d = p.density_bounds().unwrap();
        assert_eq!((d.min, d.max), (2.0, 2.0));

        let p = OpinionPartition::from_uniform(-1.0, 1.0, 1.0, 2000).unwrap();
        assert!((p.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_rejects_bad_arguments() {
        assert!(matches!(
            OpinionPartition::from_uniform(1.0, 1.0, 1.0, 4),
            Err(MeasureError::InvalidBounds { .. })
        ));
        assert!(matches!(
            OpinionPartition::from_uniform(0.0, 1.0, 0.0, 4),
            Err(MeasureError::NonPositiveMass(_))
        ));
        assert!(matches!(OpinionPartition::from_uniform(0.0, 1.0, 1.0, 0), Err(MeasureError::NoCells)));
    }

    #[test]
    fn new_validates_layout() {
        assert!(matches!(
            OpinionPartition::new(vec![0.0, 1.0], vec![1.0, 1.0]),
            Err(MeasureError::LengthMismatch { .. })
        ));
        assert!(matches!(
            OpinionPartition::new(vec![0.0, 1.0, 0.5], vec![1.0, 1.0]),
            Err(MeasureError::UnsortedEdges(2))
        ));
        assert!(matches!(
            OpinionPartition::new(vec![0.0, 1.0], vec![-1.0]),
            Err(MeasureError::InvalidCellMass(0))
        ));
        assert!(matches!(
            OpinionPartition::new(vec![0.0, 1.0], vec![0.0]),
            Err(MeasureError::NonPositiveMass(_))
        ));
    }

    #[test]
    fn window_on_uniform_left_end() {
        let p = OpinionPartition::from_uniform(-1.0, 1.0, 1.0, 40).unwrap();
        let w = p.window_moments(-1.0, -0.8).unwrap();
        assert!((w.mass - 0.1).abs() < 1e-14);
        assert!((w.average().unwrap() + 0.9).abs() < 1e-14);
    }

    #[test]
    fn window_on_step_density() {
        let p = step_density();
        let w = p.window_moments(0.0, 1.0).unwrap();
        // int_0^0.5 z dz + int_0.5^1 3z dz = 0.125 + 1.125
        assert!((w.mass - 2.0).abs() < 1e-15);
        assert!((w.moment - 1.25).abs() < 1e-15);
        assert!((w.average().unwrap() - 0.625).abs() < 1e-15);
        let d = p.density_bounds().unwrap();
        assert_eq!((d.min, d.max), (1.0, 3.0));
        let (lo, hi) = lemma1_bounds(0.0, 1.0, d.min, d.max).unwrap();
        assert!(lo <= 0.625 && 0.625 <= hi);
    }

    #[test]
    fn window_full_support_gives_totals() {
        let p = step_density();
        let w = p.window_moments(-5.0, 5.0).unwrap();
        assert_eq!(w.mass, p.total_mass());
        assert!((w.moment - p.total_moment()).abs() < 1e-15);
        let t = MomentTable::new(&p).window_moments(-5.0, 5.0).unwrap();
        assert_eq!(t.mass, p.total_mass());
    }

    #[test]
    fn window_rejects_inverted() {
        let p = step_density();
        assert!(matches!(p.window_moments(1.0, 0.0), Err(MeasureError::InvertedWindow { .. })));
        assert!(MomentTable::new(&p).window_moments(1.0, 0.0).is_err());
    }

    #[test]
    fn atoms_count_on_closed_window() {
        let p = OpinionPartition::from_atoms(&[(-0.3, 0.5), (0.4, 0.5)]).unwrap();
        let t = MomentTable::new(&p);
        for (a, b, mass) in [(-0.3, 0.4, 1.0), (-0.3, -0.3, 0.5), (-0.29, 0.39, 0.0), (0.4, 1.0, 0.5)] {
            assert_eq!(p.window_moments(a, b).unwrap().mass, mass, "[{a},{b}]");
            assert_eq!(t.window_moments(a, b).unwrap().mass, mass, "[{a},{b}]");
        }
    }

    #[test]
    fn density_bounds_all_atomic() {
        let p = OpinionPartition::from_atoms(&[(0.2, 1.0)]).unwrap();
        assert_eq!(p.density_bounds(), Err(MeasureError::AllAtomic));
        let mixed = OpinionPartition::new(vec![0.0, 0.0, 1.0], vec![1.0, 2.0]).unwrap();
        let d = mixed.density_bounds().unwrap();
        assert!(d.has_atoms);
        assert_eq!(d.max, 2.0);
    }

    #[test]
    fn lemma1_bounds_values() {
        let (lo, hi) = lemma1_bounds(0.0, 1.0, 2.0, 2.0).unwrap();
        assert_eq!((lo, hi), (0.5, 0.5));
        // (1 + 0*sqrt3)/(1+sqrt3) and sqrt3/(1+sqrt3)
        let (lo, hi) = lemma1_bounds(0.0, 1.0, 1.0, 3.0).unwrap();
        assert!((lo - 0.36603).abs() < 1e-5);
        assert!((hi - 0.63397).abs() < 1e-5);
        assert!(lemma1_bounds(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(lemma1_bounds(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(lemma1_bounds(0.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn clusters_of_two_atoms() {
        let p = OpinionPartition::from_atoms(&[(-0.3, 0.5), (0.4, 0.5)]).unwrap();
        let cs = extract_clusters(&p, 1e-9, 0.1);
        assert!(cs.converged);
        assert_eq!(cs.clusters.len(), 2);
        assert_eq!((cs.clusters[0].position, cs.clusters[0].mass), (-0.3, 0.5));
        assert_eq!((cs.clusters[1].position, cs.clusters[1].mass), (0.4, 0.5));

        let close = OpinionPartition::from_atoms(&[(0.0, 0.5), (0.05, 0.5)]).unwrap();
        assert!(!extract_clusters(&close, 1e-9, 0.1).converged);
    }

    #[test]
    fn uniform_is_not_clustered() {
        let p = OpinionPartition::from_uniform(-1.0, 1.0, 1.0, 100).unwrap();
        let cs = extract_clusters(&p, 1e-6, 0.1);
        assert!(!cs.converged);
        assert_eq!(cs.len(), 1);
        assert!(cs.clusters[0].position.abs() < 1e-12);
    }

    #[test]
    fn support_trims_empty_cells() {
        let p = OpinionPartition::new(vec![-2.0, -1.0, 1.0, 3.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.support(), (-1.0, 1.0));
        assert!(p.is_absolutely_continuous());
        let gap = OpinionPartition::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.0, 1.0]).unwrap();
        assert!(!gap.is_absolutely_continuous());
    }

    #[test]
    fn quantiles() {
        let p = OpinionPartition::from_uniform(0.0, 1.0, 1.0, 10).unwrap();
        assert!((p.quantile(0.125) - 0.125).abs() < 1e-15);
        let a = OpinionPartition::from_atoms(&[(0.3, 1.0)]).unwrap();
        assert_eq!(a.quantile(0.5), 0.3);
    }

    #[test]
    fn subdivide_keeps_measure() {
        let p = OpinionPartition::from_uniform(-1.0, 1.0, 1.0, 10).unwrap();
        let (q, map) = p.subdivide(&[3, 7], 8);
        assert_eq!(q.n_cells(), 24);
        assert_eq!(q.total_mass().to_bits(), p.total_mass().to_bits());
        for (i, &j) in map.iter().enumerate() {
            assert_eq!(p.edges()[i], q.edges()[j]);
        }
        let a = p.window_moments(-0.43, 0.51).unwrap();
        let b = q.window_moments(-0.43, 0.51).unwrap();
        assert!((a.mass - b.mass).abs() < 1e-15);
    }

    #[test]
    fn csv_with_header() {
        let p = OpinionPartition::new(vec![0.0, 0.0, 0.5, 1.0], vec![0.25, 0.0, 0.75]).unwrap();
        let csv = p.to_csv();
        assert!(csv.starts_with("left_edge,right_edge,mass\n0,0,0.25\n"));
        let header = serde_json::to_string(&p.header()).unwrap();
        let back = OpinionPartition::from_csv_with_header(&csv, &header).unwrap();
        assert_eq!(back, p);
        assert!(OpinionPartition::from_csv_with_header(&csv, r#"{"total_mass":1.0,"n_cells":2}"#).is_err());
        assert!(OpinionPartition::from_csv("a,b,c\n").is_err());
        assert!(OpinionPartition::from_csv("left_edge,right_edge,mass\n0,1,1\n2,3,1\n").is_err());
    }
}
