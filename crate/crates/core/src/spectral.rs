//! The measured observable: spectrum, density `h`, and the quadrature grid.
//!
//! The spectrum is a finite union of atoms (point masses of the spectral
//! measure) and closed intervals carrying the density `h` with respect to
//! Lebesgue measure. Every interval is discretized with the composite
//! midpoint rule, so grid nodes sit strictly inside their interval. Atoms
//! become grid nodes with their exact weight and unit density. The mass of
//! node `i` is `weight_i * density_i`; the discrete trace of a kernel `K` is
//! `sum_i mass_i * tr K[i][i]`.
//!
//! Regions are resolved to node sets by snapping interval endpoints to the
//! nearest cell boundary (a midpoint between adjacent nodes, an interval
//! end, or an atom position) and keeping every node whose cell lies inside
//! the snapped interval. A point selects the nearest node.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::midpoint_nodes;

fn one() -> f64 {
    1.0
}

fn default_nodes() -> usize {
    200
}

fn default_multiplicity() -> usize {
    1
}

/// The density `h` of the absolutely continuous part of the spectral measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensitySpec {
    /// `h(nu) = level`.
    Uniform {
        #[serde(default = "one")]
        level: f64,
    },
    /// `h(nu) = intercept + slope * nu`.
    Linear { intercept: f64, slope: f64 },
    /// `h(nu) = offset + amplitude * cos(frequency * nu)`.
    Cosine {
        #[serde(default = "one")]
        offset: f64,
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
    /// Piecewise-linear interpolation of `(nu, h)` pairs, constant beyond the ends.
    Tabulated { points: Vec<(f64, f64)> },
}

impl Default for DensitySpec {
    fn default() -> Self {
        DensitySpec::Uniform { level: 1.0 }
    }
}

impl DensitySpec {
    pub fn eval(&self, nu: f64) -> f64 {
        match self {
            DensitySpec::Uniform { level } => *level,
            DensitySpec::Linear { intercept, slope } => intercept + slope * nu,
            DensitySpec::Cosine {
                offset,
                amplitude,
                frequency,
            } => offset + amplitude * (frequency * nu).cos(),
            DensitySpec::Tabulated { points } => linear_interp(points, nu),
        }
    }

    fn check(&self) -> Result<()> {
        if let DensitySpec::Tabulated { points } = self {
            if points.is_empty() {
                return Err(Error::InvalidSpectrum("tabulated density has no points".into()));
            }
            if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidSpectrum(
                    "tabulated density nodes must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

fn linear_interp(points: &[(f64, f64)], x: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let j = points.partition_point(|p| p.0 <= x);
    let (x0, y0) = points[j - 1];
    let (x1, y1) = points[j];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Declarative description of a spectral model, as found in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSpec {
    /// `(point, weight)` pairs.
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
    /// Closed intervals `[a, b]`.
    #[serde(default)]
    pub intervals: Vec<(f64, f64)>,
    #[serde(default)]
    pub density: DensitySpec,
    #[serde(default = "default_nodes")]
    pub nodes_per_interval: usize,
    #[serde(default = "default_multiplicity")]
    pub multiplicity: usize,
}

/// Quadrature nodes with weights and density values.
///
/// Used both for the spectral grid and for rescaled windows around an
/// estimate; in either case node `i` carries the measure `weight * density`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
    densities: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>, weights: Vec<f64>, densities: Vec<f64>) -> Self {
        assert_eq!(points.len(), weights.len());
        assert_eq!(points.len(), densities.len());
        Self {
            points,
            weights,
            densities,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.weights[i] * self.densities[i]
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.mass(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentKind {
    Atom { point: f64, weight: f64 },
    Interval { lo: f64, hi: f64, spacing: f64 },
}

/// One connected piece of the spectrum and the grid nodes it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub kind: ComponentKind,
    pub nodes: Range<usize>,
}

impl Component {
    pub fn lo(&self) -> f64 {
        match self.kind {
            ComponentKind::Atom { point, .. } => point,
            ComponentKind::Interval { lo, .. } => lo,
        }
    }

    pub fn hi(&self) -> f64 {
        match self.kind {
            ComponentKind::Atom { point, .. } => point,
            ComponentKind::Interval { hi, .. } => hi,
        }
    }

    pub fn is_interval(&self) -> bool {
        matches!(self.kind, ComponentKind::Interval { .. })
    }

    /// Distance from `nu` to the nearest end of the component.
    pub fn distance_to_boundary(&self, nu: f64) -> f64 {
        (nu - self.lo()).min(self.hi() - nu)
    }

    pub fn contains(&self, nu: f64) -> bool {
        nu >= self.lo() && nu <= self.hi()
    }
}

/// The observable's spectrum discretized on a quadrature grid.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    spec: SpectralSpec,
    components: Vec<Component>,
    node_component: Vec<usize>,
    cells: Vec<(f64, f64)>,
    grid: Arc<Grid>,
}

/// Builds a spectral model from its parts.
pub fn build_spectral_model(
    atoms: &[(f64, f64)],
    intervals: &[(f64, f64)],
    density: DensitySpec,
    nodes_per_interval: usize,
    multiplicity: usize,
) -> Result<SpectralModel> {
    SpectralModel::new(SpectralSpec {
        atoms: atoms.to_vec(),
        intervals: intervals.to_vec(),
        density,
        nodes_per_interval,
        multiplicity,
    })
}

impl SpectralModel {
    pub fn new(spec: SpectralSpec) -> Result<Self> {
        if spec.atoms.is_empty() && spec.intervals.is_empty() {
            return Err(Error::EmptySpectrum);
        }
        if spec.multiplicity == 0 {
            return Err(Error::InvalidSpectrum("multiplicity must be at least 1".into()));
        }
        if !spec.intervals.is_empty() && spec.nodes_per_interval < 2 {
            return Err(Error::InvalidSpectrum(format!(
                "nodes_per_interval must be at least 2, got {}",
                spec.nodes_per_interval
            )));
        }
        spec.density.check()?;

        let mut pieces: Vec<ComponentKind> = Vec::new();
        for &(point, weight) in &spec.atoms {
            if !point.is_finite() || !(weight > 0.0) || !weight.is_finite() {
                return Err(Error::InvalidSpectrum(format!(
                    "atom ({point}, {weight}) needs a finite point and positive weight"
                )));
            }
            pieces.push(ComponentKind::Atom { point, weight });
        }
        for &(lo, hi) in &spec.intervals {
            if !lo.is_finite() || !hi.is_finite() || !(hi > lo) {
                return Err(Error::InvalidSpectrum(format!(
                    "interval [{lo}, {hi}] must be finite with positive length"
                )));
            }
            let spacing = (hi - lo) / spec.nodes_per_interval as f64;
            pieces.push(ComponentKind::Interval { lo, hi, spacing });
        }
        let bounds = |k: &ComponentKind| match *k {
            ComponentKind::Atom { point, .. } => (point, point),
            ComponentKind::Interval { lo, hi, .. } => (lo, hi),
        };
        pieces.sort_by(|a, b| bounds(a).0.total_cmp(&bounds(b).0));
        for w in pieces.windows(2) {
            let (_, prev_hi) = bounds(&w[0]);
            let (next_lo, _) = bounds(&w[1]);
            if next_lo <= prev_hi {
                return Err(Error::OverlappingComponents(format!(
                    "{:?} and {:?} intersect",
                    w[0], w[1]
                )));
            }
        }

        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut densities = Vec::new();
        let mut cells = Vec::new();
        let mut components = Vec::new();
        let mut node_component = Vec::new();
        for (c, kind) in pieces.into_iter().enumerate() {
            let start = points.len();
            match kind {
                ComponentKind::Atom { point, weight } => {
                    points.push(point);
                    weights.push(weight);
                    densities.push(1.0);
                    cells.push((point, point));
                }
                ComponentKind::Interval { lo, hi, .. } => {
                    let (nodes, width) = midpoint_nodes(lo, hi, spec.nodes_per_interval);
                    for nu in nodes {
                        let value = spec.density.eval(nu);
                        if !(value > 0.0) || !value.is_finite() {
                            return Err(Error::NonPositiveDensity { nu, value });
                        }
                        points.push(nu);
                        weights.push(width);
                        densities.push(value);
                        cells.push((nu - 0.5 * width, nu + 0.5 * width));
                    }
                }
            }
            node_component.extend(std::iter::repeat_n(c, points.len() - start));
            components.push(Component {
                kind,
                nodes: start..points.len(),
            });
        }

        Ok(Self {
            spec,
            components,
            node_component,
            cells,
            grid: Arc::new(Grid::new(points, weights, densities)),
        })
    }

    pub fn spec(&self) -> &SpectralSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn multiplicity(&self) -> usize {
        self.spec.multiplicity
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component_of(&self, node: usize) -> &Component {
        &self.components[self.node_component[node]]
    }

    /// The component whose closed hull contains `nu`, if any.
    pub fn component_containing(&self, nu: f64) -> Option<&Component> {
        self.components.iter().find(|c| c.contains(nu))
    }

    pub fn hull(&self) -> (f64, f64) {
        let first = &self.components[0];
        let last = &self.components[self.components.len() - 1];
        (first.lo(), last.hi())
    }

    /// Smallest interval node spacing, or a hundredth of the hull width for
    /// purely atomic spectra.
    pub fn min_spacing(&self) -> f64 {
        let spacing = self
            .components
            .iter()
            .filter_map(|c| match c.kind {
                ComponentKind::Interval { spacing, .. } => Some(spacing),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min);
        if spacing.is_finite() {
            spacing
        } else {
            let (lo, hi) = self.hull();
            ((hi - lo) / 100.0).max(1e-3)
        }
    }

    /// Density `h(nu)` of the absolutely continuous part; zero off the intervals.
    pub fn density(&self, nu: f64) -> f64 {
        let inside = self.components.iter().any(|c| match c.kind {
            ComponentKind::Interval { lo, hi, .. } => nu >= lo && nu <= hi,
            _ => false,
        });
        if inside {
            self.spec.density.eval(nu)
        } else {
            0.0
        }
    }

    pub fn density_spec(&self) -> &DensitySpec {
        &self.spec.density
    }

    /// Index of the node nearest to `nu` (smaller node on ties).
    pub fn locate(&self, nu: f64) -> usize {
        let pts = self.grid.points();
        let j = pts.partition_point(|&p| p < nu);
        if j == 0 {
            0
        } else if j == pts.len() {
            pts.len() - 1
        } else if (nu - pts[j - 1]) <= (pts[j] - nu) {
            j - 1
        } else {
            j
        }
    }

    fn boundaries(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.cells.iter().flat_map(|&(lo, hi)| [lo, hi]).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    fn snap(boundaries: &[f64], x: f64) -> f64 {
        let j = boundaries.partition_point(|&b| b < x);
        if j == 0 {
            boundaries[0]
        } else if j == boundaries.len() {
            boundaries[j - 1]
        } else if (x - boundaries[j - 1]) <= (boundaries[j] - x) {
            boundaries[j - 1]
        } else {
            boundaries[j]
        }
    }

    /// Resolves a region to the sorted set of grid nodes it selects.
    pub fn resolve(&self, region: &Region) -> Result<Vec<usize>> {
        if region.parts.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let (lo, hi) = self.hull();
        let tol = 1e-9 * (hi - lo).max(1.0);
        let outside = |x: f64| !(x >= lo - tol && x <= hi + tol);
        let boundaries = self.boundaries();
        let mut selected = vec![false; self.len()];
        for part in &region.parts {
            match *part {
                RegionPart::Point(p) => {
                    if outside(p) {
                        return Err(Error::RegionOutsideHull {
                            lo,
                            hi,
                            detail: format!("point {p}"),
                        });
                    }
                    selected[self.locate(p)] = true;
                }
                RegionPart::Interval([a, b]) => {
                    if !(a <= b) || outside(a) || outside(b) {
                        return Err(Error::RegionOutsideHull {
                            lo,
                            hi,
                            detail: format!("interval [{a}, {b}]"),
                        });
                    }
                    let sa = Self::snap(&boundaries, a);
                    let sb = Self::snap(&boundaries, b);
                    for (i, &(cl, ch)) in self.cells.iter().enumerate() {
                        if cl >= sa - tol && ch <= sb + tol {
                            selected[i] = true;
                        }
                    }
                }
            }
        }
        Ok(selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect())
    }
}

/// Part of a region: a single point or a closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionPart {
    Point(f64),
    Interval([f64; 2]),
}

/// A finite union of points and closed intervals of the spectrum.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    pub parts: Vec<RegionPart>,
}

impl Region {
    pub fn point(p: f64) -> Self {
        Self {
            parts: vec![RegionPart::Point(p)],
        }
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Self {
            parts: vec![RegionPart::Interval([a, b])],
        }
    }

    /// The whole hull of the model's spectrum.
    pub fn hull(model: &SpectralModel) -> Self {
        let (lo, hi) = model.hull();
        Self::interval(lo, hi)
    }
}

/// Per-node probabilities of a spectral measure (quadrature mass included).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralWeights {
    probs: Vec<f64>,
}

impl SpectralWeights {
    /// Normalizes nonnegative node masses.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidState("spectral masses must be finite and nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        Ok(Self {
            probs: masses.into_iter().map(|m| m / total).collect(),
        })
    }

    /// Normalizes log-masses with the log-sum-exp shift.
    pub fn from_log_masses(log_masses: &[f64]) -> Result<Self> {
        let max = log_masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        let unnorm: Vec<f64> = log_masses.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        assert!(total >= 1.0, "log-sum-exp normalizer below one");
        Ok(Self {
            probs: unnorm.into_iter().map(|u| u / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mass_of(&self, nodes: &[usize]) -> f64 {
        nodes.iter().map(|&i| self.probs[i]).sum()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }
}
