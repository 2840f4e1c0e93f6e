//! Model grids, acquisition geometry, frequency-domain data and their binary formats.
//!
//! Grids are stored row-major with `x` (horizontal) fastest: value `(iz, ix)` lives
//! at `iz * nx + ix`. The same layout is used by every operation in the crate.
//!
//! Grid file (little-endian):
//!
//! ```text
//! "GRD1" | kind: u8 | 3 zero bytes | nz: u32 | nx: u32 | dz: f64 | dx: f64 | nz*nx f64
//! ```
//!
//! Frequency-data file (little-endian):
//!
//! ```text
//! "FDD1" | n_freq: u32 | per block: freq f64, n_rx u32, n_src u32, n_rx*n_src (re f64, im f64)
//! ```
//!
//! with the receiver index as the slow index inside a block.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

const GRID_MAGIC: &[u8; 4] = b"GRD1";
const DATA_MAGIC: &[u8; 4] = b"FDD1";

/// Size in bytes of the grid file header.
pub const GRID_HEADER_LEN: usize = 32;

/// Physical meaning of the values stored in a [`ModelGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridKind {
    /// Velocity in m/s.
    Velocity,
    /// Squared slowness `1/v^2` in s^2/m^2.
    SquaredSlowness,
}

impl GridKind {
    fn code(self) -> u8 {
        match self {
            GridKind::Velocity => 0,
            GridKind::SquaredSlowness => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(GridKind::Velocity),
            1 => Ok(GridKind::SquaredSlowness),
            other => Err(Error::Format(format!("unknown grid kind code {other}"))),
        }
    }
}

/// A 2D rectangular parameter field with spacing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid {
    nz: usize,
    nx: usize,
    dz: f64,
    dx: f64,
    kind: GridKind,
    values: Vec<f64>,
}

impl ModelGrid {
    /// Builds a grid, checking every invariant (sizes, spacings, positive finite values).
    pub fn new(nz: usize, nx: usize, dz: f64, dx: f64, kind: GridKind, values: Vec<f64>) -> Result<Self> {
        check_shape(nz, nx, dz, dx)?;
        if values.len() != nz * nx {
            return Err(Error::DimensionMismatch {
                expected: nz * nx,
                got: values.len(),
            });
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v <= 0.0) {
            return Err(Error::Domain(format!(
                "grid value at index {i} is {v}; values must be finite and positive"
            )));
        }
        Ok(Self {
            nz,
            nx,
            dz,
            dx,
            kind,
            values,
        })
    }

    pub fn constant(nz: usize, nx: usize, dz: f64, dx: f64, kind: GridKind, value: f64) -> Result<Self> {
        Self::new(nz, nx, dz, dx, kind, vec![value; nz * nx])
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.nz, self.nx)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, iz: usize, ix: usize) -> f64 {
        self.values[iz * self.nx + ix]
    }

    /// Same geometry and kind, new values (checked).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.nz, self.nx, self.dz, self.dx, self.kind, values)
    }

    /// Converts between velocity and squared slowness (`v <-> 1/v^2`).
    ///
    /// Requesting the kind the grid already has is rejected.
    pub fn convert(&self, to: GridKind) -> Result<Self> {
        if to == self.kind {
            return Err(Error::Domain(format!("grid is already of kind {:?}", self.kind)));
        }
        let values = self
            .values
            .iter()
            .map(|&v| {
                if v <= 0.0 {
                    return Err(Error::Domain(format!("cannot convert nonpositive value {v}")));
                }
                Ok(match to {
                    GridKind::SquaredSlowness => 1.0 / (v * v),
                    GridKind::Velocity => 1.0 / v.sqrt(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.nz, self.nx, self.dz, self.dx, to, values)
    }

    /// Returns a copy in the requested kind, converting only when needed.
    pub fn to_kind(&self, kind: GridKind) -> Result<Self> {
        if kind == self.kind {
            Ok(self.clone())
        } else {
            self.convert(kind)
        }
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            nz: self.nz,
            nx: self.nx,
            dz: self.dz,
            dx: self.dx,
            kind: self.kind,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_field(&self.header(), &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, values) = decode_field(bytes)?;
        Self::new(h.nz, h.nx, h.dz, h.dx, h.kind, values).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Shape, spacing and kind of a grid file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHeader {
    pub nz: usize,
    pub nx: usize,
    pub dz: f64,
    pub dx: f64,
    pub kind: GridKind,
}

/// Encodes any finite field in the grid file layout. Unlike [`ModelGrid`], values may be
/// zero or negative: denoiser inputs are shifted iterates, not physical models.
pub fn encode_field(h: &GridHeader, values: &[f64]) -> Result<Vec<u8>> {
    check_shape(h.nz, h.nx, h.dz, h.dx)?;
    if values.len() != h.nz * h.nx {
        return Err(Error::DimensionMismatch {
            expected: h.nz * h.nx,
            got: values.len(),
        });
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Format(format!("refusing to write non-finite value {v}")));
    }
    let nz = u32::try_from(h.nz).map_err(|_| Error::Format("nz exceeds u32".into()))?;
    let nx = u32::try_from(h.nx).map_err(|_| Error::Format("nx exceeds u32".into()))?;
    let mut out = Vec::with_capacity(GRID_HEADER_LEN + 8 * values.len());
    out.extend_from_slice(GRID_MAGIC);
    out.push(h.kind.code());
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&nz.to_le_bytes());
    out.extend_from_slice(&nx.to_le_bytes());
    out.extend_from_slice(&h.dz.to_le_bytes());
    out.extend_from_slice(&h.dx.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Inverse of [`encode_field`]; checks the layout and finiteness but not the sign.
pub fn decode_field(bytes: &[u8]) -> Result<(GridHeader, Vec<f64>)> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != GRID_MAGIC {
        return Err(Error::Format("bad grid magic".into()));
    }
    let kind = GridKind::from_code(r.u8()?)?;
    if r.take(3)? != [0, 0, 0] {
        return Err(Error::Format("nonzero header padding".into()));
    }
    let nz = r.u32()? as usize;
    let nx = r.u32()? as usize;
    let dz = r.f64()?;
    let dx = r.f64()?;
    check_shape(nz, nx, dz, dx).map_err(|e| Error::Format(e.to_string()))?;
    let n = nz
        .checked_mul(nx)
        .ok_or_else(|| Error::Format("grid size overflows".into()))?;
    if r.remaining() != n * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {}",
            r.remaining(),
            n * 8
        )));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(r.f64()?);
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite value {v} in payload")));
    }
    Ok((GridHeader { nz, nx, dz, dx, kind }, values))
}

fn check_shape(nz: usize, nx: usize, dz: f64, dx: f64) -> Result<()> {
    if nz < 3 || nx < 3 {
        return Err(Error::Geometry(format!("grid must be at least 3x3, got {nz}x{nx}")));
    }
    if !(dz > 0.0 && dx > 0.0 && dz.is_finite() && dx.is_finite()) {
        return Err(Error::Geometry(format!(
            "grid spacings must be positive, got dz={dz}, dx={dx}"
        )));
    }
    Ok(())
}

/// Row-major 2D shape, `x` fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub nz: usize,
    pub nx: usize,
}

impl GridShape {
    pub fn new(nz: usize, nx: usize) -> Self {
        Self { nz, nx }
    }

    /// A shape for plain vectors: one row.
    pub fn vector(n: usize) -> Self {
        Self { nz: 1, nx: n }
    }

    pub fn len(&self) -> usize {
        self.nz * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, iz: usize, ix: usize) -> usize {
        iz * self.nx + ix
    }
}

pub fn write_grid(grid: &ModelGrid, path: impl AsRef<Path>) -> Result<()> {
    let bytes = grid.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<ModelGrid> {
    ModelGrid::from_bytes(&fs::read(path)?)
}

/// Inclusion shapes of the synthetic benchmark family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InclusionShape {
    Square,
    Disk,
    Ring,
    Cross,
    /// The four shapes at half size, one per quadrant.
    AllFour,
}

impl std::str::FromStr for InclusionShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Self::Square),
            "disk" => Ok(Self::Disk),
            "ring" => Ok(Self::Ring),
            "cross" => Ok(Self::Cross),
            "all-four" | "all" => Ok(Self::AllFour),
            other => Err(Error::Config(format!("unknown inclusion shape '{other}'"))),
        }
    }
}

/// One inclusion placed in physical coordinates (meters, origin at node (0, 0)).
///
/// `size` is the square side, disk radius, ring outer radius or cross arm half-length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    pub shape: InclusionShape,
    pub center_z: f64,
    pub center_x: f64,
    pub size: f64,
}

impl Inclusion {
    fn contains(&self, z: f64, x: f64) -> bool {
        let dz = z - self.center_z;
        let dx = x - self.center_x;
        let s = self.size;
        match self.shape {
            InclusionShape::Square => dz.abs() <= s / 2.0 && dx.abs() <= s / 2.0,
            InclusionShape::Disk => dz * dz + dx * dx <= s * s,
            InclusionShape::Ring => {
                let r2 = dz * dz + dx * dx;
                let inner = RING_INNER_RATIO * s;
                r2 <= s * s && r2 >= inner * inner
            }
            InclusionShape::Cross => {
                let half_width = CROSS_WIDTH_RATIO * s;
                (dz.abs() <= s && dx.abs() <= half_width) || (dx.abs() <= s && dz.abs() <= half_width)
            }
            InclusionShape::AllFour => false,
        }
    }

    /// Half-extent of the bounding box.
    fn half_extent(&self) -> f64 {
        match self.shape {
            InclusionShape::Square => self.size / 2.0,
            _ => self.size,
        }
    }
}

const RING_INNER_RATIO: f64 = 0.6;
const CROSS_WIDTH_RATIO: f64 = 0.25;

/// Default inclusion sizes as fractions of the smaller domain extent.
fn default_size(shape: InclusionShape, extent: f64) -> f64 {
    match shape {
        InclusionShape::Square => 0.3 * extent,
        InclusionShape::Disk => 0.15 * extent,
        InclusionShape::Ring => 0.2 * extent,
        InclusionShape::Cross => 0.2 * extent,
        InclusionShape::AllFour => 0.0,
    }
}

/// Default layout of `shape` on an `nz x nx` grid: centered, or one per quadrant for `AllFour`.
pub fn default_inclusions(shape: InclusionShape, nz: usize, nx: usize, dz: f64, dx: f64) -> Vec<Inclusion> {
    let lz = (nz - 1) as f64 * dz;
    let lx = (nx - 1) as f64 * dx;
    let extent = lz.min(lx);
    match shape {
        InclusionShape::AllFour => {
            let quads = [
                (InclusionShape::Square, 0.25, 0.25),
                (InclusionShape::Disk, 0.25, 0.75),
                (InclusionShape::Ring, 0.75, 0.25),
                (InclusionShape::Cross, 0.75, 0.75),
            ];
            quads
                .iter()
                .map(|&(s, fz, fx)| Inclusion {
                    shape: s,
                    center_z: fz * lz,
                    center_x: fx * lx,
                    size: 0.6 * default_size(s, extent),
                })
                .collect()
        }
        s => vec![Inclusion {
            shape: s,
            center_z: lz / 2.0,
            center_x: lx / 2.0,
            size: default_size(s, extent),
        }],
    }
}

/// Homogeneous background with the default inclusion layout for `shape`.
pub fn make_inclusion_model(
    shape: InclusionShape,
    nz: usize,
    nx: usize,
    dz: f64,
    dx: f64,
    v_background: f64,
    v_inclusion: f64,
) -> Result<ModelGrid> {
    check_shape(nz, nx, dz, dx)?;
    let inclusions = default_inclusions(shape, nz, nx, dz, dx);
    make_model_with_inclusions(&inclusions, nz, nx, dz, dx, v_background, v_inclusion)
}

/// Velocity grid with arbitrary inclusions; each must stay off the outermost grid rows/columns.
pub fn make_model_with_inclusions(
    inclusions: &[Inclusion],
    nz: usize,
    nx: usize,
    dz: f64,
    dx: f64,
    v_background: f64,
    v_inclusion: f64,
) -> Result<ModelGrid> {
    check_shape(nz, nx, dz, dx)?;
    if !(v_background > 0.0 && v_inclusion > 0.0) {
        return Err(Error::Domain("velocities must be positive".into()));
    }
    let lz = (nz - 1) as f64 * dz;
    let lx = (nx - 1) as f64 * dx;
    for inc in inclusions {
        let h = inc.half_extent();
        if inc.center_z - h < dz || inc.center_z + h > lz - dz || inc.center_x - h < dx || inc.center_x + h > lx - dx {
            return Err(Error::Geometry(format!(
                "{:?} inclusion of size {} m at ({}, {}) does not fit inside the grid interior",
                inc.shape, inc.size, inc.center_z, inc.center_x
            )));
        }
    }
    let mut values = vec![v_background; nz * nx];
    for iz in 0..nz {
        let z = iz as f64 * dz;
        for ix in 0..nx {
            let x = ix as f64 * dx;
            if inclusions.iter().any(|inc| inc.contains(z, x)) {
                values[iz * nx + ix] = v_inclusion;
            }
        }
    }
    ModelGrid::new(nz, nx, dz, dx, GridKind::Velocity, values)
}

/// Source/receiver positions (grid indices `(iz, ix)`) and the frequency set.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionGeometry {
    pub sources: Vec<(usize, usize)>,
    pub receivers: Vec<(usize, usize)>,
    pub frequencies: Vec<f64>,
}

impl AcquisitionGeometry {
    pub fn new(sources: Vec<(usize, usize)>, receivers: Vec<(usize, usize)>, frequencies: Vec<f64>) -> Result<Self> {
        let geom = Self {
            sources,
            receivers,
            frequencies,
        };
        geom.check_lists()?;
        Ok(geom)
    }

    fn check_lists(&self) -> Result<()> {
        if self.sources.is_empty() || self.receivers.is_empty() {
            return Err(Error::Geometry("source and receiver lists must be non-empty".into()));
        }
        check_frequencies(&self.frequencies)
    }

    /// Checks that every position lies inside an `nz x nx` interior grid.
    pub fn validate(&self, nz: usize, nx: usize) -> Result<()> {
        self.check_lists()?;
        for &(iz, ix) in self.sources.iter().chain(&self.receivers) {
            if iz >= nz || ix >= nx {
                return Err(Error::Geometry(format!(
                    "position ({iz}, {ix}) outside the {nz}x{nx} interior"
                )));
            }
        }
        Ok(())
    }

    /// Same positions, different frequency subset.
    pub fn with_frequencies(&self, frequencies: Vec<f64>) -> Result<Self> {
        Self::new(self.sources.clone(), self.receivers.clone(), frequencies)
    }

    /// Sources evenly spaced along the top row and receivers on the left, bottom and
    /// right edges (every edge except the surface).
    ///
    /// Sources are centered horizontally with `source_spacing` meters between them;
    /// receivers are placed every `receiver_spacing` meters.
    #[allow(clippy::too_many_arguments)]
    pub fn surface_sources_boundary_receivers(
        nz: usize,
        nx: usize,
        dz: f64,
        dx: f64,
        n_sources: usize,
        source_spacing: f64,
        receiver_spacing: f64,
        frequencies: Vec<f64>,
    ) -> Result<Self> {
        check_shape(nz, nx, dz, dx)?;
        if n_sources == 0 {
            return Err(Error::Geometry("need at least one source".into()));
        }
        let lx = (nx - 1) as f64 * dx;
        let span = (n_sources - 1) as f64 * source_spacing;
        if span > lx {
            return Err(Error::Geometry(format!(
                "{n_sources} sources at {source_spacing} m do not fit in {lx} m"
            )));
        }
        let x0 = (lx - span) / 2.0;
        let sources = (0..n_sources)
            .map(|k| (0, ((x0 + k as f64 * source_spacing) / dx).round() as usize))
            .collect();

        let step_z = ((receiver_spacing / dz).round() as usize).max(1);
        let step_x = ((receiver_spacing / dx).round() as usize).max(1);
        let mut receivers = Vec::new();
        // left edge, top to bottom (skipping the surface row)
        for iz in (step_z..nz).step_by(step_z) {
            receivers.push((iz, 0));
        }
        // bottom edge
        for ix in (step_x..nx).step_by(step_x) {
            receivers.push((nz - 1, ix));
        }
        // right edge, bottom to top
        for iz in (step_z..nz - 1).step_by(step_z).rev() {
            receivers.push((iz, nx - 1));
        }
        receivers.dedup();
        Self::new(sources, receivers, frequencies)
    }

    /// Line-oriented `key = value` text: `sources`, `receivers` as `iz,ix;iz,ix;...`,
    /// `frequencies` as a comma-separated list.
    pub fn to_text(&self) -> String {
        fn positions(p: &[(usize, usize)]) -> String {
            p.iter().map(|(z, x)| format!("{z},{x}")).collect::<Vec<_>>().join(";")
        }
        let freqs = self
            .frequencies
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "sources = {}\nreceivers = {}\nfrequencies = {}\n",
            positions(&self.sources),
            positions(&self.receivers),
            freqs
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut sources = None;
        let mut receivers = None;
        let mut frequencies = None;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key = value, got '{line}'")))?;
            match key.trim() {
                "sources" => sources = Some(parse_positions(value)?),
                "receivers" => receivers = Some(parse_positions(value)?),
                "frequencies" => frequencies = Some(parse_list(value)?),
                other => return Err(Error::Format(format!("unknown geometry key '{other}'"))),
            }
        }
        Self::new(
            sources.ok_or_else(|| Error::Format("missing 'sources'".into()))?,
            receivers.ok_or_else(|| Error::Format("missing 'receivers'".into()))?,
            frequencies.ok_or_else(|| Error::Format("missing 'frequencies'".into()))?,
        )
    }
}

fn check_frequencies(freqs: &[f64]) -> Result<()> {
    if freqs.is_empty() {
        return Err(Error::Geometry("frequency list is empty".into()));
    }
    if freqs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Geometry("frequencies must be positive".into()));
    }
    if freqs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Geometry("frequencies must be strictly increasing".into()));
    }
    Ok(())
}

fn parse_positions(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (z, x) = p
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad position '{p}'")))?;
            let z = z
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad index in '{p}'")))?;
            let x = x
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad index in '{p}'")))?;
            Ok((z, x))
        })
        .collect()
}

/// Parses a comma-separated list of reals.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{p}'"))))
        .collect()
}

/// Data of one frequency: an `n_rx x n_src` complex matrix, receiver index slow.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqBlock {
    pub frequency: f64,
    pub n_rx: usize,
    pub n_src: usize,
    pub values: Vec<Complex64>,
}

impl FreqBlock {
    pub fn new(frequency: f64, n_rx: usize, n_src: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != n_rx * n_src {
            return Err(Error::DimensionMismatch {
                expected: n_rx * n_src,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Domain("data entries must be finite".into()));
        }
        Ok(Self {
            frequency,
            n_rx,
            n_src,
            values,
        })
    }

    pub fn zeros(frequency: f64, n_rx: usize, n_src: usize) -> Self {
        Self {
            frequency,
            n_rx,
            n_src,
            values: vec![Complex64::new(0.0, 0.0); n_rx * n_src],
        }
    }

    pub fn get(&self, rx: usize, src: usize) -> Complex64 {
        self.values[rx * self.n_src + src]
    }

    pub fn set(&mut self, rx: usize, src: usize, v: Complex64) {
        self.values[rx * self.n_src + src] = v;
    }
}

/// Observed or simulated data, one block per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqData {
    pub blocks: Vec<FreqBlock>,
}

impl FreqData {
    pub fn new(blocks: Vec<FreqBlock>) -> Self {
        Self { blocks }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.frequency).collect()
    }

    /// Block for frequency `f` (exact match).
    pub fn block(&self, f: f64) -> Option<&FreqBlock> {
        self.blocks.iter().find(|b| b.frequency == f)
    }

    /// Sub-dataset restricted to `freqs` (each must be present).
    pub fn subset(&self, freqs: &[f64]) -> Result<Self> {
        freqs
            .iter()
            .map(|&f| {
                self.block(f)
                    .cloned()
                    .ok_or_else(|| Error::Geometry(format!("no data at {f} Hz")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    /// Checks shapes against an acquisition geometry.
    pub fn check_geometry(&self, acq: &AcquisitionGeometry) -> Result<()> {
        for b in &self.blocks {
            if b.n_rx != acq.receivers.len() || b.n_src != acq.sources.len() {
                return Err(Error::Geometry(format!(
                    "data block at {} Hz is {}x{}, geometry has {} receivers and {} sources",
                    b.frequency,
                    b.n_rx,
                    b.n_src,
                    acq.receivers.len(),
                    acq.sources.len()
                )));
            }
        }
        Ok(())
    }

    /// Euclidean norm over every entry of every block.
    pub fn norm(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.values.iter())
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Entrywise difference `self - other` (same layout required).
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::DimensionMismatch {
                expected: self.blocks.len(),
                got: other.blocks.len(),
            });
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| {
                if a.values.len() != b.values.len() || a.frequency != b.frequency {
                    return Err(Error::Geometry("data blocks do not line up".into()));
                }
                Ok(FreqBlock {
                    frequency: a.frequency,
                    n_rx: a.n_rx,
                    n_src: a.n_src,
                    values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(blocks))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(DATA_MAGIC);
        let n = u32::try_from(self.blocks.len()).map_err(|_| Error::Format("too many frequency blocks".into()))?;
        out.extend_from_slice(&n.to_le_bytes());
        for b in &self.blocks {
            if b.values.len() != b.n_rx * b.n_src {
                return Err(Error::Format("block size inconsistent with its shape".into()));
            }
            if b.values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(Error::Format("refusing to write non-finite data".into()));
            }
            out.extend_from_slice(&b.frequency.to_le_bytes());
            out.extend_from_slice(&(b.n_rx as u32).to_le_bytes());
            out.extend_from_slice(&(b.n_src as u32).to_le_bytes());
            for v in &b.values {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != DATA_MAGIC {
            return Err(Error::Format("bad data magic".into()));
        }
        let n = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let frequency = r.f64()?;
            let n_rx = r.u32()? as usize;
            let n_src = r.u32()? as usize;
            let count = n_rx
                .checked_mul(n_src)
                .ok_or_else(|| Error::Format("block size overflows".into()))?;
            if r.remaining() < count * 16 {
                return Err(Error::Format("truncated data block".into()));
            }
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let re = r.f64()?;
                let im = r.f64()?;
                values.push(Complex64::new(re, im));
            }
            blocks.push(FreqBlock::new(frequency, n_rx, n_src, values).map_err(|e| Error::Format(e.to_string()))?);
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self::new(blocks))
    }
}

pub fn write_data(data: &FreqData, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, data.to_bytes()?)?;
    Ok(())
}

pub fn read_data(path: impl AsRef<Path>) -> Result<FreqData> {
    FreqData::from_bytes(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
