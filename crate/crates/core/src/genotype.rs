//! The generator search space.
//!
//! Cell `s` is described by `s` skip bits followed by four categorical genes:
//! convolution style, normalization, upsampling and the in-cell shortcut.
//! The controller emits one token per slot in exactly that order.
//!
//! Token values are frozen:
//!
//! | slot      | 0               | 1                | 2        |
//! |-----------|-----------------|------------------|----------|
//! | skip      | off             | on               |          |
//! | conv      | pre-activation  | post-activation  |          |
//! | norm      | batch           | instance         | none     |
//! | upsample  | bilinear        | nearest          | deconv   |
//! | shortcut  | off             | on               |          |

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RGB output.
pub const IMAGE_CHANNELS: usize = 3;

/// Vocabulary sizes of the categorical slots (conv, norm, upsample, shortcut).
pub const CATEGORICAL_VOCAB: [usize; 4] = [2, 3, 3, 2];

/// Number of distinct categorical assignments per cell: 2·3·3·2.
pub const CATEGORICAL_COMBINATIONS: u128 = 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConvType {
    /// norm → ReLU → conv
    PreActivation,
    /// conv → norm → ReLU
    PostActivation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormType {
    Batch,
    Instance,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpsampleType {
    Bilinear,
    Nearest,
    Deconv,
}

impl ConvType {
    pub const ALL: [ConvType; 2] = [ConvType::PreActivation, ConvType::PostActivation];

    pub fn token(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            ConvType::PreActivation => "pre",
            ConvType::PostActivation => "post",
        }
    }
}

impl NormType {
    pub const ALL: [NormType; 3] = [NormType::Batch, NormType::Instance, NormType::None];

    pub fn token(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            NormType::Batch => "batch",
            NormType::Instance => "instance",
            NormType::None => "none",
        }
    }
}

impl UpsampleType {
    pub const ALL: [UpsampleType; 3] = [UpsampleType::Bilinear, UpsampleType::Nearest, UpsampleType::Deconv];

    pub fn token(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            UpsampleType::Bilinear => "bilinear",
            UpsampleType::Nearest => "nearest",
            UpsampleType::Deconv => "deconv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellGene {
    pub cell_index: usize,
    /// `skips[j]` takes the output of cell `j` as an extra input.
    pub skips: Vec<bool>,
    pub conv: ConvType,
    pub norm: NormType,
    pub upsample: UpsampleType,
    pub shortcut: bool,
}

impl CellGene {
    pub fn new(cell_index: usize, conv: ConvType, norm: NormType, upsample: UpsampleType, shortcut: bool) -> Self {
        CellGene { cell_index, skips: vec![false; cell_index], conv, norm, upsample, shortcut }
    }

    pub fn with_skips(mut self, skips: Vec<bool>) -> Self {
        self.skips = skips;
        self
    }

    /// Indices of predecessor cells feeding this cell through skip connections.
    pub fn skip_sources(&self) -> impl Iterator<Item = usize> + '_ {
        self.skips.iter().enumerate().filter(|(_, &on)| on).map(|(j, _)| j)
    }

    pub fn encode(&self) -> Vec<usize> {
        encode(self)
    }
}

/// Per-slot vocabulary sizes for one cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSpec {
    vocab: Vec<usize>,
}

impl TokenSpec {
    pub fn for_cell(cell_index: usize) -> Self {
        let mut vocab = vec![2; cell_index];
        vocab.extend_from_slice(&CATEGORICAL_VOCAB);
        TokenSpec { vocab }
    }

    pub fn slot_count(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab
    }

    pub fn vocab(&self, slot: usize) -> usize {
        self.vocab[slot]
    }
}

/// Tokens in slot order: skips…, conv, norm, upsample, shortcut.
pub fn encode(gene: &CellGene) -> Vec<usize> {
    let mut tokens: Vec<usize> = gene.skips.iter().map(|&b| b as usize).collect();
    tokens.extend([gene.conv.token(), gene.norm.token(), gene.upsample.token(), gene.shortcut as usize]);
    tokens
}

pub fn decode(tokens: &[usize], cell_index: usize) -> Result<CellGene> {
    let spec = TokenSpec::for_cell(cell_index);
    if tokens.len() != spec.slot_count() {
        return Err(Error::Input(format!(
            "cell {cell_index} needs {} tokens, got {}",
            spec.slot_count(),
            tokens.len()
        )));
    }
    for (slot, (&value, &vocab)) in tokens.iter().zip(spec.vocab_sizes()).enumerate() {
        if value >= vocab {
            return Err(Error::Decode { slot, value, vocab });
        }
    }
    let s = cell_index;
    Ok(CellGene {
        cell_index,
        skips: tokens[..s].iter().map(|&t| t == 1).collect(),
        conv: ConvType::ALL[tokens[s]],
        norm: NormType::ALL[tokens[s + 1]],
        upsample: UpsampleType::ALL[tokens[s + 2]],
        shortcut: tokens[s + 3] == 1,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub cells: Vec<CellGene>,
    pub base_resolution: usize,
    pub base_channels: usize,
    pub z_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub cell: Option<usize>,
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cell {
            Some(c) => write!(f, "cell {c}: {}: {}", self.kind, self.detail),
            None => write!(f, "{}: {}", self.kind, self.detail),
        }
    }
}

impl Genotype {
    pub fn new(cells: Vec<CellGene>, base_resolution: usize, base_channels: usize, z_dim: usize) -> Self {
        Genotype { cells, base_resolution, base_channels, z_dim }
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn output_resolution(&self) -> usize {
        self.base_resolution << self.cells.len()
    }

    /// Every structural violation; an empty list means the genotype is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.cells.is_empty() {
            out.push(Violation { cell: None, kind: "at least one cell", detail: "cell list is empty".into() });
        }
        for (field, v) in [("base_resolution", self.base_resolution), ("base_channels", self.base_channels), ("z_dim", self.z_dim)] {
            if v == 0 {
                out.push(Violation { cell: None, kind: "positive size", detail: format!("{field} is 0") });
            }
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.cell_index != i {
                out.push(Violation {
                    cell: Some(i),
                    kind: "cell index",
                    detail: format!("position {i} holds a gene for cell {}", cell.cell_index),
                });
            }
            if cell.skips.len() != i {
                out.push(Violation {
                    cell: Some(i),
                    kind: "skip length",
                    detail: format!("expected {i} skip bits, found {}", cell.skips.len()),
                });
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidGenotype(v.iter().map(ToString::to_string).collect()))
        }
    }

    /// First `n` cells.
    pub fn prefix(&self, n: usize) -> Genotype {
        Genotype { cells: self.cells[..n].to_vec(), ..self.clone() }
    }

    /// Flattened tokens of all cells.
    pub fn tokens(&self) -> Vec<usize> {
        self.cells.iter().flat_map(encode).collect()
    }

    /// One line per cell: the cell index followed by its tokens.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# base_resolution={} base_channels={} z_dim={}\n",
            self.base_resolution, self.base_channels, self.z_dim
        );
        for cell in &self.cells {
            s.push_str(&cell.cell_index.to_string());
            for t in encode(cell) {
                s.push(' ');
                s.push_str(&t.to_string());
            }
            s.push('\n');
        }
        s
    }

    /// Parse [`Genotype::to_text`] output. The `#` header is optional; when it
    /// is absent the given defaults apply.
    pub fn from_text(text: &str, base_resolution: usize, base_channels: usize, z_dim: usize) -> Result<Genotype> {
        let mut g = Genotype::new(Vec::new(), base_resolution, base_channels, z_dim);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(header) = line.strip_prefix('#') {
                for kv in header.split_whitespace() {
                    let Some((k, v)) = kv.split_once('=') else { continue };
                    let parsed = v.parse::<usize>().ok();
                    match (k, parsed) {
                        ("base_resolution", Some(v)) => g.base_resolution = v,
                        ("base_channels", Some(v)) => g.base_channels = v,
                        ("z_dim", Some(v)) => g.z_dim = v,
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let nums = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::ConfigLine { line: lineno + 1, msg: format!("bad genotype token: {e}") })?;
            let (&idx, tokens) = nums
                .split_first()
                .ok_or_else(|| Error::ConfigLine { line: lineno + 1, msg: "empty genotype line".into() })?;
            g.cells.push(decode(tokens, idx)?);
        }
        g.ensure_valid()?;
        Ok(g)
    }

    /// Short token string such as `0120|1:1012` used in logs.
    pub fn compact(&self) -> String {
        self.cells
            .iter()
            .map(|c| encode(c).iter().map(ToString::to_string).collect::<String>())
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// `∏_{s<n} 2^s · 36`.
pub fn search_space_size(num_cells: usize) -> u128 {
    (0..num_cells).map(|s| (1u128 << s) * CATEGORICAL_COMBINATIONS).product()
}

/// Uniform draw of one cell gene.
pub fn random_cell<R: Rng + ?Sized>(cell_index: usize, rng: &mut R) -> CellGene {
    let tokens: Vec<usize> = TokenSpec::for_cell(cell_index).vocab_sizes().iter().map(|&v| rng.random_range(0..v)).collect();
    decode(&tokens, cell_index).expect("tokens drawn within vocabulary")
}

/// Uniform draw over the full space of `num_cells`-cell genotypes.
pub fn random_genotype<R: Rng + ?Sized>(
    num_cells: usize,
    base_resolution: usize,
    base_channels: usize,
    z_dim: usize,
    rng: &mut R,
) -> Genotype {
    let cells = (0..num_cells).map(|s| random_cell(s, rng)).collect();
    Genotype::new(cells, base_resolution, base_channels, z_dim)
}

/// Every gene of cell `s`, in token-lexicographic order.
pub fn enumerate_cell(cell_index: usize) -> Vec<CellGene> {
    let spec = TokenSpec::for_cell(cell_index);
    let mut out = Vec::new();
    let mut tokens = vec![0usize; spec.slot_count()];
    loop {
        out.push(decode(&tokens, cell_index).expect("enumerated tokens are in range"));
        let mut slot = spec.slot_count();
        loop {
            if slot == 0 {
                return out;
            }
            slot -= 1;
            tokens[slot] += 1;
            if tokens[slot] < spec.vocab(slot) {
                break;
            }
            tokens[slot] = 0;
        }
    }
}

/// One node of a generator's op graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanOp {
    /// `z → base_channels × base_resolution²` linear map.
    LatentProjection { z_dim: usize, channels: usize, resolution: usize },
    /// Main-path ×2 upsampling at the head of a cell.
    Upsample { cell: usize, mode: UpsampleType, to_resolution: usize },
    /// One 3×3 convolution block in the cell's activation style.
    ConvBlock { cell: usize, block: usize, style: ConvType, norm: NormType, channels: usize, resolution: usize },
    /// Skip-in branch: upsample the output of `source` with the cell's mode,
    /// then a 1×1 channel-matching convolution.
    SkipIn { cell: usize, source: usize, mode: UpsampleType, from_resolution: usize, to_resolution: usize },
    /// Addition of side inputs into the main path.
    Merge { cell: usize, inputs: Vec<MergeInput> },
    /// ReLU → 1×1 convolution → tanh.
    ToImage { channels: usize, image_channels: usize, resolution: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeInput {
    /// Output of the skip-in branch from this source cell.
    Skip(usize),
    /// The cell's upsampled input (in-cell shortcut).
    Shortcut,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub ops: Vec<PlanOp>,
    pub output_resolution: usize,
    pub image_channels: usize,
}

impl LayerPlan {
    pub fn merge_count(&self, cell: usize) -> usize {
        self.ops.iter().filter(|op| matches!(op, PlanOp::Merge { cell: c, .. } if *c == cell)).count()
    }
}

/// Deterministic op graph for a valid genotype.
///
/// Per cell: upsample, conv block 1, the skip-in merge (if any), conv block 2,
/// then the shortcut merge (if SC is on).
pub fn to_layer_plan(genotype: &Genotype) -> Result<LayerPlan> {
    genotype.ensure_valid()?;
    let ch = genotype.base_channels;
    let mut ops = vec![PlanOp::LatentProjection { z_dim: genotype.z_dim, channels: ch, resolution: genotype.base_resolution }];
    for cell in &genotype.cells {
        let s = cell.cell_index;
        let res = genotype.base_resolution << (s + 1);
        ops.push(PlanOp::Upsample { cell: s, mode: cell.upsample, to_resolution: res });
        ops.push(PlanOp::ConvBlock { cell: s, block: 0, style: cell.conv, norm: cell.norm, channels: ch, resolution: res });
        let sources: Vec<usize> = cell.skip_sources().collect();
        for &j in &sources {
            ops.push(PlanOp::SkipIn {
                cell: s,
                source: j,
                mode: cell.upsample,
                from_resolution: genotype.base_resolution << (j + 1),
                to_resolution: res,
            });
        }
        if !sources.is_empty() {
            ops.push(PlanOp::Merge { cell: s, inputs: sources.iter().map(|&j| MergeInput::Skip(j)).collect() });
        }
        ops.push(PlanOp::ConvBlock { cell: s, block: 1, style: cell.conv, norm: cell.norm, channels: ch, resolution: res });
        if cell.shortcut {
            ops.push(PlanOp::Merge { cell: s, inputs: vec![MergeInput::Shortcut] });
        }
    }
    let output_resolution = genotype.output_resolution();
    ops.push(PlanOp::ToImage { channels: ch, image_channels: IMAGE_CHANNELS, resolution: output_resolution });
    Ok(LayerPlan { ops, output_resolution, image_channels: IMAGE_CHANNELS })
}
