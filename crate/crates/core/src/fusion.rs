//! Cross-modal fusion trunk: per-modality gated interaction blocks followed
//! by a bidirectional scan over the ordered concatenation of both modality
//! sequences.

use crate::autodiff::{Tape, Var};
use crate::init::linear_init;
use crate::ssm::{
    bimamba_tape, selective_ssm_tape, BiMambaParams, BiMambaVars, SelectiveSsmParams,
    SelectiveSsmVars, SsmConfig,
};
use crate::tensor::{self, Tensor, TensorError};
use rand::Rng;

pub type Result<T> = std::result::Result<T, TensorError>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Shared feature width of both modality streams.
    pub d_model: usize,
    /// Number of stacked local-interaction blocks.
    pub n_liam: usize,
    /// Number of stacked global-interaction blocks.
    pub n_giem: usize,
    pub d_state: usize,
    pub conv_width: usize,
    /// Inner expansion of the global bidirectional blocks.
    pub giem_expand: usize,
    /// Selective (input-dependent) step/projections inside the local blocks.
    pub liam_selective: bool,
    /// Tie the two directions of each global block (symmetry testing only).
    pub giem_tied: bool,
    pub use_skip: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            n_liam: 2,
            n_giem: 1,
            d_state: 16,
            conv_width: 4,
            giem_expand: 2,
            liam_selective: true,
            giem_tied: false,
            use_skip: true,
        }
    }
}

impl FusionConfig {
    fn giem_cfg(&self) -> SsmConfig {
        SsmConfig {
            d_model: self.d_model,
            d_state: self.d_state,
            expand: self.giem_expand,
            conv_width: self.conv_width,
            use_skip: self.use_skip,
        }
    }
}

// ── local interaction block ────────────────────────────────────────────

/// One modality's half of a local-interaction block: layer norm, the two
/// linear projections, a causal depthwise convolution, and a selective scan
/// over the full `d_model` channels.
#[derive(Debug, Clone)]
pub struct LiamStream {
    pub gamma: Tensor,  // 1 x d
    pub beta: Tensor,   // 1 x d
    pub w_x: Tensor,    // d x d
    pub b_x: Tensor,    // 1 x d
    pub w_z: Tensor,    // d x d
    pub b_z: Tensor,    // 1 x d
    pub conv_kernel: Tensor, // w x d
    pub ssm: SelectiveSsmParams,
}

impl LiamStream {
    fn init(cfg: &FusionConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        Self {
            gamma: Tensor::full(1, d, 1.0),
            beta: Tensor::zeros(1, d),
            w_x: linear_init(rng, d, d),
            b_x: Tensor::zeros(1, d),
            w_z: linear_init(rng, d, d),
            b_z: Tensor::zeros(1, d),
            conv_kernel: crate::init::randn(
                rng,
                cfg.conv_width,
                d,
                1.0 / (cfg.conv_width as f64).sqrt(),
            ),
            ssm: SelectiveSsmParams::init(d, cfg.d_state, cfg.use_skip, cfg.liam_selective, rng),
        }
    }

    /// Returns the scan output `y_m` and the gate pre-activation `z_m`.
    fn project(&self, f: &Tensor) -> Result<(Tensor, Tensor)> {
        let normed = tensor::layer_norm(f, &self.gamma, &self.beta, LAYER_NORM_EPS)?;
        let x = tensor::add_row_broadcast(&tensor::matmul(&normed, &self.w_x)?, &self.b_x)?;
        let z = tensor::add_row_broadcast(&tensor::matmul(&normed, &self.w_z)?, &self.b_z)?;
        let u = tensor::silu(&tensor::causal_conv1d(&x, &self.conv_kernel)?);
        let y = self.ssm.scan(&u)?;
        Ok((y, z))
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (name, t) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("w_x", &self.w_x),
            ("b_x", &self.b_x),
            ("w_z", &self.w_z),
            ("b_z", &self.b_z),
            ("conv_kernel", &self.conv_kernel),
        ] {
            out.push((format!("{prefix}.{name}"), t));
        }
        self.ssm.visit(&format!("{prefix}.ssm"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (name, t) in [
            ("gamma", &mut self.gamma),
            ("beta", &mut self.beta),
            ("w_x", &mut self.w_x),
            ("b_x", &mut self.b_x),
            ("w_z", &mut self.w_z),
            ("b_z", &mut self.b_z),
            ("conv_kernel", &mut self.conv_kernel),
        ] {
            out.push((format!("{prefix}.{name}"), t));
        }
        self.ssm.visit_mut(&format!("{prefix}.ssm"), out);
    }

    fn leaves(&self, tape: &mut Tape, tracked: bool) -> LiamStreamVars {
        LiamStreamVars {
            gamma: tape.leaf(self.gamma.clone(), tracked),
            beta: tape.leaf(self.beta.clone(), tracked),
            w_x: tape.leaf(self.w_x.clone(), tracked),
            b_x: tape.leaf(self.b_x.clone(), tracked),
            w_z: tape.leaf(self.w_z.clone(), tracked),
            b_z: tape.leaf(self.b_z.clone(), tracked),
            conv_kernel: tape.leaf(self.conv_kernel.clone(), tracked),
            ssm: self.ssm.leaves(tape, tracked),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LiamStreamVars {
    pub gamma: Var,
    pub beta: Var,
    pub w_x: Var,
    pub b_x: Var,
    pub w_z: Var,
    pub b_z: Var,
    pub conv_kernel: Var,
    pub ssm: SelectiveSsmVars,
}

impl LiamStreamVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        out.extend([
            self.gamma,
            self.beta,
            self.w_x,
            self.b_x,
            self.w_z,
            self.b_z,
            self.conv_kernel,
        ]);
        self.ssm.collect(out);
    }
}

fn stream_project_tape(tape: &mut Tape, s: &LiamStreamVars, f: Var) -> Result<(Var, Var)> {
    let normed = tape.layer_norm(f, s.gamma, s.beta, LAYER_NORM_EPS)?;
    let xl = tape.matmul(normed, s.w_x)?;
    let x = tape.add_row_broadcast(xl, s.b_x)?;
    let zl = tape.matmul(normed, s.w_z)?;
    let z = tape.add_row_broadcast(zl, s.b_z)?;
    let conv = tape.causal_conv1d(x, s.conv_kernel)?;
    let u = tape.silu(conv);
    let y = selective_ssm_tape(tape, &s.ssm, u)?;
    Ok((y, z))
}

/// Local interaction block: two structurally identical, independently
/// parameterized modality streams whose scan outputs are cross-gated by the
/// other stream's SiLU gate, with a residual back onto each modality.
#[derive(Debug, Clone)]
pub struct LiamParams {
    pub hist: LiamStream,
    pub prot: LiamStream,
}

impl LiamParams {
    pub fn init(cfg: &FusionConfig, rng: &mut impl Rng) -> Self {
        Self {
            hist: LiamStream::init(cfg, rng),
            prot: LiamStream::init(cfg, rng),
        }
    }

    /// `(f_h', f_p') = (y_h .* silu(z_p) + f_h, y_p .* silu(z_h) + f_p)`.
    pub fn forward(&self, f_h: &Tensor, f_p: &Tensor) -> Result<(Tensor, Tensor)> {
        if f_h.shape() != f_p.shape() {
            return Err(TensorError::DimensionMismatch {
                op: "liam_forward",
                lhs: vec![f_h.rows(), f_h.cols()],
                rhs: vec![f_p.rows(), f_p.cols()],
            });
        }
        let (y_h, z_h) = self.hist.project(f_h)?;
        let (y_p, z_p) = self.prot.project(f_p)?;
        let out_h = tensor::add(&tensor::mul(&y_h, &tensor::silu(&z_p))?, f_h)?;
        let out_p = tensor::add(&tensor::mul(&y_p, &tensor::silu(&z_h))?, f_p)?;
        Ok((out_h, out_p))
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.hist.visit(&format!("{prefix}.h"), out);
        self.prot.visit(&format!("{prefix}.p"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.hist.visit_mut(&format!("{prefix}.h"), out);
        self.prot.visit_mut(&format!("{prefix}.p"), out);
    }

    pub fn leaves(&self, tape: &mut Tape, tracked: bool) -> LiamVars {
        LiamVars {
            hist: self.hist.leaves(tape, tracked),
            prot: self.prot.leaves(tape, tracked),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LiamVars {
    pub hist: LiamStreamVars,
    pub prot: LiamStreamVars,
}

impl LiamVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        self.hist.collect(out);
        self.prot.collect(out);
    }
}

pub fn liam_tape(tape: &mut Tape, p: &LiamVars, f_h: Var, f_p: Var) -> Result<(Var, Var)> {
    if tape.value(f_h).shape() != tape.value(f_p).shape() {
        return Err(TensorError::DimensionMismatch {
            op: "liam_forward",
            lhs: vec![tape.value(f_h).rows(), tape.value(f_h).cols()],
            rhs: vec![tape.value(f_p).rows(), tape.value(f_p).cols()],
        });
    }
    let (y_h, z_h) = stream_project_tape(tape, &p.hist, f_h)?;
    let (y_p, z_p) = stream_project_tape(tape, &p.prot, f_p)?;
    let g_p = tape.silu(z_p);
    let g_h = tape.silu(z_h);
    let gated_h = tape.mul(y_h, g_p)?;
    let gated_p = tape.mul(y_p, g_h)?;
    let out_h = tape.add(gated_h, f_h)?;
    let out_p = tape.add(gated_p, f_p)?;
    Ok((out_h, out_p))
}

// ── global interaction block ───────────────────────────────────────────

/// Global interaction block: one bidirectional selective block over the
/// concatenated two-modality sequence.
#[derive(Debug, Clone)]
pub struct GiemParams {
    pub bi: BiMambaParams,
}

impl GiemParams {
    pub fn init(cfg: &FusionConfig, rng: &mut impl Rng) -> Self {
        let bi = if cfg.giem_tied {
            BiMambaParams::init_tied(cfg.giem_cfg(), rng)
        } else {
            BiMambaParams::init(cfg.giem_cfg(), rng)
        };
        Self { bi }
    }

    pub fn forward(&self, f_c: &Tensor) -> Result<Tensor> {
        self.bi.forward(f_c)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.bi.visit(prefix, out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.bi.visit_mut(prefix, out);
    }

    pub fn leaves(&self, tape: &mut Tape, tracked: bool) -> BiMambaVars {
        self.bi.leaves(tape, tracked)
    }
}

/// Rows 0..N-1 are histology, rows N..2N-1 are protein, order preserved
/// within each modality.
pub fn giem_concat(f_h: &Tensor, f_p: &Tensor) -> Result<Tensor> {
    tensor::concat_rows(f_h, f_p)
}

// ── trunk ──────────────────────────────────────────────────────────────

/// The full fusion trunk: stacked local blocks, ordered concatenation, then
/// stacked global blocks. No residual is applied around the global blocks.
#[derive(Debug, Clone)]
pub struct FusionTrunk {
    pub cfg: FusionConfig,
    pub liam_blocks: Vec<LiamParams>,
    pub giem_blocks: Vec<GiemParams>,
}

impl FusionTrunk {
    pub fn init(cfg: FusionConfig, rng: &mut impl Rng) -> Self {
        Self {
            cfg,
            liam_blocks: (0..cfg.n_liam).map(|_| LiamParams::init(&cfg, rng)).collect(),
            giem_blocks: (0..cfg.n_giem).map(|_| GiemParams::init(&cfg, rng)).collect(),
        }
    }

    pub fn forward(&self, f_h: &Tensor, f_p: &Tensor) -> Result<Tensor> {
        let mut h = f_h.clone();
        let mut p = f_p.clone();
        for block in &self.liam_blocks {
            let (nh, np) = block.forward(&h, &p)?;
            h = nh;
            p = np;
        }
        let mut fused = giem_concat(&h, &p)?;
        for block in &self.giem_blocks {
            fused = block.forward(&fused)?;
        }
        Ok(fused)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, b) in self.liam_blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.liam{i}"), out);
        }
        for (i, b) in self.giem_blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.giem{i}"), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, b) in self.liam_blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.liam{i}"), out);
        }
        for (i, b) in self.giem_blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.giem{i}"), out);
        }
    }

    pub fn leaves(&self, tape: &mut Tape, tracked: bool) -> TrunkVars {
        TrunkVars {
            liam_blocks: self
                .liam_blocks
                .iter()
                .map(|b| b.leaves(tape, tracked))
                .collect(),
            giem_blocks: self
                .giem_blocks
                .iter()
                .map(|b| b.leaves(tape, tracked))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrunkVars {
    pub liam_blocks: Vec<LiamVars>,
    pub giem_blocks: Vec<BiMambaVars>,
}

impl TrunkVars {
    /// Parameter handles in the same order as `FusionTrunk::visit`.
    pub fn all_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for b in &self.liam_blocks {
            b.collect(&mut out);
        }
        for b in &self.giem_blocks {
            b.collect(&mut out);
        }
        out
    }
}

pub fn trunk_tape(tape: &mut Tape, t: &TrunkVars, f_h: Var, f_p: Var) -> Result<Var> {
    let mut h = f_h;
    let mut p = f_p;
    for block in &t.liam_blocks {
        let (nh, np) = liam_tape(tape, block, h, p)?;
        h = nh;
        p = np;
    }
    let mut fused = tape.concat_rows(h, p)?;
    for block in &t.giem_blocks {
        fused = bimamba_tape(tape, block, fused)?;
    }
    Ok(fused)
}
