use super::{BnRef, Builder, ParamId, Runtime};
use crate::error::{dim_err, Error, Result};
use crate::neuron::LifConfig;
use crate::tensor::{conv_output_size, Var};
use serde::{Deserialize, Serialize};

/// Placement of the spiking nonlinearities inside a residual block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockVariant {
    /// conv → LIF → BN → conv → BN, add skip, LIF.
    #[default]
    Baseline,
    /// conv → BN → LIF → conv → BN, add skip, LIF.
    LifAfterBn,
    /// Baseline branch with an extra LIF before the addition.
    LifBeforeAdd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    #[serde(default)]
    pub variant: BlockVariant,
    pub lif_inner: LifConfig,
    pub lif_out: LifConfig,
}

impl BlockSpec {
    /// A 1×1 conv + BN projection is used whenever the skip changes shape.
    pub fn has_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [c, h, w] = input else {
            return Err(Error::Config(format!("residual block expects (C, H, W), got {input:?}")));
        };
        if *c != self.in_channels {
            return Err(Error::Config(format!("block expects {} channels, got {c}", self.in_channels)));
        }
        let to_cfg = |e: Error| Error::Config(e.to_string());
        let ho = conv_output_size(*h, 3, self.stride, 1).map_err(to_cfg)?;
        let wo = conv_output_size(*w, 3, self.stride, 1).map_err(to_cfg)?;
        Ok(vec![self.out_channels, ho, wo])
    }

    /// Ordered stage names of the residual branch.
    pub fn branch_stages(&self) -> Vec<&'static str> {
        match self.variant {
            BlockVariant::Baseline => vec!["conv3x3", "lif", "bn", "conv3x3", "bn"],
            BlockVariant::LifAfterBn => vec!["conv3x3", "bn", "lif", "conv3x3", "bn"],
            BlockVariant::LifBeforeAdd => vec!["conv3x3", "lif", "bn", "conv3x3", "bn", "lif"],
        }
    }

    pub fn describe(&self) -> String {
        let skip = if self.has_projection() { "conv1x1 > bn" } else { "identity" };
        format!(
            "block[{:?}] {}->{} s{}: {} | skip {} | add > lif",
            self.variant,
            self.in_channels,
            self.out_channels,
            self.stride,
            self.branch_stages().join(" > "),
            skip
        )
    }
}

/// Spiking residual block whose output LIF sits after the skip addition.
#[derive(Clone, Debug)]
pub struct ActAfterAdditionBlock {
    pub spec: BlockSpec,
    conv1: ParamId,
    bn1: BnRef,
    conv2: ParamId,
    bn2: BnRef,
    projection: Option<(ParamId, BnRef)>,
}

impl ActAfterAdditionBlock {
    pub fn build(spec: &BlockSpec, name: &str, b: &mut Builder<'_>) -> Result<Self> {
        spec.lif_inner.validate()?;
        spec.lif_out.validate()?;
        if spec.stride == 0 {
            return Err(Error::Config("block stride must be positive".into()));
        }
        let (ci, co) = (spec.in_channels, spec.out_channels);
        Ok(ActAfterAdditionBlock {
            conv1: b.conv(&format!("{name}.conv1.w"), co, ci, 3),
            bn1: b.bn(&format!("{name}.bn1"), co),
            conv2: b.conv(&format!("{name}.conv2.w"), co, co, 3),
            bn2: b.bn(&format!("{name}.bn2"), co),
            projection: spec
                .has_projection()
                .then(|| (b.conv(&format!("{name}.proj.w"), co, ci, 1), b.bn(&format!("{name}.proj.bn"), co))),
            spec: spec.clone(),
        })
    }

    /// Applies the block to a stacked (T·B, C, H, W) sequence.
    pub fn forward(&self, rt: &mut Runtime<'_>, s: Var) -> Result<Var> {
        let inner = self.spec.lif_inner;
        let stride = self.spec.stride;
        let h = rt.conv(s, self.conv1, stride, 1)?;
        let h = match self.spec.variant {
            BlockVariant::Baseline | BlockVariant::LifBeforeAdd => {
                let h = rt.lif(h, &inner)?;
                rt.bn(h, &self.bn1)?
            }
            BlockVariant::LifAfterBn => {
                let h = rt.bn(h, &self.bn1)?;
                rt.lif(h, &inner)?
            }
        };
        let h = rt.conv(h, self.conv2, 1, 1)?;
        let mut branch = rt.bn(h, &self.bn2)?;
        if self.spec.variant == BlockVariant::LifBeforeAdd {
            branch = rt.lif(branch, &inner)?;
        }
        let skip = match &self.projection {
            Some((w, bn)) => {
                let p = rt.conv(s, *w, stride, 0)?;
                rt.bn(p, bn)?
            }
            None => s,
        };
        if rt.tape.shape(branch) != rt.tape.shape(skip) {
            return dim_err(format!(
                "residual branch {:?} vs skip {:?}",
                rt.tape.shape(branch),
                rt.tape.shape(skip)
            ));
        }
        let sum = rt.tape.add(branch, skip)?;
        rt.lif(sum, &self.spec.lif_out)
    }
}

/// Runs a block over per-step inputs from rest; one output per step.
pub fn block_forward(block: &ActAfterAdditionBlock, rt: &mut Runtime<'_>, inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.len() != rt.steps {
        return Err(Error::Contract(format!("{} inputs for a {}-step runtime", inputs.len(), rt.steps)));
    }
    let x = rt.tape.stack_rows(inputs)?;
    let y = block.forward(rt, x)?;
    rt.tape.split_rows(y, rt.steps)
}
