use super::init::ParamBuilder;
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Affine map `x W + b` applied to every row of `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let w = pb.fan_in_uniform(&format!("{name}.w"), in_dim, out_dim)?;
        let b = pb.zeros(&format!("{name}.b"), 1, out_dim)?;
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::shape(
                "linear",
                format!("input {:?}, layer expects width {}", shape, self.in_dim),
            ));
        }
        let rows = shape[0];
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        let bb = g.broadcast_rows(b, rows)?;
        g.add(xw, bb)
    }
}

/// Layer widths of an MLP: ReLU after every hidden layer, linear output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input: usize, widths: Vec<usize>) -> Result<Self> {
        if widths.is_empty() || input == 0 || widths.contains(&0) {
            return Err(Error::Invalid(format!("bad MLP widths {input} -> {widths:?}")));
        }
        Ok(MlpSpec { input, widths })
    }

    /// `layers` layers of equal width `width`.
    pub fn uniform(input: usize, width: usize, layers: usize) -> Result<Self> {
        Self::new(input, vec![width; layers])
    }

    pub fn output(&self) -> usize {
        *self.widths.last().expect("nonempty widths")
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, spec: MlpSpec) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.widths.len());
        let mut in_dim = spec.input;
        for (i, &w) in spec.widths.iter().enumerate() {
            layers.push(Linear::new(pb, &format!("{name}.l{i}"), in_dim, w)?);
            in_dim = w;
        }
        Ok(Mlp { spec, layers })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}
