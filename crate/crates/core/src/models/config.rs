use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::AttentionKind;
use crate::rmr::Ablation;

/// The model family: which of sequential latent, attention and recurrent
/// memory each kind has.
///
/// | kind      | sequential latent | attention | recurrent memory |
/// |-----------|-------------------|-----------|------------------|
/// | np        |                   |           |                  |
/// | anp       |                   | yes       |                  |
/// | snp       | yes               |           |                  |
/// | asnp_w    | yes               | window    |                  |
/// | asnp_rmr  | yes               | yes       | yes              |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Np,
    Anp,
    Snp,
    AsnpW,
    AsnpRmr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Np, ModelKind::Anp, ModelKind::Snp, ModelKind::AsnpW, ModelKind::AsnpRmr];

    pub fn is_sequential(self) -> bool {
        matches!(self, ModelKind::Snp | ModelKind::AsnpW | ModelKind::AsnpRmr)
    }

    pub fn has_attention(self) -> bool {
        matches!(self, ModelKind::Anp | ModelKind::AsnpW | ModelKind::AsnpRmr)
    }

    pub fn has_memory(self) -> bool {
        self == ModelKind::AsnpRmr
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Np => "np",
            ModelKind::Anp => "anp",
            ModelKind::Snp => "snp",
            ModelKind::AsnpW => "asnp_w",
            ModelKind::AsnpRmr => "asnp_rmr",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "np" => Ok(ModelKind::Np),
            "anp" => Ok(ModelKind::Anp),
            "snp" => Ok(ModelKind::Snp),
            "asnp_w" | "asnp-w" => Ok(ModelKind::AsnpW),
            "asnp_rmr" | "asnp-rmr" => Ok(ModelKind::AsnpRmr),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_x: usize,
    pub d_y: usize,
    /// Hidden, representation and LSTM width.
    pub h: usize,
    pub z_dim: usize,
    /// Memory cells (asnp_rmr) or window size (asnp_w); `None` is an
    /// unbounded window.
    pub k: Option<usize>,
    pub attention: AttentionKind,
    pub task_step_encoding: bool,
    pub ablation: Ablation,
    pub latent_layers: usize,
    pub det_layers: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: `h = 32`, `z_dim = 16`, `K = 4`, 4-head attention.
    pub fn new(kind: ModelKind, d_x: usize, d_y: usize) -> Self {
        ModelConfig {
            kind,
            d_x,
            d_y,
            h: 32,
            z_dim: 16,
            k: Some(4),
            attention: AttentionKind::Multihead { heads: crate::layers::attention::DEFAULT_HEADS },
            task_step_encoding: kind != ModelKind::Snp,
            ablation: Ablation::None,
            latent_layers: 3,
            det_layers: 6,
        }
    }

    /// Input width after optional task-step augmentation.
    pub fn x_width(&self) -> usize {
        self.d_x + usize::from(self.task_step_encoding)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_x == 0 || self.d_y == 0 || self.h == 0 || self.z_dim == 0 {
            return bad("d_x, d_y, h and z_dim must be positive".into());
        }
        if self.latent_layers == 0 || self.det_layers == 0 {
            return bad("encoders need at least one layer".into());
        }
        match self.kind {
            ModelKind::AsnpRmr if self.k.is_none() => return bad("asnp_rmr needs a finite memory size k".into()),
            ModelKind::AsnpRmr | ModelKind::AsnpW if self.k == Some(0) => return bad("k must be >= 1".into()),
            _ => {}
        }
        if self.ablation != Ablation::None && self.kind != ModelKind::AsnpRmr {
            return bad(format!("ablation {} only applies to asnp_rmr", self.ablation));
        }
        if matches!(self.kind, ModelKind::Anp | ModelKind::AsnpW) && !self.task_step_encoding {
            return bad(format!("{} requires task-step encoding", self.kind));
        }
        if let AttentionKind::Multihead { heads } = self.attention {
            if heads == 0 || self.h % heads != 0 {
                return bad(format!("{heads} heads do not divide h = {}", self.h));
            }
        }
        Ok(())
    }

    pub fn to_kv_lines(&self) -> String {
        let k = self.k.map_or_else(|| "inf".to_string(), |k| k.to_string());
        format!(
            "kind={}\nd_x={}\nd_y={}\nh={}\nz_dim={}\nk={}\nattention={}\ntask_step_encoding={}\nablation={}\nlatent_layers={}\ndet_layers={}\n",
            self.kind,
            self.d_x,
            self.d_y,
            self.h,
            self.z_dim,
            k,
            self.attention,
            self.task_step_encoding,
            self.ablation,
            self.latent_layers,
            self.det_layers
        )
    }

    /// Applies one `key=value` setting. Returns `false` for keys that are
    /// not model settings.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        let parse_usize = |v: &str| {
            v.parse::<usize>().map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
        };
        match key {
            "kind" => self.kind = value.parse()?,
            "d_x" => self.d_x = parse_usize(value)?,
            "d_y" => self.d_y = parse_usize(value)?,
            "h" => self.h = parse_usize(value)?,
            "z_dim" => self.z_dim = parse_usize(value)?,
            "k" => self.k = if value == "inf" { None } else { Some(parse_usize(value)?) },
            "attention" => self.attention = value.parse()?,
            "task_step_encoding" => {
                self.task_step_encoding = value
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: expected true or false, got {value:?}")))?
            }
            "ablation" => self.ablation = value.parse()?,
            "latent_layers" => self.latent_layers = parse_usize(value)?,
            "det_layers" => self.det_layers = parse_usize(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses the output of [`ModelConfig::to_kv_lines`]. Every key must be a
    /// model setting.
    pub fn from_kv_lines(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(ModelKind::Np, 1, 1);
        let mut kind_seen = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "kind" {
                kind_seen = true;
            }
            if !cfg.apply_kv(k, v)? {
                return Err(Error::Config(format!("unknown model key {k:?}")));
            }
        }
        if !kind_seen {
            return Err(Error::Config("model header is missing kind".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
