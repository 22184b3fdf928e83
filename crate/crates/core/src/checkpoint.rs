//! Text checkpoints. Layout:
//!
//! ```text
//! NFCKPT v1
//! CONFIG <one line of the run configuration in TOML>   (repeated)
//! STATE <key> <value>                                   (repeated)
//! ACTIVATIONS <tag per layer>
//! DROPOUT <0|1 per layer>
//! TENSOR <name> <dims...>
//! <row-major values, one row per line>
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so reading
//! a checkpoint back reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::crf::PairwiseWeights;
use crate::formats::{write_atomic, FormatError, Result};
use crate::linalg::Matrix;
use crate::pipeline::Standardizer;
use crate::trainer::{EpochRecord, TrainState};
use crate::unary::{Activation, Layer, UnaryModel};

pub const CHECKPOINT_HEADER: &str = "NFCKPT v1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub unary_only: bool,
    pub state: TrainState,
    pub standardizer: Standardizer,
}

fn tensor(out: &mut String, name: &str, dims: &[usize], values: &[f64]) {
    let _ = write!(out, "TENSOR {name}");
    for d in dims {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    let row = dims.last().copied().unwrap_or(1).max(1);
    for chunk in values.chunks(row) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

impl Checkpoint {
    pub fn encode(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        for line in self
            .config
            .to_toml()
            .lines()
            .filter(|l| !l.trim().is_empty())
        {
            let _ = writeln!(out, "CONFIG {line}");
        }
        let s = &self.state;
        let model = &s.model;
        let _ = writeln!(out, "STATE epoch {}", s.epoch);
        let _ = writeln!(out, "STATE steps {}", s.steps);
        let _ = writeln!(out, "STATE unary_only {}", self.unary_only);
        let _ = writeln!(out, "STATE model_seed {}", model.seed());
        let _ = writeln!(out, "STATE dropout_keep {}", model.dropout_keep());
        let tags: Vec<&str> = model.layers().iter().map(|l| l.activation.tag()).collect();
        let _ = writeln!(out, "ACTIVATIONS {}", tags.join(" "));
        let drop: Vec<&str> = model
            .layers()
            .iter()
            .map(|l| if l.dropout { "1" } else { "0" })
            .collect();
        let _ = writeln!(out, "DROPOUT {}", drop.join(" "));
        for (i, l) in model.layers().iter().enumerate() {
            tensor(
                &mut out,
                &format!("layer{i}.weight"),
                &[l.outputs(), l.inputs()],
                l.weights.as_slice(),
            );
            tensor(&mut out, &format!("layer{i}.bias"), &[l.outputs()], &l.bias);
        }
        tensor(
            &mut out,
            "velocity.theta",
            &[s.velocity_theta.len()],
            &s.velocity_theta,
        );
        tensor(&mut out, "beta", &[s.beta.len()], s.beta.as_slice());
        tensor(
            &mut out,
            "velocity.beta",
            &[s.velocity_beta.len()],
            &s.velocity_beta,
        );
        tensor(
            &mut out,
            "gamma",
            &[self.config.gammas.len()],
            &self.config.gammas,
        );
        let st = &self.standardizer;
        tensor(&mut out, "standardizer.mean", &[st.mean.len()], &st.mean);
        tensor(&mut out, "standardizer.scale", &[st.scale.len()], &st.scale);
        let hist: Vec<f64> = s
            .history
            .iter()
            .flat_map(|r| [r.epoch as f64, r.lr, r.mean_nll])
            .collect();
        tensor(&mut out, "history", &[s.history.len(), 3], &hist);
        out
    }

    pub fn decode(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().peekable();
        if lines.next().map(str::trim) != Some(CHECKPOINT_HEADER) {
            return Err(format!("missing '{CHECKPOINT_HEADER}' header"));
        }
        let mut config_text = String::new();
        let mut state = std::collections::HashMap::new();
        let mut activations = Vec::new();
        let mut dropout = Vec::new();
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        while let Some(line) = lines.next() {
            let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
            match tag {
                "" => {}
                "CONFIG" => {
                    config_text.push_str(rest);
                    config_text.push('\n');
                }
                "STATE" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| format!("malformed state line '{line}'"))?;
                    state.insert(k.to_string(), v.trim().to_string());
                }
                "ACTIVATIONS" => {
                    activations = rest
                        .split_whitespace()
                        .map(|t| Activation::from_tag(t).ok_or(format!("unknown activation '{t}'")))
                        .collect::<std::result::Result<_, _>>()?;
                }
                "DROPOUT" => {
                    dropout = rest.split_whitespace().map(|t| t == "1").collect();
                }
                "TENSOR" => {
                    let mut parts = rest.split_whitespace();
                    let name = parts.next().ok_or("tensor without a name")?.to_string();
                    let dims = parts
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| format!("bad dimension '{d}'"))
                        })
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    let count: usize = dims.iter().product();
                    let mut values = Vec::with_capacity(count);
                    while values.len() < count {
                        let row = lines.next().ok_or(format!("tensor {name} is truncated"))?;
                        for v in row.split_whitespace() {
                            values.push(v.parse::<f64>().map_err(|_| format!("bad value '{v}'"))?);
                        }
                    }
                    if values.len() != count {
                        return Err(format!(
                            "tensor {name} has {} values, expected {count}",
                            values.len()
                        ));
                    }
                    tensors.push((name, dims, values));
                }
                other => return Err(format!("unknown section '{other}'")),
            }
        }

        let mut config = RunConfig::from_toml(&config_text).map_err(|e| e.to_string())?;
        let get = |k: &str| state.get(k).ok_or(format!("missing state '{k}'"));
        let num = |k: &str| -> std::result::Result<u64, String> {
            get(k)?.parse().map_err(|_| format!("bad state '{k}'"))
        };
        let take = |name: &str| -> std::result::Result<(Vec<usize>, Vec<f64>), String> {
            tensors
                .iter()
                .find(|t| t.0 == name)
                .map(|t| (t.1.clone(), t.2.clone()))
                .ok_or(format!("missing tensor '{name}'"))
        };

        if dropout.len() != activations.len() {
            return Err("ACTIVATIONS and DROPOUT disagree on the layer count".into());
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (i, (&activation, &drop)) in activations.iter().zip(&dropout).enumerate() {
            let (wd, w) = take(&format!("layer{i}.weight"))?;
            let (bd, b) = take(&format!("layer{i}.bias"))?;
            if wd.len() != 2 || bd != [wd[0]] {
                return Err(format!("layer {i} has inconsistent shapes"));
            }
            layers.push(Layer {
                weights: Matrix::from_row_major(wd[0], wd[1], w),
                bias: b,
                activation,
                dropout: drop,
            });
        }
        let keep: f64 = get("dropout_keep")?
            .parse()
            .map_err(|_| "bad state 'dropout_keep'".to_string())?;
        let model =
            UnaryModel::from_layers(layers, keep, num("model_seed")?).map_err(|e| e.to_string())?;
        let beta = PairwiseWeights::new(take("beta")?.1).map_err(|e| e.to_string())?;
        let gamma = take("gamma")?.1;
        config.gammas = gamma
            .try_into()
            .map_err(|_| "gamma must have one entry per descriptor".to_string())?;
        config.validate().map_err(|e| e.to_string())?;

        let mut st = TrainState::new(model, beta);
        let vt = take("velocity.theta")?.1;
        let vb = take("velocity.beta")?.1;
        if vt.len() != st.velocity_theta.len() || vb.len() != st.velocity_beta.len() {
            return Err("velocity shapes do not match the parameters".into());
        }
        st.velocity_theta = vt;
        st.velocity_beta = vb;
        st.epoch = num("epoch")? as usize;
        st.steps = num("steps")?;
        let (hd, h) = take("history")?;
        if hd.len() != 2 || hd[1] != 3 {
            return Err("history must be an E x 3 tensor".into());
        }
        st.history = h
            .chunks(3)
            .map(|r| EpochRecord {
                epoch: r[0] as usize,
                lr: r[1],
                mean_nll: r[2],
            })
            .collect();

        let mean = take("standardizer.mean")?.1;
        let scale = take("standardizer.scale")?.1;
        if mean.len() != scale.len() || mean.len() != st.model.input_width() {
            return Err("standardizer width does not match the network input".into());
        }
        let unary_only = match get("unary_only")?.as_str() {
            "true" => true,
            "false" => false,
            v => return Err(format!("bad state 'unary_only' value '{v}'")),
        };
        Ok(Self {
            config,
            unary_only,
            state: st,
            standardizer: Standardizer { mean, scale },
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.encode().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::decode(&text).map_err(|m| FormatError::parse(path, m))
    }
}
