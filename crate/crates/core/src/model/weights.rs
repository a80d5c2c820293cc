use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayD, Ix1, Ix2, Ix3};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor_io::{read_tensor, write_tensor, TensorFile};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub w: Array1<f32>,
    pub b: Array1<f32>,
}

impl LayerNormParams {
    pub fn identity(d_model: usize) -> Self {
        Self {
            w: Array1::ones(d_model),
            b: Array1::zeros(d_model),
        }
    }
}

/// Per-head projections. Reading matrices are `[head, d_model, d_head]`,
/// the output matrix is `[head, d_head, d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w_q: Array3<f32>,
    pub b_q: Array2<f32>,
    pub w_k: Array3<f32>,
    pub b_k: Array2<f32>,
    pub w_v: Array3<f32>,
    pub b_v: Array2<f32>,
    pub w_o: Array3<f32>,
    pub b_o: Array1<f32>,
}

/// Row `j` of `w_in` and of `w_out` are neuron `j`'s reading and writing
/// vectors, both `[d_mlp, d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub w_in: Array2<f32>,
    pub b_in: Array1<f32>,
    pub w_out: Array2<f32>,
    pub b_out: Array1<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNormParams,
    pub attn: AttentionWeights,
    pub ln2: LayerNormParams,
    pub mlp: MlpWeights,
}

/// All learned tensors of the decoder. `w_u` is `[d_model, d_vocab]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub w_e: Array2<f32>,
    pub w_pos: Array2<f32>,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNormParams,
    pub w_u: Array2<f32>,
    pub b_u: Array1<f32>,
}

fn expect_shape(name: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!(
            "{name}: expected {want:?}, found {got:?}"
        )));
    }
    Ok(())
}

impl ModelWeights {
    /// Checks every tensor against the configuration.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let (dm, dh, nh, dv) = (c.d_model, c.d_head(), c.n_head, c.d_vocab);
        expect_shape("embed.W_E", self.w_e.shape(), &[dv, dm])?;
        expect_shape("pos_embed.W_pos", self.w_pos.shape(), &[c.n_ctx, dm])?;
        if self.blocks.len() != c.n_layer {
            return Err(Error::Shape(format!(
                "config has {} layers but {} blocks were given",
                c.n_layer,
                self.blocks.len()
            )));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("blocks.{l}.{s}");
            expect_shape(&p("ln1.w"), b.ln1.w.shape(), &[dm])?;
            expect_shape(&p("ln1.b"), b.ln1.b.shape(), &[dm])?;
            expect_shape(&p("ln2.w"), b.ln2.w.shape(), &[dm])?;
            expect_shape(&p("ln2.b"), b.ln2.b.shape(), &[dm])?;
            let a = &b.attn;
            for (n, w) in [("W_Q", &a.w_q), ("W_K", &a.w_k), ("W_V", &a.w_v)] {
                expect_shape(&p(&format!("attn.{n}")), w.shape(), &[nh, dm, dh])?;
            }
            for (n, w) in [("b_Q", &a.b_q), ("b_K", &a.b_k), ("b_V", &a.b_v)] {
                expect_shape(&p(&format!("attn.{n}")), w.shape(), &[nh, dh])?;
            }
            expect_shape(&p("attn.W_O"), a.w_o.shape(), &[nh, dh, dm])?;
            expect_shape(&p("attn.b_O"), a.b_o.shape(), &[dm])?;
            let m = &b.mlp;
            expect_shape(&p("mlp.W_in"), m.w_in.shape(), &[c.d_mlp, dm])?;
            expect_shape(&p("mlp.b_in"), m.b_in.shape(), &[c.d_mlp])?;
            expect_shape(&p("mlp.W_out"), m.w_out.shape(), &[c.d_mlp, dm])?;
            expect_shape(&p("mlp.b_out"), m.b_out.shape(), &[dm])?;
        }
        expect_shape("ln_final.w", self.ln_final.w.shape(), &[dm])?;
        expect_shape("ln_final.b", self.ln_final.b.shape(), &[dm])?;
        expect_shape("unembed.W_U", self.w_u.shape(), &[dm, dv])?;
        expect_shape("unembed.b_U", self.b_u.shape(), &[dv])?;
        Ok(())
    }

    /// Flat neuron index (layer-major) of `(layer, index)`.
    pub fn flat_neuron(&self, layer: usize, index: usize) -> usize {
        layer * self.config.d_mlp + index
    }

    /// Named tensors in directory order. Names double as file stems.
    pub fn named_tensors(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out: Vec<(String, ArrayD<f32>)> = vec![
            ("embed.W_E".into(), self.w_e.clone().into_dyn()),
            ("pos_embed.W_pos".into(), self.w_pos.clone().into_dyn()),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("blocks.{l}.{s}");
            out.push((p("ln1.w"), b.ln1.w.clone().into_dyn()));
            out.push((p("ln1.b"), b.ln1.b.clone().into_dyn()));
            out.push((p("attn.W_Q"), b.attn.w_q.clone().into_dyn()));
            out.push((p("attn.b_Q"), b.attn.b_q.clone().into_dyn()));
            out.push((p("attn.W_K"), b.attn.w_k.clone().into_dyn()));
            out.push((p("attn.b_K"), b.attn.b_k.clone().into_dyn()));
            out.push((p("attn.W_V"), b.attn.w_v.clone().into_dyn()));
            out.push((p("attn.b_V"), b.attn.b_v.clone().into_dyn()));
            out.push((p("attn.W_O"), b.attn.w_o.clone().into_dyn()));
            out.push((p("attn.b_O"), b.attn.b_o.clone().into_dyn()));
            out.push((p("ln2.w"), b.ln2.w.clone().into_dyn()));
            out.push((p("ln2.b"), b.ln2.b.clone().into_dyn()));
            out.push((p("mlp.W_in"), b.mlp.w_in.clone().into_dyn()));
            out.push((p("mlp.b_in"), b.mlp.b_in.clone().into_dyn()));
            out.push((p("mlp.W_out"), b.mlp.w_out.clone().into_dyn()));
            out.push((p("mlp.b_out"), b.mlp.b_out.clone().into_dyn()));
        }
        out.push(("ln_final.w".into(), self.ln_final.w.clone().into_dyn()));
        out.push(("ln_final.b".into(), self.ln_final.b.clone().into_dyn()));
        out.push(("unembed.W_U".into(), self.w_u.clone().into_dyn()));
        out.push(("unembed.b_U".into(), self.b_u.clone().into_dyn()));
        out
    }

    /// Writes `config.json` plus one `<name>.bin` tensor file per parameter.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let cfg = serde_json::to_string_pretty(&self.config)?;
        let cfg_path = dir.join("config.json");
        std::fs::write(&cfg_path, cfg + "\n").map_err(|e| Error::file(&cfg_path, e))?;
        for (name, t) in self.named_tensors() {
            write_tensor(&TensorFile::from_array(t.view())?, dir.join(format!("{name}.bin")))?;
        }
        Ok(())
    }

    /// Loads a model directory. With tied embeddings a missing `unembed.W_U`
    /// is taken as the transpose of `embed.W_E`; a missing `unembed.b_U` is zero.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cfg_path = dir.join("config.json");
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::file(&cfg_path, e))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        config.validate()?;

        let load = |name: &str| -> Result<ArrayD<f32>> {
            Ok(read_tensor(dir.join(format!("{name}.bin")))?.into_array())
        };
        let load1 = |name: &str| -> Result<Array1<f32>> {
            load(name)?
                .into_dimensionality::<Ix1>()
                .map_err(|_| Error::Shape(format!("{name} must be rank 1")))
        };
        let load2 = |name: &str| -> Result<Array2<f32>> {
            load(name)?
                .into_dimensionality::<Ix2>()
                .map_err(|_| Error::Shape(format!("{name} must be rank 2")))
        };
        let load3 = |name: &str| -> Result<Array3<f32>> {
            load(name)?
                .into_dimensionality::<Ix3>()
                .map_err(|_| Error::Shape(format!("{name} must be rank 3")))
        };

        let w_e = load2("embed.W_E")?;
        let w_pos = load2("pos_embed.W_pos")?;
        let mut blocks = Vec::with_capacity(config.n_layer);
        for l in 0..config.n_layer {
            let p = |s: &str| format!("blocks.{l}.{s}");
            blocks.push(Block {
                ln1: LayerNormParams {
                    w: load1(&p("ln1.w"))?,
                    b: load1(&p("ln1.b"))?,
                },
                attn: AttentionWeights {
                    w_q: load3(&p("attn.W_Q"))?,
                    b_q: load2(&p("attn.b_Q"))?,
                    w_k: load3(&p("attn.W_K"))?,
                    b_k: load2(&p("attn.b_K"))?,
                    w_v: load3(&p("attn.W_V"))?,
                    b_v: load2(&p("attn.b_V"))?,
                    w_o: load3(&p("attn.W_O"))?,
                    b_o: load1(&p("attn.b_O"))?,
                },
                ln2: LayerNormParams {
                    w: load1(&p("ln2.w"))?,
                    b: load1(&p("ln2.b"))?,
                },
                mlp: MlpWeights {
                    w_in: load2(&p("mlp.W_in"))?,
                    b_in: load1(&p("mlp.b_in"))?,
                    w_out: load2(&p("mlp.W_out"))?,
                    b_out: load1(&p("mlp.b_out"))?,
                },
            });
        }
        let ln_final = LayerNormParams {
            w: load1("ln_final.w")?,
            b: load1("ln_final.b")?,
        };
        let w_u_path = dir.join("unembed.W_U.bin");
        let w_u = if w_u_path.exists() {
            load2("unembed.W_U")?
        } else if config.tied_embeddings {
            w_e.t().to_owned()
        } else {
            return Err(Error::file(
                w_u_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing unembedding"),
            ));
        };
        let b_u = if dir.join("unembed.b_U.bin").exists() {
            load1("unembed.b_U")?
        } else {
            Array1::zeros(config.d_vocab)
        };
        let w = ModelWeights {
            config,
            w_e,
            w_pos,
            blocks,
            ln_final,
            w_u,
            b_u,
        };
        w.validate()?;
        Ok(w)
    }
}
