//! ASCII checkpoint container.
//!
//! ```text
//! relpu-checkpoint 1
//! variant <baseline|relpu_minus|relpu>
//! config_hash <hex>
//! epoch <completed epochs>
//! net.encoder_widths <w1> <w2> ...
//! net.k <k>
//! net.decoder_hidden <h>
//! net.ratio <r>
//! adam.lr / adam.beta1 / adam.beta2 / adam.eps / adam.decay / adam.decay_every <value>
//! opt.step <adam steps>
//! opt.lr <current learning rate>
//! tensor <param|adam_m|adam_v> <name> <rows> <cols>
//! <rows lines of cols values>
//! ...
//! end
//! ```
//!
//! Tensors appear in parameter order, all `param` blocks first, then `adam_m`,
//! then `adam_v`. Numbers use the shortest round-trip decimal form.

use std::fmt::Write as _;
use std::path::Path;

use super::{ModelVariant, TrainState, VariantKind};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};
use crate::nn::{AdamConfig, NetConfig, OptimizerState};

pub const CHECKPOINT_MAGIC: &str = "relpu-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub config_hash: String,
}

fn write_tensor(s: &mut String, section: &str, name: &str, m: &Matrix) {
    writeln!(s, "tensor {section} {name} {} {}", m.rows(), m.cols()).unwrap();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
}

impl Checkpoint {
    pub fn render(&self) -> String {
        let model = &self.state.model;
        let opt = &self.state.opt;
        let net = &model.config;
        let a = &opt.config;
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(s, "variant {}", model.kind).unwrap();
        writeln!(s, "config_hash {}", if self.config_hash.is_empty() { "-" } else { &self.config_hash }).unwrap();
        writeln!(s, "epoch {}", self.state.epoch).unwrap();
        let widths: Vec<String> = net.encoder_widths.iter().map(|w| w.to_string()).collect();
        writeln!(s, "net.encoder_widths {}", widths.join(" ")).unwrap();
        writeln!(s, "net.k {}", net.k).unwrap();
        writeln!(s, "net.decoder_hidden {}", net.decoder_hidden).unwrap();
        writeln!(s, "net.ratio {}", net.ratio).unwrap();
        writeln!(s, "adam.lr {}", a.lr).unwrap();
        writeln!(s, "adam.beta1 {}", a.beta1).unwrap();
        writeln!(s, "adam.beta2 {}", a.beta2).unwrap();
        writeln!(s, "adam.eps {}", a.eps).unwrap();
        writeln!(s, "adam.decay {}", a.decay).unwrap();
        writeln!(s, "adam.decay_every {}", a.decay_every).unwrap();
        writeln!(s, "opt.step {}", opt.step).unwrap();
        writeln!(s, "opt.lr {}", opt.lr).unwrap();
        let names = model.tensor_names();
        for (name, t) in names.iter().zip(model.tensors()) {
            write_tensor(&mut s, "param", name, t);
        }
        for (name, t) in names.iter().zip(&opt.m) {
            write_tensor(&mut s, "adam_m", name, t);
        }
        for (name, t) in names.iter().zip(&opt.v) {
            write_tensor(&mut s, "adam_v", name, t);
        }
        s.push_str("end\n");
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines().enumerate(),
            line: 0,
            origin,
        };
        let magic = r.next()?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.err(format!("expected {CHECKPOINT_MAGIC:?}, found {magic:?}")));
        }
        let kind: VariantKind = r.field("variant")?.parse().map_err(|e: Error| r.err(e.to_string()))?;
        let hash = r.field("config_hash")?.to_string();
        let epoch = r.parse_field("epoch")?;
        let widths = r
            .field("net.encoder_widths")?
            .split_whitespace()
            .map(|w| w.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| r.err(format!("bad width: {e}")))?;
        let net = NetConfig {
            encoder_widths: widths,
            k: r.parse_field("net.k")?,
            decoder_hidden: r.parse_field("net.decoder_hidden")?,
            ratio: r.parse_field("net.ratio")?,
        };
        let adam = AdamConfig {
            lr: r.parse_field("adam.lr")?,
            beta1: r.parse_field("adam.beta1")?,
            beta2: r.parse_field("adam.beta2")?,
            eps: r.parse_field("adam.eps")?,
            decay: r.parse_field("adam.decay")?,
            decay_every: r.parse_field("adam.decay_every")?,
        };
        let step: u64 = r.parse_field("opt.step")?;
        let lr: f64 = r.parse_field("opt.lr")?;
        net.validate().map_err(|e| r.err(e.to_string()))?;
        let mut model = ModelVariant::new(kind, net, 0).map_err(|e| r.err(e.to_string()))?;
        let names = model.tensor_names();
        let shapes = model.shapes();
        let mut opt = OptimizerState::new(&shapes, adam);
        opt.step = step;
        opt.lr = lr;
        for (i, t) in model.tensors_mut().into_iter().enumerate() {
            *t = r.tensor("param", &names[i], shapes[i])?;
        }
        for (i, name) in names.iter().enumerate() {
            opt.m[i] = r.tensor("adam_m", name, shapes[i])?;
        }
        for (i, name) in names.iter().enumerate() {
            opt.v[i] = r.tensor("adam_v", name, shapes[i])?;
        }
        if r.next()? != "end" {
            return Err(r.err("expected 'end'".into()));
        }
        Ok(Checkpoint {
            state: TrainState { model, opt, epoch },
            config_hash: if hash == "-" { String::new() } else { hash },
        })
    }
}

struct Reader<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
    line: usize,
    origin: &'a Path,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Reader<'a, I> {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            path: self.origin.to_path_buf(),
            line: self.line,
            message,
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim())
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of checkpoint".into()))
            }
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim()),
            _ => Err(self.err(format!("expected '{key} <value>', found {line:?}"))),
        }
    }

    fn parse_field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.field(key)?;
        v.parse().map_err(|e| self.err(format!("bad {key} {v:?}: {e}")))
    }

    fn tensor(&mut self, section: &str, name: &str, shape: (usize, usize)) -> Result<Matrix> {
        let header = self.next()?;
        let want = format!("tensor {section} {name} {} {}", shape.0, shape.1);
        if header != want {
            return Err(self.err(format!("expected {want:?}, found {header:?}")));
        }
        let mut data = Vec::with_capacity(shape.0 * shape.1);
        for _ in 0..shape.0 {
            let row = self.next()?;
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| self.err(format!("bad value {tok:?}: {e}")))?);
            }
            if data.len() - before != shape.1 {
                return Err(self.err(format!("expected {} values, found {}", shape.1, data.len() - before)));
            }
        }
        Ok(Matrix::from_vec(shape.0, shape.1, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state() -> TrainState {
        let cfg = NetConfig {
            encoder_widths: vec![4, 6],
            k: 3,
            decoder_hidden: 5,
            ratio: 4,
        };
        let mut model = ModelVariant::new(VariantKind::Relpu, cfg, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in model.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-1e-3..1e-3);
            }
        }
        let mut st = TrainState::new(model, AdamConfig::default());
        for m in st.opt.m.iter_mut().chain(st.opt.v.iter_mut()) {
            for v in m.data_mut() {
                *v = rng.gen::<f64>() * 1e-7;
            }
        }
        st.opt.step = 17;
        st.opt.lr = 4.75e-4;
        st.epoch = 21;
        st
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = Checkpoint {
            state: state(),
            config_hash: "abc123".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.render(), ck.render());
    }

    #[test]
    fn corrupt_files_report_lines() {
        let ck = Checkpoint {
            state: state(),
            config_hash: String::new(),
        };
        let text = ck.render();
        assert_eq!(Checkpoint::parse(&text, Path::new("c")).unwrap(), ck);
        let broken = text.replacen("net.k 3", "net.k three", 1);
        match Checkpoint::parse(&broken, Path::new("c")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        let truncated: String = text.lines().take(30).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::parse(&truncated, Path::new("c")).is_err());
        assert!(Checkpoint::parse("nope\n", Path::new("c")).is_err());
    }
}
