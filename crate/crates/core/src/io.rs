//! Datasets (CSV), text checkpoints with hexadecimal floats, and atomic
//! file output.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::metrics::{ReportRow, REPORT_HEADER};
use crate::model::DomainModel;
use crate::nn::{LayerSpec, Mlp};
use crate::sem::{DomainGen, LatentLaw, SemSpec};
use crate::train::{class_ids, one_hot, SampleBank, TrainLog};

// ---------------------------------------------------------------------------
// Hexadecimal floats

/// `%a`-style hexadecimal literal, e.g. `0x1.8p+1` for 3.0. Bit-exact under
/// [`parse_hex_f64`].
pub fn format_hex_f64(v: f64) -> String {
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return format!("{sign}inf");
    }
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    let (lead, exp) = match (exp_bits, mantissa) {
        (0, 0) => return format!("{sign}0x0p+0"),
        (0, _) => (0, -1022),
        _ => (1, exp_bits - 1023),
    };
    let mut frac = format!("{mantissa:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let dot = if frac.is_empty() { String::new() } else { format!(".{frac}") };
    format!("{sign}0x{lead}{dot}p{exp:+}")
}

/// Parses the output of [`format_hex_f64`] (`nan`/`inf` excluded).
pub fn parse_hex_f64(s: &str) -> Result<f64> {
    let bad = || Error::Format(format!("malformed hex float `{s}`"));
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest.strip_prefix("0x").ok_or_else(bad)?;
    let (mant, exp) = rest.split_once('p').ok_or_else(bad)?;
    let exp: i64 = exp.parse().map_err(|_| bad())?;
    let (lead, frac) = match mant.split_once('.') {
        Some((l, f)) if !f.is_empty() => (l, f),
        Some(_) => return Err(bad()),
        None => (mant, ""),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let fraction = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).map_err(|_| bad())? << (4 * (13 - frac.len()))
    };
    let magnitude_bits = match lead {
        "1" => {
            if !(-1022..=1023).contains(&exp) {
                return Err(bad());
            }
            (((exp + 1023) as u64) << 52) | fraction
        }
        "0" if fraction == 0 => 0,
        "0" if exp == -1022 => fraction,
        _ => return Err(bad()),
    };
    let sign_bit = if negative { 1u64 << 63 } else { 0 };
    Ok(f64::from_bits(sign_bit | magnitude_bits))
}

// ---------------------------------------------------------------------------
// Atomic writes

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    fs::write(&tmp, contents)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

// ---------------------------------------------------------------------------
// Datasets

/// Samples of one domain, optionally with one-hot class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Matrix,
    pub labels: Option<Matrix>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Matrix, labels: Option<Matrix>) -> Result<Self> {
        x.ensure_finite("Dataset")?;
        if let Some(l) = &labels {
            if l.rows() != x.rows() {
                return Err(Error::dims(
                    "Dataset",
                    format!("{} label rows for {} data rows", l.rows(), x.rows()),
                ));
            }
        }
        Ok(Dataset {
            name: name.into(),
            x,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn label_dim(&self) -> usize {
        self.labels.as_ref().map_or(0, Matrix::cols)
    }

    /// The same rows without labels.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.clone(),
            labels: None,
        }
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads a `col_0,…,col_{dim-1}[,label]` CSV. Integer labels become
/// one-hot rows with `max label + 1` classes.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, path)
}

fn parse_err(path: &Path, line: u64, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: line as usize,
        detail: detail.into(),
    }
}

fn parse_csv(text: &str, path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| parse_err(path, 1, e.to_string()))?,
        None => return Err(parse_err(path, 1, "missing header")),
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let has_label = names.last() == Some(&"label");
    let dim = names.len() - usize::from(has_label);
    if dim == 0 {
        return Err(parse_err(path, 1, "header has no data columns"));
    }
    for (i, n) in names[..dim].iter().enumerate() {
        if *n != format!("col_{i}") {
            return Err(parse_err(path, 1, format!("expected column `col_{i}`, found `{n}`")));
        }
    }
    let mut data = Vec::new();
    let mut classes = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != names.len() {
            return Err(parse_err(
                path,
                line,
                format!("ragged row: {} fields, header has {}", rec.len(), names.len()),
            ));
        }
        for (c, field) in rec.iter().take(dim).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("col_{c}: non-numeric field `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("col_{c}: non-finite value `{field}`")));
            }
            data.push(v);
        }
        if has_label {
            let field = rec.get(dim).unwrap_or("").trim();
            let c: usize = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("label: expected a class id, found `{field}`")))?;
            classes.push(c);
        }
    }
    let rows = data.len() / dim;
    let x = Matrix::new(rows, dim, data)?;
    let labels = has_label.then(|| {
        let k = classes.iter().max().map_or(0, |m| m + 1);
        one_hot(&classes, k)
    });
    Dataset::new(dataset_name(path), x, labels)
}

/// CSV text of a dataset; floats use the shortest round-trip decimal form.
pub fn csv_string(ds: &Dataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("col_{i}")).collect();
    if ds.labels.is_some() {
        header.push("label".to_string());
    }
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    let classes = ds.labels.as_ref().map(class_ids);
    for (r, row) in ds.x.row_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(c) = &classes {
            rec.push(c[r].to_string());
        }
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    finish_csv(w)
}

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, csv_string(ds)?.as_bytes())
}

// ---------------------------------------------------------------------------
// Training logs and evaluation reports

pub const TRAIN_LOG_HEADER: [&str; 4] = ["step", "recon_loss", "gen_adv_loss", "disc_loss"];

pub fn train_log_string(log: &TrainLog) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(TRAIN_LOG_HEADER).map_err(fmt_err)?;
    for r in &log.rows {
        w.write_record([
            r.step.to_string(),
            r.recon_loss.to_string(),
            r.gen_adv_loss.to_string(),
            r.disc_loss.to_string(),
        ])
        .map_err(fmt_err)?;
    }
    finish_csv(w)
}

pub fn write_train_log(log: &TrainLog, path: &Path) -> Result<()> {
    write_atomic(path, train_log_string(log)?.as_bytes())
}

pub fn report_string(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(REPORT_HEADER).map_err(fmt_err)?;
    for r in rows {
        w.write_record(r.fields()).map_err(fmt_err)?;
    }
    finish_csv(w)
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    write_atomic(path, report_string(rows)?.as_bytes())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_MAGIC: &str = "UCAE-CKPT";
pub const CHECKPOINT_VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    DomainModel,
    SemSpec,
    SampleBank,
}

impl fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckpointKind::DomainModel => "domain_model",
            CheckpointKind::SemSpec => "sem_spec",
            CheckpointKind::SampleBank => "sample_bank",
        })
    }
}

impl FromStr for CheckpointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "domain_model" => Ok(CheckpointKind::DomainModel),
            "sem_spec" => Ok(CheckpointKind::SemSpec),
            "sample_bank" => Ok(CheckpointKind::SampleBank),
            _ => Err(Error::Format(format!("unknown checkpoint kind `{s}`"))),
        }
    }
}

/// Ordered metadata plus named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind) -> Self {
        Checkpoint {
            kind,
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, m: Matrix) {
        self.tensors.push((name.into(), m));
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("{} checkpoint lacks meta `{key}`", self.kind)))
    }

    pub fn meta_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("meta `{key}`: cannot parse `{v}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("{} checkpoint lacks tensor `{name}`", self.kind)))
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {}\n", self.kind);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, m) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {} {}", m.rows(), m.cols());
            for row in m.row_iter() {
                let line: Vec<String> = row.iter().map(|&v| format_hex_f64(v)).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or_else(|| Error::Format("empty checkpoint".into()))?;
        let mut head = first.split_whitespace();
        if head.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Format("not a UCAE checkpoint (bad magic)".into()));
        }
        match head.next() {
            Some(CHECKPOINT_VERSION) => {}
            other => {
                return Err(Error::Format(format!(
                    "checkpoint version mismatch: expected {CHECKPOINT_VERSION}, found {}",
                    other.unwrap_or("<none>")
                )))
            }
        }
        let kind: CheckpointKind = head
            .next()
            .ok_or_else(|| Error::Format("checkpoint header lacks a kind".into()))?
            .parse()?;
        let mut ckpt = Checkpoint::new(kind);
        let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;
        let finish = |p: Option<(String, usize, usize, Vec<f64>)>, ckpt: &mut Checkpoint| -> Result<()> {
            if let Some((name, r, c, vals)) = p {
                if vals.len() != r * c {
                    return Err(Error::Format(format!(
                        "tensor `{name}`: expected {} values for shape {r}x{c}, found {}",
                        r * c,
                        vals.len()
                    )));
                }
                if ckpt.has_tensor(&name) {
                    return Err(Error::Format(format!("duplicate tensor `{name}`")));
                }
                ckpt.tensors.push((name, Matrix::new(r, c, vals)?));
            }
            Ok(())
        };
        for (lineno, line) in lines {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("meta ") {
                finish(pending.take(), &mut ckpt)?;
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = trimmed.strip_prefix("tensor ") {
                finish(pending.take(), &mut ckpt)?;
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [name, r, c] = parts[..] else {
                    return Err(Error::Format(format!("line {lineno}: malformed tensor header")));
                };
                let shape = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Format(format!("line {lineno}: tensor `{name}` has a bad shape")))
                };
                let (r, c) = (shape(r)?, shape(c)?);
                pending = Some((name.to_string(), r, c, Vec::with_capacity(r * c)));
            } else {
                let Some((name, r, c, vals)) = pending.as_mut() else {
                    return Err(Error::Format(format!("line {lineno}: data outside a tensor block")));
                };
                for tok in trimmed.split_whitespace() {
                    if vals.len() == *r * *c {
                        return Err(Error::Format(format!(
                            "tensor `{name}`: more than the {} values its shape {r}x{c} allows",
                            *r * *c
                        )));
                    }
                    let v = parse_hex_f64(tok)
                        .map_err(|e| Error::Format(format!("tensor `{name}`, line {lineno}: {e}")))?;
                    vals.push(v);
                }
            }
        }
        finish(pending.take(), &mut ckpt)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::parse(&fs::read_to_string(path)?)
    }
}

fn layers_text(net: &Mlp) -> String {
    net.specs().iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    text.split(',').map(str::parse).collect()
}

const NETS: [&str; 3] = ["encoder", "decoder", "discriminator"];

/// Serializes a model; `extra` entries (config echo, seed) are appended as
/// metadata.
pub fn model_to_checkpoint(model: &DomainModel, extra: &[(String, String)]) -> Checkpoint {
    let mut c = Checkpoint::new(CheckpointKind::DomainModel);
    c.push_meta("domain_id", &model.domain_id);
    c.push_meta("obs_dim", model.obs_dim);
    c.push_meta("latent_dim", model.latent_dim);
    c.push_meta("noise_dim", model.noise_dim);
    c.push_meta("label_dim", model.label_dim);
    c.push_meta("prng", Rng::ALGORITHM);
    let nets = [&model.encoder, &model.decoder, &model.discriminator];
    for (name, net) in NETS.iter().zip(nets) {
        c.push_meta(format!("{name}.layers"), layers_text(net));
    }
    c.meta.extend(extra.iter().cloned());
    for (name, net) in NETS.iter().zip(nets) {
        for l in 0..net.num_layers() {
            c.push_tensor(format!("{name}.{l}.weight"), net.weight(l).clone());
            c.push_tensor(format!("{name}.{l}.bias"), Matrix::row_vector(net.bias(l)));
        }
    }
    c
}

pub fn model_from_checkpoint(c: &Checkpoint) -> Result<DomainModel> {
    c.expect_kind(CheckpointKind::DomainModel)?;
    let mut nets = Vec::with_capacity(3);
    for name in NETS {
        let specs = parse_layers(c.meta(&format!("{name}.layers"))?)?;
        let mut weights = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for l in 0..specs.len() {
            weights.push(c.tensor(&format!("{name}.{l}.weight"))?.clone());
            let b = c.tensor(&format!("{name}.{l}.bias"))?;
            if b.rows() != 1 {
                return Err(Error::Format(format!("tensor `{name}.{l}.bias` must be a row vector")));
            }
            biases.push(b.data().to_vec());
        }
        nets.push(Mlp::from_parts(&specs, weights, biases)?);
    }
    let disc = nets.pop().expect("three nets");
    let dec = nets.pop().expect("three nets");
    let enc = nets.pop().expect("three nets");
    let model = DomainModel::from_parts(
        c.meta("domain_id")?,
        c.meta_parsed("latent_dim")?,
        c.meta_parsed("noise_dim")?,
        c.meta_parsed("label_dim")?,
        enc,
        dec,
        disc,
    )?;
    if model.obs_dim != c.meta_parsed::<usize>("obs_dim")? {
        return Err(Error::Format("meta obs_dim disagrees with the encoder input width".into()));
    }
    Ok(model)
}

pub fn sem_to_checkpoint(spec: &SemSpec, extra: &[(String, String)]) -> Checkpoint {
    let mut c = Checkpoint::new(CheckpointKind::SemSpec);
    c.push_meta("latent_dim", spec.latent_dim);
    c.push_meta("latent_law", spec.latent_law);
    c.push_meta("seed", spec.seed);
    c.push_meta("num_domains", spec.num_domains());
    c.push_meta("prng", Rng::ALGORITHM);
    for (i, g) in spec.domains.iter().enumerate() {
        c.push_meta(format!("domain{i}.noise_dim"), g.noise_dim);
        c.push_meta(format!("domain{i}.warp_alpha"), format_hex_f64(g.warp_alpha));
    }
    c.meta.extend(extra.iter().cloned());
    for (i, g) in spec.domains.iter().enumerate() {
        c.push_tensor(format!("domain{i}.mix"), g.mix.clone());
        c.push_tensor(format!("domain{i}.offset"), Matrix::row_vector(&g.offset));
    }
    c
}

pub fn sem_from_checkpoint(c: &Checkpoint) -> Result<SemSpec> {
    c.expect_kind(CheckpointKind::SemSpec)?;
    let k: usize = c.meta_parsed("num_domains")?;
    let mut domains = Vec::with_capacity(k);
    for i in 0..k {
        let offset = c.tensor(&format!("domain{i}.offset"))?;
        let alpha = parse_hex_f64(c.meta(&format!("domain{i}.warp_alpha"))?)?;
        domains.push(DomainGen::new(
            c.tensor(&format!("domain{i}.mix"))?.clone(),
            offset.data().to_vec(),
            c.meta_parsed(&format!("domain{i}.noise_dim"))?,
            alpha,
        )?);
    }
    let law: LatentLaw = c.meta_parsed("latent_law")?;
    SemSpec::new(c.meta_parsed("latent_dim")?, law, domains, c.meta_parsed("seed")?)
}

pub fn bank_to_checkpoint(bank: &SampleBank, extra: &[(String, String)]) -> Checkpoint {
    let mut c = Checkpoint::new(CheckpointKind::SampleBank);
    c.push_meta("origin", bank.origin());
    c.push_meta("frozen", bank.is_frozen());
    c.push_meta("prng", Rng::ALGORITHM);
    c.meta.extend(extra.iter().cloned());
    c.push_tensor("samples", bank.samples().clone());
    if let Some(l) = bank.labels() {
        c.push_tensor("labels", l.clone());
    }
    c
}

pub fn bank_from_checkpoint(c: &Checkpoint) -> Result<SampleBank> {
    c.expect_kind(CheckpointKind::SampleBank)?;
    let labels = if c.has_tensor("labels") {
        Some(c.tensor("labels")?.clone())
    } else {
        None
    };
    let bank = SampleBank::new(c.tensor("samples")?.clone(), labels, c.meta_parsed("origin")?)?;
    Ok(if c.meta_parsed::<bool>("frozen")? { bank.freeze() } else { bank })
}
