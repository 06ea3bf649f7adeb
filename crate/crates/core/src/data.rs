//! Sequence encoding, TSV dataset I/O, and a synthetic planted-motif
//! generator whose label rule (A ∧ B) ∨ C carries a genuine higher-order
//! dependency: no single motif determines the class.

use crate::error::{Error, Result};
use crate::numerics::rng::seeded_rng;
use rand::Rng;
use std::path::Path;

/// Token ids: A/C/G/T/N → 0..4, pad → 5.
pub const PAD_TOKEN: usize = 5;
pub const DEFAULT_LEN: usize = 500;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceRecord {
    pub seq: String,
    pub label: u8,
}

/// A fixed-length encoded batch. `mask` is true exactly on real tokens
/// (ids ≤ 4); pad positions hold [`PAD_TOKEN`].
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub tokens: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub labels: Vec<f64>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A→0, C→1, G→2, T→3, N→4; case-insensitive; every other character
/// (IUPAC ambiguity codes included) is treated as N.
pub fn encode(seq: &str) -> Result<Vec<usize>> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    Ok(seq
        .chars()
        .map(|c| match c.to_ascii_uppercase() {
            'A' => 0,
            'C' => 1,
            'G' => 2,
            'T' => 3,
            _ => 4,
        })
        .collect())
}

/// Inverse of [`encode`] on real tokens; pad and out-of-range ids are
/// rejected.
pub fn decode(tokens: &[usize]) -> Result<String> {
    tokens
        .iter()
        .map(|&t| match t {
            0 => Ok('A'),
            1 => Ok('C'),
            2 => Ok('G'),
            3 => Ok('T'),
            4 => Ok('N'),
            other => Err(Error::InvalidToken(other, 5)),
        })
        .collect()
}

/// Reverse complement of the valid prefix (A↔T, C↔G, N fixed); padding
/// stays in place. Labels on double-stranded features are strand-neutral,
/// so this is the one augmentation that never touches them.
pub fn reverse_complement(tokens: &[usize], mask: &[bool]) -> Vec<usize> {
    const COMP: [usize; 6] = [3, 2, 1, 0, 4, 5];
    let valid = mask.iter().filter(|&&b| b).count();
    let mut out = tokens.to_vec();
    for i in 0..valid {
        let t = tokens[valid - 1 - i];
        out[i] = if t < COMP.len() { COMP[t] } else { t };
    }
    out
}

/// Right-truncates past `target`, right-pads with [`PAD_TOKEN`]; the mask
/// marks original positions.
pub fn pad_or_truncate(tokens: &[usize], target: usize) -> (Vec<usize>, Vec<bool>) {
    let keep = tokens.len().min(target);
    let mut out = tokens[..keep].to_vec();
    let mut mask = vec![true; keep];
    out.resize(target, PAD_TOKEN);
    mask.resize(target, false);
    (out, mask)
}

/// Encodes records to a fixed-length batch.
pub fn encode_batch(records: &[SequenceRecord], target: usize) -> Result<EncodedBatch> {
    let mut tokens = Vec::with_capacity(records.len());
    let mut mask = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for rec in records {
        let ids = encode(&rec.seq)?;
        let (t, m) = pad_or_truncate(&ids, target);
        tokens.push(t);
        mask.push(m);
        labels.push(rec.label as f64);
    }
    Ok(EncodedBatch {
        tokens,
        mask,
        labels,
    })
}

/// Parses "SEQ\tLABEL" lines; blank lines are skipped; CRLF accepted.
pub fn parse_tsv(text: &str) -> Result<Vec<SequenceRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (seq, label) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "expected SEQ<TAB>LABEL".into(),
        })?;
        if seq.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "empty sequence".into(),
            });
        }
        let label = match label.trim() {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        out.push(SequenceRecord {
            seq: seq.to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn load_tsv<P: AsRef<Path>>(path: P) -> Result<Vec<SequenceRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_tsv(&text)
}

pub fn write_tsv<P: AsRef<Path>>(path: P, records: &[SequenceRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&rec.seq);
        out.push('\t');
        out.push_str(if rec.label == 1 { "1" } else { "0" });
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Synthetic generator: background sequence, latent plant coins for three
/// motifs, label (A ∧ B) ∨ C, then label flips at the noise rate. The
/// default coin probabilities make the classes exactly balanced:
/// P(C) + (1−P(C))·P(A)·P(B) = 1/4 + 3/4·1/3 = 1/2.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub length: usize,
    pub motif_a: String,
    pub motif_b: String,
    pub motif_c: String,
    /// plant probabilities for the three motifs
    pub p_a: f64,
    pub p_b: f64,
    pub p_c: f64,
    /// A/C/G/T background distribution
    pub background: [f64; 4],
    /// label flip probability
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            length: DEFAULT_LEN,
            motif_a: "TGACGTCA".into(),
            motif_b: "CCAATTGG".into(),
            motif_c: "GATAAGGC".into(),
            p_a: 0.577_350_269_189_625_8, // 1/√3, so P(A)·P(B) = 1/3
            p_b: 0.577_350_269_189_625_8,
            p_c: 0.25,
            background: [0.25; 4],
            noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::InvalidArgument("length must be positive".into()));
        }
        for (name, m) in [
            ("motif_a", &self.motif_a),
            ("motif_b", &self.motif_b),
            ("motif_c", &self.motif_c),
        ] {
            if m.is_empty() {
                return Err(Error::InvalidArgument(format!("{name} is empty")));
            }
            if m.len() >= self.length {
                return Err(Error::InvalidArgument(format!(
                    "{name} ({} bases) does not fit in length {}",
                    m.len(),
                    self.length
                )));
            }
            if !m.chars().all(|c| "ACGTN".contains(c.to_ascii_uppercase())) {
                return Err(Error::InvalidArgument(format!(
                    "{name} contains characters outside ACGTN"
                )));
            }
        }
        for p in [self.p_a, self.p_b, self.p_c, self.noise] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        let total: f64 = self.background.iter().sum();
        if self.background.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "background distribution must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

fn sample_base<R: Rng>(background: &[f64; 4], rng: &mut R) -> char {
    let r: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in background.iter().enumerate() {
        acc += p;
        if r < acc {
            return ['A', 'C', 'G', 'T'][i];
        }
    }
    'T'
}

/// Plants `motif` at a random position that avoids `occupied` intervals;
/// records the claimed interval.
fn plant<R: Rng>(
    seq: &mut [u8],
    motif: &str,
    occupied: &mut Vec<(usize, usize)>,
    rng: &mut R,
) -> Result<()> {
    let m = motif.len();
    let span = seq.len() - m;
    for _ in 0..10_000 {
        let start = rng.gen_range(0..=span);
        let end = start + m;
        if occupied.iter().all(|&(a, b)| end <= a || start >= b) {
            seq[start..end].copy_from_slice(motif.as_bytes());
            occupied.push((start, end));
            return Ok(());
        }
    }
    Err(Error::InvalidArgument(
        "could not place motifs without overlap; sequence too short".into(),
    ))
}

/// Generates `n` records; the same spec (seed included) reproduces the
/// dataset byte for byte.
pub fn synth_generate(spec: &SynthSpec, n: usize) -> Result<Vec<SequenceRecord>> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let plant_a = rng.gen_bool(spec.p_a);
        let plant_b = rng.gen_bool(spec.p_b);
        let plant_c = rng.gen_bool(spec.p_c);
        let mut seq: Vec<u8> = (0..spec.length)
            .map(|_| sample_base(&spec.background, &mut rng) as u8)
            .collect();
        let mut occupied = Vec::new();
        if plant_a {
            plant(&mut seq, &spec.motif_a, &mut occupied, &mut rng)?;
        }
        if plant_b {
            plant(&mut seq, &spec.motif_b, &mut occupied, &mut rng)?;
        }
        if plant_c {
            plant(&mut seq, &spec.motif_c, &mut occupied, &mut rng)?;
        }
        let mut label = u8::from((plant_a && plant_b) || plant_c);
        if spec.noise > 0.0 && rng.gen_bool(spec.noise) {
            label ^= 1;
        }
        out.push(SequenceRecord {
            seq: String::from_utf8(seq).expect("ACGTN bytes are valid UTF-8"),
            label,
        });
    }
    Ok(out)
}
