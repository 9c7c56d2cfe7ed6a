//! Datasets: windowing, the DNA splice-junction file, synthetic generators
//! and a newline-delimited JSON format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::Hmm;
use crate::hqmm::{Hqmm, ObservationSequence};
use crate::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequenceSet {
    pub sequences: Vec<ObservationSequence>,
    pub labels: Option<Vec<usize>>,
    /// Display name of each symbol.
    pub alphabet: Vec<String>,
    /// Display name of each class, when labels are present.
    pub label_names: Vec<String>,
}

impl LabeledSequenceSet {
    pub fn new(
        sequences: Vec<ObservationSequence>,
        labels: Option<Vec<usize>>,
        alphabet: Vec<String>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        if let Some(labels) = &labels {
            if labels.len() != sequences.len() {
                return Err(Error::Dimension(format!(
                    "{} labels for {} sequences",
                    labels.len(),
                    sequences.len()
                )));
            }
            if let Some(&l) = labels.iter().find(|&&l| l >= label_names.len()) {
                return Err(Error::Config(format!(
                    "label {l} has no name among {} classes",
                    label_names.len()
                )));
            }
        }
        for seq in &sequences {
            seq.check_alphabet(alphabet.len())?;
        }
        Ok(Self {
            sequences,
            labels,
            alphabet,
            label_names,
        })
    }

    /// Unlabeled set over the symbols `0..s`.
    pub fn unlabeled(sequences: Vec<ObservationSequence>, s: usize) -> Result<Self> {
        Self::new(sequences, None, (0..s).map(|i| i.to_string()).collect(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in self.labels.iter().flatten() {
            counts[l] += 1;
        }
        counts
    }

    /// Sequences at `indices` carrying `label`.
    pub fn select_class(&self, indices: &[usize], label: usize) -> Vec<ObservationSequence> {
        let labels = self.labels.as_deref().unwrap_or(&[]);
        indices
            .iter()
            .filter(|&&i| labels.get(i) == Some(&label))
            .map(|&i| self.sequences[i].clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Windowed {
    pub windows: Vec<ObservationSequence>,
    pub burn_in: usize,
    pub retained_symbols: usize,
}

/// Cut every sequence into consecutive non-overlapping windows. A final
/// shorter piece is kept only if it has at least one symbol past the burn-in.
pub fn window_sequences(seqs: &[ObservationSequence], window_length: usize, burn_in: usize) -> Result<Windowed> {
    if window_length <= burn_in {
        return Err(Error::Config(format!(
            "window length {window_length} must exceed burn-in {burn_in}"
        )));
    }
    let mut windows = Vec::new();
    for seq in seqs {
        for chunk in seq.symbols().chunks(window_length) {
            if chunk.len() > burn_in {
                windows.push(ObservationSequence::new(chunk.to_vec()));
            }
        }
    }
    let retained_symbols = windows.iter().map(ObservationSequence::len).sum();
    Ok(Windowed {
        windows,
        burn_in,
        retained_symbols,
    })
}

pub const SPLICE_LABELS: [&str; 3] = ["EI", "IE", "N"];
pub const DNA_BASES: [char; 4] = ['A', 'C', 'G', 'T'];
const AMBIGUITY_CODES: [char; 4] = ['D', 'N', 'S', 'R'];

/// What to do with records containing the ambiguity codes D, N, S or R.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmbiguityPolicy {
    /// Skip the whole record.
    #[default]
    DropRecord,
    /// Delete the ambiguous characters; the sequence gets shorter.
    StripCharacters,
}

/// Read the splice-junction data set. Accepts both the original layout
/// (`LABEL, name, SEQUENCE` per line) and the one-base-per-field layout
/// (`A, C, ..., LABEL`). Lines that are blank or start with `@` or `%` are
/// ignored.
pub fn load_splice(path: impl AsRef<Path>, policy: AmbiguityPolicy) -> Result<LabeledSequenceSet> {
    let path = path.as_ref();
    let file = File::open(path)?;
    parse_splice(BufReader::new(file), path, policy)
}

pub fn parse_splice<R: BufRead>(reader: R, path: &Path, policy: AmbiguityPolicy) -> Result<LabeledSequenceSet> {
    let mut sequences = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('@') || trimmed.starts_with('%') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let (label, bases) = match fields.len() {
            3 => (fields[0], fields[2].to_string()),
            n if n > 3 => (fields[n - 1], fields[..n - 1].concat()),
            n => {
                return Err(parse_err(format!(
                    "expected 3 or more comma-separated fields, found {n}"
                )))
            }
        };
        let label = SPLICE_LABELS
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| parse_err(format!("unknown label {label:?}")))?;
        if bases.is_empty() {
            return Err(parse_err("empty sequence".into()));
        }
        let mut symbols = Vec::with_capacity(bases.len());
        let mut ambiguous = false;
        for c in bases.chars() {
            let c = c.to_ascii_uppercase();
            if let Some(b) = DNA_BASES.iter().position(|&x| x == c) {
                symbols.push(b);
            } else if AMBIGUITY_CODES.contains(&c) {
                ambiguous = true;
            } else {
                return Err(parse_err(format!("unexpected character {c:?}")));
            }
        }
        if ambiguous && policy == AmbiguityPolicy::DropRecord {
            continue;
        }
        if symbols.is_empty() {
            continue;
        }
        sequences.push(ObservationSequence::new(symbols));
        labels.push(label);
    }
    if sequences.is_empty() {
        return Err(Error::EmptyData);
    }
    LabeledSequenceSet::new(
        sequences,
        Some(labels),
        DNA_BASES.iter().map(|c| c.to_string()).collect(),
        SPLICE_LABELS.iter().map(|s| s.to_string()).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Hmm,
    Hqmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    pub n: usize,
    pub s: usize,
    /// Environment dimension; ignored for HMMs.
    pub w: usize,
    pub num_sequences: usize,
    pub length: usize,
    pub seed: u64,
    /// Dirichlet concentration of the HMM's transition and emission columns.
    /// Values below one give peaked, easier-to-learn processes.
    pub concentration: f64,
}

impl SyntheticConfig {
    pub fn new(
        kind: SyntheticKind,
        n: usize,
        s: usize,
        w: usize,
        num_sequences: usize,
        length: usize,
        seed: u64,
    ) -> Self {
        Self {
            kind,
            n,
            s,
            w,
            num_sequences,
            length,
            seed,
            concentration: 0.5,
        }
    }
}

/// Draw a random ground-truth model from `seed` and sample sequences from it.
pub fn gen_synthetic(config: &SyntheticConfig) -> Result<(Model, LabeledSequenceSet)> {
    if config.n == 0 || config.s < 2 || config.length == 0 || config.num_sequences == 0 {
        return Err(Error::Config(
            "synthetic data needs n >= 1, s >= 2 and at least one non-empty sequence".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = match config.kind {
        SyntheticKind::Hmm => Model::Hmm(Hmm::random_with(config.n, config.s, config.concentration, &mut rng)?),
        SyntheticKind::Hqmm => {
            if config.w == 0 {
                return Err(Error::Config("environment dimension must be at least 1".into()));
            }
            Model::Hqmm(Hqmm::random_with(config.n, config.s, config.w, &mut rng)?)
        }
    };
    let sequences = (0..config.num_sequences)
        .map(|_| match &model {
            Model::Hmm(m) => m.sample_with(config.length, &mut rng),
            Model::Hqmm(m) => m.sample_with(config.length, &mut rng),
        })
        .collect::<Result<Vec<_>>>()?;
    let set = LabeledSequenceSet::unlabeled(sequences, config.s)?;
    Ok((model, set))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    symbols: Vec<usize>,
}

/// Contents of the `.meta.json` file written next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub alphabet: Vec<String>,
    #[serde(default)]
    pub label_names: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Where the generating model was saved, if anywhere.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub generator: Option<SyntheticConfig>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Write one JSON record per line plus the sidecar metadata file.
pub fn write_dataset(path: &Path, set: &LabeledSequenceSet, meta: &DatasetMeta) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (i, seq) in set.sequences.iter().enumerate() {
        let record = Record {
            label: set.labels.as_ref().map(|l| l[i]),
            symbols: seq.symbols().to_vec(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let meta_file = BufWriter::new(File::create(meta_path(path))?);
    serde_json::to_writer_pretty(meta_file, meta)?;
    Ok(())
}

/// Read a dataset. Without a sidecar file the alphabet is `0..=max symbol`
/// and classes are `0..=max label`.
pub fn read_dataset(path: &Path) -> Result<LabeledSequenceSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut sequences = Vec::new();
    let mut labels = Vec::new();
    let mut labeled = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if *labeled.get_or_insert(record.label.is_some()) != record.label.is_some() {
            return Err(parse_err("records mix labeled and unlabeled sequences".into()));
        }
        labels.extend(record.label);
        sequences.push(ObservationSequence::new(record.symbols));
    }
    if sequences.is_empty() {
        return Err(Error::EmptyData);
    }
    let labels = (labeled == Some(true)).then_some(labels);
    let meta_file = meta_path(path);
    let (alphabet, label_names) = if meta_file.exists() {
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(File::open(&meta_file)?))?;
        (meta.alphabet, meta.label_names)
    } else {
        let s = sequences.iter().flat_map(|q| q.symbols()).max().map_or(0, |m| m + 1);
        let classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
        (
            (0..s).map(|i| i.to_string()).collect(),
            (0..classes).map(|i| i.to_string()).collect(),
        )
    };
    LabeledSequenceSet::new(sequences, labels, alphabet, label_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SequenceModel;
    use std::io::Cursor;

    fn seq(v: Vec<usize>) -> ObservationSequence {
        ObservationSequence::new(v)
    }

    #[test]
    fn ten_windows_from_three_thousand() {
        let long = seq((0..3000).map(|i| i % 6).collect());
        let w = window_sequences(&[long], 300, 100).unwrap();
        assert_eq!(w.windows.len(), 10);
        assert!(w.windows.iter().all(|x| x.len() == 300));
        assert_eq!(w.retained_symbols, 3000);
        assert_eq!(w.burn_in, 100);
    }

    #[test]
    fn short_remainders() {
        let w = window_sequences(&[seq(vec![0; 250])], 300, 100).unwrap();
        assert_eq!(w.windows.len(), 1);
        assert_eq!(w.windows[0].len(), 250);
        let w = window_sequences(&[seq(vec![0; 650])], 300, 100).unwrap();
        assert_eq!(w.windows.len(), 2);
        assert_eq!(w.retained_symbols, 600);
        let w = window_sequences(&[seq(vec![0; 701])], 300, 100).unwrap();
        assert_eq!(w.windows.len(), 3);
        assert_eq!(w.windows[2].len(), 101);
    }

    #[test]
    fn zero_burn_in_preserves_symbols() {
        let original: Vec<usize> = (0..1234).map(|i| (i * 7) % 5).collect();
        let w = window_sequences(&[seq(original.clone())], 100, 0).unwrap();
        let joined: Vec<usize> = w.windows.iter().flat_map(|x| x.symbols().to_vec()).collect();
        assert_eq!(joined, original);
    }

    #[test]
    fn window_must_exceed_burn_in() {
        assert!(window_sequences(&[seq(vec![0; 10])], 5, 5).is_err());
    }

    fn parse(text: &str, policy: AmbiguityPolicy) -> Result<LabeledSequenceSet> {
        parse_splice(Cursor::new(text), Path::new("test.data"), policy)
    }

    #[test]
    fn uci_record() {
        let set = parse("EI, ATRINS-DONOR-521, AACGT\n", AmbiguityPolicy::DropRecord).unwrap();
        assert_eq!(set.labels, Some(vec![0]));
        assert_eq!(set.sequences[0].symbols(), &[0, 0, 1, 2, 3]);
    }

    #[test]
    fn per_base_record() {
        let text = "@relation splice\nA, C, G, T, IE\nA, D, G, T, EI\nG, G, A, A, N\n";
        let set = parse(text, AmbiguityPolicy::DropRecord).unwrap();
        assert_eq!(set.labels, Some(vec![1, 2]));
        assert_eq!(set.sequences[1].symbols(), &[2, 2, 0, 0]);
    }

    #[test]
    fn ambiguity_policies() {
        let bases: String = "ACGT".repeat(15);
        let mut with_d = bases.clone();
        with_d.replace_range(10..11, "D");
        let text = format!("IE, X, {with_d}\nN, Y, {bases}\n");
        let stripped = parse(&text, AmbiguityPolicy::StripCharacters).unwrap();
        assert_eq!(stripped.sequences[0].len(), 59);
        assert_eq!(stripped.len(), 2);
        let dropped = parse(&text, AmbiguityPolicy::DropRecord).unwrap();
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped.labels, Some(vec![2]));
    }

    #[test]
    fn malformed_lines_report_position() {
        let err = parse("EI, X, ACGT\nEI, ACGT\n", AmbiguityPolicy::DropRecord).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("EI, X, ACGT\n\nXX, Y, ACGT\n", AmbiguityPolicy::DropRecord).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse("EI, X, ACBT\n", AmbiguityPolicy::DropRecord).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn bundled_splice_counts() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/splice.dat");
        let set = load_splice(&path, AmbiguityPolicy::DropRecord).unwrap();
        assert_eq!(set.class_counts(), vec![762, 765, 1648]);
        assert!(set.sequences.iter().all(|s| s.len() == 60));
        let all = load_splice(&path, AmbiguityPolicy::StripCharacters).unwrap();
        assert_eq!(all.len(), 3190);
    }

    #[test]
    fn synthetic_shapes_and_determinism() {
        let config = SyntheticConfig::new(SyntheticKind::Hmm, 6, 6, 1, 20, 3000, 9);
        let (model, set) = gen_synthetic(&config).unwrap();
        assert_eq!(set.len(), 20);
        assert!(set.sequences.iter().all(|s| s.len() == 3000));
        assert_eq!(model.alphabet_size(), 6);
        let (model2, set2) = gen_synthetic(&config).unwrap();
        assert_eq!(model, model2);
        assert_eq!(set, set2);
    }

    #[test]
    fn synthetic_hqmm_is_trace_preserving() {
        let config = SyntheticConfig::new(SyntheticKind::Hqmm, 2, 6, 1, 3, 50, 4);
        let (model, _) = gen_synthetic(&config).unwrap();
        let Model::Hqmm(m) = model else { panic!("wrong kind") };
        assert!(m.kraus_set().tp_residual() < 1e-12);
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        let set = LabeledSequenceSet::new(
            vec![seq(vec![0, 1, 2]), seq(vec![2, 2])],
            Some(vec![1, 0]),
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let meta = DatasetMeta {
            alphabet: set.alphabet.clone(),
            label_names: set.label_names.clone(),
            seed: Some(3),
            model: None,
            generator: None,
        };
        write_dataset(&path, &set, &meta).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), set);
        std::fs::remove_file(meta_path(&path)).unwrap();
        let bare = read_dataset(&path).unwrap();
        assert_eq!(bare.alphabet_size(), 3);
        assert_eq!(bare.labels, set.labels);
    }

    #[test]
    fn dataset_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ndjson");
        std::fs::write(&path, "{\"symbols\":[0,1]}\n{\"symbols\":[0,\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "{\"symbols\":[0,1]}\n{\"label\":0,\"symbols\":[0]}\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn label_alignment_is_checked() {
        assert!(LabeledSequenceSet::new(
            vec![seq(vec![0])],
            Some(vec![0, 1]),
            vec!["a".into()],
            vec!["x".into(), "y".into()]
        )
        .is_err());
        assert!(LabeledSequenceSet::new(vec![seq(vec![1])], None, vec!["a".into()], vec![]).is_err());
    }
}
