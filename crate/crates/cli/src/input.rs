use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use hqmm::data::{load_splice, read_dataset, window_sequences, AmbiguityPolicy, LabeledSequenceSet};
use hqmm::model_file::{load_model, Metadata};
use hqmm::{Model, ObservationSequence};

use crate::failure::Failure;
use crate::{DataArgs, DataFormat};

fn looks_like_ndjson(path: &Path) -> Result<bool, Failure> {
    let reader = BufReader::new(File::open(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?);
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_start();
        if !line.is_empty() {
            return Ok(line.starts_with('{'));
        }
    }
    Ok(true)
}

pub fn load_data(args: &DataArgs) -> Result<LabeledSequenceSet, Failure> {
    let ndjson = match args.format {
        DataFormat::Ndjson => true,
        DataFormat::Splice => false,
        DataFormat::Auto => looks_like_ndjson(&args.data)?,
    };
    let set = if ndjson {
        read_dataset(&args.data)
    } else {
        let policy = if args.strip_ambiguous {
            AmbiguityPolicy::StripCharacters
        } else {
            AmbiguityPolicy::DropRecord
        };
        load_splice(&args.data, policy)
    }
    .map_err(|e| Failure::usage(format!("{}: {e}", args.data.display())))?;
    if set.is_empty() {
        return Err(Failure::usage(format!("{}: no sequences", args.data.display())));
    }
    Ok(set)
}

/// A missing or malformed model file is an input error.
pub fn load_model_file(path: &Path) -> Result<(Model, Metadata), Failure> {
    load_model(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

pub fn maybe_window(
    seqs: Vec<ObservationSequence>,
    window: Option<usize>,
    burn_in: usize,
) -> Result<Vec<ObservationSequence>, Failure> {
    let out = match window {
        Some(len) => window_sequences(&seqs, len, burn_in)?.windows,
        None => seqs,
    };
    if out.is_empty() {
        return Err(Failure::usage(
            "no sequence is long enough for the requested window and burn-in",
        ));
    }
    Ok(out)
}

/// Resolve `--label` given as a class name or a numeric index.
pub fn resolve_label(set: &LabeledSequenceSet, label: &str) -> Result<usize, Failure> {
    if set.labels.is_none() {
        return Err(Failure::usage("--label needs a labeled dataset"));
    }
    if let Some(i) = set.label_names.iter().position(|name| name == label) {
        return Ok(i);
    }
    match label.parse::<usize>() {
        Ok(i) if i < set.num_classes() => Ok(i),
        _ => Err(Failure::usage(format!(
            "unknown label {label:?}; classes are {}",
            set.label_names.join(", ")
        ))),
    }
}
