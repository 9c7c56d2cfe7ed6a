use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hqmm::data::{gen_synthetic, write_dataset, DatasetMeta, LabeledSequenceSet, SyntheticConfig, SyntheticKind};
use hqmm::experiment::{cross_validate, ModelSpec};
use hqmm::gradient::compare_gradients;
use hqmm::metrics::{accuracy, balanced_accuracy, classify as classify_one, da_score, evaluate_da, DaSummary};
use hqmm::model_file::{save_model, Metadata};
use hqmm::optim::{derive_seed, write_history};
use hqmm::{
    baum_welch_fit, finite_difference_gradient, loss_gradient, BaumWelchConfig, GradientMatrix, Hqmm, Model,
    ObservationSequence, SequenceModel, TrainConfig,
};

use crate::failure::Failure;
use crate::input::{load_data, load_model_file, maybe_window, resolve_label};
use crate::{ClassifyArgs, EvalArgs, GenerateArgs, GradcheckArgs, Kind, ModelArgs, SampleArgs, TrainArgs};

impl ModelArgs {
    fn require_n(&self) -> Result<usize, Failure> {
        match self.n {
            Some(0) => Err(Failure::usage("--n must be at least 1")),
            Some(n) => Ok(n),
            None => Err(Failure::usage("--n is required")),
        }
    }

    fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            tau: self.tau.unwrap_or(d.tau),
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            batches: self.batches.unwrap_or(d.batches),
            batch_size: self.batch_size,
            epochs: self.epochs.unwrap_or(d.epochs),
            window: self.window,
            burn_in: self.burn_in,
            seed: self.seed,
            restarts: self.restarts.unwrap_or(d.restarts),
        }
    }

    fn baum_welch_config(&self) -> BaumWelchConfig {
        let d = BaumWelchConfig::default();
        BaumWelchConfig {
            max_iterations: self.max_iter,
            restarts: self.restarts.unwrap_or(d.restarts),
            seed: self.seed,
            ..d
        }
    }

    /// Tell the user which HQMM-only flags a Baum–Welch run ignores.
    fn warn_ignored_for_hmm(&self) {
        let given: Vec<&str> = [
            ("--w", self.w.is_some()),
            ("--tau", self.tau.is_some()),
            ("--alpha", self.alpha.is_some()),
            ("--beta", self.beta.is_some()),
            ("--batches", self.batches.is_some()),
            ("--batch-size", self.batch_size.is_some()),
            ("--epochs", self.epochs.is_some()),
        ]
        .into_iter()
        .filter_map(|(flag, set)| set.then_some(flag))
        .collect();
        if !given.is_empty() {
            eprintln!(
                "warning: --kind hmm trains by Baum–Welch; ignoring {}",
                given.join(", ")
            );
        }
    }
}

/// Hold out `fraction` of the sequences, chosen by a seeded shuffle.
fn split_validation(
    seqs: Vec<ObservationSequence>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<ObservationSequence>, Option<Vec<ObservationSequence>>), Failure> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Failure::usage(format!(
            "--val-split must lie in [0, 1), got {fraction}"
        )));
    }
    if fraction == 0.0 {
        return Ok((seqs, None));
    }
    let held = ((fraction * seqs.len() as f64).round() as usize).max(1);
    if held >= seqs.len() {
        return Err(Failure::usage(format!(
            "--val-split {fraction} leaves no training data out of {} sequences",
            seqs.len()
        )));
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<ObservationSequence>> = seqs.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| {
        idx.iter()
            .map(|&i| slots[i].take().expect("indices are distinct"))
            .collect()
    };
    let validation = take(&order[..held]);
    let train = take(&order[held..]);
    Ok((train, Some(validation)))
}

fn mean_nll<M: SequenceModel>(model: &M, seqs: &[ObservationSequence], burn_in: usize) -> Result<f64, Failure> {
    let mut total = 0.0;
    for (i, seq) in seqs.iter().enumerate() {
        total -= model
            .log_likelihood(seq, burn_in)
            .map_err(|e| Failure::from(e).context(i))?;
    }
    Ok(total / seqs.len() as f64)
}

fn default_history_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".history.csv");
    PathBuf::from(name)
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let set = load_data(&args.data)?;
    let m = &args.model;
    let n = m.require_n()?;
    let s = args.s.unwrap_or(set.alphabet_size());
    if s < set.alphabet_size() {
        return Err(Failure::usage(format!(
            "--s {s} is smaller than the dataset alphabet ({})",
            set.alphabet_size()
        )));
    }
    let seqs = match &args.label {
        Some(label) => {
            let class = resolve_label(&set, label)?;
            let all: Vec<usize> = (0..set.len()).collect();
            set.select_class(&all, class)
        }
        None => set.sequences.clone(),
    };
    if seqs.is_empty() {
        return Err(Failure::usage("no sequences carry the requested label"));
    }
    let (train_seqs, val_seqs) = split_validation(seqs, args.val_split, derive_seed(m.seed, 1))?;
    let train_windows = maybe_window(train_seqs.clone(), m.window, m.burn_in)?;
    let val_windows = val_seqs
        .clone()
        .map(|v| maybe_window(v, m.window, m.burn_in))
        .transpose()?;
    let history_path = args.history.clone().unwrap_or_else(|| default_history_path(&args.out));

    let (model, config) = match m.kind {
        Kind::Hqmm => {
            let w = m.w.unwrap_or(1);
            let config = m.train_config();
            let result = hqmm::train(&train_seqs, val_seqs.as_deref(), n, s, w, &config)?;
            let run = result.best;
            write_history(&run.history, BufWriter::new(File::create(&history_path)?))?;
            println!(
                "selected epoch {} of restart {} ({} updates, converged: {})",
                run.selected_epoch,
                result.restart,
                run.history.len(),
                run.converged
            );
            let config = json!({
                "kind": "hqmm", "n": n, "s": s, "w": w, "train": config,
                "val_split": args.val_split, "label": args.label,
            });
            (Model::Hqmm(run.model), config)
        }
        Kind::Hmm => {
            m.warn_ignored_for_hmm();
            let config = m.baum_welch_config();
            let fit = baum_welch_fit(&train_windows, n, s, &config, val_windows.as_deref())?;
            let mut history = csv::Writer::from_writer(BufWriter::new(File::create(&history_path)?));
            history.write_record(["iteration", "log_likelihood"])?;
            for (i, ll) in fit.log_likelihoods.iter().enumerate() {
                history.write_record([i.to_string(), ll.to_string()])?;
            }
            history.flush()?;
            println!(
                "Baum–Welch: {} iterations, converged: {}",
                fit.log_likelihoods.len() - 1,
                fit.converged
            );
            let config = json!({
                "kind": "hmm", "n": n, "s": s, "baum_welch": config, "window": m.window,
                "burn_in": m.burn_in, "val_split": args.val_split, "label": args.label,
            });
            (Model::Hmm(fit.hmm), config)
        }
    };

    let train_loss = mean_nll(&model, &train_windows, m.burn_in)?;
    let train_da = evaluate_da(&model, &train_windows, m.burn_in)?;
    println!(
        "train: {} sequences, loss {train_loss:.6}, DA {:.6} (std {:.6})",
        train_windows.len(),
        train_da.mean,
        train_da.std_dev
    );
    let mut validation_da = None;
    if let Some(val) = &val_windows {
        let loss = mean_nll(&model, val, m.burn_in)?;
        let da = evaluate_da(&model, val, m.burn_in)?;
        println!(
            "validation: {} sequences, loss {loss:.6}, DA {:.6} (std {:.6})",
            val.len(),
            da.mean,
            da.std_dev
        );
        validation_da = Some(da.mean);
    }
    let metadata = Metadata {
        config: Some(config),
        seed: Some(m.seed),
        final_loss: Some(train_loss),
        validation_da,
    };
    save_model(&args.out, &model, &metadata)?;
    println!("wrote {} and {}", args.out.display(), history_path.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    let (model, _) = load_model_file(&args.model)?;
    let set = load_data(&args.data)?;
    let seqs = maybe_window(set.sequences, args.window, args.burn_in)?;
    let s = model.alphabet_size();
    let mut lls = Vec::with_capacity(seqs.len());
    let mut scores = Vec::with_capacity(seqs.len());
    for (i, seq) in seqs.iter().enumerate() {
        if seq.len() <= args.burn_in {
            return Err(Failure::usage(format!(
                "sequence {i} has {} symbols, not more than the burn-in {}",
                seq.len(),
                args.burn_in
            )));
        }
        let ll = model
            .log_likelihood(seq, args.burn_in)
            .map_err(|e| Failure::from(e).context(i))?;
        scores.push(da_score(ll, s, seq.len() - args.burn_in)?.value());
        lls.push(ll);
    }
    let summary = DaSummary::from_scores(scores)?;
    if let Some(path) = &args.csv {
        let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        out.write_record(["sequence", "length", "log_likelihood", "da"])?;
        for (i, (seq, (ll, da))) in seqs.iter().zip(lls.iter().zip(&summary.scores)).enumerate() {
            out.write_record([i.to_string(), seq.len().to_string(), ll.to_string(), da.to_string()])?;
        }
        out.flush()?;
    }
    println!("model: {} (s = {s})", model.kind());
    println!("sequences: {}", seqs.len());
    println!("mean DA: {:.6}", summary.mean);
    println!("std DA: {:.6}", summary.std_dev);
    println!("mean log-likelihood: {:.6}", lls.iter().sum::<f64>() / lls.len() as f64);
    Ok(())
}

fn print_accuracies(folds: &[(f64, f64)]) {
    for (i, (acc, bal)) in folds.iter().enumerate() {
        println!("fold {}: accuracy {acc:.4}, balanced accuracy {bal:.4}", i + 1);
    }
    let k = folds.len() as f64;
    println!("mean accuracy: {:.4}", folds.iter().map(|f| f.0).sum::<f64>() / k);
    println!(
        "mean balanced accuracy: {:.4}",
        folds.iter().map(|f| f.1).sum::<f64>() / k
    );
}

pub fn classify(args: ClassifyArgs) -> Result<(), Failure> {
    let set = load_data(&args.data)?;
    let labels = set.labels.clone().ok_or_else(|| {
        Failure::usage(format!(
            "{}: classification needs labeled data",
            args.data.data.display()
        ))
    })?;
    if let Some(folds) = args.folds {
        let m = &args.model;
        let n = m.require_n()?;
        let spec = match m.kind {
            Kind::Hqmm => ModelSpec::Hqmm {
                n,
                w: m.w.unwrap_or(1),
                config: m.train_config(),
            },
            Kind::Hmm => {
                m.warn_ignored_for_hmm();
                ModelSpec::Hmm {
                    n,
                    config: m.baum_welch_config(),
                }
            }
        };
        println!(
            "{}-fold cross-validation, class counts {:?} ({})",
            folds,
            set.class_counts(),
            set.label_names.join(", ")
        );
        let report = cross_validate(&set, &spec, folds as usize, m.seed)?;
        let pairs: Vec<(f64, f64)> = report
            .fold_accuracies
            .iter()
            .copied()
            .zip(report.fold_balanced_accuracies.iter().copied())
            .collect();
        print_accuracies(&pairs);
        return Ok(());
    }
    if args.models.len() != set.num_classes() {
        return Err(Failure::usage(format!(
            "{} labels ({}) but {} model files",
            set.num_classes(),
            set.label_names.join(", "),
            args.models.len()
        )));
    }
    let models = args
        .models
        .iter()
        .map(|p| load_model_file(p).map(|(m, _)| m))
        .collect::<Result<Vec<_>, _>>()?;
    let predictions = set
        .sequences
        .iter()
        .map(|seq| classify_one(&models, seq))
        .collect::<Result<Vec<_>, _>>()?;
    print_accuracies(&[(
        accuracy(&predictions, &labels)?,
        balanced_accuracy(&predictions, &labels)?,
    )]);
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let (n, s, w, len) = (args.n as usize, args.s as usize, args.w as usize, args.len as usize);
    if len <= args.burn_in {
        return Err(Failure::usage(format!(
            "--len {len} must exceed --burn-in {}",
            args.burn_in
        )));
    }
    let mut worst: f64 = 0.0;
    for t in 0..args.trials {
        let trial_seed = derive_seed(args.seed, t);
        let model = Hqmm::random(n, s, w, trial_seed)?;
        let batch = (1..=3)
            .map(|j| model.sample(len, derive_seed(trial_seed, j)))
            .collect::<Result<Vec<_>, _>>()?;
        let (loss, mut analytic) = loss_gradient(&model, &batch, args.burn_in)?;
        if args.sabotage {
            analytic = GradientMatrix::new(analytic.matrix().map(|z| z.conj()), analytic.block_dim())?;
        }
        let numeric = finite_difference_gradient(&model, &batch, args.burn_in, args.h)?;
        let report = compare_gradients(&analytic, &numeric, loss);
        println!(
            "trial {t}: loss {:.6}, |grad| {:.6}, relative error {:.3e}",
            report.loss, report.analytic_norm, report.max_relative_error
        );
        worst = worst.max(report.max_relative_error);
        if !report.max_relative_error.is_finite() {
            worst = f64::INFINITY;
        }
    }
    let pass = worst < args.tolerance;
    println!(
        "{}: max relative error {worst:.3e} over {} trials (tolerance {:.1e})",
        if pass { "PASS" } else { "FAIL" },
        args.trials,
        args.tolerance
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "gradient check failed: relative error {worst:.3e} exceeds {:.1e}",
            args.tolerance
        )))
    }
}

fn alphabet(s: usize) -> Vec<String> {
    (0..s).map(|i| i.to_string()).collect()
}

pub fn sample(args: SampleArgs) -> Result<(), Failure> {
    let (model, _) = load_model_file(&args.model)?;
    let sequences = (0..args.num)
        .map(|i| model.sample(args.len as usize, derive_seed(args.seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let set = LabeledSequenceSet::unlabeled(sequences, model.alphabet_size())?;
    let meta = DatasetMeta {
        alphabet: alphabet(model.alphabet_size()),
        label_names: Vec::new(),
        seed: Some(args.seed),
        model: Some(args.model.display().to_string()),
        generator: None,
    };
    write_dataset(&args.out, &set, &meta)?;
    println!(
        "wrote {} sequences of length {} to {}",
        args.num,
        args.len,
        args.out.display()
    );
    Ok(())
}

pub fn generate(args: GenerateArgs) -> Result<(), Failure> {
    let kind = match args.kind {
        Kind::Hqmm => SyntheticKind::Hqmm,
        Kind::Hmm => SyntheticKind::Hmm,
    };
    let mut config = SyntheticConfig::new(
        kind,
        args.n as usize,
        args.s as usize,
        args.w as usize,
        args.num as usize,
        args.len as usize,
        args.seed,
    );
    config.concentration = args.concentration;
    let (model, set) = gen_synthetic(&config)?;
    if let Some(path) = &args.model_out {
        let metadata = Metadata {
            config: Some(json!({ "generator": config })),
            seed: Some(args.seed),
            ..Default::default()
        };
        save_model(path, &model, &metadata)?;
    }
    let meta = DatasetMeta {
        alphabet: set.alphabet.clone(),
        label_names: Vec::new(),
        seed: Some(args.seed),
        model: args.model_out.as_ref().map(|p| p.display().to_string()),
        generator: Some(config),
    };
    write_dataset(&args.out, &set, &meta)?;
    println!(
        "wrote {} sequences of length {} from a random ({}, {}{}) {} to {}",
        args.num,
        args.len,
        args.n,
        args.s,
        if args.kind == Kind::Hqmm {
            format!(", {}", args.w)
        } else {
            String::new()
        },
        model.kind(),
        args.out.display()
    );
    Ok(())
}
