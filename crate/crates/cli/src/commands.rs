use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use grainrl::corpus::{tokenize, OracleSpec, Role, TokenSequence, Vocabulary};
use grainrl::editdiff::{build_dataset, read_dataset, write_dataset, DatasetOptions, EditError, EditorBackend};
use grainrl::harness::{
    eval_prompts, run_table_experiments, sft_pretrain, win_rate, ExperimentConfig, Judge, SeedMode, SftConfig,
};
use grainrl::ppo::{train_ppo, write_convergence_log, Policy, PpoConfig, RewardScheme};
use grainrl::reward::{train_rm, HeadKind, LossKind, RmTrainConfig, U0Source};
use grainrl::tensor::AdamConfig;
use grainrl::{Policy64, RewardModel64};
use serde_json::json;

use crate::args::*;
use crate::defaults::{Defaults, SMOKE_CONFIG};
use crate::manifest::RunManifest;

pub const ENDPOINT_ENV: &str = "GRAINRL_EDITOR_ENDPOINT";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unusable inputs; exit code 2.
    Usage(String),
    /// Failure while doing the work; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load_vocab(arg: &VocabArg) -> Result<Vocabulary, CliError> {
    match &arg.vocab {
        None => Ok(Vocabulary::standard()),
        Some(p) => {
            let f = File::open(p).map_err(|e| usage(format!("cannot open vocabulary {}: {e}", p.display())))?;
            Vocabulary::read_from(BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file not found: {}", p.display())))
    }
}

fn load_policy(p: &Path) -> Result<Policy64, CliError> {
    require_file(p)?;
    let f = File::open(p).map_err(usage)?;
    Policy::load(BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn create(path: PathBuf) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?))
}

fn write_json(path: PathBuf, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(&path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Runs `body` between writing the manifest and completing it. A runtime
/// failure leaves `error.txt` in `out` and a manifest marked `failed`.
fn with_manifest(
    out: &Path,
    name: &str,
    defaults: &Defaults,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: &[PathBuf],
    body: impl FnOnce() -> Result<(), CliError>,
) -> Result<(), CliError> {
    let manifest = RunManifest::start(out, name, defaults.version, config, seed, inputs)
        .map_err(|e| runtime(format!("cannot write manifest in {}: {e}", out.display())))?;
    match body() {
        Ok(()) => {
            manifest.finish(out, "ok").map_err(runtime)?;
            Ok(())
        }
        Err(CliError::Runtime(msg)) => {
            let diag = out.join("error.txt");
            let _ = fs::write(&diag, format!("{name} failed: {msg}\n"));
            let _ = manifest.finish(out, "failed");
            Err(CliError::Runtime(format!("{msg} (diagnostics: {})", diag.display())))
        }
        Err(e) => {
            let _ = manifest.finish(out, "failed");
            Err(e)
        }
    }
}

pub fn gen_data(args: &GenDataArgs, d: &Defaults) -> Result<(), CliError> {
    let vocab = load_vocab(&args.vocab)?;
    let n = args.n.unwrap_or(d.gen_data.n);
    let seed = args.seed.unwrap_or(d.gen_data.seed);
    let editor = match args.editor {
        Some(e) => e,
        None => EditorKind::from_str_default(&d.gen_data.editor)?,
    };
    let timeout = Duration::from_secs(args.timeout_secs.unwrap_or(d.gen_data.timeout_secs));
    let backend = match editor {
        EditorKind::Synthetic => {
            if args.endpoint.is_some() {
                return Err(usage("--endpoint is only valid with --editor external"));
            }
            EditorBackend::Synthetic { seed }
        }
        EditorKind::External => {
            let endpoint = args
                .endpoint
                .clone()
                .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
                .ok_or_else(|| usage(format!("--editor external needs --endpoint or {ENDPOINT_ENV}")))?;
            EditorBackend::external(endpoint).with_timeout(timeout)
        }
    };
    if n == 0 {
        return Err(usage("--n must be positive"));
    }
    let options = DatasetOptions { max_change_ratio: d.gen_data.max_change_ratio, ..Default::default() };
    let endpoint = match &backend {
        EditorBackend::External { endpoint, .. } => Some(endpoint.clone()),
        EditorBackend::Synthetic { .. } => None,
    };
    let config = json!({
        "n": n, "seed": seed, "editor": backend.kind(), "endpoint": endpoint,
        "timeout_secs": timeout.as_secs(), "options": options,
    });
    let inputs: Vec<PathBuf> = args.vocab.vocab.iter().cloned().collect();
    with_manifest(&args.out, "gen-data", d, config, Some(seed), &inputs, || {
        let (pairs, stats) = build_dataset(&vocab, n, &backend, seed, &options).map_err(|e| match e {
            EditError::Corpus(c) => runtime(format!("editor returned unusable text: {c}")),
            other => runtime(other),
        })?;
        let mut w = create(args.out.join("pairs.jsonl"))?;
        write_dataset(&vocab, &pairs, &mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
        let mut w = create(args.out.join("vocab.txt"))?;
        vocab.write_to(&mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
        write_json(args.out.join("stats.json"), &stats)?;
        println!(
            "kept {} of {} pairs (unchanged {}, non-minimal {}); mean change ratio {:.4}",
            stats.kept, stats.attempted, stats.dropped_unchanged, stats.rejected_change_ratio, stats.mean_change_ratio
        );
        Ok(())
    })
}

impl EditorKind {
    fn from_str_default(s: &str) -> Result<Self, CliError> {
        match s {
            "synthetic" => Ok(EditorKind::Synthetic),
            "external" => Ok(EditorKind::External),
            _ => Err(usage(format!("unknown editor `{s}` in defaults"))),
        }
    }
}

/// Plain-text rendering of an alignment: matched tokens indented, removed
/// tokens prefixed with `-`, inserted ones with `+`.
pub fn render_diff(vocab: &Vocabulary, original: &TokenSequence, edited: &TokenSequence) -> Result<String, CliError> {
    let pair = grainrl::editdiff::EditPair::new(TokenSequence::prompt(vec![vocab.bos()]), original.clone(), edited.clone())
        .map_err(usage)?;
    let word = |t| vocab.token(t).unwrap_or("?").to_string();
    let mut out = String::new();
    let join = |s: &TokenSequence| s.ids.iter().map(|t| word(*t)).collect::<Vec<_>>().join(" ");
    out.push_str(&format!("original: {}\n", join(original)));
    out.push_str(&format!("edited:   {}\n", join(edited)));
    if pair.alignment.is_unchanged() {
        out.push_str("no changes\n");
    } else {
        let (mut i, mut j) = (0, 0);
        let emit = |i: &mut usize, j: &mut usize, to_i: usize, to_j: usize, out: &mut String| {
            while *i < to_i {
                out.push_str(&format!("- {}\n", word(original.ids[*i])));
                *i += 1;
            }
            while *j < to_j {
                out.push_str(&format!("+ {}\n", word(edited.ids[*j])));
                *j += 1;
            }
        };
        for (o, e) in pair.matched() {
            emit(&mut i, &mut j, *o, *e, &mut out);
            out.push_str(&format!("  {}\n", word(original.ids[*o])));
            i = o + 1;
            j = e + 1;
        }
        emit(&mut i, &mut j, original.len(), edited.len(), &mut out);
    }
    let list = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
    out.push_str(&format!("U1 original: [{}]\n", list(pair.u1_original())));
    out.push_str(&format!("U1 edited: [{}]\n", list(pair.u1_edited())));
    Ok(out)
}

pub fn diff(args: &DiffArgs) -> Result<(), CliError> {
    let vocab = load_vocab(&args.vocab)?;
    let original = tokenize(&vocab, &args.original, Role::Response).map_err(usage)?;
    let edited = tokenize(&vocab, &args.edited, Role::Response).map_err(usage)?;
    print!("{}", render_diff(&vocab, &original, &edited)?);
    Ok(())
}

pub fn train_rm_cmd(args: &TrainRmArgs, d: &Defaults) -> Result<(), CliError> {
    let vocab = load_vocab(&args.vocab)?;
    require_file(&args.data)?;
    let f = File::open(&args.data).map_err(usage)?;
    let pairs = read_dataset(&vocab, BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", args.data.display())))?;
    let loss = match args.loss {
        Some(LossArg::Full) => LossKind::Full,
        Some(LossArg::Approx) => LossKind::Approx,
        Some(LossArg::Sequence) => LossKind::Sequence,
        None => serde_json::from_value(json!(d.train_rm.loss)).map_err(usage)?,
    };
    let u0 = match args.u0 {
        Some(U0Arg::Edited) => U0Source::Edited,
        Some(U0Arg::Average) => U0Source::Average,
        None => serde_json::from_value(json!(d.train_rm.u0)).map_err(usage)?,
    };
    let seed = args.seed.unwrap_or(d.train_rm.seed);
    let config = RmTrainConfig {
        loss,
        u0,
        epochs: args.epochs.unwrap_or(d.train_rm.epochs),
        batch_size: args.batch_size.unwrap_or(d.train_rm.batch_size),
        adam: AdamConfig::with_lr(args.lr.unwrap_or(d.train_rm.lr)),
        heldout_fraction: d.train_rm.heldout_fraction,
        seed,
        ..Default::default()
    };
    if config.batch_size == 0 {
        return Err(usage("--batch-size must be positive"));
    }
    let mut inputs = vec![args.data.clone()];
    inputs.extend(args.vocab.vocab.iter().cloned());
    let cfg_json = serde_json::to_value(&config).map_err(runtime)?;
    with_manifest(&args.out, "train-rm", d, cfg_json, Some(seed), &inputs, || {
        let trained = train_rm::<f64>(&vocab, &pairs, &config).map_err(runtime)?;
        let mut w = create(args.out.join("rm.ckpt"))?;
        trained.model.save(&mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
        let mut w = create(args.out.join("rm_log.csv"))?;
        writeln!(w, "epoch,loss,heldout_accuracy").map_err(runtime)?;
        for e in &trained.log {
            writeln!(w, "{},{},{}", e.epoch, e.loss, e.heldout_accuracy).map_err(runtime)?;
        }
        w.flush().map_err(runtime)?;
        let acc = trained.log.last().map(|e| e.heldout_accuracy).unwrap_or(f64::NAN);
        write_json(
            args.out.join("metrics.json"),
            &json!({
                "head": trained.model.head.as_str(),
                "train_pairs": trained.train_idx.len(),
                "heldout_pairs": trained.heldout_idx.len(),
                "heldout_accuracy": acc,
            }),
        )?;
        println!(
            "{} reward model: held-out accuracy {:.4} on {} pairs",
            trained.model.head.as_str(),
            acc,
            trained.heldout_idx.len()
        );
        Ok(())
    })
}

pub fn train_ppo_cmd(args: &TrainPpoArgs, d: &Defaults) -> Result<(), CliError> {
    let vocab = load_vocab(&args.vocab)?;
    require_file(&args.rm)?;
    let rm = RewardModel64::load(BufReader::new(File::open(&args.rm).map_err(usage)?))
        .map_err(|e| usage(format!("{}: {e}", args.rm.display())))?;
    if rm.vocab_size() != vocab.len() {
        return Err(usage("reward model and vocabulary sizes differ"));
    }
    let scheme = match args.scheme {
        Some(SchemeArg::TokenLevel) => RewardScheme::TokenLevel,
        Some(SchemeArg::SequenceTerminal) => RewardScheme::SequenceTerminal,
        None => match rm.head {
            HeadKind::TokenLevel => RewardScheme::TokenLevel,
            HeadKind::SequenceLevel => RewardScheme::SequenceTerminal,
        },
    };
    let head_ok = matches!(
        (scheme, rm.head),
        (RewardScheme::TokenLevel, HeadKind::TokenLevel) | (RewardScheme::SequenceTerminal, HeadKind::SequenceLevel)
    );
    if !head_ok {
        return Err(usage(format!("scheme {} needs the other reward-model head (got {})", scheme.as_str(), rm.head.as_str())));
    }
    let init = args.init.as_deref().map(load_policy).transpose()?;
    let t = &d.train_ppo;
    let seed = args.seed.unwrap_or(t.seed);
    let config = PpoConfig {
        gamma: t.gamma,
        lambda: t.lambda,
        clip_eps: t.clip_eps,
        kl_coef: args.kl_coef.unwrap_or(t.kl_coef),
        scheme,
        epochs: t.epochs,
        minibatch_size: t.minibatch_size,
        batch_size: args.batch_size.unwrap_or(t.batch_size),
        adam: AdamConfig::with_lr(args.lr.unwrap_or(t.lr)),
        max_grad_norm: t.max_grad_norm,
        value_coef: t.value_coef,
        max_iters: args.max_iters.unwrap_or(t.max_iters),
        target_oracle_reward: args.target.unwrap_or(t.target_oracle_reward),
        seed,
    };
    config.validate().map_err(usage)?;
    let sft = SftConfig {
        demonstrations: args.sft_demonstrations.unwrap_or(t.sft_demonstrations),
        epochs: args.sft_epochs.unwrap_or(t.sft_epochs),
        adam: AdamConfig::with_lr(t.sft_lr),
        seed,
        ..Default::default()
    };
    let mut inputs = vec![args.rm.clone()];
    inputs.extend(args.init.iter().cloned());
    inputs.extend(args.vocab.vocab.iter().cloned());
    let cfg_json = json!({ "ppo": config, "sft": if init.is_none() { Some(&sft) } else { None } });
    with_manifest(&args.out, "train-ppo", d, cfg_json, Some(seed), &inputs, || {
        let start = match init {
            Some(p) => p,
            None => {
                let res = sft_pretrain::<f64>(&vocab, &sft).map_err(runtime)?;
                let mut w = create(args.out.join("sft.ckpt"))?;
                res.policy.save(&mut w).map_err(runtime)?;
                w.flush().map_err(runtime)?;
                let mut w = create(args.out.join("sft_log.csv"))?;
                writeln!(w, "epoch,train_nll,heldout_perplexity").map_err(runtime)?;
                for e in &res.log {
                    writeln!(w, "{},{},{}", e.epoch, e.train_nll, e.heldout_perplexity).map_err(runtime)?;
                }
                w.flush().map_err(runtime)?;
                res.policy
            }
        };
        let run = train_ppo(&vocab, &OracleSpec::default(), &start, &start, &rm, &config).map_err(runtime)?;
        let mut w = create(args.out.join("policy.ckpt"))?;
        run.policy.save(&mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
        write_convergence_log(&run.log, create(args.out.join("convergence.csv"))?).map_err(runtime)?;
        let last = run.log.last().map(|r| r.mean_oracle_reward);
        write_json(
            args.out.join("summary.json"),
            &json!({
                "scheme": scheme.as_str(),
                "iterations": run.log.len(),
                "reached_target_at": run.reached_target_at,
                "final_mean_oracle_reward": last,
            }),
        )?;
        match run.reached_target_at {
            Some(i) => println!("{}: reached oracle target after {} iterations", scheme.as_str(), i + 1),
            None => println!("{}: target not reached in {} iterations", scheme.as_str(), run.log.len()),
        }
        Ok(())
    })
}

pub fn eval(args: &EvalArgs, d: &Defaults) -> Result<(), CliError> {
    let vocab = load_vocab(&args.vocab)?;
    let policy = load_policy(&args.policy)?;
    let reference = load_policy(&args.reference)?;
    if policy.vocab_size() != vocab.len() || reference.vocab_size() != vocab.len() {
        return Err(usage("policy and vocabulary sizes differ"));
    }
    let n = args.prompts.unwrap_or(d.eval.prompts);
    let seed = args.seed.unwrap_or(d.eval.seed);
    let mode = if args.independent_seeds { SeedMode::Independent } else { SeedMode::Paired };
    if n < grainrl::harness::MIN_PROMPTS {
        return Err(usage(format!("--prompts must be at least {}", grainrl::harness::MIN_PROMPTS)));
    }
    let mut inputs = vec![args.policy.clone(), args.reference.clone()];
    inputs.extend(args.vocab.vocab.iter().cloned());
    let cfg = json!({ "judge": "oracle", "prompts": n, "seed_mode": mode, "seed": seed });
    with_manifest(&args.out, "eval", d, cfg, Some(seed), &inputs, || {
        let prompts = eval_prompts(&vocab, n, seed);
        let judge = Judge::Oracle(OracleSpec::default());
        let report = win_rate(&vocab, &policy, &reference, &prompts, &judge, mode, seed).map_err(runtime)?;
        write_json(args.out.join("win_rate.json"), &report)?;
        println!(
            "win rate {:.3} ± {:.3} over {} prompts (wins {}, ties {}, losses {})",
            report.win_rate, report.std_error, report.n_comparisons, report.wins, report.ties, report.losses
        );
        Ok(())
    })
}

pub fn report(args: &ReportArgs, d: &Defaults) -> Result<(), CliError> {
    let (text, inputs) = match &args.config {
        Some(p) => {
            require_file(p)?;
            (fs::read_to_string(p).map_err(usage)?, vec![p.clone()])
        }
        None => (SMOKE_CONFIG.to_string(), Vec::new()),
    };
    let config = ExperimentConfig::from_toml(&text).map_err(usage)?;
    let cfg_json = serde_json::to_value(&config).map_err(runtime)?;
    with_manifest(&args.out, "report", d, cfg_json, None, &inputs, || {
        let vocab = Vocabulary::standard();
        let (bundle, _) = run_table_experiments(&vocab, &config, Some(&args.out)).map_err(runtime)?;
        let m = &bundle.medians;
        println!("t1 win rate vs SFT (median): token_level {:.3}, sequence_terminal {:.3}", m.t1_token, m.t1_sequence);
        println!("t2 reward-model accuracy (median): token {:.3}, sequence {:.3}", m.t2_token, m.t2_sequence);
        println!("t3 iterations to target (median): token_level {}, sequence_terminal {}", m.t3_token, m.t3_sequence);
        Ok(())
    })
}
