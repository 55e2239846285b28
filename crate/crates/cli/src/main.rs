use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transpeech::config::load_config;
use transpeech::dsp::{load_wav, save_wav};
use transpeech::harness::bench::{bench_latency, BenchSetup};
use transpeech::harness::bleu::{corpus_bleu_multi, token_accuracy};
use transpeech::harness::experiments::{distill_pair_set, Hypothesis};
use transpeech::harness::manifest::{write_speech_corpus, Manifest, MANIFEST_FILE};
use transpeech::harness::pairs::{gen_pair_corpus, load_pair_set, save_pair_set, PairTaskSpec};
use transpeech::harness::report::{latency_markdown, latency_svg, uer_markdown, write_report};
use transpeech::harness::synth_speech::{gen_speech_corpus, SpeechSpec, Split};
use transpeech::harness::uer::{run_uer_experiment, train_unitizers, UerExperimentConfig, Unitizer};
use transpeech::jsonl::{read_jsonl, write_jsonl};
use transpeech::maskpredict::{decode_source, DecodeConfig};
use transpeech::perturb::{enhance_chain, style_normalize, PerturbMode, PerturbParams, StyleStats};
use transpeech::seqmodel::{train_model, ModelKind, S2utModel, S2utRunConfig};
use transpeech::unitizer::{Codebook, FeatureEncoder, UnitSequence};
use transpeech::{Error, Result};

#[derive(Parser)]
#[command(name = "transpeech", version, about = "Discrete-unit speech-to-speech translation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Speech,
    Pairs,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic speech corpus (WAVs, manifest, alignments) or a pair corpus.
    GenData {
        kind: DataKind,
        #[arg(long)]
        out: PathBuf,
        /// TOML with SpeechSpec or PairTaskSpec fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train the baseline codebook, the CTC-finetuned encoder and its codebook on a speech corpus.
    TrainCtc {
        /// Directory written by `gen-data speech`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML with unit-experiment fields (num_units, kmeans_iters, [finetune]).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a speech-to-unit model on a pair set.
    TrainS2ut {
        #[arg(long, value_parser = parse_kind)]
        mode: ModelKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML with [model], [train] and model_seed.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replace training targets by AR beam-search outputs.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
    },
    /// Decode a split of a pair set to a hypothesis file.
    Decode {
        #[arg(long)]
        model: PathBuf,
        /// AR model for rescoring (NAR with --npd).
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        #[arg(long, default_value_t = 1)]
        length_beam: usize,
        #[arg(long)]
        npd: bool,
        /// Beam size for AR models.
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract units from audio.
    Unitize {
        #[arg(long)]
        codebook: PathBuf,
        /// Feature encoder; raw mel frames are clustered without it.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long, conflicts_with = "audio")]
        manifest: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        audio: Vec<PathBuf>,
        /// Merge runs of repeated units.
        #[arg(long)]
        collapse: bool,
        /// JSON lines output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unit error rate of baseline and tuned units under each perturbation family.
    Uer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus BLEU and token accuracy of a hypothesis file against a pair set.
    EvalBleu {
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decoding latency per target-length bucket, AR against NAR.
    Bench {
        #[arg(long, requires = "nar")]
        ar: Option<PathBuf>,
        #[arg(long, requires = "ar")]
        nar: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one perturbation family (or the full chain) to a WAV file.
    Perturb {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_parser = parse_mode, default_value = "full")]
        mode: PerturbMode,
        /// TOML with perturbation ranges.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Normalize a WAV file to dataset-average pitch and energy.
    Normalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// style_stats.json written by train-ctc.
        #[arg(long)]
        stats: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<PerturbMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse().cmd) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { kind, out, config, seed } => match kind {
            DataKind::Speech => {
                let spec: SpeechSpec = load_config(config.as_deref())?;
                let m = write_speech_corpus(&gen_speech_corpus(&spec, seed)?, &out)?;
                log::info!("wrote {} utterances to {}", m.rows.len(), out.display());
                Ok(())
            }
            DataKind::Pairs => {
                let spec: PairTaskSpec = load_config(config.as_deref())?;
                let c = gen_pair_corpus(&spec, seed)?;
                save_pair_set(&out, &c.examples)?;
                std::fs::write(out.join("task.toml"), transpeech::config::to_toml(&spec)?)?;
                log::info!("wrote {} pairs to {}", c.examples.len(), out.display());
                Ok(())
            }
        },
        Cmd::TrainCtc { data, out, config } => {
            let cfg: UerExperimentConfig = load_config(config.as_deref())?;
            let m = Manifest::load(data.join(MANIFEST_FILE))?;
            let audio = m
                .split(Split::Train)
                .map(|r| Ok((r.utt_id.clone(), m.load_audio(r)?)))
                .collect::<Result<Vec<_>>>()?;
            let inputs: Vec<(&str, _)> = audio.iter().map(|(id, w)| (id.as_str(), w)).collect();
            let t = train_unitizers(&inputs, cfg.num_units, cfg.kmeans_iters, &cfg.finetune, cfg.corpus_seed)?;
            std::fs::create_dir_all(&out)?;
            t.encoder.save(out.join("encoder.tsck"))?;
            t.baseline.save(out.join("baseline_codebook.json"))?;
            t.tuned.save(out.join("tuned_codebook.json"))?;
            write_json(&out.join("style_stats.json"), &t.stats)?;
            write_json(&out.join("finetune_report.json"), &t.finetune)?;
            log::info!("wrote encoder and codebooks to {}", out.display());
            Ok(())
        }
        Cmd::TrainS2ut { mode, data, out, config } => {
            let cfg: S2utRunConfig = load_config(config.as_deref())?;
            let pairs: Vec<_> = load_pair_set(&data)?
                .into_iter()
                .filter(|e| e.split == Split::Train)
                .map(|e| e.pair)
                .collect();
            let mut model_cfg = cfg.model.clone();
            if let Some(p) = pairs.first() {
                model_cfg.input_dim = p.source.cols();
            }
            let mut m = S2utModel::new(model_cfg, mode, cfg.model_seed)?;
            let r = train_model(&mut m, &pairs, &cfg.train)?;
            m.save(&out)?;
            log::info!("{} updates in {:.0}s, saved {}", r.updates, r.seconds, out.display());
            Ok(())
        }
        Cmd::Distill { teacher, data, out, beam } => {
            let t = S2utModel::load(&teacher)?;
            let (examples, report) = distill_pair_set(&t, &load_pair_set(&data)?, beam)?;
            save_pair_set(&out, &examples)?;
            log::info!("distilled {} pairs, dropped {}", report.pairs.len(), report.dropped.len());
            Ok(())
        }
        Cmd::Decode {
            model,
            teacher,
            data,
            split,
            iterations,
            length_beam,
            npd,
            beam,
            out,
        } => {
            let split: Split = split.parse()?;
            let m = S2utModel::load(&model)?;
            let t = teacher.map(S2utModel::load).transpose()?;
            let cfg = DecodeConfig {
                iterations,
                length_beam,
                npd,
                ..DecodeConfig::default()
            };
            let mut hyps = Vec::new();
            for e in load_pair_set(&data)?.into_iter().filter(|e| e.split == split) {
                let units = match m.kind() {
                    ModelKind::Ar => m.ar_beam_decode(&m.encode(&e.pair.source)?, beam)?.best.units,
                    ModelKind::Nar => decode_source(&m, t.as_ref(), &e.pair.source, &cfg)?.0,
                };
                hyps.push(Hypothesis { id: e.pair.id, units });
            }
            write_jsonl(&out, &hyps)?;
            log::info!("decoded {} sources", hyps.len());
            Ok(())
        }
        Cmd::Unitize {
            codebook,
            encoder,
            manifest,
            audio,
            collapse,
            out,
        } => {
            let cb = Codebook::load(&codebook)?;
            let enc = encoder.map(FeatureEncoder::load).transpose()?;
            let u = Unitizer {
                encoder: enc.as_ref(),
                codebook: &cb,
            };
            let inputs: Vec<(String, _)> = match manifest {
                Some(p) => {
                    let m = Manifest::load(&p)?;
                    m.rows
                        .iter()
                        .map(|r| Ok((r.utt_id.clone(), m.load_audio(r)?)))
                        .collect::<Result<_>>()?
                }
                None => audio
                    .iter()
                    .map(|p| Ok((p.display().to_string(), load_wav(p)?)))
                    .collect::<Result<_>>()?,
            };
            let mut seqs = Vec::with_capacity(inputs.len());
            for (utt_id, w) in inputs {
                let mut units = u.units(&w)?;
                if collapse {
                    units = transpeech::unitizer::collapse_units(&units);
                }
                seqs.push(UnitSequence { utt_id, units });
            }
            match out {
                Some(p) => write_jsonl(p, &seqs),
                None => {
                    for s in &seqs {
                        println!("{}", serde_json::to_string(s)?);
                    }
                    Ok(())
                }
            }
        }
        Cmd::Uer { config, out } => {
            let cfg: UerExperimentConfig = load_config(config.as_deref())?;
            let r = run_uer_experiment(&cfg)?;
            let md = uer_markdown(&r);
            print!("{md}");
            write_report(&out, "uer", &r, Some(&md))
        }
        Cmd::EvalBleu { hyps, data, out } => {
            let hyps: Vec<Hypothesis> = read_jsonl(&hyps)?;
            let pairs = load_pair_set(&data)?;
            let by_id: std::collections::HashMap<&str, &Vec<Vec<usize>>> =
                pairs.iter().map(|e| (e.pair.id.as_str(), &e.references)).collect();
            let refs = hyps
                .iter()
                .map(|h| {
                    by_id
                        .get(h.id.as_str())
                        .map(|r| (*r).clone())
                        .ok_or_else(|| Error::Input(format!("no reference for {}", h.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let units: Vec<Vec<usize>> = hyps.into_iter().map(|h| h.units).collect();
            let report = corpus_bleu_multi(&refs, &units)?;
            let acc = token_accuracy(&refs, &units)?;
            println!("BLEU {:.2}  token accuracy {:.2}%  ({} sentences)", report.bleu, acc, units.len());
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            Ok(())
        }
        Cmd::Bench { ar, nar, config, out } => {
            let setup: BenchSetup = load_config(config.as_deref())?;
            let (ar, nar) = match (ar, nar) {
                (Some(a), Some(n)) => (S2utModel::load(a)?, S2utModel::load(n)?),
                _ => setup.fresh_models()?,
            };
            let r = bench_latency(&ar, &nar, &setup.task, &setup.bench)?;
            let md = latency_markdown(&r);
            print!("{md}");
            write_report(&out, "latency", &r, Some(&md))?;
            std::fs::write(out.join("latency.svg"), latency_svg(&r))?;
            Ok(())
        }
        Cmd::Perturb {
            input,
            output,
            mode,
            config,
            seed,
        } => {
            let params: PerturbParams = load_config(config.as_deref())?;
            let w = load_wav(&input)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            save_wav(&enhance_chain(&w, &params, mode, &mut rng)?, &output)
        }
        Cmd::Normalize { input, output, stats } => {
            let stats: StyleStats = serde_json::from_str(&std::fs::read_to_string(&stats)?)?;
            stats.validate()?;
            save_wav(&style_normalize(&load_wav(&input)?, &stats), &output)
        }
    }
}
