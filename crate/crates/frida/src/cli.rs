//! Command-line front end.

use std::path::PathBuf;

use frida_core::dannib::DannMode;
use frida_core::error::{FridaError, Result};

use crate::config::{parse_mode, RunConfig};
use crate::dsio::write_dataset;
use crate::harness;

const HELP: &str = "\
frida - incremental domain adaptation via generative feature replay

USAGE:
    frida <command> [flags]

COMMANDS:
    gen     --spec <file> --out <dir>
            Generate a synthetic multi-domain benchmark: one dataset file
            per domain plus a manifest listing the episode order.

    run     --config <file> --out <dir> [--paper-literal] [--mode <m>]
            Run the full incremental pipeline: episode checkpoints, test
            splits, metrics.csv, report.json, and a projection dump land in
            the output directory.

    resume  --state <file> --data <file>
            Continue an interrupted run from a state checkpoint with the
            next domain's dataset file.

    eval    --state <file> --testdir <dir>
            Evaluate a saved state on every seen domain's test set
            (domain_<tau>.ds files); prints domain,time,accuracy rows.

    ablate  --config <file>
            Run the discriminator-mode trio (dann_binary, dann_multiclass,
            dann_ib) and print a comparison table.

    sample  --state <file> --tau <n> --per-class <k>
            Draw labeled synthetic features for a seen domain; prints a
            dataset in the FRIDA-DS text format.

FLAGS:
    --mode <m>        dann_binary | dann_multiclass | dann_ib (default dann_ib)
    --paper-literal   unweighted bottleneck term (da.beta=1) and the
                      saturating generator objective

CONFIG DEFAULTS (key=value file; every key optional):
    seed=1                  code_width=3            test_fraction=0.3
    gan.lr=0.001            gan.batch=64            gan.epochs=200
    gan.z_dim=2000          gan.hidden=1024,1024    gan.trunk=512,256,128
    da.lr=0.001             da.batch=64             da.epochs=200
    da.latent=256           da.hidden=512,512       da.beta=0.01
    da.mode=dann_ib         pseudo.threshold=0.95   pseudo.fallback=true
    replay.per_class=100    forgetting=first_seen
    benchmark.classes=4     benchmark.dim=16        benchmark.n_per_class=150
    benchmark.targets=2     benchmark.rotations=0.3,0.6
    benchmark.translations=3,6                      benchmark.sigma=0.5
    data.source=<file>      data.targets=<f1,f2>    (instead of benchmark.*)

ENVIRONMENT:
    FRIDA_THREADS     caps parallel evaluation width (default 1)
";

struct Flags {
    values: Vec<(String, String)>,
    switches: Vec<String>,
}

impl Flags {
    fn parse(args: &[String], valued: &[&str], bare: &[&str]) -> Result<Flags> {
        let mut values = Vec::new();
        let mut switches = Vec::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            if bare.contains(&arg.as_str()) {
                switches.push(arg.clone());
            } else if valued.contains(&arg.as_str()) {
                let value = it
                    .next()
                    .ok_or_else(|| FridaError::Contract(format!("flag {arg} needs a value")))?;
                values.push((arg.clone(), value.clone()));
            } else {
                return Err(FridaError::Contract(format!("unknown flag '{arg}'")));
            }
        }
        Ok(Flags { values, switches })
    }

    fn require(&self, flag: &str) -> Result<&str> {
        self.values
            .iter()
            .find(|(k, _)| k == flag)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| FridaError::Contract(format!("missing required flag {flag}")))
    }

    fn get(&self, flag: &str) -> Option<&str> {
        self.values
            .iter()
            .find(|(k, _)| k == flag)
            .map(|(_, v)| v.as_str())
    }

    fn has(&self, switch: &str) -> bool {
        self.switches.iter().any(|s| s == switch)
    }
}

fn load_config_with_overrides(flags: &Flags) -> Result<RunConfig> {
    let path = PathBuf::from(flags.require("--config")?);
    let mut cfg = RunConfig::load(&path)?;
    if let Some(mode) = flags.get("--mode") {
        cfg.mode = parse_mode(mode)?;
    }
    if flags.has("--paper-literal") {
        cfg.apply_paper_literal();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["--spec", "--out"], &[])?;
    let spec_path = PathBuf::from(flags.require("--spec")?);
    let out = PathBuf::from(flags.require("--out")?);
    let cfg = RunConfig::load(&spec_path)?;
    let spec = cfg.benchmark_spec()?;
    let domains = frida_core::synth::make_benchmark(&spec)?;
    std::fs::create_dir_all(&out)
        .map_err(|e| FridaError::Format(format!("cannot create {}: {e}", out.display())))?;
    let mut manifest = String::from("FRIDA-GEN v1\n");
    for d in &domains {
        let name = format!("domain_{}.ds", d.domain().tau());
        write_dataset(d, &out.join(&name))?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    std::fs::write(out.join("manifest.txt"), manifest)
        .map_err(|e| FridaError::Format(format!("cannot write manifest: {e}")))?;
    println!("wrote {} domains to {}", domains.len(), out.display());
    Ok(())
}

fn cmd_run(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["--config", "--out", "--mode"], &["--paper-literal"])?;
    let cfg = load_config_with_overrides(&flags)?;
    let out = PathBuf::from(flags.require("--out")?);
    harness::run_to_dir(&cfg, &out)?;
    println!("run complete: {}", out.display());
    Ok(())
}

fn cmd_resume(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["--state", "--data"], &[])?;
    let state = PathBuf::from(flags.require("--state")?);
    let data = PathBuf::from(flags.require("--data")?);
    harness::resume_in_dir(&state, &data)?;
    println!("resumed past {}", state.display());
    Ok(())
}

fn cmd_eval(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["--state", "--testdir"], &[])?;
    let state = PathBuf::from(flags.require("--state")?);
    let testdir = PathBuf::from(flags.require("--testdir")?);
    let rows = harness::eval_state_against_dir(&state, &testdir)?;
    println!("domain,time,accuracy");
    for (domain, time, acc) in rows {
        println!("{domain},{time},{acc}");
    }
    Ok(())
}

fn cmd_ablate(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["--config"], &[])?;
    let cfg = RunConfig::load(&PathBuf::from(flags.require("--config")?))?;
    let rows = harness::ablate(&cfg)?;
    println!("mode,target_avg_accuracy,source_avg_accuracy,source_forgetting");
    for row in rows {
        let mode = match row.mode {
            DannMode::Binary => "dann_binary",
            DannMode::Multiclass => "dann_multiclass",
            DannMode::Ib => "dann_ib",
        };
        let tgt = row
            .target_avg_accuracy
            .map_or("na".to_string(), |v| format!("{v}"));
        println!(
            "{mode},{tgt},{},{}",
            row.source_avg_accuracy, row.source_forgetting
        );
    }
    Ok(())
}

fn cmd_sample(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["--state", "--tau", "--per-class"], &[])?;
    let state = PathBuf::from(flags.require("--state")?);
    let tau: usize = flags
        .require("--tau")?
        .parse()
        .map_err(|_| FridaError::Contract("--tau must be a nonnegative integer".into()))?;
    let per_class: usize = flags
        .require("--per-class")?
        .parse()
        .map_err(|_| FridaError::Contract("--per-class must be a positive integer".into()))?;
    let ds = harness::sample_from_state(&state, tau, per_class)?;
    print!("{}", harness::render_sample(&ds));
    Ok(())
}

/// Entry point: returns the process exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let Some(command) = args.first() else {
        eprint!("{HELP}");
        return 2;
    };
    let rest = &args[1..];
    let outcome = match command.as_str() {
        "gen" => cmd_gen(rest),
        "run" => cmd_run(rest),
        "resume" => cmd_resume(rest),
        "eval" => cmd_eval(rest),
        "ablate" => cmd_ablate(rest),
        "sample" => cmd_sample(rest),
        "help" | "--help" | "-h" => {
            print!("{HELP}");
            return 0;
        }
        other => {
            eprintln!("frida: unknown command '{other}' (see 'frida help')");
            return 2;
        }
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("frida: {e}");
            1
        }
    }
}
