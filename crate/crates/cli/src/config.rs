use std::ffi::OsString;

use anyhow::{anyhow, bail, Context};
use clap::{ArgAction, CommandFactory};

use crate::Cli;

/// Options of the root command that take a value and may precede the
/// subcommand name.
const GLOBAL_VALUED: [&str; 3] = ["--config", "--seed", "--out"];

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn subcommand_name(argv: &[OsString]) -> Option<String> {
    let mut skip_value = false;
    for a in argv.iter().skip(1) {
        let s = a.to_string_lossy();
        if skip_value {
            skip_value = false;
            continue;
        }
        if s.starts_with('-') {
            skip_value = GLOBAL_VALUED.contains(&s.as_ref());
            continue;
        }
        return Some(s.into_owned());
    }
    None
}

fn given_on_command_line(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let with_value = format!("--{long}=");
    argv.iter().skip(1).any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&with_value)
    })
}

/// Appends flags from the `--config` file that the command line does not
/// already set. Keys may use `_` or `-`.
pub fn merge_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let values = tunescale_core::kv::read_kv(&path)
        .with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let Some(sub) = subcommand_name(&argv) else {
        return Ok(argv);
    };
    let root = Cli::command();
    let subcmd = root
        .find_subcommand(&sub)
        .ok_or_else(|| anyhow!("unknown subcommand `{sub}`"))?;

    let mut out = argv.clone();
    for (key, value) in &values {
        let long = key.replace('_', "-");
        if long == "config" {
            bail!("config file cannot name another config file");
        }
        let arg = subcmd
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(long.as_str()))
            .ok_or_else(|| anyhow!("unknown config key `{key}` for `{sub}`"))?;
        if given_on_command_line(&argv, &long) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            let on: bool = value
                .parse()
                .map_err(|_| anyhow!("config key `{key}` expects true or false, got `{value}`"))?;
            if on {
                out.push(format!("--{long}").into());
            }
        } else {
            out.push(format!("--{long}={value}").into());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(Into::into).collect()
    }

    #[test]
    fn finds_subcommand_past_global_values() {
        assert_eq!(
            subcommand_name(&os(&["t", "--seed", "4", "--strict", "fit", "--runlog", "x"])).as_deref(),
            Some("fit")
        );
        assert_eq!(subcommand_name(&os(&["t", "--out=o", "plan"])).as_deref(), Some("plan"));
    }

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "seed = 9\nmax_n = 16\nstrict = true\ncorpus = c.jsonl\n").unwrap();
        let merged = merge_config(os(&[
            "t",
            "--config",
            cfg.to_str().unwrap(),
            "sample",
            "--seed=3",
        ]))
        .unwrap();
        let text: Vec<String> = merged.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert!(text.contains(&"--max-n=16".to_owned()));
        assert!(text.contains(&"--strict".to_owned()));
        assert!(text.contains(&"--corpus=c.jsonl".to_owned()));
        assert!(!text.iter().any(|s| s == "--seed=9"));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "bogus = 1\n").unwrap();
        assert!(merge_config(os(&["t", "--config", cfg.to_str().unwrap(), "ingest"])).is_err());
    }
}
