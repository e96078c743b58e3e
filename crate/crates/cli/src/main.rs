//! `vpflow`: command-line driver for the volume-preservation benchmark suite.
//!
//! Subcommands: `run` (one integration cell), `converge` (error-vs-h study),
//! `volume` (per-step determinant study with assertion policy), `classify`
//! (vector-field class certificate check), `list` (registries).
//!
//! Exit codes: 0 ok, 2 usage error, 3 numerical failure (partial output is
//! still written), 4 assertion failure.

mod certfile;
mod commands;
mod registry;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vpflow::vpcheck::CERT_DEFAULT_SAMPLES;

#[derive(Debug)]
pub enum CliError {
    /// Bad names, flags, files, or grids (exit 2).
    Usage(String),
    /// Divergence or linear-algebra breakdown (exit 3).
    Numerical(String),
    /// A volume or classification assertion failed (exit 4).
    Assertion(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Assertion(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Assertion(m) => write!(f, "assertion failed: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "vpflow",
    version,
    about = "Volume-preserving exponential integrators: runs, convergence and volume studies, class checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one problem with one method; write trajectory and volume CSVs
    Run(CellArgs),
    /// Relative-global-error convergence study over a step-size grid
    Converge(StudyArgs),
    /// Per-step volume study over methods and step sizes
    Volume(StudyArgs),
    /// Check a vector-field class certificate by sampled similarity relations
    Classify(ClassifyArgs),
    /// List built-in problems and methods
    List,
}

#[derive(Args)]
struct CellArgs {
    /// Config file with key=value lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Method name (see `vpflow list`)
    #[arg(long)]
    method: Option<String>,
    /// Step size; rationals like 1/200 are accepted
    #[arg(long)]
    h: Option<String>,
    /// Final time (must be a multiple of h)
    #[arg(long = "t-end")]
    t_end: Option<String>,
    /// Output directory for CSV files (default ".")
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Seed for seeded operations (accepted everywhere for config parity)
    #[arg(long)]
    seed: Option<String>,
    /// Custom tableau file; runs as an exponential method named CUSTOM-<stem>
    #[arg(long)]
    tableau: Option<PathBuf>,
    /// Assert the per-step determinant target where a preservation rule applies
    #[arg(long = "assert", conflicts_with = "no_assert")]
    assert_flag: bool,
    /// Disable determinant assertions
    #[arg(long = "no-assert")]
    no_assert: bool,
}

#[derive(Args)]
struct StudyArgs {
    /// Config file with key=value lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Comma-separated method names
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated step sizes; rationals like 1/200 are accepted
    #[arg(long)]
    h: Option<String>,
    /// Final time (must be a multiple of every h)
    #[arg(long = "t-end")]
    t_end: Option<String>,
    /// Output directory for CSV files (default ".")
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Seed for seeded operations (accepted everywhere for config parity)
    #[arg(long)]
    seed: Option<String>,
    /// Custom tableau file, appended to the method list as CUSTOM-<stem>
    #[arg(long)]
    tableau: Option<PathBuf>,
    /// Assert determinant targets where a preservation rule applies
    #[arg(long = "assert", conflicts_with = "no_assert")]
    assert_flag: bool,
    /// Disable determinant assertions (volume studies assert by default)
    #[arg(long = "no-assert")]
    no_assert: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Config file with key=value lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Certificate file (defaults to the problem's bundled certificate)
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Seed for the sampled states (default 0)
    #[arg(long)]
    seed: Option<String>,
    /// Number of sampled states (default 64)
    #[arg(long)]
    samples: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => commands::cmd_run(&resolve_run(args)?),
        Command::Converge(args) => commands::cmd_converge(&resolve_study(args, false)?),
        Command::Volume(args) => commands::cmd_volume(&resolve_study(args, true)?),
        Command::Classify(args) => commands::cmd_classify(&resolve_classify(args)?),
        Command::List => commands::cmd_list(),
    }
}

const CONFIG_KEYS: &[&str] = &[
    "problem", "method", "h", "t-end", "out-dir", "seed", "tableau", "assert",
];

fn load_config(path: Option<&Path>) -> Result<HashMap<String, String>, CliError> {
    let Some(path) = path else {
        return Ok(HashMap::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key=value", no + 1))
        })?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(CliError::Usage(format!(
                "config line {}: unknown key '{key}' (expected one of {})",
                no + 1,
                CONFIG_KEYS.join(", ")
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Parse a step size or time: a plain float or a rational like `1/200`.
fn parse_number(what: &str, text: &str) -> Result<f64, CliError> {
    let bad = |detail: String| CliError::Usage(format!("{what}: {detail}"));
    let t = text.trim();
    let value = if let Some((num, den)) = t.split_once('/') {
        let n: f64 = num
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad numerator '{num}' ({e})")))?;
        let d: f64 = den
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad denominator '{den}' ({e})")))?;
        if d == 0.0 {
            return Err(bad("zero denominator".into()));
        }
        n / d
    } else {
        t.parse()
            .map_err(|e| bad(format!("bad number '{t}' ({e})")))?
    };
    if !value.is_finite() {
        return Err(bad(format!("'{t}' is not finite")));
    }
    Ok(value)
}

fn parse_seed(text: Option<&String>) -> Result<u64, CliError> {
    match text {
        Some(s) => s
            .trim()
            .parse()
            .map_err(|e| CliError::Usage(format!("seed: bad integer '{s}' ({e})"))),
        None => Ok(0),
    }
}

fn resolve_assert(
    flag_on: bool,
    flag_off: bool,
    cfg: Option<&String>,
    default_on: bool,
) -> Result<bool, CliError> {
    if flag_on {
        return Ok(true);
    }
    if flag_off {
        return Ok(false);
    }
    match cfg.map(|s| s.as_str()) {
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(other) => Err(CliError::Usage(format!(
            "config key assert: expected true or false, got '{other}'"
        ))),
        None => Ok(default_on),
    }
}

fn resolve_run(args: CellArgs) -> Result<commands::RunSettings, CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let problem = args
        .problem
        .or_else(|| cfg.get("problem").cloned())
        .ok_or_else(|| CliError::Usage("missing --problem (or config key problem)".into()))?;
    let bench = commands::lookup_problem(&problem)?;
    let tableau = args
        .tableau
        .or_else(|| cfg.get("tableau").map(PathBuf::from));
    let method_name = args.method.or_else(|| cfg.get("method").cloned());
    if method_name.is_none() && tableau.is_none() {
        return Err(CliError::Usage(
            "missing --method or --tableau (or config keys method/tableau)".into(),
        ));
    }
    let method = registry::resolve_method(
        method_name.as_deref().unwrap_or("CUSTOM"),
        tableau.as_deref(),
    )?;
    let h = match args.h.or_else(|| cfg.get("h").cloned()) {
        Some(s) => parse_number("h", &s)?,
        None => bench.default_h,
    };
    let t_end = match args.t_end.or_else(|| cfg.get("t-end").cloned()) {
        Some(s) => parse_number("t-end", &s)?,
        None => bench.default_t_end,
    };
    let out_dir = args
        .out_dir
        .or_else(|| cfg.get("out-dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    // Integration is deterministic; the seed is validated for config parity.
    parse_seed(args.seed.as_ref().or_else(|| cfg.get("seed")))?;
    let assert_volume = resolve_assert(args.assert_flag, args.no_assert, cfg.get("assert"), false)?;
    Ok(commands::RunSettings {
        problem,
        method,
        h,
        t_end,
        out_dir,
        assert_volume,
    })
}

fn resolve_study(args: StudyArgs, assert_default_on: bool) -> Result<commands::StudySettings, CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let problem = args
        .problem
        .or_else(|| cfg.get("problem").cloned())
        .ok_or_else(|| CliError::Usage("missing --problem (or config key problem)".into()))?;
    let bench = commands::lookup_problem(&problem)?;
    let mut methods = Vec::new();
    if let Some(list) = args.method.or_else(|| cfg.get("method").cloned()) {
        for item in list.split(',') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            methods.push(registry::resolve_method(item, None)?);
        }
    }
    if let Some(path) = args
        .tableau
        .or_else(|| cfg.get("tableau").map(PathBuf::from))
    {
        methods.push(registry::resolve_method("CUSTOM", Some(&path))?);
    }
    if methods.is_empty() {
        return Err(CliError::Usage(
            "missing --method (comma-separated names) or --tableau".into(),
        ));
    }
    let hs = match args.h.or_else(|| cfg.get("h").cloned()) {
        Some(list) => {
            let mut hs = Vec::new();
            for item in list.split(',') {
                let item = item.trim();
                if item.is_empty() {
                    continue;
                }
                hs.push(parse_number("h", item)?);
            }
            if hs.is_empty() {
                return Err(CliError::Usage("h: empty step list".into()));
            }
            hs
        }
        None => vec![bench.default_h],
    };
    let t_end = match args.t_end.or_else(|| cfg.get("t-end").cloned()) {
        Some(s) => parse_number("t-end", &s)?,
        None => bench.default_t_end,
    };
    let out_dir = args
        .out_dir
        .or_else(|| cfg.get("out-dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    parse_seed(args.seed.as_ref().or_else(|| cfg.get("seed")))?;
    let assert_volume = resolve_assert(
        args.assert_flag,
        args.no_assert,
        cfg.get("assert"),
        assert_default_on,
    )?;
    Ok(commands::StudySettings {
        problem,
        methods,
        hs,
        t_end,
        out_dir,
        assert_volume,
    })
}

fn resolve_classify(args: ClassifyArgs) -> Result<commands::ClassifySettings, CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let problem = args
        .problem
        .or_else(|| cfg.get("problem").cloned())
        .ok_or_else(|| CliError::Usage("missing --problem (or config key problem)".into()))?;
    let seed = parse_seed(args.seed.as_ref().or_else(|| cfg.get("seed")))?;
    let samples = match &args.samples {
        Some(s) => s
            .trim()
            .parse()
            .map_err(|e| CliError::Usage(format!("samples: bad integer '{s}' ({e})")))?,
        None => CERT_DEFAULT_SAMPLES,
    };
    Ok(commands::ClassifySettings {
        problem,
        cert: args.cert,
        seed,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_parse_as_decimals_and_rationals() {
        assert_eq!(parse_number("h", "0.005").unwrap(), 0.005);
        assert_eq!(parse_number("h", "1/200").unwrap(), 0.005);
        assert_eq!(parse_number("h", " 3 / 4 ").unwrap(), 0.75);
        assert!(matches!(parse_number("h", "abc"), Err(CliError::Usage(_))));
        assert!(matches!(parse_number("h", "1/0"), Err(CliError::Usage(_))));
        assert!(matches!(parse_number("h", "1/x"), Err(CliError::Usage(_))));
    }

    #[test]
    fn assert_resolution_prefers_flags_over_config() {
        let yes = "true".to_string();
        let no = "false".to_string();
        assert!(resolve_assert(true, false, Some(&no), false).unwrap());
        assert!(!resolve_assert(false, true, Some(&yes), true).unwrap());
        assert!(resolve_assert(false, false, Some(&yes), false).unwrap());
        assert!(!resolve_assert(false, false, None, false).unwrap());
        assert!(resolve_assert(false, false, None, true).unwrap());
        let odd = "maybe".to_string();
        assert!(resolve_assert(false, false, Some(&odd), false).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_reads_known_ones() {
        let dir = std::env::temp_dir().join(format!("vpflow-conf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("good.conf");
        std::fs::write(&path, "# c\nproblem = duffing\nh=1/50\n").unwrap();
        let map = load_config(Some(&path)).unwrap();
        assert_eq!(map.get("problem").map(String::as_str), Some("duffing"));
        assert_eq!(map.get("h").map(String::as_str), Some("1/50"));
        std::fs::write(&path, "stepsize = 1\n").unwrap();
        assert!(matches!(load_config(Some(&path)), Err(CliError::Usage(_))));
        let _ = std::fs::remove_dir_all(&dir);
    }
}
