//! Config files are TOML tables whose keys are long flag names. They are
//! spliced into the argument list right after the subcommand; a key whose
//! flag is also typed on the command line is skipped, so the command line
//! wins.

use std::path::Path;

const TOP: [&str; 6] = ["synth", "link", "impute", "audit", "policy", "report"];
const AUDIT: [&str; 4] = ["measurement", "disparate", "joint", "interaction"];
const POLICY: [&str; 2] = ["rank", "allocate"];

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn scalar(v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        toml::Value::Datetime(d) => Ok(d.to_string()),
        other => Err(format!("unsupported value {other}")),
    }
}

/// Flags equivalent to a parsed config table.
pub fn flags(table: &toml::Table) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err("config files cannot include other config files".into());
        }
        match value {
            toml::Value::Boolean(true) => out.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
                out.push(format!("{flag}={}", parts.join(",")));
            }
            toml::Value::Table(_) => {
                return Err(format!("key {key:?}: nested tables are not supported"))
            }
            v => out.push(format!(
                "{flag}={}",
                scalar(v).map_err(|e| format!("key {key:?}: {e}"))?
            )),
        }
    }
    Ok(out)
}

fn insertion_point(argv: &[String]) -> usize {
    let Some(top) = argv.iter().position(|a| TOP.contains(&a.as_str())) else {
        return argv.len();
    };
    let nested: &[&str] = match argv[top].as_str() {
        "audit" => &AUDIT,
        "policy" => &POLICY,
        _ => &[],
    };
    match argv[top + 1..]
        .iter()
        .position(|a| nested.contains(&a.as_str()))
    {
        Some(i) => top + 1 + i + 1,
        None => top + 1,
    }
}

/// Returns `argv` with the config file's flags spliced in, or unchanged when
/// there is no `--config`.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("reading config {path}: {e}"))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| format!("parsing config {path}: {e}"))?;
    let typed: Vec<&str> = argv
        .iter()
        .filter(|a| a.starts_with("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();
    let extra: Vec<String> = flags(&table)?
        .into_iter()
        .filter(|f| !typed.contains(&f.split('=').next().unwrap_or(f)))
        .collect();
    let at = insertion_point(&argv);
    let mut out = argv;
    out.splice(at..at, extra);
    Ok(out)
}
