//! Command-line config overrides.

/// Parses `--key=value`, `key=value` and bare `--flag` (meaning `true`).
pub fn parse(args: &[String]) -> Result<Vec<(String, String)>, String> {
    args.iter()
        .map(|a| {
            let body = a.strip_prefix("--").unwrap_or(a);
            match body.split_once('=') {
                Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
                None if a.starts_with("--") && !body.is_empty() => Ok((body.to_string(), "true".into())),
                _ => Err(format!("cannot parse override `{a}`; expected --key=value")),
            }
        })
        .collect()
}
