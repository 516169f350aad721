use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{io_err, EntityRanking, RankingError};

/// `%g` with six significant digits, as C prints it, except that negative
/// zero prints as `0`.
pub fn format_score(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn check_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

/// Writes `query_id Q0 entity rank score run_id` lines, queries in the given
/// order.
pub fn write_trec_run_to<W: Write>(rankings: &[EntityRanking], run_id: &str, out: &mut W) -> Result<(), RankingError> {
    if !check_token(run_id) {
        return Err(RankingError::InvalidRunId(run_id.to_string()));
    }
    // validate everything first so nothing partial is written
    for ranking in rankings {
        if !check_token(&ranking.query_id) {
            return Err(RankingError::InvalidQueryId(ranking.query_id.clone()));
        }
        if let Some(bad) = ranking.entries.iter().find(|e| !check_token(&e.entity)) {
            return Err(RankingError::WhitespaceInName(bad.entity.clone()));
        }
    }
    let mut text = String::new();
    for ranking in rankings {
        for e in &ranking.entries {
            text.push_str(&format!(
                "{} Q0 {} {} {} {}\n",
                ranking.query_id,
                e.entity,
                e.rank,
                format_score(e.score),
                run_id
            ));
        }
    }
    out.write_all(text.as_bytes()).map_err(|source| RankingError::Io {
        path: "<run output>".into(),
        source,
    })
}

/// Writes the run file at `path`, replacing it atomically.
pub fn write_trec_run(rankings: &[EntityRanking], run_id: &str, path: &Path) -> Result<(), RankingError> {
    let mut buf = Vec::new();
    write_trec_run_to(rankings, run_id, &mut buf)?;
    // write beside the target and rename so a failed run leaves no partial file
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let result = File::create(&tmp)
        .and_then(|file| {
            let mut out = BufWriter::new(file);
            out.write_all(&buf)?;
            out.flush()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}
