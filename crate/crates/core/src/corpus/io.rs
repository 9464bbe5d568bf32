//! Text-tabular file formats.
//!
//! Corpus file: header `#dim=<d>`, then one segment per line:
//! `segment_id<TAB>speaker_id|-<TAB>gender|-<TAB>domain<TAB>partition|-<TAB>v1 v2 ... vd`.
//! Vector components are written with Rust's shortest-round-trip float
//! formatting, so read(write(c)) reproduces every field exactly.
//!
//! Trial file: `enroll_id[,enroll_id...]<TAB>test_id<TAB>target|nontarget|-<TAB>partition|-`.
//! Score file: `#calibrated=<bool>` header, then trial line + `<TAB>score`
//! with 12-digit precision.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Corpus, Domain, Gender, ScoreSet, Segment, Trial, TrialKey, TrialSet};
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn opt_field(s: &str) -> Option<String> {
    if s == "-" {
        None
    } else {
        Some(s.to_string())
    }
}

fn fmt_opt(s: Option<&str>) -> &str {
    s.unwrap_or("-")
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "#dim={}", corpus.dimension())?;
    for seg in corpus.segments() {
        let vec_str: Vec<String> = seg.vector.iter().map(|v| format!("{v}")).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            seg.segment_id,
            fmt_opt(seg.speaker_id.as_deref()),
            seg.gender.map(|g| g.as_str()).unwrap_or("-"),
            seg.domain.as_str(),
            fmt_opt(seg.partition_tag.as_deref()),
            vec_str.join(" ")
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file: missing '#dim=<d>' header"))?;
    let header = header?;
    let dim: usize = header
        .strip_prefix("#dim=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(path, 1, format!("expected '#dim=<d>' header, got '{header}'")))?;

    let mut segments = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 6 tab-separated fields, got {}", fields.len()),
            ));
        }
        let gender = match fields[2] {
            "-" => None,
            tok => Some(
                Gender::parse(tok)
                    .ok_or_else(|| parse_err(path, lineno, format!("unknown gender '{tok}'")))?,
            ),
        };
        let domain = Domain::parse(fields[3])
            .ok_or_else(|| parse_err(path, lineno, format!("unknown domain '{}'", fields[3])))?;
        let mut vector = Vec::with_capacity(dim);
        for tok in fields[5].split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad float '{tok}'")))?;
            vector.push(v);
        }
        if vector.len() != dim {
            return Err(parse_err(
                path,
                lineno,
                format!("row has {} values but corpus dimension is {dim}", vector.len()),
            ));
        }
        segments.push(Segment {
            segment_id: fields[0].to_string(),
            speaker_id: opt_field(fields[1]),
            gender,
            domain,
            partition_tag: opt_field(fields[4]),
            vector,
        });
    }
    Corpus::new(dim, segments).map_err(|e| match e {
        Error::Data(msg) => parse_err(path, 0, msg),
        other => other,
    })
}

fn format_trial(t: &Trial) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        t.enroll_ids.join(","),
        t.test_id,
        t.key.map(|k| k.as_str()).unwrap_or("-"),
        fmt_opt(t.partition_tag.as_deref())
    )
}

fn parse_trial(path: &Path, lineno: usize, fields: &[&str]) -> Result<Trial> {
    let enroll_ids: Vec<String> = fields[0].split(',').map(String::from).collect();
    if enroll_ids.iter().any(|s| s.is_empty()) {
        return Err(parse_err(path, lineno, "empty enrollment id"));
    }
    let key = match fields[2] {
        "-" => None,
        "target" => Some(TrialKey::Target),
        "nontarget" => Some(TrialKey::Nontarget),
        tok => return Err(parse_err(path, lineno, format!("unknown key token '{tok}'"))),
    };
    Ok(Trial {
        enroll_ids,
        test_id: fields[1].to_string(),
        key,
        partition_tag: opt_field(fields[3]),
    })
}

pub fn write_trials(trials: &TrialSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for t in &trials.trials {
        writeln!(w, "{}", format_trial(t))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<TrialSet> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut trials = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        trials.push(parse_trial(path, lineno, &fields)?);
    }
    Ok(TrialSet { trials })
}

pub fn write_scores(scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "#calibrated={}", scores.calibrated)?;
    for (t, s) in scores.trials.trials.iter().zip(&scores.scores) {
        writeln!(w, "{}\t{:.12e}", format_trial(t), s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty score file: missing '#calibrated=' header"))?;
    let header = header?;
    let calibrated: bool = header
        .strip_prefix("#calibrated=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(path, 1, format!("expected '#calibrated=<bool>', got '{header}'")))?;

    let mut trials = Vec::new();
    let mut scores = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        trials.push(parse_trial(path, lineno, &fields[..4])?);
        let s: f64 = fields[4]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad score '{}'", fields[4])))?;
        scores.push(s);
    }
    ScoreSet::new(TrialSet { trials }, scores, calibrated)
}
