//! JSON-Lines persistence. The first line is a header; every later line is
//! one record. Floats are written in shortest round-trip form, so a load
//! returns bit-identical values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Interaction, InteractionSet, SetKind, Trajectory};
use crate::envs::EnvId;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    env: EnvId,
    version: u32,
    action_count: usize,
    kind: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    s: Vec<f64>,
    a: usize,
    sn: Vec<f64>,
    run: usize,
    v: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoLine {
    states: Vec<Vec<f64>>,
    ret: f64,
    success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<usize>>,
}

fn kind_name(kind: SetKind) -> &'static str {
    match kind {
        SetKind::Pre => "pre",
        SetKind::Pos => "pos",
        SetKind::Composed => "composed",
    }
}

fn write_lines<T: Serialize>(
    path: &Path,
    header: &Header,
    lines: impl Iterator<Item = T>,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer(&mut w, header).map_err(|e| Error::Integrity(e.to_string()))?;
    w.write_all(b"\n").map_err(io)?;
    for l in lines {
        // non-finite floats are the only way this fails
        serde_json::to_writer(&mut w, &l).map_err(|e| Error::Integrity(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads the header and yields `(line number, text)` for each record.
fn read_lines(path: &Path) -> Result<(Header, Vec<(usize, String)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, l) in BufReader::new(file).lines().enumerate() {
        let l = l.map_err(|e| Error::io(path, e))?;
        if !l.trim().is_empty() {
            lines.push((i + 1, l));
        }
    }
    let mut it = lines.into_iter();
    let (n, first) = it.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header: Header = parse(n, &first)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Parse {
            line: n,
            msg: format!("unsupported format version {}", header.version),
        });
    }
    Ok((header, it.collect()))
}

fn parse<T: for<'de> Deserialize<'de>>(line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        msg: e.to_string(),
    })
}

pub fn save(set: &InteractionSet, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        env: set.env,
        version: FORMAT_VERSION,
        action_count: set.action_count,
        kind: kind_name(set.kind).into(),
    };
    let lines = set.interactions.iter().map(|i| Line {
        s: i.s.clone(),
        a: i.action,
        sn: i.s_next.clone(),
        run: i.run_id,
        v: set.run_success(i.run_id) as u8,
    });
    write_lines(path.as_ref(), &header, lines)
}

pub fn load(path: impl AsRef<Path>) -> Result<InteractionSet> {
    let (header, lines) = read_lines(path.as_ref())?;
    let kind = match header.kind.as_str() {
        "pre" => SetKind::Pre,
        "pos" => SetKind::Pos,
        "composed" => SetKind::Composed,
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("'{other}' is not an interaction set kind"),
            })
        }
    };
    let width = header.env.observation_dim();
    let mut set = InteractionSet::new(header.env, kind);
    set.action_count = header.action_count;
    let mut flags = Vec::new();
    for (n, text) in lines {
        let l: Line = parse(n, &text)?;
        if l.s.len() != width || l.sn.len() != width {
            return Err(Error::Parse {
                line: n,
                msg: format!("state width {} / {}, expected {width}", l.s.len(), l.sn.len()),
            });
        }
        if l.a >= set.action_count || l.v > 1 {
            return Err(Error::Parse {
                line: n,
                msg: format!("action {} or flag {} out of range", l.a, l.v),
            });
        }
        flags.push((l.run, l.v == 1));
        set.interactions.push(Interaction {
            s: l.s,
            action: l.a,
            s_next: l.sn,
            run_id: l.run,
        });
    }
    set.reindex_runs(&flags);
    Ok(set)
}

/// Writes demonstrations; action labels are written only if present.
pub fn save_demos(env: EnvId, demos: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    if let Some(d) = demos.iter().find(|d| d.env != env) {
        return Err(Error::Config(format!(
            "demonstration for {} in a {env} file",
            d.env
        )));
    }
    let header = Header {
        env,
        version: FORMAT_VERSION,
        action_count: env.action_count(),
        kind: "demos".into(),
    };
    let lines = demos.iter().map(|d| DemoLine {
        states: d.states.clone(),
        ret: d.episode_return,
        success: d.success,
        a: d.actions.clone(),
    });
    write_lines(path.as_ref(), &header, lines)
}

pub fn load_demos(path: impl AsRef<Path>) -> Result<(EnvId, Vec<Trajectory>)> {
    let (header, lines) = read_lines(path.as_ref())?;
    if header.kind != "demos" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected a demos file, found kind '{}'", header.kind),
        });
    }
    let width = header.env.observation_dim();
    let mut out = Vec::with_capacity(lines.len());
    for (n, text) in lines {
        let l: DemoLine = parse(n, &text)?;
        if l.states.is_empty() || l.states.iter().any(|s| s.len() != width) {
            return Err(Error::Parse {
                line: n,
                msg: format!("trajectory states must be non-empty with width {width}"),
            });
        }
        out.push(Trajectory {
            env: header.env,
            states: l.states,
            actions: l.a,
            episode_return: l.ret,
            success: l.success,
        });
    }
    Ok((header.env, out))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_set(n: usize, seed: u64) -> InteractionSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = InteractionSet::new(EnvId::CartPole, SetKind::Pos);
        let mut left = n;
        while left > 0 {
            let len = rng.gen_range(1..=left.min(40));
            let run = (0..len)
                .map(|_| Interaction {
                    s: (0..4).map(|_| rng.gen::<f64>() * 1e3 - 5e2).collect(),
                    action: rng.gen_range(0..2),
                    s_next: (0..4).map(|_| rng.gen::<f64>().powi(7)).collect(),
                    run_id: 0,
                })
                .collect();
            set.push_run(run, rng.gen_bool(0.5), 0.0);
            left -= len;
        }
        set
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        let mut set = random_set(1000, 1);
        set.interactions[0].s[0] = f64::MIN_POSITIVE;
        set.interactions[0].s[1] = -0.1 - 0.2;
        save(&set, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.len(), 1000);
        for (a, b) in set.interactions.iter().zip(&back.interactions) {
            assert_eq!(a, b);
            for (x, y) in a.s.iter().zip(&b.s) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (a, b) in set.runs.iter().zip(&back.runs) {
            assert_eq!((a.run_id, &a.indices, a.success), (b.run_id, &b.indices, b.success));
        }
    }

    #[test]
    fn empty_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let set = InteractionSet::new(EnvId::Maze(5), SetKind::Pre);
        save(&set, &path).unwrap();
        let back = load(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!((back.env, back.kind, back.action_count), (EnvId::Maze(5), SetKind::Pre, 4));
    }

    #[test]
    fn truncated_record_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        save(&random_set(5, 2), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = text.trim_end().len() - 10;
        std::fs::write(&path, &text[..cut]).unwrap();
        match load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn demos_round_trip_without_actions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        let demos = vec![Trajectory {
            env: EnvId::MountainCar,
            states: vec![vec![-0.5, 0.0], vec![-0.5012, -0.0012]],
            actions: None,
            episode_return: -1.0,
            success: false,
        }];
        save_demos(EnvId::MountainCar, &demos, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.lines().nth(1).unwrap().contains("\"a\""));
        let (env, back) = load_demos(&path).unwrap();
        assert_eq!(env, EnvId::MountainCar);
        assert_eq!(back, demos);
        assert!(load(&path).is_err());
    }
}
