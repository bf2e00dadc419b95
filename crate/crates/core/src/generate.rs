//! Seeded synthetic events in the default schema, with truth-match labels.
//!
//! Per event: 0 to 4 reconstructed electrons with pt log-uniform in 5 to 120
//! GeV (stored in MeV), eta uniform in (-2.5, 2.5) and phi uniform in
//! (-pi, pi]; 0 to 6 jets; and truth particles. A fixed fraction of
//! electrons get a smeared truth electron (pdgId +-11) placed within
//! `MATCH_RADIUS` of them. Electrons are kept at least `ELECTRON_SPACING`
//! apart and every other truth particle at least `UNMATCHED_SPACING` from
//! every electron, so a cut at dR < 0.1 recovers the labels exactly.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{events_to_jsonl, RawEvent, RawRecord};
use crate::jagged::Scalar;
use crate::local::delta_r;

pub const MATCH_FRACTION: f64 = 0.8;
pub const MATCH_RADIUS: f64 = 0.05;
pub const ELECTRON_SPACING: f64 = 0.4;
pub const UNMATCHED_SPACING: f64 = 0.2;
const MAX_TRIES: usize = 100;

/// The truth particle constructed for one reconstructed electron, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MatchLabel {
    pub event: usize,
    pub electron: usize,
    pub truth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub events: Vec<RawEvent>,
    pub labels: Vec<MatchLabel>,
}

fn phi(rng: &mut ChaCha8Rng) -> f64 {
    PI - rng.gen::<f64>() * 2.0 * PI
}

fn wrap(phi: f64) -> f64 {
    if phi > PI {
        phi - 2.0 * PI
    } else if phi <= -PI {
        phi + 2.0 * PI
    } else {
        phi
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn record(fields: &[(&str, Scalar)]) -> RawRecord {
    fields.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn generate(seed: u64, n_events: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::with_capacity(n_events);
    let mut labels = Vec::new();
    for event in 0..n_events {
        let mut electrons: Vec<(f64, f64, f64)> = Vec::new();
        for _ in 0..rng.gen_range(0..=4) {
            for _ in 0..MAX_TRIES {
                let (eta, ph) = (rng.gen_range(-2.5..2.5), phi(&mut rng));
                if electrons.iter().all(|e| delta_r(e.1, e.2, eta, ph) > ELECTRON_SPACING) {
                    electrons.push((log_uniform(&mut rng, 5.0, 120.0) * 1000.0, eta, ph));
                    break;
                }
            }
        }

        // (record, index of the electron it was built for)
        let mut truth: Vec<(RawRecord, Option<usize>)> = Vec::new();
        for (i, &(pt, eta, ph)) in electrons.iter().enumerate() {
            if rng.gen::<f64>() >= MATCH_FRACTION {
                continue;
            }
            let r = MATCH_RADIUS * 0.9 * rng.gen::<f64>().sqrt();
            let a = rng.gen::<f64>() * 2.0 * PI;
            let pdg = if rng.gen::<bool>() { 11 } else { -11 };
            let smear = 1.0 + 0.05 * (rng.gen::<f64>() * 2.0 - 1.0);
            let rec = record(&[
                ("pdgId", Scalar::Int(pdg)),
                ("pt", Scalar::Float(pt * smear)),
                ("eta", Scalar::Float(eta + r * a.cos())),
                ("phi", Scalar::Float(wrap(ph + r * a.sin()))),
            ]);
            truth.push((rec, Some(i)));
        }
        for _ in 0..rng.gen_range(0..=3) {
            for _ in 0..MAX_TRIES {
                let (eta, ph) = (rng.gen_range(-4.0..4.0), phi(&mut rng));
                if electrons.iter().all(|e| delta_r(e.1, e.2, eta, ph) > UNMATCHED_SPACING) {
                    let pdg = *[11i64, -11, 22, 13, 211, -211].choose(&mut rng).unwrap();
                    let rec = record(&[
                        ("pdgId", Scalar::Int(pdg)),
                        ("pt", Scalar::Float(log_uniform(&mut rng, 1.0, 100.0) * 1000.0)),
                        ("eta", Scalar::Float(eta)),
                        ("phi", Scalar::Float(ph)),
                    ]);
                    truth.push((rec, None));
                    break;
                }
            }
        }
        truth.shuffle(&mut rng);

        let mut jets = Vec::new();
        for _ in 0..rng.gen_range(0..=6) {
            jets.push(record(&[
                ("pt", Scalar::Float(log_uniform(&mut rng, 20.0, 300.0) * 1000.0)),
                ("eta", Scalar::Float(rng.gen_range(-4.5..4.5))),
                ("phi", Scalar::Float(phi(&mut rng))),
                ("isGood", Scalar::Bool(rng.gen::<f64>() < 0.7)),
            ]));
        }

        for i in 0..electrons.len() {
            let t = truth.iter().position(|(_, owner)| *owner == Some(i));
            labels.push(MatchLabel { event, electron: i, truth: t });
        }
        let mut ev = RawEvent::default();
        let eles = electrons
            .iter()
            .map(|&(pt, eta, ph)| {
                record(&[("pt", Scalar::Float(pt)), ("eta", Scalar::Float(eta)), ("phi", Scalar::Float(ph))])
            })
            .collect();
        ev.collections.insert("Electrons".into(), eles);
        ev.collections.insert("Jets".into(), jets);
        ev.collections.insert("TruthParticles".into(), truth.into_iter().map(|(r, _)| r).collect());
        events.push(ev);
    }
    Sample { events, labels }
}

/// Sidecar CSV: `event,electron,truth` with an empty truth for unmatched.
pub fn labels_to_csv(labels: &[MatchLabel]) -> String {
    let mut s = String::from("event,electron,truth\n");
    for l in labels {
        let t = l.truth.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{t}", l.event, l.electron);
    }
    s
}

pub fn labels_from_csv(text: &str) -> Result<Vec<MatchLabel>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || format!("line {}: expected `event,electron,truth`", i + 1);
        let mut parts = line.split(',');
        let (Some(e), Some(x), Some(t), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let event = e.parse().map_err(|_| bad())?;
        let electron = x.parse().map_err(|_| bad())?;
        let truth = if t.is_empty() { None } else { Some(t.parse().map_err(|_| bad())?) };
        out.push(MatchLabel { event, electron, truth });
    }
    Ok(out)
}

/// Path of the label sidecar written next to an event file.
pub fn sidecar_path(events: &Path) -> PathBuf {
    let mut name = events.file_name().unwrap_or_default().to_os_string();
    name.push(".matches.csv");
    events.with_file_name(name)
}

/// Writes the events as JSON Lines to `path` and labels to the sidecar.
pub fn write_sample(sample: &Sample, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, events_to_jsonl(&sample.events))?;
    std::fs::write(sidecar_path(path), labels_to_csv(&sample.labels))
}
