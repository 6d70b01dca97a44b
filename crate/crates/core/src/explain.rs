//! Human-readable provenance for a single triplet.

use std::fmt::Write;

use crate::config::suggest;
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Triplet};

fn key_string(t: &Triplet) -> String {
    format!("({}, {}, {})", t.topic, t.property, t.vehicle)
}

fn group_lines(out: &mut String, group: &[&Triplet], label: impl Fn(&Triplet) -> String) -> f64 {
    let mut total = 0.0;
    for g in group {
        let w = g.weight();
        total += w;
        let _ = writeln!(
            out,
            "      {}: N = {}, P = {}, N*P = {}",
            label(g),
            g.frequency,
            g.plausibility,
            w
        );
    }
    total
}

/// Every stored field of (t,p,v) with the formulas evaluated.
pub fn explain(kb: &KnowledgeBase, topic: &str, property: &str, vehicle: &str) -> Result<String> {
    let Some(t) = kb.get(topic, property, vehicle) else {
        let wanted = format!("({topic}, {property}, {vehicle})").to_lowercase();
        let keys: Vec<String> = kb.triplets().iter().map(key_string).collect();
        let near = suggest(&wanted, keys.iter().map(String::as_str), 3);
        let hint = if near.is_empty() {
            String::new()
        } else {
            format!("; nearest: {}", near.join(", "))
        };
        return Err(Error::NotFound(format!("triplet {wanted}{hint}")));
    };
    let mut out = String::new();
    let _ = writeln!(out, "triplet {}", key_string(t));
    let scores: Vec<String> = t.instance_scores.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "  frequency N = {}", t.frequency);
    let _ = writeln!(out, "  instance scores: {}", scores.join(", "));
    let factors: Vec<String> = t.instance_scores.iter().map(|s| format!("(1 - {s})")).collect();
    let _ = writeln!(
        out,
        "  plausibility P = 1 - {} = {}",
        factors.join(" * "),
        t.plausibility
    );
    let _ = writeln!(out, "  weight N*P = {}", t.weight());

    let tv = kb.query_tv(&t.topic, &t.vehicle);
    let _ = writeln!(
        out,
        "  T(p|t,v) over the {} properties of ({}, {}):",
        tv.len(),
        t.topic,
        t.vehicle
    );
    let total = group_lines(&mut out, &tv, |g| g.property.clone());
    match t.typ_p_given_tv {
        Some(x) => {
            let _ = writeln!(out, "    = {} / {} = {}", t.weight(), total, x);
        }
        None => {
            let _ = writeln!(out, "    not computed (knowledge base not finalized)");
        }
    }

    let p = kb.query_p(&t.property);
    let _ = writeln!(
        out,
        "  T(t,v|p) over the {} pairs with property {}:",
        p.len(),
        t.property
    );
    let total = group_lines(&mut out, &p, |g| format!("({}, {})", g.topic, g.vehicle));
    match t.typ_tv_given_p {
        Some(x) => {
            let _ = writeln!(out, "    = {} / {} = {}", t.weight(), total, x);
        }
        None => {
            let _ = writeln!(out, "    not computed (knowledge base not finalized)");
        }
    }
    Ok(out)
}
