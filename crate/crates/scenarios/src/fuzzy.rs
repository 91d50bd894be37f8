//! Record linkage between two publishers' user tables.
//!
//! Two rows match when their normalized emails are equal and their
//! normalized names are at most one edit apart.

use std::collections::HashMap;

use crate::table::{Column, Table};
use crate::{Result, ScenarioError};

/// Lowercase, trimmed; dots and `+tag` suffixes dropped from the local part.
pub fn normalize_email(s: &str) -> String {
    let s = s.trim().to_lowercase();
    match s.split_once('@') {
        Some((local, domain)) => {
            let local = local.split('+').next().unwrap_or("").replace('.', "");
            format!("{local}@{domain}")
        }
        None => s,
    }
}

/// Lowercase with runs of whitespace collapsed to one space.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Levenshtein distance is at most one.
pub fn within_one_edit(a: &str, b: &str) -> bool {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    if long.len() - short.len() > 1 {
        return false;
    }
    let prefix = short.iter().zip(long.iter()).take_while(|(x, y)| x == y).count();
    if prefix == short.len() {
        return true;
    }
    if short.len() == long.len() {
        short[prefix + 1..] == long[prefix + 1..]
    } else {
        short[prefix..] == long[prefix + 1..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct JoinStats {
    pub candidates: usize,
    pub matched: usize,
}

/// Inner join of `left` and `right` on (`email`, `name`). The output keeps
/// the left key columns, then every other column of both sides; a right
/// column whose name clashes with a left one gets a `right_` prefix.
/// Each left row pairs with its first matching right row.
pub fn fuzzy_join(left: &Table, right: &Table) -> Result<(Table, JoinStats)> {
    let (le, ln) = (left.text("email")?, left.text("name")?);
    let (re, rn) = (right.text("email")?, right.text("name")?);
    let mut index: HashMap<String, Vec<usize>> = HashMap::with_capacity(re.len());
    for (i, e) in re.iter().enumerate() {
        index.entry(normalize_email(e)).or_default().push(i);
    }
    let rn: Vec<String> = rn.iter().map(|n| normalize_name(n)).collect();
    let mut stats = JoinStats::default();
    let (mut li, mut ri) = (Vec::new(), Vec::new());
    for (i, e) in le.iter().enumerate() {
        let Some(cands) = index.get(&normalize_email(e)) else { continue };
        stats.candidates += cands.len();
        let name = normalize_name(&ln[i]);
        if let Some(j) = cands.iter().find(|j| within_one_edit(&name, &rn[**j])) {
            li.push(i);
            ri.push(*j);
        }
    }
    stats.matched = li.len();
    let (l, r) = (left.take(&li), right.take(&ri));
    let mut cols: Vec<(String, Column)> = Vec::new();
    for n in l.names() {
        cols.push((n.clone(), l.column(n)?.clone()));
    }
    for n in r.names() {
        if n == "email" || n == "name" {
            continue;
        }
        let out = if l.has(n) { format!("right_{n}") } else { n.clone() };
        cols.push((out, r.column(n)?.clone()));
    }
    let joined = Table::new(cols).map_err(|e| ScenarioError::Data(format!("join: {e}")))?;
    Ok((joined, stats))
}
