//! Seeded synthetic data. Every generator is a pure function of its seed
//! and size arguments.

use std::io::Write;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, LogNormal, StandardNormal};

fn rng(seed: u64, stream: u64) -> StdRng {
    StdRng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn normal(r: &mut StdRng) -> f64 {
    StandardNormal.sample(r)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// ---- fraud ----

/// Number of anonymized `V` features in a transaction row.
pub const FRAUD_FEATURES: usize = 10;
const FRAUD_WEIGHTS: [f64; FRAUD_FEATURES] = [2.0, -1.5, 1.0, 0.0, 0.8, -0.6, 0.0, 0.4, 0.0, -0.3];

/// Column names of a transaction table: `Time, V1..V10, Amount, Class`.
pub fn fraud_columns() -> Vec<String> {
    let mut c = vec!["Time".to_string()];
    c.extend((1..=FRAUD_FEATURES).map(|i| format!("V{i}")));
    c.extend(["Amount".to_string(), "Class".to_string()]);
    c
}

/// Model features of a transaction table (everything except `Time` and the label).
pub fn fraud_features() -> Vec<String> {
    let mut c: Vec<String> = (1..=FRAUD_FEATURES).map(|i| format!("V{i}")).collect();
    c.push("Amount".into());
    c
}

fn fraud_row(r: &mut StdRng, t: usize, shift: f64, amount: &LogNormal<f64>, out: &mut Vec<u8>) {
    let v: [f64; FRAUD_FEATURES] = std::array::from_fn(|_| normal(r) + shift);
    let z = -1.6 + v.iter().zip(FRAUD_WEIGHTS).map(|(a, w)| a * w).sum::<f64>();
    let class = u8::from(r.gen_bool(sigmoid(z)));
    let amt: f64 = amount.sample(r);
    write!(out, "{t}").expect("vec write");
    for x in v {
        write!(out, ",{x:.4}").expect("vec write");
    }
    writeln!(out, ",{amt:.2},{class}").expect("vec write");
}

fn fraud_header() -> Vec<u8> {
    let mut h = fraud_columns().join(",").into_bytes();
    h.push(b'\n');
    h
}

/// Kaggle-style card transactions of one bank. Labels follow one planted
/// logistic model shared by all banks; banks differ by a feature shift.
pub fn fraud_csv(seed: u64, bank: u64, rows: usize) -> Vec<u8> {
    let mut r = rng(seed, 100 + bank);
    let shift = 0.1 * bank as f64;
    let amount = LogNormal::new(3.0, 1.0).expect("valid lognormal");
    let mut out = fraud_header();
    for t in 0..rows {
        fraud_row(&mut r, t, shift, &amount, &mut out);
    }
    out
}

/// As [`fraud_csv`], with as many rows as fit in `bytes` (at least one).
pub fn fraud_csv_of_size(seed: u64, bank: u64, bytes: usize) -> Vec<u8> {
    let mut r = rng(seed, 100 + bank);
    let shift = 0.1 * bank as f64;
    let amount = LogNormal::new(3.0, 1.0).expect("valid lognormal");
    let mut out = Vec::with_capacity(bytes + 256);
    out.extend(fraud_header());
    let mut t = 0;
    while out.len() < bytes || t == 0 {
        fraud_row(&mut r, t, shift, &amount, &mut out);
        t += 1;
    }
    out
}

// ---- healthcare ----

/// Planted causal effect of smoking on HbA1c.
pub const TRUE_EFFECT: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct Person {
    pub cpr: String,
    pub depression: f64,
    pub age: f64,
    pub smoking: f64,
    pub hba1c: f64,
}

/// Unique CPR-style identifier for person `i`.
pub fn cpr(i: usize) -> String {
    let (serial, k) = (i % 10_000, i / 10_000);
    format!("{:02}{:02}{:02}-{serial:04}", k % 28 + 1, (k / 28) % 12 + 1, (k / 336) % 100)
}

/// Linear-Gaussian population where depression confounds smoking and HbA1c:
/// `smoking = 0.8 dep + 0.02 age + e1`, `hba1c = 0.4 smoking + 1.5 dep + 0.01 age + e2`.
pub fn population(seed: u64, n: usize) -> Vec<Person> {
    let mut r = rng(seed, 200);
    (0..n)
        .map(|i| {
            let depression = normal(&mut r);
            let age = r.gen_range(20.0..80.0f64).round();
            let smoking = 0.8 * depression + 0.02 * age + normal(&mut r);
            let hba1c = TRUE_EFFECT * smoking + 1.5 * depression + 0.01 * age + 0.5 * normal(&mut r);
            Person { cpr: cpr(i), depression, age, smoking, hba1c }
        })
        .collect()
}

/// Registry table: `CPR, depression, age` for everyone.
pub fn registry_csv(people: &[Person]) -> Vec<u8> {
    let mut out = b"CPR,depression,age\n".to_vec();
    for p in people {
        writeln!(out, "{},{},{}", p.cpr, p.depression, p.age).expect("vec write");
    }
    out
}

/// A researcher's table: `CPR, smoking, hba1c` for the people at `idx`.
/// Floats are written with round-trip precision.
pub fn study_csv(people: &[Person], idx: &[usize]) -> Vec<u8> {
    let mut out = b"CPR,smoking,hba1c\n".to_vec();
    for i in idx {
        let p = &people[*i];
        writeln!(out, "{},{},{}", p.cpr, p.smoking, p.hba1c).expect("vec write");
    }
    out
}

/// `n` distinct indices below `len`, in shuffled order.
pub fn sample_indices(seed: u64, stream: u64, len: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng(seed, stream));
    idx.truncate(n);
    idx
}

// ---- ad matching ----

const FIRST: [&str; 12] = ["ann", "bo", "cy", "dana", "eli", "fay", "gus", "hana", "ivo", "jun", "kai", "lea"];
const LAST: [&str; 10] = ["lee", "ng", "smith", "berg", "okafor", "rossi", "silva", "kim", "novak", "haas"];
const DOMAINS: [&str; 4] = ["mail.com", "inbox.org", "post.net", "web.dk"];

fn perturb_email(r: &mut StdRng, e: &str) -> String {
    match r.gen_range(0..5) {
        0 => e.to_uppercase(),
        1 => {
            let (l, d) = e.split_once('@').expect("generated email");
            format!("{l}+yt@{d}")
        }
        2 => format!("  {e} "),
        _ => e.to_string(),
    }
}

fn typo(r: &mut StdRng, s: &str) -> String {
    let mut c: Vec<char> = s.chars().collect();
    let i = r.gen_range(0..c.len());
    c[i] = if c[i] == 'x' { 'y' } else { 'x' };
    c.into_iter().collect()
}

/// Two publishers' user tables of `rows` rows each; a share `overlap` of
/// the second's users also appear in the first, with noisy keys.
///
/// Facebook: `name, email, age, married, likes_games`.
/// YouTube: `name, email, watch_hours, subscriptions, clicked`.
pub fn ads_csv(seed: u64, rows: usize, overlap: f64) -> (Vec<u8>, Vec<u8>) {
    let mut r = rng(seed, 300);
    struct User {
        name: String,
        email: String,
        age: f64,
        married: u8,
        games: u8,
    }
    let total = rows + rows - (rows as f64 * overlap) as usize;
    let users: Vec<User> = (0..total)
        .map(|i| {
            let (f, l) = (FIRST[r.gen_range(0..FIRST.len())], LAST[r.gen_range(0..LAST.len())]);
            User {
                name: format!("{} {}", capitalize(f), capitalize(l)),
                email: format!("{f}.{l}{i}@{}", DOMAINS[i % DOMAINS.len()]),
                age: r.gen_range(18..70) as f64,
                married: u8::from(r.gen_bool(0.45)),
                games: u8::from(r.gen_bool(0.3)),
            }
        })
        .collect();
    let mut fb = b"name,email,age,married,likes_games\n".to_vec();
    for u in &users[..rows] {
        writeln!(fb, "{},{},{},{},{}", u.name, u.email, u.age, u.married, u.games).expect("vec write");
    }
    let mut yt = b"name,email,watch_hours,subscriptions,clicked\n".to_vec();
    for u in &users[total - rows..] {
        let name = match r.gen_range(0..20) {
            0 | 1 => typo(&mut r, &u.name),
            2 => "Someone Else".to_string(),
            _ => u.name.to_lowercase(),
        };
        let watch: f64 = (r.gen_range(0.0..20.0f64) * 10.0).round() / 10.0;
        let subs = r.gen_range(0..50);
        let z = -2.0 + 0.03 * (u.age - 40.0) + 1.8 * f64::from(u.games) + 0.12 * watch - 0.5 * f64::from(u.married);
        let clicked = u8::from(r.gen_bool(sigmoid(z)));
        writeln!(yt, "{},{},{watch},{subs},{clicked}", name, perturb_email(&mut r, &u.email)).expect("vec write");
    }
    (fb, yt)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

// ---- canonical patterns ----

/// Cell measurements of one network provider: `cell_id, x, y, load`.
pub fn cells_csv(seed: u64, provider: u64, rows: usize) -> Vec<u8> {
    let mut r = rng(seed, 400 + provider);
    let mut out = b"cell_id,x,y,load\n".to_vec();
    for i in 0..rows {
        let (x, y): (f64, f64) = (r.gen_range(0.0..100.0), r.gen_range(0.0..100.0));
        writeln!(out, "p{provider}-{i},{x:.3},{y:.3},{:.2}", r.gen_range(0.0..1.0f64)).expect("vec write");
    }
    out
}

/// Labelled rows `x1..x{features}, label` from one planted logistic model.
/// `label_noise` is the share of labels replaced by coin flips.
pub fn labelled_csv(seed: u64, stream: u64, rows: usize, features: usize, label_noise: f64) -> Vec<u8> {
    let mut wr = rng(seed, 500);
    let w: Vec<f64> = (0..features).map(|_| normal(&mut wr) * 1.5).collect();
    let mut r = rng(seed, 500 + stream);
    let names: Vec<String> = (1..=features).map(|i| format!("x{i}")).collect();
    let mut out = format!("{},label\n", names.join(",")).into_bytes();
    for _ in 0..rows {
        let x: Vec<f64> = (0..features).map(|_| normal(&mut r)).collect();
        let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        let y = if r.gen_bool(label_noise) { r.gen_bool(0.5) } else { r.gen_bool(sigmoid(3.0 * z)) };
        let cells: Vec<String> = x.iter().map(|v| format!("{v:.4}")).collect();
        writeln!(out, "{},{}", cells.join(","), u8::from(y)).expect("vec write");
    }
    out
}

const WORDS: [&str; 16] = [
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "see", "you", "soon", "later", "good", "night",
    "morning", "friend",
];

/// Typed messages of one keyboard user, one per line.
pub fn keyboard_text(seed: u64, user: u64, lines: usize) -> String {
    let mut r = rng(seed, 600 + user);
    let mut out = String::new();
    for _ in 0..lines {
        let n = r.gen_range(3..8);
        let line: Vec<&str> = (0..n).map(|_| WORDS[r.gen_range(0..WORDS.len())]).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
