//! Slow, direct reimplementation of the caption metrics. Captions are
//! whitespace-separated lowercase words; n-grams are joined strings kept in
//! plain vectors, LCS is found by enumerating candidate subsequences.

pub struct Item {
    pub id: &'static str,
    pub candidate: &'static str,
    pub references: Vec<&'static str>,
}

pub fn item(id: &'static str, candidate: &'static str, references: &[&'static str]) -> Item {
    Item {
        id,
        candidate,
        references: references.to_vec(),
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn grams(w: &[String], n: usize) -> Vec<String> {
    if w.len() < n {
        return Vec::new();
    }
    (0..=w.len() - n).map(|i| w[i..i + n].join(" ")).collect()
}

fn count(list: &[String], g: &str) -> usize {
    list.iter().filter(|x| *x == g).count()
}

fn distinct(list: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu4(items: &[Item]) -> f64 {
    let mut logp = 0.0;
    for n in 1..=4 {
        let mut matched = 0usize;
        let mut total = 0usize;
        for it in items {
            let cand = grams(&words(it.candidate), n);
            total += cand.len();
            for g in distinct(&cand) {
                let best = it.references.iter().map(|r| count(&grams(&words(r), n), &g)).max().unwrap();
                matched += count(&cand, &g).min(best);
            }
        }
        let num = if matched == 0 { 1e-9 } else { matched as f64 };
        let den = if total == 0 { 1.0 } else { total as f64 };
        logp += (num / den).ln() / 4.0;
    }
    let mut c = 0usize;
    let mut r = 0usize;
    for it in items {
        let cl = words(it.candidate).len();
        c += cl;
        let mut best = usize::MAX;
        let mut best_diff = usize::MAX;
        for rf in &it.references {
            let rl = words(rf).len();
            let d = if rl > cl { rl - cl } else { cl - rl };
            if d < best_diff || (d == best_diff && rl < best) {
                best = rl;
                best_diff = d;
            }
        }
        r += best;
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * logp.exp()
}

fn is_subsequence(sub: &[String], of: &[String]) -> bool {
    let mut j = 0;
    for w in of {
        if j < sub.len() && &sub[j] == w {
            j += 1;
        }
    }
    j == sub.len()
}

fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i].clone()).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(it: &Item) -> f64 {
    let cand = words(it.candidate);
    let mut best = 0.0f64;
    for r in &it.references {
        let rw = words(r);
        let l = brute_lcs(&cand, &rw) as f64;
        if l > 0.0 {
            let p = l / cand.len() as f64;
            let rc = l / rw.len() as f64;
            let b2 = 1.2f64 * 1.2;
            best = best.max((1.0 + b2) * p * rc / (rc + b2 * p));
        }
    }
    best
}

pub fn rouge_corpus(items: &[Item]) -> f64 {
    items.iter().map(rouge_l).sum::<f64>() / items.len() as f64
}

fn doc_freq(items: &[Item], g: &str, n: usize) -> usize {
    items
        .iter()
        .filter(|it| it.references.iter().any(|r| grams(&words(r), n).iter().any(|x| x == g)))
        .count()
}

fn vector(sentence: &str, n: usize, items: &[Item]) -> Vec<(String, f64)> {
    let list = grams(&words(sentence), n);
    distinct(&list)
        .into_iter()
        .map(|g| {
            let df = doc_freq(items, &g, n).max(1) as f64;
            let w = count(&list, &g) as f64 * (items.len() as f64 / df).ln();
            (g, w)
        })
        .collect()
}

fn norm(v: &[(String, f64)]) -> f64 {
    v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

pub fn cider_items(items: &[Item]) -> Vec<f64> {
    items
        .iter()
        .map(|it| {
            let mut per_ref = 0.0;
            for r in &it.references {
                let delta = words(it.candidate).len() as f64 - words(r).len() as f64;
                let pen = (-delta * delta / 72.0).exp();
                let mut s = 0.0;
                for n in 1..=4 {
                    let cv = vector(it.candidate, n, items);
                    let rv = vector(r, n, items);
                    let (cn, rn) = (norm(&cv), norm(&rv));
                    if cn == 0.0 || rn == 0.0 {
                        continue;
                    }
                    let mut dot = 0.0;
                    for (g, w) in &cv {
                        for (h, rw) in &rv {
                            if g == h {
                                dot += w.min(*rw) * rw;
                            }
                        }
                    }
                    s += dot / (cn * rn) * pen;
                }
                per_ref += s / 4.0;
            }
            10.0 * per_ref / it.references.len() as f64
        })
        .collect()
}

pub fn cider(items: &[Item]) -> f64 {
    let v = cider_items(items);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Ten hand-built corpora, each with at least two videos.
pub fn fixtures() -> Vec<(&'static str, Vec<Item>)> {
    vec![
        (
            "identical pairs",
            vec![
                item("v1", "a man is riding a horse", &["a man is riding a horse"]),
                item("v2", "two dogs play in the snow", &["two dogs play in the snow"]),
            ],
        ),
        (
            "clipped repeated unigram",
            vec![
                item("v1", "the the the the the the the", &["the cat is on the mat"]),
                item("v2", "a bird flies over water", &["a bird flies over the water"]),
            ],
        ),
        (
            "short prefix candidate",
            vec![
                item("v1", "a woman is slicing", &["a woman is slicing an onion slowly"]),
                item("v2", "a cat is sleeping on a sofa", &["a cat is sleeping on a sofa"]),
            ],
        ),
        (
            "hand lcs",
            vec![
                item("v1", "a b c d", &["a c d e"]),
                item("v2", "x y z w", &["x y w z"]),
            ],
        ),
        (
            "disjoint",
            vec![
                item("v1", "red car drives fast", &["a girl sings a song"]),
                item("v2", "a boy kicks a ball", &["a boy kicks a ball hard"]),
            ],
        ),
        (
            "multiple references",
            vec![
                item(
                    "v1",
                    "a man is playing a guitar",
                    &["a man plays guitar", "someone is playing a guitar on stage", "a person is strumming"],
                ),
                item("v2", "people are dancing", &["a group of people dance", "people are dancing at a party"]),
                item("v3", "a chef cooks food", &["a chef is cooking food in a kitchen"]),
            ],
        ),
        (
            "repeated n-grams",
            vec![
                item("v1", "go go go go go", &["go go stop go go go"]),
                item("v2", "stop and go and stop", &["go and stop and go"]),
            ],
        ),
        (
            "duplicated corpus",
            vec![
                item("v1", "a dog runs in the park", &["a dog is running in a park"]),
                item("v2", "a dog runs in the park", &["a dog is running in a park"]),
                item("v3", "a woman cuts bread", &["a lady is cutting bread"]),
                item("v4", "a woman cuts bread", &["a lady is cutting bread"]),
            ],
        ),
        (
            "tiny captions",
            vec![
                item("v1", "cat", &["cat sleeps"]),
                item("v2", "dog barks loudly", &["dog barks"]),
            ],
        ),
        (
            "four video corpus",
            vec![
                item("v1", "a man is walking on the street", &["a man walks down the street", "a person walking"]),
                item("v2", "a woman is swimming in a pool", &["a woman swims in the pool"]),
                item("v3", "a dog is jumping over a fence", &["a dog jumps a fence", "the dog leaps over the fence"]),
                item("v4", "a horse is running in a field", &["a horse runs across a field"]),
            ],
        ),
    ]
}
