//! Interaction log ingestion, binarization, the item-degree filter and
//! per-user train/test splits.
//!
//! Raw logs are `user SEP item [SEP rating] [SEP timestamp]` lines. Anything
//! observed becomes a positive; ratings and timestamps are parsed (so a bad
//! field marks the line malformed) but otherwise dropped after binarization.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Tab,
    Comma,
}

impl Delimiter {
    pub fn as_char(self) -> char {
        match self {
            Delimiter::Tab => '\t',
            Delimiter::Comma => ',',
        }
    }
}

impl FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab" | "tsv" | "\t" => Ok(Delimiter::Tab),
            "comma" | "csv" | "," => Ok(Delimiter::Comma),
            other => Err(Error::InvalidParameter(format!(
                "unknown delimiter {other:?} (expected tab or comma)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Default)]
pub struct RawInteractions {
    pub records: Vec<RawRecord>,
    /// Non-blank lines that could not be parsed.
    pub malformed: usize,
}

fn parse_line(line: &str, delim: Delimiter) -> Option<RawRecord> {
    let mut fields = line.split(delim.as_char()).map(str::trim);
    let user = fields.next().filter(|s| !s.is_empty())?;
    let item = fields.next().filter(|s| !s.is_empty())?;
    let rating = match fields.next() {
        Some(f) if !f.is_empty() => Some(f.parse::<f64>().ok()?),
        _ => None,
    };
    let timestamp = match fields.next() {
        Some(f) if !f.is_empty() => Some(f.parse::<i64>().ok()?),
        _ => None,
    };
    if fields.next().is_some() {
        return None;
    }
    Some(RawRecord {
        user: user.to_string(),
        item: item.to_string(),
        rating,
        timestamp,
    })
}

/// Parses interaction text. Blank lines and `#` comments are ignored.
pub fn parse_interactions(text: &str, delim: Delimiter) -> RawInteractions {
    let mut out = RawInteractions::default();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_line(line, delim) {
            Some(rec) => out.records.push(rec),
            None => out.malformed += 1,
        }
    }
    out
}

pub fn load_interactions(path: &Path, delim: Delimiter) -> Result<RawInteractions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw = parse_interactions(&text, delim);
    if raw.records.is_empty() {
        if raw.malformed > 0 {
            return Err(Error::AllMalformed {
                path: path.to_path_buf(),
                lines: raw.malformed,
            });
        }
        log::warn!("{}: no interactions found", path.display());
    } else if raw.malformed > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), raw.malformed);
    }
    Ok(raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabKind {
    User,
    Item,
}

impl VocabKind {
    fn as_str(self) -> &'static str {
        match self {
            VocabKind::User => "user",
            VocabKind::Item => "item",
        }
    }
}

const VOCAB_MAGIC: &str = "#cosam-vocab";
const VOCAB_VERSION: &str = "v1";

/// Bijection between external tokens and dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    kind: VocabKind,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new(kind: VocabKind) -> Self {
        Vocab {
            kind,
            tokens: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of `token`, assigning the next free one on first sight.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{VOCAB_MAGIC} {VOCAB_VERSION} kind={} count={}\n",
            self.kind.as_str(),
            self.tokens.len()
        );
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(&format!("{i}\t{t}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Vocab> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Vocab("missing header line".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(VOCAB_MAGIC) {
            return Err(Error::Vocab(format!("bad header {header:?}")));
        }
        match parts.next() {
            Some(VOCAB_VERSION) => {}
            other => {
                return Err(Error::Vocab(format!(
                    "unsupported version {:?} (expected {VOCAB_VERSION})",
                    other.unwrap_or("")
                )))
            }
        }
        let mut kind = None;
        let mut count = None;
        for kv in parts {
            match kv.split_once('=') {
                Some(("kind", "user")) => kind = Some(VocabKind::User),
                Some(("kind", "item")) => kind = Some(VocabKind::Item),
                Some(("count", c)) => {
                    count = Some(
                        c.parse::<usize>()
                            .map_err(|_| Error::Vocab(format!("bad count {c:?}")))?,
                    )
                }
                _ => return Err(Error::Vocab(format!("bad header field {kv:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Vocab("header lacks kind".into()))?;
        let count = count.ok_or_else(|| Error::Vocab("header lacks count".into()))?;

        let mut vocab = Vocab::new(kind);
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (idx, token) = line
                .split_once('\t')
                .ok_or_else(|| Error::Vocab(format!("line {}: expected index<TAB>token", lineno + 2)))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Vocab(format!("line {}: bad index {idx:?}", lineno + 2)))?;
            if idx != vocab.len() {
                return Err(Error::Vocab(format!(
                    "line {}: index {idx} out of order (expected {})",
                    lineno + 2,
                    vocab.len()
                )));
            }
            if token.is_empty() {
                return Err(Error::Vocab(format!("line {}: empty token", lineno + 2)));
            }
            if vocab.get(token).is_some() {
                return Err(Error::Vocab(format!("duplicate token {token:?}")));
            }
            vocab.intern(token);
        }
        if vocab.len() != count {
            return Err(Error::Vocab(format!(
                "header count {count} but {} entries",
                vocab.len()
            )));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_text(&text)
    }
}

/// Binary implicit-feedback matrix with its token vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitDataset {
    pub n: usize,
    pub m: usize,
    /// Distinct `(user, item)` positives, sorted.
    pub pairs: Vec<(u32, u32)>,
    pub user_vocab: Vocab,
    pub item_vocab: Vocab,
}

impl ImplicitDataset {
    pub fn positives_per_user(&self) -> Vec<Vec<u32>> {
        group_by_user(self.n, &self.pairs)
    }

    /// Re-expresses the dataset as raw records, in pair order.
    pub fn to_raw(&self) -> RawInteractions {
        let records = self
            .pairs
            .iter()
            .map(|&(u, i)| RawRecord {
                user: self.user_vocab.token(u).unwrap_or_default().to_string(),
                item: self.item_vocab.token(i).unwrap_or_default().to_string(),
                rating: None,
                timestamp: None,
            })
            .collect();
        RawInteractions {
            records,
            malformed: 0,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::new(self.n, self.m, self.pairs.len())
    }
}

pub(crate) fn group_by_user(n: usize, pairs: &[(u32, u32)]) -> Vec<Vec<u32>> {
    let mut rows = vec![Vec::new(); n];
    for &(u, i) in pairs {
        rows[u as usize].push(i);
    }
    for r in &mut rows {
        r.sort_unstable();
    }
    rows
}

/// Collapses duplicates, drops items with fewer than `min_item_degree`
/// distinct users, then drops users left without positives. Dense indices
/// follow first appearance among the surviving records.
pub fn binarize_and_filter(raw: &RawInteractions, min_item_degree: usize) -> Result<ImplicitDataset> {
    if min_item_degree < 1 {
        return Err(Error::InvalidParameter("min_item_degree must be >= 1".into()));
    }
    let mut users = Vocab::new(VocabKind::User);
    let mut items = Vocab::new(VocabKind::Item);
    let mut seen = HashSet::new();
    let mut distinct = Vec::new();
    for rec in &raw.records {
        let pair = (users.intern(&rec.user), items.intern(&rec.item));
        if seen.insert(pair) {
            distinct.push(pair);
        }
    }

    let mut item_degree = vec![0usize; items.len()];
    for &(_, i) in &distinct {
        item_degree[i as usize] += 1;
    }

    let mut user_vocab = Vocab::new(VocabKind::User);
    let mut item_vocab = Vocab::new(VocabKind::Item);
    let mut pairs = Vec::new();
    for &(u, i) in &distinct {
        if item_degree[i as usize] < min_item_degree {
            continue;
        }
        let nu = user_vocab.intern(users.token(u).expect("interned"));
        let ni = item_vocab.intern(items.token(i).expect("interned"));
        pairs.push((nu, ni));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyAfterFilter { min_item_degree });
    }
    pairs.sort_unstable();
    Ok(ImplicitDataset {
        n: user_vocab.len(),
        m: item_vocab.len(),
        pairs,
        user_vocab,
        item_vocab,
    })
}

/// Train/test partition of an [`ImplicitDataset`] sharing its index space.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub n: usize,
    pub m: usize,
    pub train: Vec<(u32, u32)>,
    pub test: Vec<(u32, u32)>,
    pub user_vocab: Vocab,
    pub item_vocab: Vocab,
    pub seed: u64,
}

impl SplitDataset {
    pub fn train_by_user(&self) -> Vec<Vec<u32>> {
        group_by_user(self.n, &self.train)
    }

    pub fn test_by_user(&self) -> Vec<Vec<u32>> {
        group_by_user(self.n, &self.test)
    }

    /// SHA-256 over the serialized user and item vocabularies, hex encoded.
    pub fn fingerprint(&self) -> String {
        vocab_fingerprint(&self.user_vocab, &self.item_vocab)
    }
}

pub fn vocab_fingerprint(users: &Vocab, items: &Vocab) -> String {
    let mut h = Sha256::new();
    h.update(users.to_text().as_bytes());
    h.update(items.to_text().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn shuffled_positives(seed: u64, user: u32, items: &[u32]) -> Vec<u32> {
    let mut v = items.to_vec();
    let mut rng = rng::stream(seed, Purpose::Split, 0, user);
    v.shuffle(&mut rng);
    v
}

fn assemble(ds: &ImplicitDataset, seed: u64, train: Vec<(u32, u32)>, test: Vec<(u32, u32)>) -> SplitDataset {
    let (mut train, mut test) = (train, test);
    train.sort_unstable();
    test.sort_unstable();
    SplitDataset {
        n: ds.n,
        m: ds.m,
        train,
        test,
        user_vocab: ds.user_vocab.clone(),
        item_vocab: ds.item_vocab.clone(),
        seed,
    }
}

/// Per user, moves `round(test_fraction * |X_u|)` positives to test, keeping
/// at least one in train.
pub fn split_holdout(ds: &ImplicitDataset, test_fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut train = Vec::with_capacity(ds.pairs.len());
    let mut test = Vec::new();
    for (u, items) in ds.positives_per_user().into_iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let u = u as u32;
        let order = shuffled_positives(seed, u, &items);
        let n_test = ((test_fraction * items.len() as f64).round() as usize).min(items.len() - 1);
        test.extend(order[..n_test].iter().map(|&i| (u, i)));
        train.extend(order[n_test..].iter().map(|&i| (u, i)));
    }
    Ok(assemble(ds, seed, train, test))
}

/// Fold `fold` of a `folds`-way per-user split: position `j` of each user's
/// shuffled positives belongs to fold `j % folds`.
pub fn split_kfold(ds: &ImplicitDataset, folds: usize, fold: usize, seed: u64) -> Result<SplitDataset> {
    if folds < 2 || fold >= folds {
        return Err(Error::InvalidParameter(format!(
            "need folds >= 2 and fold < folds, got fold {fold} of {folds}"
        )));
    }
    let mut train = Vec::with_capacity(ds.pairs.len());
    let mut test = Vec::new();
    for (u, items) in ds.positives_per_user().into_iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let u = u as u32;
        let order = shuffled_positives(seed, u, &items);
        let start = test.len();
        for (j, &i) in order.iter().enumerate() {
            if j % folds == fold {
                test.push((u, i));
            } else {
                train.push((u, i));
            }
        }
        if test.len() - start == order.len() {
            train.push(test.pop().expect("non-empty"));
        }
    }
    Ok(assemble(ds, seed, train, test))
}

/// Users, items, positives and density, as printed by `cosam prepare`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub positives: usize,
    pub density: f64,
}

impl DatasetStats {
    pub fn new(users: usize, items: usize, positives: usize) -> Self {
        let cells = (users * items).max(1) as f64;
        DatasetStats {
            users,
            items,
            positives,
            density: positives as f64 / cells,
        }
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Number of users               {}", self.users)?;
        writeln!(f, "Number of items               {}", self.items)?;
        writeln!(f, "Number of positive feedbacks  {}", self.positives)?;
        write!(f, "Density of positive feedbacks {:.2}%", self.density * 100.0)
    }
}

const PAIRS_MAGIC: &str = "#cosam-pairs";

fn pairs_to_text(n: usize, m: usize, pairs: &[(u32, u32)]) -> String {
    let mut s = format!("{PAIRS_MAGIC} v1 n={n} m={m} count={}\n", pairs.len());
    for &(u, i) in pairs {
        s.push_str(&format!("{u}\t{i}\n"));
    }
    s
}

/// `(n, m, pairs)` as stored in a pair file.
type PairFile = (usize, usize, Vec<(u32, u32)>);

fn pairs_from_text(text: &str) -> Result<PairFile> {
    let bad = |msg: String| Error::InvalidParameter(format!("pair file: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(PAIRS_MAGIC) || parts.next() != Some("v1") {
        return Err(bad(format!("bad header {header:?}")));
    }
    let mut fields = HashMap::new();
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad field {kv:?}")))?;
        let v: usize = v.parse().map_err(|_| bad(format!("bad value in {kv:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("header lacks {k}")));
    let (n, m, count) = (get("n")?, get("m")?, get("count")?);
    let mut pairs = Vec::with_capacity(count);
    for line in lines.filter(|l| !l.is_empty()) {
        let (u, i) = line.split_once('\t').ok_or_else(|| bad(format!("bad line {line:?}")))?;
        let u: u32 = u.parse().map_err(|_| bad(format!("bad line {line:?}")))?;
        let i: u32 = i.parse().map_err(|_| bad(format!("bad line {line:?}")))?;
        if u as usize >= n || i as usize >= m {
            return Err(bad(format!("pair ({u}, {i}) outside {n}x{m}")));
        }
        pairs.push((u, i));
    }
    if pairs.len() != count {
        return Err(bad(format!("header count {count} but {} pairs", pairs.len())));
    }
    Ok((n, m, pairs))
}

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const USER_VOCAB_FILE: &str = "users.vocab";
pub const ITEM_VOCAB_FILE: &str = "items.vocab";
pub const SEED_FILE: &str = "split.seed";

/// Writes the prepared-data directory layout read back by [`load_prepared`].
pub fn save_prepared(split: &SplitDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    write(TRAIN_FILE, pairs_to_text(split.n, split.m, &split.train))?;
    write(TEST_FILE, pairs_to_text(split.n, split.m, &split.test))?;
    write(USER_VOCAB_FILE, split.user_vocab.to_text())?;
    write(ITEM_VOCAB_FILE, split.item_vocab.to_text())?;
    write(SEED_FILE, format!("{}\n", split.seed))
}

pub fn load_prepared(dir: &Path) -> Result<SplitDataset> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(p, e))
    };
    let (n, m, train) = pairs_from_text(&read(TRAIN_FILE)?)?;
    let (tn, tm, test) = pairs_from_text(&read(TEST_FILE)?)?;
    let user_vocab = Vocab::from_text(&read(USER_VOCAB_FILE)?)?;
    let item_vocab = Vocab::from_text(&read(ITEM_VOCAB_FILE)?)?;
    if (tn, tm) != (n, m) || user_vocab.len() != n || item_vocab.len() != m {
        return Err(Error::InvalidParameter(format!(
            "{}: train {n}x{m}, test {tn}x{tm}, vocab {}x{} disagree",
            dir.display(),
            user_vocab.len(),
            item_vocab.len()
        )));
    }
    let seed = read(SEED_FILE)?
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("{}: bad {SEED_FILE}", dir.display())))?;
    Ok(SplitDataset {
        n,
        m,
        train,
        test,
        user_vocab,
        item_vocab,
        seed,
    })
}
