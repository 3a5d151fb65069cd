//! Flat `key = value` configuration text for [`TrainConfig`].
//!
//! Keys: `epochs`, `batch_size`, `seed`, `sampler` (cosam | uniform | pop),
//! `c1`, `c2`, `l_max`, `multiplier`, `dim`, `lr`, `lambda`, `alpha`,
//! `eval_every`, `sampler_lr` (defaults to `lr`), `sampler_epochs`
//! (a count or `all`) and `timing` (true | false). Blank lines and lines
//! starting with `#` are ignored. Unknown or repeated keys are errors.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse {key} = {value:?}")))
}

impl TrainConfig {
    /// Starts from the defaults and applies each assignment in `text`.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (key, value) = t
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value, got {t:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key {key}")));
            }
            let sc = &mut c.sampler_config;
            match key {
                "epochs" => c.epochs = parse(key, value, line)?,
                "batch_size" => c.batch_size = parse(key, value, line)?,
                "seed" => c.seed = parse(key, value, line)?,
                "sampler" => c.sampler = value.parse()?,
                "c1" => sc.c1 = parse(key, value, line)?,
                "c2" => sc.c2 = parse(key, value, line)?,
                "l_max" => sc.max_walk_len = parse(key, value, line)?,
                "multiplier" => sc.candidate_multiplier = parse(key, value, line)?,
                "dim" => c.dim = parse(key, value, line)?,
                "lr" => c.lr = parse(key, value, line)?,
                "sampler_lr" => c.sampler_lr = parse(key, value, line)?,
                "lambda" => c.lambda = parse(key, value, line)?,
                "alpha" => c.alpha = parse(key, value, line)?,
                "eval_every" => c.eval_every = parse(key, value, line)?,
                "sampler_epochs" => {
                    c.sampler_epochs = if value == "all" { None } else { Some(parse(key, value, line)?) }
                }
                "timing" => c.timing = parse(key, value, line)?,
                other => return Err(Error::Config(format!("line {line}: unknown key {other:?}"))),
            }
        }
        if seen.contains("lr") && !seen.contains("sampler_lr") {
            c.sampler_lr = c.lr;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_text(&text)
    }

    /// Every key, in a fixed order. Parsing the result gives back `self`.
    pub fn to_kv_text(&self) -> String {
        let sc = &self.sampler_config;
        let sampler_epochs = self.sampler_epochs.map_or_else(|| "all".to_string(), |k| k.to_string());
        [
            format!("epochs = {}", self.epochs),
            format!("batch_size = {}", self.batch_size),
            format!("seed = {}", self.seed),
            format!("sampler = {}", self.sampler),
            format!("c1 = {}", sc.c1),
            format!("c2 = {}", sc.c2),
            format!("l_max = {}", sc.max_walk_len),
            format!("multiplier = {}", sc.candidate_multiplier),
            format!("dim = {}", self.dim),
            format!("lr = {}", self.lr),
            format!("sampler_lr = {}", self.sampler_lr),
            format!("lambda = {}", self.lambda),
            format!("alpha = {}", self.alpha),
            format!("eval_every = {}", self.eval_every),
            format!("sampler_epochs = {sampler_epochs}"),
            format!("timing = {}", self.timing),
        ]
        .iter()
        .map(|l| format!("{l}\n"))
        .collect()
    }
}
