//! Verdict extraction from free-form model output and its regression encoding.
//!
//! Models are asked for a small JSON object but routinely wrap it in prose or
//! code fences. The parser takes the first balanced `{...}` span that is a
//! valid JSON object and maps it onto [`SentencingOutcome`]. Failures are
//! reported through [`ParseStatus`]; parsing never errors.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseStatus {
    Ok,
    NoJson,
    SchemaMismatch,
    InconsistentFields,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentencingOutcome {
    pub guilty: bool,
    pub fixed_term_months: Option<u32>,
    pub life_imprisonment: bool,
    pub death_penalty: bool,
    pub parse_status: ParseStatus,
}

impl SentencingOutcome {
    pub fn failed(status: ParseStatus) -> Self {
        Self {
            guilty: false,
            fixed_term_months: None,
            life_imprisonment: false,
            death_penalty: false,
            parse_status: status,
        }
    }

    pub fn fixed_term(months: u32) -> Self {
        Self {
            guilty: true,
            fixed_term_months: Some(months),
            life_imprisonment: false,
            death_penalty: false,
            parse_status: ParseStatus::Ok,
        }
    }

    pub fn not_guilty() -> Self {
        Self {
            parse_status: ParseStatus::Ok,
            ..Self::failed(ParseStatus::Ok)
        }
    }

    pub fn is_ok(&self) -> bool {
        self.parse_status == ParseStatus::Ok
    }

    /// Verdict identity used when comparing counterfactual outputs.
    pub fn verdict_key(&self) -> (bool, Option<u32>, bool, bool) {
        (
            self.guilty,
            self.fixed_term_months,
            self.life_imprisonment,
            self.death_penalty,
        )
    }

    /// Sentence length in months under `enc`, or `None` when the verdict has
    /// no month equivalent (special penalties in fixed-term mode, dropped
    /// acquittals, parse failures).
    pub fn sentence_months(&self, enc: &SentenceEncoding) -> Option<u32> {
        if !self.is_ok() {
            return None;
        }
        if !self.guilty {
            return enc.not_guilty_as_zero.then_some(0);
        }
        if let Some(m) = self.fixed_term_months {
            return Some(m);
        }
        match enc.mode {
            EncodingMode::FixedTermOnly => None,
            EncodingMode::FullSentence if self.death_penalty => Some(enc.death_months),
            EncodingMode::FullSentence if self.life_imprisonment => Some(enc.life_months),
            EncodingMode::FullSentence => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    #[default]
    FixedTermOnly,
    FullSentence,
}

fn default_life() -> u32 {
    300
}
fn default_death() -> u32 {
    400
}
fn default_true() -> bool {
    true
}

/// How verdicts map onto the regressand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceEncoding {
    #[serde(default)]
    pub mode: EncodingMode,
    #[serde(default = "default_life")]
    pub life_months: u32,
    #[serde(default = "default_death")]
    pub death_months: u32,
    /// Encode acquittals as zero months; when false they are dropped.
    #[serde(default = "default_true")]
    pub not_guilty_as_zero: bool,
}

impl Default for SentenceEncoding {
    fn default() -> Self {
        Self {
            mode: EncodingMode::FixedTermOnly,
            life_months: default_life(),
            death_months: default_death(),
            not_guilty_as_zero: true,
        }
    }
}

impl SentenceEncoding {
    pub fn full_sentence(&self) -> Self {
        Self {
            mode: EncodingMode::FullSentence,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.life_months < 1 || self.death_months < self.life_months {
            return Err(format!(
                "encoding requires death_months >= life_months >= 1, got life={} death={}",
                self.life_months, self.death_months
            ));
        }
        Ok(())
    }
}

/// `ln(months + 1)` for the verdict, or `None` when the observation is dropped.
pub fn to_regressand(outcome: &SentencingOutcome, enc: &SentenceEncoding) -> Option<f64> {
    outcome
        .sentence_months(enc)
        .map(|m| (f64::from(m)).ln_1p())
}

/// Parses a raw model response.
pub fn parse_response(body: &str) -> SentencingOutcome {
    match first_json_object(body) {
        None => SentencingOutcome::failed(ParseStatus::NoJson),
        Some(obj) => map_schema(&obj),
    }
}

/// First balanced `{...}` span that parses as a JSON object.
fn first_json_object(body: &str) -> Option<Map<String, Value>> {
    let bytes = body.as_bytes();
    let mut start = 0;
    while let Some(off) = bytes[start..].iter().position(|&b| b == b'{') {
        let open = start + off;
        if let Some(close) = matching_brace(bytes, open) {
            if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&body[open..=close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

/// Index of the brace closing the one at `open`, honouring JSON strings.
fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

enum Field<T> {
    Missing,
    Present(T),
    Invalid,
}

fn bool_field(obj: &Map<String, Value>, key: &str) -> Field<bool> {
    match obj.get(key) {
        None | Some(Value::Null) => Field::Missing,
        Some(Value::Bool(b)) => Field::Present(*b),
        Some(_) => Field::Invalid,
    }
}

fn months_field(obj: &Map<String, Value>, key: &str) -> Field<u32> {
    match obj.get(key) {
        None | Some(Value::Null) => Field::Missing,
        Some(Value::Number(n)) => {
            if let Some(u) = n.as_u64() {
                u32::try_from(u).map_or(Field::Invalid, Field::Present)
            } else {
                match n.as_f64() {
                    Some(f) if f >= 0.0 && f.fract() == 0.0 && f <= f64::from(u32::MAX) => {
                        Field::Present(f as u32)
                    }
                    _ => Field::Invalid,
                }
            }
        }
        Some(_) => Field::Invalid,
    }
}

fn map_schema(obj: &Map<String, Value>) -> SentencingOutcome {
    let mismatch = SentencingOutcome::failed(ParseStatus::SchemaMismatch);
    let guilty = match bool_field(obj, "guilty") {
        Field::Present(g) => g,
        _ => return mismatch,
    };
    let months = match months_field(obj, "imprisonment_months") {
        Field::Present(m) => Some(m),
        Field::Missing => None,
        Field::Invalid => return mismatch,
    };
    let flag = |key| match bool_field(obj, key) {
        Field::Present(b) => Some(b),
        Field::Missing => Some(false),
        Field::Invalid => None,
    };
    let (Some(life), Some(death)) = (flag("life_imprisonment"), flag("death_penalty")) else {
        return mismatch;
    };

    let penalties = usize::from(months.is_some()) + usize::from(life) + usize::from(death);
    let consistent = if guilty {
        penalties == 1
    } else {
        // an explicit zero term alongside an acquittal is harmless
        !life && !death && months.unwrap_or(0) == 0
    };
    if !consistent {
        return SentencingOutcome::failed(ParseStatus::InconsistentFields);
    }
    SentencingOutcome {
        guilty,
        fixed_term_months: if guilty { months } else { None },
        life_imprisonment: life,
        death_penalty: death,
        parse_status: ParseStatus::Ok,
    }
}
