//! Ordered first-match domain classification.

use std::io::Read;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::records::MarketRecord;
use super::IngestError;

pub const DEFAULT_FALLBACK_DOMAIN: &str = "Other";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    TickerPrefix,
    TitleRegex,
}

#[derive(Debug, Clone)]
enum Matcher {
    Prefix(String),
    Regex(Regex),
}

#[derive(Debug, Clone)]
pub struct DomainRule {
    pub match_kind: MatchKind,
    pub pattern: String,
    pub domain: String,
    matcher: Matcher,
}

impl DomainRule {
    /// Compiles a rule. Regex errors surface here, never at classify time.
    pub fn new(match_kind: MatchKind, pattern: &str, domain: &str) -> Result<Self, IngestError> {
        let matcher = match match_kind {
            MatchKind::TickerPrefix => Matcher::Prefix(pattern.to_string()),
            MatchKind::TitleRegex => Matcher::Regex(Regex::new(pattern).map_err(|e| IngestError::Rule {
                pattern: pattern.to_string(),
                reason: e.to_string(),
            })?),
        };
        Ok(DomainRule { match_kind, pattern: pattern.to_string(), domain: domain.to_string(), matcher })
    }

    pub fn matches(&self, market: &MarketRecord) -> bool {
        match &self.matcher {
            Matcher::Prefix(p) => market.event_ticker.starts_with(p.as_str()),
            Matcher::Regex(re) => re.is_match(&market.title),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DomainRuleSet {
    pub rules: Vec<DomainRule>,
    pub fallback_domain: String,
}

impl Default for DomainRuleSet {
    fn default() -> Self {
        DomainRuleSet { rules: Vec::new(), fallback_domain: DEFAULT_FALLBACK_DOMAIN.to_string() }
    }
}

impl DomainRuleSet {
    pub fn new(rules: Vec<DomainRule>) -> Self {
        DomainRuleSet { rules, ..Default::default() }
    }

    /// Loads `match_kind,pattern,domain` rows, keeping file order.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut rules = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| IngestError::Io(e.to_string()))?;
            let line = i + 2;
            if row.len() != 3 {
                return Err(IngestError::Rule {
                    pattern: row.iter().collect::<Vec<_>>().join(","),
                    reason: format!("line {line}: expected 3 columns"),
                });
            }
            let kind = match row[0].trim() {
                "ticker_prefix" => MatchKind::TickerPrefix,
                "title_regex" => MatchKind::TitleRegex,
                other => {
                    return Err(IngestError::Rule {
                        pattern: row[1].to_string(),
                        reason: format!("line {line}: unknown match_kind {other:?}"),
                    })
                }
            };
            rules.push(DomainRule::new(kind, &row[1], row[2].trim())?);
        }
        Ok(DomainRuleSet::new(rules))
    }

    /// Serializes to the `match_kind,pattern,domain` format read by [`Self::from_csv`].
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["match_kind", "pattern", "domain"]).expect("in-memory write");
        for r in &self.rules {
            let kind = match r.match_kind {
                MatchKind::TickerPrefix => "ticker_prefix",
                MatchKind::TitleRegex => "title_regex",
            };
            w.write_record([kind, r.pattern.as_str(), r.domain.as_str()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn with_fallback(mut self, fallback: &str) -> Self {
        self.fallback_domain = fallback.to_string();
        self
    }

    pub fn classify(&self, market: &MarketRecord) -> &str {
        self.rules
            .iter()
            .find(|r| r.matches(market))
            .map(|r| r.domain.as_str())
            .unwrap_or(&self.fallback_domain)
    }

    /// Domains named by the rules, in first-appearance order, fallback excluded.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rules {
            if r.domain != self.fallback_domain && !out.contains(&r.domain) {
                out.push(r.domain.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Outcome;

    fn market(ticker: &str, title: &str) -> MarketRecord {
        MarketRecord {
            market_id: "m".into(),
            event_ticker: ticker.into(),
            title: title.into(),
            close_time_ms: 0,
            outcome: Outcome::Yes,
        }
    }

    #[test]
    fn empty_ruleset_falls_back() {
        let rules = DomainRuleSet::default();
        assert_eq!(rules.classify(&market("ANY", "anything")), "Other");
    }

    #[test]
    fn fixture_rules_classify_tickers_and_titles() {
        let rules = DomainRuleSet::from_csv(include_str!("../../tests/fixtures/rules.csv").as_bytes()).unwrap();
        assert_eq!(rules.classify(&market("KXNBAGAME-25DEC01LALBOS", "Lakers vs Celtics")), "Sports");
        assert_eq!(rules.classify(&market("KXPRESPARTY-28", "Who wins")), "Politics");
        assert_eq!(rules.classify(&market("KXBTC-1", "Will Bitcoin close above 100k?")), "Crypto");
        assert_eq!(rules.classify(&market("X", "NYC high temperature")), "Weather");
        assert_eq!(rules.classify(&market("X", "oscars")), "Other");
        assert_eq!(rules.domains(), ["Sports", "Politics", "Crypto", "Weather"]);
    }

    #[test]
    fn first_match_wins() {
        let rules = DomainRuleSet::new(vec![
            DomainRule::new(MatchKind::TitleRegex, "election", "Politics").unwrap(),
            DomainRule::new(MatchKind::TitleRegex, "elect", "Entertainment").unwrap(),
        ]);
        let m = market("T", "election night");
        assert_eq!(rules.classify(&m), "Politics");
        assert_eq!(rules.classify(&m), rules.classify(&m));
    }

    #[test]
    fn bad_regex_fails_at_load() {
        let text = "match_kind,pattern,domain\ntitle_regex,(unclosed,Politics\n";
        assert!(matches!(DomainRuleSet::from_csv(text.as_bytes()), Err(IngestError::Rule { .. })));
        let text = "match_kind,pattern,domain\nglob,x*,Politics\n";
        assert!(DomainRuleSet::from_csv(text.as_bytes()).is_err());
    }
}
