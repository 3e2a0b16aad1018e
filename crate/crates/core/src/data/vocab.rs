use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::Role;
use crate::error::{Error, Result};

/// Per-role label names and their ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocabulary {
    role: Role,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

const DEFAULT_ER: [&str; 11] = [
    "logical-appeal",
    "emotional-appeal",
    "credibility-appeal",
    "foot-in-the-door",
    "self-modeling",
    "personal-story",
    "donation-information",
    "source-related-inquiry",
    "task-related-inquiry",
    "personal-related-inquiry",
    "non-strategy-dialogue-acts",
];

const DEFAULT_EE: [&str; 13] = [
    "ask-org-info",
    "ask-donation-procedure",
    "positive-reaction",
    "neutral-reaction",
    "negative-reaction",
    "agree-donation",
    "disagree-donation",
    "provide-donation-amount",
    "ask-persuader-donation-intention",
    "disagree-donation-more",
    "task-related-inquiry",
    "personal-related-inquiry",
    "non-strategy-dialogue-acts",
];

impl LabelVocabulary {
    pub fn new(role: Role) -> Self {
        LabelVocabulary {
            role,
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_names<S: Into<String>>(role: Role, names: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut v = LabelVocabulary::new(role);
        for n in names {
            let n = n.into();
            if v.index.contains_key(&n) {
                return Err(Error::Config(format!("duplicate {role} label {n:?}")));
            }
            v.insert(&n);
        }
        Ok(v)
    }

    /// The strategy taxonomy plus the shared non-strategy category.
    pub fn default_for(role: Role) -> Self {
        let names: &[&str] = match role {
            Role::Er => &DEFAULT_ER,
            Role::Ee => &DEFAULT_EE,
        };
        LabelVocabulary::from_names(role, names.iter().copied()).expect("unique defaults")
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Returns the id, adding the label if unseen.
    pub fn insert(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    /// One label per line under a `# role: XX` header. Blank lines and other
    /// `#` lines are skipped.
    pub fn to_file_string(&self) -> String {
        let mut s = format!("# role: {}\n", self.role);
        for n in &self.names {
            s.push_str(n);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut role = None;
        let mut names = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(r) = rest.trim().strip_prefix("role:") {
                    let tok = r.trim();
                    role = Some(Role::parse(tok).ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: format!("unknown role token {tok:?}"),
                    })?);
                }
                continue;
            }
            if !line.is_empty() {
                names.push(line.to_string());
            }
        }
        let role = role.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "missing '# role: ER|EE' header".into(),
        })?;
        LabelVocabulary::from_names(role, names)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LabelVocabulary::parse(&text, path)
    }
}

/// The ER and EE vocabularies side by side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabularies {
    pub er: LabelVocabulary,
    pub ee: LabelVocabulary,
}

impl Vocabularies {
    pub fn empty() -> Self {
        Vocabularies {
            er: LabelVocabulary::new(Role::Er),
            ee: LabelVocabulary::new(Role::Ee),
        }
    }

    pub fn defaults() -> Self {
        Vocabularies {
            er: LabelVocabulary::default_for(Role::Er),
            ee: LabelVocabulary::default_for(Role::Ee),
        }
    }

    pub fn get(&self, role: Role) -> &LabelVocabulary {
        match role {
            Role::Er => &self.er,
            Role::Ee => &self.ee,
        }
    }

    pub fn get_mut(&mut self, role: Role) -> &mut LabelVocabulary {
        match role {
            Role::Er => &mut self.er,
            Role::Ee => &mut self.ee,
        }
    }

    pub fn sizes(&self) -> [usize; 2] {
        [self.er.len(), self.ee.len()]
    }
}
