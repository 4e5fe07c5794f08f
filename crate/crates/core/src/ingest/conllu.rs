//! CoNLL-U reading, writing, and dependency-tree validation.
//!
//! Only ID, FORM, UPOS, HEAD and DEPREL are kept. Multiword ranges (`1-2`)
//! and empty nodes (`1.1`) are skipped.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub upos: String,
    /// Index of the head token; 0 marks the root.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("sentence has no tokens")]
    Empty,
    #[error("token ids must run 1..n: expected {expected}, found {found}")]
    NonSequential { expected: usize, found: usize },
    #[error("token {0} is its own head")]
    SelfLoop(usize),
    #[error("token {token} has head {head} outside 0..={len}")]
    HeadOutOfRange {
        token: usize,
        head: usize,
        len: usize,
    },
    #[error("multiple roots: {0:?}")]
    MultipleRoots(Vec<usize>),
    #[error("cycle through tokens {0:?}")]
    Cycle(Vec<usize>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConlluError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sentence {sentence}: {source}")]
    Tree { sentence: String, source: TreeError },
}

/// A validated dependency tree over one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    sent_id: Option<String>,
    tokens: Vec<Token>,
    root: usize,
    children: Vec<Vec<usize>>,
}

impl DepTree {
    pub fn new(sent_id: Option<String>, tokens: Vec<Token>) -> Result<Self, TreeError> {
        let n = tokens.len();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        for (i, tok) in tokens.iter().enumerate() {
            if tok.index != i + 1 {
                return Err(TreeError::NonSequential {
                    expected: i + 1,
                    found: tok.index,
                });
            }
            if tok.head == tok.index {
                return Err(TreeError::SelfLoop(tok.index));
            }
            if tok.head > n {
                return Err(TreeError::HeadOutOfRange {
                    token: tok.index,
                    head: tok.head,
                    len: n,
                });
            }
        }
        // Follow head chains; a chain that revisits its own walk is a cycle.
        let mut walk_of = vec![0usize; n + 1];
        for start in 1..=n {
            let mut i = start;
            while i != 0 && walk_of[i] == 0 {
                walk_of[i] = start;
                i = tokens[i - 1].head;
            }
            if i != 0 && walk_of[i] == start {
                let mut cycle = vec![i];
                let mut j = tokens[i - 1].head;
                while j != i {
                    cycle.push(j);
                    j = tokens[j - 1].head;
                }
                cycle.sort_unstable();
                return Err(TreeError::Cycle(cycle));
            }
        }
        // Acyclic with in-range heads: every chain ends at 0, so a root exists.
        let roots: Vec<usize> = tokens
            .iter()
            .filter(|t| t.head == 0)
            .map(|t| t.index)
            .collect();
        if roots.len() > 1 {
            return Err(TreeError::MultipleRoots(roots));
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); n + 1];
        for tok in &tokens {
            children[tok.head].push(tok.index);
        }
        Ok(Self {
            sent_id,
            tokens,
            root,
            children,
        })
    }

    pub fn sent_id(&self) -> Option<&str> {
        self.sent_id.as_deref()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Token by 1-based index.
    pub fn token(&self, index: usize) -> &Token {
        &self.tokens[index - 1]
    }

    pub fn head(&self, index: usize) -> usize {
        self.tokens[index - 1].head
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Direct dependents of a 1-based token, ascending.
    pub fn children(&self, index: usize) -> &[usize] {
        &self.children[index]
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }
}

/// Tokens tagged NOUN, PROPN or PRON, ascending by index.
pub fn candidate_targets(tree: &DepTree) -> Vec<usize> {
    tree.tokens()
        .iter()
        .filter(|t| matches!(t.upos.as_str(), "NOUN" | "PROPN" | "PRON"))
        .map(|t| t.index)
        .collect()
}

fn parse_err(line: usize, message: impl Into<String>) -> ConlluError {
    ConlluError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses every sentence block in `text`.
pub fn parse_conllu(text: &str) -> Result<Vec<DepTree>, ConlluError> {
    let mut trees = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut sent_id: Option<String> = None;
    let mut block_start = 0;

    let flush = |tokens: &mut Vec<Token>,
                 sent_id: &mut Option<String>,
                 start: usize,
                 trees: &mut Vec<DepTree>|
     -> Result<(), ConlluError> {
        if tokens.is_empty() {
            *sent_id = None;
            return Ok(());
        }
        let label = sent_id
            .clone()
            .unwrap_or_else(|| format!("#{} (line {start})", trees.len() + 1));
        let tree = DepTree::new(sent_id.take(), std::mem::take(tokens)).map_err(|source| {
            ConlluError::Tree {
                sentence: label,
                source,
            }
        })?;
        trees.push(tree);
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut sent_id, block_start, &mut trees)?;
            continue;
        }
        if tokens.is_empty() && sent_id.is_none() {
            block_start = line_no;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(parse_err(
                line_no,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize = id
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad token id {id:?}")))?;
        if index == 0 {
            return Err(parse_err(line_no, "token id 0 is reserved for the root"));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad head {:?}", cols[6])))?;
        tokens.push(Token {
            index,
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    flush(&mut tokens, &mut sent_id, block_start, &mut trees)?;
    Ok(trees)
}

/// Writes trees back out; unretained columns become `_`.
pub fn to_conllu(trees: &[DepTree]) -> String {
    let mut out = String::new();
    for tree in trees {
        if let Some(id) = tree.sent_id() {
            let _ = writeln!(out, "# sent_id = {id}");
        }
        for t in tree.tokens() {
            let _ = writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                t.index, t.form, t.upos, t.head, t.deprel
            );
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, form: &str, upos: &str, head: usize, rel: &str) -> String {
        format!("{id}\t{form}\t_\t{upos}\t_\t_\t{head}\t{rel}\t_\t_\n")
    }

    #[test]
    fn minimal_block() {
        let text = row(1, "Good", "ADJ", 2, "amod") + &row(2, "food", "NOUN", 0, "root");
        let trees = parse_conllu(&text).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].root(), 2);
        assert_eq!(candidate_targets(&trees[0]), vec![2]);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let text = row(1, "a", "X", 2, "dep") + &row(2, "b", "X", 1, "dep");
        assert!(matches!(
            parse_conllu(&text),
            Err(ConlluError::Tree { source: TreeError::Cycle(ref c), .. }) if c == &vec![1, 2]
        ));
        let text =
            row(1, "r", "X", 0, "root") + &row(2, "a", "X", 3, "dep") + &row(3, "b", "X", 2, "dep");
        assert!(matches!(
            parse_conllu(&text),
            Err(ConlluError::Tree { source: TreeError::Cycle(ref c), .. }) if c == &vec![2, 3]
        ));
    }

    #[test]
    fn validation_errors() {
        let two_roots = row(1, "a", "X", 0, "root") + &row(2, "b", "X", 0, "root");
        assert!(matches!(
            parse_conllu(&two_roots),
            Err(ConlluError::Tree {
                source: TreeError::MultipleRoots(_),
                ..
            })
        ));
        let out_of_range = row(1, "a", "X", 0, "root") + &row(2, "b", "X", 5, "dep");
        assert!(matches!(
            parse_conllu(&out_of_range),
            Err(ConlluError::Tree {
                source: TreeError::HeadOutOfRange { head: 5, .. },
                ..
            })
        ));
        let self_loop = format!("# sent_id = s9\n{}", row(1, "a", "X", 1, "dep"));
        let err = parse_conllu(&self_loop).unwrap_err();
        assert!(err.to_string().starts_with("sentence s9:"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("# c\n{}1\tonly\tthree\n", row(1, "a", "X", 0, "root"));
        assert_eq!(
            parse_conllu(&text).unwrap_err(),
            ConlluError::Parse {
                line: 3,
                message: "expected 10 tab-separated columns, found 3".into()
            }
        );
        let bad_head = "1\ta\t_\tX\t_\t_\t_\troot\t_\t_\n";
        assert!(matches!(
            parse_conllu(bad_head),
            Err(ConlluError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn skips_multiword_and_empty_nodes() {
        let text = "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n".to_string()
            + &row(1, "de", "ADP", 2, "case")
            + &row(2, "el", "DET", 0, "root")
            + "2.1\tx\t_\tX\t_\t_\t_\t_\t_\t_\n";
        let trees = parse_conllu(&text).unwrap();
        assert_eq!(trees[0].len(), 2);
    }

    #[test]
    fn sentence_ids_and_blocks() {
        let text = format!(
            "# sent_id = a\n{}\n\n# sent_id = b\n{}{}",
            row(1, "x", "NOUN", 0, "root").trim_end(),
            row(1, "y", "VERB", 0, "root"),
            row(2, "z", "PRON", 1, "obj")
        );
        let trees = parse_conllu(&text).unwrap();
        assert_eq!(trees.len(), 2);
        assert_eq!(trees[0].sent_id(), Some("a"));
        assert_eq!(trees[1].sent_id(), Some("b"));
        assert_eq!(trees[1].children(1), &[2]);
        assert_eq!(parse_conllu(&to_conllu(&trees)).unwrap(), trees);
    }

    #[test]
    fn empty_input_has_no_trees() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_conllu("\n\n# only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn all_verbs_have_no_candidates() {
        let text = row(1, "run", "VERB", 0, "root") + &row(2, "go", "VERB", 1, "xcomp");
        assert!(candidate_targets(&parse_conllu(&text).unwrap()[0]).is_empty());
    }
}
