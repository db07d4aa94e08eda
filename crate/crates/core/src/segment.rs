//! Sub-sentence splitting, stream tokenization and last-token search.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Vocab, DELIMITERS, PROMPT, RESP_BEGIN, SCENE_BEGIN, SCENE_END};

/// Byte range of one sub-sentence inside the response text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    /// 1-based position among the response's sub-sentences.
    pub index: usize,
    pub char_start: usize,
    pub char_end: usize,
}

impl CharSpan {
    pub fn text<'a>(&self, response: &'a str) -> &'a str {
        &response[self.char_start..self.char_end]
    }
}

/// A sub-sentence with its token range in the full stream.
///
/// `token_end` is inclusive and equals `last_token_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSentenceSpan {
    pub index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub last_token_index: usize,
}

impl SubSentenceSpan {
    pub fn text<'a>(&self, response: &'a str) -> &'a str {
        &response[self.char_start..self.char_end]
    }
}

/// Splits on `.`, `,` and `;`; the delimiter stays with the preceding
/// sub-sentence and whitespace-only fragments are dropped.
pub fn split_response(text: &str) -> Result<Vec<CharSpan>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyResponse);
    }
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if start.is_none() && !c.is_whitespace() {
            start = Some(i);
        }
        if DELIMITERS.contains(&c) {
            if let Some(s) = start.take() {
                spans.push(CharSpan {
                    index: spans.len() + 1,
                    char_start: s,
                    char_end: i + c.len_utf8(),
                });
            }
        }
    }
    if let Some(s) = start {
        let end = s + text[s..].trim_end().len();
        spans.push(CharSpan {
            index: spans.len() + 1,
            char_start: s,
            char_end: end,
        });
    }
    Ok(spans)
}

/// Pluggable pre-tokenizer; the synthetic language uses [`WhitespaceTokenizer`].
pub trait Tokenizer {
    fn pre_tokenize(&self, text: &str) -> Vec<String>;
}

/// Whitespace tokenizer that also detaches sub-sentence delimiters glued
/// to words (`"detail."` becomes `"detail"`, `"."`).
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn pre_tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut cur = String::new();
            for c in word.chars() {
                if DELIMITERS.contains(&c) {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                    out.push(c.to_string());
                } else {
                    cur.push(c);
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
        }
        out
    }
}

/// Collapses whitespace and detaches delimiters; detokenizing a response
/// region reproduces this form.
pub fn normalize(text: &str) -> String {
    WhitespaceTokenizer.pre_tokenize(text).join(" ")
}

/// `[PROMPT, prompt.., SCENE_BEGIN, scene.., SCENE_END, RESP_BEGIN, response..]`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub ids: Vec<u32>,
    /// Surface terms, kept so that unknown words survive detokenization.
    pub terms: Vec<String>,
    pub prompt: Range<usize>,
    pub scene: Range<usize>,
    pub response: Range<usize>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Index of the `SCENE_END` marker; the last position of the context.
    pub fn context_end(&self) -> usize {
        self.scene.end
    }

    pub fn detokenize(&self, range: Range<usize>) -> String {
        self.terms[range].join(" ")
    }

    pub fn response_text(&self) -> String {
        self.detokenize(self.response.clone())
    }

    /// Region tag per position: 0 prompt side, 1 scene side, 2 response side.
    pub fn regions(&self) -> Vec<u8> {
        (0..self.len())
            .map(|i| {
                if i < self.scene.start {
                    0
                } else if i < self.response.start {
                    1
                } else {
                    2
                }
            })
            .collect()
    }

    pub fn unknown_count(&self, vocab: &Vocab) -> usize {
        let unk = vocab.marker(crate::vocab::UNK);
        self.ids.iter().filter(|&&id| id == unk).count()
    }
}

pub fn tokenize(
    prompt: &str,
    scene_observation: &str,
    response: &str,
    vocab: &Vocab,
) -> TokenStream {
    tokenize_with(
        &WhitespaceTokenizer,
        prompt,
        scene_observation,
        response,
        vocab,
    )
}

pub fn tokenize_with(
    tokenizer: &dyn Tokenizer,
    prompt: &str,
    scene_observation: &str,
    response: &str,
    vocab: &Vocab,
) -> TokenStream {
    let mut terms: Vec<String> = Vec::new();
    terms.push(PROMPT.to_string());
    let p0 = terms.len();
    terms.extend(tokenizer.pre_tokenize(prompt));
    let p1 = terms.len();
    terms.push(SCENE_BEGIN.to_string());
    let s0 = terms.len();
    terms.extend(tokenizer.pre_tokenize(scene_observation));
    let s1 = terms.len();
    terms.push(SCENE_END.to_string());
    terms.push(RESP_BEGIN.to_string());
    let r0 = terms.len();
    terms.extend(tokenizer.pre_tokenize(response));
    let r1 = terms.len();
    let ids = terms.iter().map(|t| vocab.id_or_unk(t)).collect();
    TokenStream {
        ids,
        terms,
        prompt: p0..p1,
        scene: s0..s1,
        response: r0..r1,
    }
}

/// Fills token ranges for each sub-sentence by walking the response region.
pub fn search_last_token_indices(
    stream: &TokenStream,
    response: &str,
    spans: &[CharSpan],
) -> Result<Vec<SubSentenceSpan>> {
    search_with(&WhitespaceTokenizer, stream, response, spans)
}

pub fn search_with(
    tokenizer: &dyn Tokenizer,
    stream: &TokenStream,
    response: &str,
    spans: &[CharSpan],
) -> Result<Vec<SubSentenceSpan>> {
    let mut cursor = stream.response.start;
    let mut out = Vec::with_capacity(spans.len());
    for span in spans {
        let piece = tokenizer.pre_tokenize(span.text(response));
        if piece.is_empty() {
            return Err(Error::Alignment {
                index: span.index,
                detail: "sub-sentence has no tokens".into(),
            });
        }
        let end = cursor + piece.len();
        if end > stream.response.end || stream.terms[cursor..end] != piece[..] {
            return Err(Error::Alignment {
                index: span.index,
                detail: format!("{:?} not found at token offset {cursor}", piece.join(" ")),
            });
        }
        out.push(SubSentenceSpan {
            index: span.index,
            char_start: span.char_start,
            char_end: span.char_end,
            token_start: cursor,
            token_end: end - 1,
            last_token_index: end - 1,
        });
        cursor = end;
    }
    if cursor != stream.response.end {
        return Err(Error::Alignment {
            index: spans.len(),
            detail: format!(
                "{} response tokens left uncovered",
                stream.response.end - cursor
            ),
        });
    }
    Ok(out)
}

/// Split, tokenize and search in one go.
pub fn segment(
    prompt: &str,
    scene_observation: &str,
    response: &str,
    vocab: &Vocab,
) -> Result<(TokenStream, Vec<SubSentenceSpan>)> {
    let stream = tokenize(prompt, scene_observation, response, vocab);
    let spans = split_response(response)?;
    let spans = search_last_token_indices(&stream, response, &spans)?;
    Ok((stream, spans))
}
