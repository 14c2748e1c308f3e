use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};
use crate::tokenizer::{BOS, EOS, MASK, PAD, SEP, UNK};

use super::Model;

/// Decoder output and its length-normalized log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    /// Output tokens with BOS/EOS removed and cut at the first SEP.
    pub tokens: Vec<u32>,
    /// Full hypothesis as scored, before the SEP cut (EOS excluded).
    pub hypothesis: Vec<u32>,
    pub log_prob: f64,
    /// `log_prob / len^alpha`, where `len` counts EOS when it was emitted.
    pub score: f64,
}

#[derive(Clone, Debug)]
struct Hyp {
    tokens: Vec<u32>,
    log_prob: f64,
    finished: bool,
}

impl Hyp {
    fn len(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(alpha)
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

const FORBIDDEN: [u32; 4] = [PAD, BOS, UNK, MASK];

struct Decoder<'m> {
    model: &'m Model,
    graph: Graph,
    params: Vec<Var>,
    memory: Var,
}

impl Decoder<'_> {
    /// Next-token log-probabilities after `prefix`.
    fn next(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut dec_in = Vec::with_capacity(prefix.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(prefix);
        let logits = self.model.decode_nodes(
            &mut self.graph,
            &self.params,
            &dec_in,
            self.memory,
            &mut None,
            None,
        )?;
        let value = self.graph.value(logits);
        let mut lp = log_softmax(value.row(value.rows() - 1));
        for t in FORBIDDEN {
            if let Some(x) = lp.get_mut(t as usize) {
                *x = f64::NEG_INFINITY;
            }
        }
        Ok(lp)
    }
}

impl Model {
    fn decoder(&self, source: &[u32], image: Option<&[f64]>) -> Result<Decoder<'_>> {
        if source.is_empty() {
            return Err(Error::input("empty source"));
        }
        let mut graph = Graph::new();
        let params = self.bind(&mut graph, false);
        let enc = self.encode_nodes(&mut graph, &params, source, image)?;
        Ok(Decoder {
            model: self,
            graph,
            params,
            memory: enc.h_out,
        })
    }

    pub(crate) fn max_decode_len(&self, source_len: usize) -> usize {
        (2 * source_len + 10).min(self.config.max_positions - 1).max(1)
    }

    fn finish(&self, hyp: Hyp) -> Translation {
        let score = normalized(hyp.log_prob, hyp.len(), self.config.length_penalty);
        let cut = hyp.tokens.iter().position(|&t| t == SEP).unwrap_or(hyp.tokens.len());
        Translation {
            tokens: hyp.tokens[..cut].to_vec(),
            hypothesis: hyp.tokens,
            log_prob: hyp.log_prob,
            score,
        }
    }

    fn greedy(&self, source: &[u32], image: Option<&[f64]>) -> Result<Translation> {
        let mut dec = self.decoder(source, image)?;
        let mut hyp = Hyp {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        };
        for _ in 0..self.max_decode_len(source.len()) {
            let lp = dec.next(&hyp.tokens)?;
            let (best, &best_lp) = lp
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            hyp.log_prob += best_lp;
            if best as u32 == EOS {
                hyp.finished = true;
                break;
            }
            hyp.tokens.push(best as u32);
        }
        Ok(self.finish(hyp))
    }

    fn beam_search(&self, source: &[u32], image: Option<&[f64]>, beam: usize) -> Result<Translation> {
        let alpha = self.config.length_penalty;
        let mut dec = self.decoder(source, image)?;
        let mut alive = vec![Hyp {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        }];
        let mut done: Vec<Hyp> = Vec::new();
        for _ in 0..self.max_decode_len(source.len()) {
            let mut candidates: Vec<Hyp> = Vec::new();
            for hyp in &alive {
                let lp = dec.next(&hyp.tokens)?;
                for (t, &l) in lp.iter().enumerate() {
                    if l == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut tokens = hyp.tokens.clone();
                    let finished = t as u32 == EOS;
                    if !finished {
                        tokens.push(t as u32);
                    }
                    candidates.push(Hyp {
                        tokens,
                        log_prob: hyp.log_prob + l,
                        finished,
                    });
                }
            }
            // Stable sort keeps enumeration order on ties.
            candidates.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
            candidates.truncate(beam);
            alive.clear();
            for c in candidates {
                if c.finished {
                    done.push(c);
                } else {
                    alive.push(c);
                }
            }
            if done.len() >= beam || alive.is_empty() {
                break;
            }
            // Log-probs only fall, so a live hypothesis is bounded by its
            // current log-prob normalized at the longest allowed length.
            let best_done = done
                .iter()
                .map(|h| normalized(h.log_prob, h.len(), alpha))
                .fold(f64::NEG_INFINITY, f64::max);
            let max_len = self.max_decode_len(source.len()) + 1;
            if alive
                .iter()
                .all(|h| normalized(h.log_prob, max_len, alpha) < best_done)
            {
                break;
            }
        }
        let pool = if done.is_empty() { alive } else { done.into_iter().chain(alive).collect() };
        let best = pool
            .into_iter()
            .map(|h| (normalized(h.log_prob, h.len(), alpha), h))
            .fold(None::<(f64, Hyp)>, |acc, cur| match acc {
                Some(a) if a.0 >= cur.0 => Some(a),
                _ => Some(cur),
            })
            .map(|(_, h)| h)
            .ok_or_else(|| Error::State("beam search produced no hypothesis".into()))?;
        Ok(self.finish(best))
    }

    /// Decodes `source` (with `prompt` appended after SEP when given).
    /// `beam == 1` is greedy decoding; wider beams never return a result
    /// scoring below the greedy one.
    pub fn translate(
        &self,
        source: &[u32],
        image: Option<&[f64]>,
        prompt: Option<&[u32]>,
        beam: usize,
    ) -> Result<Translation> {
        if beam == 0 {
            return Err(Error::input("beam must be at least 1"));
        }
        if source.is_empty() {
            return Err(Error::input("empty source"));
        }
        let input = Model::prompted(source, prompt);
        let greedy = self.greedy(&input, image)?;
        if beam == 1 {
            return Ok(greedy);
        }
        let wide = self.beam_search(&input, image, beam)?;
        Ok(if wide.score >= greedy.score { wide } else { greedy })
    }

    /// Length-normalized log-probability of `output` (EOS appended) under the
    /// model, scored the same way as `translate`.
    pub fn sequence_score(
        &self,
        source: &[u32],
        image: Option<&[f64]>,
        prompt: Option<&[u32]>,
        output: &[u32],
    ) -> Result<f64> {
        let input = Model::prompted(source, prompt);
        let mut dec = self.decoder(&input, image)?;
        let (dec_in, dec_out) = Model::shift_target(output);
        let logits = self.decode_nodes(&mut dec.graph, &dec.params, &dec_in, dec.memory, &mut None, None)?;
        let value = dec.graph.value(logits);
        let log_prob: f64 = dec_out
            .iter()
            .enumerate()
            .map(|(i, &t)| log_softmax(value.row(i))[t as usize])
            .sum();
        Ok(normalized(log_prob, dec_out.len(), self.config.length_penalty))
    }
}
