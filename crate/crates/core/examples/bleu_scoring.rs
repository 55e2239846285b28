//! Corpus and sentence BLEU over unit sequences, with one and with
//! several references per hypothesis.
//!
//! cargo run --example bleu_scoring

use transpeech::harness::bleu::{corpus_bleu, corpus_bleu_multi, sentence_bleu, token_accuracy};

fn main() -> transpeech::Result<()> {
    let refs = vec![vec![3, 4, 5, 6, 7, 8], vec![10, 11, 12, 13, 14]];
    let alt = vec![vec![4, 3, 5, 6, 7, 8], vec![10, 11, 12, 13, 14]];
    let hyps = vec![vec![4, 3, 5, 6, 7, 8], vec![10, 11, 12, 14]];

    let single = corpus_bleu(&refs, &hyps)?;
    println!("one reference:  BLEU {:.2}  brevity penalty {:.3}", single.bleu, single.brevity_penalty);
    for (r, h) in refs.iter().zip(&hyps) {
        println!("  sentence BLEU {:6.2}  {h:?}", sentence_bleu(r, h));
    }
    let multi: Vec<Vec<Vec<usize>>> = refs.iter().zip(&alt).map(|(a, b)| vec![a.clone(), b.clone()]).collect();
    let m = corpus_bleu_multi(&multi, &hyps)?;
    println!("two references: BLEU {:.2}  clipped matches {:?} of {:?}", m.bleu, m.matches, m.totals);
    println!("token accuracy {:.2}%", token_accuracy(&multi, &hyps)?);
    Ok(())
}
