use crate::error::{DapError, Result};
use crate::model::{derive_rng, N_SPECIALS};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Mixture weight for the bigram continuation (prev concept + 1) vs a
/// fresh Zipf draw. Gives the corpus local co-occurrence structure.
const BIGRAM_PROB: f64 = 0.3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LanguageSpec {
    /// Number of languages including the pivot (language 0).
    pub n_langs: usize,
    /// Concepts per language; each concept has one token per language.
    pub n_concepts: usize,
    /// Adjacent-swap period for non-pivot renderings; 0 disables reordering.
    pub reorder_period: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for LanguageSpec {
    fn default() -> Self {
        LanguageSpec {
            n_langs: 3,
            n_concepts: 200,
            reorder_period: 2,
            len_min: 3,
            len_max: 12,
            zipf_exponent: 1.1,
            seed: 0,
        }
    }
}

impl LanguageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_langs < 2 {
            return Err(DapError::Config("n_langs must be at least 2".into()));
        }
        if self.n_concepts < 2 {
            return Err(DapError::Config("n_concepts must be at least 2".into()));
        }
        if self.len_min == 0 || self.len_min > self.len_max {
            return Err(DapError::Config(format!(
                "invalid length range [{}, {}]",
                self.len_min, self.len_max
            )));
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return Err(DapError::Config("zipf_exponent must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Specials plus one disjoint token block per language.
    pub fn vocab_size(&self) -> usize {
        N_SPECIALS + self.n_langs * self.n_concepts
    }

    pub fn token_for(&self, lang: usize, concept: usize) -> u32 {
        debug_assert!(lang < self.n_langs && concept < self.n_concepts);
        (N_SPECIALS + lang * self.n_concepts + concept) as u32
    }

    pub fn decode_concept(&self, lang: usize, token: u32) -> Result<usize> {
        let lo = N_SPECIALS + lang * self.n_concepts;
        let hi = lo + self.n_concepts;
        let t = token as usize;
        if lang >= self.n_langs || t < lo || t >= hi {
            return Err(DapError::Data(format!(
                "token {token} is not in the range of language {lang}"
            )));
        }
        Ok(t - lo)
    }

    pub fn lang_of_token(&self, token: u32) -> Option<usize> {
        let t = token as usize;
        if t < N_SPECIALS || t >= self.vocab_size() {
            return None;
        }
        Some((t - N_SPECIALS) / self.n_concepts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelPair {
    /// Non-pivot language of `src` (1-based among languages; 0 is pivot).
    pub lang_id: usize,
    pub src: Vec<u32>,
    pub pivot: Vec<u32>,
    /// src position -> pivot position; always a bijection.
    pub alignment: Vec<usize>,
}

struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    fn new(n: usize, s: f64) -> Self {
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for k in 0..n {
            acc += ((k + 1) as f64).powf(-s);
            cdf.push(acc);
        }
        let z = acc;
        for v in &mut cdf {
            *v /= z;
        }
        ZipfSampler { cdf }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }
}

/// Adjacent-swap permutation: starting at index r-1, swap (i, i+1) and
/// advance by max(r, 2) so swap windows never overlap.
pub(crate) fn swap_permutation(len: usize, r: usize) -> Vec<usize> {
    let mut sigma: Vec<usize> = (0..len).collect();
    if r == 0 {
        return sigma;
    }
    let mut i = r - 1;
    let step = r.max(2);
    while i + 1 < len {
        sigma.swap(i, i + 1);
        i += step;
    }
    sigma
}

/// Generate `n_pairs` bitext pairs. Each pair draws its own RNG stream
/// from (seed, index), so any prefix of the corpus is stable under a
/// change of `n_pairs`. Non-pivot languages rotate round-robin.
pub fn generate_corpus(spec: &LanguageSpec, n_pairs: usize, seed: u64) -> Result<Vec<ParallelPair>> {
    spec.validate()?;
    let zipf = ZipfSampler::new(spec.n_concepts, spec.zipf_exponent);
    let mut out = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let mut rng = derive_rng(seed, i as u64);
        let lang = 1 + i % (spec.n_langs - 1);
        let len = rng.gen_range(spec.len_min..=spec.len_max);
        let mut concepts = Vec::with_capacity(len);
        for t in 0..len {
            let c = if t > 0 && rng.gen_bool(BIGRAM_PROB) {
                (concepts[t - 1] + 1) % spec.n_concepts
            } else {
                zipf.draw(&mut rng)
            };
            concepts.push(c);
        }
        let pivot: Vec<u32> = concepts.iter().map(|&c| spec.token_for(0, c)).collect();
        let sigma = swap_permutation(len, spec.reorder_period);
        let src: Vec<u32> = sigma
            .iter()
            .map(|&j| spec.token_for(lang, concepts[j]))
            .collect();
        out.push(ParallelPair {
            lang_id: lang,
            src,
            pivot,
            alignment: sigma,
        });
    }
    Ok(out)
}
