//! A desk-scale trainable scorer: a two-layer attention encoder and
//! two-layer cross-attention decoder over a closed vocabulary, with a tied
//! embedding output head. The backbone (embeddings and layer weights) is
//! pretrained with span-corruption denoising and then frozen; the
//! continuous prompt vectors are the only trainable state afterwards.
//!
//! Small enough for exact finite-difference gradient verification in
//! double precision.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{NodeId, Tape};
use crate::corpus::{Dataset, Label};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scorer::{candidate_words, EmbeddingTable, MaskDistribution, Scorer, ScorerKind};
use crate::template::{AssembledPrompt, Element, PromptLayout};
use crate::tokenizer::{mask_sentinel, Tokenizer, Vocabulary, SENTINELS};
use crate::verbalizer::{LabelWordMap, LossForm};

pub const DEFAULT_DIM: usize = 32;
const ENC_LAYERS: usize = 2;
const DEC_LAYERS: usize = 2;
const PE_SCALE: f64 = 0.4;
const PRETRAIN_LR: f64 = 0.25;
const PRETRAIN_BATCH: usize = 4;

/// Template fragments whose tokens must always be in the vocabulary.
const TEMPLATE_EXTRAS: &[&str] = &[
    "choice1:",
    "choice2:",
    ", it is",
    "Overall,",
    "is plausible.",
    "not plausible",
];

/// One attention layer's weights; all matrices are dim × dim, row-major.
#[derive(Debug, Clone, PartialEq)]
struct Layer<F> {
    wq: Vec<F>,
    wk: Vec<F>,
    wv: Vec<F>,
    wo: Vec<F>,
    wh: Vec<F>,
    b: Vec<F>,
}

impl<F: Scalar> Layer<F> {
    /// Attention matrices start near the identity so token matching and
    /// positional locality work from step zero; pretraining refines them.
    fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let noise = 0.3 / (dim as f64).sqrt();
        let mat = |rng: &mut ChaCha8Rng, identity: f64| -> Vec<F> {
            (0..dim * dim)
                .map(|i| {
                    let eye = if i % (dim + 1) == 0 { identity } else { 0.0 };
                    F::from_f64_lossy(eye + normal(rng) * noise)
                })
                .collect()
        };
        Layer {
            wq: mat(rng, 1.0),
            wk: mat(rng, 1.0),
            wv: mat(rng, 1.0),
            wo: mat(rng, 0.5),
            wh: mat(rng, 1.0),
            b: vec![F::zero(); dim],
        }
    }

    fn mats_mut(&mut self) -> [&mut Vec<F>; 6] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.wh,
            &mut self.b,
        ]
    }

    fn mats(&self) -> [&Vec<F>; 6] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.wh, &self.b]
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniform draws.
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn positional_encoding<F: Scalar>(pos: usize, dim: usize) -> Vec<F> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2) as f64;
            let freq = 1.0 / 10_000f64.powf(2.0 * pair / dim as f64);
            let angle = pos as f64 * freq;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            F::from_f64_lossy(v * PE_SCALE)
        })
        .collect()
}

/// One input position: a vocabulary token or a prompt vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Item {
    Tok(usize),
    Prompt(u8, usize),
}

/// Gradients of the prompt vectors, keyed by (slot, vector index).
pub type PromptGrads<F> = BTreeMap<(u8, usize), Vec<F>>;

/// The trainable toy scorer.
#[derive(Debug, Clone)]
pub struct ToyScorer<F> {
    tokenizer: Tokenizer,
    vocab: Vocabulary,
    dim: usize,
    embedding: Vec<Vec<F>>,
    enc: Vec<Layer<F>>,
    dec: Vec<Layer<F>>,
    prompts: BTreeMap<u8, Vec<Vec<F>>>,
    layout: PromptLayout,
    checksum: String,
    seed: u64,
    pretrain_steps: usize,
}

/// Pretraining log: denoising loss at selected steps, including step 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    pub loss_curve: Vec<(usize, f64)>,
    pub steps: usize,
    pub seed: u64,
}

impl<F: Scalar> ToyScorer<F> {
    /// Randomly initialized scorer whose vocabulary covers the corpus
    /// texts, the template fragments and label words, and the discourse
    /// connective inventory used by the interpretability probe.
    pub fn init(corpus: &Dataset, layout: &PromptLayout, dim: usize, seed: u64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Validation("toy scorer needs a non-empty corpus".into()));
        }
        let tokenizer = Tokenizer;
        let mut extra: Vec<&str> = TEMPLATE_EXTRAS.to_vec();
        let inventory_text = crate::interpret::BUILTIN_CONNECTIVES;
        extra.push(inventory_text);
        let texts: Vec<&str> = corpus
            .instances
            .iter()
            .flat_map(|i| {
                [
                    i.obs1.as_str(),
                    i.obs2.as_str(),
                    i.hyp1.as_str(),
                    i.hyp2.as_str(),
                ]
            })
            .collect();
        let vocab = Vocabulary::build(&tokenizer, texts.iter().copied(), &extra);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding: Vec<Vec<F>> = (0..vocab.len())
            .map(|_| (0..dim).map(|_| F::from_f64_lossy(normal(&mut rng) * 0.3)).collect())
            .collect();
        let enc = (0..ENC_LAYERS).map(|_| Layer::init(dim, &mut rng)).collect();
        let dec = (0..DEC_LAYERS).map(|_| Layer::init(dim, &mut rng)).collect();

        // Prompt vectors start from randomly chosen token embeddings.
        let mut prompts = BTreeMap::new();
        for slot in layout.active_slots() {
            let vectors: Vec<Vec<F>> = (0..layout.slot_len(slot))
                .map(|_| {
                    let row = rng.gen_range(0..vocab.len());
                    embedding[row].clone()
                })
                .collect();
            prompts.insert(slot, vectors);
        }

        let mut scorer = ToyScorer {
            tokenizer,
            vocab,
            dim,
            embedding,
            enc,
            dec,
            prompts,
            layout: *layout,
            checksum: String::new(),
            seed,
            pretrain_steps: 0,
        };
        scorer.checksum = scorer.compute_checksum();
        Ok(scorer)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pretrain_steps(&self) -> usize {
        self.pretrain_steps
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn compute_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        hasher.update((self.vocab.len() as u64).to_le_bytes());
        for token in self.vocab.tokens() {
            hasher.update(token.as_bytes());
            hasher.update([0xFF]);
        }
        let feed = |values: &[F], hasher: &mut Sha256| {
            for v in values {
                hasher.update(v.to_f64().unwrap_or(f64::NAN).to_bits().to_le_bytes());
            }
        };
        for row in &self.embedding {
            feed(row, &mut hasher);
        }
        for layer in self.enc.iter().chain(self.dec.iter()) {
            for m in layer.mats() {
                feed(m, &mut hasher);
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Span-corruption denoising over the corpus texts. Updates every
    /// backbone parameter, then freezes the result behind a fresh checksum.
    pub fn pretrain(&mut self, corpus: &Dataset, steps: usize, seed: u64) -> Result<PretrainReport> {
        if corpus.is_empty() {
            return Err(Error::Validation("pretraining corpus is empty".into()));
        }
        let texts: Vec<Vec<usize>> = corpus
            .instances
            .iter()
            .map(|i| {
                let joined = format!("{} {} {} {}", i.obs1, i.hyp1, i.hyp2, i.obs2);
                self.vocab.encode(&self.tokenizer, &joined)
            })
            .collect::<Result<_>>()?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lr = F::from_f64_lossy(PRETRAIN_LR);
        let mut curve = Vec::new();
        for step in 0..=steps {
            let batch: Vec<&Vec<usize>> = (0..PRETRAIN_BATCH)
                .map(|_| &texts[rng.gen_range(0..texts.len())])
                .collect();
            let mut graph = GraphBuilder::new(self);
            let mut losses = Vec::new();
            for tokens in &batch {
                let (items, targets) = corrupt_spans(tokens, &mut rng);
                losses.push(graph.denoising_loss(&items, &targets)?);
            }
            let total = graph.tape.sum_scalars(&losses);
            let loss = graph
                .tape
                .scale_scalar(total, F::from_f64_lossy(1.0 / losses.len() as f64));
            let loss_value = graph.tape.scalar(loss).to_f64().unwrap_or(f64::NAN);
            if step % 50 == 0 || step == steps {
                curve.push((step, loss_value));
            }
            if step == steps {
                break;
            }
            graph.tape.backward(loss);
            let updates = graph.backbone_grads();
            drop(graph);
            self.apply_backbone_grads(&updates, lr);
        }
        self.pretrain_steps += steps;
        self.checksum = self.compute_checksum();
        Ok(PretrainReport {
            loss_curve: curve,
            steps,
            seed,
        })
    }

    fn apply_backbone_grads(&mut self, grads: &BackboneGrads<F>, lr: F) {
        for (row, g) in self.embedding.iter_mut().zip(&grads.embedding) {
            for (w, gi) in row.iter_mut().zip(g) {
                *w = *w - lr * *gi;
            }
        }
        for (layer, glayer) in self
            .enc
            .iter_mut()
            .chain(self.dec.iter_mut())
            .zip(grads.enc.iter().chain(grads.dec.iter()))
        {
            for (m, gm) in layer.mats_mut().into_iter().zip(glayer.iter()) {
                for (w, gi) in m.iter_mut().zip(gm) {
                    *w = *w - lr * *gi;
                }
            }
        }
    }

    /// Converts an assembled prompt into the scorer's input positions and
    /// the positions of the three masks. Errors on layout mismatch or
    /// unknown tokens.
    fn items(&self, prompt: &AssembledPrompt) -> Result<(Vec<Item>, [usize; 3])> {
        let mut items = Vec::new();
        let mut mask_pos = [usize::MAX; 3];
        for element in &prompt.elements {
            match element {
                Element::Discrete(text) => {
                    for id in self.vocab.encode(&self.tokenizer, text)? {
                        items.push(Item::Tok(id));
                    }
                }
                Element::Slot { id, len } => {
                    let expected = self.layout.slot_len(*id);
                    if *len != expected {
                        return Err(Error::LayoutMismatch(format!(
                            "slot {id} has length {len}, scorer expects {expected}"
                        )));
                    }
                    for j in 0..*len {
                        items.push(Item::Prompt(*id, j));
                    }
                }
                Element::Mask(i) => {
                    let sentinel = self.vocab.id(mask_sentinel(*i))?;
                    mask_pos[(*i - 1) as usize] = items.len();
                    items.push(Item::Tok(sentinel));
                }
            }
        }
        if mask_pos.contains(&usize::MAX) {
            return Err(Error::Validation("prompt does not contain all three masks".into()));
        }
        Ok((items, mask_pos))
    }

    /// Number of input positions a prompt occupies after tokenization.
    pub fn sequence_len(&self, prompt: &AssembledPrompt) -> Result<usize> {
        Ok(self.items(prompt)?.0.len())
    }

    /// Loss of one prompt against its gold label, as a plain value. Used by
    /// the finite-difference side of gradient checks.
    pub fn instance_loss(&self, prompt: &AssembledPrompt, gold: Label, form: LossForm) -> Result<F> {
        let mut graph = GraphBuilder::new(self);
        let loss = graph.instance_loss(prompt, gold, form)?;
        Ok(graph.tape.scalar(loss))
    }

    /// Mean loss over a batch and its analytic gradients with respect to
    /// the prompt vectors.
    pub fn batch_prompt_loss_and_grads(
        &self,
        batch: &[(&AssembledPrompt, Label)],
        form: LossForm,
    ) -> Result<(F, PromptGrads<F>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut graph = GraphBuilder::new(self);
        let losses: Vec<NodeId> = batch
            .iter()
            .map(|(prompt, gold)| graph.instance_loss(prompt, *gold, form))
            .collect::<Result<_>>()?;
        let total = graph.tape.sum_scalars(&losses);
        let loss = graph
            .tape
            .scale_scalar(total, F::from_f64_lossy(1.0 / losses.len() as f64));
        graph.tape.backward(loss);
        let value = graph.tape.scalar(loss);
        Ok((value, graph.prompt_grads()))
    }

    /// Gradient-descent update of the prompt vectors only.
    pub fn apply_prompt_grads(&mut self, grads: &PromptGrads<F>, lr: F) {
        for ((slot, idx), g) in grads {
            if let Some(vectors) = self.prompts.get_mut(slot) {
                for (w, gi) in vectors[*idx].iter_mut().zip(g) {
                    *w = *w - lr * *gi;
                }
            }
        }
    }

    /// All prompt coordinates as (slot, vector index, dimension) triples.
    pub fn prompt_coordinates(&self) -> Vec<(u8, usize, usize)> {
        let mut out = Vec::new();
        for (&slot, vectors) in &self.prompts {
            for (idx, v) in vectors.iter().enumerate() {
                for d in 0..v.len() {
                    out.push((slot, idx, d));
                }
            }
        }
        out
    }

    /// Adds `delta` to one prompt coordinate (finite-difference probe).
    pub fn nudge_prompt(&mut self, slot: u8, idx: usize, dim: usize, delta: F) {
        if let Some(vectors) = self.prompts.get_mut(&slot) {
            vectors[idx][dim] += delta;
        }
    }

    pub fn prompt_vectors(&self) -> &BTreeMap<u8, Vec<Vec<F>>> {
        &self.prompts
    }

    pub fn set_prompt_vectors(&mut self, prompts: BTreeMap<u8, Vec<Vec<F>>>) {
        self.prompts = prompts;
    }

    /// Serializes the scorer to a versioned JSON checkpoint. Parameters are
    /// stored as f64, which is exact for both supported precisions.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            dim: self.dim,
            layout: self.layout,
            vocab: self.vocab.tokens().to_vec(),
            embedding: to_f64_rows(&self.embedding),
            encoder: self.enc.iter().map(layer_to_ckpt).collect(),
            decoder: self.dec.iter().map(layer_to_ckpt).collect(),
            prompt_vectors: self
                .prompts
                .iter()
                .map(|(k, v)| (*k, to_f64_rows(v)))
                .collect(),
            backbone_checksum: self.checksum.clone(),
            seed: self.seed,
            pretrain_steps: self.pretrain_steps,
        };
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)
            .map_err(|e| Error::Validation(format!("checkpoint serialization failed: {e}")))
    }

    /// Loads a checkpoint, verifying the version and the backbone checksum.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Validation(format!("checkpoint parse failed: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(ckpt.version));
        }
        let mut scorer = ToyScorer {
            tokenizer: Tokenizer,
            vocab: Vocabulary::from_tokens(ckpt.vocab),
            dim: ckpt.dim,
            embedding: from_f64_rows(&ckpt.embedding),
            enc: ckpt.encoder.iter().map(layer_from_ckpt).collect(),
            dec: ckpt.decoder.iter().map(layer_from_ckpt).collect(),
            prompts: ckpt
                .prompt_vectors
                .iter()
                .map(|(k, v)| (*k, from_f64_rows(v)))
                .collect(),
            layout: ckpt.layout,
            checksum: String::new(),
            seed: ckpt.seed,
            pretrain_steps: ckpt.pretrain_steps,
        };
        scorer.checksum = scorer.compute_checksum();
        if scorer.checksum != ckpt.backbone_checksum {
            return Err(Error::Validation(format!(
                "checkpoint checksum mismatch: stored {}, recomputed {}",
                ckpt.backbone_checksum, scorer.checksum
            )));
        }
        Ok(scorer)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerCkpt {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
    wh: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    dim: usize,
    layout: PromptLayout,
    vocab: Vec<String>,
    embedding: Vec<Vec<f64>>,
    encoder: Vec<LayerCkpt>,
    decoder: Vec<LayerCkpt>,
    prompt_vectors: BTreeMap<u8, Vec<Vec<f64>>>,
    backbone_checksum: String,
    seed: u64,
    pretrain_steps: usize,
}

fn to_f64_rows<F: Scalar>(rows: &[Vec<F>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn from_f64_rows<F: Scalar>(rows: &[Vec<f64>]) -> Vec<Vec<F>> {
    rows.iter()
        .map(|r| r.iter().map(|v| F::from_f64_lossy(*v)).collect())
        .collect()
}

fn layer_to_ckpt<F: Scalar>(layer: &Layer<F>) -> LayerCkpt {
    let conv = |v: &Vec<F>| v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
    LayerCkpt {
        wq: conv(&layer.wq),
        wk: conv(&layer.wk),
        wv: conv(&layer.wv),
        wo: conv(&layer.wo),
        wh: conv(&layer.wh),
        b: conv(&layer.b),
    }
}

fn layer_from_ckpt<F: Scalar>(ckpt: &LayerCkpt) -> Layer<F> {
    let conv = |v: &Vec<f64>| v.iter().map(|x| F::from_f64_lossy(*x)).collect();
    Layer {
        wq: conv(&ckpt.wq),
        wk: conv(&ckpt.wk),
        wv: conv(&ckpt.wv),
        wo: conv(&ckpt.wo),
        wh: conv(&ckpt.wh),
        b: conv(&ckpt.b),
    }
}

/// Convenience wrapper: initialize on the corpus, run span-corruption
/// pretraining, return the frozen scorer and its training log.
pub fn pretrain_toy_backbone<F: Scalar>(
    corpus: &Dataset,
    steps: usize,
    seed: u64,
    layout: &PromptLayout,
) -> Result<(ToyScorer<F>, PretrainReport)> {
    let mut scorer = ToyScorer::init(corpus, layout, DEFAULT_DIM, seed)?;
    let report = scorer.pretrain(corpus, steps, seed)?;
    Ok((scorer, report))
}

/// Sampled span corruption: replaces short spans with sentinel tokens and
/// returns the corrupted stream plus (sentinel position, span tokens)
/// targets. Always corrupts at least one token.
fn corrupt_spans(tokens: &[usize], rng: &mut ChaCha8Rng) -> (Vec<Item>, Vec<(usize, Vec<usize>)>) {
    let mut items = Vec::with_capacity(tokens.len());
    let mut targets = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if targets.len() < SENTINELS.len() && rng.gen::<f64>() < 0.15 {
            let mut span_len = 1;
            while span_len < 3 && i + span_len < tokens.len() && rng.gen::<f64>() < 0.4 {
                span_len += 1;
            }
            targets.push((items.len(), tokens[i..i + span_len].to_vec()));
            items.push(Item::Prompt(u8::MAX, targets.len() - 1)); // placeholder, patched below
            i += span_len;
        } else {
            items.push(Item::Tok(tokens[i]));
            i += 1;
        }
    }
    if targets.is_empty() {
        let pos = rng.gen_range(0..tokens.len());
        targets.push((pos, vec![tokens[pos]]));
        items[pos] = Item::Prompt(u8::MAX, 0);
    }
    (items, targets)
}

/// Builds forward graphs against a scorer's parameters. Parameter leaves
/// are created once per tape, so gradients accumulate across every use,
/// including across instances of a batch.
struct GraphBuilder<'m, F: Scalar> {
    tape: Tape<F>,
    scorer: &'m ToyScorer<F>,
    emb_nodes: Vec<NodeId>,
    enc_mats: Vec<[NodeId; 6]>,
    dec_mats: Vec<[NodeId; 6]>,
    prompt_nodes: BTreeMap<(u8, usize), NodeId>,
}

impl<'m, F: Scalar> GraphBuilder<'m, F> {
    fn new(scorer: &'m ToyScorer<F>) -> Self {
        let mut tape = Tape::new();
        let emb_nodes = scorer
            .embedding
            .iter()
            .map(|row| tape.leaf(row.clone()))
            .collect();
        let layer_nodes = |tape: &mut Tape<F>, layer: &Layer<F>| -> [NodeId; 6] {
            let mats = layer.mats();
            [
                tape.leaf(mats[0].clone()),
                tape.leaf(mats[1].clone()),
                tape.leaf(mats[2].clone()),
                tape.leaf(mats[3].clone()),
                tape.leaf(mats[4].clone()),
                tape.leaf(mats[5].clone()),
            ]
        };
        let enc_mats = scorer.enc.iter().map(|l| layer_nodes(&mut tape, l)).collect();
        let dec_mats = scorer.dec.iter().map(|l| layer_nodes(&mut tape, l)).collect();
        GraphBuilder {
            tape,
            scorer,
            emb_nodes,
            enc_mats,
            dec_mats,
            prompt_nodes: BTreeMap::new(),
        }
    }

    fn prompt_node(&mut self, slot: u8, idx: usize) -> NodeId {
        if let Some(&id) = self.prompt_nodes.get(&(slot, idx)) {
            return id;
        }
        let vector = self.scorer.prompts[&slot][idx].clone();
        let id = self.tape.leaf(vector);
        self.prompt_nodes.insert((slot, idx), id);
        id
    }

    /// Runs the encoder over the item sequence, returning per-position
    /// output nodes.
    fn encode(&mut self, items: &[Item]) -> Vec<NodeId> {
        let dim = self.scorer.dim;
        let scale = F::from_f64_lossy(1.0 / (dim as f64).sqrt());
        let mut h: Vec<NodeId> = items
            .iter()
            .enumerate()
            .map(|(pos, item)| {
                let content = match *item {
                    Item::Tok(id) => self.emb_nodes[id],
                    Item::Prompt(slot, idx) => self.prompt_node(slot, idx),
                };
                let pe = self.tape.leaf(positional_encoding(pos, dim));
                self.tape.add(content, pe)
            })
            .collect();

        for layer_idx in 0..self.enc_mats.len() {
            let [wq, wk, wv, wo, wh, b] = self.enc_mats[layer_idx];
            let keys: Vec<NodeId> = h.iter().map(|&x| self.tape.matvec(wk, x, dim, dim)).collect();
            let values: Vec<NodeId> = h.iter().map(|&x| self.tape.matvec(wv, x, dim, dim)).collect();
            let mut next = Vec::with_capacity(h.len());
            for &x in &h {
                let q = self.tape.matvec(wq, x, dim, dim);
                let scores = self.tape.dot_many(&keys, q, scale);
                let alpha = self.tape.softmax(scores);
                let attended = self.tape.weighted_sum(alpha, &values);
                let mixed = self.tape.matvec(wo, attended, dim, dim);
                let carried = self.tape.matvec(wh, x, dim, dim);
                let summed = self.tape.add(mixed, carried);
                let biased = self.tape.add(summed, b);
                next.push(self.tape.tanh(biased));
            }
            h = next;
        }
        h
    }

    /// Decoder readout at one encoder position: cross-attention over the
    /// encoder outputs, then tied-embedding logits as a log-softmax node.
    fn readout(&mut self, enc_out: &[NodeId], pos: usize) -> NodeId {
        let dim = self.scorer.dim;
        let scale = F::from_f64_lossy(1.0 / (dim as f64).sqrt());
        let mut z = enc_out[pos];
        for layer_idx in 0..self.dec_mats.len() {
            let [wq, wk, wv, wo, wh, b] = self.dec_mats[layer_idx];
            let keys: Vec<NodeId> = enc_out.iter().map(|&x| self.tape.matvec(wk, x, dim, dim)).collect();
            let values: Vec<NodeId> = enc_out.iter().map(|&x| self.tape.matvec(wv, x, dim, dim)).collect();
            let q = self.tape.matvec(wq, z, dim, dim);
            let scores = self.tape.dot_many(&keys, q, scale);
            let beta = self.tape.softmax(scores);
            let attended = self.tape.weighted_sum(beta, &values);
            let mixed = self.tape.matvec(wo, attended, dim, dim);
            let carried = self.tape.matvec(wh, z, dim, dim);
            let summed = self.tape.add(mixed, carried);
            let biased = self.tape.add(summed, b);
            z = self.tape.tanh(biased);
        }
        let logits = self.tape.dot_many(&self.emb_nodes.clone(), z, F::one());
        self.tape.log_softmax(logits)
    }

    /// Log-softmax readouts at the three mask positions of a prompt.
    fn mask_readouts(&mut self, prompt: &AssembledPrompt) -> Result<[NodeId; 3]> {
        let (items, mask_pos) = self.scorer.items(prompt)?;
        let enc_out = self.encode(&items);
        Ok([
            self.readout(&enc_out, mask_pos[0]),
            self.readout(&enc_out, mask_pos[1]),
            self.readout(&enc_out, mask_pos[2]),
        ])
    }

    /// Log geometric-mean score of a candidate word at one mask readout.
    fn word_log_score(&mut self, ls: NodeId, word: &str) -> Result<NodeId> {
        let ids = self.scorer.vocab.encode(&self.scorer.tokenizer, word)?;
        Ok(self.tape.mean_gather(ls, ids))
    }

    /// Differentiable training loss of one prompt against the gold label.
    fn instance_loss(&mut self, prompt: &AssembledPrompt, gold: Label, form: LossForm) -> Result<NodeId> {
        let readouts = self.mask_readouts(prompt)?;
        let map = LabelWordMap;
        let mut per_mask = Vec::with_capacity(3);
        for (k, &ls) in readouts.iter().enumerate() {
            let mask_index = (k + 1) as u8;
            let words = candidate_words(mask_index);
            let m_first = self.word_log_score(ls, words[0])?;
            let m_second = self.word_log_score(ls, words[1])?;
            let lse = self.tape.log_sum_exp(&[m_first, m_second]);
            let gold_word = map.word(gold, mask_index);
            let m_gold = if gold_word == words[0] { m_first } else { m_second };
            per_mask.push((m_gold, lse));
        }
        match form {
            LossForm::PerMaskCe => {
                let terms: Vec<NodeId> = per_mask
                    .iter()
                    .map(|&(m_gold, lse)| self.tape.sub_scalar(lse, m_gold))
                    .collect();
                Ok(self.tape.sum_scalars(&terms))
            }
            LossForm::Eq3Literal => {
                let probs: Vec<NodeId> = per_mask
                    .iter()
                    .map(|&(m_gold, lse)| {
                        let diff = self.tape.sub_scalar(m_gold, lse);
                        self.tape.exp_scalar(diff)
                    })
                    .collect();
                let sum = self.tape.sum_scalars(&probs);
                let mean = self.tape.scale_scalar(sum, F::from_f64_lossy(1.0 / 3.0));
                let log = self.tape.log_scalar(mean);
                Ok(self.tape.scale_scalar(log, -F::one()))
            }
        }
    }

    /// Denoising loss: mean over spans of the mean negative log-likelihood
    /// of the span's tokens at its sentinel position.
    fn denoising_loss(&mut self, items: &[Item], targets: &[(usize, Vec<usize>)]) -> Result<NodeId> {
        // Patch placeholder items with the actual sentinel vocab ids.
        let mut patched = items.to_vec();
        for (span_idx, (pos, _)) in targets.iter().enumerate() {
            let sentinel = self.scorer.vocab.id(SENTINELS[span_idx % SENTINELS.len()])?;
            patched[*pos] = Item::Tok(sentinel);
        }
        let enc_out = self.encode(&patched);
        let mut span_losses = Vec::with_capacity(targets.len());
        for (pos, span_tokens) in targets {
            let ls = self.readout(&enc_out, *pos);
            let mean_ll = self.tape.mean_gather(ls, span_tokens.clone());
            span_losses.push(self.tape.scale_scalar(mean_ll, -F::one()));
        }
        let total = self.tape.sum_scalars(&span_losses);
        Ok(self
            .tape
            .scale_scalar(total, F::from_f64_lossy(1.0 / span_losses.len() as f64)))
    }

    /// Prompt-vector gradients after a backward pass.
    fn prompt_grads(&self) -> PromptGrads<F> {
        self.prompt_nodes
            .iter()
            .map(|(&key, &node)| (key, self.tape.grad(node).to_vec()))
            .collect()
    }

    /// All backbone gradients after a backward pass, in parameter order.
    fn backbone_grads(&self) -> BackboneGrads<F> {
        BackboneGrads {
            embedding: self.emb_nodes.iter().map(|&n| self.tape.grad(n).to_vec()).collect(),
            enc: self
                .enc_mats
                .iter()
                .map(|mats| mats.map(|n| self.tape.grad(n).to_vec()))
                .collect(),
            dec: self
                .dec_mats
                .iter()
                .map(|mats| mats.map(|n| self.tape.grad(n).to_vec()))
                .collect(),
        }
    }
}

struct BackboneGrads<F> {
    embedding: Vec<Vec<F>>,
    enc: Vec<[Vec<F>; 6]>,
    dec: Vec<[Vec<F>; 6]>,
}

impl<F: Scalar> Scorer<F> for ToyScorer<F> {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Toy
    }

    fn backbone_checksum(&self) -> String {
        self.checksum.clone()
    }

    fn layout(&self) -> &PromptLayout {
        &self.layout
    }

    fn score_masks(&self, prompt: &AssembledPrompt) -> Result<[MaskDistribution<F>; 3]> {
        let mut graph = GraphBuilder::new(self);
        let readouts = graph.mask_readouts(prompt)?;
        let mut out = Vec::with_capacity(3);
        for (k, &ls) in readouts.iter().enumerate() {
            let mask_index = (k + 1) as u8;
            let words = candidate_words(mask_index);
            let mut weights = [F::zero(); 2];
            for (slot, word) in words.iter().enumerate() {
                let node = graph.word_log_score(ls, word)?;
                weights[slot] = graph.tape.scalar(node).exp();
            }
            out.push(MaskDistribution::from_weights(mask_index, weights)?);
        }
        Ok([out[0].clone(), out[1].clone(), out[2].clone()])
    }

    fn embeddings(&self) -> Result<EmbeddingTable<F>> {
        Ok(EmbeddingTable {
            vocab: self.vocab.tokens().to_vec(),
            vectors: self.embedding.clone(),
            prompt_vectors: self.prompts.clone(),
        })
    }
}
