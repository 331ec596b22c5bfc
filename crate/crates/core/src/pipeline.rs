//! End-to-end wiring: lake, variants, hypergraph, model, embeddings.

use std::path::PathBuf;
use std::time::Duration;

use crate::augment::{
    build_join_key_entities, generate_all, Abbreviations, AugmentError, Augmenter, FileAugmenter, HttpAugmenter,
    RuleAugmenter, VariantSet,
};
use crate::autodiff::Mat;
use crate::config::{AugmentBackend, AugmentConfig, RunConfig};
use crate::featurize::{FeatureInputs, FeaturizeError, Vocab, WordVectors};
use crate::hin::{HinError, HinStructure};
use crate::hypergraph::{join_adjacency, laplacian_pe, Hypergraph, HypergraphError};
use crate::lake::{Lake, LakeError};
use crate::model::{CheckpointError, Encoder, ModelParams};
use crate::search::SearchError;
use crate::train::{train_epochs, TrainData, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Lake(#[from] LakeError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Hypergraph(#[from] HypergraphError),
    #[error(transparent)]
    Hin(#[from] HinError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

pub fn abbreviations(cfg: &AugmentConfig) -> Result<Abbreviations, AugmentError> {
    let mut abbr = Abbreviations::default();
    if let Some(path) = &cfg.abbreviations {
        abbr.extend_from_csv(path)?;
    }
    Ok(abbr)
}

pub fn make_augmenter(cfg: &AugmentConfig) -> Result<Option<Box<dyn Augmenter>>, AugmentError> {
    Ok(match cfg.backend {
        AugmentBackend::None => None,
        AugmentBackend::Rule => Some(Box::new(RuleAugmenter {
            abbreviations: abbreviations(cfg)?,
        })),
        AugmentBackend::File => {
            let path = cfg.replay.as_ref().ok_or(AugmentError::Missing("file", "augment.replay"))?;
            Some(Box::new(FileAugmenter::load(path)?))
        }
        AugmentBackend::Llm => {
            let endpoint = cfg.endpoint.clone().ok_or(AugmentError::Missing("llm", "augment.endpoint"))?;
            let mut h = HttpAugmenter::new(endpoint, cfg.model.clone().unwrap_or_default());
            h.temperature = cfg.temperature;
            h.top_p = cfg.top_p;
            h.max_variants = cfg.max_variants;
            h.timeout = Duration::from_secs(cfg.timeout_secs);
            Some(Box::new(h))
        }
    })
}

/// Variant sets of every column, or none when augmentation is off.
pub fn variant_sets(lake: &Lake, cfg: &AugmentConfig) -> Result<Vec<VariantSet>, AugmentError> {
    let Some(aug) = make_augmenter(cfg)? else {
        return Ok(Vec::new());
    };
    let abbr = abbreviations(cfg)?;
    Ok(generate_all(&lake.columns, aug.as_ref(), &abbr, cfg.max_variants, cfg.in_flight))
}

/// Everything derived from the lake before training.
pub struct Prepared {
    pub vocab: Vocab,
    pub words: WordVectors,
    pub inputs: FeatureInputs,
    pub hypergraph: Hypergraph,
    pub pe: Mat,
    pub structure: HinStructure,
}

pub fn build_hypergraph(lake: &Lake, variants: &[VariantSet], singletons: bool) -> Result<Hypergraph, HypergraphError> {
    let table_of = lake.columns.table_indices();
    if singletons {
        return Ok(Hypergraph::singletons(table_of));
    }
    let partition = build_join_key_entities(lake.columns.len(), variants, &lake.pairs);
    Hypergraph::from_repo(&lake.columns, &partition)
}

pub fn positional_encoding(lake: &Lake, k: usize) -> Result<Mat, HypergraphError> {
    let a = join_adjacency(lake.columns.len(), &lake.pairs);
    Ok(laplacian_pe(&a, k)?.vectors)
}

pub fn prepare(lake: &Lake, cfg: &RunConfig, variants: &[VariantSet]) -> Result<Prepared, PipelineError> {
    if lake.columns.is_empty() {
        return Err(PipelineError::Invalid("the lake has no textual columns".into()));
    }
    let hypergraph = build_hypergraph(lake, variants, cfg.hypergraph.singletons)?;
    let pe = positional_encoding(lake, cfg.hin.pe_dim)?;
    prepare_with(lake, cfg, hypergraph, pe)
}

/// Like [`prepare`] with a given hypergraph and positional encoding.
pub fn prepare_with(lake: &Lake, cfg: &RunConfig, hypergraph: Hypergraph, pe: Mat) -> Result<Prepared, PipelineError> {
    let words = match &cfg.featurizer.word_vectors {
        Some(path) => WordVectors::load(path)?,
        None => WordVectors::hashing(cfg.featurizer.hash_dim),
    };
    let vocab = Vocab::from_repo(&lake.columns, cfg.featurizer.vocab_size);
    let inputs = FeatureInputs::build(&lake.columns, &vocab, &words, cfg.featurizer.max_cells);
    let structure = HinStructure::new(&hypergraph, pe.clone());
    Ok(Prepared {
        vocab,
        words,
        inputs,
        hypergraph,
        pe,
        structure,
    })
}

pub fn init_model(lake: &Lake, prepared: &Prepared, cfg: &RunConfig) -> ModelParams {
    ModelParams::init(
        cfg.seed,
        &cfg.featurizer,
        &cfg.hin,
        prepared.vocab.len(),
        prepared.words.dim(),
        lake.columns.table_count(),
    )
}

/// Fresh model trained on the lake's train pairs.
pub fn train_model(lake: &Lake, prepared: &Prepared, cfg: &RunConfig) -> Result<(ModelParams, Vec<f64>), PipelineError> {
    let mut params = init_model(lake, prepared, cfg);
    let data = TrainData::new(&prepared.inputs, &prepared.structure, &lake.pairs, Encoder::Hin);
    let history = train_epochs(&mut params, &data, &cfg.train, cfg.seed)?;
    Ok((params, history))
}

pub fn embed(params: &ModelParams, prepared: &Prepared, encoder: Encoder) -> Result<Mat, HinError> {
    params.embed(&prepared.inputs, &prepared.structure, encoder)
}
