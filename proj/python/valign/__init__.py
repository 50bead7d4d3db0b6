"""Python access to the valign core: chunking, prompt rendering, alignment losses, metrics and win rates."""

from ._valign import (
    ConfigError,
    InputError,
    MissingArtifactError,
    ValignError,
    bootstrap_ci,
    chunk_text,
    corpus_bleu,
    dpo_batch_loss,
    dpo_gradient,
    dpo_loss,
    embed_f1,
    normalize_text,
    parse_verdict,
    render_template,
    retrieve,
    rouge_scores,
    sft_nll,
    sigmoid,
    softplus,
    tokenize_13a,
    trainer_config,
    validate_config,
    winrates_from_transcript,
)

__all__ = [
    "ConfigError",
    "InputError",
    "MissingArtifactError",
    "ValignError",
    "bootstrap_ci",
    "chunk_text",
    "corpus_bleu",
    "dpo_batch_loss",
    "dpo_gradient",
    "dpo_loss",
    "embed_f1",
    "normalize_text",
    "parse_verdict",
    "render_template",
    "retrieve",
    "rouge_scores",
    "sft_nll",
    "sigmoid",
    "softplus",
    "tokenize_13a",
    "trainer_config",
    "validate_config",
    "winrates_from_transcript",
]
