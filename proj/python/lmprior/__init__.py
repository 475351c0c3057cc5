"""Python access to the LM-prior translation lab.

Commands take a dict of config keys (the same keys as the key = value
files) and return the JSON summary as Python objects.
"""

from ._lmprior import (
    ConfigError,
    InvalidInput,
    NumericalError,
    UsageError,
    analyze_entropy,
    corpus_bleu,
    default_config,
    evaluate,
    gen_toy,
    lr_schedule,
    objective_loss,
    parse_config,
    postnorm_combine,
    resolve_config,
    run_cli,
    softmax,
    step_score,
    sweep,
    toy_target,
    train_lm,
    train_tm,
    translate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
