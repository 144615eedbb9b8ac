"""CLI commands, one module per sub-command."""

from hypertab.commands import (
    build_cache,
    dedupe,
    evaluate,
    fit_predict,
    gradcheck,
    history,
    hpo_sample,
    meta_train,
    synth,
)

COMMANDS = [meta_train, fit_predict, evaluate, dedupe, gradcheck, hpo_sample, build_cache, synth, history]

__all__ = [
    "COMMANDS",
    "build_cache",
    "dedupe",
    "evaluate",
    "fit_predict",
    "gradcheck",
    "history",
    "hpo_sample",
    "meta_train",
    "synth",
]
