"""Training-free multi-label inference over frozen patch embeddings.

Thin bindings over the C++ core: read and write PIAA/PIAC files, fit the
closed-form patch classifier, score images and evaluate rankings.
"""

from ._core import (
    EmbeddingSet,
    GdaClassifier,
    PiaaError,
    TextPrototypeSet,
    ablation,
    average_precision,
    evaluate,
    fit,
    infer,
    read_classifier,
    read_embeddings,
    read_prototypes,
    set_thread_count,
    synth,
    thread_count,
    write_classifier,
    write_embeddings,
    write_prototypes,
)

__all__ = [
    "EmbeddingSet",
    "GdaClassifier",
    "PiaaError",
    "TextPrototypeSet",
    "ablation",
    "average_precision",
    "evaluate",
    "fit",
    "infer",
    "read_classifier",
    "read_embeddings",
    "read_prototypes",
    "set_thread_count",
    "synth",
    "thread_count",
    "write_classifier",
    "write_embeddings",
    "write_prototypes",
]
