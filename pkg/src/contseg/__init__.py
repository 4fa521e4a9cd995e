"""contseg: a desk-scale continual-learning laboratory for multi-class
semantic segmentation on synthetic organ phantoms.

The numeric core is a minimal reverse-mode tape over numpy (``autodiff``),
a micro encoder-decoder (``backbone``), and per-class hypernetwork heads
(``heads``).  ``engine`` runs the class-incremental trajectory with
pseudo-label supervision for old classes; ``distill`` holds the baseline
distillation losses; ``metrics`` and ``flops`` do the reporting and the
analytic cost model.  ``phantoms`` generates the staged datasets, and
``cli`` wires everything into reproducible experiments.
"""

from . import (autodiff, backbone, config, distill, embeddings, engine,
               flops, heads, metrics, phantoms, rng)

__all__ = ["autodiff", "backbone", "config", "distill", "embeddings",
           "engine", "flops", "heads", "metrics", "phantoms", "rng"]

__version__ = "0.1.0"
