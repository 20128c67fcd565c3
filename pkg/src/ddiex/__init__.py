"""Drug-drug interaction extraction from structured product labels.

The package covers the full pipeline at desk scale: a span-exact annotation
model, corpus serialization and synthesis, interaction-type-aware IOB
tagging, a from-scratch reverse-mode neural core, the two-branch sequence
model, interleaved multi-task training with outcome bootstrapping,
inference post-rules, voting ensembles, and the span-set evaluator.
"""

__version__ = "0.1.0"
