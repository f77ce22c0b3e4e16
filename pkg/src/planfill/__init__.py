"""planfill: content-planned text generation with template mask-and-fill
and iterative refinement, at desk scale."""

__version__ = "0.1.0"
