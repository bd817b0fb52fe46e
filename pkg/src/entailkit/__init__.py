"""Workbench for building entailment trees with a human in the loop:
retrieval over a fact corpus, active sampling of hard negatives, adapter
fine-tuning, ranking metrics, and an annotation service."""

__version__ = "0.1.0"
