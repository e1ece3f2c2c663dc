"""hayrag: haystack-style multi-image QA benchmarks, an evaluation
harness with pluggable answerers, and a toy retrieval filter trained
with manual backpropagation."""

__version__ = "0.1.0"
