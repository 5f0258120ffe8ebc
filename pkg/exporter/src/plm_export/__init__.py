"""Frozen-PLM text embedding exporter for clinical corpora (NLAEMB1 output)."""

__version__ = "0.1.0"

DEFAULT_MODEL = "dmis-lab/biobert-base-cased-v1.2"
