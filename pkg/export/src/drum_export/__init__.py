"""Embedding corpus exporter for open-source text encoders."""

from ._version import __version__
from .corpus_io import ExportRecord, read_corpus, write_corpus
from .encoders import ENCODERS, EncoderInfo, load_encoder
from .export import ExportSpec, export, parse_prompts

__all__ = [
    "ENCODERS",
    "EncoderInfo",
    "ExportRecord",
    "ExportSpec",
    "export",
    "load_encoder",
    "parse_prompts",
    "read_corpus",
    "write_corpus",
]
