"""Bridge from deep-learning framework dumps to the CFQA toolkit's formats."""

from .convert import ExportError, ExportJob, export_feature, export_predictions, load_dump
from .formats import cft_bytes, fnv1a_64, write_cft, write_logits_csv, write_pgm

__version__ = "0.1.0"
