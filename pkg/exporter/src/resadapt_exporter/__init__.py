"""resadapt-exporter: image folders + prompts -> resadapt data files."""

from .encoders import ClipEncoder, TinyColorEncoder, get_encoder
from .errors import EncoderLoadFailure, ExporterError, JobInvalid
from .export import ExportJob, export, render_prompt

__version__ = "0.1.0"

__all__ = [
    "ClipEncoder",
    "EncoderLoadFailure",
    "ExportJob",
    "ExporterError",
    "JobInvalid",
    "TinyColorEncoder",
    "export",
    "get_encoder",
    "render_prompt",
]
