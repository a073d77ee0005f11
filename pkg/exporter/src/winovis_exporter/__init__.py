"""Cross-attention exporter for the winovis evaluation engine.

Runs a text-to-image diffusion pipeline with attention hooks (or a
deterministic stub) and writes the engine's WVHM/WVAS files.
"""
from .aggregation import aggregate, upscale
from .backends import Capture, DiffusersBackend, StubBackend
from .formats import FormatError, pack_bundle, pack_stack, unpack_bundle, unpack_stack
from .jobs import ExportJob, export_run, merge_caption_flags

__version__ = "0.1.0"

__all__ = [
    "aggregate",
    "upscale",
    "Capture",
    "DiffusersBackend",
    "StubBackend",
    "FormatError",
    "pack_bundle",
    "pack_stack",
    "unpack_bundle",
    "unpack_stack",
    "ExportJob",
    "export_run",
    "merge_caption_flags",
]
