"""Synthetic multi-modality scenes, raster persistence, dataset manifests."""

from .dlt import read_bundle, read_raster, write_bundle, write_raster
from .manifest import (
    DatasetManifest,
    generate_dataset,
    make_manifest,
    read_manifest,
    write_manifest,
)
from .synth import ModalityBundle, SceneSpec, degrade, generate_scene

__all__ = [
    "DatasetManifest",
    "ModalityBundle",
    "SceneSpec",
    "degrade",
    "generate_dataset",
    "generate_scene",
    "make_manifest",
    "read_bundle",
    "read_manifest",
    "read_raster",
    "write_bundle",
    "write_manifest",
    "write_raster",
]
