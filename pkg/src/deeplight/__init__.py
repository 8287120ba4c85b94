"""deeplight: multi-modality x8 nighttime-light super-resolution at desk scale."""

__version__ = "0.1.0"
