from .store import DatasetFormatError, load_dataset, read_pgm, save_dataset, write_pgm
from .synth import LabeledImage, SynthConfig, generate, generate_one

__all__ = [
    "DatasetFormatError",
    "LabeledImage",
    "SynthConfig",
    "generate",
    "generate_one",
    "load_dataset",
    "read_pgm",
    "save_dataset",
    "write_pgm",
]
