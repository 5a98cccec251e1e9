"""matbridge: MATLAB hyperspectral benchmark converter.

Reads .mat cube + ground-truth pairs (v5 and v7.3/HDF5) and emits .hsc
cube files and .hsl label files, plus a descriptor report of per-class
labeled counts.
"""

from .core import (
    BridgeError,
    MatPair,
    convert,
    inspect_pair,
    load_mat_array,
    load_pair,
    parse_band_list,
    read_remap,
    write_hsc,
    write_hsl,
)

__all__ = [
    "BridgeError",
    "MatPair",
    "convert",
    "inspect_pair",
    "load_mat_array",
    "load_pair",
    "parse_band_list",
    "read_remap",
    "write_hsc",
    "write_hsl",
]
