"""Writer for the engine's dataset interchange format.

Implemented independently from the engine so the byte layout itself is the
contract: magic "DQADFMAP", u16 version, u32 H/W/C, row-major float32
little-endian features, then one mask byte per position. The manifest is a
single JSON document listing {path, kind, split, H, W, C} per file.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .errors import ExportInputError

MAGIC = b"DQADFMAP"
VERSION = 1


def _atomic_write(path, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_feature_file(path, features: np.ndarray, mask: np.ndarray):
    features = np.ascontiguousarray(features, dtype=np.float32)
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    if features.ndim != 3:
        raise ExportInputError(f"features must be (H, W, C), got {features.shape}")
    h, w, c = features.shape
    if mask.shape != (h, w):
        raise ExportInputError(f"mask {mask.shape} does not match grid {(h, w)}")
    header = struct.pack("<8sHIII", MAGIC, VERSION, h, w, c)
    _atomic_write(path, header + features.astype("<f4").tobytes(order="C") + mask.tobytes(order="C"))


def write_manifest(directory, entries):
    doc = {"version": 1, "entries": entries}
    _atomic_write(os.path.join(directory, "manifest.json"), json.dumps(doc, indent=2).encode())
