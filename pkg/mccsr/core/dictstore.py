"""
Module that reads and writes trained dictionaries.

Binary layout, little-endian: magic ``MCSR``, version (u32), then for each
of LR r, g, b and HR r, g, b: rows (u32), cols (u32) and a row-major
float64 payload; finally the metadata triple patch_side, scale and feature
count (u32 each).
"""

import logging
import struct

import numpy as np

from .errors import ColorSRError, DictionaryFormatError, DictionaryMismatchError
from .operators import CHANNELS, BlockDiagonalDictionary

logger = logging.getLogger(__name__)

MAGIC = b"MCSR"
VERSION = 1
_U32 = struct.Struct("<I")
_SHAPE = struct.Struct("<II")
_METADATA = struct.Struct("<III")


class DictionaryBundle:
    """
    Trained LR/HR dictionaries together with the geometry they fit.

    Attributes:
        d_l (BlockDiagonalDictionary): LR feature dictionary.
        d_h (BlockDiagonalDictionary): HR patch dictionary.
        patch_side (int): Patch side on the upscaled grid.
        scale (int): Magnification the dictionaries were trained for.
    """

    def __init__(self, d_l, d_h, patch_side, scale):
        self.d_l = d_l
        self.d_h = d_h
        self.patch_side = int(patch_side)
        self.scale = int(scale)

    @property
    def feature_count(self):
        """LR feature length per channel (q)."""
        return self.d_l.rows

    def check_compatible(self, patch_side, scale):
        """
        Verify that the bundle fits a reconstruction configuration.

        Raises:
            DictionaryMismatchError: On a patch side, scale, feature count
                or atom count mismatch.
        """
        if self.patch_side != patch_side:
            raise DictionaryMismatchError("patch side", self.patch_side, patch_side)
        if self.scale != scale:
            raise DictionaryMismatchError("scale", self.scale, scale)
        if self.d_h.rows != patch_side * patch_side:
            raise DictionaryMismatchError("HR rows", self.d_h.rows, patch_side ** 2)
        if self.feature_count != 4 * patch_side * patch_side:
            raise DictionaryMismatchError(
                "feature count", self.feature_count, 4 * patch_side ** 2
            )
        if self.d_l.atoms != self.d_h.atoms:
            raise DictionaryMismatchError("HR atoms", self.d_h.atoms, self.d_l.atoms)

    def __repr__(self):
        return (
            f"DictionaryBundle(side={self.patch_side}, scale={self.scale}, "
            f"atoms={self.d_l.atoms})"
        )


def save_dictionaries(bundle, path):
    """Write a DictionaryBundle to ``path`` in the binary layout."""
    chunks = [MAGIC, _U32.pack(VERSION)]
    for dictionary in (bundle.d_l, bundle.d_h):
        for block in dictionary.blocks:
            rows, cols = block.shape
            chunks.append(_SHAPE.pack(rows, cols))
            chunks.append(np.ascontiguousarray(block, dtype="<f8").tobytes(order="C"))
    chunks.append(_METADATA.pack(bundle.patch_side, bundle.scale, bundle.feature_count))
    with open(path, "wb") as handle:
        handle.write(b"".join(chunks))
    logger.info("saved dictionaries to %s", path)


def load_dictionaries(path):
    """
    Read a DictionaryBundle from ``path``.

    Raises:
        DictionaryFormatError: On a bad magic, version, truncated payload,
            trailing bytes, blocks of unequal shape or inconsistent metadata.
        OSError: If the file cannot be read.
    """
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != MAGIC:
        raise DictionaryFormatError(path, "bad magic")
    offset = 4
    try:
        (version,) = _U32.unpack_from(data, offset)
        offset += _U32.size
        if version != VERSION:
            raise DictionaryFormatError(path, f"unsupported version {version}")
        blocks = []
        for _ in range(2 * CHANNELS):
            rows, cols = _SHAPE.unpack_from(data, offset)
            offset += _SHAPE.size
            size = rows * cols * 8
            if offset + size > len(data):
                raise DictionaryFormatError(path, "truncated payload")
            block = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset)
            blocks.append(block.reshape(rows, cols).astype(np.float64))
            offset += size
        patch_side, scale, feature_count = _METADATA.unpack_from(data, offset)
        offset += _METADATA.size
    except struct.error as error:
        raise DictionaryFormatError(path, "truncated header") from error
    if offset != len(data):
        raise DictionaryFormatError(path, "trailing bytes")
    try:
        d_l = BlockDiagonalDictionary(blocks[:CHANNELS])
        d_h = BlockDiagonalDictionary(blocks[CHANNELS:])
    except ColorSRError as error:
        raise DictionaryFormatError(path, str(error)) from error
    if d_l.rows != feature_count:
        raise DictionaryFormatError(path, "feature count disagrees with LR rows")
    return DictionaryBundle(d_l, d_h, patch_side, scale)
