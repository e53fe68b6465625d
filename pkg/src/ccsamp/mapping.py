"""Mapping between coded messages and block-sparse index vectors.

Each section of a coded message selects exactly one index (its MSB-first
integer value) inside a block of size 2^v; the concatenation of those
one-hot blocks is the vector that gets pushed through the sensing operator.
Sums of user vectors stay section-sparse, which is what the inner decoder
estimates.
"""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatch
from .tree import CodedMessage, TreeCodeConfig, bits_to_int, int_to_bits


def index_map(block) -> np.ndarray:
    """One-hot vector of length 2^v with the 1 at the block's MSB-first value."""
    block = np.asarray(block, dtype=np.uint8).ravel()
    out = np.zeros(1 << block.size, dtype=np.float64)
    out[bits_to_int(block)] = 1.0
    return out


def assemble(msg: CodedMessage, config: TreeCodeConfig) -> np.ndarray:
    """Concatenate the per-section one-hot blocks of one coded message."""
    if len(msg.blocks) != config.num_sections:
        raise LengthMismatch(
            f"message has {len(msg.blocks)} blocks, expected {config.num_sections}"
        )
    out = np.zeros(config.total_size, dtype=np.float64)
    for sec in range(1, config.num_sections + 1):
        block = msg.blocks[sec - 1]
        if block.size != config.length(sec):
            raise LengthMismatch(f"block {sec} has the wrong width")
        out[config.section_offsets[sec - 1] + bits_to_int(block)] = 1.0
    return out


def disassemble(vector, config: TreeCodeConfig) -> CodedMessage:
    """Invert :func:`assemble`; requires exactly one nonzero per section."""
    vector = np.asarray(vector, dtype=np.float64).ravel()
    if vector.size != config.total_size:
        raise LengthMismatch(
            f"vector has length {vector.size}, expected {config.total_size}"
        )
    blocks = []
    for sec in range(1, config.num_sections + 1):
        seg = vector[config.section_slice(sec)]
        hot = np.flatnonzero(seg)
        if hot.size != 1:
            raise LengthMismatch(
                f"section {sec} has {hot.size} nonzero entries, expected 1"
            )
        blocks.append(int_to_bits(int(hot[0]), config.length(sec)))
    return CodedMessage(blocks)


def superpose(vectors, total_size: int) -> np.ndarray:
    """Entrywise sum of user vectors (zero vector when the list is empty)."""
    out = np.zeros(int(total_size), dtype=np.float64)
    for vec in vectors:
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != out.size:
            raise LengthMismatch(
                f"vector of length {vec.size} does not match {out.size}"
            )
        out += vec
    return out


def top_k_sections(vector, config: TreeCodeConfig, section: int,
                   k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and weights of the k largest entries within one section.

    Ties break toward the lower index; indices are local to the section.
    """
    vector = np.asarray(vector, dtype=np.float64).ravel()
    if vector.size != config.total_size:
        raise LengthMismatch(
            f"vector has length {vector.size}, expected {config.total_size}"
        )
    seg = vector[config.section_slice(section)]
    # stable sort on the negated weights keeps lower indices first among ties
    order = np.argsort(-seg, kind="stable")[:k]
    return order.astype(np.int64), seg[order]
