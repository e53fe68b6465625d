"""Outer code: ring-valued parities over payload sub-blocks.

A ``w``-bit payload is split across ``L`` sections; every section is either
pure information or a parity.  A parity section holds the modular sum
(mod 2^v) of binary matrix products of its source sections, read MSB-first
as integers.  Because the parity of a sum of residues is a sum in Z/2^v Z,
soft information propagates through circular convolutions, which are
evaluated here with FFTs; an O(N^2) direct convolution is kept alongside as
an independent cross-check for small section sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CcsAmpError,
    DanglingEdge,
    EmptyResult,
    InconsistentLengths,
    LengthMismatch,
    ZeroMass,
)

# Hard ceiling on the number of rows materialised by one cartesian join
# inside prune_and_stitch; prevents accidental memory blow-ups when a huge
# survivor budget meets a parity with many independent sources.
MAX_JOIN_ROWS = 40_000_000


# ---------------------------------------------------------------------------
# Bit <-> integer conversions (MSB-first everywhere)
# ---------------------------------------------------------------------------

def bits_to_int(bits) -> int:
    """Read a 0/1 vector MSB-first as a non-negative integer."""
    bits = np.asarray(bits)
    if bits.ndim != 1:
        raise LengthMismatch(f"expected a 1-D bit vector, got shape {bits.shape}")
    weights = np.left_shift(1, np.arange(bits.size - 1, -1, -1), dtype=np.int64)
    return int(bits.astype(np.int64) @ weights)


def ints_to_bits(values, width: int) -> np.ndarray:
    """Expand integers into MSB-first 0/1 rows of the given width."""
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8)


def int_to_bits(value: int, width: int) -> np.ndarray:
    """Expand one integer into an MSB-first 0/1 vector of the given width."""
    return ints_to_bits(np.int64(value), width)


# ---------------------------------------------------------------------------
# Code configuration
# ---------------------------------------------------------------------------

@dataclass
class TreeCodeConfig:
    """Static layout of the outer code.

    Sections are numbered 1..L.  ``info_sections`` lists the sections that
    carry payload bits (ascending); every other section is a parity whose
    sources are given by ``parity_graph``.
    """

    section_lengths: tuple[int, ...]
    info_sections: tuple[int, ...]
    parity_graph: dict[int, tuple[int, ...]]

    @property
    def num_sections(self) -> int:
        return len(self.section_lengths)

    @property
    def parity_sections(self) -> tuple[int, ...]:
        info = set(self.info_sections)
        return tuple(s for s in range(1, self.num_sections + 1) if s not in info)

    @property
    def payload_bits(self) -> int:
        return sum(self.length(s) for s in self.info_sections)

    @property
    def parity_bits(self) -> int:
        return sum(self.length(s) for s in self.parity_sections)

    def length(self, section: int) -> int:
        return self.section_lengths[section - 1]

    def size(self, section: int) -> int:
        """Number of indices (2^v) spanned by a section."""
        return 1 << self.section_lengths[section - 1]

    @property
    def section_sizes(self) -> tuple[int, ...]:
        return tuple(1 << v for v in self.section_lengths)

    @property
    def section_offsets(self) -> tuple[int, ...]:
        offs = np.concatenate([[0], np.cumsum(self.section_sizes)])
        return tuple(int(o) for o in offs[:-1])

    @property
    def total_size(self) -> int:
        """Length of the concatenated one-hot vector (sum of 2^v)."""
        return int(sum(self.section_sizes))

    def section_slice(self, section: int) -> slice:
        off = self.section_offsets[section - 1]
        return slice(off, off + self.size(section))

    def edges(self) -> list[tuple[int, int]]:
        """(source, parity) pairs in deterministic order."""
        out = []
        for parity in sorted(self.parity_graph):
            for src in self.parity_graph[parity]:
                out.append((src, parity))
        return out

    def to_json(self) -> dict:
        return {
            "section_lengths": list(self.section_lengths),
            "info_sections": list(self.info_sections),
            "parity_graph": {str(p): list(m) for p, m in sorted(self.parity_graph.items())},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TreeCodeConfig":
        graph = {int(p): tuple(m) for p, m in doc["parity_graph"].items()}
        cfg = build_config(
            sum(doc["section_lengths"][s - 1] for s in doc["info_sections"]),
            doc["section_lengths"],
            doc["info_sections"],
            graph,
        )
        return cfg


def build_config(payload_bits, section_lengths, info_sections, parity_graph) -> TreeCodeConfig:
    """Validate and freeze a code layout.

    Raises InconsistentLengths if the info sections do not add up to
    ``payload_bits`` and DanglingEdge for malformed parity graphs.
    """
    lengths = tuple(int(v) for v in section_lengths)
    if not lengths:
        raise InconsistentLengths("need at least one section")
    if any(v < 1 for v in lengths):
        raise InconsistentLengths(f"section lengths must be positive, got {lengths}")
    num = len(lengths)

    info = tuple(int(s) for s in info_sections)
    if not info:
        raise InconsistentLengths("need at least one information section")
    if len(set(info)) != len(info) or any(not 1 <= s <= num for s in info):
        raise DanglingEdge(f"information sections out of range or repeated: {info}")
    info = tuple(sorted(info))

    got = sum(lengths[s - 1] for s in info)
    if got != int(payload_bits):
        raise InconsistentLengths(
            f"information sections carry {got} bits, expected {payload_bits}"
        )

    parity = tuple(s for s in range(1, num + 1) if s not in set(info))
    graph = {int(p): tuple(sorted(int(j) for j in members))
             for p, members in parity_graph.items()}
    for p in parity:
        if p not in graph:
            raise DanglingEdge(f"parity section {p} has no sources")
    for p, members in graph.items():
        if p not in parity:
            raise DanglingEdge(f"graph key {p} is not a parity section")
        if not members:
            raise DanglingEdge(f"parity section {p} has an empty source set")
        bad = [j for j in members if j not in set(info)]
        if bad:
            raise DanglingEdge(f"parity section {p} cites non-information sources {bad}")
        if len(set(members)) != len(members):
            raise DanglingEdge(f"parity section {p} repeats sources {members}")

    return TreeCodeConfig(lengths, info, graph)


# Section graph used throughout the evaluation runs: 8 information sections
# and 8 parities, 16 bits each, in two stitching levels.
_GRAPH_16 = {
    3: (1, 2), 6: (4, 5), 9: (7, 8), 12: (10, 11),
    13: (1, 7), 14: (4, 10), 15: (2, 5, 11), 16: (8, 11),
}

# Variant with two extra parity sections for heavily loaded channels; the
# added sources spread across both halves of the first stitching level.
_GRAPH_18 = {**_GRAPH_16, 17: (1, 4, 10), 18: (2, 7, 8)}


def _preset_paper16() -> TreeCodeConfig:
    return build_config(128, (16,) * 16, (1, 2, 4, 5, 7, 8, 10, 11), _GRAPH_16)


def _preset_paper18() -> TreeCodeConfig:
    return build_config(128, (16,) * 18, (1, 2, 4, 5, 7, 8, 10, 11), _GRAPH_18)


def _preset_toy4() -> TreeCodeConfig:
    # Small rate-1/2 layout for fast end-to-end tests: two info sections
    # protected by two independent parities.
    return build_config(16, (8, 8, 8, 8), (1, 2), {3: (1, 2), 4: (1, 2)})


PRESETS = {
    "paper16": _preset_paper16,
    "paper18": _preset_paper18,
    "toy4": _preset_toy4,
}


def preset(name: str) -> TreeCodeConfig:
    """Return a named built-in code layout."""
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}, have {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# Parity generators
# ---------------------------------------------------------------------------

@dataclass
class GeneratorSet:
    """Binary generator matrices, one per (source, parity) edge.

    ``packed`` caches each matrix as per-row MSB-first integers so that the
    GF(2) product ``bits @ G`` followed by MSB-first readout collapses into
    an XOR of packed rows selected by the source bits.
    """

    seed: int | None
    matrices: dict[tuple[int, int], np.ndarray]
    packed: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.packed:
            for edge, mat in self.matrices.items():
                width = mat.shape[1]
                weights = np.left_shift(1, np.arange(width - 1, -1, -1), dtype=np.int64)
                self.packed[edge] = mat.astype(np.int64) @ weights

    @classmethod
    def from_matrices(cls, matrices, seed=None) -> "GeneratorSet":
        return cls(seed=seed, matrices=dict(matrices))


def sample_generators(config: TreeCodeConfig, seed: int) -> GeneratorSet:
    """Draw fair-coin generator matrices for every edge of the parity graph.

    The draw order is fixed (edges sorted by parity, then source) so a seed
    fully determines the code.
    """
    rng = np.random.default_rng(seed)
    matrices = {}
    for parity in sorted(config.parity_graph):
        for src in config.parity_graph[parity]:
            shape = (config.length(src), config.length(parity))
            matrices[(src, parity)] = rng.integers(0, 2, size=shape, dtype=np.uint8)
    return GeneratorSet.from_matrices(matrices, seed=seed)


def edge_residues(gens: GeneratorSet, src: int, parity: int, values,
                  src_width: int) -> np.ndarray:
    """Map source-section values through one generator edge.

    Returns ``[bits(value) @ G]`` read MSB-first, vectorised over ``values``.
    Implemented as an XOR-fold of packed generator rows picked out by the
    bits of each value, which is identical to the GF(2) matrix product.
    """
    packed = gens.packed[(src, parity)]
    values = np.asarray(values, dtype=np.int64)
    out = np.zeros_like(values)
    for i in range(src_width):
        bit = (values >> (src_width - 1 - i)) & 1
        out ^= bit * packed[i]
    return out


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

@dataclass
class CodedMessage:
    """One codeword as a list of per-section bit blocks."""

    blocks: list[np.ndarray]

    def values(self) -> np.ndarray:
        """Per-section integers, MSB-first."""
        return np.array([bits_to_int(b) for b in self.blocks], dtype=np.int64)


def encode(payload, config: TreeCodeConfig, gens: GeneratorSet) -> CodedMessage:
    """Encode a w-bit payload into L per-section blocks."""
    payload = np.asarray(payload, dtype=np.uint8).ravel()
    if payload.size != config.payload_bits:
        raise LengthMismatch(
            f"payload has {payload.size} bits, expected {config.payload_bits}"
        )
    if not np.isin(payload, (0, 1)).all():
        raise LengthMismatch("payload must be 0/1 valued")

    values = np.zeros(config.num_sections, dtype=np.int64)
    pos = 0
    for sec in config.info_sections:
        v = config.length(sec)
        values[sec - 1] = bits_to_int(payload[pos:pos + v])
        pos += v
    for parity in config.parity_sections:
        total = 0
        for src in config.parity_graph[parity]:
            total += int(edge_residues(gens, src, parity, values[src - 1],
                                       config.length(src)))
        values[parity - 1] = total % config.size(parity)

    blocks = [int_to_bits(int(values[s - 1]), config.length(s))
              for s in range(1, config.num_sections + 1)]
    return CodedMessage(blocks)


def parity_consistent(msg: CodedMessage, config: TreeCodeConfig,
                      gens: GeneratorSet) -> bool:
    """Check that every parity block equals the sum of its mapped sources."""
    if len(msg.blocks) != config.num_sections:
        raise LengthMismatch(
            f"message has {len(msg.blocks)} blocks, expected {config.num_sections}"
        )
    for sec in range(1, config.num_sections + 1):
        if msg.blocks[sec - 1].size != config.length(sec):
            raise LengthMismatch(f"block {sec} has the wrong width")
    values = msg.values()
    for parity in config.parity_sections:
        total = 0
        for src in config.parity_graph[parity]:
            total += int(edge_residues(gens, src, parity, values[src - 1],
                                       config.length(src)))
        if total % config.size(parity) != values[parity - 1]:
            return False
    return True


def payload_from_values(info_values, config: TreeCodeConfig) -> np.ndarray:
    """Concatenate info-section values (ascending section order) into payload bits."""
    info_values = np.asarray(info_values, dtype=np.int64)
    if info_values.size != len(config.info_sections):
        raise LengthMismatch("one value per information section required")
    parts = [int_to_bits(int(val), config.length(sec))
             for sec, val in zip(config.info_sections, info_values)]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Partition tables and belief folding
# ---------------------------------------------------------------------------

@dataclass
class PartitionTable:
    """Residue class of every source index under every generator edge.

    ``residues[(j, l)][k]`` is the parity-section value contributed by index
    ``k`` of section ``j``; the indicator vectors of the classes partition
    the source section.
    """

    residues: dict[tuple[int, int], np.ndarray]

    def indicator(self, src: int, parity: int, residue: int) -> np.ndarray:
        return (self.residues[(src, parity)] == residue).astype(np.uint8)


def build_partition_table(config: TreeCodeConfig, gens: GeneratorSet) -> PartitionTable:
    residues = {}
    for src, parity in config.edges():
        idx = np.arange(config.size(src), dtype=np.int64)
        residues[(src, parity)] = edge_residues(gens, src, parity, idx,
                                                config.length(src))
    return PartitionTable(residues)


def fold_likelihoods(weights, residues, modulus: int) -> np.ndarray:
    """Sum section weights over residue classes (inner products with the
    class indicators), producing a length-``modulus`` vector."""
    weights = np.asarray(weights, dtype=np.float64)
    residues = np.asarray(residues)
    if weights.shape != residues.shape:
        raise LengthMismatch(
            f"weights {weights.shape} do not match residue map {residues.shape}"
        )
    return np.bincount(residues, weights=weights, minlength=modulus)


def normalize_beliefs(weights) -> np.ndarray:
    """Scale a non-negative vector to unit 1-norm; ZeroMass if impossible."""
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise ZeroMass("belief vector has no usable mass")
    return weights / total


# ---------------------------------------------------------------------------
# Circular convolution and the two prior directions
# ---------------------------------------------------------------------------

def cyclic_convolve_direct(a, b) -> np.ndarray:
    """Circular convolution by direct summation (no FFT).

    Slow path kept as an independent cross-check of the transform route for
    small section sizes.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch("operands must share a length")
    full = np.convolve(a, b)
    out = full[:a.size].copy()
    out[:a.size - 1] += full[a.size:]
    return out


def _spectrum_product(vectors) -> np.ndarray:
    spec = np.fft.rfft(vectors[0])
    for vec in vectors[1:]:
        spec = spec * np.fft.rfft(vec)
    return spec


def parity_prior(folded: list[np.ndarray]) -> np.ndarray:
    """Prior over a parity section's values from its folded source beliefs.

    Circularly convolves the folded vectors (the distribution of a modular
    sum), clamps small negative FFT residue to zero and normalises to unit
    1-norm.
    """
    if not folded:
        raise LengthMismatch("need at least one folded belief vector")
    size = folded[0].size
    if any(vec.size != size for vec in folded):
        raise LengthMismatch("folded belief vectors must share the parity size")
    if len(folded) == 1:
        conv = np.asarray(folded[0], dtype=np.float64)
    else:
        conv = np.fft.irfft(_spectrum_product(folded), n=size)
    conv = np.maximum(conv, 0.0)
    return normalize_beliefs(conv)


def _index_reverse(vec: np.ndarray) -> np.ndarray:
    # vec[(-x) mod N]: index 0 stays, the rest reverse.
    return np.roll(vec[::-1], 1)


def info_prior(parity_beliefs, other_folded: list[np.ndarray],
               residues) -> np.ndarray:
    """Prior over an info section's values from one parity neighbourhood.

    Combines the parity section's beliefs with the convolution of the other
    sources' folded beliefs (a circular cross-correlation), then lifts the
    residue-domain prior back to source indices through the partition map.
    """
    parity_beliefs = np.asarray(parity_beliefs, dtype=np.float64)
    size = parity_beliefs.size
    if any(vec.size != size for vec in other_folded):
        raise LengthMismatch("folded belief vectors must share the parity size")
    if other_folded:
        others = np.fft.irfft(_spectrum_product(other_folded), n=size) \
            if len(other_folded) > 1 else np.asarray(other_folded[0], np.float64)
        others = np.maximum(others, 0.0)
        rho = np.fft.irfft(np.fft.rfft(parity_beliefs)
                           * np.fft.rfft(_index_reverse(others)), n=size)
    else:
        rho = parity_beliefs.copy()
    rho = np.maximum(rho, 0.0)
    lifted = rho[np.asarray(residues)]
    return normalize_beliefs(lifted)


# ---------------------------------------------------------------------------
# List decoding: pruning and stitching across the parity graph
# ---------------------------------------------------------------------------

@dataclass
class PathList:
    """Ranked candidate values for a (possibly fused) group of sections."""

    sections: tuple[int, ...]
    values: np.ndarray          # (k, len(sections)) int64
    weights: np.ndarray         # (k,) float64
    capacity: int | None = None

    def __len__(self) -> int:
        return int(self.weights.size)

    @classmethod
    def from_section(cls, section: int, values, weights) -> "PathList":
        values = np.asarray(values, dtype=np.int64).reshape(-1, 1)
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if values.shape[0] != weights.size:
            raise LengthMismatch("values and weights must pair up")
        return cls((int(section),), values, weights)

    def sorted_desc(self) -> "PathList":
        order = np.argsort(-self.weights, kind="stable")
        return PathList(self.sections, self.values[order], self.weights[order],
                        self.capacity)

    def truncated(self, budget: int) -> "PathList":
        srt = self.sorted_desc()
        return PathList(srt.sections, srt.values[:budget], srt.weights[:budget],
                        budget)


def _join_pair(a_vals, a_w, a_res, b_vals, b_w, b_res, modulus):
    ka, kb = a_w.size, b_w.size
    if ka * kb > MAX_JOIN_ROWS:
        raise CcsAmpError(
            f"stitch join of {ka}x{kb} rows exceeds the safety cap; "
            "reduce the survivor budget"
        )
    ia = np.repeat(np.arange(ka), kb)
    ib = np.tile(np.arange(kb), ka)
    vals = np.hstack([a_vals[ia], b_vals[ib]])
    w = a_w[ia] * b_w[ib]
    if a_res is None:
        res = None if b_res is None else b_res[ib]
    elif b_res is None:
        res = a_res[ia]
    else:
        res = (a_res[ia] + b_res[ib]) % modulus
    return vals, w, res


def _partial_residues(comp: PathList, members, parity: int, table: PartitionTable,
                      modulus: int):
    res = None
    for j in members:
        if j not in comp.sections:
            continue
        col = comp.sections.index(j)
        rj = table.residues[(j, parity)][comp.values[:, col]]
        res = rj if res is None else (res + rj) % modulus
    return res


def prune_and_stitch(lists: dict[int, PathList], config: TreeCodeConfig,
                     gens: GeneratorSet, survivor_budget: int,
                     table: PartitionTable | None = None) -> PathList:
    """Fuse per-section candidate lists into parity-consistent payload paths.

    Processes parity sections in ascending order; each one joins the
    candidate lists of the components its sources live in, keeps only
    combinations whose computed parity appears in the parity section's own
    list, multiplies in that candidate's weight and re-truncates the fused
    list to ``survivor_budget``.  Parity values are consumed by the check
    and dropped from the returned paths, which cover the information
    sections in ascending order.
    """
    if survivor_budget < 1:
        raise EmptyResult("survivor budget must be at least 1")
    if table is None:
        table = build_partition_table(config, gens)

    for sec in range(1, config.num_sections + 1):
        if sec not in lists or len(lists[sec]) == 0:
            raise EmptyResult(f"no candidates supplied for section {sec}")

    comps: list[PathList] = [lists[sec].truncated(survivor_budget)
                             for sec in config.info_sections]

    for parity in config.parity_sections:
        members = config.parity_graph[parity]
        modulus = config.size(parity)
        # the parity list only gates membership and weights, never joins,
        # so it is used as supplied rather than truncated to the budget
        plist = lists[parity]

        # presence + weight lookup over the parity section's candidates
        present = np.zeros(modulus, dtype=bool)
        weight_lut = np.zeros(modulus, dtype=np.float64)
        pvals = plist.values[:, 0]
        present[pvals] = True
        np.maximum.at(weight_lut, pvals, plist.weights)

        involved = [i for i, comp in enumerate(comps)
                    if any(j in comp.sections for j in members)]
        first = involved[0]
        vals = comps[first].values
        w = comps[first].weights
        res = _partial_residues(comps[first], members, parity, table, modulus)
        secs = comps[first].sections
        for i in involved[1:]:
            other = comps[i]
            ores = _partial_residues(other, members, parity, table, modulus)
            vals, w, res = _join_pair(vals, w, res, other.values, other.weights,
                                      ores, modulus)
            secs = secs + other.sections

        keep = present[res]
        if not keep.any():
            raise EmptyResult(
                f"no parity-consistent combination survives at section {parity}"
            )
        merged = PathList(secs, vals[keep], w[keep] * weight_lut[res[keep]])
        merged = merged.truncated(survivor_budget)

        for i in reversed(involved[1:]):
            del comps[i]
        comps[first] = merged

    # join any components the parity graph never connected
    while len(comps) > 1:
        a, b = comps[0], comps[1]
        vals, w, _ = _join_pair(a.values, a.weights, None, b.values, b.weights,
                                None, 2)
        comps[:2] = [PathList(a.sections + b.sections, vals, w).truncated(
            survivor_budget)]

    final = comps[0]
    order = np.argsort(final.sections)
    final = PathList(tuple(final.sections[i] for i in order),
                     final.values[:, order], final.weights)
    return final.truncated(survivor_budget)
