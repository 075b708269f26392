"""Reed-Muller codebooks over GF(2) and nearest-codeword decoding.

Codewords are plain Python ints used as fixed-width bit sets.  A word of
length ``n`` maps to the bitstring ``format(word, f"0{n}b")``: the leftmost
character is bit index 0 and corresponds to the all-zeros variable
assignment.  Assignments are enumerated as m-bit integers ``0 .. 2**m - 1``
with ``z_1`` as the most significant bit.  Distance is popcount of XOR.
"""

from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path


class ParameterError(ValueError):
    """Order/degree pair outside the valid range."""


class ConstructionError(ValueError):
    """Basis rows are linearly dependent (span collapses)."""


class CapacityError(ValueError):
    """More classes requested than the codebook holds."""


class AssignmentError(RuntimeError):
    """No constant-column-free class assignment found within the retry bound."""


class CorrectionBudgetError(ValueError):
    """Requested error-correction budget exceeds the code's capability."""


class CodebookFileError(ValueError):
    """Serialized codebook is malformed or internally inconsistent."""


MAX_SPAN_K = 26  # 2**26 words is the largest span we materialize


@dataclass(frozen=True)
class RMParams:
    """Derived parameters of RM(r, m): block length n, dimension k,
    minimum distance d and correction capability t."""

    m: int
    r: int
    n: int
    k: int
    d: int
    t: int


def derive_params(m: int, r: int) -> RMParams:
    """Parameters for order-r Reed-Muller code in m variables.

    n = 2**m, k = sum_{i<=r} C(m, i), d = 2**(m-r), t = (d - 1) // 2.
    """
    if m < 1:
        raise ParameterError(f"need m >= 1, got m={m}")
    if not 0 <= r <= m:
        raise ParameterError(f"need 0 <= r <= m, got r={r}, m={m}")
    n = 2**m
    k = sum(math.comb(m, i) for i in range(r + 1))
    d = 2 ** (m - r)
    return RMParams(m=m, r=r, n=n, k=k, d=d, t=(d - 1) // 2)


def monomials(params: RMParams) -> list[tuple[int, ...]]:
    """Monomial exponent sets in degree-then-lexicographic order.

    Each entry lists the 1-based variable indices of one monomial; the
    empty tuple (constant term) comes first.  Length equals params.k.
    """
    out: list[tuple[int, ...]] = []
    for degree in range(params.r + 1):
        out.extend(itertools.combinations(range(1, params.m + 1), degree))
    return out


def generate_basis(params: RMParams) -> list[int]:
    """Evaluation vectors of each monomial over all 2**m assignments.

    Row for monomial S has bit 1 at column a iff every variable in S is 1
    under assignment a, where z_i reads bit (m - i) of a.
    """
    rows = []
    for mono in monomials(params):
        row = 0
        for a in range(params.n):
            if all((a >> (params.m - i)) & 1 for i in mono):
                row |= 1 << (params.n - 1 - a)
        rows.append(row)
    return rows


@dataclass(frozen=True)
class Codebook:
    """Full linear code: every XOR combination of the basis rows."""

    params: RMParams
    basis: tuple[int, ...]
    words: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.words)


def span_codebook(basis: list[int], params: RMParams) -> Codebook:
    """Materialize the XOR span of the basis rows.

    Word order is deterministic: selector integers 0 .. 2**k - 1 with
    basis row i toggled by selector bit i.
    """
    if len(basis) != params.k:
        raise ConstructionError(f"expected {params.k} basis rows, got {len(basis)}")
    if params.k > MAX_SPAN_K:
        raise CapacityError(f"refusing to materialize 2**{params.k} words (cap 2**{MAX_SPAN_K})")
    words = [0]
    for row in basis:
        words.extend([w ^ row for w in words])
    if len(set(words)) != len(words):
        raise ConstructionError("basis rows are linearly dependent")
    return Codebook(params=params, basis=tuple(basis), words=tuple(words))


def hamming_distance(u: int, v: int) -> int:
    return (u ^ v).bit_count()


def min_distance(codebook: Codebook) -> int:
    """Exact minimum pairwise distance.

    The span is XOR-closed, so the minimum over pairs equals the minimum
    weight over nonzero words.
    """
    if len(codebook.words) < 2:
        raise ParameterError("min distance needs at least two codewords")
    return min(w.bit_count() for w in codebook.words if w != 0)


@dataclass(frozen=True)
class ClassCodebook:
    """Class label -> codeword table drawn from a full codebook.

    Index into ``codewords`` is the class label.  No bit position is
    constant across the chosen words, so every per-bit membership task
    separates the classes into two non-empty groups.
    """

    codebook: Codebook
    codewords: tuple[int, ...]
    seed: int

    @property
    def params(self) -> RMParams:
        return self.codebook.params

    @property
    def num_classes(self) -> int:
        return len(self.codewords)


def _has_constant_column(words: list[int], n: int) -> bool:
    full = (1 << n) - 1
    all_and = full
    all_or = 0
    for w in words:
        all_and &= w
        all_or |= w
    return all_and != 0 or all_or != full


_ASSIGN_RETRIES = 64


def assign_class_codewords(codebook: Codebook, num_classes: int, seed: int) -> ClassCodebook:
    """Pick one codeword per class by a seeded shuffle of the full span.

    Draws are resampled with an incremented sub-seed while any bit
    position is constant across the selection; after a bounded number of
    retries the assignment is abandoned.
    """
    if num_classes < 1:
        raise ParameterError(f"need at least one class, got {num_classes}")
    if num_classes > len(codebook.words):
        raise CapacityError(f"{num_classes} classes exceed codebook size {len(codebook.words)}")
    n = codebook.params.n
    for attempt in range(_ASSIGN_RETRIES):
        pool = list(codebook.words)
        random.Random(seed + attempt).shuffle(pool)
        chosen = pool[:num_classes]
        if not _has_constant_column(chosen, n):
            return ClassCodebook(codebook=codebook, codewords=tuple(chosen), seed=seed)
    raise AssignmentError(
        f"no constant-column-free assignment of {num_classes} codewords in {_ASSIGN_RETRIES} tries"
    )


@dataclass(frozen=True)
class Verdict:
    """Decode outcome: exact hit, corrected hit, or rejection.

    ``label`` is None for a rejection; ``distance`` is the Hamming
    distance from the observed word to the accepted codeword.
    """

    label: int | None
    distance: int | None

    @classmethod
    def exact(cls, label: int) -> "Verdict":
        return cls(label=label, distance=0)

    @classmethod
    def corrected(cls, label: int, distance: int) -> "Verdict":
        return cls(label=label, distance=distance)

    @classmethod
    def reject(cls) -> "Verdict":
        return cls(label=None, distance=None)

    @property
    def accepted(self) -> bool:
        return self.label is not None

    @property
    def is_exact(self) -> bool:
        return self.distance == 0

    @property
    def is_corrected(self) -> bool:
        return self.label is not None and self.distance is not None and self.distance > 0


def decode(word: int, classbook: ClassCodebook, ec: int) -> Verdict:
    """Match a word against the class codewords within an error budget.

    Exact match wins; otherwise the unique codeword within ``ec`` bit
    flips is accepted (balls of radius <= t are disjoint because class
    codewords sit at pairwise distance >= d >= 2t + 1); otherwise reject.
    """
    params = classbook.params
    if not 0 <= ec <= params.t:
        raise CorrectionBudgetError(f"ec={ec} outside [0, t={params.t}] for this code")
    if not 0 <= word < (1 << params.n):
        raise ParameterError(f"word out of range for n={params.n}")
    best_label = -1
    best_dist = params.n + 1
    for label, codeword in enumerate(classbook.codewords):
        dist = hamming_distance(word, codeword)
        if dist == 0:
            return Verdict.exact(label)
        if dist < best_dist:
            best_label, best_dist = label, dist
    if best_dist <= ec:
        return Verdict.corrected(best_label, best_dist)
    return Verdict.reject()


def noise_acceptance_prob(classbook: ClassCodebook, ec: int) -> float:
    """Probability that a uniform random word decodes to some class.

    Acceptance balls are disjoint, so the probability is exactly
    |C| * sum_{i<=ec} C(n, i) / 2**n.
    """
    params = classbook.params
    if not 0 <= ec <= params.t:
        raise CorrectionBudgetError(f"ec={ec} outside [0, t={params.t}] for this code")
    ball = sum(math.comb(params.n, i) for i in range(ec + 1))
    return classbook.num_classes * ball / 2**params.n


def _word_to_bits(word: int, n: int) -> str:
    return format(word, f"0{n}b")


def _bits_to_word(bits: str, n: int) -> int:
    if len(bits) != n or set(bits) - {"0", "1"}:
        raise CodebookFileError(f"expected {n}-character bitstring, got {bits!r}")
    return int(bits, 2)


def _in_span(word: int, echelon: list[int]) -> bool:
    for row in echelon:
        word = min(word, word ^ row)
    return word == 0


def _echelon(basis: tuple[int, ...]) -> list[int]:
    rows = sorted(basis, reverse=True)
    out: list[int] = []
    for row in rows:
        for r in out:
            row = min(row, row ^ r)
        if row:
            out.append(row)
    return sorted(out, reverse=True)


def classbook_to_dict(classbook: ClassCodebook) -> dict:
    p = classbook.params
    return {
        "m": p.m,
        "r": p.r,
        "n": p.n,
        "k": p.k,
        "d": p.d,
        "t": p.t,
        "seed": classbook.seed,
        "basis": [_word_to_bits(w, p.n) for w in classbook.codebook.basis],
        "class_codewords": [_word_to_bits(w, p.n) for w in classbook.codewords],
    }


def classbook_from_dict(data: dict) -> ClassCodebook:
    try:
        params = derive_params(int(data["m"]), int(data["r"]))
        seed = int(data["seed"])
        basis_bits = list(data["basis"])
        class_bits = list(data["class_codewords"])
    except (KeyError, TypeError) as exc:
        raise CodebookFileError(f"missing or malformed codebook field: {exc}") from exc
    for field in ("n", "k", "d", "t"):
        if int(data[field]) != getattr(params, field):
            raise CodebookFileError(
                f"stored {field}={data[field]} disagrees with derived {getattr(params, field)}"
            )
    basis = [_bits_to_word(b, params.n) for b in basis_bits]
    if basis != generate_basis(params):
        raise CodebookFileError("stored basis is not the canonical basis for (m, r)")
    codebook = span_codebook(basis, params)
    codewords = [_bits_to_word(b, params.n) for b in class_bits]
    if len(set(codewords)) != len(codewords):
        raise CodebookFileError("class codewords are not distinct")
    echelon = _echelon(codebook.basis)
    for word in codewords:
        if not _in_span(word, echelon):
            raise CodebookFileError(f"class codeword {_word_to_bits(word, params.n)} not in the code")
    if _has_constant_column(codewords, params.n):
        raise CodebookFileError("class codewords have a constant bit position")
    return ClassCodebook(codebook=codebook, codewords=tuple(codewords), seed=seed)


def save_classbook(classbook: ClassCodebook, path: str | Path) -> None:
    Path(path).write_text(json.dumps(classbook_to_dict(classbook), indent=2, sort_keys=True) + "\n")


def load_classbook(path: str | Path) -> ClassCodebook:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CodebookFileError(f"not valid JSON: {path}") from exc
    return classbook_from_dict(data)
