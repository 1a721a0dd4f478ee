"""One-dimensional substitution tilings (Fibonacci by default).

A tiling is stored as a finite patch around the origin: a word over the tile
alphabet plus the vertex positions.  Points of the continuous hull are
translates of this master patch, parametrized by a real offset.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

FIBONACCI_RULE = {"a": "ab", "b": "a"}
FIBONACCI_LENGTHS = {"a": GOLDEN, "b": 1.0}


def substitute(word, rule, times=1):
    for _ in range(times):
        word = "".join(rule[c] for c in word)
    return word


def substitution_matrix(rule, alphabet):
    """M[i, j] = number of letters alphabet[i] in rule[alphabet[j]]."""
    return np.array([[rule[b].count(a) for b in alphabet] for a in alphabet], dtype=float)


def perron_frequencies(rule, alphabet):
    """Letter frequencies of the fixed point, from the Perron eigenvector."""
    vals, vecs = np.linalg.eig(substitution_matrix(rule, alphabet))
    k = int(np.argmax(vals.real))
    vec = np.abs(vecs[:, k].real)
    return vec / vec.sum()


@dataclass(frozen=True)
class MasterTiling:
    """A patch of a substitution tiling covering [-extent, extent].

    ``word[k]`` is the tile between ``vertices[k]`` and ``vertices[k + 1]``;
    a vertex sits at the origin.
    """

    word: str
    vertices: np.ndarray
    lengths: dict
    origin_index: int
    rule: dict = field(default_factory=dict)

    @property
    def extent(self):
        return float(min(-self.vertices[0], self.vertices[-1]))

    @property
    def alphabet(self):
        return sorted(self.lengths)

    def tile_index(self, x):
        """Index of the tile containing each position (half-open tiles)."""
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.vertices, x, side="right") - 1
        return np.clip(k, 0, len(self.word) - 1)

    def midpoints(self):
        return 0.5 * (self.vertices[:-1] + self.vertices[1:])

    @cached_property
    def codes(self):
        """Integer code per tile, for vectorized comparisons."""
        alphabet = self.alphabet
        return np.array([alphabet.index(c) for c in self.word], dtype=np.int8)


def fibonacci_tiling(extent, rule=None, lengths=None, seed=("b", "a")):
    """Master patch of the self-similar tiling grown from a legal two-letter seed.

    The left half is the left-infinite fixed point of the squared substitution
    ending in ``seed[0]``, the right half the right-infinite one starting with
    ``seed[1]``.
    """
    rule = rule or FIBONACCI_RULE
    lengths = lengths or FIBONACCI_LENGTHS
    left, right = seed
    shortest = min(lengths.values())
    while min(len(left), len(right)) * shortest < extent + 2 * max(lengths.values()):
        left = substitute(left, rule, 2)
        right = substitute(right, rule, 2)
    left_len = np.array([lengths[c] for c in left])
    right_len = np.array([lengths[c] for c in right])
    left_vertices = -np.cumsum(left_len[::-1])[::-1]
    right_vertices = np.cumsum(right_len)
    vertices = np.concatenate([left_vertices, [0.0], right_vertices])
    word = left + right
    # trim to just beyond the requested extent
    lo = int(np.searchsorted(vertices, -extent, side="right")) - 2
    hi = int(np.searchsorted(vertices, extent, side="left")) + 2
    lo = max(lo, 0)
    hi = min(hi, len(vertices) - 1)
    return MasterTiling(
        word=word[lo:hi],
        vertices=vertices[lo : hi + 1].copy(),
        lengths=dict(lengths),
        origin_index=len(left) - lo,
        rule=dict(rule),
    )


def agreement_radius(tiling, x, y, report_truncation=False):
    """Largest r such that the tilings seen from x and from y agree on B_r(0).

    If the two positions do not sit at the same offset inside tiles of equal
    type, the radius is the distance to the nearest vertex.  Agreement that
    runs into the end of the master patch is truncated there; with
    ``report_truncation`` a flag saying so is returned as well.
    """
    codes = tiling.codes
    verts = tiling.vertices
    shortest = min(tiling.lengths.values())
    i = int(tiling.tile_index(x))
    j = int(tiling.tile_index(y))
    if codes[i] != codes[j] or abs((x - verts[i]) - (y - verts[j])) > 1e-12:
        r = float(min(np.min(np.abs(verts - x)), np.min(np.abs(verts - y))))
        return (r, False) if report_truncation else r
    if i == j:
        # same tile at the same offset: identical tilings
        return (np.inf, False) if report_truncation else np.inf
    n = len(codes)
    forward_cap = min(n - i, n - j)
    k = 0
    while k < forward_cap and codes[i + k] == codes[j + k]:
        k += 1
    fwd_cut = k == forward_cap
    fwd = min(verts[-1] - x, verts[-1] - y) if fwd_cut else verts[i + k] - x + shortest
    backward_cap = min(i, j)
    k = 1
    while k <= backward_cap and codes[i - k] == codes[j - k]:
        k += 1
    bwd_cut = k > backward_cap
    bwd = min(x - verts[0], y - verts[0]) if bwd_cut else x - verts[i - k + 1] + shortest
    r = float(min(fwd, bwd))
    truncated = (fwd_cut and fwd <= bwd) or (bwd_cut and bwd <= fwd)
    return (r, truncated) if report_truncation else r


def tiling_distance(tiling, x, y, max_shift=None):
    """Hull metric between the translates seen from positions x and y.

    min over small realignments delta of max(|delta|, 1/(1 + r)), where r is
    the agreement radius after moving y by delta; capped at 1.
    """
    if x == y:
        return 0.0
    return min(_one_sided_distance(tiling, x, y, max_shift), _one_sided_distance(tiling, y, x, max_shift))


def _one_sided_distance(tiling, x, y, max_shift):
    verts = tiling.vertices
    max_shift = 1.0 if max_shift is None else max_shift
    i = int(tiling.tile_index(x))
    offset = x - verts[i]
    best = min(1.0, 1.0 / (1.0 + agreement_radius(tiling, x, y)))
    j0 = int(tiling.tile_index(y))
    for j in range(max(j0 - 2, 0), min(j0 + 3, len(tiling.word))):
        if tiling.word[j] != tiling.word[i]:
            continue
        target = verts[j] + offset
        delta = target - y
        if abs(delta) >= min(best, max_shift):
            continue
        r = agreement_radius(tiling, x, target)
        best = min(best, max(abs(delta), 1.0 / (1.0 + r)))
    return best


def patch_signature(tiling, x, radius):
    """Canonical description of the tiling seen from x within the given radius."""
    verts = tiling.vertices
    if x - radius < verts[0] or x + radius > verts[-1]:
        raise ValueError("patch leaves the master tiling")
    inside = verts[(verts >= x - radius) & (verts <= x + radius)] - x
    return tuple(np.round(inside, 9))
