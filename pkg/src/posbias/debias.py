"""Rotation debiasing: cut each passage at a random token and swap the halves."""

from __future__ import annotations

from typing import Dict, Sequence, Tuple

import numpy as np

from .corpus import Collection, Passage
from .errors import ParseError

RotationMap = Dict[str, Tuple[int, int]]  # pid -> (r, n)


def rotate(tokens: Sequence, r: int) -> list:
    """Return ``tokens[r:] + tokens[:r-1]`` in 1-based terms (r=1 is the identity)."""
    n = len(tokens)
    if n < 1:
        raise ValueError("cannot rotate an empty sequence")
    if not 1 <= r <= n:
        raise ValueError(f"rotation index r={r} outside [1, {n}]")
    tokens = list(tokens)
    return tokens[r - 1 :] + tokens[: r - 1]


def map_position(s: int, r: int, n: int) -> int:
    """New 1-based index of the token found at ``s`` before rotating by ``r``."""
    if n < 1 or not 1 <= s <= n or not 1 <= r <= n:
        raise ValueError(f"need 1 <= s, r <= n, got s={s} r={r} n={n}")
    return (s - r) % n + 1


def draw_rotations(lengths: Sequence[int], seed: int) -> np.ndarray:
    """Draw r uniformly from {1..n_k} for each passage; the k-th value uses the k-th draw."""
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random(len(lengths))
    n = np.asarray(lengths, dtype=np.int64)
    return np.minimum((u * n).astype(np.int64), n - 1) + 1


def debias_collection(collection: Collection, seed: int) -> Tuple[Collection, RotationMap]:
    """Rotate every passage by its own uniformly drawn r.

    Ids and order are kept; the new text is the space-joined rotated tokens.
    """
    rs = draw_rotations([p.n for p in collection], seed)
    out = []
    rmap: RotationMap = {}
    for p, r in zip(collection, rs.tolist()):
        toks = tuple(rotate(p.tokens, r))
        out.append(Passage(p.id, " ".join(toks), toks))
        rmap[p.id] = (r, p.n)
    return Collection(tuple(out)), rmap


def write_rotation_map(rmap: RotationMap, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for pid, (r, n) in rmap.items():
            f.write(f"{pid}\t{r}\t{n}\n")


def read_rotation_map(path) -> RotationMap:
    rmap: RotationMap = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 3:
                raise ParseError(f"expected 3 columns, got {len(cols)}", path, lineno)
            try:
                r, n = int(cols[1]), int(cols[2])
            except ValueError:
                raise ParseError("non-integer r or n", path, lineno) from None
            if not 1 <= r <= n:
                raise ParseError(f"r={r} outside [1, {n}]", path, lineno)
            rmap[cols[0]] = (r, n)
    return rmap
