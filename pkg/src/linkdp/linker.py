"""Synthetic quasi-identifier tables and a blocked Jaro-Winkler linker.

Two tables describe the same entities: table A carries the covariate as its
payload and table B the response. B's quasi-identifiers are corrupted copies
of A's. Linking scores every within-block pair as a sum of per-field
similarities, accepts the best pairs above a threshold one-to-one and pairs up
whatever is left at random, so each block ends up perfectly matched. The
entity ids are used only to measure the accuracy of the result.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .linkage import LinkageError, LinkedDataset, MatchingMatrix, block_ele

FIELD_NAMES = ("given_name", "surname", "street", "suburb", "postcode", "dob")
CSV_FIELDS = ("f1", "f2", "f3", "f4", "f5", "f6")
DEFAULT_COMPARATORS = ("jw", "jw", "jw", "jw", "exact", "exact")
COMPARATORS = ("jw", "exact")
DEFAULT_THRESHOLD = 4.0
# calibrated so that linking at the default threshold lands near 92.5% accuracy
DEFAULT_CORRUPTION_RATE = 0.32
BLOCK_KEYS = ("ACT", "NSW", "NT", "QLD", "SA", "TAS", "VIC", "WA", "OT")
CORRUPTION_OPS = ("substitution", "transposition", "deletion", "abbreviation")

_GIVEN = (
    "JAMES JOHN ROBERT MICHAEL WILLIAM DAVID RICHARD JOSEPH THOMAS CHARLES CHRISTOPHER DANIEL "
    "MATTHEW ANTHONY MARK DONALD STEVEN PAUL ANDREW JOSHUA KENNETH KEVIN BRIAN GEORGE TIMOTHY "
    "RONALD EDWARD JASON JEFFREY RYAN JACOB GARY NICHOLAS ERIC JONATHAN STEPHEN LARRY JUSTIN "
    "MARY PATRICIA JENNIFER LINDA ELIZABETH BARBARA SUSAN JESSICA SARAH KAREN LISA NANCY BETTY "
    "MARGARET SANDRA ASHLEY KIMBERLY EMILY DONNA MICHELLE CAROL AMANDA DOROTHY MELISSA DEBORAH "
    "STEPHANIE REBECCA SHARON LAURA CYNTHIA KATHLEEN AMY ANGELA SHIRLEY ANNA BRENDA PAMELA EMMA "
    "NICOLE HELEN SAMANTHA KATHERINE CHRISTINE DEBRA RACHEL CAROLYN JANET CATHERINE MARIA HEATHER"
).split()
_SURNAME = (
    "SMITH JOHNSON WILLIAMS BROWN JONES GARCIA MILLER DAVIS RODRIGUEZ MARTINEZ HERNANDEZ LOPEZ "
    "GONZALEZ WILSON ANDERSON THOMAS TAYLOR MOORE JACKSON MARTIN LEE PEREZ THOMPSON WHITE HARRIS "
    "SANCHEZ CLARK RAMIREZ LEWIS ROBINSON WALKER YOUNG ALLEN KING WRIGHT SCOTT TORRES NGUYEN HILL "
    "FLORES GREEN ADAMS NELSON BAKER HALL RIVERA CAMPBELL MITCHELL CARTER ROBERTS GOMEZ PHILLIPS "
    "EVANS TURNER DIAZ PARKER CRUZ EDWARDS COLLINS REYES STEWART MORRIS MORALES MURPHY COOK ROGERS "
    "GUTIERREZ ORTIZ MORGAN COOPER PETERSON BAILEY REED KELLY HOWARD RAMOS KIM COX WARD RICHARDSON "
    "WATSON BROOKS CHAVEZ WOOD JAMES BENNETT GRAY MENDOZA RUIZ HUGHES PRICE ALVAREZ CASTILLO SANDERS "
    "PATEL MYERS LONG ROSS FOSTER JIMENEZ POWELL JENKINS PERRY RUSSELL SULLIVAN BELL COLEMAN BUTLER"
).split()
_STREET_NAME = (
    "KING QUEEN GEORGE VICTORIA CHURCH HIGH MAIN PARK BRIDGE MILL STATION ELIZABETH WILLIAM "
    "MARKET RAILWAY CHARLES ALBERT EDWARD MARY OXFORD CAMBRIDGE WATTLE ACACIA BANKSIA MURRAY "
    "DARLING HUNTER PACIFIC BEACH OCEAN RIVER LAKE FOREST HILL VALLEY GRANGE MEADOW ORCHARD"
).split()
_STREET_TYPE = ("STREET", "ROAD", "AVENUE", "PLACE", "CRESCENT", "DRIVE", "COURT", "PARADE", "TERRACE", "CLOSE")
_ABBREVIATIONS = {
    "STREET": "ST",
    "ROAD": "RD",
    "AVENUE": "AVE",
    "PLACE": "PL",
    "CRESCENT": "CRES",
    "DRIVE": "DR",
    "COURT": "CT",
    "PARADE": "PDE",
    "TERRACE": "TCE",
    "CLOSE": "CL",
    "MOUNT": "MT",
    "SAINT": "ST",
    "NORTH": "N",
    "SOUTH": "S",
    "EAST": "E",
    "WEST": "W",
}
_SUBURB_PARTS = (
    "ASH BAY BELL BLACK BRIGHT CAMP CLAR DEAN EDGE ELM FAIR GLEN GREEN HAZEL HOLL KINGS LANG "
    "LEIGH MAPLE MARSH MOSS NEW OAK PEN RED RICH ROSE SPRING STAN SUN THORN WARR WEST WHITE WIND"
).split()
_SUBURB_ENDS = ("FIELD", "WOOD", "VALE", "TON", "HAM", "DALE", "BROOK", "FORD", "LEY", "MONT", "BURN", "WORTH")
_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_DIGITS = "0123456789"


@dataclass
class EntityTable:
    """Column-oriented table of records.

    ``fields`` holds the six quasi-identifier columns in :data:`FIELD_NAMES`
    order; ``payload`` is the regression variable attached to each record.
    """

    entity_id: list[str]
    block_key: list[str]
    fields: list[list[str]]
    payload: np.ndarray

    def __post_init__(self):
        n = len(self.entity_id)
        self.payload = np.asarray(self.payload, dtype=float).ravel()
        if len(self.fields) != len(FIELD_NAMES):
            raise LinkageError(f"expected {len(FIELD_NAMES)} quasi-identifier columns, got {len(self.fields)}")
        for col in self.fields:
            if len(col) != n:
                raise LinkageError("quasi-identifier columns differ in length")
        if len(self.block_key) != n or self.payload.shape[0] != n:
            raise LinkageError("block_key and payload must have one entry per record")
        if len(set(self.entity_id)) != n:
            raise LinkageError("entity_id must be unique within a table")

    def __len__(self) -> int:
        return len(self.entity_id)

    def block_index(self) -> dict[str, np.ndarray]:
        """Record indices of every block, keys sorted, indices ascending."""
        keys = np.asarray(self.block_key, dtype=object)
        return {k: np.flatnonzero(keys == k) for k in sorted(set(self.block_key))}

    def column(self, k: int, rows: np.ndarray) -> list[str]:
        col = self.fields[k]
        return [col[i] for i in rows]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("entity_id", "block_key", *CSV_FIELDS, "payload"))
            for i in range(len(self)):
                writer.writerow(
                    (
                        self.entity_id[i],
                        self.block_key[i],
                        *(col[i] for col in self.fields),
                        repr(float(self.payload[i])),
                    )
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "EntityTable":
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"entity_id", "block_key", *CSV_FIELDS, "payload"} - set(reader.fieldnames or ())
            if missing:
                raise LinkageError(f"{path}: missing columns {sorted(missing)}")
            rows = list(reader)
        return cls(
            entity_id=[r["entity_id"] for r in rows],
            block_key=[r["block_key"] for r in rows],
            fields=[[r[f] for r in rows] for f in CSV_FIELDS],
            payload=np.array([float(r["payload"]) for r in rows]),
        )


@dataclass
class LinkageResult:
    """One-to-one links between two tables.

    ``index_a[k]`` is linked to ``index_b[k]`` with total score ``score[k]``;
    pairs are grouped by block (keys sorted) and ascending in ``index_a``.
    """

    index_a: np.ndarray
    index_b: np.ndarray
    score: np.ndarray
    block_keys: list[str]
    block_sizes: np.ndarray
    per_block_gamma: list[tuple[str, float]]
    overall_accuracy: float
    threshold: float
    accepted: int
    seed: int
    extras: dict = field(default_factory=dict)

    @property
    def pairs(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(s)) for a, b, s in zip(self.index_a, self.index_b, self.score)]

    @property
    def gammas(self) -> np.ndarray:
        return np.array([g for _, g in self.per_block_gamma])

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "seed": self.seed,
            "accepted": self.accepted,
            "overall_accuracy": self.overall_accuracy,
            "blocks": [
                {"key": k, "size": int(m), "gamma": g}
                for (k, g), m in zip(self.per_block_gamma, self.block_sizes)
            ],
            "pairs": [[a, b, s] for a, b, s in self.pairs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def jaro_winkler(a: str, b: str) -> float:
    """Jaro similarity with the Winkler common-prefix boost.

    Prefix scale 0.1, at most 4 prefix characters, applied when the Jaro
    score exceeds 0.7. Two identical strings (including two empty ones)
    score 1; an empty string against a non-empty one scores 0.
    """
    return _kernels.jaro_winkler_str(a, b)


def _score_block(a: EntityTable, b: EntityTable, rows_a, rows_b, comparators) -> np.ndarray:
    scores = np.zeros((len(rows_a), len(rows_b)))
    for k, kind in enumerate(comparators):
        col_a = a.column(k, rows_a)
        col_b = b.column(k, rows_b)
        if kind == "jw":
            # names repeat a lot; score each distinct pair of values once
            ua, inv_a = np.unique(np.asarray(col_a, dtype=str), return_inverse=True)
            ub, inv_b = np.unique(np.asarray(col_b, dtype=str), return_inverse=True)
            if len(ua) * len(ub) < 0.5 * len(col_a) * len(col_b):
                table = _kernels.accumulate_jw(list(ua), list(ub), np.zeros((len(ua), len(ub))))
                scores += table[inv_a[:, None], inv_b[None, :]]
            else:
                _kernels.accumulate_jw(col_a, col_b, scores)
        else:
            va = np.asarray(col_a, dtype=object)
            vb = np.asarray(col_b, dtype=object)
            scores += va[:, None] == vb[None, :]
    return scores


def link_records(
    a: EntityTable,
    b: EntityTable,
    threshold: float = DEFAULT_THRESHOLD,
    comparators: Sequence[str] = DEFAULT_COMPARATORS,
    seed: int = 0,
) -> LinkageResult:
    """Link ``a`` to ``b`` block by block.

    Pair scores are the sum of six field scores (Jaro-Winkler or exact-match
    indicator). Pairs scoring at least ``threshold`` are accepted greedily,
    highest score first, ties broken by ``(index_a, index_b)``; leftover
    records are paired uniformly at random from a stream seeded by
    ``(seed, block position)``.
    """
    comparators = tuple(comparators)
    if len(comparators) != len(FIELD_NAMES) or any(c not in COMPARATORS for c in comparators):
        raise LinkageError(f"need {len(FIELD_NAMES)} comparators from {COMPARATORS}, got {comparators}")
    blocks_a = a.block_index()
    blocks_b = b.block_index()
    if blocks_a.keys() != blocks_b.keys():
        raise LinkageError("tables must share the same block keys")
    out_a, out_b, out_s = [], [], []
    keys, sizes, gammas = [], [], []
    accepted = 0
    correct_total = 0
    for pos, key in enumerate(blocks_a):
        rows_a, rows_b = blocks_a[key], blocks_b[key]
        m = len(rows_a)
        if len(rows_b) != m:
            raise LinkageError(f"block {key!r} has {m} records in A but {len(rows_b)} in B")
        scores = _score_block(a, b, rows_a, rows_b, comparators)
        ii, jj = np.nonzero(scores >= threshold)
        # rows_a and rows_b ascend, so local order equals global (index_a, index_b) order
        order = np.lexsort((jj, ii, -scores[ii, jj]))
        match = _kernels.greedy_accept(ii[order].astype(np.int64), jj[order].astype(np.int64), m, m)
        accepted += int(np.count_nonzero(match >= 0))
        free_a = np.flatnonzero(match < 0)
        taken = np.zeros(m, dtype=bool)
        taken[match[match >= 0]] = True
        free_b = np.flatnonzero(~taken)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(pos,)))
        match[free_a] = free_b[rng.permutation(len(free_b))]
        ga = rows_a
        gb = rows_b[match]
        correct = sum(a.entity_id[i] == b.entity_id[j] for i, j in zip(ga, gb))
        correct_total += correct
        out_a.append(ga)
        out_b.append(gb)
        out_s.append(scores[np.arange(m), match])
        keys.append(key)
        sizes.append(m)
        gammas.append(correct / m)
    n = int(sum(sizes))
    return LinkageResult(
        index_a=np.concatenate(out_a),
        index_b=np.concatenate(out_b),
        score=np.concatenate(out_s),
        block_keys=keys,
        block_sizes=np.array(sizes, dtype=np.int64),
        per_block_gamma=list(zip(keys, gammas)),
        overall_accuracy=correct_total / n,
        threshold=float(threshold),
        accepted=accepted,
        seed=seed,
    )


def gamma_to_mpm(result: LinkageResult, block_sizes: Sequence[int] | None = None) -> MatchingMatrix:
    """Block-ELE matching matrix with the per-block accuracies of ``result``."""
    sizes = result.block_sizes if block_sizes is None else np.asarray(block_sizes, dtype=np.int64)
    gammas = result.gammas
    if len(sizes) != len(gammas):
        raise LinkageError(f"{len(sizes)} block sizes for {len(gammas)} blocks")
    if np.any((gammas < 0) | (gammas > 1)):
        raise LinkageError("block accuracies must lie in [0, 1]")
    return block_ele(zip(sizes, gammas))


def linked_dataset(a: EntityTable, b: EntityTable, result: LinkageResult) -> tuple[LinkedDataset, MatchingMatrix]:
    """Covariates from A and linked responses from B, in the row order of ``Q``.

    The true response ``y`` is looked up through the entity ids, for
    verification only.
    """
    where_b = {e: j for j, e in enumerate(b.entity_id)}
    X = a.payload[result.index_a][:, None]
    z = b.payload[result.index_b]
    try:
        truth = np.array([where_b[a.entity_id[i]] for i in result.index_a])
        y = b.payload[truth]
    except KeyError:
        y = None
    return LinkedDataset(X, z, y), gamma_to_mpm(result)


# --------------------------------------------------------------------------
# synthetic corpus
# --------------------------------------------------------------------------


def _street(rng) -> str:
    return f"{rng.integers(1, 400)} {rng.choice(_STREET_NAME)} {rng.choice(_STREET_TYPE)}"


def _suburb(rng) -> str:
    return str(rng.choice(_SUBURB_PARTS)) + str(rng.choice(_SUBURB_ENDS))


def _dob(rng) -> str:
    return f"{rng.integers(1930, 2005)}{rng.integers(1, 13):02d}{rng.integers(1, 29):02d}"


def _substitute(s: str, rng, alphabet: str) -> str:
    if not s:
        return s
    i = int(rng.integers(len(s)))
    choices = [c for c in alphabet if c != s[i]]
    return s[:i] + str(rng.choice(choices)) + s[i + 1 :]


def _transpose(s: str, rng) -> str:
    pos = [i for i in range(len(s) - 1) if s[i] != s[i + 1]]
    if not pos:
        return s
    i = pos[int(rng.integers(len(pos)))]
    return s[:i] + s[i + 1] + s[i] + s[i + 2 :]


def _delete(s: str, rng) -> str:
    if len(s) < 2:
        return s
    i = int(rng.integers(len(s)))
    return s[:i] + s[i + 1 :]


def _abbreviate(s: str) -> str:
    words = s.split(" ")
    for k in range(len(words) - 1, -1, -1):
        short = _ABBREVIATIONS.get(words[k])
        if short is not None:
            words[k] = short
            return " ".join(words)
    # fall back to an initial
    return s[:1]


def corrupt(value: str, rng: np.random.Generator, numeric: bool = False) -> str:
    """Apply one typo operation chosen uniformly from those that make sense.

    Numeric fields (dates, postcodes) only see substitution and transposition
    so they keep their length.
    """
    ops = ("substitution", "transposition") if numeric else CORRUPTION_OPS
    op = ops[int(rng.integers(len(ops)))]
    alphabet = _DIGITS if numeric else _LETTERS
    if op == "substitution":
        return _substitute(value, rng, alphabet)
    if op == "transposition":
        out = _transpose(value, rng)
        return out if out != value else _substitute(value, rng, alphabet)
    if op == "deletion":
        return _delete(value, rng)
    return _abbreviate(value)


def generate_corpus(
    n: int,
    n_blocks: int = len(BLOCK_KEYS),
    corruption_rate: float = DEFAULT_CORRUPTION_RATE,
    seed: int = 0,
    slope: float = 0.9,
    noise: float = 0.45,
    x_clip: float = 2.78,
) -> tuple[EntityTable, EntityTable]:
    """Two tables describing the same ``n`` entities.

    Quasi-identifiers are drawn from built-in name, street and suburb lists;
    every field of table B is corrupted independently with probability
    ``corruption_rate``. Payloads follow ``y = slope * x + noise * e`` with
    ``x`` standard normal truncated to ``[-x_clip, x_clip]`` (outliers
    dropped) and ``e`` standard normal; A carries ``x`` and B carries ``y``.
    Records are split into ``n_blocks`` blocks whose sizes differ by at most
    one, and table B lists its records in a random order.
    """
    if not 0.0 <= corruption_rate <= 1.0:
        raise ValueError(f"corruption_rate must lie in [0, 1], got {corruption_rate}")
    if n < n_blocks or n_blocks < 1:
        raise ValueError(f"need n >= n_blocks >= 1, got n={n}, n_blocks={n_blocks}")
    ss = np.random.SeedSequence(seed)
    rng_q, rng_c, rng_p, rng_o = (np.random.default_rng(s) for s in ss.spawn(4))
    keys = list(BLOCK_KEYS[:n_blocks]) + [f"B{k}" for k in range(len(BLOCK_KEYS), n_blocks)]
    block_of = np.repeat(np.arange(n_blocks), [n // n_blocks + (k < n % n_blocks) for k in range(n_blocks)])
    block_of = block_of[rng_q.permutation(n)]
    ids = [f"rec-{i:06d}" for i in range(n)]
    clean = [
        [str(rng_q.choice(_GIVEN)) for _ in range(n)],
        [str(rng_q.choice(_SURNAME)) for _ in range(n)],
        [_street(rng_q) for _ in range(n)],
        [_suburb(rng_q) for _ in range(n)],
        [f"{rng_q.integers(2000, 8000)}" for _ in range(n)],
        [_dob(rng_q) for _ in range(n)],
    ]
    numeric = (False, False, False, False, True, True)
    noisy = []
    for col, is_num in zip(clean, numeric):
        hit = rng_c.random(n) < corruption_rate
        noisy.append([corrupt(v, rng_c, is_num) if h else v for v, h in zip(col, hit)])
    x = np.empty(0)
    while x.size < n:
        draw = rng_p.standard_normal(2 * n)
        x = np.concatenate([x, draw[np.abs(draw) <= x_clip]])
    x = x[:n]
    y = slope * x + noise * rng_p.standard_normal(n)
    block_key = [keys[k] for k in block_of]
    A = EntityTable(ids, block_key, clean, x)
    order = rng_o.permutation(n)
    B = EntityTable(
        [ids[i] for i in order],
        [block_key[i] for i in order],
        [[col[i] for i in order] for col in noisy],
        y[order],
    )
    return A, B
