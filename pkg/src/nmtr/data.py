"""Multi-behavior interaction datasets: ingestion, filtering, splitting, synthesis.

Behaviors are ordered from the lowest level (e.g. view) to the target
behavior (e.g. purchase), which is always the last one. Users and items are
mapped to dense indices; each behavior holds a set of ``(user, item)`` pairs
stored as a sorted ``(n, 2)`` int64 array.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .numeric import sigmoid

DEFAULT_COLUMNS = {"user": "user", "item": "item", "behavior": "behavior", "timestamp": "timestamp"}


class DataError(ValueError):
    """Raised for malformed input data or configurations that produce unusable datasets."""


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    behavior: str
    timestamp: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class BehaviorSchema:
    names: tuple[str, ...]

    def __init__(self, names):
        object.__setattr__(self, "names", tuple(names))
        if not self.names:
            raise DataError("a schema needs at least one behavior")
        if len(set(self.names)) != len(self.names):
            raise DataError(f"duplicate behavior names in {self.names}")

    @property
    def num_behaviors(self) -> int:
        return len(self.names)

    @property
    def target_index(self) -> int:
        return len(self.names) - 1

    @property
    def target(self) -> str:
        return self.names[-1]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown behavior label {name!r}; schema is {list(self.names)}") from None


def _canonical_pairs(pairs, timestamps=None):
    """Sort pairs by (user, item); keep the earliest timestamp for duplicates."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if timestamps is None:
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
        if len(pairs):
            keep = np.ones(len(pairs), dtype=bool)
            keep[1:] = np.any(pairs[1:] != pairs[:-1], axis=1)
            pairs = pairs[keep]
        return pairs, None
    ts = np.asarray(timestamps, dtype=np.int64)
    order = np.lexsort((ts, pairs[:, 1], pairs[:, 0]))
    pairs, ts = pairs[order], ts[order]
    if len(pairs):
        keep = np.ones(len(pairs), dtype=bool)
        keep[1:] = np.any(pairs[1:] != pairs[:-1], axis=1)
        pairs, ts = pairs[keep], ts[keep]
    return pairs, ts


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BehaviorDataset:
    """Immutable per-behavior interaction sets over a shared user/item index."""

    schema: BehaviorSchema
    user_keys: tuple[str, ...]
    item_keys: tuple[str, ...]
    pairs: tuple[np.ndarray, ...]
    timestamps: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        if len(self.pairs) != self.schema.num_behaviors:
            raise DataError(f"expected {self.schema.num_behaviors} behavior sets, got {len(self.pairs)}")
        M, N = len(self.user_keys), len(self.item_keys)
        cleaned, cleaned_ts = [], []
        for r, pr in enumerate(self.pairs):
            ts = None if self.timestamps is None else self.timestamps[r]
            pr, ts = _canonical_pairs(pr, ts)
            if len(pr) and (pr.min() < 0 or pr[:, 0].max() >= M or pr[:, 1].max() >= N):
                raise DataError(f"behavior {self.schema.names[r]!r} has an index out of range")
            cleaned.append(_readonly(pr))
            cleaned_ts.append(None if ts is None else _readonly(ts))
        object.__setattr__(self, "pairs", tuple(cleaned))
        object.__setattr__(self, "timestamps", None if self.timestamps is None else tuple(cleaned_ts))
        object.__setattr__(self, "user_keys", tuple(self.user_keys))
        object.__setattr__(self, "item_keys", tuple(self.item_keys))

    # sizes and indexing

    @property
    def num_users(self) -> int:
        return len(self.user_keys)

    @property
    def num_items(self) -> int:
        return len(self.item_keys)

    @property
    def num_behaviors(self) -> int:
        return self.schema.num_behaviors

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {k: u for u, k in enumerate(self.user_keys)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.item_keys)}

    def count(self, r: int) -> int:
        return len(self.pairs[r])

    def counts(self) -> dict[str, int]:
        return {name: self.count(r) for r, name in enumerate(self.schema.names)}

    def summary(self) -> dict:
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "per_behavior_counts": self.counts(),
        }

    # membership

    @cached_property
    def _codes(self) -> tuple[np.ndarray, ...]:
        N = self.num_items
        return tuple(_readonly(pr[:, 0] * N + pr[:, 1]) for pr in self.pairs)

    @cached_property
    def _code_sets(self) -> tuple[frozenset, ...]:
        return tuple(frozenset(c.tolist()) for c in self._codes)

    def contains(self, u: int, i: int, r: int) -> bool:
        return u * self.num_items + i in self._code_sets[r]

    def contains_many(self, users, items, r: int) -> np.ndarray:
        """Vectorised membership of ``(users[k], items[k])`` in behavior ``r``."""
        codes = self._codes[r]
        q = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        if len(codes) == 0:
            return np.zeros(q.shape, dtype=bool)
        pos = np.searchsorted(codes, q)
        pos = np.minimum(pos, len(codes) - 1)
        return codes[pos] == q

    @cached_property
    def _union_codes(self) -> np.ndarray:
        up = self.union_pairs
        return _readonly(up[:, 0] * self.num_items + up[:, 1])

    def contains_any(self, users, items) -> np.ndarray:
        """Vectorised membership in the union of all behaviors."""
        codes = self._union_codes
        q = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        if len(codes) == 0:
            return np.zeros(q.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(codes, q), len(codes) - 1)
        return codes[pos] == q

    def user_items(self, u: int, r: int) -> np.ndarray:
        indptr = self._indptr[r]
        return self.pairs[r][indptr[u]:indptr[u + 1], 1]

    def user_counts(self, r: int) -> np.ndarray:
        return np.diff(self._indptr[r])

    @cached_property
    def _indptr(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.searchsorted(pr[:, 0], np.arange(self.num_users + 1)) for pr in self.pairs
        )

    @cached_property
    def union_pairs(self) -> np.ndarray:
        """Distinct pairs observed under any behavior, sorted."""
        pr, _ = _canonical_pairs(np.concatenate(self.pairs, axis=0))
        return _readonly(pr)

    @cached_property
    def max_level(self) -> np.ndarray:
        """For each row of ``union_pairs``, the highest behavior index it is observed under."""
        up = self.union_pairs
        level = np.full(len(up), -1, dtype=np.int64)
        for r in range(self.num_behaviors):
            hit = self.contains_many(up[:, 0], up[:, 1], r)
            level[hit] = r
        return _readonly(level)

    # identity

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.schema.names, self.user_keys, self.item_keys]).encode())
        for r, pr in enumerate(self.pairs):
            h.update(pr.tobytes())
            if self.timestamps is not None:
                h.update(self.timestamps[r].tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, BehaviorDataset):
            return NotImplemented
        return self.fingerprint() == other.fingerprint() and (self.timestamps is None) == (other.timestamps is None)

    __hash__ = None

    def with_pairs(self, pairs, timestamps=None) -> "BehaviorDataset":
        return BehaviorDataset(self.schema, self.user_keys, self.item_keys, tuple(pairs), timestamps)

    def restrict_to_target(self) -> "BehaviorDataset":
        """Single-behavior view holding only the target behavior."""
        t = self.schema.target_index
        ts = None if self.timestamps is None else (self.timestamps[t],)
        return BehaviorDataset(BehaviorSchema([self.schema.target]), self.user_keys, self.item_keys,
                               (self.pairs[t],), ts)

    # persistence

    def save(self, path) -> None:
        arrays = {f"pairs_{r}": pr for r, pr in enumerate(self.pairs)}
        if self.timestamps is not None:
            arrays.update({f"ts_{r}": ts for r, ts in enumerate(self.timestamps)})
        meta = {"behaviors": list(self.schema.names), "users": list(self.user_keys),
                "items": list(self.item_keys), "has_timestamps": self.timestamps is not None}
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "BehaviorDataset":
        with np.load(path) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            R = len(meta["behaviors"])
            pairs = tuple(z[f"pairs_{r}"] for r in range(R))
            ts = tuple(z[f"ts_{r}"] for r in range(R)) if meta["has_timestamps"] else None
        return cls(BehaviorSchema(meta["behaviors"]), tuple(meta["users"]), tuple(meta["items"]), pairs, ts)


# ingestion


def ingest_csv(path, schema: BehaviorSchema, column_map: dict | None = None,
               delimiter: str = ",") -> BehaviorDataset:
    """Read a ``user,item,behavior,timestamp`` log into a dataset.

    Duplicate ``(user, item, behavior)`` rows collapse to the earliest
    timestamp. Users and items are indexed in order of first appearance.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    cols = {**DEFAULT_COLUMNS, **(column_map or {})}
    with open(path, newline="", encoding="utf-8") as fh:
        return _ingest_rows(fh, schema, cols, delimiter, str(path))


def ingest_text(text: str, schema: BehaviorSchema, column_map: dict | None = None,
                delimiter: str = ",") -> BehaviorDataset:
    cols = {**DEFAULT_COLUMNS, **(column_map or {})}
    return _ingest_rows(io.StringIO(text), schema, cols, delimiter, "<text>")


def _ingest_rows(fh, schema, cols, delimiter, source):
    reader = csv.reader(fh, delimiter=delimiter)
    header = next(reader, None)
    if header is None:
        raise DataError(f"{source}: empty file")
    header = [h.strip() for h in header]
    try:
        pos = {f: header.index(cols[f]) for f in ("user", "item", "behavior")}
    except ValueError as exc:
        raise DataError(f"{source}: missing column ({exc}); header is {header}") from None
    # The timestamp column is optional; without it the split holds out a random item.
    has_ts = cols["timestamp"] in header
    if has_ts:
        pos["timestamp"] = header.index(cols["timestamp"])
    width = len(header)

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    earliest: list[dict[tuple[int, int], int]] = [dict() for _ in schema.names]
    nrows = 0
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise DataError(f"{source}: line {line}: expected {width} fields, got {len(row)}")
        user, item, beh = (row[pos[f]].strip() for f in ("user", "item", "behavior"))
        if not user or not item:
            raise DataError(f"{source}: line {line}: empty user or item id")
        ts = 0
        if has_ts:
            raw = row[pos["timestamp"]].strip()
            try:
                ts = int(raw)
            except ValueError:
                raise DataError(f"{source}: line {line}: timestamp {raw!r} is not an integer") from None
            if ts < 0:
                raise DataError(f"{source}: line {line}: negative timestamp {ts}")
        if beh not in schema.names:
            raise DataError(f"{source}: line {line}: unknown behavior label {beh!r}")
        r = schema.names.index(beh)
        u = user_index.setdefault(user, len(user_index))
        i = item_index.setdefault(item, len(item_index))
        seen = earliest[r].get((u, i))
        if seen is None or ts < seen:
            earliest[r][(u, i)] = ts
        nrows += 1
    if nrows == 0:
        raise DataError(f"{source}: empty file (no data rows)")

    pairs, stamps = [], []
    for table in earliest:
        keys = np.array(list(table.keys()), dtype=np.int64).reshape(-1, 2)
        pairs.append(keys)
        stamps.append(np.array(list(table.values()), dtype=np.int64))
    return BehaviorDataset(schema, tuple(user_index), tuple(item_index), tuple(pairs),
                           tuple(stamps) if has_ts else None)


def _introduction_order(ds: BehaviorDataset):
    """Row order under which first appearances reproduce the dataset's indices.

    Returns a list of (behavior, user, item) rows, or None when no such order
    exists (e.g. datasets with items that have no interactions).
    """
    M, N = ds.num_users, ds.num_items
    up = ds.union_pairs
    if len(up) == 0:
        return None
    first_item_of_user = np.full(M, -1)
    first_user_of_item = np.full(N, -1)
    users_of_pair, items_of_pair = up[:, 0], up[:, 1]
    # union_pairs is sorted by (user, item): first occurrence per user is its min item
    uniq_u, first = np.unique(users_of_pair, return_index=True)
    first_item_of_user[uniq_u] = items_of_pair[first]
    by_item = np.lexsort((users_of_pair, items_of_pair))
    uniq_i, first = np.unique(items_of_pair[by_item], return_index=True)
    first_user_of_item[uniq_i] = users_of_pair[by_item][first]
    if np.any(first_item_of_user < 0) or np.any(first_user_of_item < 0):
        return None

    union_codes = set((up[:, 0] * N + up[:, 1]).tolist())
    intro = []
    nu = ni = 0
    while nu < M or ni < N:
        if nu < M and first_item_of_user[nu] < ni:
            intro.append((nu, int(first_item_of_user[nu])))
            nu += 1
        elif ni < N and first_user_of_item[ni] < nu:
            intro.append((int(first_user_of_item[ni]), ni))
            ni += 1
        elif nu < M and ni < N and nu * N + ni in union_codes:
            intro.append((nu, ni))
            nu += 1
            ni += 1
        else:
            return None

    rows = []
    emitted = set()
    for u, i in intro:
        r = next(r for r in range(ds.num_behaviors) if ds.contains(u, i, r))
        rows.append((r, u, i))
        emitted.add((r, u, i))
    for r, pr in enumerate(ds.pairs):
        for u, i in pr.tolist():
            if (r, u, i) not in emitted:
                rows.append((r, u, i))
    return rows


def write_csv(ds: BehaviorDataset, path, column_map: dict | None = None) -> None:
    """Serialise ``ds`` as a CSV log that ``ingest_csv`` maps back onto the same indices."""
    cols = {**DEFAULT_COLUMNS, **(column_map or {})}
    rows = _introduction_order(ds)
    if rows is None:
        rows = [(r, u, i) for r, pr in enumerate(ds.pairs) for u, i in pr.tolist()]
    ts_lookup = None
    if ds.timestamps is not None:
        ts_lookup = [
            dict(zip((pr[:, 0] * ds.num_items + pr[:, 1]).tolist(), ts.tolist()))
            for pr, ts in zip(ds.pairs, ds.timestamps)
        ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = [cols["user"], cols["item"], cols["behavior"]]
        w.writerow(header if ts_lookup is None else header + [cols["timestamp"]])
        for r, u, i in rows:
            row = [ds.user_keys[u], ds.item_keys[i], ds.schema.names[r]]
            if ts_lookup is not None:
                row.append(ts_lookup[r][u * ds.num_items + i])
            w.writerow(row)


# filtering and splitting


def _reindex(ds: BehaviorDataset, keep_users: np.ndarray, drop_orphan_items: bool = True) -> BehaviorDataset:
    user_map = np.full(ds.num_users, -1, dtype=np.int64)
    user_map[keep_users] = np.arange(len(keep_users))
    kept = [pr[user_map[pr[:, 0]] >= 0] for pr in ds.pairs]
    kept_ts = None
    if ds.timestamps is not None:
        kept_ts = [ts[user_map[pr[:, 0]] >= 0] for pr, ts in zip(ds.pairs, ds.timestamps)]
    if drop_orphan_items:
        used = np.zeros(ds.num_items, dtype=bool)
        for pr in kept:
            used[pr[:, 1]] = True
        keep_items = np.flatnonzero(used)
    else:
        keep_items = np.arange(ds.num_items)
    item_map = np.full(ds.num_items, -1, dtype=np.int64)
    item_map[keep_items] = np.arange(len(keep_items))
    new_pairs = [np.stack([user_map[pr[:, 0]], item_map[pr[:, 1]]], axis=1) for pr in kept]
    return BehaviorDataset(
        ds.schema,
        tuple(ds.user_keys[u] for u in keep_users),
        tuple(ds.item_keys[i] for i in keep_items),
        tuple(new_pairs),
        None if kept_ts is None else tuple(kept_ts),
    )


def filter_multi_behavior_users(ds: BehaviorDataset) -> BehaviorDataset:
    """Keep users active under at least two distinct behaviors, then re-index densely."""
    kinds = np.zeros(ds.num_users, dtype=np.int64)
    for r in range(ds.num_behaviors):
        kinds += ds.user_counts(r) > 0
    keep = np.flatnonzero(kinds >= 2)
    if len(keep) == 0:
        raise DataError("empty after filtering: no user has two or more behavior types")
    return _reindex(ds, keep)


@dataclass(frozen=True, eq=False)
class SplitDataset:
    train: BehaviorDataset
    test_items: dict[int, int] = field(default_factory=dict)

    def test_users(self) -> np.ndarray:
        return np.array(sorted(self.test_items), dtype=np.int64)

    def save(self, path) -> None:
        path = Path(path)
        self.train.save(path.with_suffix(".train.npz"))
        users = self.test_users()
        items = np.array([self.test_items[u] for u in users], dtype=np.int64)
        with open(path, "wb") as fh:
            np.savez(fh, users=users, items=items)

    @classmethod
    def load(cls, path) -> "SplitDataset":
        path = Path(path)
        train = BehaviorDataset.load(path.with_suffix(".train.npz"))
        with np.load(path) as z:
            test = dict(zip(z["users"].tolist(), z["items"].tolist()))
        return cls(train, test)


def leave_one_out_split(ds: BehaviorDataset, rng_seed: int = 0, by_timestamp: bool = True) -> SplitDataset:
    """Hold out one target-behavior item per user with at least two of them.

    With timestamps (and ``by_timestamp``) the latest interaction is held out,
    ties going to the larger item index; otherwise the choice is uniform under
    ``rng_seed``. Lower behaviors keep the held-out pair.
    """
    t = ds.schema.target_index
    if ds.count(t) == 0:
        raise DataError("target behavior has no interactions")
    rng = np.random.default_rng(rng_seed)
    pr = ds.pairs[t]
    ts = None if ds.timestamps is None else ds.timestamps[t]
    latest = ts is not None and by_timestamp
    indptr = ds._indptr[t]
    drop = np.zeros(len(pr), dtype=bool)
    test_items = {}
    for u in range(ds.num_users):
        lo, hi = indptr[u], indptr[u + 1]
        if hi - lo < 2:
            continue
        if latest:
            seg = ts[lo:hi]
            k = lo + int(np.flatnonzero(seg == seg.max())[-1])
        else:
            k = lo + int(rng.integers(hi - lo))
        drop[k] = True
        test_items[u] = int(pr[k, 1])
    pairs = list(ds.pairs)
    pairs[t] = pr[~drop]
    stamps = None
    if ds.timestamps is not None:
        stamps = list(ds.timestamps)
        stamps[t] = ts[~drop]
    return SplitDataset(ds.with_pairs(pairs, None if stamps is None else tuple(stamps)), test_items)


# synthesis


@dataclass
class SynthConfig:
    num_users: int = 300
    num_items: int = 150
    num_behaviors: int = 2
    latent_dim: int = 8
    funnel_probs: tuple[float, ...] = (0.5, 0.1)
    seed: int = 0
    signal_scale: float = 6.0
    offset: float = 0.0
    acceptance: str = "bernoulli"
    behavior_names: tuple[str, ...] | None = None

    def names(self) -> tuple[str, ...]:
        if self.behavior_names is not None:
            return tuple(self.behavior_names)
        if self.num_behaviors == 2:
            return ("view", "purchase")
        if self.num_behaviors == 3:
            return ("view", "cart", "purchase")
        return tuple(f"b{r + 1}" for r in range(self.num_behaviors))


def synthesize_cascade(config: SynthConfig) -> BehaviorDataset:
    """Plant latent factors and draw a strictly nested behavior funnel.

    The base acceptance score of ``(u, i)`` is
    ``logistic(signal_scale * <x_u, y_i> + offset)`` with unit-norm factors.
    Level ``r`` can only fire where level ``r-1`` fired, with probability
    ``funnel_probs[r] * score``. In ``"threshold"`` mode a level fires
    deterministically when ``funnel_probs[r] * score > 0.5``.
    """
    c = config
    if min(c.num_users, c.num_items, c.num_behaviors, c.latent_dim) < 1:
        raise DataError("num_users, num_items, num_behaviors and latent_dim must all be >= 1")
    probs = np.asarray(c.funnel_probs, dtype=float)
    if len(probs) != c.num_behaviors:
        raise DataError(f"funnel_probs needs {c.num_behaviors} entries, got {len(probs)}")
    if np.any(probs < 0) or np.any(probs > 1):
        raise DataError("funnel_probs must lie in (0, 1]")
    if c.acceptance not in ("bernoulli", "threshold"):
        raise DataError(f"unknown acceptance mode {c.acceptance!r}")

    rng = np.random.default_rng(c.seed)
    X = rng.normal(size=(c.num_users, c.latent_dim))
    Y = rng.normal(size=(c.num_items, c.latent_dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    Y /= np.linalg.norm(Y, axis=1, keepdims=True)
    score = sigmoid(c.signal_scale * (X @ Y.T) + c.offset)

    alive = np.ones((c.num_users, c.num_items), dtype=bool)
    pairs = []
    for r in range(c.num_behaviors):
        if c.acceptance == "threshold":
            fire = probs[r] * score > 0.5
        else:
            fire = rng.random(score.shape) < probs[r] * score
        alive &= fire
        pairs.append(np.argwhere(alive))
    if len(pairs[-1]) == 0:
        raise DataError("synthetic config produced no target interactions; use larger funnel_probs")
    users = tuple(f"u{u}" for u in range(c.num_users))
    items = tuple(f"i{i}" for i in range(c.num_items))
    return BehaviorDataset(BehaviorSchema(c.names()), users, items, tuple(pairs))


# sparsity groups

_RANGE = re.compile(r"^\s*(\d+)\s*[-–]\s*(\d+|inf|∞)\s*$")
_ABOVE = re.compile(r"^\s*>\s*(\d+)\s*$")


def parse_bounds(bounds) -> list[tuple[str, int, float]]:
    """Normalise group bounds to ``(label, lo, hi)`` with inclusive ends.

    Accepts strings like ``"5-8"``, ``">20"``, ``"3-inf"`` or ``(lo, hi)``
    tuples where ``hi`` may be ``None`` for an open end.
    """
    out = []
    for b in bounds:
        if isinstance(b, str):
            m = _RANGE.match(b)
            if m:
                lo = int(m.group(1))
                hi = math.inf if m.group(2) in ("inf", "∞") else int(m.group(2))
            elif (m := _ABOVE.match(b)):
                lo, hi = int(m.group(1)) + 1, math.inf
            else:
                raise DataError(f"cannot parse group bound {b!r}")
            label = b.strip()
        else:
            lo, hi = b
            hi = math.inf if hi is None else hi
            label = f">{lo - 1}" if hi == math.inf else f"{lo}-{hi}"
        if hi < lo:
            raise DataError(f"empty group range {label!r}")
        out.append((label, lo, hi))
    ordered = sorted(out, key=lambda t: t[1])
    for (la, _, hi_a), (lb, lo_b, _) in zip(ordered, ordered[1:]):
        if lo_b <= hi_a:
            raise DataError(f"overlapping group ranges {la!r} and {lb!r}")
    return out


def sparsity_groups(ds: BehaviorDataset, bounds) -> dict[str, list[int]]:
    """Bucket users by their number of target-behavior interactions."""
    spec = parse_bounds(bounds)
    counts = ds.user_counts(ds.schema.target_index)
    groups: dict[str, list[int]] = {label: [] for label, _, _ in spec}
    for u, n in enumerate(counts.tolist()):
        for label, lo, hi in spec:
            if lo <= n <= hi:
                groups[label].append(u)
                break
    return groups
