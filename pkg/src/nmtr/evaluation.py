"""Leave-one-out all-item ranking evaluation with HR@K and NDCG@K.

A model is anything with ``score_users(users) -> (len(users), N)`` target
scores. For each test user the candidates are all items minus the user's
training target-behavior items, plus the held-out item. Its rank counts the
candidates scoring strictly higher, with ties broken by ascending item index.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import SplitDataset, parse_bounds, sparsity_groups

DEFAULT_KS = (50, 80, 100, 200)


@dataclass(frozen=True)
class RankResult:
    user: int
    rank: int


def _candidate_mask(split: SplitDataset, u: int, exclude: str) -> np.ndarray:
    ds = split.train
    mask = np.ones(ds.num_items, dtype=bool)
    if exclude == "target":
        mask[ds.user_items(u, ds.schema.target_index)] = False
    elif exclude == "any":
        for r in range(ds.num_behaviors):
            mask[ds.user_items(u, r)] = False
    elif exclude != "none":
        raise ValueError(f"unknown exclusion scope {exclude!r}")
    mask[split.test_items[u]] = True
    return mask


def _rank(scores: np.ndarray, mask: np.ndarray, test: int) -> int:
    s = scores[test]
    above = np.count_nonzero(mask & (scores > s))
    tied_before = np.count_nonzero(mask[:test] & (scores[:test] == s))
    return 1 + int(above) + int(tied_before)


def rank_test_item(model, split: SplitDataset, u: int, exclude: str = "target") -> RankResult:
    if u not in split.test_items:
        raise KeyError(f"user {u} has no test item")
    scores = np.asarray(model.score_users(np.array([u]))[0])
    return RankResult(u, _rank(scores, _candidate_mask(split, u, exclude), split.test_items[u]))


def rank_all(model, split: SplitDataset, users=None, exclude: str = "target", chunk: int = 256) -> list[RankResult]:
    users = split.test_users() if users is None else np.asarray(users, dtype=np.int64)
    out = []
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = np.asarray(model.score_users(block))
        for row, u in zip(scores, block.tolist()):
            out.append(RankResult(u, _rank(row, _candidate_mask(split, u, exclude), split.test_items[u])))
    return out


def _ranks(ranks) -> np.ndarray:
    r = np.array([x.rank if isinstance(x, RankResult) else x for x in ranks], dtype=np.int64)
    if r.size == 0:
        raise ValueError("no ranks to aggregate")
    return r


def hit_ratio(ranks, K: int) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    r = _ranks(ranks)
    return float(np.mean(r <= K))


def ndcg(ranks, K: int) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    r = _ranks(ranks)
    gains = np.where(r <= K, 1.0 / np.log2(r + 1.0), 0.0)
    return float(np.mean(gains))


@dataclass
class EvalCounters:
    """Additive hit/gain sums, so user shards merge by summation."""

    ks: tuple[int, ...]
    hits: np.ndarray = None
    gains: np.ndarray = None
    users: int = 0

    def __post_init__(self):
        if self.hits is None:
            self.hits = np.zeros(len(self.ks))
        if self.gains is None:
            self.gains = np.zeros(len(self.ks))

    def add(self, rank: int) -> None:
        for k, K in enumerate(self.ks):
            if rank <= K:
                self.hits[k] += 1
                self.gains[k] += 1.0 / math.log2(rank + 1)
        self.users += 1

    def __add__(self, other: "EvalCounters") -> "EvalCounters":
        assert self.ks == other.ks
        return EvalCounters(self.ks, self.hits + other.hits, self.gains + other.gains, self.users + other.users)


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    hr: dict[int, float]
    ndcg: dict[int, float]
    num_users: int
    groups: dict[str, "EvalReport"] = field(default_factory=dict)

    @classmethod
    def from_counters(cls, c: EvalCounters) -> "EvalReport":
        n = max(c.users, 1)
        return cls(c.ks, {K: float(h / n) for K, h in zip(c.ks, c.hits)},
                   {K: float(g / n) for K, g in zip(c.ks, c.gains)}, c.users)

    def rows(self, model: str = "") -> list[dict]:
        out = [{"model": model, "K": K, "HR": self.hr[K], "NDCG": self.ndcg[K], "group": "all"}
               for K in self.ks]
        for label, sub in self.groups.items():
            out += [{"model": model, "K": K, "HR": sub.hr[K], "NDCG": sub.ndcg[K], "group": label}
                    for K in sub.ks]
        return out

    def to_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "num_users": self.num_users,
            "HR": {str(K): v for K, v in self.hr.items()},
            "NDCG": {str(K): v for K, v in self.ndcg.items()},
            "groups": {label: sub.to_dict() for label, sub in self.groups.items()},
        }

    def write(self, json_path, csv_path, model: str = "") -> None:
        with open(json_path, "w") as fh:
            json.dump({"model": model, **self.to_dict()}, fh, indent=2)
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["model", "K", "HR", "NDCG", "group"])
            w.writeheader()
            w.writerows(self.rows(model))


def evaluate(model, split: SplitDataset, ks=DEFAULT_KS, groups=None, exclude: str = "target",
             workers: int = 1, chunk: int = 256) -> EvalReport:
    """HR@K / NDCG@K over all test users, optionally per sparsity group.

    Group membership counts each user's training target interactions.
    """
    ks = tuple(sorted(int(K) for K in ks))
    users = split.test_users()
    if len(users) == 0:
        raise ValueError("split has no test users")
    shards = [users[i:i + chunk] for i in range(0, len(users), chunk)]

    def run(block):
        return rank_all(model, split, block, exclude, chunk)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, shards))
    else:
        parts = [run(b) for b in shards]
    rank_of = {r.user: r.rank for part in parts for r in part}

    total = EvalCounters(ks)
    for u in users.tolist():
        total.add(rank_of[u])
    report = EvalReport.from_counters(total)
    if groups:
        members = sparsity_groups(split.train, groups)
        for label, _, _ in parse_bounds(groups):
            c = EvalCounters(ks)
            for u in members[label]:
                if u in rank_of:
                    c.add(rank_of[u])
            report.groups[label] = EvalReport.from_counters(c)
    return report
