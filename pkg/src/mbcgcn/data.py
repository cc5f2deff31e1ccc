"""Interaction log ingestion, deduplication, leave-one-out splitting and
seeded synthetic datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed interaction line."""

    def __init__(self, line_no: int, field_name: str, message: str):
        self.line_no = line_no
        self.field_name = field_name
        super().__init__(f"line {line_no}: field {field_name!r}: {message}")


class ConfigError(ValueError):
    pass


class IdMap:
    """Raw string ID <-> dense index table, grown on first sight."""

    def __init__(self, raw_ids: Iterable[str] = ()):
        self._index: dict[str, int] = {}
        self._raw: list[str] = []
        for raw in raw_ids:
            self.add(raw)

    def add(self, raw: str) -> int:
        idx = self._index.get(raw)
        if idx is None:
            idx = len(self._raw)
            self._index[raw] = idx
            self._raw.append(raw)
        return idx

    def index(self, raw: str) -> int:
        return self._index[raw]

    def raw(self, idx: int) -> str:
        return self._raw[idx]

    def __len__(self) -> int:
        return len(self._raw)

    def __contains__(self, raw: str) -> bool:
        return raw in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, IdMap) and self._raw == other._raw

    def copy(self) -> "IdMap":
        return IdMap(self._raw)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx, raw in enumerate(self._raw):
                fh.write(f"{raw}\t{idx}\n")

    @classmethod
    def load(cls, path: str | Path) -> "IdMap":
        out = cls()
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                raw, idx = line.split("\t")
                if int(idx) != len(out):
                    raise ParseError(line_no, "dense_index", "indices must be contiguous from 0")
                out.add(raw)
        return out


@dataclass
class IdMaps:
    users: IdMap = field(default_factory=IdMap)
    items: IdMap = field(default_factory=IdMap)


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    behavior: int
    timestamp: int | None = None


@dataclass(frozen=True, eq=False)
class InteractionSet:
    """Interactions of one behavior, stored column-wise in insertion order.

    ``timestamps`` is None when the source carried no time column; insertion
    order then stands in for time.
    """

    behavior: int
    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "users", np.asarray(self.users, dtype=np.int64))
        object.__setattr__(self, "items", np.asarray(self.items, dtype=np.int64))
        if self.timestamps is not None:
            object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=np.int64))
            if self.timestamps.shape != self.users.shape:
                raise ValueError("timestamps must align with users")
        if self.users.shape != self.items.shape:
            raise ValueError("users and items must align")

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self):
        for k in range(len(self)):
            ts = None if self.timestamps is None else int(self.timestamps[k])
            yield Interaction(int(self.users[k]), int(self.items[k]), self.behavior, ts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InteractionSet):
            return NotImplemented
        if self.behavior != other.behavior or (self.timestamps is None) != (other.timestamps is None):
            return False
        same = np.array_equal(self.users, other.users) and np.array_equal(self.items, other.items)
        if self.timestamps is not None:
            same = same and np.array_equal(self.timestamps, other.timestamps)
        return same

    def order_keys(self) -> np.ndarray:
        """Time key per entry; ties are resolved by position (stable sorts)."""
        if self.timestamps is None:
            return np.arange(len(self), dtype=np.int64)
        return self.timestamps

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.users.tolist(), self.items.tolist()))

    def subset(self, mask: np.ndarray) -> "InteractionSet":
        ts = None if self.timestamps is None else self.timestamps[mask]
        return InteractionSet(self.behavior, self.users[mask], self.items[mask], ts)

    @classmethod
    def empty(cls, behavior: int, with_timestamps: bool = False) -> "InteractionSet":
        e = np.zeros(0, dtype=np.int64)
        return cls(behavior, e, e, e if with_timestamps else None)


@dataclass(frozen=True)
class MultiBehaviorDataset:
    M: int
    N: int
    chain: tuple[str, ...]
    sets: tuple[InteractionSet, ...]
    id_maps: IdMaps = field(default_factory=IdMaps, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(self.chain))
        object.__setattr__(self, "sets", tuple(self.sets))
        if not self.chain:
            raise ConfigError("behavior chain is empty")
        if len(self.sets) != len(self.chain):
            raise ConfigError(f"{len(self.chain)} behaviors but {len(self.sets)} interaction sets")
        for b, s in enumerate(self.sets):
            if s.behavior != b:
                raise ConfigError(f"set at chain position {b} is tagged behavior {s.behavior}")
            if len(s) and (s.users.min() < 0 or s.users.max() >= self.M
                           or s.items.min() < 0 or s.items.max() >= self.N):
                raise ConfigError(f"behavior {self.chain[b]!r} has indices outside {self.M}x{self.N}")

    @property
    def B(self) -> int:
        return len(self.chain)

    @property
    def target(self) -> InteractionSet:
        return self.sets[-1]

    def select(self, names: Sequence[str]) -> "MultiBehaviorDataset":
        """Sub-chain/reordering by behavior name; the last name becomes the target."""
        sets = []
        for b, name in enumerate(names):
            if name not in self.chain:
                raise ConfigError(f"unknown behavior {name!r}")
            s = self.sets[self.chain.index(name)]
            sets.append(InteractionSet(b, s.users, s.items, s.timestamps))
        return MultiBehaviorDataset(self.M, self.N, tuple(names), tuple(sets), self.id_maps)

    def to_bytes(self) -> bytes:
        """Canonical serialization, used for determinism checks."""
        parts = [f"{self.M} {self.N} {'>'.join(self.chain)}".encode()]
        for s in self.sets:
            parts.append(s.users.tobytes() + s.items.tobytes())
            parts.append(b"-" if s.timestamps is None else s.timestamps.tobytes())
        return b"|".join(parts)


@dataclass(frozen=True)
class SplitDataset:
    train: MultiBehaviorDataset
    validation: dict[int, int]
    test: dict[int, int]

    def train_positives(self) -> list[np.ndarray]:
        """Sorted train target items per user."""
        return positives_by_user(self.train.target, self.train.M)


def positives_by_user(s: InteractionSet, M: int) -> list[np.ndarray]:
    order = np.lexsort((s.items, s.users))
    users, items = s.users[order], s.items[order]
    bounds = np.searchsorted(users, np.arange(M + 1))
    return [np.unique(items[bounds[u]:bounds[u + 1]]) for u in range(M)]


def parse_interactions(raw_lines: Iterable[str], behavior: int, id_maps: IdMaps) -> InteractionSet:
    """Parse ``user<TAB>item[<TAB>timestamp]`` lines, growing ``id_maps``."""
    users, items, stamps = [], [], []
    has_ts: bool | None = None
    for line_no, line in enumerate(raw_lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise ParseError(line_no, "line", f"expected 2 or 3 tab-separated fields, got {len(fields)}")
        if not fields[0]:
            raise ParseError(line_no, "user_id", "empty")
        if not fields[1]:
            raise ParseError(line_no, "item_id", "empty")
        line_has_ts = len(fields) == 3
        if has_ts is None:
            has_ts = line_has_ts
        elif has_ts != line_has_ts:
            raise ParseError(line_no, "timestamp", "timestamp column must be present on all lines or none")
        if line_has_ts:
            try:
                stamps.append(int(fields[2]))
            except ValueError:
                raise ParseError(line_no, "timestamp", f"not an integer: {fields[2]!r}") from None
        users.append(id_maps.users.add(fields[0]))
        items.append(id_maps.items.add(fields[1]))
    return InteractionSet(behavior, users, items, stamps if has_ts else None)


def dedup_earliest(s: InteractionSet) -> InteractionSet:
    """Keep one entry per (user, item): the earliest, ties going to the first inserted."""
    if len(s) == 0:
        return s
    # stable sort: earliest key first, insertion order within equal keys
    order = np.lexsort((np.arange(len(s)), s.order_keys(), s.items, s.users))
    u, i = s.users[order], s.items[order]
    first = np.ones(len(s), dtype=bool)
    first[1:] = (u[1:] != u[:-1]) | (i[1:] != i[:-1])
    keep = np.sort(order[first])
    return s.subset(keep)


def load_dataset(paths: Sequence[str | Path], chain: Sequence[str],
                 id_maps: IdMaps | None = None) -> MultiBehaviorDataset:
    """Read one file per behavior (in chain order) and deduplicate each."""
    if len(paths) != len(chain):
        raise ConfigError(f"{len(chain)} behaviors but {len(paths)} input files")
    id_maps = id_maps or IdMaps()
    sets = []
    for b, path in enumerate(paths):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"input file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            sets.append(dedup_earliest(parse_interactions(fh, b, id_maps)))
    return MultiBehaviorDataset(len(id_maps.users), len(id_maps.items), tuple(chain), tuple(sets), id_maps)


def leave_one_out_split(dataset: MultiBehaviorDataset) -> SplitDataset:
    """Hold out each user's last target interaction for test and the second
    last for validation. Users with two target interactions get a test item
    only; users with one keep it in train."""
    target = dataset.target
    n = len(target)
    # chronological within user; equal time keys fall back to insertion order
    order = np.lexsort((np.arange(n), target.order_keys(), target.users))
    users = target.users[order]
    keep = np.ones(n, dtype=bool)
    validation: dict[int, int] = {}
    test: dict[int, int] = {}
    bounds = np.flatnonzero(np.r_[True, users[1:] != users[:-1], True])
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        count = hi - lo
        if count < 2:
            continue
        u = int(users[lo])
        last = order[hi - 1]
        test[u] = int(target.items[last])
        keep[last] = False
        if count >= 3:
            second = order[hi - 2]
            validation[u] = int(target.items[second])
            keep[second] = False
    train_sets = list(dataset.sets[:-1]) + [target.subset(keep)]
    train = replace(dataset, sets=tuple(train_sets))
    return SplitDataset(train, dict(sorted(validation.items())), dict(sorted(test.items())))


@dataclass(frozen=True)
class SyntheticConfig:
    M: int = 500
    N: int = 300
    d_latent: int = 8
    densities: tuple[float, ...] = (0.15, 0.05, 0.02)
    nesting: bool = True
    noise: float = 0.5
    chain: tuple[str, ...] = ("view", "cart", "buy")


def generate_synthetic(config: SyntheticConfig, seed: int) -> MultiBehaviorDataset:
    """Latent-factor dataset: each behavior keeps the globally top-scoring
    user-item pairs. With ``nesting`` one score matrix serves every behavior,
    so the sparser (later) sets are subsets of the denser ones."""
    M, N = config.M, config.N
    dens = tuple(config.densities)
    if len(dens) != len(config.chain):
        raise ConfigError("one density per behavior is required")
    if any(d <= 0 for d in dens):
        raise ConfigError("densities must be positive")
    if any(a < b for a, b in zip(dens, dens[1:])):
        raise ConfigError(f"densities must be non-increasing along the chain: {dens}")
    counts = [int(round(d * M * N)) for d in dens]
    if any(c > M * N for c in counts):
        raise ConfigError(f"density above 1 is not achievable for {M}x{N}")
    if any(c == 0 for c in counts):
        raise ConfigError("a density rounds to zero interactions")

    rng = np.random.default_rng(seed)
    user_f = rng.standard_normal((M, config.d_latent))
    item_f = rng.standard_normal((N, config.d_latent))
    base = user_f @ item_f.T / np.sqrt(config.d_latent)

    def noisy():
        return (base + config.noise * rng.standard_normal((M, N))).ravel()

    shared = noisy() if config.nesting else None
    sets = []
    for b, count in enumerate(counts):
        scores = shared if config.nesting else noisy()
        # stable ordering makes nesting exact even with tied scores
        top = np.sort(np.argsort(-scores, kind="stable")[:count])
        users, items = top // N, top % N
        stamps = np.empty(count, dtype=np.int64)
        bounds = np.flatnonzero(np.r_[True, users[1:] != users[:-1], True])
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            stamps[lo:hi] = rng.permutation(hi - lo)
        sets.append(InteractionSet(b, users, items, stamps))
    id_maps = IdMaps(IdMap(str(u) for u in range(M)), IdMap(str(i) for i in range(N)))
    return MultiBehaviorDataset(M, N, tuple(config.chain), tuple(sets), id_maps)


def write_dataset(dataset: MultiBehaviorDataset, directory: str | Path) -> list[Path]:
    """Write one TSV per behavior using raw IDs; returns the paths in chain order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, s in zip(dataset.chain, dataset.sets):
        path = directory / f"{name}.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            for x in s:
                row = [dataset.id_maps.users.raw(x.user), dataset.id_maps.items.raw(x.item)]
                if x.timestamp is not None:
                    row.append(str(x.timestamp))
                fh.write("\t".join(row) + "\n")
        paths.append(path)
    return paths


def dataset_stats(dataset: MultiBehaviorDataset) -> dict:
    return {
        "users": dataset.M,
        "items": dataset.N,
        "chain": list(dataset.chain),
        "interactions": {name: len(s) for name, s in zip(dataset.chain, dataset.sets)},
    }
