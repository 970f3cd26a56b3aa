"""Contiguous depth partitions (phases)."""
import json
import math
from dataclasses import dataclass

from .errors import DataError


@dataclass(frozen=True)
class Partition:
    """k contiguous 1-based inclusive segments covering layers 1..n.

    ``groups`` is only set for non-contiguous baselines: it holds the actual
    layer membership of each group, while ``segments`` then carries the group
    sizes as a schedule.
    """

    segments: tuple
    score: float = math.nan
    groups: tuple = None

    def __post_init__(self):
        segs = tuple((int(b), int(e)) for b, e in self.segments)
        if not segs:
            raise DataError("partition needs at least one segment")
        if segs[0][0] != 1:
            raise DataError(f"first segment must start at layer 1, got {segs[0]}")
        for (b, e), nxt in zip(segs, segs[1:] + (None,)):
            if e < b:
                raise DataError(f"empty segment [{b}, {e}]")
            if nxt is not None and nxt[0] != e + 1:
                raise DataError(f"segments [{b}, {e}] and {list(nxt)} are not contiguous")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "score", float(self.score))
        if self.groups is not None:
            groups = tuple(tuple(sorted(int(x) for x in g)) for g in self.groups)
            if sorted(x for g in groups for x in g) != list(range(1, self.n + 1)):
                raise DataError("groups must cover layers 1..n exactly once")
            object.__setattr__(self, "groups", groups)

    @classmethod
    def from_schedule(cls, schedule, score=math.nan):
        segs, start = [], 1
        for n_j in schedule:
            if int(n_j) < 1:
                raise DataError(f"schedule entries must be >= 1, got {list(schedule)}")
            segs.append((start, start + int(n_j) - 1))
            start += int(n_j)
        return cls(tuple(segs), score)

    @property
    def k(self):
        return len(self.segments)

    @property
    def n(self):
        return self.segments[-1][1]

    @property
    def schedule(self):
        return tuple(e - b + 1 for b, e in self.segments)

    @property
    def contiguous(self):
        return self.groups is None

    def members(self):
        """Layer lists per group (contiguous ranges unless this is a shuffle)."""
        if self.groups is not None:
            return [list(g) for g in self.groups]
        return [list(range(b, e + 1)) for b, e in self.segments]

    def segment_of(self, layer):
        """(segment index, step within segment) for a 1-based target layer."""
        for j, (b, e) in enumerate(self.segments):
            if b <= layer <= e:
                return j, layer - b
        raise IndexError(f"layer {layer} outside 1..{self.n}")

    def same_split(self, other):
        return self.segments == other.segments and self.groups == other.groups

    def to_dict(self):
        out = {"k": self.k, "segments": [list(s) for s in self.segments],
               "score": None if math.isnan(self.score) else self.score}
        if self.groups is not None:
            out["groups"] = [list(g) for g in self.groups]
        return out

    @classmethod
    def from_dict(cls, d):
        score = d.get("score")
        p = cls(tuple(tuple(s) for s in d["segments"]),
                math.nan if score is None else score, d.get("groups"))
        if "k" in d and int(d["k"]) != p.k:
            raise DataError(f"partition says k={d['k']} but lists {p.k} segments")
        return p

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))
