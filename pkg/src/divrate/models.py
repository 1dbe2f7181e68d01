"""Generative model description and observed-cell containers.

A ModelSpec bundles what defines a population: the trigger variable that
drives division (age, size, or size increment), the division rate in that
variable, the growth law, the daughter/mother ratio law, and optional
growth-rate variability drawn independently at each birth.

A SampleSet is the observable output of an experiment or a simulation
under one of three schemes: U1 follows one uniformly chosen daughter for a
fixed number of generations, U2 keeps every cell that divided before a
horizon T, VT records the cells alive at time T (age and size at T only).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rates import FragmentationKernel, GrowthLaw, RateFunction

__all__ = ["RngStream", "GrowthVariability", "ModelSpec", "CellRecord", "SampleSet"]

TRIGGERS = ("age", "size", "increment")


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream: (seed, stream id) -> generator.

    Distinct stream ids under the same seed give statistically independent
    generators (SeedSequence spawn-key splitting), so trees simulated on
    different streams are independent reproducible units.
    """

    seed: int
    stream: int = 0

    def generator(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.default_rng(ss)

    def child(self, stream):
        return RngStream(self.seed, stream)


@dataclass(frozen=True)
class GrowthVariability:
    """Independent growth-rate draw at each birth: lognormal with the
    model's mean rate and the given coefficient of variation."""

    cv: float

    def sample(self, rng, mean, size=None):
        if self.cv <= 0:
            return np.full(size, mean) if size is not None else float(mean)
        sigma2 = np.log1p(self.cv**2)
        mu = np.log(mean) - 0.5 * sigma2
        return rng.lognormal(mean=mu, sigma=np.sqrt(sigma2), size=size)


@dataclass(frozen=True)
class ModelSpec:
    """Full generative description of a growing and dividing population.

    The instantaneous division probability in a time interval dt is
    B(a) dt for the age trigger, speed(x) B(x) dt for the size trigger and
    speed(birth_size + z) B(z) dt for the increment trigger, i.e. the rate
    is always per unit of the trigger variable.
    """

    trigger: str
    rate: RateFunction
    growth: GrowthLaw = field(default_factory=lambda: GrowthLaw.exponential(1.0))
    kernel: FragmentationKernel = field(default_factory=FragmentationKernel.mitosis)
    growth_variability: GrowthVariability | None = None

    def __post_init__(self):
        if self.trigger not in TRIGGERS:
            raise ValueError(f"trigger must be one of {TRIGGERS}")

    def draw_growth_rates(self, rng, size=None):
        mean = self.growth.kappa if self.growth.kind == "exponential" else 1.0
        if self.growth_variability is None:
            return np.full(size, mean) if size is not None else float(mean)
        return self.growth_variability.sample(rng, mean, size=size)

    def growth_law_for(self, kappa):
        """Per-cell growth law (exponential growth scales with the drawn rate)."""
        if self.growth.kind == "exponential":
            return GrowthLaw.exponential(kappa)
        return self.growth


@dataclass(frozen=True)
class CellRecord:
    """One cell of the tree, Ulam-Neveu addressed.

    Completed cells carry birth time, size at birth, lifetime, size at
    division, the increment between them and the individual growth rate;
    cells only observed alive (VT scheme) leave the division fields NaN.
    """

    id: str
    parent: str | None
    birth_time: float
    size_birth: float
    lifetime: float
    size_division: float
    increment: float
    growth_rate: float


class SampleSet:
    """Columnar container of observed cells under one observation scheme."""

    COLUMNS = ("id", "parent_id", "birth_time", "size_birth", "lifetime",
               "size_division", "increment", "growth_rate", "scheme")

    def __init__(self, scheme, ids, parent_index, birth_time, size_birth,
                 lifetime, size_division, increment, growth_rate,
                 snapshot_time=None, metadata=None):
        self.scheme = scheme
        self.ids = np.asarray(ids, dtype=object)
        self.parent_index = np.asarray(parent_index, dtype=np.int64)
        self.birth_time = np.asarray(birth_time, dtype=float)
        self.size_birth = np.asarray(size_birth, dtype=float)
        self.lifetime = np.asarray(lifetime, dtype=float)
        self.size_division = np.asarray(size_division, dtype=float)
        self.increment = np.asarray(increment, dtype=float)
        self.growth_rate = np.asarray(growth_rate, dtype=float)
        self.snapshot_time = snapshot_time
        self.metadata = dict(metadata or {})

    def __len__(self):
        return self.ids.size

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return (self.scheme == other.scheme
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.parent_index, other.parent_index)
                and np.array_equal(self.birth_time, other.birth_time)
                and np.array_equal(self.size_birth, other.size_birth, equal_nan=True)
                and np.array_equal(self.lifetime, other.lifetime, equal_nan=True)
                and np.array_equal(self.size_division, other.size_division, equal_nan=True)
                and np.array_equal(self.increment, other.increment, equal_nan=True)
                and np.array_equal(self.growth_rate, other.growth_rate, equal_nan=True))

    # -- observables --------------------------------------------------------

    @property
    def lifetimes(self):
        z = self.lifetime
        return z[np.isfinite(z)]

    @property
    def birth_sizes(self):
        x = self.size_birth
        return x[np.isfinite(x)]

    @property
    def division_sizes(self):
        x = self.size_division
        return x[np.isfinite(x)]

    @property
    def increments(self):
        x = self.increment
        return x[np.isfinite(x)]

    @property
    def ages_at_snapshot(self):
        if self.snapshot_time is None:
            raise ValueError("ages at snapshot only exist for the VT scheme")
        return self.snapshot_time - self.birth_time

    @property
    def sizes_at_snapshot(self):
        if self.snapshot_time is None:
            raise ValueError("sizes at snapshot only exist for the VT scheme")
        if "size_at_snapshot" not in self.metadata:
            raise ValueError("snapshot sizes were not recorded")
        return self.metadata["size_at_snapshot"]

    def birth_size_chain(self):
        """(parent birth size, child birth size) pairs over recorded links."""
        has_parent = self.parent_index >= 0
        child = np.flatnonzero(has_parent)
        parent = self.parent_index[child]
        ok = np.isfinite(self.size_birth[child]) & np.isfinite(self.size_birth[parent])
        return self.size_birth[parent[ok]], self.size_birth[child[ok]]

    def division_pairs(self):
        """(increment at division, size at division) over completed cells."""
        ok = np.isfinite(self.increment) & np.isfinite(self.size_division)
        return self.increment[ok], self.size_division[ok]

    def records(self):
        for i in range(len(self)):
            p = self.parent_index[i]
            yield CellRecord(
                id=self.ids[i],
                parent=(self.ids[p] if p >= 0 else None),
                birth_time=self.birth_time[i],
                size_birth=self.size_birth[i],
                lifetime=self.lifetime[i],
                size_division=self.size_division[i],
                increment=self.increment[i],
                growth_rate=self.growth_rate[i],
            )

    def size_at_sampled_time(self, rng, growth=None):
        """One size observation per completed cell at a uniform time in its life.

        Approximates the all-cells (time-aggregated) size distribution from
        lineage records; needs the growth law to replay the within-life flow.
        """
        if growth is None:
            growth = GrowthLaw.exponential(1.0)
        ok = np.isfinite(self.lifetime) & np.isfinite(self.size_birth)
        t = rng.random(ok.sum()) * self.lifetime[ok]
        if growth.kind == "exponential":
            return self.size_birth[ok] * np.exp(self.growth_rate[ok] * t)
        return growth.flow(t, self.size_birth[ok])

    def alive_count_series(self):
        """(times, alive counts) reconstructed from completed divisions.

        Every division nets one extra live cell, so the alive count after
        the j-th recorded division time is (number of roots) + j.
        """
        d = self.birth_time + self.lifetime
        d = np.sort(d[np.isfinite(d)])
        n_roots = int(np.sum(self.parent_index < 0))
        if d.size == 0:
            raise ValueError("no completed divisions to count")
        counts = n_roots + np.arange(1, d.size + 1, dtype=float)
        return d, counts

    def merged_with(self, other, tags=("A", "B")):
        return merge_sample_sets([self, other], tags=tags)


def merge_sample_sets(sets, tags=None):
    """Concatenate SampleSets from independent trees (ids get a tree tag)."""
    if not sets:
        raise ValueError("nothing to merge")
    scheme = sets[0].scheme
    if any(s.scheme != scheme for s in sets):
        raise ValueError("cannot merge different observation schemes")
    if tags is None:
        tags = [str(i) for i in range(len(sets))]
    ids, parent_index = [], []
    offset = 0
    for s, tag in zip(sets, tags):
        ids.extend(f"{tag}:{i}" for i in s.ids)
        parent_index.append(np.where(s.parent_index >= 0, s.parent_index + offset, -1))
        offset += len(s)
    meta = dict(sets[0].metadata)
    meta["merged"] = len(sets)
    if any("size_at_snapshot" in s.metadata for s in sets):
        meta["size_at_snapshot"] = np.concatenate(
            [s.metadata.get("size_at_snapshot", np.empty(0)) for s in sets])
    meta["censored_count"] = int(sum(s.metadata.get("censored_count", 0) for s in sets))
    return SampleSet(
        scheme=scheme,
        ids=np.array(ids, dtype=object),
        parent_index=np.concatenate(parent_index),
        birth_time=np.concatenate([s.birth_time for s in sets]),
        size_birth=np.concatenate([s.size_birth for s in sets]),
        lifetime=np.concatenate([s.lifetime for s in sets]),
        size_division=np.concatenate([s.size_division for s in sets]),
        increment=np.concatenate([s.increment for s in sets]),
        growth_rate=np.concatenate([s.growth_rate for s in sets]),
        snapshot_time=sets[0].snapshot_time,
        metadata=meta,
    )
