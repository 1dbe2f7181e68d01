"""Exact continuous-time simulation of the binary division tree.

Division times are drawn by inverting the cumulative hazard of the trigger
variable at an exponential target, so a draw is exact for tabulated and
closed-form rates alike. Three observation schemes are produced: U1 keeps
one uniformly chosen daughter per division for a fixed number of
generations, U2 keeps every cell that divided before the horizon, VT keeps
the cells alive at the horizon with their age and size at that time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import GridDensity
from .kernels import BIWEIGHT, kde
from .models import ModelSpec, RngStream, SampleSet, merge_sample_sets

__all__ = [
    "U1", "U2", "VT",
    "sample_lifetime_age", "sample_division_size", "sample_increment",
    "simulate_tree", "simulate_forest", "empirical_density",
]


@dataclass(frozen=True)
class U1:
    """Genealogical scheme: one daughter followed for `generations` divisions."""

    generations: int


@dataclass(frozen=True)
class U2:
    """Population scheme: all cells divided before the horizon."""

    horizon: float


@dataclass(frozen=True)
class VT:
    """Snapshot scheme: cells alive at the horizon (age and size at T)."""

    horizon: float


def sample_lifetime_age(rate, rng, size=None):
    """Lifetimes with survival exp(-∫_0^a rate) (age-triggered division)."""
    return rate.sample_trigger(rng, size=size)


def sample_division_size(rate, birth_size, rng, size=None):
    """Division sizes with survival exp(-∫_birth^x rate) (size trigger)."""
    return rate.sample_trigger(rng, size=size, start=birth_size)


def sample_increment(rate, rng, size=None):
    """Added size at division with survival exp(-∫_0^z rate) (adder trigger)."""
    return rate.sample_trigger(rng, size=size)


def _complete_cells(spec, birth_size, kappa, rng):
    """Draw (lifetime, division size) for cells of given birth sizes/rates."""
    n = birth_size.size
    if spec.trigger == "age":
        zeta = spec.rate.sample_trigger(rng, size=n)
        if spec.growth.kind == "exponential":
            # sizes may genuinely overflow for long timer lineages; they do
            # not feed back into the tree law
            with np.errstate(over="ignore"):
                chi = birth_size * np.exp(kappa * zeta)
        else:
            chi = spec.growth.flow(zeta, birth_size)
    elif spec.trigger == "size":
        chi = spec.rate.sample_trigger(rng, size=n, start=birth_size)
        zeta = _flow_time(spec, birth_size, chi, kappa)
    else:  # increment
        eta = spec.rate.sample_trigger(rng, size=n)
        chi = birth_size + eta
        zeta = _flow_time(spec, birth_size, chi, kappa)
    return zeta, chi


def _flow_time(spec, x0, x1, kappa):
    if spec.growth.kind == "exponential":
        return np.log(x1 / x0) / kappa
    return spec.growth.time_to_grow(x0, x1)


def _draw_ratios(kernel, rng, size):
    if kernel.is_mitosis:
        return np.full(size, 0.5)
    return kernel.sample(rng, size=size)


def _root_size(spec, root, rng):
    if isinstance(root, GridDensity):
        return float(root.sample(rng))
    return float(root)


def simulate_tree(spec, scheme, rng, root_size=1.0, root_time=0.0, cap=1_000_000):
    """Simulate one tree under `spec` and return the SampleSet for `scheme`.

    rng: an RngStream or a numpy Generator. Identical (spec, scheme, seed)
    give identical output. The discarded sibling in the U1 scheme is not
    recorded; U2 excludes (but counts) cells still alive at the horizon.
    cap: live-cell guard — expansion stops with a truncation flag if the
    breadth-first frontier exceeds it.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if isinstance(scheme, U1):
        return _simulate_lineage(spec, scheme.generations, gen, root_size, root_time)
    if isinstance(scheme, (U2, VT)):
        return _simulate_population(spec, scheme, gen, root_size, root_time, cap)
    raise TypeError(f"unknown scheme {scheme!r}")


def _simulate_lineage(spec, generations, rng, root_size, root_time):
    n_cells = generations + 1
    ids = np.empty(n_cells, dtype=object)
    parent = np.full(n_cells, -1, dtype=np.int64)
    b = np.empty(n_cells)
    xi = np.empty(n_cells)
    zeta = np.empty(n_cells)
    chi = np.empty(n_cells)
    kap = np.empty(n_cells)

    ids[0] = "0"
    b[0] = root_time
    xi[0] = _root_size(spec, root_size, rng)
    for i in range(n_cells):
        kap[i] = spec.draw_growth_rates(rng)
        z, c = _complete_cells(spec, np.array([xi[i]]), np.array([kap[i]]), rng)
        zeta[i], chi[i] = z[0], c[0]
        if i + 1 < n_cells:
            alpha = float(_draw_ratios(spec.kernel, rng, 1)[0])
            side = int(rng.integers(0, 2))
            ids[i + 1] = ids[i] + str(side)
            parent[i + 1] = i
            b[i + 1] = b[i] + zeta[i]
            xi[i + 1] = (alpha if side == 0 else 1.0 - alpha) * chi[i]
    with np.errstate(invalid="ignore"):
        eta = chi - xi
    return SampleSet(
        scheme="U1", ids=ids, parent_index=parent, birth_time=b, size_birth=xi,
        lifetime=zeta, size_division=chi, increment=eta, growth_rate=kap,
        metadata={"trigger": spec.trigger},
    )


def _simulate_population(spec, scheme, rng, root_size, root_time, cap):
    T = scheme.horizon
    done_ids, done_parent, done_b, done_xi, done_zeta, done_chi, done_kap = \
        [], [], [], [], [], [], []
    alive_ids, alive_b, alive_xi, alive_kap = [], [], [], []
    truncated = False

    cur_ids = [np.array(["0"], dtype=object)]
    cur_parent = [np.array([-1], dtype=np.int64)]
    cur_b = [np.array([root_time])]
    cur_xi = [np.array([_root_size(spec, root_size, rng)])]
    n_done = 0

    while cur_ids:
        ids = np.concatenate(cur_ids)
        parent = np.concatenate(cur_parent)
        b = np.concatenate(cur_b)
        xi = np.concatenate(cur_xi)
        cur_ids, cur_parent, cur_b, cur_xi = [], [], [], []
        if ids.size > cap:
            truncated = True
            break
        kap = np.asarray(spec.draw_growth_rates(rng, size=ids.size), dtype=float)
        zeta, chi = _complete_cells(spec, xi, kap, rng)
        d = b + zeta
        completed = d <= T
        # cells alive at the horizon
        alive = ~completed
        alive_ids.append(ids[alive])
        alive_b.append(b[alive])
        alive_xi.append(xi[alive])
        alive_kap.append(kap[alive])
        if not np.any(completed):
            continue
        idx = np.flatnonzero(completed)
        rec_index = n_done + np.arange(idx.size)
        done_ids.append(ids[idx])
        done_parent.append(parent[idx])
        done_b.append(b[idx])
        done_xi.append(xi[idx])
        done_zeta.append(zeta[idx])
        done_chi.append(chi[idx])
        done_kap.append(kap[idx])
        n_done += idx.size
        alpha = _draw_ratios(spec.kernel, rng, idx.size)
        for bit, ratio in (("0", alpha), ("1", 1.0 - alpha)):
            cur_ids.append(np.array([s + bit for s in ids[idx]], dtype=object))
            cur_parent.append(rec_index)
            cur_b.append(d[idx])
            cur_xi.append(ratio * chi[idx])

    meta = {"trigger": spec.trigger, "truncated": truncated}
    if isinstance(scheme, U2):
        meta["censored_count"] = int(sum(a.size for a in alive_ids))
        ids = np.concatenate(done_ids) if done_ids else np.empty(0, dtype=object)
        return SampleSet(
            scheme="U2", ids=ids,
            parent_index=np.concatenate(done_parent) if done_parent else np.empty(0, np.int64),
            birth_time=np.concatenate(done_b) if done_b else np.empty(0),
            size_birth=np.concatenate(done_xi) if done_xi else np.empty(0),
            lifetime=np.concatenate(done_zeta) if done_zeta else np.empty(0),
            size_division=np.concatenate(done_chi) if done_chi else np.empty(0),
            increment=(np.concatenate(done_chi) - np.concatenate(done_xi)) if done_chi else np.empty(0),
            growth_rate=np.concatenate(done_kap) if done_kap else np.empty(0),
            metadata=meta,
        )
    # VT snapshot
    ids = np.concatenate(alive_ids) if alive_ids else np.empty(0, dtype=object)
    b = np.concatenate(alive_b) if alive_b else np.empty(0)
    xi = np.concatenate(alive_xi) if alive_xi else np.empty(0)
    kap = np.concatenate(alive_kap) if alive_kap else np.empty(0)
    age = T - b
    if spec.growth.kind == "exponential":
        size_now = xi * np.exp(kap * age)
    else:
        size_now = spec.growth.flow(age, xi)
    nan = np.full(ids.size, np.nan)
    meta["size_at_snapshot"] = size_now
    meta["completed_count"] = n_done
    return SampleSet(
        scheme="VT", ids=ids, parent_index=np.full(ids.size, -1, dtype=np.int64),
        birth_time=b, size_birth=xi, lifetime=nan.copy(), size_division=nan.copy(),
        increment=nan.copy(), growth_rate=kap, snapshot_time=T, metadata=meta,
    )


def simulate_forest(spec, scheme, seed, n_trees, root_size=1.0, cap=1_000_000):
    """Independent trees on split random streams, merged into one SampleSet."""
    stream = RngStream(seed)
    sets = [simulate_tree(spec, scheme, stream.child(i), root_size=root_size, cap=cap)
            for i in range(n_trees)]
    if n_trees == 1:
        return sets[0]
    return merge_sample_sets(sets, tags=[f"T{i}" for i in range(n_trees)])


_OBSERVABLES = {
    "lifetimes": lambda s: s.lifetimes,
    "birth-sizes": lambda s: s.birth_sizes,
    "division-sizes": lambda s: s.division_sizes,
    "increments": lambda s: s.increments,
    "ages-at-snapshot": lambda s: s.ages_at_snapshot,
    "sizes-at-snapshot": lambda s: s.sizes_at_snapshot,
}


def empirical_density(sample_set, which, kernel=BIWEIGHT, h=None, grid=None,
                      n_points=512):
    """Kernel-smoothed density of one observable, unit integral.

    h=0 gives the raw (normalized) histogram on the grid instead of a
    smooth estimate. Joint observables "joint-age-size" and
    "joint-increment-size" return a 2D histogram density.
    """
    if which in ("joint-age-size", "joint-increment-size"):
        return _joint_density(sample_set, which, grid, n_points)
    if which not in _OBSERVABLES:
        raise ValueError(f"unknown observable {which!r}")
    data = np.asarray(_OBSERVABLES[which](sample_set), dtype=float)
    if data.size == 0:
        raise ValueError(f"no {which} in this sample set")
    if grid is None:
        hi = 1.05 * float(np.max(data))
        grid = np.linspace(0.0, max(hi, 1e-12), n_points)
    grid = np.asarray(grid, dtype=float)
    if h is not None and h == 0:
        edges = np.concatenate([[grid[0]], 0.5 * (grid[1:] + grid[:-1]), [grid[-1]]])
        counts, _ = np.histogram(data, bins=edges)
        vals = counts / (np.diff(edges) * data.size)
        return GridDensity(grid, vals)
    if h is None:
        from .estimators import select_bandwidth

        h = select_bandwidth(data, kernel)
    vals = kde(data, grid, kernel=kernel, h=h, support_start=0.0)
    out = GridDensity(grid, np.maximum(vals, 0.0))
    return out.normalize()


def _joint_density(sample_set, which, grid, n_points):
    if sample_set.scheme == "VT":
        a = sample_set.ages_at_snapshot
        x = sample_set.sizes_at_snapshot
    elif which == "joint-age-size":
        a, x = sample_set.lifetimes, sample_set.division_sizes
    else:
        a, x = sample_set.division_pairs()
    if a.size == 0:
        raise ValueError("no joint observations in this sample set")
    n2 = max(int(np.sqrt(n_points)), 64)
    if grid is None:
        ga = np.linspace(0.0, 1.05 * a.max(), n2)
        gx = np.linspace(0.0, 1.05 * x.max(), n2)
    else:
        ga, gx = grid
    ea = np.concatenate([[ga[0]], 0.5 * (ga[1:] + ga[:-1]), [ga[-1]]])
    ex = np.concatenate([[gx[0]], 0.5 * (gx[1:] + gx[:-1]), [gx[-1]]])
    counts, _, _ = np.histogram2d(a, x, bins=(ea, ex))
    area = np.outer(np.diff(ea), np.diff(ex))
    vals = counts / (area * a.size)
    return GridDensity((ga, gx), vals, dim=2)
