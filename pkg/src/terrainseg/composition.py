"""Seed-deterministic training-set composition.

Two samplers:

* ``compose_mixed`` — capped-size mixing of the two mission pools at a given
  M2020 proportion. The M2020 count is round-half-up(p * |M2020 pool|); MSL
  fills the remainder.
* ``sample_label_fraction`` — stratified limited-label subsets. Per-domain
  counts are round-half-up(f * |pool|), then the MSL count is adjusted by
  at most one so the total matches the canonical reference totals for the
  pool sizes (e.g. 173 at f=0.01 and 1,739 at f=0.1 on 16,064 + 1,321).
  The total rule truncates the fractional ideal total, except an exact .5
  remainder rounds up.

All draws are without replacement from ``numpy`` PCG64 streams spawned from
the declared seed, so identical settings always reproduce the same manifest
hash. Label-fraction subsets are nested: each domain pool is shuffled once
per seed and fractions take prefixes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DuplicateSeedError, InsufficientSourceError, ZeroSampleError
from .ingest import DatasetManifest


def round_half_up(x: Fraction | float) -> int:
    """Nearest integer, ties away from zero (for non-negative inputs)."""
    return math.floor(Fraction(x) + Fraction(1, 2))


def _reference_total(q: Fraction) -> int:
    """Total-count rule: truncate, except an exact half rounds up.

    This is the only rule consistent with both canonical limited-label
    totals on the canonical 17,385-image pool (173 at 1%, 1,739 at 10%).
    """
    base = math.floor(q)
    return base + 1 if q - base == Fraction(1, 2) else base


def _as_fraction(x: float | str | Fraction) -> Fraction:
    # Via the decimal string so 0.1 means 1/10, not the float64 neighbor.
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass(frozen=True)
class CompositionSpec:
    cap: int
    m2020_proportion: float
    seed: int
    source_msl: DatasetManifest
    source_m2020: DatasetManifest

    def counts(self) -> tuple[int, int]:
        """(msl_count, m2020_count) implied by the rounding rule."""
        p = _as_fraction(self.m2020_proportion)
        if not 0 <= p <= 1:
            raise ValueError("m2020_proportion must lie in [0, 1]")
        n_m2020 = round_half_up(p * len(self.source_m2020))
        return self.cap - n_m2020, n_m2020


@dataclass(frozen=True)
class LabelFractionSpec:
    fraction: float
    seed: int
    source_msl: DatasetManifest
    source_m2020: DatasetManifest

    def counts(self) -> tuple[int, int]:
        """(msl_count, m2020_count): per-domain round-half-up, MSL reconciled
        so the total follows the reference-total rule."""
        f = _as_fraction(self.fraction)
        if not 0 < f <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        n_msl_pool, n_m2020_pool = len(self.source_msl), len(self.source_m2020)
        total = _reference_total(f * (n_msl_pool + n_m2020_pool))
        n_m2020 = round_half_up(f * n_m2020_pool)
        n_msl = min(max(total - n_m2020, 0), n_msl_pool)
        return n_msl, n_m2020


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def _choose(entries, count: int, rng: np.random.Generator):
    idx = rng.choice(len(entries), size=count, replace=False)
    return [entries[i] for i in idx]


def compose_mixed(spec: CompositionSpec) -> DatasetManifest:
    """Draw a capped mixed-domain training manifest, deterministically per seed."""
    n_msl, n_m2020 = spec.counts()
    if n_m2020 > len(spec.source_m2020) or n_m2020 > spec.cap:
        raise InsufficientSourceError(
            f"need {n_m2020} M2020 entries (pool {len(spec.source_m2020)}, cap {spec.cap})"
        )
    if n_msl > len(spec.source_msl):
        raise InsufficientSourceError(
            f"need {n_msl} MSL entries but pool has {len(spec.source_msl)}"
        )
    rng_m2020, rng_msl, rng_order = _streams(spec.seed, 3)
    picked = _choose(spec.source_m2020.entries, n_m2020, rng_m2020)
    picked += _choose(spec.source_msl.entries, n_msl, rng_msl)
    order = rng_order.permutation(len(picked))
    entries = tuple(picked[i] for i in order)
    return DatasetManifest(
        entries=entries,
        dataset_id=f"mixed_cap{spec.cap}_p{spec.m2020_proportion}_seed{spec.seed}",
        taxonomy_variant=spec.source_msl.taxonomy_variant,
        seed=spec.seed,
    )


def sample_label_fraction(spec: LabelFractionSpec) -> DatasetManifest:
    """Stratified limited-label subset; prefixes of per-seed domain shuffles."""
    n_msl, n_m2020 = spec.counts()
    if n_msl == 0 and n_m2020 == 0:
        raise ZeroSampleError(f"fraction {spec.fraction} selects zero images from both domains")
    rng_msl, rng_m2020, rng_order = _streams(spec.seed, 3)
    msl_order = rng_msl.permutation(len(spec.source_msl))
    m2020_order = rng_m2020.permutation(len(spec.source_m2020))
    picked = [spec.source_msl.entries[i] for i in msl_order[:n_msl]]
    picked += [spec.source_m2020.entries[i] for i in m2020_order[:n_m2020]]
    order = rng_order.permutation(len(picked))
    entries = tuple(picked[i] for i in order)
    return DatasetManifest(
        entries=entries,
        dataset_id=f"fraction{spec.fraction}_seed{spec.seed}",
        taxonomy_variant=spec.source_msl.taxonomy_variant,
        seed=spec.seed,
    )


def seed_sweep(base_spec: CompositionSpec, seeds: Sequence[int]) -> list[DatasetManifest]:
    """One composed manifest per seed, identical count constraints throughout."""
    if not seeds:
        raise ValueError("seeds must be nonempty")
    if len(set(seeds)) != len(seeds):
        raise DuplicateSeedError(f"seeds contain duplicates: {list(seeds)}")
    return [
        compose_mixed(
            CompositionSpec(
                cap=base_spec.cap,
                m2020_proportion=base_spec.m2020_proportion,
                seed=s,
                source_msl=base_spec.source_msl,
                source_m2020=base_spec.source_m2020,
            )
        )
        for s in seeds
    ]
