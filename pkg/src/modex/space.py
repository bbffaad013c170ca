"""Binary interpretable space shared by all modalities.

Every modality ``m`` is decomposed (outside this package) into ``K_m``
interpretable units. Units are indexed globally and contiguously in the
order the modalities are declared, so modality ``m`` owns the block
``[offset_m, offset_m + K_m)``. A perturbation is a 0/1 vector over all
``K`` units: 1 keeps the unit, 0 replaces it with the modality baseline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DuplicateModalityName, EmptySpec, NonPositiveCount, SpecError


@dataclass(frozen=True)
class InstanceSpec:
    """Interpretable layout of one explained instance.

    Use :func:`build_instance_spec` rather than the constructor; it
    validates the inputs and derives the groups.
    """

    modality_names: tuple[str, ...]
    unit_counts: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def n_modalities(self) -> int:
        return len(self.modality_names)

    @property
    def total_units(self) -> int:
        return int(sum(self.unit_counts))

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.unit_counts)[:-1]]))

    def slices(self) -> list[slice]:
        out = []
        for off, k in zip(self.offsets, self.unit_counts):
            out.append(slice(off, off + k))
        return out

    def index_of(self, modality: str | int) -> int:
        """Position of ``modality`` given by name or by integer index."""
        if isinstance(modality, (int, np.integer)):
            if not 0 <= modality < self.n_modalities:
                raise SpecError(f"modality index {modality} out of range")
            return int(modality)
        try:
            return self.modality_names.index(modality)
        except ValueError:
            raise SpecError(f"unknown modality {modality!r}") from None

    def group(self, modality: str | int) -> np.ndarray:
        return np.asarray(self.groups[self.index_of(modality)], dtype=int)

    def group_labels(self) -> np.ndarray:
        """Length-K array mapping each unit to its modality index."""
        return np.repeat(np.arange(self.n_modalities), self.unit_counts)

    def to_dict(self) -> dict:
        return {
            "modalities": [
                {"name": n, "units": int(k)}
                for n, k in zip(self.modality_names, self.unit_counts)
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "InstanceSpec":
        try:
            mods = obj["modalities"]
            names = [m["name"] for m in mods]
            counts = [m["units"] for m in mods]
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed instance spec: {obj!r}") from exc
        return build_instance_spec(names, counts)

    @classmethod
    def from_json(cls, text: str) -> "InstanceSpec":
        return cls.from_dict(json.loads(text))


def build_instance_spec(modality_names: Sequence[str], unit_counts: Sequence[int]) -> InstanceSpec:
    """Assign contiguous global index blocks to each modality.

    Parameters
    ----------
    modality_names : sequence of str
        Unique modality identifiers, in declaration order.
    unit_counts : sequence of int
        Number of interpretable units ``K_m`` per modality, all >= 1.

    Returns
    -------
    InstanceSpec

    Examples
    --------
    >>> spec = build_instance_spec(["image", "text"], [5, 3])
    >>> spec.total_units, spec.groups[1]
    (8, (5, 6, 7))
    """
    names = list(modality_names)
    counts = list(unit_counts)
    if not names:
        raise EmptySpec("at least one modality is required")
    if len(names) != len(counts):
        raise SpecError(
            f"{len(names)} modality names but {len(counts)} unit counts"
        )
    if len(set(names)) != len(names):
        raise DuplicateModalityName(f"modality names must be unique: {names}")
    clean_counts = []
    for name, k in zip(names, counts):
        if isinstance(k, bool) or int(k) != k or int(k) < 1:
            raise NonPositiveCount(f"modality {name!r} has unit count {k!r}")
        clean_counts.append(int(k))

    groups = []
    start = 0
    for k in clean_counts:
        groups.append(tuple(range(start, start + k)))
        start += k
    return InstanceSpec(tuple(str(n) for n in names), tuple(clean_counts), tuple(groups))


def full_mask(spec: InstanceSpec) -> np.ndarray:
    """The all-ones reference mask (every unit present)."""
    return np.ones(spec.total_units, dtype=np.int8)


def check_masks(masks, spec: InstanceSpec) -> np.ndarray:
    """Coerce ``masks`` to an ``(n, K)`` int8 array and validate it."""
    arr = np.asarray(masks)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != spec.total_units:
        raise SpecError(
            f"masks must have shape (n, {spec.total_units}), got {arr.shape}"
        )
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise SpecError("masks must be binary")
    return arr.astype(np.int8, copy=False)
