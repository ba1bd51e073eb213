from __future__ import annotations

from typing import Sequence, TypeVar

from .core import child_rng

T = TypeVar("T")


def subset_sampler(dataset: Sequence[T], n: int | str, seed: int) -> list[T]:
    """Uniform sample of ``n`` items without replacement (``"all"`` returns everything)."""
    if n == "all":
        return list(dataset)
    n = int(n)
    if n < 0 or n > len(dataset):
        raise ValueError(f"cannot sample {n} items from a dataset of {len(dataset)}")
    idx = child_rng(seed, 0x5AB5E7).choice(len(dataset), size=n, replace=False)
    return [dataset[int(i)] for i in idx]
