"""Container for one-sided spectra shared by the analytic and time-domain code."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SpectrumResult:
    """Frequency grid (Hz) with one or more named PSD branches.

    ``psd`` is the branch named by ``branch``; ``branches`` holds all of them.
    """

    freq: np.ndarray
    branches: dict[str, np.ndarray]
    branch: str = "total"
    n_segments: int = 0
    window: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.freq = np.asarray(self.freq, dtype=float)
        for name, arr in self.branches.items():
            if np.shape(arr) != self.freq.shape:
                raise ValueError(f"branch {name!r} does not match the frequency grid")
        if self.branch not in self.branches:
            raise ValueError(f"branch {self.branch!r} missing")

    @property
    def psd(self) -> np.ndarray:
        return self.branches[self.branch]

    def select(self, branch: str) -> "SpectrumResult":
        return SpectrumResult(self.freq, self.branches, branch, self.n_segments, self.window, self.meta)
