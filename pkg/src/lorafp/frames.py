"""The complex baseband sample frame that flows through the whole pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import as_complex_samples


@dataclass
class IqFrame:
    """A finite, nonempty sequence of complex baseband samples.

    ``meta`` carries string provenance tags (device id, seeds, stage names)
    so any frame can be traced back to how it was produced.
    """

    samples: np.ndarray
    sample_rate_hz: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = as_complex_samples(self.samples)
        self.sample_rate_hz = float(self.sample_rate_hz)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def power(self) -> float:
        """Mean squared magnitude."""
        return float(np.mean(np.abs(self.samples) ** 2))

    def rms(self) -> float:
        return float(np.sqrt(self.power()))

    def with_samples(self, samples, **meta_updates) -> "IqFrame":
        """Copy of this frame with new samples and updated meta tags."""
        meta = dict(self.meta)
        meta.update({k: str(v) for k, v in meta_updates.items()})
        return IqFrame(samples=samples, sample_rate_hz=self.sample_rate_hz, meta=meta)
