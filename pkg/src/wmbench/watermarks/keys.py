from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BITSTREAM_SCHEMES = ("dwt_dct", "dwt_dct_svd")
SCHEMES = BITSTREAM_SCHEMES + ("fourier_ring", "external")
PAYLOAD_LENGTHS = (32, 48, 64)


def _b64(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {"dtype": str(a.dtype), "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode()}


def _unb64(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype=d["dtype"]).reshape(d["shape"]).copy()


@dataclass
class WatermarkKey:
    """Scheme-tagged watermark key.

    Bitstream schemes carry ``bits``; the Fourier-ring scheme carries
    ``ring_pattern`` (complex, centred spectrum), ``ring_mask`` and the
    latent ``channel`` it lives in. ``base_seed`` seeds the per-block dither
    of bitstream schemes and the initial noise of the ring scheme.
    """

    scheme: str
    strength: float
    base_seed: int = 0
    bits: Optional[np.ndarray] = None
    ring_pattern: Optional[np.ndarray] = None
    ring_mask: Optional[np.ndarray] = None
    channel: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme in BITSTREAM_SCHEMES:
            if self.bits is None:
                raise ValueError(f"{self.scheme} key needs a bit payload")
            self.bits = np.asarray(self.bits, dtype=np.uint8)
            if self.bits.size not in PAYLOAD_LENGTHS or np.any(self.bits > 1):
                raise ValueError(f"payload must be {PAYLOAD_LENGTHS} bits of 0/1, got {self.bits.size}")
        if self.scheme == "fourier_ring":
            if self.ring_pattern is None or self.ring_mask is None:
                raise ValueError("fourier_ring key needs ring_pattern and ring_mask")
            self.ring_mask = np.asarray(self.ring_mask, dtype=bool)
            self.ring_pattern = np.asarray(self.ring_pattern, dtype=np.complex128)
            if not self.ring_mask.any():
                raise ValueError("ring_mask is empty")
            if not np.array_equal(self.ring_mask, _point_reflect(self.ring_mask)):
                raise ValueError("ring_mask must be symmetric about the spectrum centre")

    @property
    def n_bits(self) -> int:
        return 0 if self.bits is None else int(self.bits.size)

    def to_dict(self) -> dict:
        d = {"scheme": self.scheme, "strength": self.strength, "base_seed": self.base_seed,
             "channel": self.channel, "extra": self.extra}
        if self.bits is not None:
            d["bits"] = _b64(np.packbits(self.bits))
            d["n_bits"] = self.n_bits
        if self.ring_pattern is not None:
            d["ring_pattern"] = _b64(self.ring_pattern)
            d["ring_mask"] = _b64(self.ring_mask.astype(np.uint8))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WatermarkKey":
        bits = None
        if "bits" in d:
            bits = np.unpackbits(_unb64(d["bits"]))[: d["n_bits"]]
        pattern = _unb64(d["ring_pattern"]) if "ring_pattern" in d else None
        mask = _unb64(d["ring_mask"]).astype(bool) if "ring_mask" in d else None
        return cls(d["scheme"], float(d["strength"]), int(d.get("base_seed", 0)), bits, pattern, mask,
                   int(d.get("channel", 0)), dict(d.get("extra", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "WatermarkKey":
        return cls.from_dict(json.loads(s))


def _point_reflect(mask: np.ndarray) -> np.ndarray:
    """Map centred-spectrum index k to -k (fftshift layout)."""
    h, w = mask.shape
    iy = (-(np.arange(h) - h // 2)) % h
    ix = (-(np.arange(w) - w // 2)) % w
    iy = (iy + h // 2) % h
    ix = (ix + w // 2) % w
    return mask[np.ix_(iy, ix)]


@dataclass(frozen=True)
class DetectionOutcome:
    statistic: float
    threshold_used: float
    decoded: Optional[np.ndarray] = None

    @property
    def detected(self) -> bool:
        return self.statistic >= self.threshold_used

    @property
    def decision(self) -> str:
        return "detected" if self.detected else "not_detected"

    def to_dict(self) -> dict:
        d = {"statistic": self.statistic, "threshold": self.threshold_used, "decision": self.decision}
        if self.decoded is not None:
            d["decoded"] = "".join(str(int(b)) for b in self.decoded)
        return d
