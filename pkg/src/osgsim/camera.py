"""EMCCD frame synthesis.

Collected emission events are projected through the imaging system onto the
sensor; each pixel's photoelectrons pass through the stochastic
electron-multiplying register (Gamma amplification), pick up clock-induced
charges, Gaussian readout noise and a bias offset.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .rng import TAG_CAMERA, make_rng


@dataclass(frozen=True)
class CameraParams:
    readout_sigma: float = 10.0          # counts
    gain_over_readout: float = 35.0      # g / sigma_read; single-photon regime
    cic_rate: float = 0.02               # spurious photoelectrons per pixel
    bias: float = 500.0                  # counts
    pixel_pitch: float = 16e-6           # m, sensor plane
    magnification: float = 47.8
    quantum_efficiency: float = 0.8
    psf_sigma: float = 180e-9            # m, object plane (~0.21 lambda / NA)
    frame_shape: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if not 0 <= self.cic_rate <= 1 or not 0 <= self.quantum_efficiency <= 1:
            raise ValueError("rates must lie in [0, 1]")
        if self.readout_sigma < 0 or self.gain_over_readout <= 0:
            raise ValueError("invalid gain/readout settings")
        if self.psf_sigma < self.object_pixel / 2:
            warnings.warn("PSF under-sampled by the pixel grid (Nyquist)", stacklevel=2)

    @property
    def em_gain(self) -> float:
        """g = (g / sigma_read) * sigma_read, counts per photoelectron."""
        return self.gain_over_readout * self.readout_sigma

    @property
    def object_pixel(self) -> float:
        """Pixel size back-projected to the object plane, m."""
        return self.pixel_pitch / self.magnification


@dataclass
class Frame:
    counts: np.ndarray
    params: CameraParams
    truth: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def bias_corrected(self) -> bool:
        return bool(self.meta.get("bias_corrected", False))


def _events_xy(events) -> np.ndarray:
    """Collected-event object-plane positions as an (n,2) array."""
    if isinstance(events, np.ndarray):
        return events.reshape(-1, 2)
    xs = [ev.position for ev in events if ev.collected]
    return np.array(xs, dtype=float).reshape(-1, 2)


def render_frame(events, params: CameraParams, seed: int, shot_index: int = 0,
                 truth: dict | None = None) -> Frame:
    """Synthesize one raw frame from collected emission events.

    Events outside the field of view are dropped (counted in metadata); the
    frame is centered on the object-plane origin, rows map y and columns map x.
    """
    rng = make_rng(seed, TAG_CAMERA, shot_index)
    nrows, ncols = params.frame_shape
    xy = _events_xy(events)

    # Quantum efficiency and PSF jitter (object plane).
    detected = rng.uniform(size=xy.shape[0]) < params.quantum_efficiency
    xy = xy[detected]
    xy = xy + rng.standard_normal(xy.shape) * params.psf_sigma

    pix = params.object_pixel
    cols = np.floor(xy[:, 0] / pix + ncols / 2).astype(int)
    rows = np.floor(xy[:, 1] / pix + nrows / 2).astype(int)
    in_fov = (rows >= 0) & (rows < nrows) & (cols >= 0) & (cols < ncols)
    dropped = int(np.sum(~in_fov))

    pe = np.zeros((nrows, ncols), dtype=np.int64)
    np.add.at(pe, (rows[in_fov], cols[in_fov]), 1)
    pe += (rng.uniform(size=pe.shape) < params.cic_rate).astype(np.int64)

    counts = np.zeros(pe.shape)
    hot = pe > 0
    # EM register: amplified signal ~ Gamma(shape = n_pe, scale = g).
    counts[hot] = rng.gamma(shape=pe[hot], scale=params.em_gain)
    counts += rng.standard_normal(pe.shape) * params.readout_sigma + params.bias
    counts = np.rint(counts).astype(np.int64)

    meta = {"seed": int(seed), "shot_index": int(shot_index),
            "dropped_events": dropped, "n_detected_events": int(np.sum(in_fov)),
            "bias_corrected": False}
    return Frame(counts=counts, params=params, truth=truth, meta=meta)


def bias_correct(frame: Frame, method: str = "recorded", margin: int = 4) -> Frame:
    """Subtract the bias, either the recorded value or a signal-free margin mean.

    Recorded-bias correction is idempotent; margin estimation averages the top
    and bottom ``margin`` rows.
    """
    if frame.bias_corrected and method == "recorded":
        return frame
    if method == "recorded":
        bias = float(frame.params.bias)
    elif method == "margin":
        if 2 * margin >= frame.counts.shape[0]:
            raise ValueError("frame smaller than the estimation margin")
        rows = np.concatenate([frame.counts[:margin], frame.counts[-margin:]], axis=0)
        bias = float(np.mean(rows))
    else:
        raise ValueError(f"unknown bias method {method!r}")
    meta = dict(frame.meta)
    meta.update({"bias_corrected": True, "bias_method": method, "bias_value": bias})
    return Frame(counts=frame.counts - bias, params=frame.params,
                 truth=frame.truth, meta=meta)


# --- persistence: 16-bit grayscale image + JSON sidecar ---

SIDECAR_SCHEMA = "osgsim.frame.v1"


def save_frame(frame: Frame, path_base) -> tuple[Path, Path]:
    """Write <base>.png (uint16 raw counts) and <base>.json (params, meta, truth)."""
    if frame.bias_corrected:
        raise ValueError("persist raw frames; bias correction is re-applied on load")
    base = Path(path_base)
    png_path = base.with_suffix(".png")
    json_path = base.with_suffix(".json")
    counts = np.clip(frame.counts, 0, 65535).astype(np.uint16)
    Image.fromarray(counts).save(png_path)
    params = asdict(frame.params)
    params["frame_shape"] = list(frame.params.frame_shape)
    sidecar = {"schema": SIDECAR_SCHEMA, "params": params,
               "meta": frame.meta, "truth": frame.truth}
    json_path.write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return png_path, json_path


def load_frame(path_base) -> Frame:
    base = Path(path_base)
    sidecar = json.loads(base.with_suffix(".json").read_text())
    if sidecar.get("schema") != SIDECAR_SCHEMA:
        raise ValueError(f"unexpected sidecar schema in {base}")
    params_dict = dict(sidecar["params"])
    params_dict["frame_shape"] = tuple(params_dict["frame_shape"])
    params = CameraParams(**params_dict)
    counts = np.asarray(Image.open(base.with_suffix(".png")), dtype=np.int64)
    return Frame(counts=counts, params=params,
                 truth=sidecar.get("truth"), meta=dict(sidecar.get("meta", {})))
