"""Synthetic tracking sequences: a bright square gliding over static texture.

The renderer draws the square with bilinear edge coverage so sub-pixel
positions shade boundary pixels proportionally. Events come from the
log-intensity difference between consecutive sub-frame renders: each pixel
emits floor(|d| / threshold) events with polarity sign(d), timestamped at
the later sub-frame. There is no per-pixel reference memory, so drift that
stays below the threshold within one sub-frame interval emits nothing; the
defaults keep moving edges comfortably above it.

Identical seeds give bit-identical sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .events import EventStream, FrameIndex
from .sequences import TrackSequence

Array = np.ndarray


@dataclass
class SimConfig:
    sensor: tuple[int, int] = (128, 96)       # (width, height)
    frames: int = 30
    frame_period_us: int = 10_000
    exposure_us: int = 6_000
    subframes: int = 4                        # event renders per frame interval
    target_size: tuple[float, float] = (16.0, 16.0)
    start: tuple[float, float] = (16.0, 40.0)  # top-left corner at frame 0
    velocity: tuple[float, float] = (2.0, 0.25)  # pixels per frame
    target_intensity: float = 1.0
    background_cells: int = 12
    background_low: float = 0.2
    background_high: float = 0.7
    contrast_threshold: float = 0.12
    log_eps: float = 0.05

    def __post_init__(self) -> None:
        w, h = self.sensor
        if w < 8 or h < 8:
            raise ValidationError(f"sensor {self.sensor} is too small to render anything useful")
        if self.frames < 1:
            raise ValidationError("need at least one frame")
        if self.frame_period_us <= 0 or self.exposure_us <= 0:
            raise ValidationError("frame period and exposure must be positive microseconds")
        if self.subframes < 1:
            raise ValidationError("need at least one subframe per interval")
        if self.contrast_threshold <= 0:
            raise ValidationError("contrast threshold must be positive")
        if not (0.0 <= self.background_low < self.background_high <= self.target_intensity):
            raise ValidationError("background intensities must sit below the target intensity")
        tw, th = self.target_size
        if tw <= 0 or th <= 0:
            raise ValidationError(f"target size must be positive, got {self.target_size}")


def _axis_coverage(n: int, lo: float, hi: float) -> Array:
    """Fraction of each unit pixel [i, i+1) covered by the interval [lo, hi)."""
    edges = np.arange(n + 1, dtype=np.float64)
    left = np.maximum(edges[:-1], lo)
    right = np.minimum(edges[1:], hi)
    return np.maximum(0.0, right - left)


def _render(config: SimConfig, background: Array, frame_pos: float) -> Array:
    """Intensity image [H, W] with the target's top-left at start + v * frame_pos."""
    w, h = config.sensor
    tx = config.start[0] + config.velocity[0] * frame_pos
    ty = config.start[1] + config.velocity[1] * frame_pos
    tw, th = config.target_size
    cov = _axis_coverage(h, ty, ty + th)[:, None] * _axis_coverage(w, tx, tx + tw)[None, :]
    return background + cov * (config.target_intensity - background)


def _background(config: SimConfig, rng: np.random.Generator) -> Array:
    """Piecewise-constant random texture, upsampled to sensor size."""
    w, h = config.sensor
    cells = config.background_cells
    coarse = rng.uniform(config.background_low, config.background_high, size=(cells, cells))
    yi = (np.arange(h) * cells) // h
    xi = (np.arange(w) * cells) // w
    return coarse[yi[:, None], xi[None, :]]


def synth_sequence(config: SimConfig | None = None, seed: int = 0) -> TrackSequence:
    """Render frames, emit events between sub-frame renders, pack a sequence."""
    config = config if config is not None else SimConfig()
    rng = np.random.default_rng(seed)
    w, h = config.sensor
    background = _background(config, rng)

    frames: list[FrameIndex] = []
    images: list[Array] = []
    tw, th = config.target_size
    for i in range(config.frames):
        img = _render(config, background, float(i))
        images.append(np.repeat(img[None, :, :], 3, axis=0))
        cx = config.start[0] + config.velocity[0] * i + tw / 2.0
        cy = config.start[1] + config.velocity[1] * i + th / 2.0
        frames.append(
            FrameIndex(
                frame_id=i,
                t_rgb=i * config.frame_period_us,
                exposure=config.exposure_us,
                bbox=(cx, cy, tw, th),
            )
        )

    ts: list[Array] = []
    xs: list[Array] = []
    ys: list[Array] = []
    ps: list[Array] = []
    prev_log = np.log(_render(config, background, 0.0) + config.log_eps)
    for i in range(1, config.frames):
        for s in range(1, config.subframes + 1):
            pos = (i - 1) + s / config.subframes
            t_us = (i - 1) * config.frame_period_us + (s * config.frame_period_us) // config.subframes
            cur_log = np.log(_render(config, background, pos) + config.log_eps)
            diff = cur_log - prev_log
            count = np.floor(np.abs(diff) / config.contrast_threshold).astype(np.int64)
            yy, xx = np.nonzero(count)
            if yy.size:
                reps = count[yy, xx]
                xs.append(np.repeat(xx, reps))
                ys.append(np.repeat(yy, reps))
                ps.append(np.repeat(np.sign(diff[yy, xx]).astype(np.int64), reps))
                ts.append(np.full(int(reps.sum()), t_us, dtype=np.int64))
            prev_log = cur_log

    if ts:
        events = EventStream(
            t=np.concatenate(ts),
            x=np.concatenate(xs),
            y=np.concatenate(ys),
            p=np.concatenate(ps),
            sensor=config.sensor,
        )
    else:
        empty = np.array([], dtype=np.int64)
        events = EventStream(t=empty, x=empty, y=empty, p=empty, sensor=config.sensor)

    return TrackSequence(sensor=config.sensor, frames=frames, images=images, events=events)
