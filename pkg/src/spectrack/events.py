"""Event streams, exposure-weighted surfaces, and patch cropping.

An event is (x, y, t, p): pixel coordinates, microsecond timestamp, and
polarity +-1. A frame's surface accumulates, per pixel, the polarity of
every event weighted by a triangular window around the frame timestamp:
weight = max(0, 1 - |t_rgb - t| / exposure). Voxels split the same window
into B equal sub-bins and keep one surface per bin, so the voxel summed
over bins reproduces the plain surface.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError, EventParseError, ValidationError

Array = np.ndarray

PATCH_KINDS = ("template", "search")
PATCH_MODALITIES = ("rgb", "event")


@dataclass
class FrameIndex:
    """One RGB frame's place in a sequence, plus optional ground truth.

    bbox is (cx, cy, w, h) in image pixels, or None when unlabeled.
    """

    frame_id: int
    t_rgb: int
    exposure: int
    bbox: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.exposure <= 0:
            raise ValidationError(f"frame {self.frame_id}: exposure must be positive, got {self.exposure}")
        if self.t_rgb < 0:
            raise ValidationError(f"frame {self.frame_id}: timestamp must be non-negative, got {self.t_rgb}")
        if self.bbox is not None:
            self.bbox = tuple(float(v) for v in self.bbox)
            if len(self.bbox) != 4:
                raise ValidationError(f"frame {self.frame_id}: bbox needs 4 values, got {len(self.bbox)}")
            if self.bbox[2] <= 0 or self.bbox[3] <= 0:
                raise ValidationError(f"frame {self.frame_id}: bbox sides must be positive, got {self.bbox}")


@dataclass
class EventStream:
    """Sorted event arrays bound to a sensor size (width, height)."""

    t: Array
    x: Array
    y: Array
    p: Array
    sensor: tuple[int, int]

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        n = self.t.shape[0]
        if not (self.x.shape[0] == self.y.shape[0] == self.p.shape[0] == n):
            raise DimensionError(
                f"event columns disagree in length: t={n}, x={self.x.shape[0]}, "
                f"y={self.y.shape[0]}, p={self.p.shape[0]}"
            )
        w, h = self.sensor
        if w <= 0 or h <= 0:
            raise ValidationError(f"sensor size must be positive, got {self.sensor}")
        if n:
            if self.t.min() < 0:
                raise ValidationError("event timestamps must be non-negative")
            bad = np.flatnonzero((self.p != 1) & (self.p != -1))
            if bad.size:
                raise ValidationError(f"event {bad[0]}: polarity must be +1 or -1, got {self.p[bad[0]]}")
            oob = np.flatnonzero((self.x < 0) | (self.x >= w) | (self.y < 0) | (self.y >= h))
            if oob.size:
                i = oob[0]
                raise ValidationError(
                    f"event {i}: coordinate ({self.x[i]}, {self.y[i]}) outside sensor {w}x{h}"
                )
            order = np.argsort(self.t, kind="stable")
            self.t = self.t[order]
            self.x = self.x[order]
            self.y = self.y[order]
            self.p = self.p[order]

    def __len__(self) -> int:
        return int(self.t.shape[0])


def parse_events(path: str | Path, sensor: tuple[int, int]) -> EventStream:
    """Read a `t,x,y,p` CSV into a sorted EventStream.

    A header line is tolerated (detected on line 1 by non-integer fields);
    any later malformed row raises EventParseError naming its line number.
    Domain violations (polarity, out-of-bounds coordinates) raise
    ValidationError.
    """
    ts: list[int] = []
    xs: list[int] = []
    ys: list[int] = []
    ps: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                if lineno == 1:
                    continue  # header with a different column count
                raise EventParseError(f"line {lineno}: expected 4 comma-separated fields, got {len(parts)}")
            try:
                t, x, y, p = (int(part.strip()) for part in parts)
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise EventParseError(f"line {lineno}: non-integer field in {line!r}") from None
            if p not in (1, -1):
                raise ValidationError(f"line {lineno}: polarity must be +1 or -1, got {p}")
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(p)
    return EventStream(
        t=np.array(ts, dtype=np.int64),
        x=np.array(xs, dtype=np.int64),
        y=np.array(ys, dtype=np.int64),
        p=np.array(ps, dtype=np.int64),
        sensor=sensor,
    )


def write_events(events: EventStream, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x,y,p\n")
        for t, x, y, p in zip(events.t, events.x, events.y, events.p):
            fh.write(f"{t},{x},{y},{p}\n")
    return path


@dataclass
class TimeSurface:
    """Polarity-weighted accumulation grid for one frame, [height, width]."""

    frame_id: int
    grid: Array

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise DimensionError(f"surface grid must be 2-D, got {self.grid.shape}")
        if not np.isfinite(self.grid).all():
            raise ValidationError("surface grid contains non-finite values")


def _window_weights(events: EventStream, frame: FrameIndex) -> Array:
    dt = np.abs(events.t - frame.t_rgb).astype(np.float64)
    return np.maximum(0.0, 1.0 - dt / float(frame.exposure))


def time_surface(events: EventStream, frame: FrameIndex, sensor: tuple[int, int] | None = None) -> TimeSurface:
    """Accumulate the triangular-window contribution of every event."""
    sensor = events.sensor if sensor is None else sensor
    if sensor != events.sensor:
        raise ValidationError(f"requested sensor {sensor} does not match stream sensor {events.sensor}")
    w, h = sensor
    grid = np.zeros((h, w))
    if len(events):
        weights = _window_weights(events, frame)
        live = weights > 0.0
        np.add.at(grid, (events.y[live], events.x[live]), events.p[live] * weights[live])
    return TimeSurface(frame_id=frame.frame_id, grid=grid)


def event_voxel(
    events: EventStream,
    frame: FrameIndex,
    bins: int = 4,
    sensor: tuple[int, int] | None = None,
) -> Array:
    """Split the frame window into `bins` sub-intervals, one surface each.

    Returns [bins, height, width]; summing over the first axis reproduces
    time_surface up to addition order. Events are assigned to sub-bins by
    integer arithmetic on microsecond timestamps, so binning is exact.
    """
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    sensor = events.sensor if sensor is None else sensor
    if sensor != events.sensor:
        raise ValidationError(f"requested sensor {sensor} does not match stream sensor {events.sensor}")
    w, h = sensor
    grid = np.zeros((bins, h, w))
    if len(events):
        span = 2 * frame.exposure
        rel = events.t - (frame.t_rgb - frame.exposure)
        inside = (rel >= 0) & (rel < span)
        weights = _window_weights(events, frame)
        live = inside & (weights > 0.0)
        bin_of = (rel[live] * bins) // span
        np.add.at(grid, (bin_of, events.y[live], events.x[live]), events.p[live] * weights[live])
    return grid


# ---------------------------------------------------------------------------
# cropping


@dataclass
class Patch:
    """A square crop ready for token projection: data is [C, S, S]."""

    data: Array
    kind: str
    modality: str

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[1] != self.data.shape[2]:
            raise DimensionError(f"patch data must be [C, S, S], got {self.data.shape}")
        if self.kind not in PATCH_KINDS:
            raise ValidationError(f"patch kind must be one of {PATCH_KINDS}, got {self.kind!r}")
        if self.modality not in PATCH_MODALITIES:
            raise ValidationError(f"patch modality must be one of {PATCH_MODALITIES}, got {self.modality!r}")

    @property
    def side(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])


@dataclass
class CropGeometry:
    """Maps between image coordinates and a square crop's pixel frame."""

    center: tuple[float, float]
    region_side: float
    out_side: int

    def __post_init__(self) -> None:
        if self.region_side <= 0:
            raise ValidationError(f"region side must be positive, got {self.region_side}")
        if self.out_side < 1:
            raise ValidationError(f"output side must be >= 1, got {self.out_side}")

    @staticmethod
    def around_box(box: tuple[float, float, float, float], context: float, out_side: int) -> "CropGeometry":
        cx, cy, w, h = box
        if w <= 0 or h <= 0:
            raise ValidationError(f"box sides must be positive, got w={w}, h={h}")
        if context <= 0:
            raise ValidationError(f"context factor must be positive, got {context}")
        return CropGeometry(center=(float(cx), float(cy)), region_side=context * max(w, h), out_side=out_side)

    @property
    def zoom(self) -> float:
        """Crop pixels per image pixel."""
        return self.out_side / self.region_side

    @property
    def origin(self) -> tuple[float, float]:
        return (self.center[0] - self.region_side / 2.0, self.center[1] - self.region_side / 2.0)

    def box_to_patch(self, box: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        k = self.zoom
        cx, cy, w, h = box
        return ((cx - x0) * k, (cy - y0) * k, w * k, h * k)

    def box_to_image(self, box: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        k = self.zoom
        cx, cy, w, h = box
        return (x0 + cx / k, y0 + cy / k, w / k, h / k)

    def scaled(self, out_side: int) -> "CropGeometry":
        """Same image region sampled at a different resolution."""
        return CropGeometry(center=self.center, region_side=self.region_side, out_side=out_side)


def _bilinear_crop(img: Array, geometry: CropGeometry) -> Array:
    """Sample img [C, H, W] on the geometry's grid; outside reads as zero."""
    c, h, w = img.shape
    s = geometry.out_side
    x0, y0 = geometry.origin
    step = geometry.region_side / s
    xs = x0 + (np.arange(s) + 0.5) * step - 0.5
    ys = y0 + (np.arange(s) + 0.5) * step - 0.5

    out = np.zeros((c, s, s))
    fx0 = np.floor(xs)
    fy0 = np.floor(ys)
    ix = fx0.astype(np.int64)
    iy = fy0.astype(np.int64)
    wx1 = xs - fx0
    wy1 = ys - fy0
    for dy, wy in ((0, 1.0 - wy1), (1, wy1)):
        ry = iy + dy
        vy = (ry >= 0) & (ry < h)
        cy = np.clip(ry, 0, h - 1)
        for dx, wx in ((0, 1.0 - wx1), (1, wx1)):
            rx = ix + dx
            vx = (rx >= 0) & (rx < w)
            cx = np.clip(rx, 0, w - 1)
            weight = (wy * vy)[:, None] * (wx * vx)[None, :]
            out += img[:, cy[:, None], cx[None, :]] * weight[None, :, :]
    return out


def crop_patch(
    source: Array | TimeSurface,
    box: tuple[float, float, float, float],
    scale: float,
    out_side: int,
    kind: str,
    modality: str,
) -> Patch:
    """Crop a square region of `scale` times the box's larger side.

    `source` is [H, W], [C, H, W], or a TimeSurface; sampling is bilinear
    and reads outside the source as zero. The region is centred on the box
    centre and resampled to out_side x out_side.
    """
    if isinstance(source, TimeSurface):
        img = source.grid[None, :, :]
    else:
        img = np.asarray(source, dtype=np.float64)
        if img.ndim == 2:
            img = img[None, :, :]
        elif img.ndim != 3:
            raise DimensionError(f"crop source must be [H,W] or [C,H,W], got {img.shape}")
    geometry = CropGeometry.around_box(box, scale, out_side)
    return Patch(data=_bilinear_crop(img, geometry), kind=kind, modality=modality)


def crop_with_geometry(source: Array | TimeSurface, geometry: CropGeometry, kind: str, modality: str) -> Patch:
    """Crop using an explicit, pre-built geometry (shared between modalities)."""
    if isinstance(source, TimeSurface):
        img = source.grid[None, :, :]
    else:
        img = np.asarray(source, dtype=np.float64)
        if img.ndim == 2:
            img = img[None, :, :]
        elif img.ndim != 3:
            raise DimensionError(f"crop source must be [H,W] or [C,H,W], got {img.shape}")
    return Patch(data=_bilinear_crop(img, geometry), kind=kind, modality=modality)
