"""Sequence container and the JSON manifest format.

A manifest names the sensor size, the per-frame records (id, timestamp,
exposure, image path, optional ground-truth box), and the event CSV path.
Image paths are resolved relative to the manifest's directory. Frames are
stored as float64 [3, H, W] in [0, 1] once loaded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .events import EventStream, FrameIndex, parse_events, write_events

Array = np.ndarray


@dataclass
class TrackSequence:
    sensor: tuple[int, int]
    frames: list[FrameIndex]
    images: list[Array]
    events: EventStream

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.images):
            raise ValidationError(f"{len(self.frames)} frame records but {len(self.images)} images")
        if not self.frames:
            raise ValidationError("a sequence needs at least one frame")
        w, h = self.sensor
        for frame, img in zip(self.frames, self.images):
            if img.shape != (3, h, w):
                raise ValidationError(
                    f"frame {frame.frame_id}: image shape {img.shape} does not match sensor {self.sensor}"
                )
        times = [f.t_rgb for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("frame timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def boxes(self) -> list[tuple[float, float, float, float] | None]:
        return [f.bbox for f in self.frames]


def load_manifest_frames(manifest_path: str | Path) -> tuple[tuple[int, int], list[FrameIndex], Path]:
    """Read only the frame index and sensor size (no pixels, no events)."""
    manifest_path = Path(manifest_path)
    spec = json.loads(manifest_path.read_text())
    sensor = tuple(int(v) for v in spec["sensor"])
    frames = []
    for rec in spec["frames"]:
        bbox = rec.get("bbox")
        frames.append(
            FrameIndex(
                frame_id=int(rec["frame_id"]),
                t_rgb=int(rec["t_rgb"]),
                exposure=int(rec["exposure"]),
                bbox=tuple(bbox) if bbox is not None else None,
            )
        )
    return sensor, frames, manifest_path.parent / spec["events"]


def load_sequence(manifest_path: str | Path) -> TrackSequence:
    """Read a manifest JSON plus the frame images and event CSV it names."""
    from PIL import Image

    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    spec = json.loads(manifest_path.read_text())
    sensor = tuple(int(v) for v in spec["sensor"])
    frames: list[FrameIndex] = []
    images: list[Array] = []
    for rec in spec["frames"]:
        bbox = rec.get("bbox")
        frames.append(
            FrameIndex(
                frame_id=int(rec["frame_id"]),
                t_rgb=int(rec["t_rgb"]),
                exposure=int(rec["exposure"]),
                bbox=tuple(bbox) if bbox is not None else None,
            )
        )
        with Image.open(root / rec["image"]) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        images.append(rgb.transpose(2, 0, 1))
    events = parse_events(root / spec["events"], sensor)
    return TrackSequence(sensor=sensor, frames=frames, images=images, events=events)


def write_sequence(seq: TrackSequence, out_dir: str | Path, name: str = "sequence") -> Path:
    """Materialise a sequence as PNG frames + event CSV + manifest JSON."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame_records = []
    for frame, img in zip(seq.frames, seq.images):
        fname = f"frame_{frame.frame_id:06d}.png"
        arr = np.clip(img.transpose(1, 2, 0) * 255.0, 0.0, 255.0).round().astype(np.uint8)
        Image.fromarray(arr).save(out_dir / fname)
        frame_records.append(
            {
                "frame_id": frame.frame_id,
                "t_rgb": frame.t_rgb,
                "exposure": frame.exposure,
                "image": fname,
                "bbox": list(frame.bbox) if frame.bbox is not None else None,
            }
        )
    events_name = f"{name}_events.csv"
    write_events(seq.events, out_dir / events_name)
    manifest = {
        "sensor": list(seq.sensor),
        "frames": frame_records,
        "events": events_name,
    }
    manifest_path = out_dir / f"{name}_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path
