"""Content-aware frame splitting and routing-graph synthesis.

Frames are tiled into coarse square patches first; each patch is scored by
a bicubic down/up round trip (a deterministic stand-in for a pretrained
upscaling model: high PSNR after the round trip means low texture
complexity).  Patches scoring below the level's threshold split 2x2 and
re-score against the next threshold; survivors of the last threshold stay
at the deepest level.  Routing is shape-keyed: route index = split level.

The routing graph built here has one processing path per split level
behind a Switch/Combine pair: each path is a small residual-block
upscaler ending in a DepthToSpace pixel shuffle.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import ir

PSNR_CLAMP_DB = 100.0


@dataclass(frozen=True)
class SplitConfig:
    scale: int = 2
    base_patch: int = 128
    thresholds: tuple = (40.0, 30.0)

    def validate(self) -> None:
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3, or 4, got {self.scale}")
        if list(self.thresholds) != sorted(self.thresholds, reverse=True) or \
                len(set(self.thresholds)) != len(self.thresholds):
            raise ValueError("thresholds must be strictly descending")
        need = (2 ** len(self.thresholds)) * self.scale
        if self.base_patch % need != 0:
            raise ValueError(
                f"base patch {self.base_patch} must be divisible by "
                f"2^levels * scale = {need}")

    @property
    def levels(self) -> int:
        return len(self.thresholds) + 1


@dataclass
class PatchEntry:
    frame: str
    x: int
    y: int
    w: int
    h: int
    level: int
    psnr_db: float
    route: int


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over 8-bit samples; identical
    regions clamp to 100 dB."""
    if a.shape != b.shape:
        raise ValueError(f"psnr needs identical dims, got {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CLAMP_DB
    return 10.0 * math.log10(255.0 * 255.0 / mse)


def _catmull_rom(d: np.ndarray) -> np.ndarray:
    # a = -0.5 cubic kernel
    d = np.abs(d)
    out = np.zeros_like(d)
    near = d <= 1.0
    far = (d > 1.0) & (d < 2.0)
    dn = d[near]
    out[near] = 1.5 * dn**3 - 2.5 * dn**2 + 1.0
    df = d[far]
    out[far] = -0.5 * df**3 + 2.5 * df**2 - 4.0 * df + 2.0
    return out


def _cubic_taps(in_len: int, out_len: int):
    scale = in_len / out_len
    x = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(x).astype(np.int64)
    idx = base[:, None] + np.array([-1, 0, 1, 2])[None, :]
    w = _catmull_rom(x[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)
    return np.clip(idx, 0, in_len - 1), w


def _resize_axis0(img: np.ndarray, out_len: int) -> np.ndarray:
    idx, w = _cubic_taps(img.shape[0], out_len)
    gathered = img[idx]  # (out_len, 4, ...)
    return np.einsum("ot...,ot->o...", gathered, w, optimize=False)


def resize_frame(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable Catmull-Rom resampling with half-pixel centers and
    edge-clamped taps."""
    if out_h < 1 or out_w < 1:
        raise ValueError("target dims must be at least 1")
    work = img.astype(np.float64)
    work = _resize_axis0(work, out_h)
    work = _resize_axis0(work.transpose(1, 0, 2), out_w).transpose(1, 0, 2)
    return np.clip(np.rint(work), 0, 255).astype(np.uint8)


def bicubic_resample(img: np.ndarray, factor) -> np.ndarray:
    """Resample by a rational/float factor (up or down)."""
    f = Fraction(factor).limit_denominator(10**6) if not isinstance(factor, Fraction) \
        else factor
    out_h = max(1, int(round(img.shape[0] * f)))
    out_w = max(1, int(round(img.shape[1] * f)))
    return resize_frame(img, out_h, out_w)


def roundtrip_score(patch: np.ndarray, scale: int) -> float:
    """PSNR of the bicubic down/up round trip against the original."""
    h, w = patch.shape[0], patch.shape[1]
    lr = resize_frame(patch, max(1, round(h / scale)), max(1, round(w / scale)))
    rec = resize_frame(lr, h, w)
    return psnr(rec, patch)


def split_frame(frame_id: str, img: np.ndarray, cfg: SplitConfig) -> list[PatchEntry]:
    """Coarse-to-fine split of one frame into an exact partition of patches."""
    cfg.validate()
    h, w = img.shape[0], img.shape[1]
    if h < cfg.base_patch or w < cfg.base_patch:
        raise ValueError(
            f"frame {frame_id}: {w}x{h} smaller than base patch {cfg.base_patch}")
    entries: list[PatchEntry] = []

    def tile_starts(extent: int) -> list[tuple[int, int]]:
        n = extent // cfg.base_patch
        spans = []
        for i in range(n):
            start = i * cfg.base_patch
            size = cfg.base_patch if i < n - 1 else extent - start
            spans.append((start, size))
        return spans

    def consider(x: int, y: int, pw: int, ph: int, level: int) -> None:
        score = roundtrip_score(img[y:y + ph, x:x + pw], cfg.scale)
        can_split = level < len(cfg.thresholds) and pw >= 2 and ph >= 2
        if can_split and score < cfg.thresholds[level]:
            wl, hl = pw // 2, ph // 2
            consider(x, y, wl, hl, level + 1)
            consider(x + wl, y, pw - wl, hl, level + 1)
            consider(x, y + hl, wl, ph - hl, level + 1)
            consider(x + wl, y + hl, pw - wl, ph - hl, level + 1)
        else:
            entries.append(PatchEntry(
                frame=frame_id, x=x, y=y, w=pw, h=ph,
                level=level, psnr_db=round(score, 4), route=level))

    for y, ph in tile_starts(h):
        for x, pw in tile_starts(w):
            consider(x, y, pw, ph, 0)
    return entries


# ---------------------------------------------------------------------------
# Manifest I/O


def save_manifest(path: str, entries: list[PatchEntry], cfg: SplitConfig,
                  frame_dims: dict) -> None:
    frames: dict[str, dict] = {}
    for e in entries:
        rec = frames.setdefault(e.frame, {
            "frame": e.frame,
            "width": frame_dims[e.frame][0],
            "height": frame_dims[e.frame][1],
            "patches": [],
        })
        rec["patches"].append({
            "x": e.x, "y": e.y, "w": e.w, "h": e.h,
            "level": e.level, "psnr_db": e.psnr_db, "route": e.route,
        })
    obj = {
        "config": {
            "scale": cfg.scale,
            "base_patch": cfg.base_patch,
            "thresholds": list(cfg.thresholds),
        },
        "frames": [frames[k] for k in sorted(frames)],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def load_manifest(path: str):
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    cfg = SplitConfig(
        scale=obj["config"]["scale"],
        base_patch=obj["config"]["base_patch"],
        thresholds=tuple(obj["config"]["thresholds"]),
    )
    entries = []
    frame_dims = {}
    for frame in obj["frames"]:
        frame_dims[frame["frame"]] = (frame["width"], frame["height"])
        for p in frame["patches"]:
            entries.append(PatchEntry(
                frame=frame["frame"], x=p["x"], y=p["y"], w=p["w"], h=p["h"],
                level=p["level"], psnr_db=p["psnr_db"], route=p["route"]))
    return entries, cfg, frame_dims


# ---------------------------------------------------------------------------
# Frame I/O: binary PPM always, PNG when Pillow can decode it.


def save_frame_ppm(path: str, img: np.ndarray) -> None:
    h, w = img.shape[0], img.shape[1]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def _load_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()


def load_frame(path: str) -> np.ndarray:
    if path.lower().endswith((".ppm", ".pnm")):
        return _load_ppm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def load_frames_dir(dirpath: str):
    """Frames in lexicographic filename order; returns [(frame id, image)]."""
    names = sorted(
        n for n in os.listdir(dirpath)
        if n.lower().endswith((".ppm", ".pnm", ".png"))
    )
    out = []
    for n in names:
        out.append((os.path.splitext(n)[0], load_frame(os.path.join(dirpath, n))))
    return out


def synthetic_frame(seed: int, h: int = 512, w: int = 512) -> np.ndarray:
    """Deterministic test frame: flat background, a smooth gradient band,
    and a high-frequency textured rectangle."""
    rng = np.random.default_rng(seed)
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = rng.integers(40, 200, size=3, dtype=np.int64).astype(np.uint8)
    # Gradient band on the left half.
    gy = np.linspace(0, 120, h, dtype=np.float64)[:, None]
    gx = np.linspace(0, 60, w // 2, dtype=np.float64)[None, :]
    band = (gy + gx)[..., None] + np.array([10.0, 30.0, 50.0])
    img[:, : w // 2] = np.clip(band, 0, 255).astype(np.uint8)
    # Textured object somewhere in the right half.
    th = int(rng.integers(h // 4, h // 2))
    tw = int(rng.integers(w // 4, w // 2))
    ty = int(rng.integers(0, h - th))
    tx = int(rng.integers(w // 2, w - tw))
    yy, xx = np.mgrid[0:th, 0:tw]
    tex = 127 + 90 * np.sin(xx * 1.1) * np.cos(yy * 0.9) \
        + rng.normal(0, 18, size=(th, tw))
    img[ty:ty + th, tx:tx + tw] = np.clip(tex, 0, 255).astype(np.uint8)[..., None]
    return img


# ---------------------------------------------------------------------------
# Routing graph


def build_routing_graph(cfg: SplitConfig, path_spec: Optional[list] = None,
                        seed: int = 0) -> ir.Graph:
    """One upscaling path per split level behind a Switch/Combine pair.

    `path_spec` gives (residual blocks, channel width) per level; weights
    come from a seeded generator recorded in the Switch node's attrs, so
    the emitted graph file is reproducible.
    """
    cfg.validate()
    levels = cfg.levels
    if path_spec is None:
        path_spec = [(2, 16)] * levels
    if len(path_spec) != levels:
        raise ValueError(f"need one path per level: {levels}, got {len(path_spec)}")
    s = cfg.scale
    rng = np.random.default_rng(seed)
    inits: list[ir.TensorDef] = []
    nodes: list[ir.Node] = []

    def weight(name: str, shape: tuple) -> str:
        data = (rng.standard_normal(shape) * 0.05).astype(np.float32)
        inits.append(ir.TensorDef(name, "f32", shape, "initializer", data))
        return name

    switch_outs = [f"p{k}.in" for k in range(levels)]
    nodes.append(ir.Node("Switch", ("patch", "selector"), tuple(switch_outs),
                         {"seed": seed}, {}))
    path_outs = []
    for k, (blocks, width) in enumerate(path_spec):
        pre = f"p{k}."
        w_head = weight(f"{pre}head.w", (width, 3, 3, 3))
        nodes.append(ir.Node("Conv", (f"{pre}in", w_head), (f"{pre}f0",),
                             {"strides": [1, 1], "pads": [1, 1, 1, 1]}, {}))
        cur = f"{pre}f0"
        for b in range(blocks):
            bp = f"{pre}b{b}."
            w1 = weight(f"{bp}c1.w", (width, width, 3, 3))
            w2 = weight(f"{bp}c2.w", (width, width, 3, 3))
            nodes.append(ir.Node("Conv", (cur, w1), (f"{bp}t1",),
                                 {"strides": [1, 1], "pads": [1, 1, 1, 1]}, {}))
            nodes.append(ir.Node("Relu", (f"{bp}t1",), (f"{bp}r1",), {}, {}))
            nodes.append(ir.Node("Conv", (f"{bp}r1", w2), (f"{bp}t2",),
                                 {"strides": [1, 1], "pads": [1, 1, 1, 1]}, {}))
            nodes.append(ir.Node("Add", (f"{bp}t2", cur), (f"{bp}out",), {}, {}))
            cur = f"{bp}out"
        w_up = weight(f"{pre}up.w", (3 * s * s, width, 3, 3))
        nodes.append(ir.Node("Conv", (cur, w_up), (f"{pre}up",),
                             {"strides": [1, 1], "pads": [1, 1, 1, 1]}, {}))
        nodes.append(ir.Node("DepthToSpace", (f"{pre}up",), (f"{pre}out",),
                             {"blocksize": s, "mode": "DCR"}, {}))
        path_outs.append(f"{pre}out")
    nodes.append(ir.Node("Combine", tuple(path_outs), ("sr.out",), {}, {}))
    return ir.build_graph(
        f"routing-x{s}",
        [ir.TensorDef("patch", "f32", (1, 3, "H", "W"), "input"),
         ir.TensorDef("selector", "i64", (), "input")],
        inits,
        nodes,
        ["sr.out"],
    )


# ---------------------------------------------------------------------------
# Overhead report


@dataclass
class OverheadReport:
    total_patches: int
    baseline_patches: float
    patch_ratio: float  # baseline / ours (>1 means fewer patches than baseline)
    model_loads: int
    baseline_model_loads: int
    switching_saving: float
    level_histogram: dict
    shape_histogram: dict
    frames: int = 0

    def to_obj(self) -> dict:
        return {
            "frames": self.frames,
            "total_patches": self.total_patches,
            "baseline_patches": self.baseline_patches,
            "patch_ratio": self.patch_ratio,
            "model_loads": self.model_loads,
            "baseline_model_loads": self.baseline_model_loads,
            "switching_saving": self.switching_saving,
            "level_histogram": {str(k): v for k, v in sorted(self.level_histogram.items())},
            "shape_histogram": {k: v for k, v in sorted(self.shape_histogram.items())},
        }


def overhead_report(entries: list[PatchEntry], frame_dims: dict,
                    baseline_grid: int = 32, chunks: int = 4) -> OverheadReport:
    total = len(entries)
    baseline = sum(
        (w * h) / (baseline_grid * baseline_grid) for w, h in frame_dims.values())
    levels: dict[int, int] = {}
    shapes: dict[str, int] = {}
    for e in entries:
        levels[e.level] = levels.get(e.level, 0) + 1
        key = f"{e.w}x{e.h}"
        shapes[key] = shapes.get(key, 0) + 1
    return OverheadReport(
        total_patches=total,
        baseline_patches=baseline,
        patch_ratio=(baseline / total) if total else 0.0,
        model_loads=1,
        baseline_model_loads=chunks,
        switching_saving=float(chunks),
        level_histogram=levels,
        shape_histogram=shapes,
        frames=len(frame_dims),
    )


def check_partition(entries: list[PatchEntry], width: int, height: int) -> list[str]:
    """Exact-partition violations for one frame's patches."""
    problems = []
    area = 0
    cover = np.zeros((height, width), dtype=np.uint8)
    for e in entries:
        if e.x < 0 or e.y < 0 or e.x + e.w > width or e.y + e.h > height:
            problems.append(f"patch at ({e.x},{e.y}) {e.w}x{e.h} exceeds the frame")
            continue
        area += e.w * e.h
        cover[e.y:e.y + e.h, e.x:e.x + e.w] += 1
    if area != width * height:
        problems.append(f"patch areas sum to {area}, frame has {width * height}")
    if (cover > 1).any():
        problems.append("patches overlap")
    if (cover == 0).any():
        problems.append("patches leave gaps")
    return problems
