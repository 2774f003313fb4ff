"""Command-line front end: synthesize, project, compute residuals, align,
refine, evaluate and export PNGs.

Every subcommand writes its artifacts plus ``stats-<command>.jsonl`` (one JSON
record per frame, sorted keys, no timings) under ``--out``. Exit codes: 0 ok,
1 usage or configuration error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import bev_view as bv
from . import container
from . import range_view as rv
from . import scam
from . import synthetic as sy
from .cross_view import compose_b2r, geometric_align
from .errors import ConfigError, IoError, LidarMosError
from .losses_metrics import DEFAULT_BINS, EvalReport, distance_binned_eval
from .pipeline import FramePipeline, RefineWeights, point_features, refine_scores, threshold_refine_weights
from .scan_io import (DEFAULT_MOVING_CLASSES, LabelSet, Pose, SequencePaths, load_frame,
                      read_labels, read_poses, write_labels)
from .tensor_core import load_weights

log = logging.getLogger("lidarmos")

CONFIG_ENV = "LIDARMOS_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
PRED_MOVING, PRED_STATIC = 252, 9


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    rv: rv.RvConfig = field(default_factory=rv.RvConfig)
    bev: bv.BevConfig = field(default_factory=bv.BevConfig)
    voxel: scam.VoxelConfig = field(default_factory=scam.VoxelConfig)
    weights: str | None = None
    moving_classes: tuple[int, ...] = tuple(sorted(DEFAULT_MOVING_CLASSES))
    strides: tuple[int, ...] = (1,)
    n_past: int = 1
    threshold: float = 0.05
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.strides or any(s < 1 for s in self.strides):
            raise ConfigError("strides must be a non-empty list of positive integers")
        if self.n_past < 1:
            raise ConfigError("n_past must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.moving_classes:
            raise ConfigError("moving_classes must be non-empty")


# file schema: section -> key -> (type, converter into the dataclass field)
_RV_KEYS = {"h": int, "w": int, "fov_up_deg": float, "fov_down_deg": float}
_BEV_KEYS = {"h": int, "w": int, "rho_min": float, "rho_max": float, "theta_min": float,
             "theta_max": float, "z_min": float, "z_max": float, "window_len": int}
_VOXEL_KEYS = {"voxel_size": list, "bounds_min": list, "bounds_max": list}
_TOP_KEYS = {"rv", "bev", "voxel", "weights", "moving_classes", "strides", "n_past",
             "threshold", "seed", "workers"}


def _typed(section: str, raw: dict, schema: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"'{section}' must be an object")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    out = {}
    for k, v in raw.items():
        want = schema[k]
        if want is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigError(f"'{section}.{k}' must be an integer")
        if want is float and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"'{section}.{k}' must be a number")
        if want is list and (not isinstance(v, list) or len(v) != 3
                             or not all(isinstance(x, (int, float)) for x in v)):
            raise ConfigError(f"'{section}.{k}' must be a list of 3 numbers")
        out[k] = tuple(float(x) for x in v) if want is list else want(v)
    return out


def _int_list(name: str, v) -> tuple[int, ...]:
    if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"'{name}' must be a list of integers")
    return tuple(v)


def config_from_dict(raw: dict) -> PipelineConfig:
    """Build a config from the JSON schema; missing keys take module defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kw = {}
    if "rv" in raw:
        r = _typed("rv", raw["rv"], _RV_KEYS)
        for k in ("fov_up", "fov_down"):
            if f"{k}_deg" in r:
                r[k] = math.radians(r.pop(f"{k}_deg"))
        kw["rv"] = rv.RvConfig(**r)
    if "bev" in raw:
        kw["bev"] = bv.BevConfig(**_typed("bev", raw["bev"], _BEV_KEYS))
    if "voxel" in raw:
        kw["voxel"] = scam.VoxelConfig(**_typed("voxel", raw["voxel"], _VOXEL_KEYS))
    if "weights" in raw:
        if raw["weights"] is not None and not isinstance(raw["weights"], str):
            raise ConfigError("'weights' must be a path or null")
        kw["weights"] = raw["weights"]
    for k in ("moving_classes", "strides"):
        if k in raw:
            kw[k] = _int_list(k, raw[k])
    for k in ("n_past", "seed", "workers"):
        if k in raw:
            kw[k] = _typed("config", {k: raw[k]}, {k: int})[k]
    if "threshold" in raw:
        kw["threshold"] = _typed("config", {"threshold": raw["threshold"]}, {"threshold": float})["threshold"]
    return PipelineConfig(**kw)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {
        # rounded so the degree -> radian -> degree trip is exact
        "rv": {"h": cfg.rv.h, "w": cfg.rv.w, "fov_up_deg": round(math.degrees(cfg.rv.fov_up), 12),
               "fov_down_deg": round(math.degrees(cfg.rv.fov_down), 12)},
        "bev": {k: getattr(cfg.bev, k) for k in _BEV_KEYS},
        "voxel": {k: list(getattr(cfg.voxel, k)) for k in _VOXEL_KEYS},
        "weights": cfg.weights,
        "moving_classes": list(cfg.moving_classes),
        "strides": list(cfg.strides),
        "n_past": cfg.n_past,
        "threshold": cfg.threshold,
        "seed": cfg.seed,
        "workers": cfg.workers,
    }


def load_config(path: str | None) -> PipelineConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PipelineConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def _override(cfg: PipelineConfig, args) -> PipelineConfig:
    """Command-line flags win over file values."""
    kw = {}
    for name in ("seed", "workers", "n_past", "threshold", "weights"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "strides", None):
        kw["strides"] = tuple(args.strides)
    return dataclasses.replace(cfg, **kw)


# ---------------------------------------------------------------- frame work

@dataclass(frozen=True)
class _Seq:
    root: str
    ids: tuple[int, ...]
    poses: tuple[Pose, ...]
    moving: frozenset

    @classmethod
    def open(cls, root, moving_classes) -> "_Seq":
        seq = SequencePaths(Path(root))
        ids = seq.scan_ids()
        if not ids:
            raise IoError(f"no scans under {seq.velodyne}")
        poses = read_poses(seq.poses, seq.calib)
        return cls(str(root), tuple(ids), tuple(poses), frozenset(moving_classes))

    def frame(self, i: int):
        return load_frame(SequencePaths(Path(self.root)), i, self.poses, self.moving)


def _ordered_map(fn: Callable, jobs: Sequence, workers: int):
    """Results in job order; a bounded process pool when ``workers > 1``."""
    if workers <= 1 or len(jobs) <= 1:
        for j in jobs:
            yield fn(j)
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        yield from ex.map(fn, jobs)


def _num(v):
    v = float(v)
    return None if not math.isfinite(v) else v


def _job_project_rv(job):
    seq, cfg, i = job
    f = seq.frame(i)
    img, idx, st = rv.build_range_image(f.cloud, cfg.rv, with_stats=True)
    stats = {"frame": i, "n_points": st.n_points, "n_zero_range": st.n_zero_range,
             "n_out_of_fov": st.n_out_of_fov, "n_pixels_filled": st.n_pixels_filled}
    return i, {"range_image": img.channels, "range_index": idx.idx}, stats


def _job_residual_rv(job):
    seq, cfg, i, stride = job
    f = seq.frame(i)
    past_ids = rv.past_indices(i, cfg.n_past, stride)
    img, _ = rv.build_range_image(f.cloud, cfg.rv)
    r0 = img.range
    res = np.zeros((cfg.rv.h, cfg.rv.w, len(past_ids)))
    both = np.zeros(res.shape, dtype=bool)
    for k, j in enumerate(past_ids):
        rk = rv.compensated_ranges(seq.frame(j), f, cfg.rv)
        res[..., k] = rv.residual_from_ranges(r0, rk)
        both[..., k] = (r0 > 0) & (rk > 0)
    vals = res[both]
    stats = {"frame": i, "stride": stride, "past": past_ids, "n_valid": int(vals.size),
             "near_zero_fraction": _num(np.mean(vals < 1e-3)) if vals.size else None,
             "mean": _num(vals.mean()) if vals.size else None,
             "max": _num(vals.max()) if vals.size else None}
    return i, {"rv_residual": res}, stats


def _job_project_bev(job):
    seq, cfg, i = job
    f = seq.frame(i)
    img = bv.build_bev_image([f], f.pose, cfg.bev)
    stats = {"frame": i, "n_occupied": int(img.occupied.sum()), "max_span": _num(img.span.max())}
    return i, {"bev_image": img.span}, stats


def _job_align(job):
    seq, cfg, i = job
    f = seq.frame(i)
    _, idx = rv.build_range_image(f.cloud, cfg.rv)
    t_p2b = bv.build_t_p2b(f.cloud, cfg.bev)
    cv = compose_b2r(idx, t_p2b)
    bev = bv.build_bev_image([f], f.pose, cfg.bev).span
    aligned = geometric_align(bev[None], cv, cfg.rv.h, cfg.rv.w)[0]
    stats = {"frame": i, "n_range_valid": int(idx.valid.sum()), "n_cross_valid": int(cv.valid.sum())}
    return i, {"cross_view": cv.coords, "aligned_bev": aligned}, stats


# ---------------------------------------------------------------- commands

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _commit(out: Path, cmd: str, results) -> int:
    """Write artifacts and stats in frame order as results arrive."""
    n = 0
    with open(out / f"stats-{cmd}.jsonl", "w") as fh:
        for i, arrays, stats in results:
            for name, arr in arrays.items():
                d = out / name
                d.mkdir(exist_ok=True)
                container.write(d / f"{i:06d}.lmf", arr)
            fh.write(json.dumps(stats, sort_keys=True) + "\n")
            n += 1
    log.info("%s: wrote %d frames to %s", cmd, n, out)
    return EXIT_OK


def _frames_arg(seq: _Seq, args) -> list[int]:
    ids = list(seq.ids)
    if args.frames:
        lo, _, hi = args.frames.partition(":")
        lo_i = int(lo) if lo else ids[0]
        hi_i = int(hi) if hi else ids[-1] + 1
        ids = [i for i in ids if lo_i <= i < hi_i]
        if not ids:
            raise ConfigError(f"frame range {args.frames} selects no scans")
    return ids


def cmd_simple(args, cfg: PipelineConfig, job_fn) -> int:
    seq = _Seq.open(args.sequence, cfg.moving_classes)
    jobs = [(seq, cfg, i) for i in _frames_arg(seq, args)]
    return _commit(_out_dir(args), args.command, _ordered_map(job_fn, jobs, cfg.workers))


def cmd_residual_rv(args, cfg: PipelineConfig) -> int:
    seq = _Seq.open(args.sequence, cfg.moving_classes)
    ids = _frames_arg(seq, args)
    # strides drawn up front so the result does not depend on worker scheduling
    rng = np.random.default_rng(cfg.seed)
    strides = [rv.sample_delta_t(rng, cfg.strides) for _ in ids]
    jobs = [(seq, cfg, i, s) for i, s in zip(ids, strides)]
    return _commit(_out_dir(args), args.command, _ordered_map(_job_residual_rv, jobs, cfg.workers))


def _stream(seq: _Seq, cfg: PipelineConfig, ids: list[int]):
    """BEV windows carry state, so these frames are processed sequentially."""
    state = bv.TemporalWindowPair(cfg.bev)
    for i in ids:
        f = seq.frame(i)
        yield i, f, bv.push_frame_and_residual(state, f)


def cmd_residual_bev(args, cfg: PipelineConfig) -> int:
    seq = _Seq.open(args.sequence, cfg.moving_classes)

    def results():
        for i, _, res in _stream(seq, cfg, _frames_arg(seq, args)):
            ch = res.channels
            stats = {"frame": i, "n_nonzero_ch0": int(np.count_nonzero(ch[..., 0])),
                     "max_abs": _num(np.abs(ch).max())}
            yield i, {"bev_residual": ch}, stats

    return _commit(_out_dir(args), args.command, results())


def _refine_weights(cfg: PipelineConfig, n_rv: int, n_bev: int) -> RefineWeights:
    if cfg.weights is None:
        return threshold_refine_weights(n_rv, n_bev, cfg.threshold)
    return RefineWeights.from_mapping(load_weights(cfg.weights))


def cmd_refine(args, cfg: PipelineConfig) -> int:
    seq = _Seq.open(args.sequence, cfg.moving_classes)
    ids = _frames_arg(seq, args)
    out = _out_dir(args)
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    strides = [rv.sample_delta_t(rng, cfg.strides) for _ in ids]
    pipe = FramePipeline(cfg.rv, cfg.bev)
    weights = _refine_weights(cfg, cfg.n_past, cfg.bev.window_len)
    with open(out / "stats-refine.jsonl", "w") as fh:
        for i, stride in zip(ids, strides):
            f = seq.frame(i)
            past = [seq.frame(k) for k in rv.past_indices(i, cfg.n_past, stride)]
            outs = pipe.process(f, past)
            feats = point_features(f, outs, cfg.rv)
            scores = refine_scores(f, feats, weights, cfg.voxel)
            moving = scores[:, 1] > scores[:, 0]
            cls = np.where(moving, PRED_MOVING, PRED_STATIC).astype(np.uint16)
            write_labels(pred_dir / f"{i:06d}.label", LabelSet.from_classes(cls))
            fh.write(json.dumps({"frame": i, "stride": stride, "n_points": len(f.cloud),
                                 "n_moving": int(moving.sum())}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    seq = _Seq.open(args.sequence, cfg.moving_classes)
    pred_root = Path(args.predictions)
    out = _out_dir(args)
    total: EvalReport | None = None
    with open(out / "stats-eval.jsonl", "w") as fh:
        for i in _frames_arg(seq, args):
            f = seq.frame(i)
            if f.labels is None:
                raise ConfigError(f"frame {i} has no ground-truth labels")
            pred = read_labels(pred_root / f"{i:06d}.label", cfg.moving_classes)
            rep = distance_binned_eval(pred.moving.astype(np.int64), f.labels.moving.astype(np.int64),
                                       f.cloud, DEFAULT_BINS)
            c = rep.overall
            fh.write(json.dumps({"frame": i, "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn},
                                sort_keys=True) + "\n")
            total = rep if total is None else total + rep
    (out / "report.csv").write_text(total.to_csv())
    (out / "report.txt").write_text(total.to_table() + "\n")
    print(total.to_table())
    return EXIT_OK


def cmd_synth(args, cfg: PipelineConfig) -> int:
    seed = cfg.seed
    if args.scene == "static":
        spec = sy.static_scene(args.frames_count, ego_speed=args.ego_speed, seed=seed)
    else:
        spec = sy.mover_scene(args.frames_count, seed=seed)
    seqobj = sy.generate_sequence(spec)
    out = _out_dir(args)
    seqobj.write(out)
    with open(out / "stats-synth.jsonl", "w") as fh:
        for f in seqobj.frames:
            fh.write(json.dumps({"frame": f.index, "n_points": len(f.cloud),
                                 "n_moving": int(f.labels.moving.sum())}, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- png export

_ANCHORS = np.array([  # dark blue -> cyan -> green -> yellow -> red
    [0.0, 0, 0, 80], [0.25, 0, 160, 220], [0.5, 40, 200, 80], [0.75, 250, 220, 0], [1.0, 200, 0, 0],
])


def _colormap() -> np.ndarray:
    x = np.linspace(0.0, 1.0, 256)
    return np.stack([np.interp(x, _ANCHORS[:, 0], _ANCHORS[:, k]) for k in (1, 2, 3)], axis=1
                    ).round().astype(np.uint8)


def normalize_channel(ch: np.ndarray) -> np.ndarray:
    """Min-max to 0..255; a constant channel maps to 0."""
    ch = np.asarray(ch, dtype=np.float64)
    lo, hi = float(ch.min()), float(ch.max())
    if not hi > lo:
        return np.zeros(ch.shape, dtype=np.uint8)
    return np.round((ch - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_png(artifact, out, style: str = "grayscale", channel: int | None = None) -> list[Path]:
    """One 8-bit PNG per channel of a container artifact (``out`` itself when a
    single channel is written, else ``<stem>_c<k>.png``)."""
    from PIL import Image

    if style not in ("grayscale", "colormap"):
        raise ConfigError(f"unknown style {style!r}")
    arr = container.read(artifact)
    chans = range(arr.shape[2]) if channel is None else [channel]
    if channel is not None and not 0 <= channel < arr.shape[2]:
        raise ConfigError(f"channel {channel} out of range for {arr.shape[2]} channels")
    out = Path(out)
    written = []
    for k in chans:
        g = normalize_channel(arr[..., k])
        img = Image.fromarray(g, "L") if style == "grayscale" else Image.fromarray(_colormap()[g], "RGB")
        p = out if len(chans) == 1 else out.with_name(f"{out.stem}_c{k}{out.suffix or '.png'}")
        p.parent.mkdir(parents=True, exist_ok=True)
        img.save(p, format="PNG")
        written.append(p)
    return written


def cmd_png(args, cfg: PipelineConfig) -> int:
    for p in export_png(args.artifact, args.out, args.style, args.channel):
        log.info("wrote %s", p)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_ints(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lidarmos", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp, sequence=True):
        if sequence:
            sp.add_argument("sequence", help="KITTI-style sequence directory")
            sp.add_argument("--frames", help="half-open frame range LO:HI")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help=f"JSON config (default: ${CONFIG_ENV})")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        return sp

    common(sub.add_parser("project-rv", help="range images and index maps"))
    sp = common(sub.add_parser("residual-rv", help="range residual maps"))
    sp.add_argument("--n-past", type=int)
    sp.add_argument("--strides", type=_positive_ints, help="stride options, e.g. 1,2,3")
    common(sub.add_parser("project-bev", help="polar BEV height-span images"))
    common(sub.add_parser("residual-bev", help="streaming BEV window residuals"))
    common(sub.add_parser("align", help="T(B->R) maps and aligned BEV images"))
    sp = common(sub.add_parser("refine", help="moving/static predictions as .label files"))
    sp.add_argument("--n-past", type=int)
    sp.add_argument("--strides", type=_positive_ints)
    sp.add_argument("--weights", help="weights manifest (default: threshold stand-in)")
    sp.add_argument("--threshold", type=float)
    sp = common(sub.add_parser("eval", help="IoU / recall / precision per distance bin"))
    sp.add_argument("--predictions", required=True, help="directory of predicted .label files")
    sp = common(sub.add_parser("synth", help="write a synthetic sequence"), sequence=False)
    sp.add_argument("--scene", choices=("static", "mover"), default="static")
    sp.add_argument("--frames", dest="frames_count", type=int, default=10)
    sp.add_argument("--ego-speed", type=float, default=0.5)
    sp = sub.add_parser("png", help="export a container artifact as PNG")
    sp.add_argument("artifact")
    sp.add_argument("--out", required=True, help="PNG path")
    sp.add_argument("--style", choices=("grayscale", "colormap"), default="grayscale")
    sp.add_argument("--channel", type=int)
    sp.add_argument("--config")
    return p


_COMMANDS = {
    "project-rv": lambda a, c: cmd_simple(a, c, _job_project_rv),
    "project-bev": lambda a, c: cmd_simple(a, c, _job_project_bev),
    "align": lambda a, c: cmd_simple(a, c, _job_align),
    "residual-rv": cmd_residual_rv,
    "residual-bev": cmd_residual_bev,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "png": cmd_png,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _override(load_config(args.config), args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"lidarmos: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"lidarmos {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LidarMosError, OSError) as exc:
        print(f"lidarmos {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"lidarmos {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
