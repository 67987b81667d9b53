"""Command-line front end: ``vidstyle {stylize-video, stylize-sphere, evaluate, synth}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Settings resolve as CLI flag > config file > built-in default, and every
run writes the resolved settings to ``<out>/config.json``; passing that
file back as ``--config`` reproduces the run.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .energy import LossWeights
from .imgcore import ImageFormatError, Sequence, SequenceManifest, ensure_writable_dir, read_image, write_image
from .perceptual import ExtractorConfig, FeatureExtractor
from .solver import NumericalFailure, SolverConfig

log = logging.getLogger("vidstyle")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        raise SystemExit(EXIT_USAGE)


def _emit_error(kind, message):
    print(json.dumps({"error": kind, "message": str(message)}), file=sys.stderr)


@dataclass
class RunConfig:
    """Everything that determines a run's numbers."""

    weights: LossWeights = field(default_factory=LossWeights)
    solver: SolverConfig = field(default_factory=SolverConfig)
    init: dict = field(default_factory=lambda: {"kind": "prev_warped", "seed": 0})
    longterm: list = field(default_factory=lambda: [1])
    multipass: dict = field(default_factory=dict)
    use_multipass: bool = False
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    sphere: dict = field(default_factory=lambda: {"overlap": 64, "fill": "zeros", "order": None,
                                                  "seed": 0})
    inputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        cfg = cls()
        try:
            if "weights" in d:
                cfg.weights = LossWeights(**d["weights"])
            if "solver" in d:
                cfg.solver = SolverConfig(**d["solver"])
            if "extractor" in d:
                cfg.extractor = ExtractorConfig.from_dict(d["extractor"])
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from None
        for key in ("init", "multipass", "sphere", "inputs"):
            if key in d:
                getattr(cfg, key).update(d[key])
        if "longterm" in d:
            cfg.longterm = list(d["longterm"])
        if "use_multipass" in d:
            cfg.use_multipass = bool(d["use_multipass"])
        return cfg

    def to_dict(self) -> dict:
        return {"weights": asdict(self.weights), "solver": asdict(self.solver),
                "init": dict(self.init), "longterm": list(self.longterm),
                "multipass": dict(self.multipass), "use_multipass": self.use_multipass,
                "extractor": self.extractor.to_dict(), "sphere": dict(self.sphere),
                "inputs": dict(self.inputs)}


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(doc)


def _parse_offsets(text):
    try:
        offs = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--longterm expects comma-separated integers, got {text!r}") from None
    if not offs:
        raise UsageError("--longterm is empty")
    return offs


def _snapshot(cfg: RunConfig, out: Path) -> None:
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))


def _abs(p):
    return str(Path(p).resolve()) if p else None


# ------------------------------------------------------------------ commands

def cmd_stylize_video(args) -> int:
    from .multipass import MultiPassConfig, run_multipass
    from .video import InitStrategy, LongTermConfig, stylize_sequence

    cfg = load_config(args.config)
    if args.init:
        cfg.init["kind"] = args.init.replace("-", "_")
    if args.seed is not None:
        cfg.init["seed"] = args.seed
        cfg.multipass["seed"] = args.seed
    if args.longterm:
        cfg.longterm = _parse_offsets(args.longterm)
    if args.multipass:
        cfg.use_multipass = True
    if args.passes is not None:
        cfg.multipass["passes"] = args.passes
    if args.max_iterations is not None:
        cfg.solver.max_iterations = args.max_iterations
    manifest_path = args.manifest or cfg.inputs.get("manifest")
    if not manifest_path:
        raise UsageError("--manifest is required")
    try:
        strategy = InitStrategy(**cfg.init)
        longterm = LongTermConfig(tuple(cfg.longterm))
        mp_cfg = MultiPassConfig(**cfg.multipass)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if cfg.use_multipass and tuple(longterm.offsets) != (1,):
        raise UsageError("--multipass does not combine with long-term offsets")

    manifest = SequenceManifest.load(manifest_path)
    style_path = args.style or cfg.inputs.get("style") or (
        str(manifest.resolve(manifest.style)) if manifest.style else None)
    if not style_path:
        raise UsageError("no style image: pass --style or list one in the manifest")
    cfg.inputs.update(manifest=_abs(manifest_path), style=_abs(style_path))
    seq = Sequence.from_manifest(manifest)
    style = read_image(style_path)
    extractor = FeatureExtractor(cfg.extractor)
    out = ensure_writable_dir(args.out)
    _snapshot(cfg, out)
    traces_dir = out / "traces"
    if cfg.use_multipass:
        res = run_multipass(seq, style, mp_cfg, cfg.weights, extractor, cfg.solver,
                            debug_dir=args.debug_dir, workers=args.workers)
        frames = res.frames
        traces_dir.mkdir(exist_ok=True)
        for j, traces in enumerate(res.traces, 1):
            for i, tr in enumerate(traces):
                tr.to_csv(traces_dir / f"pass_{j:02d}_frame_{i:04d}.csv")
        with open(out / "passes.csv", "w") as fh:
            fh.write("pass,direction,mean_temporal_error\n")
            for j, (d, e) in enumerate(zip(res.directions, res.pass_errors), 1):
                fh.write(f"{j},{d},{e!r}\n")
    else:
        frames, _ = stylize_sequence(seq, style, strategy, longterm, cfg.weights, cfg.solver,
                                     extractor, trace_dir=traces_dir)
    for i, f in enumerate(frames):
        write_image(f, out / f"frame_{i:04d}.png")
    log.info("wrote %d frames to %s", len(frames), out)
    return EXIT_OK


def _read_cube(cube_dir, overlap):
    from .spherical import FACE_LABELS, CubeFaceSet

    d = Path(cube_dir)
    faces = {}
    for lab in FACE_LABELS:
        p = d / f"face_{lab}.png"
        if not p.exists():
            raise FileNotFoundError(f"missing cube face {p}")
        faces[lab] = read_image(p)
    side = d / "cube.json"
    if side.exists():
        meta = json.loads(side.read_text())
        if "overlap" in meta and overlap is None:
            overlap = int(meta["overlap"])
    return faces, overlap


def cmd_stylize_sphere(args) -> int:
    from .evaluation import report
    from .spherical import DEFAULT_ORDER, CubeFaceSet, equirect_to_cube, stylize_sphere

    cfg = load_config(args.config)
    if bool(args.cube_dir) == bool(args.equirect):
        if not (cfg.inputs.get("cube_dir") or cfg.inputs.get("equirect")):
            raise UsageError("give exactly one of --cube-dir or --equirect")
    cube_dir = args.cube_dir or (None if args.equirect else cfg.inputs.get("cube_dir"))
    equirect = args.equirect or (None if args.cube_dir else cfg.inputs.get("equirect"))
    if args.overlap is not None:
        cfg.sphere["overlap"] = args.overlap
    if args.fill:
        cfg.sphere["fill"] = "seeded_noise" if args.fill == "noise" else "zeros"
    if args.seed is not None:
        cfg.sphere["seed"] = args.seed
    if args.max_iterations is not None:
        cfg.solver.max_iterations = args.max_iterations
    if args.face_size is not None:
        cfg.sphere["face_size"] = args.face_size
    order = tuple(cfg.sphere.get("order") or DEFAULT_ORDER)
    style_path = args.style or cfg.inputs.get("style")
    if not style_path:
        raise UsageError("--style is required")
    overlap = int(cfg.sphere["overlap"])
    if equirect:
        eq = read_image(equirect)
        size = int(cfg.sphere.get("face_size") or eq.shape[0] // 2)
        cube = equirect_to_cube(eq, size, overlap)
        cfg.inputs.update(equirect=_abs(equirect))
    else:
        faces, ov = _read_cube(cube_dir, None)
        if args.overlap is None and ov is not None:
            # a cube.json sidecar beats the config default but not the flag
            overlap = cfg.sphere["overlap"] = ov
        cube = CubeFaceSet(faces, overlap)
        cfg.inputs.update(cube_dir=_abs(cube_dir))
    cfg.inputs.update(style=_abs(style_path))
    cfg.sphere["order"] = list(order)
    out = ensure_writable_dir(args.out)
    _snapshot(cfg, out)
    res = stylize_sphere(cube, read_image(style_path), cfg.weights, cfg.solver, order,
                         cfg.sphere["fill"], FeatureExtractor(cfg.extractor),
                         int(cfg.sphere.get("seed", 0)))
    for lab, face in res.cube.faces.items():
        write_image(face, out / f"face_{lab}.png")
    (out / "sphere.json").write_text(json.dumps(
        {"overlap": overlap, "order": list(order), "face_size": cube.size,
         "extended_size": cube.extended_size, "fill": cfg.sphere["fill"]}, indent=2))
    if args.debug_dir:
        d = ensure_writable_dir(args.debug_dir)
        for lab, ext in res.extended.items():
            write_image(ext, d / f"extended_{lab}.png")
            write_image(np.repeat(res.priors[lab].mask.weights[..., None], 3, axis=2),
                        d / f"prior_mask_{lab}.png")
    rep = report(out)
    log.info("seam metrics: %s", rep["mean"])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import report

    run_dir = Path(args.run_dir)
    gt_dir = args.gt_dir
    if gt_dir is None and (run_dir / "config.json").exists():
        man = json.loads((run_dir / "config.json").read_text()).get("inputs", {}).get("manifest")
        if man:
            gt_dir = str(Path(man).parent)
    out = ensure_writable_dir(args.out or run_dir)
    rep = report(run_dir, gt_dir, out)
    print(json.dumps({k: v for k, v in rep.items() if k in ("kind", "mean", "mean_temporal_error",
                                                            "problems")}, default=str))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthdata import generate_sequence, make_texture

    try:
        h, w = (int(v) for v in args.size.split(","))
    except ValueError:
        raise UsageError(f"--size expects H,W, got {args.size!r}") from None
    if args.source:
        source = read_image(args.source)
    else:
        need = max(h, w) + (args.frames - 1) * (args.max_shift + args.max_zoom) + 2
        source = make_texture(need, need, seed=args.seed)
    offsets = tuple(_parse_offsets(args.offsets))
    seq = generate_sequence(source, args.frames, args.max_shift, args.max_zoom, args.seed,
                            (h, w), offsets)
    style = None
    if args.style_seed is not None:
        style = make_texture(h, w, seed=args.style_seed, min_wavelength=6, max_wavelength=16)
    out = ensure_writable_dir(args.out)
    seq.save(out, style)
    (out / "synth.json").write_text(json.dumps({"shifts": seq.meta["shifts"],
                                                "zooms": seq.meta["zooms"],
                                                "seed": args.seed}, indent=2))
    log.info("wrote %d-frame sequence to %s", args.frames, out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vidstyle", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)
    default_workers = os.cpu_count() or 1

    v = sub.add_parser("stylize-video", help="stylise a frame sequence")
    v.add_argument("--manifest")
    v.add_argument("--style")
    v.add_argument("--config")
    v.add_argument("--init", choices=["random", "prev", "prev-warped"])
    v.add_argument("--longterm", help='offsets J, e.g. "1,2,4"')
    v.add_argument("--multipass", action="store_true")
    v.add_argument("--passes", type=int)
    v.add_argument("--max-iterations", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--debug-dir")
    v.add_argument("--workers", type=int, default=default_workers)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_stylize_video)

    s = sub.add_parser("stylize-sphere", help="stylise a cubemap or equirectangular panorama")
    s.add_argument("--cube-dir")
    s.add_argument("--equirect")
    s.add_argument("--face-size", type=int)
    s.add_argument("--style")
    s.add_argument("--config")
    s.add_argument("--overlap", type=int)
    s.add_argument("--fill", choices=["zeros", "noise"])
    s.add_argument("--max-iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--debug-dir")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stylize_sphere)

    e = sub.add_parser("evaluate", help="temporal error / seam report for a run directory")
    e.add_argument("--run-dir", required=True)
    e.add_argument("--gt-dir")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("synth", help="generate a synthetic sequence with ground truth")
    g.add_argument("--source")
    g.add_argument("--frames", type=int, default=5)
    g.add_argument("--max-shift", type=int, default=32)
    g.add_argument("--max-zoom", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", default="96,96")
    g.add_argument("--offsets", default="1")
    g.add_argument("--style-seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _emit_error("usage", exc)
        return EXIT_USAGE
    except NumericalFailure as exc:
        _emit_error("numeric", exc)
        return EXIT_NUMERIC
    except (OSError, ImageFormatError, KeyError, ValueError) as exc:
        _emit_error("data", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
