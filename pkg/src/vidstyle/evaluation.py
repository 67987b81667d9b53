"""Temporal-consistency and seam metrics, and run reports."""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from .flow import shortterm_weights, warp_image
from .imgcore import FlowField, Sequence, SequenceManifest, as_image, read_flo, read_image, read_mask

log = logging.getLogger(__name__)


def temporal_error(stylized_t, stylized_tm1, gt_flow: FlowField, valid_mask) -> float:
    """Mean squared difference between frame t warped back and frame t-1.

    ``gt_flow`` maps the t-1 grid into frame t (forward flow of the pair)
    and ``valid_mask`` is True where the pixel is not disoccluded.  The mean
    runs over valid pixel-channels; samples leaving frame t are dropped.
    Returns NaN when no pixel is valid.
    """
    x_t = as_image(stylized_t)
    x_p = as_image(stylized_tm1)
    if x_t.shape != x_p.shape:
        raise ValueError(f"dimension mismatch: {x_t.shape} vs {x_p.shape}")
    warped, inside = warp_image(x_t, gt_flow)
    valid = np.asarray(valid_mask, dtype=bool) & (inside.weights > 0)
    if not valid.any():
        return math.nan
    d = (warped - x_p)[valid]
    return float(np.mean(d * d))


def sequence_temporal_errors(seq: Sequence, outputs) -> list[float]:
    """``temporal_error`` for every adjacent pair.

    Uses ground truth when present; otherwise the sequence's own flows with
    the consistency-check weights as the validity mask.
    """
    errs = []
    for a in range(len(outputs) - 1):
        if (a, a + 1) in seq.gt_flows:
            flow = seq.gt_flows[(a, a + 1)]
            occ = seq.gt_occlusions.get((a, a + 1))
            valid = np.ones(flow.shape, dtype=bool) if occ is None else ~occ
        else:
            flow = seq.flow(a, a + 1)
            valid = shortterm_weights(seq.flow(a + 1, a), flow).weights > 0
        errs.append(temporal_error(outputs[a + 1], outputs[a], flow, valid))
    return errs


def color_gradients(img):
    """Channel-max absolute forward differences ``(G_x, G_y)``.

    ``G_x`` has shape ``(H, W-1)`` and ``G_y`` ``(H-1, W)``.
    """
    img = as_image(img)
    gx = np.abs(np.diff(img, axis=1)).max(axis=2)
    gy = np.abs(np.diff(img, axis=0)).max(axis=2)
    return gx, gy


def _ratio(g, s):
    ns = s.sum()
    if ns == 0:
        return 0.0, 0.0
    mean_all = g.sum() / g.size
    if mean_all == 0:
        return float(ns), 0.0
    return float(ns), float((np.sum(g * s) / ns) / mean_all)


def e_gradient(img, region_mask_x, region_mask_y) -> float:
    """Seam metric: region gradient magnitude relative to the image average.

    Masks are ``(H, W)`` booleans; a pixel's x-difference is the step to its
    right neighbour, so the last column (x) and last row (y) never count.
    ``E = (|s_x| r_x + |s_y| r_y) / (|s_x| + |s_y|)``.
    """
    gx, gy = color_gradients(img)
    sx = np.asarray(region_mask_x, dtype=bool)[:, :-1].astype(np.float64)
    sy = np.asarray(region_mask_y, dtype=bool)[:-1, :].astype(np.float64)
    nx, rx = _ratio(gx, sx)
    ny, ry = _ratio(gy, sy)
    if nx + ny == 0:
        raise ValueError("both region masks are empty")
    return (nx * rx + ny * ry) / (nx + ny)


def inner_offset(face_size: int, overlap: int) -> int:
    """Distance from a face edge to the inner border of a neighbour's prior."""
    return int(round(overlap * face_size / (face_size + 2 * overlap)))


def seam_masks(face_size: int, overlap: int, margin: int | None = None, edges=None):
    """Cut-edge (2 px) and prior inner-edge (4 px) masks on an evaluation canvas.

    The canvas is a face extended by ``margin`` px (default ``max(overlap,
    2)``), as produced by ``spherical.extend_face`` on the stylised cube.
    Each mask is a dict with ``"x"`` (vertical edges, for x-gradients) and
    ``"y"`` (horizontal edges); strips run along the face's core length.
    ``edges`` restricts the inner-edge mask to some of ``top/right/bottom/left``.
    """
    if face_size <= 2 * overlap:
        raise ValueError("face_size must exceed twice the overlap")
    m = max(overlap, 2) if margin is None else margin
    if m < 2:
        raise ValueError("evaluation margin must be at least 2 px")
    n = face_size + 2 * m
    core = slice(m, m + face_size)
    off = inner_offset(face_size, overlap)
    edges = ("top", "right", "bottom", "left") if edges is None else tuple(edges)

    def make(lo_cols, hi_cols, which):
        mx = np.zeros((n, n), dtype=bool)
        my = np.zeros((n, n), dtype=bool)
        if "left" in which:
            mx[core, lo_cols] = True
        if "right" in which:
            mx[core, hi_cols] = True
        if "top" in which:
            my[lo_cols, core] = True
        if "bottom" in which:
            my[hi_cols, core] = True
        return {"x": mx, "y": my}

    # the seam between index k-1 and k is read by the forward difference at k-1
    cut = make(slice(m - 1, m + 1), slice(m + face_size - 1, m + face_size + 1),
               ("top", "right", "bottom", "left"))
    lo, hi = m + off, m + face_size - off
    inner = make(slice(lo - 2, lo + 2), slice(hi - 2, hi + 2), edges)
    return cut, inner


def sphere_seam_metrics(cube, overlap: int, order=None, margin: int | None = None) -> dict:
    """Per-face ``E_grad``, ``E_grad_cut`` and ``E_grad_inner`` plus face means.

    Inner edges are those where the face received a prior from a face
    stylised earlier in ``order``.
    """
    from .spherical import ADJACENCY, DEFAULT_ORDER, FACE_LABELS, extend_face

    order = tuple(order or DEFAULT_ORDER)
    m = max(overlap, 2) if margin is None else margin
    rows = {}
    for pos, lab in enumerate(order):
        canvas = extend_face(cube, lab, m)
        prior_edges = [nb.edge for nb in ADJACENCY[lab] if nb.label in order[:pos]]
        cut, inner = seam_masks(cube.size, overlap, m, prior_edges or ())
        row = {"E_grad_cut": e_gradient(canvas, cut["x"], cut["y"])}
        if prior_edges:
            row["E_grad_inner"] = e_gradient(canvas, inner["x"], inner["y"])
            row["E_grad"] = e_gradient(canvas, cut["x"] | inner["x"], cut["y"] | inner["y"])
        else:
            row["E_grad_inner"] = math.nan
            row["E_grad"] = row["E_grad_cut"]
        rows[lab] = row
    mean = {k: float(np.nanmean([rows[lab][k] for lab in FACE_LABELS]))
            for k in ("E_grad", "E_grad_cut", "E_grad_inner")}
    return {"faces": rows, "mean": mean}


def _load_video_run(run_dir: Path, gt_dir: Path | None, problems: list):
    man_path = (gt_dir or run_dir) / "manifest.json"
    if not man_path.exists():
        problems.append(f"missing manifest {man_path}")
        return None, None
    manifest = SequenceManifest.load(man_path)
    outs = []
    for i in range(len(manifest.frames)):
        p = run_dir / f"frame_{i:04d}.png"
        if not p.exists():
            problems.append(f"missing stylised frame {p}")
            return manifest, outs
        outs.append(read_image(p))
    return manifest, outs


def _video_rows(manifest, outs, problems):
    rows = []
    gt = {(e["from"], e["to"]): e["path"] for e in manifest.gt_flows}
    occ = {(e["from"], e["to"]): e["path"] for e in manifest.gt_occlusions}
    flows = {(e["from"], e["to"]): e["path"] for e in manifest.flows}
    for a in range(len(outs) - 1):
        pair = (a, a + 1)
        try:
            if pair in gt:
                flow = read_flo(manifest.resolve(gt[pair]), "forward")
                valid = (~read_mask(manifest.resolve(occ[pair])) if pair in occ
                         else np.ones(flow.shape, dtype=bool))
                source = "gt"
            else:
                problems.append(f"missing ground-truth flow for pair {pair}; using estimated flow")
                flow = read_flo(manifest.resolve(flows[pair]), "forward")
                bwd = read_flo(manifest.resolve(flows[(a + 1, a)]), "backward")
                valid = shortterm_weights(bwd, flow).weights > 0
                source = "flow"
        except (KeyError, OSError) as exc:
            problems.append(f"no flow for pair {pair}: {exc}")
            continue
        err = temporal_error(outs[a + 1], outs[a], flow, valid)
        if math.isnan(err):
            problems.append(f"pair {pair}: empty valid region, temporal error undefined")
        rows.append({"from": a, "to": a + 1, "temporal_error": err, "source": source})
    return rows


def _load_sphere_run(run_dir: Path, problems):
    from .spherical import FACE_LABELS, CubeFaceSet

    faces = {}
    for lab in FACE_LABELS:
        p = run_dir / f"face_{lab}.png"
        if not p.exists():
            problems.append(f"missing face {p}")
            return None
        faces[lab] = read_image(p)
    meta_path = run_dir / "sphere.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    overlap = int(meta.get("overlap", 0))
    return CubeFaceSet(faces, overlap), meta


def report(run_dir, gt_dir=None, out_dir=None) -> dict:
    """Compute metrics for a video or sphere run directory and write JSON + CSV.

    Video runs hold ``frame_XXXX.png`` and resolve pairs through a
    ``manifest.json`` (from ``gt_dir`` if given).  Sphere runs hold
    ``face_<label>.png`` and ``sphere.json``.  Missing inputs are listed under
    ``"problems"`` and as much of the report as possible is emitted.
    Raises ``FileNotFoundError`` when nothing can be evaluated.
    """
    run_dir = Path(run_dir)
    gt_dir = Path(gt_dir) if gt_dir else None
    out_dir = Path(out_dir) if out_dir else run_dir
    problems: list[str] = []
    if not run_dir.is_dir() or not any(run_dir.iterdir()):
        raise FileNotFoundError(f"run directory {run_dir} is missing or empty")
    result: dict = {"run_dir": str(run_dir), "problems": problems}
    if any(run_dir.glob("face_*.png")):
        loaded = _load_sphere_run(run_dir, problems)
        if loaded is None:
            raise FileNotFoundError("; ".join(problems))
        cube, meta = loaded
        metrics = sphere_seam_metrics(cube, cube.overlap, meta.get("order"))
        result.update(kind="sphere", **metrics)
        with open(out_dir / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["face", "E_grad", "E_grad_cut", "E_grad_inner"])
            for lab, row in metrics["faces"].items():
                w.writerow([lab, row["E_grad"], row["E_grad_cut"], row["E_grad_inner"]])
            m = metrics["mean"]
            w.writerow(["mean", m["E_grad"], m["E_grad_cut"], m["E_grad_inner"]])
    else:
        manifest, outs = _load_video_run(run_dir, gt_dir, problems)
        if manifest is None or len(outs) < 2:
            raise FileNotFoundError("; ".join(problems) or "fewer than two stylised frames")
        rows = _video_rows(manifest, outs, problems)
        errs = [r["temporal_error"] for r in rows if not math.isnan(r["temporal_error"])]
        result.update(kind="video", pairs=rows,
                      mean_temporal_error=float(np.mean(errs)) if errs else math.nan)
        with open(out_dir / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["from", "to", "temporal_error", "source"])
            for r in rows:
                w.writerow([r["from"], r["to"], r["temporal_error"], r["source"]])
            w.writerow(["mean", "", result["mean_temporal_error"], ""])
    for msg in problems:
        log.warning(msg)
    (out_dir / "report.json").write_text(json.dumps(_json_safe(result), indent=2))
    return result


def _json_safe(o):
    # undefined metrics (NaN) become null so the file stays valid JSON
    if isinstance(o, dict):
        return {k: _json_safe(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_json_safe(v) for v in o]
    if isinstance(o, (np.floating, np.integer)):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o
