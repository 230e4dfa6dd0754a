"""Command-line pipeline: metric, embed, remesh, eval, pipeline, loss-check.

Configuration comes from TOML (``--config``) with flag overrides; precedence
is flags > file > defaults.  Exit codes: 0 success, 2 input error,
3 numerical failure (flagged optimizer/repair).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

import numpy as np

from . import embed, extract, losses, mesh as mesh_io, metric as metric_mod, quality, rvd as rvd_mod

log = logging.getLogger("anisoforge.cli")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

DEFAULTS = {
    "s": 7.0,
    "sites": None,
    "site_fraction": None,
    "max_iters": 500,
    "grad_tol": 1e-3,
    "seed": 0,
    "nm_cvt_enabled": True,
    "normalize": True,
    "metric_floor": metric_mod.DEFAULT_FLOOR,
    "metric_ceil": metric_mod.DEFAULT_CEIL,
    "smooth_iters": 1,
    "rings": 2,
    "samples": quality.DEFAULT_SAMPLES,
    "f1_tau": quality.DEFAULT_F1_TAU,
    "dihedral_deg": quality.DEFAULT_DIHEDRAL_DEG,
    "w_lap": losses.DEFAULT_W_LAP,
}


@dataclass
class PipelineConfig:
    input: str = ""
    output_dir: str = "."
    embedding: str = ""  # optional .hde to consume instead of solving
    metric_file: str = ""
    s: float = 7.0
    sites: int = None
    site_fraction: float = None
    max_iters: int = 500
    grad_tol: float = 1e-3
    seed: int = 0
    nm_cvt_enabled: bool = True
    normalize: bool = True
    metric_floor: float = metric_mod.DEFAULT_FLOOR
    metric_ceil: float = metric_mod.DEFAULT_CEIL
    smooth_iters: int = 1
    rings: int = 2
    samples: int = quality.DEFAULT_SAMPLES
    f1_tau: float = quality.DEFAULT_F1_TAU
    dihedral_deg: float = quality.DEFAULT_DIHEDRAL_DEG
    w_lap: float = losses.DEFAULT_W_LAP
    dump_rvd: bool = False

    def site_count(self, n_vertices: int) -> int:
        if self.sites is not None:
            n = int(self.sites)
        elif self.site_fraction is not None:
            if not 0 < self.site_fraction <= 1:
                raise ValueError("site fraction must be in (0, 1]")
            n = int(round(self.site_fraction * n_vertices))
        else:
            n = n_vertices
        if n < 4:
            raise ValueError("need at least 4 sites")
        return n


def _load_config_file(path):
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    flat = {}
    for key, val in data.items():
        if key == "nm_cvt" and isinstance(val, dict):
            if "enabled" in val:
                flat["nm_cvt_enabled"] = bool(val["enabled"])
        elif key == "metric" and isinstance(val, dict):
            for k2, v2 in val.items():
                flat[{"floor": "metric_floor", "ceil": "metric_ceil"}.get(k2, k2)] = v2
        elif key == "eval" and isinstance(val, dict):
            flat.update(val)
        else:
            flat[key] = val
    return flat


def build_config(args) -> PipelineConfig:
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(_load_config_file(args.config))
    for key in list(merged.keys()) + [
        "input", "output_dir", "embedding", "metric_file", "dump_rvd",
    ]:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    known = set(PipelineConfig.__dataclass_fields__)
    merged = {k: v for k, v in merged.items() if k in known}
    return PipelineConfig(**merged)


# -- shared steps -----------------------------------------------------------------


def _load_normalized(cfg: PipelineConfig):
    m = mesh_io.load_mesh(cfg.input)
    if cfg.normalize:
        m, tf = mesh_io.normalize_unit_box(m)
    else:
        tf = None
    return m, tf


def _metric_for(cfg: PipelineConfig, m):
    if cfg.metric_file:
        field = metric_mod.load_metric(cfg.metric_file)
        if len(field) != m.n_vertices:
            raise ValueError("metric file does not match the mesh vertex count")
        return field
    frames = metric_mod.principal_curvatures(m, radius_rings=cfg.rings)
    field = metric_mod.build_metric(frames, floor=cfg.metric_floor, ceil=cfg.metric_ceil)
    return metric_mod.smooth_stretch(field, m, cfg.smooth_iters)


def _embedding_for(cfg: PipelineConfig, m, field):
    if cfg.embedding:
        emb = embed.load_hde(cfg.embedding)
        if emb.n_vertices != m.n_vertices or not np.array_equal(emb.faces, m.faces):
            raise ValueError("embedding file does not match the mesh connectivity")
        return emb
    return embed.solve_embedding(m, field)


# -- subcommands --------------------------------------------------------------------


def cmd_metric(cfg: PipelineConfig) -> int:
    m, _ = _load_normalized(cfg)
    field = _metric_for(cfg, m)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metric.json"
    metric_mod.save_metric(field, path)
    log.info("metric written to %s (mean stretch %.3f)", path, field.ratios.mean())
    return EXIT_OK


def cmd_embed(cfg: PipelineConfig) -> int:
    m, _ = _load_normalized(cfg)
    field = _metric_for(cfg, m)
    t0 = time.perf_counter()
    emb = embed.solve_embedding(m, field)
    dt = time.perf_counter() - t0
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / (Path(cfg.input).stem + ".hde")
    embed.save_hde(emb, path)
    _, _, summary = embed.embed_residual(emb, m, field)
    log.info(
        "embedding written to %s in %.2fs (median relative residual %.4f)",
        path, dt, summary["rel_median"],
    )
    return EXIT_OK


def _write_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "energy", "grad_norm", "step"])
        for row in trace:
            w.writerow([
                row["iter"], f"{row['energy']:.17g}",
                f"{row['grad_norm']:.17g}", f"{row['step']:.17g}",
            ])


def cmd_remesh(cfg: PipelineConfig) -> int:
    m, _ = _load_normalized(cfg)
    field = _metric_for(cfg, m)
    emb = _embedding_for(cfg, m, field)
    n_sites = cfg.site_count(m.n_vertices)
    s = cfg.s if cfg.nm_cvt_enabled else 1.0
    sites = rvd_mod.init_sites(emb, n_sites, seed=cfg.seed)
    t0 = time.perf_counter()
    result, trace, flags = extract.run_remesh(
        emb, sites, s=s, max_iters=cfg.max_iters, grad_tol=cfg.grad_tol
    )
    dt = time.perf_counter() - t0
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh_io.save_mesh(result.mesh, out / "remesh.obj")
    _write_trace(trace, out / "trace.csv")
    with open(out / "repair.json", "w") as fh:
        json.dump(result.repair.to_dict(), fh, indent=2)
    if cfg.dump_rvd:
        extract.save_rvd_obj(result.rvd, result.sites, out / "rvd.obj")
        extract.save_rvd_text(result.rvd, out / "rvd.rvd")
    log.info(
        "remesh: %d vertices, %d faces in %.1fs (%d iters, %d inversions left)",
        result.mesh.n_vertices, result.mesh.n_faces, dt, len(trace) - 1,
        result.inverted_remaining,
    )
    if flags.get("line_search_failed") or result.inverted_remaining > 0:
        return EXIT_NUMERIC
    return EXIT_OK


def _evaluate(result_mesh, reference_mesh, field, source_mesh, cfg, method,
              t_embed=None, t_mesh=None):
    t_cd, t_f1, t_nc, t_hd = quality.surface_distances(
        result_mesh, reference_mesh, n_samples=cfg.samples,
        f1_tau=cfg.f1_tau, seed=cfg.seed,
    )
    ecd, ef1, flag = quality.edge_metrics(
        result_mesh, reference_mesh, dihedral_deg=cfg.dihedral_deg,
        f1_tau=cfg.f1_tau,
    )
    g_avg, g_min, _, _ = quality.mesh_quality(result_mesh, field, source_mesh)
    return quality.QualityReport(
        method=method,
        v_in=reference_mesh.n_vertices,
        v_out=result_mesh.n_vertices,
        stretch=float(field.ratios.mean()),
        cd=t_cd, f1=t_f1, nc=t_nc, hd=t_hd, ecd=ecd, ef1=ef1,
        g_avg=g_avg, g_min=g_min, t_embed=t_embed, t_mesh=t_mesh,
        edge_flag=flag,
    )


def cmd_eval(cfg: PipelineConfig, result_path, reference_path) -> int:
    result = mesh_io.load_mesh(result_path)
    reference = mesh_io.load_mesh(reference_path)
    span = reference.vertices.max(axis=0) - reference.vertices.min(axis=0)
    if span.max() > 2.0 + 1e-6:
        log.warning("reference exceeds [-1, 1]; distances use raw model units")
    ref_for_metric = reference
    if cfg.metric_file:
        field = metric_mod.load_metric(cfg.metric_file)
        if len(field) != reference.n_vertices:
            raise ValueError("metric file does not match the reference mesh")
    else:
        field = _metric_for(cfg, reference)
    report = _evaluate(result, reference, field, ref_for_metric, cfg, method="eval")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    quality.emit_report(report, out / "report.json")
    quality.emit_csv([report], out / "report.csv")
    log.info("report written to %s", out / "report.json")
    return EXIT_OK


def _eval_batch_one(job):
    cfg, result_path, reference_path = job
    result = mesh_io.load_mesh(result_path)
    reference = mesh_io.load_mesh(reference_path)
    field = _metric_for(cfg, reference)
    return _evaluate(result, reference, field, reference, cfg,
                     method=Path(result_path).stem)


def cmd_eval_batch(cfg: PipelineConfig, batch_dir) -> int:
    batch = Path(batch_dir)
    pairs = []
    for res in sorted(batch.glob("*.result.obj")):
        ref = batch / res.name.replace(".result.obj", ".ref.obj")
        if ref.exists():
            pairs.append((cfg, str(res), str(ref)))
    if not pairs:
        raise FileNotFoundError(f"no *.result.obj / *.ref.obj pairs in {batch}")
    workers = int(os.environ.get("ANISO_THREADS", "0")) or None
    if workers == 1 or len(pairs) == 1:
        reports = [_eval_batch_one(j) for j in pairs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_eval_batch_one, pairs))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    quality.emit_csv(reports, out / "batch.csv")
    log.info("%d reports written to %s", len(reports), out / "batch.csv")
    return EXIT_OK


def cmd_pipeline(cfg: PipelineConfig) -> int:
    m, _ = _load_normalized(cfg)
    field = _metric_for(cfg, m)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    metric_mod.save_metric(field, out / "metric.json")
    t0 = time.perf_counter()
    emb = _embedding_for(cfg, m, field)
    t_embed = time.perf_counter() - t0
    if not cfg.embedding:
        embed.save_hde(emb, out / "model.hde")
    n_sites = cfg.site_count(m.n_vertices)
    s = cfg.s if cfg.nm_cvt_enabled else 1.0
    sites = rvd_mod.init_sites(emb, n_sites, seed=cfg.seed)
    t0 = time.perf_counter()
    result, trace, flags = extract.run_remesh(
        emb, sites, s=s, max_iters=cfg.max_iters, grad_tol=cfg.grad_tol
    )
    t_mesh = time.perf_counter() - t0
    mesh_io.save_mesh(result.mesh, out / "remesh.obj")
    _write_trace(trace, out / "trace.csv")
    with open(out / "repair.json", "w") as fh:
        json.dump(result.repair.to_dict(), fh, indent=2)
    if cfg.dump_rvd:
        extract.save_rvd_obj(result.rvd, result.sites, out / "rvd.obj")
        extract.save_rvd_text(result.rvd, out / "rvd.rvd")
    report = _evaluate(result.mesh, m, field, m, cfg, method="nm-cvt",
                       t_embed=t_embed, t_mesh=t_mesh)
    quality.emit_report(report, out / "report.json")
    quality.emit_csv([report], out / "report.csv")
    log.info("pipeline artifacts in %s", out)
    if flags.get("line_search_failed") or result.inverted_remaining > 0:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_loss_check(pred_path, truth_path, w_lap, variant=None) -> int:
    pred = embed.load_hde(pred_path)
    truth = embed.load_hde(truth_path)
    breakdown = losses.total_loss(pred, truth, w_lap=w_lap)
    payload = breakdown.to_dict()
    if variant == "l2":
        payload["l2"] = losses.l2_loss(pred, truth)
    elif variant == "cos":
        payload["cos"] = losses.cosine_loss(pred, truth)
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--input", help="input OBJ/OFF mesh")
    p.add_argument("--output-dir", dest="output_dir", help="artifact directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-normalize", dest="normalize", action="store_false", default=None)


def _add_metric_opts(p):
    p.add_argument("--metric", dest="metric_file", help="metric JSON file to use")
    p.add_argument("--metric-floor", dest="metric_floor", type=float)
    p.add_argument("--metric-ceil", dest="metric_ceil", type=float)
    p.add_argument("--smooth-iters", dest="smooth_iters", type=int)
    p.add_argument("--rings", type=int)


def _add_cvt_opts(p):
    p.add_argument("--sites", type=int)
    p.add_argument("--site-fraction", dest="site_fraction", type=float)
    p.add_argument("--s", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--grad-tol", dest="grad_tol", type=float)
    p.add_argument("--no-normal-metric", dest="nm_cvt_enabled", action="store_false", default=None)
    p.add_argument("--embedding", help=".hde embedding file to consume")
    p.add_argument("--dump-rvd", dest="dump_rvd", action="store_true", default=None)


def _add_eval_opts(p):
    p.add_argument("--samples", type=int)
    p.add_argument("--f1-tau", dest="f1_tau", type=float)
    p.add_argument("--dihedral", dest="dihedral_deg", type=float)


def make_parser():
    parser = argparse.ArgumentParser(prog="aniso-forge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metric", help="curvature metric file from a mesh")
    _add_common(p)
    _add_metric_opts(p)

    p = sub.add_parser("embed", help="deterministic high-d embedding (.hde)")
    _add_common(p)
    _add_metric_opts(p)

    p = sub.add_parser("remesh", help="normal-metric CVT remeshing")
    _add_common(p)
    _add_metric_opts(p)
    _add_cvt_opts(p)

    p = sub.add_parser("eval", help="quality report for a result mesh")
    _add_common(p)
    _add_metric_opts(p)
    _add_eval_opts(p)
    p.add_argument("--result", help="remeshed OBJ/OFF")
    p.add_argument("--reference", help="reference OBJ/OFF")
    p.add_argument("--batch", help="directory of *.result.obj / *.ref.obj pairs")

    p = sub.add_parser("pipeline", help="metric + embed + remesh + eval")
    _add_common(p)
    _add_metric_opts(p)
    _add_cvt_opts(p)
    _add_eval_opts(p)

    p = sub.add_parser("loss-check", help="embedding loss breakdown as JSON")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--w-lap", dest="w_lap", type=float, default=losses.DEFAULT_W_LAP)
    p.add_argument("--variant", choices=["l2", "cos"])
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO,
        format="%(levelname)s %(name)s %(message)s",
    )
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "loss-check":
            return cmd_loss_check(args.pred, args.truth, args.w_lap, args.variant)
        cfg = build_config(args)
        if args.command == "metric":
            _require_input(cfg)
            return cmd_metric(cfg)
        if args.command == "embed":
            _require_input(cfg)
            return cmd_embed(cfg)
        if args.command == "remesh":
            _require_input(cfg)
            return cmd_remesh(cfg)
        if args.command == "eval":
            if args.batch:
                return cmd_eval_batch(cfg, args.batch)
            if not args.result or not args.reference:
                raise FileNotFoundError("eval needs --result and --reference (or --batch)")
            return cmd_eval(cfg, args.result, args.reference)
        if args.command == "pipeline":
            _require_input(cfg)
            return cmd_pipeline(cfg)
        parser.error(f"unknown command {args.command}")
    except (FileNotFoundError, mesh_io.MeshFormatError, mesh_io.MeshError,
            ValueError, KeyError, tomllib.TOMLDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except FloatingPointError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


def _require_input(cfg):
    if not cfg.input:
        raise FileNotFoundError("missing --input mesh")
    if not Path(cfg.input).exists():
        raise FileNotFoundError(cfg.input)


if __name__ == "__main__":
    sys.exit(main())
