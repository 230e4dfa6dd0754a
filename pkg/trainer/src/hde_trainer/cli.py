"""nasm-train / nasm-infer command-line entry points."""

from __future__ import annotations

import argparse
import logging
import sys

import torch

from .dataset import build_dataset
from .gnn import prepare_graph
from .meshdata import load_obj, normalize_unit_box, save_hde, vertex_normals
from .train import TrainConfig, load_checkpoint, save_checkpoint, save_curves, train

log = logging.getLogger("hde_trainer.cli")

torch.set_default_dtype(torch.float64)


def main_train(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s %(message)s")
    p = argparse.ArgumentParser(prog="nasm-train")
    p.add_argument("--meshes", required=True, help="directory of OBJ meshes")
    p.add_argument("--workdir", required=True, help="scratch dir for ground truth")
    p.add_argument("--output", required=True, help="checkpoint path (.pt)")
    p.add_argument("--curves", help="loss-curve JSON path")
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--w-lap", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--oracle-every", type=int, default=10)
    p.add_argument("--metric", help="metric JSON file forwarded to the embedder")
    p.add_argument("--metric-floor", type=float)
    p.add_argument("--metric-ceil", type=float)
    p.add_argument("--smooth-iters", type=int)
    args = p.parse_args(argv)
    metric_args = []
    if args.metric:
        metric_args += ["--metric", args.metric]
    if args.metric_floor is not None:
        metric_args += ["--metric-floor", str(args.metric_floor)]
    if args.metric_ceil is not None:
        metric_args += ["--metric-ceil", str(args.metric_ceil)]
    if args.smooth_iters is not None:
        metric_args += ["--smooth-iters", str(args.smooth_iters)]
    try:
        samples = build_dataset(args.meshes, args.workdir, augment=args.augment,
                                metric_args=tuple(metric_args))
        cfg = TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
            w_lap=args.w_lap, seed=args.seed, oracle_every=args.oracle_every,
        )
        model, curves, _ = train(samples, cfg)
    except (FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    except (FloatingPointError, RuntimeError) as exc:
        log.error("training aborted: %s", exc)
        return 3
    save_checkpoint(model, cfg, args.output)
    if args.curves:
        save_curves(curves, args.curves)
    log.info("checkpoint written to %s", args.output)
    return 0


def infer_mesh(model, mesh):
    feats, edges, adj = prepare_graph(mesh.vertices, mesh.faces, vertex_normals(mesh))
    with torch.no_grad():
        extra = model(feats, edges, adj)
    coords3 = torch.as_tensor(mesh.vertices)
    return torch.cat([coords3, extra], dim=1).numpy()


def main_infer(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s %(message)s")
    p = argparse.ArgumentParser(prog="nasm-infer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="OBJ mesh")
    p.add_argument("--output", required=True, help=".hde path")
    p.add_argument("--no-normalize", action="store_true",
                   help="assume the input is already in [-1, 1]")
    args = p.parse_args(argv)
    try:
        model = load_checkpoint(args.checkpoint)
        mesh = load_obj(args.input)
        if not args.no_normalize:
            mesh = normalize_unit_box(mesh)
        coords = infer_mesh(model, mesh)
    except (FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    except RuntimeError as exc:
        log.error("inference failed: %s", exc)
        return 3
    save_hde(coords, mesh.faces, args.output, tag="neural")
    log.info("embedding written to %s", args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main_train())
