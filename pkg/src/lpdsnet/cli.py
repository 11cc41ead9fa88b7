"""Command-line entry point.

Verbs: generate-data, train, reconstruct, evaluate, selfcheck. Exit codes:
0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import io as fio
from .config import ConfigError, RunConfig, dump_config, load_config
from .evaluation import evaluate, format_table, to_csv
from .mri import adjoint, estimate_noise
from .nets import NET_KINDS
from .simdata import make_dataset
from .training import TrainingError, new_params, reconstruct, train

log = logging.getLogger("lpdsnet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else load_config()
    return cfg


# dataset files


def cmd_generate_data(cfg: RunConfig, output: Path | None = None, seed: int | None = None) -> Path:
    """Write train/test sample files and ``manifest.json`` under the data directory."""
    d = cfg.dataset
    seed = d.seed if seed is None else seed
    root = Path(output or cfg.paths.data_dir)
    rng = np.random.default_rng(seed)
    splits = {
        "train": make_dataset(d.n_train, d.size, d.coils, d.acceleration, d.center_fraction,
                              (d.sigma_min, d.sigma_max), rng),
        "test": make_dataset(d.n_test, d.size, d.coils, d.acceleration, d.center_fraction,
                             (d.sigma_min, d.sigma_max), rng),
    }
    manifest = {"seed": seed, "dataset": {k: getattr(d, k) for k in vars(d)}}
    for name, samples in splits.items():
        (root / name).mkdir(parents=True, exist_ok=True)
        entries = []
        for i, s in enumerate(samples):
            rel = f"{name}/sample_{i:04d}.cfld"
            fio.save_sample(root / rel, s)
            entries.append({
                "file": rel,
                "sigma": s.sigma,
                "has_ground_truth": s.ground_truth is not None,
                "center_rows": list(s.observation.mask.center_rows),
            })
        manifest[name] = entries
    manifest["dataset"]["seed"] = seed
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root / "manifest.json"


def load_split(manifest_path, split: str):
    manifest_path = Path(manifest_path)
    man = fio.read_manifest(manifest_path)
    if split not in man:
        raise UsageError(f"manifest has no {split!r} split")
    root = manifest_path.parent
    return [
        fio.load_sample(root / e["file"], e["sigma"], e["has_ground_truth"], e.get("center_rows"))
        for e in man[split]
    ]


# training


def cmd_train(cfg: RunConfig, output: Path | None = None, resume: Path | None = None,
              seed: int | None = None, data: Path | None = None) -> Path:
    """Train and write ``final`` plus periodic checkpoints and ``train.log`` under the run directory."""
    run = Path(output or cfg.paths.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.training.train_config()
    if seed is not None:
        tcfg.seed = seed
    manifest = Path(data) if data else Path(cfg.paths.data_dir) / "manifest.json"
    dataset = load_split(manifest, "train")
    try:
        val = load_split(manifest, "test")[: cfg.training.n_val]
    except UsageError:
        val = []
    dtype = torch.complex128 if cfg.training.precision == "double" else torch.complex64
    if dtype != torch.complex128:
        dataset = [_cast_sample(s, dtype) for s in dataset]
        val = [_cast_sample(s, dtype) for s in val]
    a = cfg.arch
    shape = dataset[0].encoder.image_shape
    if resume:
        params, meta, adam = fio.load_checkpoint(resume)
        if meta["net_kind"] != a.net_kind:
            raise UsageError("checkpoint network kind differs from the config")
        start = int(meta["step"])
    else:
        params = new_params(a.net_kind, a.K, a.M, a.p, a.s, shape, tcfg.seed, dtype)
        adam, start = None, 0
    (run / "config.ini").write_text(dump_config(cfg))
    logf = (run / "train.log").open("a")

    def on_log(rec):
        step, lr, loss, val_psnr = rec
        extra = "" if val_psnr is None else f", {val_psnr!r}"
        logf.write(f"{step}, {lr!r}, {loss!r}{extra}\n")
        logf.flush()

    def on_ckpt(res):
        fio.save_checkpoint(run / f"ckpt_{res.step:07d}", res.params, res.step, tcfg.seed, res.adam)

    try:
        res = train(dataset, params, tcfg, adam, start, val, on_log, on_ckpt)
    except TrainingError as exc:
        fio.save_checkpoint(run / f"failed_{exc.step:07d}", params, exc.step, tcfg.seed)
        raise
    finally:
        logf.close()
    return fio.save_checkpoint(run / "final", res.params, res.step, tcfg.seed, res.adam)


def _cast_sample(s, dtype):
    from dataclasses import replace

    from .mri import CoilSensitivities, EncodingOperator, KSpaceObservation

    E = EncodingOperator(s.encoder.mask, CoilSensitivities(s.encoder.sens.maps.to(dtype)))
    obs = KSpaceObservation(s.observation.data.to(dtype), s.observation.mask, s.sigma)
    gt = None if s.ground_truth is None else s.ground_truth.to(dtype)
    noise = None if s.noise is None else s.noise.to(dtype)
    return replace(s, observation=obs, encoder=E, ground_truth=gt, noise=noise)


# inference


def cmd_reconstruct(checkpoint: Path, sample_path: Path, output: Path, sigma: float | None = None) -> dict:
    params, meta, _ = fio.load_checkpoint(checkpoint)
    sample = fio.load_sample(sample_path, has_ground_truth=False)
    if params.A.dtype != torch.complex128:
        params = params.to(torch.complex128)
    sigma_hat = estimate_noise(sample.observation) if sigma is None else float(sigma)
    if sigma_hat < 0:
        raise UsageError("sigma must be nonnegative")
    x = reconstruct(params, sample, sigma_hat)
    zf = adjoint(sample.observation, sample.encoder)
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    fio.write_cfld(out / "recon.cfld", x)
    fio.write_cfld(out / "zerofilled.cfld", zf)
    fio.write_pgm(out / "recon.pgm", x)
    fio.write_pgm(out / "zerofilled.pgm", zf)
    thr = params.thresholds(sigma_hat)
    info = {
        "sigma_hat": sigma_hat,
        "sigma_source": "override" if sigma is not None else "estimated",
        "threshold_mean_per_layer": [float(t) for t in thr.mean(dim=1)],
        "shape": list(x.shape),
    }
    (out / "recon.json").write_text(json.dumps(info, indent=2) + "\n")
    log.info("sigma_hat=%.6g (%s); mean thresholds per layer %s", sigma_hat, info["sigma_source"],
             info["threshold_mean_per_layer"])
    return info


def parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise UsageError(f"bad sigma grid {text!r}") from None
    if not grid:
        raise UsageError("sigma grid is empty")
    if any(g < 0 for g in grid):
        raise UsageError("sigma values must be nonnegative")
    return grid


def cmd_evaluate(checkpoint: Path, manifest: Path, grid: list[float], output: Path | None = None,
                 split: str = "test"):
    params, _, _ = fio.load_checkpoint(checkpoint)
    if params.A.dtype != torch.complex128:
        params = params.to(torch.complex128)
    rows = evaluate(params, load_split(manifest, split), grid)
    table = format_table(rows)
    if output:
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(to_csv(rows))
        (out / "metrics.txt").write_text(table + "\n")
    return rows, table


def cmd_selfcheck(inject_fault: bool = False) -> bool:
    from .prox import inject_clip_backward_fault
    from .selfcheck import run_selfcheck

    if inject_fault:
        with inject_clip_backward_fault():
            results = run_selfcheck()
    else:
        results = run_selfcheck()
    ok = all(r.passed for r in results)
    print(f"selfcheck: {sum(r.passed for r in results)}/{len(results)} passed")
    return ok


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lpdsnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-data", help="write a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--output", help="data directory (overrides paths.data_dir)")

    t = sub.add_parser("train", help="train a network")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--output", help="run directory (overrides paths.run_dir)")
    t.add_argument("--data", help="dataset manifest (default: <paths.data_dir>/manifest.json)")
    t.add_argument("--checkpoint", help="resume from this checkpoint directory")
    t.add_argument("--net-kind", choices=NET_KINDS, help="override arch.net_kind")

    r = sub.add_parser("reconstruct", help="reconstruct one sample file")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True, help="sample file (.cfld)")
    r.add_argument("--output", required=True)
    r.add_argument("--sigma", type=float, help="noise level override")

    e = sub.add_parser("evaluate", help="PSNR/SSIM over a noise-level grid")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="dataset manifest")
    e.add_argument("--sigma-grid", required=True, help="comma separated noise levels")
    e.add_argument("--split", default="test")
    e.add_argument("--output")

    s = sub.add_parser("selfcheck", help="run fast invariant checks")
    s.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "generate-data":
            path = cmd_generate_data(_config(args), args.output, args.seed)
            print(f"wrote {path}")
        elif args.cmd == "train":
            cfg = _config(args)
            if args.net_kind:
                cfg.arch.net_kind = args.net_kind
            path = cmd_train(cfg, args.output, args.checkpoint, args.seed, args.data)
            print(f"wrote {path}")
        elif args.cmd == "reconstruct":
            info = cmd_reconstruct(Path(args.checkpoint), Path(args.input), Path(args.output), args.sigma)
            print(f"sigma_hat = {info['sigma_hat']:.6g} ({info['sigma_source']})")
        elif args.cmd == "evaluate":
            _, table = cmd_evaluate(Path(args.checkpoint), Path(args.data), parse_grid(args.sigma_grid),
                                    args.output, args.split)
            print(table)
        elif args.cmd == "selfcheck":
            return EXIT_OK if cmd_selfcheck(args.inject_fault) else EXIT_RUNTIME
    except (ConfigError, UsageError, fio.FormatError, FileNotFoundError) as exc:
        print(f"lpdsnet: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as exc:
        print(f"lpdsnet: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
