"""Command-line front end: ``synth``, ``km``, ``train`` and ``eval``.

Exit codes: 0 success, 2 configuration or argument error, 3 numeric
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, preset, save_config
from .dataset import (SPLITS, atomic_write, build_dataset, load_dataset, min_pairwise_distance,
                      physics_from_header, source_pixels)
from .estimators import OracleLocator, PlateauNetLocator, load_checkpoint
from .export import grid_rows, write_csv, write_pgm
from .imaging import km_image
from .loss import cached_field_operator
from .nn import DivergenceError
from .physics import PhysicsError
from .pipeline import (extract_sources, mean_filter, min_distance_sweep, noise_sweep,
                       recovery_rate, subset_rate)

logger = logging.getLogger("wgsr")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MODES = {"nll": "nll_only", "pi": "nll_plus_pi"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# helpers --------------------------------------------------------------------

def _config(args) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("<cli>: pass either --config or --preset, not both")
    cfg = load_config(args.config) if args.config else preset(args.preset or "paper")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = str(args.out)
    return cfg.replace(**changes) if changes else cfg


def _versions() -> dict:
    import scipy
    import sklearn

    return {"wgsr": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


class _Manifest:
    """Collects artifacts and timings; written atomically when the command ends."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.path = out / f"manifest-{command}.json"
        self.data = {"command": command, "config_hash": cfg.config_hash(), "artifacts": {},
                     "timings": {}, "versions": _versions(),
                     "started": datetime.now(timezone.utc).isoformat()}
        self._t0 = time.perf_counter()

    def artifact(self, name: str, path: Path):
        self.data["artifacts"][name] = str(path)

    def timing(self, name: str, seconds: float):
        self.data["timings"][name] = round(seconds, 3)

    def write(self):
        self.timing("total", time.perf_counter() - self._t0)
        self.data["finished"] = datetime.now(timezone.utc).isoformat()
        atomic_write(self.path, (json.dumps(self.data, indent=2, sort_keys=True) + "\n").encode())


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path):
    try:
        return load_dataset(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read dataset {path}: {exc}", EXIT_IO) from None


def _dataset_path(args, out: Path) -> Path:
    return Path(args.dataset) if args.dataset else out / "dataset.wgsr"


def _check_dataset_matches(cfg: RunConfig, header: dict):
    """The physics a dataset was built with must match the active config."""
    model, freqs, array, grid, plateau = physics_from_header(header)
    expected = {"waveguide": cfg.model(), "frequencies": cfg.frequency_grid(),
                "grid": cfg.search_grid(), "plateau": cfg.plateau()}
    got = {"waveguide": model, "frequencies": freqs, "grid": grid, "plateau": plateau}
    for key in expected:
        if expected[key] != got[key]:
            raise ConfigError(f"{key}: dataset was built with {got[key]}, config has {expected[key]}")
    if tuple(array.receiver_y) != cfg.array_geometry().receiver_y:
        raise ConfigError("array: dataset receiver layout differs from the config")


def _operators(cfg: RunConfig, out: Path):
    cache = out / "cache"
    return [cached_field_operator(cache, cfg.model(), cfg.search_grid(), f, cfg.loss.eval_stride)
            for f in cfg.pi_frequencies()]


# commands -------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    if args.counts:
        parts = [p.strip() for p in args.counts.split(",")]
        if len(parts) != 3 or not all(p.isdigit() for p in parts):
            raise ConfigError(f"--counts: expected train,val,test integers, got {args.counts!r}")
        train, val, test = map(int, parts)
        cfg = cfg.replace(dataset__train=train, dataset__val=val, dataset__test=test)
    out = _out_dir(cfg)
    path = _dataset_path(args, out)
    man = _Manifest("synth", cfg, out)
    t = time.perf_counter()
    ds = build_dataset(cfg.seed, cfg.counts(), cfg.model(), cfg.frequency_grid(), cfg.array_geometry(),
                       cfg.search_grid(), cfg.plateau(), cfg.dataset.n_min, cfg.dataset.n_max,
                       cfg.dataset.off_grid, path=path, overwrite=args.overwrite)
    man.timing("synth", time.perf_counter() - t)
    save_config(cfg, out / "config.json")
    man.artifact("dataset", path)
    man.artifact("config", out / "config.json")
    man.write()
    print(f"wrote {len(ds)} samples to {path}")
    return EXIT_OK


def cmd_km(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    ds = _load(_dataset_path(args, out))
    if not 0 <= args.sample < len(ds):
        raise ConfigError(f"--sample: id {args.sample} outside 0..{len(ds) - 1}")
    model, freqs, array, grid, _ = physics_from_header(ds.header)
    man = _Manifest("km", cfg, out)
    response = ds.responses[args.sample]
    if args.zero:
        response = np.zeros_like(response)
    img = np.abs(km_image(response, model, freqs, array, grid))
    stem = out / f"km_{args.sample}"
    write_csv(stem.with_suffix(".csv"), ["ix", "iy", "x", "y", "value"], grid_rows(img, grid))
    write_pgm(stem.with_suffix(".pgm"), img.T)
    cfg_src = ds.sources[args.sample]
    pixels = source_pixels(cfg_src, grid, snap=True)
    write_csv(out / f"km_{args.sample}_sources.csv", ["x", "y", "ix", "iy"],
              [(x, y, ix, iy) for (x, y), (ix, iy) in zip(cfg_src, pixels)])
    for name in ("csv", "pgm"):
        man.artifact(f"km_{name}", stem.with_suffix(f".{name}"))
    man.artifact("sources", out / f"km_{args.sample}_sources.csv")
    man.write()
    print(f"KM image of sample {args.sample} written to {stem}.csv/.pgm")
    return EXIT_OK


def _merge_loss_curves(path: Path, mode: str, train, val):
    rows = []
    if path.exists():
        with open(path) as fh:
            rows = [r for r in csv.DictReader(fh) if r["mode"] != mode]
    rows += [{"epoch": e + 1, "train_loss": float(a), "val_loss": float(b), "mode": mode}
             for e, (a, b) in enumerate(zip(train, val))]
    rows.sort(key=lambda r: (r["mode"], int(r["epoch"])))
    write_csv(path, ["epoch", "train_loss", "val_loss", "mode"], rows)


def cmd_train(cfg: RunConfig, args) -> int:
    if args.epochs is not None:
        cfg = cfg.replace(training__epochs=args.epochs)
    out = _out_dir(cfg)
    ds = _load(_dataset_path(args, out))
    _check_dataset_matches(cfg, ds.header)
    mode = MODES[args.mode]
    man = _Manifest("train", cfg, out)
    tr, va = ds.split("train"), ds.split("val")
    if len(tr) == 0:
        raise ConfigError("dataset: the train split is empty")
    if len(va) == 0:
        va = tr
    op = None
    if mode == "nll_plus_pi":
        t = time.perf_counter()
        op = _operators(cfg, out)
        man.timing("operator", time.perf_counter() - t)
    est = _estimator(cfg, mode, op)
    t = time.perf_counter()
    est.fit(tr.responses, tr.labels, va.responses, va.labels)
    man.timing("train", time.perf_counter() - t)
    ckpt = out / f"checkpoint-{args.mode}.wgnn"
    est.save(ckpt)
    _merge_loss_curves(out / "loss_curves.csv", mode, est.train_loss_, est.val_loss_)
    save_config(cfg, out / "config.json")
    man.artifact("checkpoint", ckpt)
    man.artifact("loss_curves", out / "loss_curves.csv")
    man.data["best_epoch"] = est.best_epoch_
    man.write()
    print(f"trained {mode} for {len(est.val_loss_)} epochs (best {est.best_epoch_}); checkpoint {ckpt}")
    return EXIT_OK


def _estimator(cfg: RunConfig, mode: str, op) -> PlateauNetLocator:
    net, tr = cfg.network, cfg.training
    return PlateauNetLocator(
        n_channels=net.n_channels, n_conv_layers=net.n_conv_layers, kernel_size=net.kernel_size,
        loss_mode=mode, weights=(cfg.loss.w_nll, cfg.loss.w_pi), field_operator=op,
        epochs=tr.epochs, batch_size=tr.batch_size, patience=tr.patience,
        learning_rate=tr.learning_rate, plateau_size=cfg.dataset.plateau_size,
        threshold=cfg.eval.threshold, one_sided_ce=tr.one_sided_ce,
        scale_inputs=net.scale_inputs, random_state=cfg.seed)


def _triptych(prob, plateau_size, threshold):
    smooth = mean_filter(prob, plateau_size)
    peaks = np.zeros_like(prob)
    for ix, iy in extract_sources(prob, plateau_size, threshold):
        peaks[ix, iy] = 1.0
    # depth down the rows, range across; fixed 0..1 scale so panels are comparable
    gap = np.ones((prob.shape[1], 1))
    return np.hstack([prob.T, gap, smooth.T, gap, peaks.T])


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    ds = _load(_dataset_path(args, out))
    test = ds.split(args.split)
    if len(test) == 0:
        raise ConfigError(f"--split: the {args.split} split is empty")
    grid = test.grid
    man = _Manifest("eval", cfg, out)
    if args.perfect_labels:
        est = OracleLocator(test.labels.astype(float), cfg.dataset.plateau_size, cfg.eval.threshold)
        predict = lambda X: est.predict(X)  # noqa: E731
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint: required unless --perfect-labels is given")
        try:
            est = load_checkpoint(args.checkpoint, plateau_size=cfg.dataset.plateau_size,
                                  threshold=cfg.eval.threshold)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read checkpoint {args.checkpoint}: {exc}", EXIT_IO) from None
        want = (test.responses.shape[1:], grid.shape)
        have = (est.config_.input_dims, est.config_.output_dims)
        if want != have:
            raise ConfigError(f"checkpoint: network maps {have[0]} -> {have[1]}, dataset needs {want[0]} -> {want[1]}")
        predict = est.predict

    t = time.perf_counter()
    probs = est.predict_proba(test.responses)
    pred = [extract_sources(p, cfg.dataset.plateau_size, cfg.eval.threshold) for p in probs]
    report = recovery_rate(pred, test.sources, grid)
    man.timing("inference", time.perf_counter() - t)
    rows = []
    for row, src in zip(report.per_sample, test.sources):
        dist = min_pairwise_distance(src)
        rows.append((row["sample"], row["n_sources"], "" if dist is None else dist,
                     row["recovered"], row["spurious"]))
    write_csv(out / "recovery.csv", ["sample", "n_sources", "min_dist", "recovered", "spurious"], rows)

    rayleigh = cfg.model().wavelength(cfg.frequencies.f_c) / 2
    bins = min_distance_sweep(pred, test.sources, grid, cfg.distance_edges())
    for b in bins:
        b["below_rayleigh"] = int(b["hi"] <= rayleigh)
    write_csv(out / "min_dist_sweep.csv",
              ["lo", "hi", "n_samples", "n_sources", "recovered", "rate", "below_rayleigh"], bins)

    noise_rows = []
    kinds = [k.strip() for k in args.noise.split(",") if k.strip()] if args.noise else []
    for kind in kinds:
        if kind not in ("gaussian", "uniform"):
            raise ConfigError(f"--noise: unknown kind {kind!r}")
        eps = cfg.eval.gaussian_eps if kind == "gaussian" else cfg.eval.uniform_eps
        t = time.perf_counter()
        noise_rows += noise_sweep(predict, test.responses, test.sources, grid, kind, eps, cfg.eval.noise_seed)
        man.timing(f"noise_{kind}", time.perf_counter() - t)
    write_csv(out / "noise_sweep.csv", ["kind", "epsilon", "snr_db", "rate"], noise_rows)

    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    for q in range(min(args.images, len(test))):
        write_pgm(img_dir / f"pred_{q}.pgm",
                  np.rint(255 * _triptych(probs[q], cfg.dataset.plateau_size, cfg.eval.threshold)),
                  normalise=False)

    summary = {"recovery_rate": report.recovery_rate, "n_sources": report.n_sources,
               "n_recovered": report.n_recovered, "n_spurious": report.n_spurious,
               "rayleigh_half_wavelength": rayleigh,
               "sub_rayleigh_rate": subset_rate(pred, test.sources, grid, rayleigh)}
    atomic_write(out / "eval_summary.json", (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    for name in ("recovery", "min_dist_sweep", "noise_sweep"):
        man.artifact(name, out / f"{name}.csv")
    man.artifact("summary", out / "eval_summary.json")
    man.artifact("images", img_dir)
    man.data["recovery_rate"] = report.recovery_rate
    man.write()
    print(f"recovery {report.recovery_rate:.4f} ({report.n_recovered}/{report.n_sources}), "
          f"spurious {report.n_spurious}")
    return EXIT_OK


# entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wgsr", description="Waveguide source localisation toolkit.")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", choices=("paper", "desk"), help="built-in configuration (default: paper)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--describe", action="store_true", help="print the configuration and derived constants")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("synth", help="generate a dataset container")
    s.add_argument("--counts", help="train,val,test sample counts")
    s.add_argument("--dataset", help="output path (default OUT/dataset.wgsr)")
    s.add_argument("--overwrite", action="store_true")

    k = sub.add_parser("km", help="Kirchhoff-migration image of one sample")
    k.add_argument("--dataset")
    k.add_argument("--sample", type=int, required=True)
    k.add_argument("--zero", action="store_true", help="image an all-zero response instead")

    t = sub.add_parser("train", help="train the network")
    t.add_argument("--dataset")
    t.add_argument("--mode", choices=sorted(MODES), default="pi")
    t.add_argument("--epochs", type=int)

    e = sub.add_parser("eval", help="recovery, min-distance and noise sweeps")
    e.add_argument("--dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=SPLITS, default="test")
    e.add_argument("--noise", default="gaussian,uniform", help="comma list of noise kinds ('' for none)")
    e.add_argument("--images", type=int, default=4, help="number of prediction triptychs to write")
    e.add_argument("--perfect-labels", action="store_true", help="debug: predict the stored labels")
    return p


COMMANDS = {"synth": cmd_synth, "km": cmd_km, "train": cmd_train, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.describe:
            print(json.dumps({"config": cfg.to_dict(), "derived": cfg.describe()}, indent=2))
            if args.command is None:
                return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DivergenceError, PhysicsError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
