"""Command-line front end: ``run``, ``oracle``, ``baseline`` and ``diagnostics``.

Every command reads one versioned JSON experiment file and writes CSV files
plus ``manifest.json`` into the output directory. Exit codes: 0 success
(for ``run``: stopping rule met), 3 ``run`` stopped at max_iterations,
1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import density as dens
from .acquisition import CriterionConfig, CriterionEvaluator, Metric, asymptotic_q, corollary_bound
from .bench import (
    SYNTHETIC,
    Oscillator,
    OscillatorParams,
    exact_pdf_oracle,
    lh_baseline,
    load_tabulated_map,
)
from .errors import ExtremePdfError, InvalidConfig, MalformedTable, NotMonotone, ResolutionTooLarge
from .inputs import EmpiricalGrid, GaussianDiagonal, quadrature_grid
from .sampler import SamplerConfig, load_checkpoint, resume, run, write_records, write_timings

CONFIG_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_MAX_ITER = 0, 1, 2, 3

_TOP_KEYS = {"version", "problem", "input", "sampler", "oracle", "baseline", "diagnostics"}


@dataclass(frozen=True)
class OracleSpec:
    resolution: tuple[int, ...] = (100,)
    bins: int = dens.DEFAULT_BINS


@dataclass(frozen=True)
class BaselineSpec:
    sizes: tuple[int, ...] = (20, 40, 60)
    repeats: int = 5
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    input: dict
    sampler: SamplerConfig
    oracle: OracleSpec = OracleSpec()
    baseline: BaselineSpec = BaselineSpec()
    diagnostics_resolution: int = 4001
    base_dir: Path = field(default=Path("."), compare=False)
    raw_text: str = field(default="", compare=False, repr=False)


def _check_keys(d, allowed: set, where: str, required: set = frozenset()) -> None:
    if not isinstance(d, dict):
        raise InvalidConfig(f"{where} must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise InvalidConfig(f"unknown keys in {where}: {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise InvalidConfig(f"missing keys in {where}: {sorted(missing)}")


def _resolve(base: Path, p: str) -> Path:
    path = (base / p) if not Path(p).is_absolute() else Path(p)
    if not path.exists():
        raise InvalidConfig(f"referenced file {p} does not exist")
    return path


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from None
    _check_keys(doc, _TOP_KEYS, "config", {"version", "problem", "input", "sampler"})
    if doc["version"] != CONFIG_VERSION:
        raise InvalidConfig(f"config version {doc['version']!r} is not supported (expected {CONFIG_VERSION})")
    base = path.parent

    prob = doc["problem"]
    _check_keys(prob, {"kind", "name", "path", "interpolation", "params"}, "problem", {"kind"})
    kind = prob["kind"]
    if kind == "oscillator":
        _check_keys(prob, {"kind", "params"}, "problem")
        try:
            OscillatorParams(**prob.get("params", {}))
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"oscillator params: {exc}") from None
    elif kind == "tabulated":
        _check_keys(prob, {"kind", "path", "interpolation"}, "problem", {"path"})
        _resolve(base, prob["path"])
        if prob.get("interpolation", "cubic") not in ("linear", "cubic"):
            raise InvalidConfig("interpolation must be 'linear' or 'cubic'")
    elif kind == "synthetic":
        _check_keys(prob, {"kind", "name"}, "problem", {"name"})
        if prob["name"] not in SYNTHETIC:
            raise InvalidConfig(f"unknown synthetic map {prob['name']!r}; choose from {sorted(SYNTHETIC)}")
    else:
        raise InvalidConfig(f"unknown problem kind {kind!r}")

    inp = doc["input"]
    _check_keys(inp, {"kind", "variances", "bounds", "path"}, "input", {"kind"})
    if inp["kind"] == "gaussian":
        _check_keys(inp, {"kind", "variances", "bounds"}, "input", {"variances"})
    elif inp["kind"] == "empirical":
        _check_keys(inp, {"kind", "path"}, "input", {"path"})
        _resolve(base, inp["path"])
    elif inp["kind"] == "kl":
        if kind != "oscillator":
            raise InvalidConfig("input kind 'kl' requires the oscillator problem")
        _check_keys(inp, {"kind"}, "input")
    else:
        raise InvalidConfig(f"unknown input kind {inp['kind']!r}")

    s = doc["sampler"]
    if not isinstance(s, dict) or "seed" not in s:
        raise InvalidConfig("sampler.seed must be given explicitly")
    if "seed" not in s.get("pso", {}):
        raise InvalidConfig("sampler.pso.seed must be given explicitly")
    sampler = SamplerConfig.from_dict(s)

    o = doc.get("oracle", {})
    _check_keys(o, {"resolution", "bins"}, "oracle")
    b = doc.get("baseline", {})
    _check_keys(b, {"sizes", "repeats", "seed"}, "baseline", {"seed"} if b else set())
    dg = doc.get("diagnostics", {})
    _check_keys(dg, {"resolution"}, "diagnostics")
    try:
        oracle = OracleSpec(tuple(int(r) for r in np.atleast_1d(o.get("resolution", 100))), int(o.get("bins", 100)))
        baseline = BaselineSpec(tuple(int(n) for n in b.get("sizes", (20, 40, 60))),
                                int(b.get("repeats", 5)), int(b.get("seed", 0)))
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from None
    if oracle.bins < 10 or baseline.repeats < 1 or min(baseline.sizes) < 2:
        raise InvalidConfig("need oracle.bins >= 10, baseline.repeats >= 1 and sizes >= 2")
    cfg = ExperimentConfig(prob, inp, sampler, oracle, baseline, int(dg.get("resolution", 4001)), base, text)
    build_problem(cfg)  # validate dimensions eagerly
    return cfg


def build_problem(cfg: ExperimentConfig):
    """Return ``(map, input distribution)`` for an experiment."""
    prob, inp = cfg.problem, cfg.input
    try:
        if prob["kind"] == "oscillator":
            osc = Oscillator(OscillatorParams(**prob.get("params", {})))
            map_fn, dim = osc, osc.params.m
        elif prob["kind"] == "tabulated":
            map_fn = load_tabulated_map(_resolve(cfg.base_dir, prob["path"]), prob.get("interpolation", "cubic"))
            dim = map_fn.dim
        else:
            map_fn = SYNTHETIC[prob["name"]]
            dim = map_fn.dim
        if inp["kind"] == "kl":
            dist = map_fn.input
        elif inp["kind"] == "gaussian":
            dist = GaussianDiagonal(inp["variances"], inp.get("bounds"))
        else:
            dist = EmpiricalGrid.from_csv(_resolve(cfg.base_dir, inp["path"]))
    except (TypeError, ValueError, MalformedTable) as exc:
        raise InvalidConfig(f"cannot build problem: {exc}") from None
    if dist.dim != dim:
        raise InvalidConfig(f"input dimension {dist.dim} does not match map dimension {dim}")
    if len(cfg.sampler.resolution) not in (1, dim):
        raise InvalidConfig("sampler.resolution must have one entry or one per dimension")
    return map_fn, dist


def _write_manifest(out: Path, cfg: ExperimentConfig, command: str, files: list[str], extra=None) -> None:
    manifest_path = out / "manifest.json"
    doc = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    doc["config_sha256"] = hashlib.sha256(cfg.raw_text.encode()).hexdigest()
    cmds = doc.setdefault("commands", {})
    cmds[command] = {"outputs": sorted(files), **(extra or {})}
    doc["outputs"] = sorted({f for c in cmds.values() for f in c["outputs"]})
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _oracle_path(out: Path) -> Path:
    return out / "pdf_exact.csv"


def _load_reference(out: Path):
    p = _oracle_path(out)
    return dens.DensityEstimate.from_csv(p) if p.exists() else None


def cmd_run(cfg: ExperimentConfig, out: Path, threads: int, resume_run: bool = False) -> int:
    map_fn, dist = build_problem(cfg)
    reference = _load_reference(out)
    files = []

    def callback(k, f_n, f_plus, f_minus):
        name = f"pdf_iter_{k}.csv"
        f_n.to_csv(out / name)
        files.append(name)

    ckpt = out / "checkpoint.json"
    if resume_run:
        _, saved = load_checkpoint(ckpt)
        if saved != cfg.sampler:
            raise InvalidConfig("checkpoint was written with a different sampler configuration")
        res = resume(ckpt, map_fn, dist, reference=reference, callback=callback, threads=threads)
    else:
        res = run(map_fn, dist, cfg.sampler, reference=reference, checkpoint=ckpt, callback=callback,
                  threads=threads)
    write_records(res.records, out / "records.csv", dist.dim)
    write_timings(res.records, out / "timings.csv")
    res.dataset.to_csv(out / "dataset.csv")
    res.density.to_csv(out / "pdf_final.csv")
    res.bounds[0].to_csv(out / "pdf_upper_bound.csv")
    res.bounds[1].to_csv(out / "pdf_lower_bound.csv")
    files += ["records.csv", "timings.csv", "dataset.csv", "pdf_final.csv", "pdf_upper_bound.csv",
              "pdf_lower_bound.csv", "checkpoint.json"]
    final = {"status": res.status, "final_n_points": len(res.dataset),
             "final_error_vs_oracle": res.error_vs_oracle}
    _write_manifest(out, cfg, "run", files, final)
    print(f"{res.status} after {len(res.records)} iterations; d(f+, f-) = {res.distance_fpm:.6g}"
          + ("" if res.error_vs_oracle is None else f"; error vs oracle = {res.error_vs_oracle:.6g}"))
    return EXIT_OK if res.converged else EXIT_MAX_ITER


def cmd_oracle(cfg: ExperimentConfig, out: Path, threads: int, resolution=None) -> int:
    map_fn, dist = build_problem(cfg)
    res = tuple(resolution) if resolution else cfg.oracle.resolution
    ref = exact_pdf_oracle(map_fn, dist, res, cfg.oracle.bins)
    ref.to_csv(_oracle_path(out))
    _write_manifest(out, cfg, "oracle", ["pdf_exact.csv"], {"resolution": list(res)})
    print(f"oracle written with {ref.bins} bins")
    return EXIT_OK


def cmd_baseline(cfg: ExperimentConfig, out: Path, threads: int, sizes=None, repeats=None) -> int:
    map_fn, dist = build_problem(cfg)
    reference = _load_reference(out)
    files = ["lh_errors.csv", "algorithm_errors.csv"]
    if reference is None:
        cmd_oracle(cfg, out, threads)
        reference = _load_reference(out)
        files.append("pdf_exact.csv")
    b = cfg.baseline
    rows = lh_baseline(map_fn, dist, sizes or b.sizes, repeats or b.repeats, b.seed, reference,
                       cfg.sampler.resolution, cfg.sampler.calibration_restarts, cfg.sampler.log_observable)
    with open(out / "lh_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "mean_error", "sd_error"])
        for r in rows:
            w.writerow([r.size, format(r.mean_error, ".17g"), format(r.sd_error, ".17g")])
    _write_algorithm_errors(out, cfg, map_fn, dist, reference)
    _write_manifest(out, cfg, "baseline", files)
    return EXIT_OK


def _write_algorithm_errors(out: Path, cfg, map_fn, dist, reference) -> None:
    """Errors of the sequential run at each dataset size, recomputed against ``reference``.

    Uses the records of a previous ``run`` in the same directory when present.
    """
    rec_path = out / "records.csv"
    with open(out / "algorithm_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "error"])
        if not rec_path.exists():
            return
        with open(rec_path) as rf:
            for row in csv.DictReader(rf):
                if row["error_vs_oracle"]:
                    w.writerow([int(row["n_points"]) - 1, row["error_vs_oracle"]])
        final = json.loads((out / "manifest.json").read_text())["commands"].get("run", {})
        if final.get("final_error_vs_oracle") is not None:
            w.writerow([final["final_n_points"], format(final["final_error_vs_oracle"], ".17g")])


def cmd_diagnostics(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    """Criterion baseline, asymptotic estimate and corollary bound for the checkpointed surrogate."""
    from .sampler import _fit, _gp_dataset

    state, scfg = load_checkpoint(out / "checkpoint.json")
    map_fn, dist = build_problem(cfg)
    if dist.dim > 2:
        raise InvalidConfig("diagnostics support 1D and 2D inputs only")
    gp = state.gp or _fit(_gp_dataset(scfg, state.observed), state.hyperparams)
    grid = quadrature_grid(dist, scfg.resolution)
    ccfg = CriterionConfig(grid, scfg.alpha, scfg.bins, Metric.LOG_L1)
    try:
        base = CriterionEvaluator(gp, ccfg).baseline
    except dens.NoOverlap:
        base = np.inf
    try:
        asym = asymptotic_q(gp, ccfg)
    except dens.NoOverlap:
        asym = np.nan
    cor = np.nan
    if dist.dim == 1:
        try:
            cor = corollary_bound(gp, dist, scfg.alpha, cfg.diagnostics_resolution)
        except NotMonotone:
            pass
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "n_points", "criterion_baseline", "asymptotic_q", "corollary_bound"])
        w.writerow([state.k, len(state.observed), *(format(float(x), ".17g") for x in (base, asym, cor))])
    _write_manifest(out, cfg, "diagnostics", ["diagnostics.csv"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="extremepdf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment JSON file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for swarm evaluations")

    sp = sub.add_parser("run", help="run the sequential sampler")
    common(sp)
    sp.add_argument("--resume", action="store_true", help="continue from out/checkpoint.json")
    sp = sub.add_parser("oracle", help="dense-grid pdf of the true map")
    common(sp)
    sp.add_argument("--resolution", type=int, nargs="+", help="override oracle grid resolution")
    sp = sub.add_parser("baseline", help="Latin hypercube baseline errors")
    common(sp)
    sp.add_argument("--sizes", type=int, nargs="+")
    sp.add_argument("--repeats", type=int)
    sp = sub.add_parser("diagnostics", help="asymptotic criterion diagnostics from the checkpoint")
    common(sp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            return cmd_run(cfg, out, args.threads, args.resume)
        if args.command == "oracle":
            return cmd_oracle(cfg, out, args.threads, args.resolution)
        if args.command == "baseline":
            return cmd_baseline(cfg, out, args.threads, args.sizes, args.repeats)
        return cmd_diagnostics(cfg, out, args.threads)
    except (InvalidConfig, ResolutionTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ExtremePdfError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
