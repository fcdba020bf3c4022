"""Command-line front end: ``heraldkit {povm,wigner,herald,tomo}``.

Options come from built-in defaults, then an optional flat ``key = value``
config file, then command-line flags. All outputs are CSV/JSON data files;
re-running with the same inputs reproduces them byte for byte.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .detectors import DetectorKind, DetectorModel, build_povm, validate_povm
from .fock import HARD_CAP, FockCutoff, PrecisionWarning, wigner_diagonal
from .heralding import (
    HeraldedState,
    NoSolutionError,
    TwinBeamSource,
    conditional_state,
    heralding_cutoff,
    sweep,
    rate_at_target_fidelity,
)
from .tomography import (
    ProbeGrid,
    TomographyDataset,
    compare_povm,
    ml_reconstruct,
    simulate_dataset,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _text(v):
    return None if v is None else str(v)


def _float_list(v) -> list[float]:
    """Comma list ``0,0.08`` or range ``start:stop:step`` (stop inclusive)."""
    s = str(v).strip()
    if ":" in s:
        start, stop, step = (float(x) for x in s.split(":"))
        if step <= 0:
            raise ValueError(f"range step must be > 0 in {s!r}")
        n = int(math.floor((stop - start) / step + 1e-9))
        return [round(start + i * step, 12) for i in range(n + 1)]
    return [float(x) for x in s.split(",") if x.strip()]


GLOBAL_KEYS = {"seed": (int, 0), "out": (str, "."), "cutoff": (str, "auto")}
DETECTOR_KEYS = {
    "kind": (str, "apd"),
    "eta": (float, 1.0),
    "nu": (float, 0.0),
    "r": (float, 0.5),
    "n_outcomes": (int, 3),
}
SCHEMAS = {
    "povm": {**DETECTOR_KEYS},
    "wigner": {
        **DETECTOR_KEYS,
        "what": (str, "element"),
        "outcome": (_text, None),
        "lam": (float, 0.1),
        "r_max": (float, 3.0),
        "r_step": (float, 0.01),
    },
    "herald": {
        **DETECTOR_KEYS,
        "kind": (str, "apd,tmd"),
        "eta": (float, 0.9),
        "nu": (_float_list, [0.0]),
        "lambdas": (_float_list, _float_list("0:0.95:0.05")),
        "targets": (_float_list, None),
    },
    "tomo": {
        **DETECTOR_KEYS,
        "eta": (float, 0.28),
        "mu_max": (float, 10.0),
        "mu_step": (float, 0.1),
        "shots": (int, 100_000),
        "sigma": (float, 0.05),
        "dataset": (_text, None),
        "tol": (float, 1e-10),
        "max_iter": (int, 5000),
        "k_limit": (int, 10),
        "update": (str, "squared"),
    },
}


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(command: str, flags: dict, config: dict[str, str]) -> dict:
    schema = {**GLOBAL_KEYS, **SCHEMAS[command]}
    unknown = sorted(set(config) - set(schema))
    if unknown:
        raise UsageError(f"unknown config key(s) for '{command}': {', '.join(unknown)}")
    resolved = {}
    for key, (conv, default) in schema.items():
        raw = flags.get(key)
        if raw is None:
            raw = config.get(key)
        if raw is None:
            resolved[key] = default
            continue
        try:
            resolved[key] = conv(raw)
        except ValueError as exc:
            raise UsageError(f"invalid value for {key}: {raw!r} ({exc})") from None
    return resolved


def _model(cfg: dict, kind: str | None = None) -> DetectorModel:
    nu = cfg["nu"][0] if isinstance(cfg["nu"], list) else cfg["nu"]
    return DetectorModel(
        DetectorKind(kind or cfg["kind"]), cfg["eta"], nu, cfg["r"], cfg["n_outcomes"],
    )


def _povm_cutoff(cfg: dict, model: DetectorModel) -> FockCutoff:
    if cfg["cutoff"] != "auto":
        return FockCutoff(int(cfg["cutoff"]))
    if model.kind is DetectorKind.IDEAL:
        return FockCutoff(max(model.n_outcomes, 10))
    # slowest-decaying coefficient is (1 - eta * min(R, T))**k
    share = min(model.reflectivity, model.transmission) if model.kind is DetectorKind.TMD else 1.0
    q = 1.0 - model.eta * share
    if q <= 0.0:
        return FockCutoff(10)
    if q >= 1.0:
        return FockCutoff(HARD_CAP)
    return FockCutoff.for_squeezing(math.sqrt(q))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _fmt(x: float) -> str:
    return "nan" if x != x else f"{x:.12g}"


def _config_record(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k != "out"}


def cmd_povm(cfg: dict, out: Path) -> int:
    model = _model(cfg)
    povm = build_povm(model, _povm_cutoff(cfg, model))
    povm.save(out / "povm.json")
    r = povm.matrix()
    lines = ["k," + ",".join(f"r_{lab}" for lab in povm.labels)]
    lines += [f"{k}," + ",".join(_fmt(x) for x in row) for k, row in enumerate(r)]
    (out / "povm.csv").write_text("\n".join(lines) + "\n")
    diag = validate_povm(povm)
    _write_json(out / "manifest.json", {
        "command": "povm",
        "config": _config_record(cfg),
        "method": {
            "apd": "r_off = exp(-nu) (1-eta)^k; r_on = 1 - r_off",
            "tmd": "r_0 = exp(-nu) (1-eta)^k; r_1 = exp(-nu/2) [(1-R eta)^k + (1-T eta)^k] - 2 r_0; r_2 = 1 - r_0 - r_1",
            "ideal": "r_n = delta(k, n); last outcome collects the rest",
        }[model.kind.value],
        "max_completeness_violation": diag.max_completeness_violation,
        "coefficient_range": [diag.min_coeff, diag.max_coeff],
    })
    return EXIT_OK


def cmd_wigner(cfg: dict, out: Path) -> int:
    model = _model(cfg)
    outcome = cfg["outcome"] or model.herald_label
    if cfg["r_max"] <= 0 or cfg["r_step"] <= 0:
        raise ValueError("r_max and r_step must be > 0")
    n = int(math.floor(cfg["r_max"] / cfg["r_step"] + 1e-9))
    rs = np.round(np.arange(n + 1) * cfg["r_step"], 12)
    if cfg["what"] == "element":
        op = build_povm(model, _povm_cutoff(cfg, model)).element(outcome)
        desc = f"POVM element '{outcome}' of {model.kind.value}"
    elif cfg["what"] == "state":
        source = TwinBeamSource(cfg["lam"])
        cutoff = heralding_cutoff(model, source.lam) if cfg["cutoff"] == "auto" else FockCutoff(int(cfg["cutoff"]))
        hs: HeraldedState = conditional_state(source, build_povm(model, cutoff), outcome)
        op = hs.state
        desc = f"state heralded by '{outcome}' of {model.kind.value} at lambda={cfg['lam']}"
    else:
        raise ValueError(f"what must be 'element' or 'state', got {cfg['what']!r}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PrecisionWarning)
        values = np.atleast_1d(wigner_diagonal(op, rs))
        w0 = float(wigner_diagonal(op, 0.0))
    lines = ["r,value"] + [f"{_fmt(r)},{_fmt(v)}" for r, v in zip(rs, values)]
    (out / "wigner.csv").write_text("\n".join(lines) + "\n")
    _write_json(out / "wigner_summary.json", {
        "operator": desc,
        "config": _config_record(cfg),
        "W0": w0,
        "negative_at_origin": w0 < 0.0,
        "min_value": float(values.min()),
        "precision_warnings": [str(w.message) for w in caught if issubclass(w.category, PrecisionWarning)],
        "convention": "W_k(r) = (2/pi)(-1)^k exp(-2r^2) L_k(4r^2); identity density 1/pi",
    })
    return EXIT_OK


CLOSED_FORMS = {
    "apd": {
        "fidelity": "lam^2 (1 - e^-nu (1-eta)) / (1/(1-lam^2) - e^-nu / (1-(1-eta) lam^2))",
        "rate": "1 - e^-nu (1-lam^2) / (1-(1-eta) lam^2)",
    },
    "tmd": {
        "fidelity": "lam^2 (1 - eta/2 - e^-nu/2 (1-eta)) / (1/(1-(1-eta/2) lam^2) - e^-nu/2 / (1-(1-eta) lam^2)), R = 1/2",
        "rate": "2 (1-lam^2) (e^-nu/2 / (1-(1-eta/2) lam^2) - e^-nu / (1-(1-eta) lam^2)), R = 1/2, sign-corrected",
    },
    "ideal": {"fidelity": "1", "rate": "(1-lam^2) lam^2"},
}


def cmd_herald(cfg: dict, out: Path) -> int:
    kinds = [k.strip() for k in cfg["kind"].split(",") if k.strip()]
    models = [_model(cfg, k) for k in kinds]
    if cfg["cutoff"] != "auto":
        raise UsageError("herald chooses its cutoff per lambda; use --cutoff auto")
    table = sweep(models, cfg["lambdas"], cfg["nu"])
    (out / "sweep.csv").write_text(table.to_csv())
    manifest = {
        "command": "herald",
        "config": _config_record(cfg),
        "series": "Pr(n) = (1-lam^2) sum_k lam^(2k) r_kn; F = lam^2 r_1n / sum_k lam^(2k) r_kn; cutoff with lam^(2 k_max) < 1e-12",
        "closed_form": {m.kind.value: CLOSED_FORMS[m.kind.value] for m in models
                        if not (m.kind is DetectorKind.TMD and m.reflectivity != 0.5)},
        "impossible_rows": [
            {"lambda": r.lam, "nu": r.nu, "detector": r.detector, "outcome": r.outcome}
            for r in table if r.impossible
        ],
        "target_files": [],
    }
    if cfg["targets"]:
        for model in models:
            for nu in cfg["nu"]:
                m = DetectorModel(model.kind, model.eta, nu, model.reflectivity, model.n_outcomes)
                name = f"targets_{m.kind.value}_nu{nu:g}.csv"
                lines = ["fidelity_target,lambda_star,rate"]
                for ft in cfg["targets"]:
                    try:
                        lam, rate = rate_at_target_fidelity(m, ft)
                    except NoSolutionError:
                        lam, rate = float("nan"), float("nan")
                    lines.append(f"{_fmt(ft)},{_fmt(lam)},{_fmt(rate)}")
                (out / name).write_text("\n".join(lines) + "\n")
                manifest["target_files"].append(name)
        manifest["targets_method"] = "bisection on the decreasing fidelity branch; nan marks unreachable targets"
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def _tomo_grid(cfg: dict) -> ProbeGrid:
    return ProbeGrid.uniform(cfg["mu_max"], cfg["mu_step"], cfg["shots"], cfg["sigma"])


def _reconstruct(cfg: dict, ds: TomographyDataset, out: Path):
    cutoff = None if cfg["cutoff"] == "auto" else FockCutoff(int(cfg["cutoff"]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = ml_reconstruct(ds, cutoff, tol=cfg["tol"], max_iter=cfg["max_iter"], update=cfg["update"])
    res.povm.save(out / "reconstructed_povm.json")
    log = res.run_log()
    log["warnings"] = [str(w.message) for w in caught]
    _write_json(out / "run_log.json", log)
    if res.singular:
        print("warning: likelihood singularity clamped; see run_log.json", file=sys.stderr)
    return res


def cmd_tomo(cfg: dict, out: Path, action: str) -> int:
    if action == "simulate":
        ds = simulate_dataset(_model(cfg), _tomo_grid(cfg), cfg["seed"])
        ds.save(out / "dataset.csv")
        return EXIT_OK
    if action == "reconstruct":
        if not cfg["dataset"]:
            raise UsageError("tomo reconstruct needs --dataset PATH")
        ds = TomographyDataset.load(cfg["dataset"])
        _reconstruct(cfg, ds, out)
        return EXIT_OK
    model = _model(cfg)
    ds = simulate_dataset(model, _tomo_grid(cfg), cfg["seed"])
    ds.save(out / "dataset.csv")
    res = _reconstruct(cfg, ds, out)
    truth = build_povm(model, res.povm.cutoff)
    dist = compare_povm(truth, res.povm, cfg["k_limit"])
    _write_json(out / "compare.json", {
        "k_limit": dist.k_limit,
        "max_abs_error": dist.max_abs,
        "l1_error": dist.l1,
        "truth": model.to_dict(),
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value config file")
    common.add_argument("--seed", default=argparse.SUPPRESS, help="RNG seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")
    common.add_argument("--cutoff", default=argparse.SUPPRESS, metavar="K|auto", help="Fock cutoff")

    det = argparse.ArgumentParser(add_help=False)
    det.add_argument("--kind", help="ideal, apd or tmd (herald accepts a comma list)")
    det.add_argument("--eta", help="quantum efficiency in [0, 1]")
    det.add_argument("--nu", help="mean dark counts per window (herald accepts a list)")
    det.add_argument("--r", help="TMD splitter reflectivity in (0, 1)")
    det.add_argument("--n-outcomes", dest="n_outcomes", help="outcomes of the ideal detector")

    p = argparse.ArgumentParser(prog="heraldkit", parents=[common], description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("povm", parents=[common, det], help="write detector POVM coefficients")

    w = sub.add_parser("wigner", parents=[common, det], help="radial Wigner profile of a POVM element or heralded state")
    w.add_argument("--what", help="element or state")
    w.add_argument("--outcome", help="outcome label (default: the single-photon herald)")
    w.add_argument("--lam", help="squeezing parameter for --what state")
    w.add_argument("--r-max", dest="r_max")
    w.add_argument("--r-step", dest="r_step")

    h = sub.add_parser("herald", parents=[common, det], help="fidelity/rate sweep over lambda and nu")
    h.add_argument("--lambdas", help="comma list or start:stop:step")
    h.add_argument("--targets", help="fidelity targets for the rate-at-fidelity table")

    t = sub.add_parser("tomo", parents=[common, det], help="synthetic detector tomography")
    t.add_argument("action", choices=["simulate", "reconstruct", "roundtrip"])
    for flag in ("mu-max", "mu-step", "shots", "sigma", "dataset", "tol", "max-iter", "k-limit", "update"):
        t.add_argument(f"--{flag}", dest=flag.replace("-", "_"))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "action", "config")}
    try:
        config = read_config(args.config) if getattr(args, "config", None) else {}
        cfg = resolve(args.command, flags, config)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "povm":
            return cmd_povm(cfg, out)
        if args.command == "wigner":
            return cmd_wigner(cfg, out)
        if args.command == "herald":
            return cmd_herald(cfg, out)
        return cmd_tomo(cfg, out, args.action)
    except (UsageError, ValueError, KeyError) as exc:
        print(f"heraldkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError) as exc:
        print(f"heraldkit: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
