"""``tdpaf`` command-line interface.

Subcommands ``estimate``, ``ledger``, ``simulate``, ``check`` and
``replay``.  Exit codes: 0 success, 1 validation error, 2 numerical
failure, 3 identity-check failure (or a replay whose outputs differ).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import BootstrapConfig, bootstrap_ci
from .cohort import Cohort, TimeGrid, ingest_covariates_csv, load_cohort
from .errors import TdpafError, ValidationError
from .ipcw import ipcw_estimate
from .ledger import Scheme, estimate_from_ledger, ledger
from .methods import METHODS, MethodSpec, check_requirements, factual_or_none, paf_or_none
from .oracle import run_checks, weights_from_matrix
from .output import (fmt, sha256, write_covariates, write_curves, write_json, write_ledger,
                     write_patients, write_truth)
from .simulate import SCENARIOS, ScenarioConfig, monte_carlo_truth, simulate_cohort

IDENTITY_FAILURE = 3
MANIFEST = "run_manifest.json"
GLOBAL_DEFAULTS = {"horizon": None, "input": None, "covariates": None, "output_dir": ".", "seed": None}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--horizon", type=int, default=d, metavar="J", help="last day of follow-up")
    p.add_argument("--input", default=d, metavar="CSV", help="patients.csv")
    p.add_argument("--covariates", default=d, metavar="CSV", help="covariates.csv (long format)")
    p.add_argument("--output-dir", dest="output_dir", default=d, metavar="DIR")
    p.add_argument("--seed", type=int, default=d)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tdpaf", parents=[_global_flags(True)],
                     description="Time-dependent population-attributable fraction of hospital death "
                                 "due to hospital-acquired infection.")
    parser.add_argument("--version", action="version", version=f"tdpaf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _global_flags(True)

    p = sub.add_parser("estimate", parents=[common], help="counterfactual CIF and PAF curves")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--bootstrap", type=int, default=0, metavar="B", help="bootstrap replicates (0: none)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--truncate-weights", dest="truncate_weights", type=float, default=None, metavar="Q",
                   help="clip IPC weights at the Q-th percentile (off by default)")
    p.add_argument("--nonparametric", action="store_true",
                   help="ipcw: stratify on covariate values instead of fitting a hazard model")

    p = sub.add_parser("ledger", parents=[common], help="per-patient weight-transfer ledger")
    p.add_argument("--method", required=True, choices=[s.value for s in Scheme])

    p = sub.add_parser("simulate", parents=[common], help="synthetic cohort and counterfactual truth")
    p.add_argument("--scenario", default="confounded", choices=sorted(SCENARIOS))
    p.add_argument("--config", default=None, metavar="FILE", help="scenario JSON/TOML (overrides --scenario)")
    p.add_argument("--n", type=int, default=None, help="cohort size")
    p.add_argument("--truth-replicates", dest="truth_replicates", type=int, default=1_000_000)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("check", parents=[common], help="run the equivalence identities on a dataset")
    p.add_argument("--weights", default=None, metavar="CSV", help="weights to test: patient_id,day,weight")
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--exact", action="store_true", help="rational arithmetic")

    p = sub.add_parser("replay", help="re-run a recorded manifest and compare output hashes")
    p.add_argument("manifest")
    p.add_argument("--output-dir", dest="output_dir", default=None, metavar="DIR")
    return parser


def _resolve(args):
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    return args


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise ValidationError(f"{args.command} needs --{name.replace('_', '-')}")


def _grid(args) -> TimeGrid:
    _need(args, "horizon")
    return TimeGrid(args.horizon)


def _load(args):
    _need(args, "input")
    grid = _grid(args)
    cohort = load_cohort(args.input, grid)
    cov = ingest_covariates_csv(args.covariates, cohort) if args.covariates else None
    return cohort, cov


def _warn(msg):
    print(f"tdpaf: warning: {msg}", file=sys.stderr)


def cmd_estimate(args, out: Path) -> list[str]:
    cohort, cov = _load(args)
    if cohort.n == 0:
        raise ValidationError(f"{args.input}: no patients; nothing to estimate")
    check_requirements(args.method, cohort, cov)
    spec = MethodSpec(args.method, nonparametric=args.nonparametric, truncate=args.truncate_weights)
    files = []
    if args.method == "ipcw":
        res = ipcw_estimate(cohort, cov, nonparametric=args.nonparametric, truncate=args.truncate_weights)
        ccif = res.curve
        if res.fit is not None:
            write_json(out / "hazard_model.json", res.fit.report())
            files.append("hazard_model.json")
    else:
        ccif = spec(cohort, cov)
    if args.bootstrap:
        cfg = BootstrapConfig(args.bootstrap, args.seed or 0, args.level, args.workers)
        boot = bootstrap_ci(cohort, spec, cfg, cov)
        ccif = ccif.with_ci(boot.curve.ci_lower, boot.curve.ci_upper)
        if boot.n_failed:
            _warn(f"{boot.n_failed} of {cfg.replicates} bootstrap replicates failed and were excluded")
        write_json(out / "bootstrap.json", {"replicates": cfg.replicates, "failed": boot.n_failed,
                                            "level": cfg.level, "seed": cfg.seed,
                                            "failures": [{"replicate": b, "error": m} for b, m in boot.failed]})
        files.append("bootstrap.json")
    factual = factual_or_none(cohort)
    if factual is None:
        _warn("terminal events missing for some infected patients; cif_factual and paf columns omitted")
    write_curves(out / "curves.csv", ccif, factual, paf_or_none(factual, ccif))
    return ["curves.csv"] + files


def cmd_ledger(args, out: Path) -> list[str]:
    cohort, _ = _load(args)
    book = ledger(cohort, args.method)
    m = args.method
    ccif = estimate_from_ledger(book) if cohort.n else None
    names = [f"ledger_{m}_weights.csv", f"ledger_{m}_annotations.csv", f"ledger_{m}_summary.csv"]
    write_ledger(out / names[0], out / names[1], book, out / names[2], ccif)
    return names


def cmd_simulate(args, out: Path) -> list[str]:
    cfg = ScenarioConfig.from_file(args.config) if args.config else SCENARIOS[args.scenario]
    changes = {k: v for k, v in (("n", args.n), ("seed", args.seed), ("horizon", args.horizon)) if v is not None}
    cfg = cfg.replace(**changes)
    sim = simulate_cohort(cfg, workers=args.workers)
    truth = monte_carlo_truth(cfg, args.truth_replicates, workers=args.workers)
    write_patients(out / "patients.csv", sim.cohort)
    write_covariates(out / "covariates.csv", sim.cohort, sim.covariates)
    write_truth(out / "truth.csv", truth)
    write_json(out / "scenario.json", cfg.to_dict())
    return ["patients.csv", "covariates.csv", "truth.csv", "scenario.json"]


def read_weights_csv(path, cohort: Cohort) -> np.ndarray:
    """Long-format ``patient_id,day,weight``; unlisted at-risk cells are an error."""
    index = {pid: i for i, pid in enumerate(cohort.patient_ids)}
    w = np.full((cohort.n, cohort.grid.n_days), np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["patient_id", "day", "weight"]:
            raise ValidationError(f"{path}: header must be patient_id,day,weight")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                pid, day, val = row[0].strip(), int(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise ValidationError(f"{path} line {line}: malformed row", line=line) from None
            if pid not in index:
                raise ValidationError(f"{path} line {line}: unknown patient_id {pid!r}", line=line)
            if 0 <= day <= cohort.grid.horizon:
                w[index[pid], day] = val
    at = cohort.grid.days[None, :] <= np.minimum(cohort.t_tilde, cohort.grid.horizon)[:, None]
    gap = at & np.isnan(w)
    if gap.any():
        i, j = np.argwhere(gap)[0]
        raise ValidationError(f"{path}: no weight for patient {cohort.patient_ids[i]} on day {j}")
    return np.where(at, w, 0.0)


def cmd_check(args, out: Path) -> tuple[list[str], bool]:
    cohort, _ = _load(args)
    weights = weights_from_matrix(cohort, read_weights_csv(args.weights, cohort)) if args.weights else None
    results = run_checks(cohort, weights, tol=args.tolerance, exact=args.exact)
    ok = all(r.passed for r in results)
    write_json(out / "check_report.json", {"passed": ok, "identities": [r.as_dict() for r in results]})
    for r in results:
        status = "skip" if r.skipped else ("pass" if r.passed else "FAIL")
        print(f"{status:4s}  {r.name:48s} max|d|={fmt(r.max_violation)}  {r.note}".rstrip())
    return ["check_report.json"], ok


def _hash_args(args) -> str:
    blob = json.dumps({k: v for k, v in sorted(vars(args).items()) if k != "output_dir"}, sort_keys=True,
                      default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_manifest(args, argv, out: Path, outputs: list[str]) -> None:
    inputs = {}
    for key in ("input", "covariates", "weights", "config"):
        p = getattr(args, key, None)
        if p:
            inputs[key] = {"path": str(p), "sha256": sha256(p)}
    manifest = {
        "tool": "tdpaf",
        "version": __version__,
        "subcommand": args.command,
        "argv": list(argv),
        "method": getattr(args, "method", None),
        "horizon": args.horizon,
        "seed": args.seed,
        "inputs": inputs,
        "config_hash": _hash_args(args),
        "outputs": {name: sha256(out / name) for name in sorted(outputs)},
    }
    write_json(out / MANIFEST, manifest)


def _replace_output_dir(argv, new):
    argv = list(argv)
    out = []
    skip = False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--output-dir":
            skip = True
            continue
        if a.startswith("--output-dir="):
            continue
        out.append(a)
    return out + ["--output-dir", str(new)]


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if manifest.get("tool") != "tdpaf":
        raise ValidationError(f"{args.manifest} is not a tdpaf manifest")
    target = Path(args.output_dir or Path(args.manifest).parent / "replay")
    code = main(_replace_output_dir(manifest["argv"], target))
    if code not in (0, IDENTITY_FAILURE):
        return code
    differ = [name for name, h in manifest["outputs"].items()
              if not (target / name).exists() or sha256(target / name) != h]
    if differ:
        print(f"tdpaf: replay outputs differ: {', '.join(differ)}", file=sys.stderr)
        return IDENTITY_FAILURE
    print(f"replay reproduced {len(manifest['outputs'])} output file(s) in {target}")
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _resolve(parser.parse_args(argv))
    try:
        if args.command == "replay":
            return cmd_replay(args)
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        ok = True
        if args.command == "estimate":
            files = cmd_estimate(args, out)
        elif args.command == "ledger":
            files = cmd_ledger(args, out)
        elif args.command == "simulate":
            files = cmd_simulate(args, out)
        else:
            files, ok = cmd_check(args, out)
        _write_manifest(args, argv, out, files)
        return 0 if ok else IDENTITY_FAILURE
    except TdpafError as exc:
        print(f"tdpaf: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tdpaf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
