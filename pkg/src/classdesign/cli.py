"""Batch front end: design search, evaluation, loss sweeps, ABC sweeps and
forest validation, with JSON configs and per-run output directories."""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .abc import AbcConfig, AbcOracle, abc_expected_loss, build_reference_table
from .classify import ForestConfig, TreeConfig, matrix_to_csv
from .core import Design, DesignError, DesignSpace, PriorModelProbabilities, RngStream, make_space
from .likelihood import EpiBayesOracle, LogisticISOracle
from .loss import METHODS, IncompatibleEstimator, LossBinding, loss_curve, validate_forest, write_curve
from .models import Family, generate_labeled_set, get_family
from .optimize import SearchConfig, multi_start_search

log = logging.getLogger("classdesign")

DEFAULTS: dict = {
    "family": "epi4",
    "family_options": {},
    "space": None,
    "n_points": 1,
    "method": "rf-oob",
    "methods": None,
    "loss": "01",
    "priors": None,
    "test_mode": "stratified",
    "sizes": {
        "j_train": 5000,
        "j_test": 5000,
        "n_trees": 100,
        "search_trees": 100,
        "R": 10000,
        "retain": 200,
        "j_abc": 100,
        "j_bayes": 200,
        "Q": 30,
        "S": 100000,
        "validate_train": 10000,
        "validate_test": 10000,
        "likelihood_j": 1000,
    },
    "search": {"p": 6, "q": 10, "restarts": 20, "max_sweeps": 100},
    "tree": {"min_split": 20, "min_leaf": 7, "max_depth": 30, "cp": 0.01},
    "evidence": "laplace",
    "likelihood": False,
    "designs": [],
    "equidistant": [],
    "seed": 0,
    "threads": 1,
    "out": "out",
}

# per-family settings layered between the defaults and a config file.
# Logistic responses are binary, so the outcome space is finite and an
# unpruned design tree can resolve every outcome cell.
PRESETS: dict = {
    "epi4": {},
    "epi2": {"method": "tree-test", "sizes": {"j_bayes": 200}},
    "macro": {"method": "rf-oob"},
    "logistic-fe": {"method": "tree-test", "test_mode": "proportional", "n_points": 6, "tree": {"cp": 0.0}},
    "logistic-re": {"method": "tree-test", "test_mode": "proportional", "n_points": 6, "tree": {"cp": 0.0}},
}

WORKFLOWS = ("search", "evaluate", "sweep", "abc-sweep", "validate")


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _preset_key(family: str) -> str:
    if family.startswith("logistic-"):
        return "-".join(family.split("-")[:2])
    return family


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def resolve_config(file_cfg: dict | None = None, flags: dict | None = None) -> dict:
    """Flags override the file, the file overrides the family preset and defaults."""
    file_cfg = file_cfg or {}
    flags = flags or {}
    family = flags.get("family") or file_cfg.get("family") or DEFAULTS["family"]
    cfg = _merge(DEFAULTS, PRESETS.get(_preset_key(family), {}))
    cfg = _merge(cfg, file_cfg)
    for k, v in flags.items():
        if v is not None:
            _set_path(cfg, k, v)
    check_config(cfg)
    return cfg


def check_config(cfg: dict) -> None:
    try:
        make_family(cfg)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"family: {e}") from e
    if cfg["method"] not in METHODS:
        raise ConfigError(f"unknown method {cfg['method']!r}")
    if cfg["loss"] not in ("01", "mdl"):
        raise ConfigError(f"unknown loss {cfg['loss']!r}")
    for k, v in cfg["sizes"].items():
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"size {k} must be a positive integer")
    if cfg["n_points"] < 1 or cfg["threads"] < 1:
        raise ConfigError("n_points and threads must be positive")
    try:
        SearchConfig(**cfg["search"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"search: {e}") from e
    try:
        TreeConfig(**cfg["tree"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"tree: {e}") from e
    if cfg["evidence"] not in ("laplace", "gauss-hermite"):
        raise ConfigError(f"unknown evidence method {cfg['evidence']!r}")


def run_id(cfg: dict) -> str:
    """Seed plus a content hash of everything that affects results."""
    content = {k: v for k, v in cfg.items() if k not in ("threads", "out")}
    digest = hashlib.sha256(json.dumps(content, sort_keys=True).encode()).hexdigest()[:12]
    return f"{cfg['seed']}-{digest}"


def make_family(cfg: dict) -> Family:
    return get_family(cfg["family"], **cfg.get("family_options", {}))


def make_space_for(cfg: dict, family: Family) -> DesignSpace:
    if cfg.get("space"):
        return make_space(cfg["space"], cfg["n_points"])
    return family.default_space(cfg["n_points"])


def parse_design(text: str | list) -> Design:
    """``"0.75,4.5"`` or ``"0.1;2,10"`` (groups separated by semicolons)."""
    if isinstance(text, list):
        if text and all(isinstance(b, list) for b in text):
            return Design(tuple(tuple(b) for b in text))
        return Design.of(text)
    blocks = [tuple(float(v) for v in part.split(",") if v.strip()) for part in text.split(";")]
    return Design(tuple(blocks))


def equidistant_design(family: Family, n: int) -> Design:
    """n equally spaced times in (0, 10]; macrophage exposure fixed at 0.8."""
    times = tuple(round(10.0 * k / (n + 1), 10) for k in range(1, n + 1))
    if family.name == "macro":
        return Design.of([0.8], times)
    if family.name.startswith("epi"):
        return Design.of(times)
    raise ConfigError(f"no equidistant design for family {family.name}")


def random_corner_design(n_obs: int, rng: np.random.Generator) -> Design:
    """Logistic design with every covariate drawn from {-1, +1}."""
    return Design.of(rng.choice([-1.0, 1.0], size=4 * n_obs).tolist())


def _priors(cfg: dict, family: Family):
    if cfg.get("priors") is None:
        return family.priors
    return PriorModelProbabilities.normalized(cfg["priors"])


def make_binding(cfg: dict, family: Family, method: str | None = None, stream: RngStream | None = None) -> LossBinding:
    method = method or cfg["method"]
    sizes = cfg["sizes"]
    oracle_factory = None
    j_test = sizes["j_test"]
    if method == "bayes":
        if family.name == "epi2":
            oracle_factory = lambda d: EpiBayesOracle(d, cfg["evidence"], sizes["Q"], family.priors)  # noqa: E731
        elif family.name.startswith("logistic-fe"):
            oracle_factory = lambda d: LogisticISOracle(d, family.priors, sizes["S"], stream or 0)  # noqa: E731
        else:
            raise ConfigError(f"no likelihood oracle for family {family.name}")
        j_test = sizes["j_bayes"]
    elif method == "abc":
        table = build_reference_table(family, _abc_grid(cfg, family), sizes["R"], (stream or RngStream(0)).split(7))
        acfg = AbcConfig(sizes["retain"], sizes["j_abc"])
        oracle_factory = lambda d: AbcOracle(table, d, acfg)  # noqa: E731
        j_test = sizes["j_abc"]
    try:
        return LossBinding(
            family, method, cfg["loss"], sizes["j_train"], j_test, _priors(cfg, family),
            TreeConfig(**cfg["tree"]), ForestConfig(n_trees=sizes["search_trees"]), cfg["test_mode"],
            oracle_factory,
        )
    except IncompatibleEstimator as e:
        raise ConfigError(str(e)) from e


def _abc_grid(cfg: dict, family: Family):
    if not family.name.startswith("epi"):
        raise ConfigError("ABC reference tables are available for the epidemic families only")
    space = make_space_for(cfg, family)
    return space.groups[0].grid


class RunDir:
    def __init__(self, cfg: dict, workflow: str):
        self.path = Path(cfg["out"]) / run_id(cfg)
        (self.path / "tables").mkdir(parents=True, exist_ok=True)
        (self.path / "logs").mkdir(exist_ok=True)
        (self.path / "config.json").write_text(json.dumps({"workflow": workflow, **cfg}, indent=1, sort_keys=True))
        self.result = self.path / "result.jsonl"
        self.result.write_text("")
        self.files: list[str] = []
        handler = logging.FileHandler(self.path / "logs" / "run.log", mode="w")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        self._handler = handler
        log.addHandler(handler)
        log.setLevel(logging.INFO)

    def record(self, rec: dict) -> None:
        with open(self.result, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def table(self, name: str) -> Path:
        p = self.path / "tables" / name
        self.files.append(str(p.relative_to(self.path)))
        return p

    def close(self) -> None:
        log.removeHandler(self._handler)
        self._handler.close()


def _report(run: RunDir, workflow: str, cfg: dict, t0: float, payload: dict) -> dict:
    # wall time goes to the log only so result records stay byte-identical
    log.info("%s finished in %.1f s", workflow, time.perf_counter() - t0)
    rep = {"workflow": workflow, "run_id": run.path.name, "files": run.files, **payload}
    run.record({"report": rep})
    run.close()
    return {**rep, "dir": str(run.path)}


def run_search(cfg: dict) -> dict:
    t0 = time.perf_counter()
    family = make_family(cfg)
    space = make_space_for(cfg, family)
    root = RngStream(int(cfg["seed"]))
    binding = make_binding(cfg, family, stream=root.split(1))
    run = RunDir(cfg, "search")
    scfg = SearchConfig(**cfg["search"], threads=cfg["threads"])
    log.info("search %s over %s with %s/%s", family.name, space.name, binding.method, binding.loss)
    result = multi_start_search(binding, space, scfg, root.split(0))
    with open(run.path / "logs" / "search.jsonl", "w") as fh:
        for i, r in enumerate(result.runs):
            for ev in r.events:
                fh.write(json.dumps({"restart": i, **ev}) + "\n")
    with open(run.table("history.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["restart", "step", "sweep", "design", "loss"])
        for i, r in enumerate(result.runs):
            w.writerow([i, 0, -1, str(r.init), repr(float(r.init_loss))])
            for k, v in enumerate(r.history, 1):
                w.writerow([i, k, v.sweep, str(v.design), repr(float(v.loss))])
    rec = result.to_record()
    run.record({"search": rec})
    return _report(run, "search", cfg, t0, {"design": rec["design"], "avg_loss": rec["avg_loss"],
                                            "evaluations": rec["evaluations"]})


def _designs(cfg: dict, family: Family) -> list[Design]:
    designs = [parse_design(d) for d in cfg.get("designs", [])]
    designs += [equidistant_design(family, int(n)) for n in cfg.get("equidistant", [])]
    if not designs:
        raise ConfigError("no designs given (use --design or --equidistant)")
    return designs


def run_evaluate(cfg: dict) -> dict:
    t0 = time.perf_counter()
    family = make_family(cfg)
    designs = _designs(cfg, family)
    root = RngStream(int(cfg["seed"]))
    binding = make_binding(cfg, family, stream=root.split(1))
    run = RunDir(cfg, "evaluate")
    estimates = [binding(d, root.split(0).split(i)) for i, d in enumerate(designs)]
    write_curve(estimates, run.table("evaluate.csv"))
    for e in estimates:
        run.record({"estimate": e.to_record()})
    return _report(run, "evaluate", cfg, t0, {"values": [e.value for e in estimates]})


def _single_point_designs(cfg: dict, family: Family) -> list[Design]:
    space = make_space_for({**cfg, "n_points": 1}, family)
    if len(space.groups) != 1:
        raise ConfigError("sweeps need a single-group design space")
    return [Design.of([v]) for v in space.groups[0].grid]


def run_sweep(cfg: dict) -> dict:
    """One-point loss curves over the grid, one per method, with common random numbers."""
    t0 = time.perf_counter()
    family = make_family(cfg)
    designs = _single_point_designs(cfg, family)
    root = RngStream(int(cfg["seed"]))
    run = RunDir(cfg, "sweep")
    payload = {}
    with open(run.table("sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "method", "loss", "value", "se"])
        for method in cfg.get("methods") or [cfg["method"]]:
            binding = make_binding(cfg, family, method, root.split(1))
            curve = loss_curve(binding, designs, root.split(0))
            for d, e in zip(designs, curve):
                w.writerow([d.flat()[0], method, e.loss, repr(float(e.value)), repr(float(e.se))])
            best = min(range(len(curve)), key=lambda i: (curve[i].value, i))
            payload[method] = {"argmin": designs[best].flat()[0], "min": curve[best].value}
            run.record({"sweep": method, "values": [e.value for e in curve]})
    return _report(run, "sweep", cfg, t0, {"curves": payload})


def run_abc_sweep(cfg: dict) -> dict:
    t0 = time.perf_counter()
    family = make_family(cfg)
    designs = _single_point_designs(cfg, family)
    sizes = cfg["sizes"]
    root = RngStream(int(cfg["seed"]))
    run = RunDir(cfg, "abc-sweep")
    table = build_reference_table(family, _abc_grid(cfg, family), sizes["R"], root.split(1).split(7))
    table.save(run.table("reference.json").with_suffix(""))
    run.files.append("tables/reference.npz")
    acfg = AbcConfig(sizes["retain"], sizes["j_abc"])
    curve = [abc_expected_loss(d, family, table, acfg, cfg["loss"], root.split(0)) for d in designs]
    write_curve(curve, run.table("abc_sweep.csv"))
    best = min(range(len(curve)), key=lambda i: (curve[i].value, i))
    run.record({"abc_sweep": [e.value for e in curve]})
    return _report(run, "abc-sweep", cfg, t0, {"argmin": designs[best].flat()[0], "min": curve[best].value})


def likelihood_oracle(cfg: dict, family: Family, design: Design, stream: RngStream):
    if family.name == "epi2":
        return EpiBayesOracle(design, cfg["evidence"], cfg["sizes"]["Q"], family.priors)
    if family.name.startswith("logistic-fe"):
        return LogisticISOracle(design, family.priors, cfg["sizes"]["S"], stream)
    raise ConfigError("likelihood validation is available for epi2 and logistic-fe only")


def run_validate(cfg: dict, designs: list[Design] | None = None) -> dict:
    """Forest error rate and misclassification matrix per design, plus optional
    posterior probabilities of the true model from exact likelihoods."""
    t0 = time.perf_counter()
    family = make_family(cfg)
    designs = designs if designs is not None else _designs(cfg, family)
    sizes = cfg["sizes"]
    root = RngStream(int(cfg["seed"]))
    if cfg["likelihood"]:
        likelihood_oracle(cfg, family, designs[0], root)  # fail early on unsupported families
    run = RunDir(cfg, "validate")
    rows = []
    for i, d in enumerate(designs):
        res = validate_forest(d, family, sizes["validate_train"], sizes["validate_test"], _priors(cfg, family),
                              root.split(0).split(i), forest_cfg=ForestConfig(n_trees=sizes["n_trees"]),
                              test_mode=cfg["test_mode"])
        matrix_to_csv(res.matrix, family.model_names, run.table(f"matrix-{i}.csv"))
        rec = {"design": [list(b) for b in d.blocks], "error": res.error, "se": res.se,
               "matrix": res.matrix.tolist()}
        if cfg["likelihood"]:
            stream = root.split(1).split(i)
            oracle = likelihood_oracle(cfg, family, d, stream.split(1))
            data = generate_labeled_set(family, d, sizes["likelihood_j"], _priors(cfg, family), stream.split(0))
            probs = oracle(data.features)
            p_true = probs[np.arange(len(data)), data.labels - 1]
            with open(run.table(f"posterior-{i}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["label", "p_true"])
                w.writerows(zip(data.labels.tolist(), [repr(float(p)) for p in p_true]))
            rec["bayes_error"] = float(np.mean(np.argmax(probs, axis=1) + 1 != data.labels))
            rec["mean_p_true"] = float(p_true.mean())
        run.record({"validate": rec})
        rows.append(rec)
    with open(run.table("validate.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["design", "error", "se"])
        for r in rows:
            w.writerow([str(Design(tuple(tuple(b) for b in r["design"]))), repr(float(r["error"])), repr(float(r["se"]))])
    return _report(run, "validate", cfg, t0, {"errors": [r["error"] for r in rows]})


RUNNERS = {"search": run_search, "evaluate": run_evaluate, "sweep": run_sweep, "abc-sweep": run_abc_sweep,
           "validate": run_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="classdesign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in WORKFLOWS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out", type=str)
        p.add_argument("--family", type=str)
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--loss", choices=("01", "mdl"))
        p.add_argument("--n-points", type=int, dest="n_points")
        p.add_argument("--restarts", type=int)
        p.add_argument("--design", action="append", dest="designs",
                       help='design such as "0.75,4.5" or "0.1;2,10"; repeatable')
        p.add_argument("--equidistant", action="append", type=int, help="equidistant design with N points")
        p.add_argument("--likelihood", action="store_true", default=None,
                       help="also compute posterior model probabilities (validate)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config entry, e.g. sizes.j_train=2000 (value parsed as JSON)")
    return parser


def _flags(args: argparse.Namespace) -> dict:
    flags = {k: getattr(args, k) for k in ("seed", "threads", "out", "family", "method", "loss", "n_points",
                                           "designs", "equidistant", "likelihood")}
    flags["search.restarts"] = args.restarts
    for item in args.set:
        key, _, raw = item.partition("=")
        if not key or not _:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            flags[key] = json.loads(raw)
        except json.JSONDecodeError:
            flags[key] = raw
    return flags


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_cfg = json.loads(args.config.read_text()) if args.config else {}
        cfg = resolve_config(file_cfg, _flags(args))
        report = RUNNERS[args.command](cfg)
    except (ConfigError, DesignError, OSError, json.JSONDecodeError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2
    print(json.dumps(report, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
