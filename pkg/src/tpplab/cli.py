"""Command-line entry point: simulate, train, construct, bounds, experiment.

Every subcommand reads a JSON config (``--config``), writes its artifacts into
``--out`` and embeds {tool version, config hash, seed} in a manifest.  Options
can also come from environment variables ``TPPLAB_<COMMAND>_<OPTION>``, e.g.
``TPPLAB_SIMULATE_SEED=3``.

Exit codes: 0 success, 2 configuration error, 3 numeric or certification
failure, 4 I/O error.
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, fields

import click

from . import __version__
from . import catalogue as cat
from . import constructive as C
from . import experiments as E
from . import rnn
from .bounds import BoundConfig, covering_log, stochastic_error_bound
from .core import (TailBound, model_from_doc, model_to_doc, read_jsonl, simulate_many,
                   tail_constants, validate, write_jsonl)
from .errors import (ConfigError, ConstructionError, DomainError, EvaluationError, NumericError,
                     TrainingError)
from .rnn import RnnConfig
from .train import TrainConfig, fit_erm, init_params, write_trace

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class CliFailure(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _exit_guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CliFailure as exc:
            code, msg = exc.code, str(exc)
        except (ConfigError, DomainError, json.JSONDecodeError, KeyError, TypeError) as exc:
            code, msg = EXIT_CONFIG, f"configuration error: {exc}"
        except ConstructionError as exc:
            where = f" [component: {exc.component}]" if exc.component else ""
            code, msg = EXIT_NUMERIC, f"certification failed{where}: {exc}"
        except (NumericError, EvaluationError, TrainingError, ArithmeticError) as exc:
            code, msg = EXIT_NUMERIC, f"numeric failure: {exc}"
        except OSError as exc:
            code, msg = EXIT_IO, f"I/O error: {exc}"
        click.echo(f"error: {msg}", err=True)
        sys.exit(code)
    return wrapper


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliFailure(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliFailure(f"config {path} is not valid JSON: {exc}", EXIT_CONFIG) from exc
    if not isinstance(doc, dict):
        raise CliFailure(f"config {path} must be a JSON object", EXIT_CONFIG)
    return doc


def _canonical(doc) -> str:
    return json.dumps(E._clean(doc), sort_keys=True, separators=(",", ":"))


def config_hash(doc) -> str:
    return hashlib.sha256(_canonical(doc).encode()).hexdigest()[:16]


def _manifest(command: str, cfg: dict, seed: int, outputs: list, extra: dict | None = None) -> dict:
    doc = {"tool": "tpplab", "version": __version__, "command": command, "config": cfg,
           "config_hash": config_hash(cfg), "seed": seed, "outputs": sorted(outputs)}
    if extra:
        doc.update(extra)
    return doc


def _ensure_out(out) -> str:
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise CliFailure(f"cannot create output directory {out}: {exc}", EXIT_IO) from exc
    if not os.access(out, os.W_OK):
        raise CliFailure(f"output directory {out} is not writable", EXIT_IO)
    return out


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _dataclass_from(cls, doc: dict, **fixed):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields {sorted(unknown)}")
    args = dict(doc)
    for k in ("widths", "free"):
        if k in args and args[k] is not None:
            args[k] = tuple(args[k])
    args.update(fixed)
    return cls(**args)


def common(fn):
    fn = click.option("--quad-tol", type=float, default=None, help="Quadrature tolerance override.")(fn)
    fn = click.option("--workers", type=int, default=None, help="Worker processes (default: CPU count).")(fn)
    fn = click.option("--out", "out", type=click.Path(file_okay=False), default=".", show_default=True,
                      help="Output directory.")(fn)
    fn = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                      help="Global seed (overrides the config).")(fn)
    fn = click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
                      help="JSON config file.")(fn)
    return fn


def _seed(cli_seed, cfg: dict) -> int:
    seed = cli_seed if cli_seed is not None else cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    return seed


@click.group(context_settings={"auto_envvar_prefix": "TPPLAB", "help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="tpplab")
def main():
    """Temporal point process laboratory."""


# --------------------------------------------------------------- simulate

@main.command()
@common
@click.option("--n", "n", type=click.IntRange(0), default=None, help="Number of sequences.")
@click.option("--horizon", type=float, default=None, help="Observation horizon T.")
@_exit_guard
def simulate(config, seed, out, workers, quad_tol, n, horizon):
    """Simulate sequences from a model spec into sequences.jsonl."""
    cfg = _load_config(config)
    seed = _seed(seed, cfg)
    if "model" not in cfg:
        raise ConfigError("simulate config needs a 'model' spec")
    model = model_from_doc(cfg["model"])
    n = n if n is not None else int(cfg.get("n", 1))
    T = float(horizon if horizon is not None else cfg.get("horizon", 1.0))
    validate(model, T)
    seqs = simulate_many(model, T, n, seed)
    eff = {"model": model_to_doc(model), "n": n, "horizon": T}
    _ensure_out(out)
    write_jsonl(os.path.join(out, "sequences.jsonl"), seqs)
    counts = [len(s) for s in seqs]
    mean = sum(counts) / n if n else math.nan
    E.write_json(os.path.join(out, "manifest.json"),
                 _manifest("simulate", eff, seed, ["sequences.jsonl"], {"mean_events": mean}))
    click.echo(f"wrote {n} sequences (mean events {mean:.6g})")


# ------------------------------------------------------------------ train

@main.command()
@common
@click.option("--data", type=click.Path(dir_okay=False), default=None, help="Training JSONL.")
@click.option("--val", type=click.Path(dir_okay=False), default=None, help="Validation JSONL.")
@_exit_guard
def train(config, seed, out, workers, quad_tol, data, val):
    """Fit an RNN-TPP by projected ERM; writes checkpoint.json and trace.csv."""
    cfg = _load_config(config)
    seed = _seed(seed, cfg)
    data = data or cfg.get("data")
    val = val or cfg.get("val")
    if not data:
        raise ConfigError("train needs a data path")
    for path in [data] + ([val] if val else []):
        if not os.path.isfile(path):
            raise CliFailure(f"data file {path} not found", EXIT_IO)
    arch = _dataclass_from(RnnConfig, cfg.get("arch", {"widths": [8]}))
    tdoc = dict(cfg.get("train", {}))
    if quad_tol is not None:
        tdoc["quad_tol"] = quad_tol
    tcfg = _dataclass_from(TrainConfig, tdoc, seed=seed % 2**63)
    scheme = cfg.get("init", "small-uniform")
    warm = rnn.load(cfg["warm_start"]) if scheme == "constructive-warm-start" else None
    train_seqs = read_jsonl(data)
    val_seqs = read_jsonl(val) if val else None
    init = init_params(arch, scheme, seed, warm)
    model, trace = fit_erm(init, train_seqs, tcfg, val_seqs)
    eff = {"arch": arch.to_doc(), "train": asdict(tcfg), "init": scheme,
           "data": os.path.basename(data), "val": os.path.basename(val) if val else None}
    model.meta = dict(model.meta, tool_version=__version__, config_hash=config_hash(eff), seed=seed)
    _ensure_out(out)
    rnn.save(model, os.path.join(out, "checkpoint.json"))
    write_trace(os.path.join(out, "trace.csv"), trace)
    last = trace[-1]
    E.write_json(os.path.join(out, "manifest.json"),
                 _manifest("train", eff, seed, ["checkpoint.json", "trace.csv"],
                           {"final_train_nll": last.mean_train_nll, "final_val_nll": last.mean_val_nll}))
    val_txt = f"{last.mean_val_nll:.10g}" if val_seqs else "n/a (no validation set)"
    click.echo(f"initial mean val NLL {trace[0].mean_val_nll:.10g}; " if val_seqs else "", nl=False)
    click.echo(f"final mean train NLL {last.mean_train_nll:.10g}; final mean val NLL {val_txt}")


# -------------------------------------------------------------- construct

THEOREMS = ("t4", "t5", "t6", "t7")


def build_from_config(theorem: str, cfg: dict, seed: int):
    """Dispatch a construct config to the matching builder; returns (model, truth, T, s0)."""
    truth = model_from_doc(cfg["truth"])
    T = float(cfg.get("T", 1.0))
    budget = float(cfg.get("budget", {"t4": 0.01, "t5": 0.05}.get(theorem, 0.1)))
    width = int(cfg.get("max_width", C.DEFAULT_MAX_WIDTH))
    clamp = cfg.get("clamp")
    s0 = int(cfg.get("s0", 8))
    kind = truth.kind
    if theorem == "t4":
        if kind not in ("NonHomPoisson", "HomPoisson"):
            raise ConfigError("t4 needs a Poisson truth")
        lam0 = truth.background if kind == "NonHomPoisson" else cat.Constant(truth.rate)
        return C.build_poisson_rnn(lam0, T, budget, width, clamp, seed), truth, T, None
    if theorem == "t5":
        if kind != "LinearHawkesExp":
            raise ConfigError("t5 needs a LinearHawkesExp truth")
        m = C.build_vanilla_hawkes_rnn(truth.background, truth.alpha, truth.beta, T, s0, budget, width, clamp, seed)
        return m, truth, T, s0
    if theorem == "t6":
        if kind != "LinearHawkesGeneral":
            raise ConfigError("t6 needs a LinearHawkesGeneral truth")
        m = C.build_linear_hawkes_rnn(truth.background, truth.kernel, T, s0, budget, width,
                                      int(cfg.get("max_order", 16)), cfg.get("k"), clamp, seed)
        return m, truth, T, s0
    if kind != "NonlinearHawkesExp":
        raise ConfigError("t7 needs a NonlinearHawkesExp truth")
    m = C.build_nonlinear_hawkes_rnn(truth.background, truth.alpha, truth.beta, truth.link, T, s0, budget,
                                     width, clamp, seed)
    return m, truth, T, s0


@main.command()
@common
@click.option("--theorem", type=click.Choice(THEOREMS), default=None, help="Which construction.")
@click.option("--budget", type=float, default=None, help="Sup-error budget.")
@click.option("--max-width", type=int, default=None, help="Width cap per fitted component.")
@_exit_guard
def construct(config, seed, out, workers, quad_tol, theorem, budget, max_width):
    """Build a certified RNN-TPP approximating a truth model."""
    cfg = _load_config(config)
    seed = _seed(seed, cfg)
    theorem = theorem or cfg.get("theorem")
    if theorem not in THEOREMS:
        raise ConfigError(f"theorem must be one of {THEOREMS}")
    if budget is not None:
        cfg["budget"] = budget
    if max_width is not None:
        cfg["max_width"] = max_width
    if "truth" not in cfg:
        raise ConfigError("construct config needs a 'truth' model spec")
    model, truth, T, s0 = build_from_config(theorem, cfg, seed)
    cert = dict(C.certificate(model))
    n_check = int(cfg.get("n_check", 100))
    measured = C.measure_sup_error(model, truth, T, s0, n=n_check, seed=seed + 1) if n_check else None
    cert["measured_error"] = measured
    eff = {k: v for k, v in cfg.items() if k != "seed"}
    eff["theorem"] = theorem
    h = config_hash(eff)
    model.meta = dict(model.meta, certificate=cert, config_hash=h, seed=seed)
    _ensure_out(out)
    rnn.save(model, os.path.join(out, "checkpoint.json"))
    side = {"target_model": cert["target_model"], "s_0": cert["s_0"], "budget": cert["budget"],
            "certified_error": cert["certified_error"], "measured_error": measured,
            "component_errors": cert["component_errors"], "theorem": theorem,
            "version": __version__, "config_hash": h, "seed": seed}
    E.write_json(os.path.join(out, "certificate.json"), side)
    E.write_json(os.path.join(out, "manifest.json"),
                 _manifest("construct", eff, seed, ["checkpoint.json", "certificate.json"]))
    click.echo(f"{theorem}: certified error {cert['certified_error']:.6g} <= budget {cert['budget']:.6g}; "
               f"measured {measured if measured is None else format(measured, '.6g')}; "
               f"widths {list(model.config.widths)}")
    if measured is not None and measured > cert["certified_error"]:
        raise CliFailure("measured error exceeds the certificate", EXIT_NUMERIC)


# ----------------------------------------------------------------- bounds

def bounds_report(cfg: dict) -> dict:
    bc = _dataclass_from(BoundConfig, cfg["bound"])
    tdoc = cfg.get("tail", {})
    if "a_N" in tdoc:
        tail = TailBound(float(tdoc["a_N"]), float(tdoc["c_N"]), float(tdoc.get("eta", math.nan)))
    else:
        tail = tail_constants(model_from_doc(tdoc["model"]), float(tdoc.get("eta", 2.0)), bc.T)
    n = int(cfg.get("n", 1000))
    delta = float(cfg.get("delta", 0.05))
    rep = stochastic_error_bound(bc, tail, n, delta, s0=cfg.get("s0"), rule=cfg.get("rule", "standard"))
    N0 = int(cfg.get("N0", rep.s0))
    sweep = [{"eps": float(e), "covering_log": covering_log(bc, N0, float(e))}
             for e in cfg.get("eps_sweep", [1.0, 0.1, 0.01, 0.001])]
    return {"config": bc.to_doc(), "report": rep.to_doc(), "eps_sweep": sweep, "N0": N0}


def _table(rep: dict) -> str:
    r = rep["report"]
    lines = [("s0", r["s0"]), ("log M(s0)", r["log_M"]), ("covering log", r["covering_log"]),
             ("a_N", r["tail"]["a_N"]), ("c_N", r["tail"]["c_N"])]
    lines += [(f"term {k}", v) for k, v in sorted(r["terms"].items())]
    lines.append(("bound", r["value"]))
    w = max(len(k) for k, _ in lines)
    return "\n".join(f"{k:<{w}}  {v!r}" for k, v in lines)


@main.command()
@common
@_exit_guard
def bounds(config, seed, out, workers, quad_tol):
    """Evaluate the stochastic-error bound and a covering-number sweep."""
    cfg = _load_config(config)
    seed = _seed(seed, cfg)
    if "bound" not in cfg:
        raise ConfigError("bounds config needs a 'bound' section")
    rep = bounds_report(cfg)
    eff = {k: v for k, v in cfg.items() if k != "seed"}
    doc = dict(rep, version=__version__, config_hash=config_hash(eff), seed=seed)
    _ensure_out(out)
    E.write_json(os.path.join(out, "bounds.json"), doc)
    E.write_csv(os.path.join(out, "eps_sweep.csv"), rep["eps_sweep"], ["eps", "covering_log"])
    click.echo(_table(rep))
    click.echo(json.dumps(E._clean(rep["report"]), sort_keys=True, indent=1))


# ------------------------------------------------------------- experiment

STUDIES = ("scaling", "counterexample", "lipschitz")


def _run_study(study: str, cfg: dict, seed: int, workers: int, quad_tol):
    if study == "lipschitz":
        levels = cfg.get("L", [1, 2, 3])
        base = dict(cfg.get("bound", {"D": 4, "B_x": 1.5, "B_h": 0.8, "B_b": 1.0, "l_f": 0.01, "u_f": 5.0}))
        rows, per_L = [], {}
        for L in levels:
            bc = _dataclass_from(BoundConfig, dict(base, L=L))
            rep = E.lipschitz_trials(bc, int(cfg.get("trials", 1000)), E.derive_seed(seed, L) % 2**63)
            per_L[str(L)] = rep.max_ratio
            rows += [dict(r, L=L) for r in rep.rows]
        max_ratio = max(per_L.values())
        summary = {"max_ratio": max_ratio, "per_L": per_L, "violations": sum(r["ratio"] > 1 for r in rows),
                   "dominated": max_ratio <= 1.0}
        msg = f"lipschitz: max ratio {max_ratio:.6g} ({'<= 1, dominated' if max_ratio <= 1 else '> 1, VIOLATED'})"
        return summary, rows, ["L", "trial", "events", "interval", "diff", "bound", "ratio"], msg, max_ratio <= 1.0
    if study == "scaling":
        truth = model_from_doc(cfg.get("truth", {"kind": "HomPoisson", "rate": 2.0}))
        arch = _dataclass_from(RnnConfig, cfg.get("arch", {"widths": [16, 16]}))
        tdoc = dict(cfg.get("train", {}))
        if quad_tol is not None:
            tdoc["quad_tol"] = quad_tol
        tcfg = _dataclass_from(TrainConfig, tdoc)
        res = E.scaling_study(truth, arch, cfg.get("n_grid", [50, 200, 800]), tcfg, int(cfg.get("replicates", 3)),
                              float(cfg.get("T", 1.0)), int(cfg.get("n_test", 5000)), seed,
                              cfg.get("estimator", "compensator"), float(cfg.get("val_frac", 0.25)), workers)
        summary = {"table": res.table, "slope": res.slope, "intercept": res.intercept,
                   "decreasing": res.decreasing, "config": res.config}
        msg = f"scaling: slope {res.slope:.6g}; strictly decreasing gaps: {res.decreasing}"
        return summary, res.rows, ["n", "replicate", "status", "gap", "stderr", "epochs"], msg, True
    tcfg = _dataclass_from(TrainConfig, cfg["train"]) if "train" in cfg else None
    res = E.counterexample_study(float(cfg.get("T", 1.0)), tuple(cfg.get("variants", E.VARIANTS)), tcfg,
                                 int(cfg.get("n", 800)), seed, int(cfg.get("n_test", 5000)),
                                 int(cfg.get("width", 8)), cfg.get("init", "oracle"),
                                 cfg.get("estimator", "compensator"), float(cfg.get("budget", 0.02)))
    summary = res.to_doc()
    rows = [dict(variant=v, **{k: e[k] for k in ("gap", "stderr", "mean_candidate_nll", "mean_truth_nll")})
            for v, e in res.estimates.items()]
    msg = (f"counterexample: lower bound {res.lower_bound['bound']:.6g}; ordering "
           f"{'holds' if res.ordering_ok else 'FAILS'} (separations {', '.join(f'{k} {v:.3g}' for k, v in res.separations.items())})")
    return summary, rows, ["variant", "gap", "stderr", "mean_candidate_nll", "mean_truth_nll"], msg, res.ordering_ok


@main.command()
@click.argument("study", type=click.Choice(STUDIES))
@common
@_exit_guard
def experiment(study, config, seed, out, workers, quad_tol):
    """Run a study (scaling, counterexample or lipschitz) and write CSV and JSON outputs."""
    cfg = _load_config(config)
    seed = _seed(seed, cfg)
    workers = workers or os.cpu_count() or 1
    summary, rows, columns, msg, ok = _run_study(study, cfg, seed, workers, quad_tol)
    eff = {k: v for k, v in cfg.items() if k != "seed"}
    eff["study"] = study
    h = config_hash(eff)
    stem = f"{study}-{h}"
    _ensure_out(out)
    E.write_csv(os.path.join(out, stem + ".csv"), rows, columns)
    E.write_json(os.path.join(out, stem + ".json"),
                 dict(summary, version=__version__, config_hash=h, seed=seed, study=study))
    click.echo(msg)
    if not ok:
        raise CliFailure(f"{study} check failed", EXIT_NUMERIC)


if __name__ == "__main__":
    main()
