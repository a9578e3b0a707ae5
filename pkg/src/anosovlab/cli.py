"""Command-line experiment runner.

Every subcommand reads an optional key-value config file, lets flags override
it, runs one experiment and writes a JSON report (sorted keys) or a CSV table
with a fixed header. Exit status: 0 success, 1 invalid configuration,
2 numerical failure; failures still emit a machine-readable error record.

Config file syntax, one entry per line (``#`` starts a comment)::

    map.kind = conservative
    map.epsilon = 0.1
    seeds.rng = 0
    depths.leaf = 60
    tolerances.ks_consistent = 0.05
    output.format = json
    params.points = 100000
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field

import click
import numpy as np

from .errors import ConfigError, NumericalFailure
from .torus_maps import EPSILON_MAX, KINDS, make_map

SUBCOMMANDS = ("exponents", "splitting", "leaf", "angles", "normal-form", "ugibbs", "drift", "gkm", "dichotomy")

# fixed CSV layouts, one per subcommand
CSV_HEADERS = {
    "exponents": ("bundle", "exponent", "std_error"),
    "splitting": ("bundle", "v1", "v2", "v3", "rate"),
    "leaf": ("index", "arclength", "x1", "x2", "x3"),
    "angles": ("bin_lower", "bin_upper", "count"),
    "normal-form": ("quantity", "value"),
    "ugibbs": ("bin_lower", "bin_upper", "count", "density"),
    "drift": ("quad", "epsilon", "tau", "t", "tau_gap", "t_gap", "drift_gap", "gap_over_epsilon"),
    "gkm": ("quantity", "value"),
    "dichotomy": ("quantity", "value"),
}

# parameters each subcommand accepts in the ``params`` section, with defaults
PARAMS = {
    "exponents": {"samples": 64, "horizon": 200},
    "splitting": {"point": "0.1,0.2,0.3"},
    "leaf": {"point": "0.1,0.2,0.3", "bundle": "u", "radius": 0.5, "resolution": 64, "method": "perron"},
    "angles": {"point": "0.1,0.2,0.3", "samples": 16, "max_dist": 0.5, "bins": 18},
    "normal-form": {"point": "0.1,0.2,0.3", "grid": 9, "extent": 1.0, "partner": 0.3},
    "ugibbs": {"iters": 50, "points": 100000, "window": "-0.5,0.5", "bins": 64, "point": "0.1,0.2,0.3",
               "seed_point": "0.3,0.6,0.1", "slab": 0.1},
    "drift": {"point": "0.1,0.2,0.3", "partner_arclength": 2.0, "ell": 8, "C": 100.0,
              "epsilons": "0.1,0.03,0.01", "quads": 1},
    "gkm": {"fd_step": 0.01},
    "dichotomy": {"points": 100000, "loop_side": 0.1},
}

TOLERANCES = {"ks_consistent": 0.05, "ks_violating": 0.2}


@dataclass
class ExperimentConfig:
    kind: str = "conservative"
    epsilon: float | None = None
    seeds: dict = field(default_factory=lambda: {"rng": 0})
    depths: dict = field(default_factory=lambda: {"splitting": 60, "product": 60, "leaf": 60})
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCES))
    output_format: str = "json"
    output_path: str | None = None
    params: dict = field(default_factory=dict)

    def validate(self, subcommand: str | None = None):
        if self.kind not in KINDS:
            raise ConfigError(f"map.kind must be one of {KINDS}, got {self.kind!r}")
        if self.epsilon is None:
            # unset epsilon: 0 for the linear map, 0.1 otherwise
            self.epsilon = 0.0 if self.kind == "linear" else 0.1
        if not math.isfinite(self.epsilon):
            raise ConfigError("map.epsilon must be finite")
        if self.kind == "linear" and self.epsilon != 0.0:
            raise ConfigError("map.epsilon must be 0 for the linear map")
        if abs(self.epsilon) > EPSILON_MAX:
            raise ConfigError(f"map.epsilon must lie in [-{EPSILON_MAX}, {EPSILON_MAX}], got {self.epsilon}")
        for name, value in self.depths.items():
            if value < 1:
                raise ConfigError(f"depths.{name} must be >= 1, got {value}")
        if self.output_format not in ("json", "csv"):
            raise ConfigError(f"output.format must be json or csv, got {self.output_format!r}")
        if subcommand is not None:
            unknown = set(self.params) - set(PARAMS[subcommand])
            if unknown:
                raise ConfigError(f"unknown params for {subcommand}: {sorted(unknown)}")
        return self

    def param(self, subcommand: str, name: str):
        default = PARAMS[subcommand][name]
        raw = self.params.get(name, default)
        try:
            return type(default)(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"params.{name}: cannot read {raw!r} as {type(default).__name__}") from exc

    def as_dict(self):
        # where the output goes is not part of the experiment
        rec = asdict(self)
        rec.pop("output_path")
        return rec


def _coerce(section, key, raw):
    try:
        if section == "depths" or section == "seeds":
            return int(raw)
        if section == "tolerances":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot read {raw!r}") from exc
    return raw


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``section.key = value`` lines; unknown sections and keys are errors."""
    cfg = base or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        apply_setting(cfg, key, raw, where=f"line {lineno}")
    return cfg


def apply_setting(cfg: ExperimentConfig, key: str, raw: str, where: str = "override"):
    section, _, name = key.partition(".")
    if not name:
        raise ConfigError(f"{where}: key {key!r} needs a section prefix")
    if section == "map":
        if name == "kind":
            cfg.kind = raw
        elif name == "epsilon":
            try:
                cfg.epsilon = float(raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: map.epsilon must be a number") from exc
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    elif section == "seeds":
        if name != "rng":
            raise ConfigError(f"{where}: unknown key {key!r}")
        cfg.seeds[name] = _coerce(section, name, raw)
    elif section == "depths":
        if name not in ("splitting", "product", "leaf"):
            raise ConfigError(f"{where}: unknown key {key!r}")
        cfg.depths[name] = _coerce(section, name, raw)
    elif section == "tolerances":
        if name not in TOLERANCES:
            raise ConfigError(f"{where}: unknown tolerance {name!r}")
        cfg.tolerances[name] = _coerce(section, name, raw)
    elif section == "output":
        if name == "format":
            cfg.output_format = raw
        elif name == "path":
            cfg.output_path = raw
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    elif section == "params":
        cfg.params[name] = raw
    else:
        raise ConfigError(f"{where}: unknown section {section!r}")


def _vector(text, n=3, name="point"):
    try:
        vals = [float(v) for v in str(text).split(",")]
    except ValueError as exc:
        raise ConfigError(f"{name} must be {n} comma-separated numbers") from exc
    if len(vals) != n:
        raise ConfigError(f"{name} must be {n} comma-separated numbers")
    return np.array(vals)


# ---------------------------------------------------------------------------
# experiments: each returns (report, csv rows)


def run_exponents(cfg, model):
    from .splitting import lyapunov_exponents

    exps, err = lyapunov_exponents(model, cfg.param("exponents", "samples"), cfg.param("exponents", "horizon"),
                                   cfg.seeds["rng"], cfg.depths["splitting"])
    report = {
        "exponents": {"s": exps[0], "c": exps[1], "u": exps[2]},
        "std_error": {"s": err[0], "c": err[1], "u": err[2]},
        "sum": float(exps.sum()),
    }
    rows = [(k, exps[i], err[i]) for i, k in enumerate("scu")]
    return report, rows


def run_splitting(cfg, model):
    from .splitting import compute_splitting, one_step_rates

    p = _vector(cfg.param("splitting", "point"))
    frame = compute_splitting(model, p, cfg.depths["splitting"], cfg.seeds["rng"])
    vecs = {"s": frame.v_s, "c": frame.v_c, "u": frame.v_u}
    rates = {k: float(one_step_rates(model, p, v)) for k, v in vecs.items()}
    report = {"point": p, "vectors": vecs, "rates": rates, "residual": frame.residual, "depth": frame.depth}
    rows = [(k, *vecs[k], rates[k]) for k in "scu"]
    return report, rows


def run_leaf(cfg, model):
    from .leaves import grow_leaf

    p = _vector(cfg.param("leaf", "point"))
    seg = grow_leaf(model, p, cfg.param("leaf", "bundle"), cfg.param("leaf", "radius"),
                    cfg.param("leaf", "resolution"), cfg.depths["leaf"], method=cfg.param("leaf", "method"))
    report = {"bundle": seg.bundle, "base": seg.nodes[seg.base_index], "radius": seg.radius,
              "method": seg.method, "residual": seg.residual, "n_nodes": len(seg.nodes),
              "nodes": seg.nodes, "arclengths": seg.arclens}
    rows = [(i, seg.arclens[i], *seg.nodes[i]) for i in range(len(seg.nodes))]
    return report, rows


def run_angles(cfg, model):
    from .leaves import angle_statistics

    stats = angle_statistics(model, _vector(cfg.param("angles", "point")), cfg.param("angles", "samples"),
                             cfg.param("angles", "max_dist"), cfg.param("angles", "bins"), cfg.seeds["rng"],
                             cfg.depths["leaf"])
    edges, counts = stats["edges"], stats["counts"]
    report = {"alphas": stats["alphas"], "counts": counts, "edges": edges,
              "fraction_below_1e-6": stats["fraction_below_1e-6"],
              "max_alpha": float(np.max(stats["alphas"]))}
    rows = [(edges[i], edges[i + 1], int(counts[i])) for i in range(len(counts))]
    return report, rows


def run_normal_form(cfg, model):
    from .normal_forms import affine_law_residual, conjugacy_residual

    p = _vector(cfg.param("normal-form", "point"))
    depth = cfg.depths["product"]
    residual, tail = conjugacy_residual(model, p, cfg.param("normal-form", "grid"),
                                        cfg.param("normal-form", "extent"), depth)
    partner = cfg.param("normal-form", "partner")
    affine_c, rho_c = affine_law_residual(model, "c", p, partner, depth=depth)
    affine_u, rho_u = affine_law_residual(model, "u", p, partner, depth=depth)
    report = {"conjugacy_residual": residual, "tail_bound": tail, "affine_residual_c": affine_c,
              "affine_residual_u": affine_u, "rho_c": rho_c, "rho_u": rho_u}
    rows = sorted(report.items())
    return report, rows


def run_ugibbs(cfg, model):
    from .measures import srb_verdict

    window = tuple(_vector(cfg.param("ugibbs", "window"), 2, "window"))
    if not window[0] < 0 < window[1]:
        raise ConfigError("window must contain 0")
    iters, points = cfg.param("ugibbs", "iters"), cfg.param("ugibbs", "points")
    if iters < 1 or points < 1:
        raise ConfigError("iters and points must be positive")
    res = srb_verdict(model, points, cfg.seeds["rng"], iters, _vector(cfg.param("ugibbs", "point")),
                      _vector(cfg.param("ugibbs", "seed_point"), name="seed_point"), window,
                      cfg.param("ugibbs", "bins"), cfg.param("ugibbs", "slab"),
                      cfg.tolerances["ks_consistent"], cfg.tolerances["ks_violating"])
    report = dict(res, KS=res["ks"], window=list(window))
    edges = res["edges"]
    rows = [(edges[i], edges[i + 1], res["bins"][i], res["density"][i]) for i in range(len(res["bins"]))]
    return report, rows


def run_drift(cfg, model):
    from .drift import build_quadrilateral, drift_gap, synchronization_check, unstable_partner

    if model.kind != "dissipative" and model.kind != "conservative":
        raise ConfigError("drift needs a perturbed map")
    base = _vector(cfg.param("drift", "point"))
    epsilons = _vector(cfg.param("drift", "epsilons"), len(str(cfg.param("drift", "epsilons")).split(",")),
                       "epsilons")
    n_quads = cfg.param("drift", "quads")
    rng = np.random.default_rng(cfg.seeds["rng"])
    quads, rows = [], []
    for i in range(n_quads):
        x = base if i == 0 else rng.random(3)
        x_u = unstable_partner(model, x, cfg.param("drift", "partner_arclength"))
        q = build_quadrilateral(model, x, x_u, cfg.param("drift", "C"), cfg.param("drift", "ell"))
        per_eps = []
        for eps in epsilons:
            sync = synchronization_check(model, q, eps, n_ball=0)
            gap = drift_gap(model, q, eps, sync["tau"][0])
            per_eps.append({"epsilon": eps, "tau": sync["tau"], "t": sync["t"], "tau_gap": sync["tau_gap"],
                            "t_gap": sync["t_gap"], "drift_gap": gap, "gap_over_epsilon": gap / eps})
            rows.append((i, eps, sync["tau"][0], sync["t"][0], sync["tau_gap"], sync["t_gap"], gap, gap / eps))
        quads.append({"quadrilateral": q.as_dict(), "invariants": q.invariants(), "results": per_eps})
    return {"quadrilaterals": quads}, rows


def run_gkm(cfg, model):
    from . import gkm

    if model.kind == "linear":
        raise ConfigError("gkm needs map.kind dissipative or conservative")
    fam, eps = model.kind, model.epsilon
    roots = gkm.char_poly_roots(fam, eps)
    report = {
        "family": fam,
        "epsilon": eps,
        "roots": roots,
        "root_relations": gkm.root_relations(fam, eps),
        "lambda2_derivative": gkm.lambda2_derivative(fam),
        "lambda2_finite_difference": gkm.lambda2_finite_difference(fam, cfg.param("gkm", "fd_step")),
        "accessibility": gkm.accessibility_verdict(fam, eps),
        "centre_sum": gkm.centre_sum_check(fam),
    }
    rows = [("lambda1", roots[0]), ("lambda2", roots[1]), ("lambda3", roots[2]),
            ("lambda2_derivative", report["lambda2_derivative"]),
            ("lambda2_finite_difference", report["lambda2_finite_difference"]),
            ("accessibility", report["accessibility"]), ("centre_sum", report["centre_sum"])]
    return report, rows


def run_dichotomy(cfg, model):
    from .gkm import dichotomy_report

    rep = dichotomy_report(model, cfg.param("dichotomy", "points"), cfg.seeds["rng"],
                           cfg.param("dichotomy", "loop_side"))
    rows = [("accessibility", rep["accessibility"]), ("loop_defect", rep["loop_defect"]),
            ("srb_verdict", rep["srb"]["verdict"]), ("consistent", rep["consistent"])]
    return rep, rows


RUNNERS = {
    "exponents": run_exponents, "splitting": run_splitting, "leaf": run_leaf, "angles": run_angles,
    "normal-form": run_normal_form, "ugibbs": run_ugibbs, "drift": run_drift, "gkm": run_gkm,
    "dichotomy": run_dichotomy,
}


# ---------------------------------------------------------------------------
# serialisation


def _plain(obj):
    """Convert numpy scalars/arrays and tuples to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if hasattr(obj, "as_dict"):
        return _plain(obj.as_dict())
    return obj


def export(report: dict, fmt: str, subcommand: str | None = None, rows=None) -> str:
    """Serialise a report: sorted-key JSON, or RFC 4180 CSV with the subcommand's header."""
    if fmt == "json":
        return json.dumps(_plain(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(CSV_HEADERS[subcommand])
        for row in rows or ():
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else _plain(v) for v in row])
        return buf.getvalue()
    raise ConfigError(f"unknown format {fmt!r}")


def run(subcommand: str, cfg: ExperimentConfig):
    """Run one experiment; returns (exit status, report, csv rows)."""
    try:
        if subcommand not in RUNNERS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        cfg.validate(subcommand)
        model = make_map(cfg.kind, cfg.epsilon)
        with _thread_limit():
            report, rows = RUNNERS[subcommand](cfg, model)
        out = {"status": "ok", "subcommand": subcommand, "config": cfg.as_dict(), "result": report}
        return 0, out, rows
    except (ConfigError, ValueError) as exc:
        return 1, _error_record(subcommand, exc, 1), []
    except NumericalFailure as exc:
        return 2, _error_record(subcommand, exc, 2), []


def _error_record(subcommand, exc, code):
    return {"status": "error", "subcommand": subcommand, "exit_code": code,
            "error": {"type": type(exc).__name__, "message": str(exc)}}


class _thread_limit:
    """Cap BLAS/OpenMP pools at ANOSOVLAB_THREADS when it is set."""

    def __enter__(self):
        value = os.environ.get("ANOSOVLAB_THREADS")
        self._ctx = None
        if value:
            try:
                n = int(value)
            except ValueError as exc:
                raise ConfigError("ANOSOVLAB_THREADS must be a positive integer") from exc
            if n < 1:
                raise ConfigError("ANOSOVLAB_THREADS must be a positive integer")
            from threadpoolctl import threadpool_limits

            self._ctx = threadpool_limits(limits=n)
        return self

    def __exit__(self, *exc):
        if self._ctx is not None:
            self._ctx.unregister()
        return False


# ---------------------------------------------------------------------------
# click front end


def _common(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="key-value config file"),
        click.option("--map", "kind", help="linear, dissipative or conservative"),
        click.option("--epsilon", type=str),
        click.option("--seed", type=str, help="rng seed"),
        click.option("--format", "fmt", help="json or csv"),
        click.option("--output", "output_path", help="write here instead of stdout"),
        click.option("--set", "overrides", multiple=True, help="extra SECTION.KEY=VALUE setting"),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _build_config(subcommand, config_path, kind, epsilon, seed, fmt, output_path, overrides, params):
    cfg = ExperimentConfig()
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                cfg = parse_config(fh.read(), cfg)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    if kind is not None:
        apply_setting(cfg, "map.kind", kind)
    if epsilon is not None:
        apply_setting(cfg, "map.epsilon", epsilon)
    if seed is not None:
        apply_setting(cfg, "seeds.rng", seed)
    if fmt is not None:
        cfg.output_format = fmt
    if output_path is not None:
        cfg.output_path = output_path
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        apply_setting(cfg, key.strip(), raw.strip())
    for name, value in params.items():
        if value is not None:
            cfg.params[name.replace("-", "_")] = value
    return cfg


def _emit(subcommand, status, out, rows, cfg):
    fmt = cfg.output_format if cfg is not None and status == 0 else "json"
    text = export(out, fmt, subcommand, rows)
    path = cfg.output_path if cfg is not None else None
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    return status


def _execute(subcommand, common, params):
    cfg = None
    try:
        cfg = _build_config(subcommand, **common, params=params)
    except ConfigError as exc:
        return _emit(subcommand, 1, _error_record(subcommand, exc, 1), [], None)
    status, out, rows = run(subcommand, cfg)
    return _emit(subcommand, status, out, rows, cfg)


@click.group()
def cli():
    """Experiments on perturbed toral automorphisms of T^3."""


def _subcommand(name, *param_options):
    def deco(fn):
        def command(config_path, kind, epsilon, seed, fmt, output_path, overrides, **params):
            common = dict(config_path=config_path, kind=kind, epsilon=epsilon, seed=seed, fmt=fmt,
                          output_path=output_path, overrides=overrides)
            sys.exit(_execute(name, common, params))

        command.__doc__ = fn.__doc__
        command.__name__ = fn.__name__
        wrapped = _common(command)
        for opt in reversed(param_options):
            wrapped = opt(wrapped)
        return cli.command(name)(wrapped)
    return deco


def _opt(flag, name=None):
    if name:
        return click.option(flag, name, type=str, default=None)
    return click.option(flag, type=str, default=None)


@_subcommand("exponents", _opt("--samples"), _opt("--horizon"))
def exponents():
    """Lyapunov exponents of E^s, E^c, E^u."""


@_subcommand("splitting", _opt("--point"))
def splitting():
    """Invariant splitting and one-step rates at a point."""


@_subcommand("leaf", _opt("--point"), _opt("--bundle"), _opt("--radius"), _opt("--resolution"), _opt("--method"))
def leaf():
    """Local stable, centre or unstable leaf through a point."""


@_subcommand("angles", _opt("--point"), _opt("--samples"), _opt("--max-dist"), _opt("--bins"))
def angles():
    """Histogram of the stable-holonomy twist angle along the stable leaf."""


@_subcommand("normal-form", _opt("--point"), _opt("--grid"), _opt("--extent"), _opt("--partner"))
def normal_form():
    """Normal-form conjugacy residual and affine change-of-chart residuals."""


@_subcommand("ugibbs", _opt("--iters"), _opt("--points"), _opt("--window"), _opt("--bins"), _opt("--point"),
             _opt("--seed-point"), _opt("--slab"))
def ugibbs():
    """u-Gibbs cloud, leaf-wise quotient measure and SRB verdict."""


@_subcommand("drift", _opt("--point"), _opt("--partner-arclength"), _opt("--ell"), _opt("--C", "C"),
             _opt("--epsilons"), _opt("--quads"))
def drift():
    """Stopping times, synchronisation and centre drift on quadrilaterals."""


@_subcommand("gkm", _opt("--fd-step"))
def gkm():
    """Fixed-point eigenvalues, lambda_2'(0) and the accessibility verdict."""


@_subcommand("dichotomy", _opt("--points"), _opt("--loop-side"))
def dichotomy():
    """Accessibility, su-loop defect and SRB test in one record."""


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        # usage problems count as validation errors
        click.echo(export(_error_record(None, exc, 1), "json"), nl=False)
        return 1
    except SystemExit as exc:
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
