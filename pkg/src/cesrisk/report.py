"""Run reports: a JSON-ready dict built from module outputs, plus a text view.

Report builders only copy and label numbers produced elsewhere; the text
renderer only formats them. ``SCHEMA_VERSION`` changes whenever a key is
renamed or removed.
"""

import hashlib
import json
import math

import numpy as np

__all__ = [
    "SCHEMA_VERSION",
    "stars",
    "file_hash",
    "RunReport",
    "fit_block",
    "ols_block",
    "describe_block",
    "dataset_block",
    "mc_block",
    "render_text",
    "to_json",
]

SCHEMA_VERSION = "1.0"
STAR_LEGEND = "* p < 0.05, ** p < 0.01, *** p < 0.001"


def stars(p):
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _num(x):
    """JSON-safe scalar: finite floats pass through, others become strings."""
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else str(x)


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunReport(dict):
    """Ordered mapping with the fixed top-level keys of the JSON schema."""

    def __init__(self, command, invocation):
        super().__init__(
            schema_version=SCHEMA_VERSION,
            command=command,
            invocation=invocation,
            dataset=None,
            tables=[],
            diagnostics=[],
            simulation=None,
            artifacts=[],
            warnings=[],
            notes=[],
        )


def dataset_block(d):
    return {
        "n": int(d.n),
        "site": d.site,
        "crop": d.crop,
        "years": sorted({int(y) for y in d.year}),
        "base_year": int(d.base_year),
        "nitrogen_shift": _num(d.nitrogen_shift),
    }


def describe_block(summaries):
    return [
        {
            "variable": s.name,
            "n": s.n,
            "mean": _num(s.mean),
            "sd": _num(s.sd),
            "min": _num(s.min),
            "max": _num(s.max),
        }
        for s in summaries
    ]


def fit_block(label, title, fit, extra=None):
    pv = fit.pvalues
    rows = [
        {
            "name": n,
            "estimate": _num(e),
            "se": _num(s),
            "p": _num(p),
            "stars": stars(p),
        }
        for n, e, s, p in zip(fit.names, fit.estimates, fit.se, pv)
    ]
    block = {
        "label": label,
        "title": title,
        "rows": rows,
        "n_obs": fit.n_obs,
        "n_params": fit.n_params,
        "ssr": _num(fit.ssr),
        "sigma2": _num(fit.sigma2),
        "converged": bool(fit.converged),
        "iterations": fit.iterations,
        "message": fit.message,
        "multistart_ssr": [_num(v) for v in fit.trace],
    }
    if extra:
        block.update(extra)
    return block


def ols_block(label, title, rep):
    o = rep.ols
    return {
        "label": label,
        "title": title,
        "kind": rep.kind,
        "anova": {
            "model": {"ss": _num(o.ss_model), "df": o.df_model, "ms": _num(o.ms_model)},
            "residual": {"ss": _num(o.ss_resid), "df": o.df_resid, "ms": _num(o.ms_resid)},
            "total": {"ss": _num(o.ss_total), "df": o.n_obs - 1, "ms": _num(o.ms_total)},
        },
        "n_obs": o.n_obs,
        "f": _num(o.f),
        "df": [o.df_model, o.df_resid],
        "prob_f": _num(o.f_pvalue),
        "r2": _num(o.r2),
        "adj_r2": _num(o.adj_r2),
        "root_mse": _num(o.root_mse),
        "rows": [
            {
                "name": n,
                "coef": _num(o.coef[j]),
                "se": _num(o.se[j]),
                "t": _num(o.t[j]),
                "p": _num(o.p[j]),
                "ci": [_num(o.ci_low[j]), _num(o.ci_high[j])],
            }
            for j, n in enumerate(o.names)
        ],
        "verdict": rep.verdict,
        "directions": rep.directions,
    }


def mc_block(summary):
    stages = {}
    for st, params in summary.stages.items():
        stages[st] = [dict(name=k, **{a: _num(b) for a, b in v.as_dict().items()}) for k, v in params.items()]
    return {
        "estimator": summary.estimator,
        "replications": summary.replications,
        "failures": summary.failures,
        "successes": summary.successes,
        "redraws": summary.redraws,
        "stages": stages,
        "failure_messages": list(summary.failure_messages),
    }


def to_json(report):
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


# -- text rendering ----------------------------------------------------------


def _f(x, spec=".4f"):
    if x is None:
        return "."
    if isinstance(x, str):
        return x
    return format(x, spec)


def _render_fit(b, out):
    out.append(b["title"])
    out.append(f"  {'Parameter':<12}{'Estimate':>12}      {'Std. Err.':>10}")
    for r in b["rows"]:
        out.append(f"  {r['name']:<12}{_f(r['estimate']):>12} {r['stars']:<4} {_f(r['se']):>10}")
    state = "converged" if b["converged"] else "NOT converged"
    out.append(
        f"  n = {b['n_obs']}  SSR = {_f(b['ssr'], '.6g')}  sigma2 = {_f(b['sigma2'], '.6g')}  "
        f"{state} ({b['message']}, {b['iterations']} iterations)"
    )
    if "clipped" in b:
        out.append(f"  squared residuals clipped at floor: {b['clipped']}")
    out.append("")


def _render_ols(b, out):
    out.append(b["title"])
    out.append(f"  {'Source':<10}{'SS':>14}{'df':>6}{'MS':>14}")
    for src in ("model", "residual", "total"):
        a = b["anova"][src]
        out.append(f"  {src.capitalize():<10}{_f(a['ss'], '.6g'):>14}{a['df']:>6}{_f(a['ms'], '.6g'):>14}")
    out.append(
        f"  Number of obs = {b['n_obs']}  F({b['df'][0]}, {b['df'][1]}) = {_f(b['f'], '.4f')}  "
        f"Prob > F = {_f(b['prob_f'], '.4f')}"
    )
    out.append(f"  R-squared = {_f(b['r2'])}  Adj R-squared = {_f(b['adj_r2'])}  Root MSE = {_f(b['root_mse'], '.6g')}")
    out.append(f"  {'':<10}{'Coef.':>12}{'Std. Err.':>12}{'t':>9}{'P>|t|':>8}   {'[95% Conf. Interval]':>28}")
    for r in b["rows"]:
        out.append(
            f"  {r['name']:<10}{_f(r['coef'], '.6g'):>12}{_f(r['se'], '.6g'):>12}{_f(r['t'], '.2f'):>9}"
            f"{_f(r['p'], '.3f'):>8}   {_f(r['ci'][0], '.6g'):>14}{_f(r['ci'][1], '.6g'):>14}"
        )
    out.append(f"  verdict (5% level): {b['verdict']}")
    out.append("")


def _render_mc(m, out):
    out.append(
        f"Monte Carlo ({m['estimator']}): {m['replications']} replications, "
        f"{m['failures']} failed, {m['redraws']} redrawn rows"
    )
    for st, rows in m["stages"].items():
        out.append(f"  {st}")
        out.append(
            f"    {'param':<10}{'truth':>11}{'mean':>11}{'bias':>11}{'rmse':>11}{'emp SE':>11}{'mean SE':>11}{'cover':>8}"
        )
        for r in rows:
            out.append(
                f"    {r['name']:<10}{_f(r['truth'], '.5g'):>11}{_f(r['mean'], '.5g'):>11}{_f(r['bias'], '.3g'):>11}"
                f"{_f(r['rmse'], '.3g'):>11}{_f(r['emp_se'], '.3g'):>11}{_f(r['mean_se'], '.3g'):>11}"
                f"{_f(r['coverage'], '.3f'):>8}"
            )
    out.append("")


def render_text(report):
    out = []
    inv = report["invocation"]
    out.append(f"cesrisk {report['command']}  (report schema {report['schema_version']})")
    out.append(f"  argv: {' '.join(inv['argv'])}")
    if inv.get("config_hash"):
        out.append(f"  input sha256: {inv['config_hash']}")
    if inv.get("seed") is not None:
        out.append(f"  seed: {inv['seed']}")
    out.append("")
    d = report["dataset"]
    if d:
        label = " / ".join(x for x in (d["crop"], d["site"]) if x)
        out.append(f"Dataset {label}: n = {d['n']}, years {d['years']}, base year {d['base_year']}")
        out.append("")
    if report.get("summary"):
        out.append("Sample summary statistics (nitrogen as recorded, before the +1 shift)")
        out.append(f"  {'Variable':<10}{'N':>6}{'Mean':>12}{'Std. Dev.':>12}{'Min':>10}{'Max':>10}")
        for r in report["summary"]:
            out.append(
                f"  {r['variable']:<10}{r['n']:>6}{_f(r['mean'], '.2f'):>12}{_f(r['sd'], '.2f'):>12}"
                f"{_f(r['min'], '.1f'):>10}{_f(r['max'], '.1f'):>10}"
            )
        out.append("")
    for b in report["tables"]:
        _render_fit(b, out)
    if report["tables"]:
        out.append(f"  {STAR_LEGEND} (two-sided, normal reference)")
        out.append("")
    for b in report["diagnostics"]:
        _render_ols(b, out)
    sim = report["simulation"]
    if sim and "stages" in sim:
        _render_mc(sim, out)
    elif sim:
        out.append(f"Generated {sim['n']} rows (seed {sim['seed']}, {sim['redraws']} redrawn for y <= 0)")
        out.append("")
    for a in report["artifacts"]:
        out.append(f"wrote {a}")
    for w in report["warnings"]:
        out.append(f"warning: {w}")
    for n in report["notes"]:
        out.append(f"note: {n}")
    return "\n".join(out).rstrip() + "\n"
