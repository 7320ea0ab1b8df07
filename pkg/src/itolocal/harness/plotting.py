"""Optional PNG figures for reports (matplotlib, imported lazily)."""

from __future__ import annotations

from pathlib import Path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _col(rows, key):
    return [r[key] for r in rows]


def render(report, out_dir) -> list[Path]:
    """Write the figure(s) for ``report`` into ``out_dir``; returns the files written."""
    plt = _pyplot()
    kind = report.config["kind"]
    rows = report.data
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "formula-check":
        ax.hist(_col(rows, "normalized"), bins=40)
        ax.set_xlabel("|residual| / (1 + |lhs|)")
        ax.set_ylabel("paths")
    elif kind == "convergence":
        ax.loglog(_col(rows, "n_steps"), _col(rows, "mean_abs_residual"), "o-", label="mean |res|")
        ax.loglog(_col(rows, "n_steps"), _col(rows, "mean_normalized"), "s--", label="normalized")
        ax.set_xlabel("n_steps")
        ax.legend()
    elif kind == "occupation":
        ax.scatter(_col(rows, "L_T0_tanaka"), _col(rows, "L_T0_occupation"), s=6)
        ax.set_xlabel("Tanaka estimate of L_T(0)")
        ax.set_ylabel("occupation estimate of L_T(0)")
    elif kind == "mollifier-report":
        for pt in dict.fromkeys(_col(rows, "point")):
            sub = [r for r in rows if r["point"] == pt]
            errs = [max(r["err_dx"], 1e-17) for r in sub]
            ax.loglog(_col(sub, "n"), errs, "o-", label=f"grad error at {pt}")
        ax.set_xlabel("n")
        ax.legend()
    elif kind == "variation":
        ax.semilogx(_col(rows, "cells"), _col(rows, "variation"), "o-")
        ax.set_xlabel("cells")
        ax.set_ylabel("V_P")
    elif kind == "krylov":
        labels = [f"{r['name']} (n={r['n_steps']})" for r in rows]
        ax.barh(labels, _col(rows, "ratio"))
        ax.set_xlabel("lhs / rhs")
    ax.set_title(kind)
    fig.tight_layout()
    path = out / f"{kind}.png"
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return [path]
