"""Log-log figures for convergence and robustness sweeps, written as SVG."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_QUANTITY_LABEL = {
    "l2_error": r"$L^2$ error",
    "h1_error": r"$H^1$ seminorm error",
    "scn": "scaled condition number",
}

_KEY = {"l2_error": "l2", "h1_error": "h1", "scn": "scn"}


def _style():
    plt.rcParams["font.size"] = 10
    plt.rcParams["axes.grid"] = True
    plt.rcParams["grid.alpha"] = 0.3


def convergence_figure(records, quantity: str, path: str, title: str = "") -> str | None:
    """One log-log line per method: quantity against mesh size h."""
    _style()
    key = _KEY[quantity]
    methods = sorted({r.method for r in records})
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    drew = False
    for m in methods:
        recs = sorted((r for r in records
                       if r.method == m and not r.failed and getattr(r, key)),
                      key=lambda r: r.h)
        hs = [r.h for r in recs]
        qs = [getattr(r, key) for r in recs]
        if len(hs) >= 2:
            ax.loglog(hs, qs, "o-", label=m)
            drew = True
    if not drew:
        plt.close(fig)
        return None
    ax.set_xlabel("h")
    ax.set_ylabel(_QUANTITY_LABEL[quantity])
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def robustness_figure(records, path: str, title: str = "") -> str | None:
    """SCN against the interface offset delta, per method."""
    _style()
    methods = sorted({r.method for r in records})
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    drew = False
    for m in methods:
        recs = sorted((r for r in records
                       if r.method == m and not r.failed
                       and r.scn is not None and r.delta is not None),
                      key=lambda r: r.delta)
        ds = [r.delta for r in recs]
        qs = [r.scn for r in recs]
        if len(ds) >= 2:
            ax.loglog(ds, qs, "o-", label=m)
            drew = True
    if not drew:
        plt.close(fig)
        return None
    ax.set_xlabel(r"$\delta$")
    ax.set_ylabel("scaled condition number")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_report(records, example: str, out_dir: str) -> list[str]:
    """Write the SVG set for one sweep into out_dir; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if example == "robustness":
        p = robustness_figure(records, os.path.join(out_dir, "robustness_scn.svg"),
                              title="SCN vs interface offset")
        if p:
            written.append(p)
        return written
    for quantity in ("l2_error", "h1_error", "scn"):
        p = convergence_figure(records, quantity,
                               os.path.join(out_dir, f"{example}_{quantity}.svg"),
                               title=f"{example}: {_QUANTITY_LABEL[quantity]} vs h")
        if p:
            written.append(p)
    return written
