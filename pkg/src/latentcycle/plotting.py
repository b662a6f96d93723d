"""Optional matplotlib figures for the faithfulness simulations.

matplotlib is imported lazily so the rest of the package works without it.
"""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from latentcycle.errors import ValidationError


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise ValidationError("--figures needs matplotlib; install it or drop the flag") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def faithsim_figures(kind: str, rows: Sequence[dict], out_dir) -> list[Path]:
    """Write PNG figures for ``faithsim`` rows into ``out_dir``.

    Returns
    -------
    list of Path
        The files written.
    """
    plt = _pyplot()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if kind == "sweep":
        cells = defaultdict(list)
        for r in rows:
            cells[(r["p"], r["threshold"], r["assumption"])].append((r["nb"], r["proportion"]))
        for p in sorted({r["p"] for r in rows}):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for (pp, th, name), pts in sorted(cells.items()):
                if pp != p:
                    continue
                pts.sort()
                ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o", label=f"{name} {th:g}")
            ax.set_xlabel("expected neighbours")
            ax.set_ylabel("violation proportion")
            ax.set_title(f"p = {p}")
            ax.legend(fontsize="small")
            written.append(_save(fig, plt, out / f"sweep_p{p}.png"))
    elif kind == "maxk":
        groups = defaultdict(list)
        for r in rows:
            if math.isfinite(r["max_k"]):
                groups[(r["p"], r["nb"])].append(r["max_k"])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (p, nb), ks in sorted(groups.items()):
            ax.hist(ks, bins=30, histtype="step", label=f"p={p}, nb={nb:g}")
        ax.set_xlabel("largest satisfiable k")
        ax.set_ylabel("graphs")
        ax.legend(fontsize="small")
        written.append(_save(fig, plt, out / "maxk.png"))
    elif kind == "profile":
        groups = defaultdict(list)
        for r in rows:
            groups[(r["p"], r["nb"])].append(((r["bin_lo"] + r["bin_hi"]) / 2, r["proportion"]))
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (p, nb), pts in sorted(groups.items()):
            ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o", label=f"p={p}, nb={nb:g}")
        ax.set_xlabel("|edge coefficient|")
        ax.set_ylabel("violation proportion")
        ax.legend(fontsize="small")
        written.append(_save(fig, plt, out / "profile.png"))
    else:
        raise ValidationError(f"no figures for kind {kind!r}")
    return written


def _save(fig, plt, path: Path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path
