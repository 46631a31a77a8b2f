"""Static plots of sweep curves: gnuplot data blocks plus an SVG rendering."""

from __future__ import annotations

import os

import numpy as np


def write_gnuplot_data(rows, path) -> None:
    """One blank-line separated block per ``(N, g, ensemble)``: ``T std se``."""
    groups = {}
    for r in rows:
        groups.setdefault((r["N"], r["g"], r["ensemble"]), []).append(r)
    with open(path, "w") as fh:
        for (n, g, ens), sel in sorted(groups.items()):
            fh.write(f"# N={n} g={g!r} ensemble={ens}\n")
            for r in sorted(sel, key=lambda r: r["T"]):
                fh.write(f"{r['T']!r} {r['std_n0']!r} {r['se_std']!r}\n")
            fh.write("\n\n")


def plot_sweep(rows, out_dir, normalized: bool = False) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    write_gnuplot_data(rows, os.path.join(out_dir, "sweep.dat"))
    xkey, ykey = ("t_norm", "std_norm") if normalized else ("T", "std_n0")
    fig, ax = plt.subplots(figsize=(6, 4))
    groups = {}
    for r in rows:
        if r.get(xkey) is None or r.get(ykey) is None:
            continue
        groups.setdefault((r["N"], r["g"], r["ensemble"]), []).append(r)
    for (n, g, ens), sel in sorted(groups.items()):
        sel = sorted(sel, key=lambda r: r[xkey])
        x = np.array([r[xkey] for r in sel])
        y = np.array([r[ykey] for r in sel])
        ax.plot(x, y, "o-" if ens == "canonical" else "s--", ms=3, label=f"N={n} g={g:.3g} {ens[:5]}")
    ax.set_xlabel("T / T_p0" if normalized else "T")
    ax.set_ylabel("std(N_0) / peak0" if normalized else "std(N_0)")
    ax.legend(fontsize=6)
    path = os.path.join(out_dir, "sweep.svg")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
