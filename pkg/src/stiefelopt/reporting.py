"""CSV reports and the figures rendered next to them.

The CSV files are the machine-readable contract; every figure is a plain
matplotlib rendering of one CSV's series, written as a PNG beside it.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .training import EpochRow

__all__ = [
    "format_float",
    "write_loss_csv",
    "write_comparison_csv",
    "write_config_echo",
    "render_loss_figure",
    "render_comparison_figure",
]


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, stable across runs."""
    return repr(float(x))


def write_loss_csv(path: str, rows: list[EpochRow]) -> None:
    with open(path, "w") as f:
        f.write("epoch,mean_train_loss,max_orth_drift,wall_seconds\n")
        for row in rows:
            f.write(",".join([
                str(row.epoch),
                format_float(row.mean_train_loss),
                format_float(row.max_orth_drift),
                format_float(row.wall_seconds),
            ]) + "\n")


def write_comparison_csv(path: str, labels: list[str],
                         curves: list[list[float]],
                         update_seconds: list[float]) -> None:
    """Merged per-epoch loss curves, one column per scenario, plus a final
    row with each scenario's total optimizer-update time."""
    with open(path, "w") as f:
        f.write("epoch," + ",".join(labels) + "\n")
        for i, values in enumerate(zip(*curves), start=1):
            f.write(str(i) + "," + ",".join(format_float(v) for v in values) + "\n")
        f.write("update_seconds," + ",".join(format_float(v) for v in update_seconds) + "\n")


def write_config_echo(path: str, resolved: dict) -> None:
    with open(path, "w") as f:
        for key in sorted(resolved):
            f.write(f"{key} = {resolved[key]}\n")


def render_loss_figure(path: str, rows: list[EpochRow], title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r.epoch for r in rows]
    ax.plot(epochs, [r.mean_train_loss for r in rows], lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_comparison_figure(path: str, labels: list[str],
                             curves: list[list[float]]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in zip(labels, curves):
        ax.plot(range(1, len(values) + 1), values, lw=1.5, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
