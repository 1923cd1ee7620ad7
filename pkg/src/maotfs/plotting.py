"""Figure rendering for experiment outputs.

Every report writes a delimited dataset plus an SVG figure next to it.
Figures are non-interactive artifacts: the Agg backend is forced, SVG
output carries the run header in its metadata, and the hash salt is pinned
so element ids stay stable across identical runs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 4.0),
        "axes.grid": True,
        "grid.alpha": 0.3,
        "svg.fonttype": "none",
    }
)


def _save(fig, path, header: str):
    plt.rcParams["svg.hashsalt"] = header
    fig.savefig(
        path,
        format="svg",
        bbox_inches="tight",
        metadata={"Date": None, "Description": header},
    )
    plt.close(fig)


def save_nmse_figure(summary_rows, path, header):
    """Median estimation error versus SNR, one curve per method."""
    fig, ax = plt.subplots()
    methods = sorted({r["method"] for r in summary_rows})
    markers = {"sblvi": "o", "lmmse": "s", "ep": "^"}
    for method in methods:
        pts = sorted(
            (r["snr_db"], r["median_nmse_db"]) for r in summary_rows if r["method"] == method
        )
        ax.plot(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker=markers.get(method, "x"),
            label=method,
        )
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("median NMSE (dB)")
    ax.set_title("Channel estimation error vs SNR")
    ax.legend()
    _save(fig, path, header)


def save_training_figure(curves, path, header, window=200):
    """Sliding-mean reward per episode; one curve per learning rate."""
    fig, ax = plt.subplots()
    for label, logs in curves.items():
        rewards = np.array([row.mean_reward_est for row in logs])
        sliding = sliding_mean(rewards, window)
        ax.plot(np.arange(1, len(rewards) + 1), sliding, label=f"lr={label}")
    ax.set_xlabel("episode")
    ax.set_ylabel(f"reward, sliding mean over {window}")
    ax.set_title("Training reward")
    ax.legend()
    _save(fig, path, header)


def save_compare_figure(records, win_fraction, path, header):
    """Per-environment mean gains for the movable antenna against the fixed one."""
    fig, ax = plt.subplots()
    if records:
        fpa = [r["fpa_gain_true"] for r in records]
        ma = [r["ma_mean_gain_true"] for r in records]
        ax.scatter(fpa, ma, s=18)
        limit = max(max(fpa), max(ma)) * 1.05
        ax.plot([0, limit], [0, limit], "k--", linewidth=1, label="parity")
        ax.legend()
    ax.set_xlabel("fixed-antenna gain")
    ax.set_ylabel("movable-antenna mean gain")
    ax.set_title(f"Win fraction: {win_fraction:.2f}")
    _save(fig, path, header)


def save_heatmap_figure(gains, positions, ma_final, fpa_position, trajectory, path, header):
    """Gain heatmap with the final movable-antenna cell and the fixed cell marked."""
    fig, ax = plt.subplots(figsize=(6.2, 5.2))
    extent = (positions[0], positions[-1], positions[0], positions[-1])
    image = ax.imshow(
        gains.T, origin="lower", extent=extent, aspect="equal", cmap="viridis"
    )
    fig.colorbar(image, ax=ax, label="channel gain")
    if trajectory:
        xs = [p[0] for p in trajectory]
        ys = [p[1] for p in trajectory]
        ax.plot(xs, ys, color="white", linewidth=0.8, alpha=0.7)
    ax.scatter(*ma_final, marker="*", s=140, color="red", label="MA final", gid="ma-marker")
    ax.scatter(*fpa_position, marker="X", s=90, color="black", label="FPA", gid="fpa-marker")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"gain range [{gains.min():.3g}, {gains.max():.3g}]")
    ax.legend(loc="upper right")
    _save(fig, path, header)


def sliding_mean(values, window: int) -> np.ndarray:
    """Mean over the trailing `window` entries at every index."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    csum = np.cumsum(np.insert(values, 0, 0.0))
    for k in range(len(values)):
        lo = max(0, k - window + 1)
        out[k] = (csum[k + 1] - csum[lo]) / (k + 1 - lo)
    return out
