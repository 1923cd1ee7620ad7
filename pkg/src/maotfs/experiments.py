"""Experiment orchestration: sweeps, training runs, comparisons, exports.

Every emitted CSV starts with a comment header carrying the software
version, the configuration hash, and the seed, and contains no timestamps,
so re-running with the same configuration and seed reproduces the file
byte for byte.  CSV schemas are documented in the README and stable.
"""

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from . import channel as chan
from . import dqn
from . import estimation as est
from . import otfs
from . import plotting
from .config import ExperimentConfig
from .mdp import AntennaPositioningEnv

log = logging.getLogger(__name__)

NMSE_COLUMNS = ("snr_db", "seed", "method", "nmse_db", "status")
NMSE_SUMMARY_COLUMNS = ("snr_db", "method", "median_nmse_db", "n_ok")
TRAINING_COLUMNS = (
    "episode", "epsilon", "mean_reward_est", "mean_gain_true", "loss_mean", "sliding_mean_200",
)
COMPARE_COLUMNS = (
    "env_index", "seed", "ma_mean_gain_true", "ma_mean_gain_est", "fpa_gain_true", "win",
)

CHECKPOINT_FORMAT = "maotfs-qnet-1"


def _header_lines(cfg: ExperimentConfig, seed: int, extra=()):
    lines = [
        f"# maotfs version={__version__}",
        f"# config_hash={cfg.config_hash()}",
        f"# seed={seed}",
    ]
    lines.extend(f"# {item}" for item in extra)
    return lines


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def read_csv(path):
    """Read one of our CSVs, separating comment header lines from data rows."""
    header = []
    data_lines = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                header.append(line.rstrip("\n"))
            else:
                data_lines.append(line)
    return header, list(csv.reader(data_lines))


def build_env(cfg: ExperimentConfig, record_trajectories=False, fixed_realization=None):
    return AntennaPositioningEnv(
        frame_cfg=cfg.frame,
        channel_cfg=cfg.channel,
        pilot_cfg=cfg.pilot_config(),
        estimator=cfg.estimator,
        grid_side=cfg.grid_side,
        steps_per_episode=cfg.agent.steps_per_episode,
        normalize_rewards=cfg.agent.normalize_rewards,
        data_frames=cfg.data_frames,
        record_trajectories=record_trajectories,
        fixed_realization=fixed_realization,
    )


# ---------------------------------------------------------------------------
# estimation sweep


def simulate_received_frame(cfg: ExperimentConfig, realization, rng, snr_db=None):
    """Pilot frame through the channel with noise at the given SNR."""
    m, n = cfg.frame.num_delay_bins, cfg.frame.num_doppler_bins
    ch = realization
    if snr_db is not None:
        ch = chan.ChannelRealization(
            realization.paths, 10.0 ** (-snr_db / 10.0), realization.wavelength
        )
    frame = est.build_pilot_frame(m, n, cfg.pilot_config(), rng, with_data=cfg.data_frames)
    s = otfs.otfs_modulate(frame)
    r = chan.apply_channel(s, ch, m, rng=rng, add_noise=True)
    return otfs.otfs_demodulate(r, m, n), ch


def _nmse_task(args):
    cfg_dict, master_seed, seed_index, snr_list = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    m, n = cfg.frame.num_delay_bins, cfg.frame.num_doppler_bins
    pilot = cfg.pilot_config()
    seed_ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(seed_index,))
    realization_rng = np.random.default_rng(seed_ss)
    realization = chan.sample_environment(cfg.channel, n, realization_rng)
    h_true = est.true_dd_response(realization, m, n, pilot)

    rows = []
    for snr_index, snr_db in enumerate(snr_list):
        noise_ss = np.random.SeedSequence(
            entropy=master_seed, spawn_key=(seed_index, snr_index)
        )
        y_frame, ch = simulate_received_frame(
            cfg, realization, np.random.default_rng(noise_ss), snr_db=snr_db
        )
        for method in ("sblvi", "lmmse", "ep"):
            try:
                if method == "sblvi":
                    result = est.sblvi_estimate(y_frame, cfg.channel.num_paths, pilot)
                elif method == "lmmse":
                    result = est.lmmse_estimate(
                        y_frame, cfg.channel.num_paths, pilot, ch.noise_variance
                    )
                else:
                    result = est.ep_threshold_estimate(y_frame, pilot, ch.noise_variance)
                value = est.nmse_db(result.h_dd, h_true)
                rows.append((snr_db, seed_index, method, value, "ok"))
            except est.NumericalFailure as exc:
                log.warning("estimator %s failed on seed %d: %s", method, seed_index, exc)
                rows.append((snr_db, seed_index, method, float("nan"), "failed"))
    return rows


def run_nmse_sweep(cfg: ExperimentConfig, snr_list, n_seeds: int, seed: int,
                   out_dir, workers: int = 1):
    """Estimation-error sweep over (SNR, seed, method); writes CSVs and a figure."""
    if n_seeds < 1 or len(snr_list) < 1:
        raise ValueError("need at least one seed and one SNR point")
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(cfg.to_dict(), seed, i, tuple(snr_list)) for i in range(n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_nmse_task, tasks))
    else:
        chunks = [_nmse_task(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))

    summary = []
    for snr_db in snr_list:
        for method in ("sblvi", "lmmse", "ep"):
            values = [
                r[3] for r in rows
                if r[0] == snr_db and r[2] == method and r[4] == "ok" and np.isfinite(r[3])
            ]
            median = float(np.median(values)) if values else float("nan")
            summary.append(
                {"snr_db": snr_db, "method": method,
                 "median_nmse_db": median, "n_ok": len(values)}
            )

    header = _header_lines(cfg, seed, extra=[f"columns={','.join(NMSE_COLUMNS)}"])
    data_path = os.path.join(out_dir, "nmse.csv")
    _write_csv(
        data_path, header, NMSE_COLUMNS,
        [(r[0], r[1], r[2], f"{r[3]:.6f}", r[4]) for r in rows],
    )
    summary_path = os.path.join(out_dir, "nmse_summary.csv")
    _write_csv(
        summary_path,
        _header_lines(cfg, seed, extra=[f"columns={','.join(NMSE_SUMMARY_COLUMNS)}"]),
        NMSE_SUMMARY_COLUMNS,
        [(s["snr_db"], s["method"], f"{s['median_nmse_db']:.6f}", s["n_ok"]) for s in summary],
    )
    plotting.save_nmse_figure(
        summary, os.path.join(out_dir, "nmse.svg"),
        header=f"maotfs {__version__} config={cfg.config_hash()} seed={seed}",
    )
    return rows, summary


# ---------------------------------------------------------------------------
# training


def _alpha_tag(alpha: float) -> str:
    return f"{alpha:.0e}"


def save_checkpoint(path, net: dqn.QNetwork, cfg: ExperimentConfig, seed: int, alpha: float):
    arrays = {f"weight_{i}": w for i, w in enumerate(net.weights)}
    arrays.update({f"bias_{i}": b for i, b in enumerate(net.biases)})
    np.savez(
        path,
        format=CHECKPOINT_FORMAT,
        config_hash=cfg.config_hash(),
        seed=seed,
        learning_rate=alpha,
        **arrays,
    )


def load_checkpoint(path) -> dqn.QNetwork:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = np.load(path, allow_pickle=False)
    if str(data["format"]) != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {data['format']!r}")
    net = dqn.QNetwork()
    net.weights = [data[f"weight_{i}"] for i in range(len(net.weights))]
    net.biases = [data[f"bias_{i}"] for i in range(len(net.biases))]
    return net


def _write_training_csv(path, cfg, seed, alpha, logs):
    rewards = [row.mean_reward_est for row in logs]
    sliding = plotting.sliding_mean(rewards, 200) if logs else []
    rows = [
        (
            row.episode,
            f"{row.epsilon:.6f}",
            f"{row.mean_reward_est:.8f}",
            f"{row.mean_gain_true:.8f}",
            f"{row.loss_mean:.8f}",
            f"{sliding[i]:.8f}",
        )
        for i, row in enumerate(logs)
    ]
    _write_csv(
        path,
        _header_lines(cfg, seed, extra=[
            f"learning_rate={alpha}", f"columns={','.join(TRAINING_COLUMNS)}",
        ]),
        TRAINING_COLUMNS,
        rows,
    )


def run_drl_training(cfg: ExperimentConfig, seed: int, out_dir,
                     alphas=None, record_trajectories=False):
    """Train the positioning agent, once per learning rate.

    Writes a learning-curve CSV (with a 200-episode sliding-mean column) and
    a checkpoint per learning rate, plus a combined reward figure.  On
    divergence the partial log is still written before the error propagates.
    Returns {alpha: (net, logs, env)}.
    """
    os.makedirs(out_dir, exist_ok=True)
    if alphas is None:
        alphas = [cfg.agent.learning_rate]
    results = {}
    curves = {}
    for alpha in alphas:
        run_cfg = replace(cfg, agent=replace(cfg.agent, learning_rate=alpha))
        env = build_env(run_cfg, record_trajectories=record_trajectories)
        tag = _alpha_tag(alpha)
        csv_path = os.path.join(out_dir, f"training_{tag}.csv")
        try:
            net, logs = dqn.train(env, run_cfg.agent, seed)
        except dqn.DivergenceError as exc:
            _write_training_csv(csv_path, run_cfg, seed, alpha, exc.episode_log or [])
            raise
        _write_training_csv(csv_path, run_cfg, seed, alpha, logs)
        save_checkpoint(os.path.join(out_dir, f"checkpoint_{tag}.npz"),
                        net, run_cfg, seed, alpha)
        results[alpha] = (net, logs, env)
        curves[tag] = logs
    plotting.save_training_figure(
        curves, os.path.join(out_dir, "training.svg"),
        header=f"maotfs {__version__} config={cfg.config_hash()} seed={seed}",
    )
    return results


# ---------------------------------------------------------------------------
# comparison and heatmap export


def run_ma_vs_fpa(cfg: ExperimentConfig, checkpoint_path, n_eval_envs: int,
                  seed: int, out_dir):
    """Greedy evaluation on fresh environments against the fixed center antenna."""
    os.makedirs(out_dir, exist_ok=True)
    net = load_checkpoint(checkpoint_path)
    env = build_env(cfg)
    n = cfg.frame.num_doppler_bins
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(1,))
    realizations = [
        chan.sample_environment(cfg.channel, n, np.random.default_rng(child))
        for child in ss.spawn(n_eval_envs)
    ]
    records, win_fraction = dqn.evaluate(net, env, realizations, seed)

    rows = [
        (
            r["env_index"], seed,
            f"{r['ma_mean_gain_true']:.8f}", f"{r['ma_mean_gain_est']:.8f}",
            f"{r['fpa_gain_true']:.8f}", int(r["win"]),
        )
        for r in records
    ]
    path = os.path.join(out_dir, "ma_vs_fpa.csv")
    _write_csv(
        path,
        _header_lines(cfg, seed, extra=[
            f"win_fraction={win_fraction:.6f}",
            f"columns={','.join(COMPARE_COLUMNS)}",
        ]),
        COMPARE_COLUMNS,
        rows,
    )
    plotting.save_compare_figure(
        records, win_fraction, os.path.join(out_dir, "ma_vs_fpa.svg"),
        header=f"maotfs {__version__} config={cfg.config_hash()} seed={seed}",
    )
    return records, win_fraction


def export_heatmap(cfg: ExperimentConfig, seed: int, out_dir, checkpoint_path=None):
    """Gain map of one realization as CSV plus an SVG with MA and FPA markers.

    The movable-antenna marker comes from one greedy episode (with the given
    checkpoint, or an untrained network otherwise); the fixed marker is the
    grid center.
    """
    os.makedirs(out_dir, exist_ok=True)
    n = cfg.frame.num_doppler_bins
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(2,))
    realization_ss, episode_ss, net_ss = ss.spawn(3)
    realization = chan.sample_environment(
        cfg.channel, n, np.random.default_rng(realization_ss)
    )
    grid = chan.AntennaGrid(cfg.channel.wavelength, cfg.grid_side)
    gains = chan.gain_heatmap(realization, grid)

    if checkpoint_path is not None:
        net = load_checkpoint(checkpoint_path)
    else:
        net = dqn.QNetwork(np.random.default_rng(net_ss))
    env = build_env(cfg, record_trajectories=True)
    state = env.reset(np.random.default_rng(episode_ss), realization=realization)
    vec = state.to_vector()
    for _ in range(env.steps_per_episode):
        next_state, _, terminal = env.step(int(np.argmax(net.forward(vec))))
        vec = next_state.to_vector()
        if terminal:
            break
    trajectory = env.trajectories[-1]
    ma_final = trajectory[-1]
    c = grid.center_index
    fpa_position = grid.position(c, c)

    csv_path = os.path.join(out_dir, "heatmap.csv")
    header = _header_lines(cfg, seed, extra=[
        f"wavelength_m={cfg.channel.wavelength!r}",
        f"speed_kmh={cfg.channel.speed_kmh!r}",
        "layout=row i is x index, column j is y index",
    ])
    with open(csv_path, "w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        for i in range(gains.shape[0]):
            writer.writerow(f"{v:.10e}" for v in gains[i])

    plotting.save_heatmap_figure(
        gains, grid.positions(), ma_final, fpa_position, trajectory,
        os.path.join(out_dir, "heatmap.svg"),
        header=f"maotfs {__version__} config={cfg.config_hash()} seed={seed}",
    )
    return gains, ma_final, fpa_position
