"""Self-contained deep Q-learning for the antenna-positioning environment.

The value network is a fully connected 8-128-128-5 net with rectified
linear hidden units and a linear output head, trained by hand-rolled
backpropagation and adaptive-moment updates.  No autograd framework.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .mdp import Action, MdpState, Transition

log = logging.getLogger(__name__)

LAYER_SIZES = (8, 128, 128, 5)


class DivergenceError(RuntimeError):
    """Raised when the training loss explodes; retry with a smaller learning rate."""

    def __init__(self, message, episode=None, episode_log=None):
        super().__init__(message)
        self.episode = episode
        self.episode_log = episode_log


class QNetwork:
    """Action-value network: state vector in, one Q-value per action out."""

    def __init__(self, rng: np.random.Generator = None):
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(LAYER_SIZES[:-1], LAYER_SIZES[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def _check_finite(self):
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("network parameters are not finite")

    def forward(self, state) -> np.ndarray:
        """Q-values for one state (returns shape (5,)) or a batch (n, 5)."""
        out, _ = self.forward_cached(state)
        return out

    def forward_cached(self, state):
        self._check_finite()
        if isinstance(state, MdpState):
            state = state.to_vector()
        x = np.asarray(state, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        activations = [x]
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w + b
            if layer < len(self.weights) - 1:
                z = np.maximum(z, 0.0)
            activations.append(z)
        out = activations[-1]
        return (out[0] if single else out), activations

    def backward(self, activations, grad_out):
        """Parameter gradients for d(loss)/d(output) = grad_out (batch form)."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = grad_out
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = activations[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (activations[layer] > 0)
        return grads_w, grads_b

    def copy(self) -> "QNetwork":
        clone = QNetwork()
        clone.load_from(self)
        return clone

    def load_from(self, other: "QNetwork"):
        self.weights = [w.copy() for w in other.weights]
        self.biases = [b.copy() for b in other.biases]

    # flat views, used by the finite-difference checks and checkpointing
    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def set_flat(self, flat: np.ndarray):
        offset = 0
        for arrs in (self.weights, self.biases):
            for i, a in enumerate(arrs):
                arrs[i] = flat[offset: offset + a.size].reshape(a.shape).copy()
                offset += a.size


class AdamOptimizer:
    """Adaptive-moment gradient updates with bias correction."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = None
        self._v = None

    def step(self, net: QNetwork, grads_w, grads_b):
        grads = grads_w + grads_b
        params = net.weights + net.biases
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


class ReplayBuffer:
    """Fixed-capacity ring buffer; oldest transitions are evicted first."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items = []
        self._cursor = 0

    def push(self, transition: Transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, rng: np.random.Generator, k: int):
        idx = rng.integers(len(self._items), size=k)
        return [self._items[i] for i in idx]

    def __len__(self):
        return len(self._items)


def epsilon_greedy(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Random action with probability epsilon, else argmax (lowest index wins ties)."""
    q_values = np.asarray(q_values, dtype=float)
    if np.any(np.isnan(q_values)):
        raise ValueError("Q-values contain NaN")
    if rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def td_target(transition: Transition, target_net: QNetwork, gamma: float) -> float:
    """Bootstrapped one-step return; just the reward on terminal transitions."""
    if transition.terminal:
        return float(transition.reward)
    q_next = target_net.forward(transition.next_state)
    return float(transition.reward + gamma * np.max(q_next))


def train_step(net: QNetwork, target_net: QNetwork, batch, gamma: float,
               optimizer: AdamOptimizer) -> float:
    """One squared-TD-error gradient step on the online network.

    Targets come from the target network and receive no gradient.  Returns
    the pre-update batch loss.
    """
    states = np.stack([t.state for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    actions = np.array([t.action for t in batch], dtype=int)
    rewards = np.array([t.reward for t in batch], dtype=float)
    terminal = np.array([t.terminal for t in batch], dtype=bool)

    q_next = target_net.forward(next_states)
    targets = rewards + gamma * np.max(q_next, axis=1) * (~terminal)

    q_all, cache = net.forward_cached(states)
    taken = q_all[np.arange(len(batch)), actions]
    err = taken - targets
    loss = float(np.mean(err**2))
    if loss > 1e12:
        raise DivergenceError(
            f"training loss exploded ({loss:.3e}); reduce the learning rate"
        )

    grad_out = np.zeros_like(q_all)
    grad_out[np.arange(len(batch)), actions] = 2.0 * err / len(batch)
    grads_w, grads_b = net.backward(cache, grad_out)
    optimizer.step(net, grads_w, grads_b)
    return loss


@dataclass
class EpisodeLog:
    episode: int
    epsilon: float
    mean_reward_est: float
    mean_gain_true: float
    loss_mean: float


def train(env, agent_cfg, seed: int):
    """Full training loop; returns the trained network and per-episode logs.

    Environment randomness (channel draws, start cells, noise) comes from a
    per-episode stream derived only from the seed and the episode index, so
    runs with different agent hyperparameters see identical environments.
    """
    ss = np.random.SeedSequence(seed)
    net_ss, act_ss, buf_ss, env_ss = ss.spawn(4)
    net = QNetwork(np.random.default_rng(net_ss))
    target = net.copy()
    act_rng = np.random.default_rng(act_ss)
    buf_rng = np.random.default_rng(buf_ss)
    episode_seeds = env_ss.spawn(agent_cfg.episodes)

    buffer = ReplayBuffer(agent_cfg.buffer_capacity)
    optimizer = AdamOptimizer(agent_cfg.learning_rate)
    logs = []
    grad_steps = 0

    for episode in range(agent_cfg.episodes):
        epsilon = max(
            agent_cfg.epsilon_min,
            agent_cfg.epsilon_start * agent_cfg.epsilon_decay**episode,
        )
        env_rng = np.random.default_rng(episode_seeds[episode])
        state = env.reset(env_rng)
        state_vec = state.to_vector()
        rewards = []
        losses = []
        for _ in range(agent_cfg.steps_per_episode):
            action = epsilon_greedy(net.forward(state_vec), epsilon, act_rng)
            next_state, reward, terminal = env.step(action)
            next_vec = next_state.to_vector()
            buffer.push(Transition(state_vec, action, reward, next_vec, terminal))
            rewards.append(reward)
            if len(buffer) >= agent_cfg.batch_size:
                batch = buffer.sample(buf_rng, agent_cfg.batch_size)
                try:
                    losses.append(train_step(net, target, batch, agent_cfg.gamma, optimizer))
                except DivergenceError as exc:
                    raise DivergenceError(
                        f"{exc} (episode {episode})", episode=episode, episode_log=logs
                    ) from exc
                grad_steps += 1
                if grad_steps % agent_cfg.target_sync == 0:
                    target.load_from(net)
            state_vec = next_vec
        logs.append(
            EpisodeLog(
                episode=episode,
                epsilon=epsilon,
                mean_reward_est=float(np.mean(rewards)),
                mean_gain_true=float(np.mean(env.episode_true_gains)),
                loss_mean=float(np.mean(losses)) if losses else float("nan"),
            )
        )
    return net, logs


def evaluate(net: QNetwork, env, realizations, seed: int, fpa_position=None):
    """Greedy rollouts on fixed realizations, scored against a fixed antenna.

    For each realization the agent runs one epsilon=0 episode; the record
    compares the episode-mean true gain with the true gain at the fixed
    position (grid center by default).  Ties count as losses.
    """
    from . import channel as chan

    if fpa_position is None:
        c = env.grid.center_index
        fpa_position = env.grid.position(c, c)
    ss = np.random.SeedSequence(seed)
    records = []
    for idx, (ch, child) in enumerate(zip(realizations, ss.spawn(len(realizations)))):
        rng = np.random.default_rng(child)
        state = env.reset(rng, realization=ch)
        state_vec = state.to_vector()
        for _ in range(env.steps_per_episode):
            action = int(np.argmax(net.forward(state_vec)))
            next_state, _, terminal = env.step(action)
            state_vec = next_state.to_vector()
            if terminal:
                break
        ma_true = float(np.mean(env.episode_true_gains))
        ma_est = float(np.mean(env.episode_estimated_gains))
        fpa_gain = chan.channel_gain(fpa_position[0], fpa_position[1], ch)
        records.append(
            {
                "env_index": idx,
                "ma_mean_gain_true": ma_true,
                "ma_mean_gain_est": ma_est,
                "fpa_gain_true": fpa_gain,
                "win": bool(ma_true > fpa_gain),
            }
        )
    wins = sum(r["win"] for r in records)
    win_fraction = wins / len(records) if records else 0.0
    return records, win_fraction
