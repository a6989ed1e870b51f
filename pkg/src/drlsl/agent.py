"""Deep Q-learning in numpy: MLP, Adam, uniform replay, masked epsilon-greedy."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .road import Action

N_ACTIONS = 3
OBS_DIM = 10


class NonFiniteLoss(FloatingPointError):
    pass


class EmptySafeSet(ValueError):
    pass


class CheckpointMismatch(ValueError):
    pass


@dataclass
class Hyperparams:
    gamma: float = 0.95
    alpha_init: float = 0.01
    alpha_final: float = 1e-4
    epsilon_init: float = 0.1
    epsilon_final: float = 0.001
    buffer_capacity: int = 100_000
    batch_size: int = 128
    target_sync_C: int = 1000
    episodes: int = 1500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: Tuple[int, ...] = (256, 256)
    activation: str = "relu"
    # "episode" or "step": what the alpha/epsilon schedules count
    schedule_unit: str = "episode"
    # total schedule length in steps when schedule_unit == "step"
    schedule_steps: int = 100_000
    learning_starts: Optional[int] = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        if self.alpha_final > self.alpha_init:
            raise ValueError("alpha_final exceeds alpha_init")
        if self.epsilon_final > self.epsilon_init:
            raise ValueError("epsilon_final exceeds epsilon_init")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation}")
        if self.schedule_unit not in ("episode", "step"):
            raise ValueError("schedule_unit must be 'episode' or 'step'")
        if min(self.buffer_capacity, self.batch_size, self.target_sync_C, self.episodes) <= 0:
            raise ValueError("sizes must be positive")

    @property
    def warmup(self) -> int:
        return self.batch_size if self.learning_starts is None else self.learning_starts


def schedule(step: float, total: float, init: float, final: float) -> float:
    """Linear interpolation from ``init`` to ``final`` over ``total`` steps, then flat."""
    if total <= 0:
        raise ValueError("total must be positive")
    frac = min(max(step / total, 0.0), 1.0)
    if frac == 1.0:
        return final
    return init + (final - init) * frac


# ---------------------------------------------------------------------------
# network


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


def _tanh(z):
    return np.tanh(z)


def _tanh_grad(z, a):
    return 1.0 - a * a


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (_tanh, _tanh_grad)}


class QNetwork:
    """Fully connected net: affine layers with a hidden nonlinearity, linear output."""

    def __init__(
        self,
        sizes: Sequence[int] = (OBS_DIM, 256, 256, N_ACTIONS),
        activation: str = "relu",
        rng: Optional[np.random.Generator] = None,
    ):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self._act, self._act_grad = _ACTIVATIONS[activation]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=(fan_out,)))

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = self.n_layers - 1
        for i in range(self.n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < last:
                h = self._act(h)
        return h

    __call__ = forward

    def forward_cache(self, x: np.ndarray):
        acts = [np.asarray(x, dtype=np.float64)]
        pre = []
        h = acts[0]
        last = self.n_layers - 1
        for i in range(self.n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            pre.append(z)
            h = self._act(z) if i < last else z
            acts.append(h)
        return pre, acts

    def backward(self, pre, acts, grad_out: np.ndarray) -> List[np.ndarray]:
        """Gradients of the parameters given d(loss)/d(output)."""
        grads: List[Optional[np.ndarray]] = [None] * len(self.params)
        g = grad_out
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * self._act_grad(pre[i], acts[i + 1])
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.params[2 * i].T
        return grads

    def loss_and_grads(self, s: np.ndarray, a: np.ndarray, y: np.ndarray) -> Tuple[float, List[np.ndarray]]:
        """Mean squared TD error on the taken actions and its parameter gradients."""
        pre, acts = self.forward_cache(s)
        q = acts[-1]
        idx = np.arange(len(a))
        err = q[idx, a] - y
        loss = float(np.mean(err * err))
        grad_out = np.zeros_like(q)
        grad_out[idx, a] = 2.0 * err / len(a)
        return loss, self.backward(pre, acts, grad_out)

    def copy(self) -> "QNetwork":
        out = QNetwork.__new__(QNetwork)
        out.sizes = self.sizes
        out.activation = self.activation
        out._act, out._act_grad = self._act, self._act_grad
        out.params = [p.copy() for p in self.params]
        return out

    def load_params(self, params: Iterable[np.ndarray]) -> None:
        params = list(params)
        if [p.shape for p in params] != [p.shape for p in self.params]:
            raise CheckpointMismatch("parameter shapes differ")
        for dst, src in zip(self.params, params):
            dst[...] = src

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params)


def forward(net: QNetwork, obs) -> np.ndarray:
    x = obs.as_array() if hasattr(obs, "as_array") else np.asarray(obs, dtype=np.float64)
    return net.forward(x)


def sync_target(net: QNetwork, target: QNetwork) -> None:
    target.load_params(net.params)


class AdamState:
    def __init__(self, params: Sequence[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, params: List[np.ndarray], grads: List[np.ndarray], lr: float) -> None:
        """One Adam step; ``grads`` is used as scratch space and overwritten."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        root_c2 = math.sqrt(1.0 - b2**self.t)
        # lr * (m / c1) / (sqrt(v / c2) + eps), rearranged to work in place
        step = lr * root_c2 / c1
        eps = self.eps * root_c2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            np.multiply(g, g, out=g)
            v *= b2
            g *= 1.0 - b2
            v += g
            np.sqrt(v, out=g)
            g += eps
            np.divide(m, g, out=g)
            g *= step
            p -= g


# ---------------------------------------------------------------------------
# replay


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    # discount exponent: gamma ** tau for a transition spanning tau decision intervals
    tau: np.ndarray

    def __len__(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool
    tau: float = 1.0

    def __post_init__(self):
        if int(self.a) not in (0, 1, 2):
            raise ValueError(f"action {self.a} outside 0..2")


class ReplayBuffer:
    """Ring buffer; the oldest transition is overwritten first."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM, rng: Optional[np.random.Generator] = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.s = np.zeros((capacity, obs_dim))
        self.s_next = np.zeros((capacity, obs_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.tau = np.ones(capacity)
        self.size = 0
        self.cursor = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.cursor
        self.s[i] = t.s
        self.s_next[i] = t.s_next
        self.a[i] = int(t.a)
        self.r[i] = t.r
        self.done[i] = float(t.done)
        self.tau[i] = t.tau
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def indices(self, n: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self.rng.integers(0, self.size, size=n)

    def sample(self, n: int) -> Batch:
        idx = self.indices(n)
        return self.gather(idx)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx], self.tau[idx])

    def slot_of(self, insertion: int) -> Optional[int]:
        """Buffer row holding the ``insertion``-th transition (0-based), if still present."""
        if insertion < self.inserted - self.size or insertion >= self.inserted:
            return None
        return insertion % self.capacity


# ---------------------------------------------------------------------------
# action selection and learning steps


def select_action(q: np.ndarray, safe: Iterable, epsilon: float, rng: np.random.Generator) -> Action:
    allowed = sorted(int(a) for a in safe)
    if not allowed:
        raise EmptySafeSet("no action to choose from")
    if epsilon > 0 and rng.random() < epsilon:
        return Action(allowed[int(rng.integers(len(allowed)))])
    best = allowed[0]
    for a in allowed[1:]:
        if q[a] > q[best]:
            best = a
    return Action(best)


def td_targets(batch: Batch, target_net: QNetwork, gamma: float) -> np.ndarray:
    q_next = target_net.forward(batch.s_next).max(axis=1)
    return batch.r + (1.0 - batch.done) * np.power(gamma, batch.tau) * q_next


def sgd_step(net: QNetwork, adam: AdamState, batch: Batch, targets: np.ndarray, alpha: float) -> float:
    loss, grads = net.loss_and_grads(batch.s, batch.a, targets)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss}")
    adam.update(net.params, grads, alpha)
    return loss


# ---------------------------------------------------------------------------
# the learner


class DQNAgent:
    """Online/target networks, optimiser, replay and counters for one run."""

    def __init__(self, hp: Optional[Hyperparams] = None, seed: int = 0):
        self.hp = hp or Hyperparams()
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        init_seq, explore_seq, replay_seq = ss.spawn(3)
        sizes = (OBS_DIM,) + self.hp.hidden + (N_ACTIONS,)
        self.net = QNetwork(sizes, self.hp.activation, np.random.default_rng(init_seq))
        self.target = self.net.copy()
        self.adam = AdamState(self.net.params, self.hp.adam_beta1, self.hp.adam_beta2, self.hp.adam_eps)
        self.explore_rng = np.random.default_rng(explore_seq)
        self.buffer = ReplayBuffer(self.hp.buffer_capacity, OBS_DIM, np.random.default_rng(replay_seq))
        self.updates = 0
        self.episodes_done = 0
        self.env_steps = 0
        self.last_loss = float("nan")

    # schedules ----------------------------------------------------------

    def _progress(self) -> Tuple[float, float]:
        if self.hp.schedule_unit == "episode":
            return self.episodes_done, self.hp.episodes
        return self.env_steps, self.hp.schedule_steps

    @property
    def epsilon(self) -> float:
        step, total = self._progress()
        return schedule(step, total, self.hp.epsilon_init, self.hp.epsilon_final)

    @property
    def alpha(self) -> float:
        step, total = self._progress()
        return schedule(step, total, self.hp.alpha_init, self.hp.alpha_final)

    # acting -------------------------------------------------------------

    def q_values(self, obs) -> np.ndarray:
        return forward(self.net, obs)

    def act(self, obs, safe: Iterable = (0, 1, 2), epsilon: Optional[float] = None) -> Action:
        eps = self.epsilon if epsilon is None else epsilon
        return select_action(self.q_values(obs), safe, eps, self.explore_rng)

    # learning -----------------------------------------------------------

    def remember(self, t: Transition) -> None:
        self.buffer.add(t)
        self.env_steps += 1

    def learn(self) -> Optional[float]:
        """One minibatch update once the buffer holds enough transitions."""
        if len(self.buffer) < max(self.hp.warmup, 1):
            return None
        batch = self.buffer.sample(self.hp.batch_size)
        y = td_targets(batch, self.target, self.hp.gamma)
        loss = sgd_step(self.net, self.adam, batch, y, self.alpha)
        self.updates += 1
        if self.updates % self.hp.target_sync_C == 0:
            sync_target(self.net, self.target)
        self.last_loss = loss
        return loss

    def end_episode(self) -> None:
        self.episodes_done += 1

    # persistence ----------------------------------------------------------

    def state_arrays(self) -> List[Tuple[str, np.ndarray]]:
        out = []
        for i, p in enumerate(self.net.params):
            out.append((f"online.{i}", p))
        for i, p in enumerate(self.target.params):
            out.append((f"target.{i}", p))
        for i, p in enumerate(self.adam.m):
            out.append((f"adam.m.{i}", p))
        for i, p in enumerate(self.adam.v):
            out.append((f"adam.v.{i}", p))
        return out

    def header(self) -> Dict:
        hp = asdict(self.hp)
        hp["hidden"] = list(hp["hidden"])
        return {
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in self.state_arrays()],
            "hyperparams": hp,
            "counters": {
                "adam_t": self.adam.t,
                "episodes_done": self.episodes_done,
                "env_steps": self.env_steps,
                "seed": self.seed,
                "updates": self.updates,
            },
            "schedules": {"alpha": self.alpha, "epsilon": self.epsilon},
            "rng": {
                "explore": self.explore_rng.bit_generator.state,
                "replay": self.buffer.rng.bit_generator.state,
            },
            "sizes": list(self.net.sizes),
        }


MAGIC = b"DRLSLCKP"
VERSION = 1


def checkpoint_bytes(agent: DQNAgent) -> bytes:
    """Serialise an agent.

    Layout: 8-byte magic ``DRLSLCKP``; uint32 LE version; uint32 LE header
    length; a UTF-8 JSON header (sorted keys, compact separators) listing
    array names and shapes, hyperparameters, counters, schedule values and
    RNG states; then every array in header order as little-endian float64,
    C order. The replay buffer is not stored.
    """
    header = json.dumps(agent.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for _, arr in agent.state_arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(agent: DQNAgent, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(agent))


def agent_from_bytes(data: bytes, expect_sizes: Optional[Sequence[int]] = None) -> DQNAgent:
    if data[:8] != MAGIC:
        raise CheckpointMismatch("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    sizes = tuple(header["sizes"])
    if expect_sizes is not None and tuple(expect_sizes) != sizes:
        raise CheckpointMismatch(f"checkpoint layers {sizes} differ from expected {tuple(expect_sizes)}")
    hp = Hyperparams(**header["hyperparams"])
    counters = header["counters"]
    agent = DQNAgent(hp, counters["seed"])
    expected = [(n, list(a.shape)) for n, a in agent.state_arrays()]
    stored = [(a["name"], a["shape"]) for a in header["arrays"]]
    if expected != stored:
        raise CheckpointMismatch("array layout differs from the network described in the header")
    offset = 16 + hlen
    for (_, dst) in agent.state_arrays():
        n = dst.size * 8
        chunk = data[offset : offset + n]
        if len(chunk) != n:
            raise CheckpointMismatch("truncated checkpoint payload")
        dst[...] = np.frombuffer(chunk, dtype="<f8").reshape(dst.shape)
        offset += n
    if offset != len(data):
        raise CheckpointMismatch("trailing bytes after payload")
    agent.adam.t = counters["adam_t"]
    agent.episodes_done = counters["episodes_done"]
    agent.env_steps = counters["env_steps"]
    agent.updates = counters["updates"]
    agent.explore_rng.bit_generator.state = header["rng"]["explore"]
    agent.buffer.rng.bit_generator.state = header["rng"]["replay"]
    return agent


def load_checkpoint(path: str, expect_sizes: Optional[Sequence[int]] = None) -> DQNAgent:
    with open(path, "rb") as fh:
        return agent_from_bytes(fh.read(), expect_sizes)
