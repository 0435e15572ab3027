"""Run configuration, seed sweeps, metrics CSV, checkpoints and evaluation."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import pickle
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import engine
from .agents import ConfigError, EncoderComm, MlpPolicy
from .envs import make_env
from .graph import Topology
from .learn import PRESETS, EpisodeLog, PpoConfig, Trainer, warmup_comm
from .net import Mlp
from .variants import VARIANTS, Variant, build_variant, default_preset

FORMAT_VERSION = 1
METRICS_COLUMNS = ("variant", "env", "seed", "global_step", "episode", "mean_episode_reward",
                   "policy_loss", "value_loss", "entropy", "approx_kl")


def _strict(doc: Any, where: str, allowed: Sequence[str]) -> Mapping:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return doc


@dataclass(frozen=True)
class PpoChoice:
    preset: str | None = None          # None: the variant's default preset
    overrides: Mapping[str, Any] = field(default_factory=dict)

    def resolve(self, variant: str) -> PpoConfig:
        name = self.preset or default_preset(variant)
        if name not in PRESETS:
            raise ConfigError(f"unknown PPO preset {name!r}; known: {sorted(PRESETS)}")
        try:
            return replace(PRESETS[name], **self.overrides)
        except TypeError as exc:
            raise ConfigError(f"bad PPO override: {exc}") from None

    def to_dict(self) -> dict:
        return {"preset": self.preset, "overrides": dict(self.overrides)}

    @classmethod
    def from_dict(cls, doc: Mapping, where: str) -> "PpoChoice":
        _strict(doc, where, ("preset", "overrides"))
        overrides = dict(doc.get("overrides", {}))
        known = {f.name for f in fields(PpoConfig)}
        if set(overrides) - known:
            raise ConfigError(f"{where}.overrides: unknown keys {sorted(set(overrides) - known)}")
        return cls(doc.get("preset"), overrides)


@dataclass(frozen=True)
class RunConfig:
    env: str = "spread"
    env_params: Mapping[str, Any] = field(default_factory=dict)
    variant: str = "ippo"
    graph: Topology | None = None
    steps: int = 200_000
    seeds: tuple[int, ...] = (0,)
    ppo: PpoChoice = PpoChoice()
    ppo_by_layer: Mapping[int, PpoChoice] = field(default_factory=dict)
    checkpoint_every: int = 0
    act_every: tuple[int, ...] | None = None
    comm: str | None = None
    embed_dim: int = 12
    warmup_steps: int = 10_000
    comm_epochs: int = 50
    directive_size: int = 5
    hidden: int = 64
    out: str = "runs"

    def __post_init__(self) -> None:
        if self.graph is None and self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; known: {', '.join(VARIANTS)}")
        if self.steps < 0:
            raise ConfigError("training.steps must be non-negative")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError(f"seeds must be a non-empty list of distinct ints, got {list(self.seeds)}")
        if self.act_every is not None and any(k < 1 for k in self.act_every):
            raise ConfigError("act_every entries must be positive")

    def ppo_for_layer(self, layer: int) -> PpoConfig:
        return self.ppo_by_layer.get(layer, self.ppo).resolve(self.variant)

    def to_dict(self) -> dict:
        variant: dict = {"name": self.variant}
        if self.graph is not None:
            variant["graph"] = self.graph.to_dict()
        return {
            "env": {"name": self.env, "params": dict(self.env_params)},
            "variant": variant,
            "training": {
                "steps": self.steps,
                "seeds": list(self.seeds),
                "ppo": self.ppo.to_dict(),
                "ppo_by_layer": {str(k): v.to_dict() for k, v in sorted(self.ppo_by_layer.items())},
                "checkpoint_every": self.checkpoint_every,
            },
            "timescales": {"act_every": None if self.act_every is None else list(self.act_every)},
            "comm": {"kind": self.comm, "embed_dim": self.embed_dim,
                     "warmup_steps": self.warmup_steps, "epochs": self.comm_epochs},
            "agents": {"directive_size": self.directive_size, "hidden": self.hidden},
            "output": {"dir": self.out},
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunConfig":
        _strict(doc, "config", ("env", "variant", "training", "timescales", "comm", "agents", "output"))
        kw: dict[str, Any] = {}
        if "env" in doc:
            env = _strict(doc["env"], "env", ("name", "params"))
            kw["env"] = env.get("name", "spread")
            kw["env_params"] = dict(env.get("params", {}))
        if "variant" in doc:
            var = doc["variant"]
            if isinstance(var, str):
                var = {"name": var}
            _strict(var, "variant", ("name", "graph"))
            kw["variant"] = var.get("name", "custom" if "graph" in var else "ippo")
            if "graph" in var:
                kw["graph"] = Topology.from_dict(var["graph"])
        if "training" in doc:
            tr = _strict(doc["training"], "training",
                         ("steps", "seeds", "ppo", "ppo_by_layer", "checkpoint_every"))
            for key in ("steps", "checkpoint_every"):
                if key in tr:
                    kw[key] = int(tr[key])
            if "seeds" in tr:
                kw["seeds"] = tuple(int(s) for s in tr["seeds"])
            if "ppo" in tr:
                kw["ppo"] = PpoChoice.from_dict(tr["ppo"], "training.ppo")
            if "ppo_by_layer" in tr:
                kw["ppo_by_layer"] = {int(k): PpoChoice.from_dict(v, f"training.ppo_by_layer.{k}")
                                      for k, v in tr["ppo_by_layer"].items()}
        if "timescales" in doc:
            ts = _strict(doc["timescales"], "timescales", ("act_every",))
            if ts.get("act_every") is not None:
                kw["act_every"] = tuple(int(k) for k in ts["act_every"])
        if "comm" in doc:
            cm = _strict(doc["comm"], "comm", ("kind", "embed_dim", "warmup_steps", "epochs"))
            if "kind" in cm:
                kw["comm"] = cm["kind"]
            for src, dst in (("embed_dim", "embed_dim"), ("warmup_steps", "warmup_steps"),
                             ("epochs", "comm_epochs")):
                if src in cm:
                    kw[dst] = int(cm[src])
        if "agents" in doc:
            ag = _strict(doc["agents"], "agents", ("directive_size", "hidden"))
            for key in ("directive_size", "hidden"):
                if key in ag:
                    kw[key] = int(ag[key])
        if "output" in doc:
            kw["out"] = str(_strict(doc["output"], "output", ("dir",)).get("dir", "runs"))
        return cls(**kw)

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("output")
        doc["training"].pop("seeds")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(doc)


# ------------------------------------------------------------ building

def make_variant(cfg: RunConfig, seed: int, policy: str = "mlp-policy") -> tuple[Variant, Any]:
    env = make_env(cfg.env, seed=seed, **cfg.env_params)
    variant = build_variant(cfg.variant, env.obs_dim, env.n_actions, env.n_agents, seed=seed,
                            act_every=cfg.act_every, directive_size=cfg.directive_size,
                            embed_dim=cfg.embed_dim, comm=cfg.comm, policy=policy,
                            hidden=cfg.hidden, topology=cfg.graph)
    return variant, env


def build_trainer(cfg: RunConfig, seed: int) -> Trainer:
    variant, env = make_variant(cfg, seed)
    if any(isinstance(s.comm, EncoderComm) for s in variant.specs):
        warm_env = make_env(cfg.env, **cfg.env_params)
        warmup_comm(variant.layered, variant.specs, warm_env, cfg.warmup_steps, seed, cfg.comm_epochs)
    state = engine.init_system(variant.layered, variant.specs, env, seed)
    configs = {v: cfg.ppo_for_layer(variant.layered.layer_of[v])
               for v, spec in enumerate(variant.specs) if spec.learnable}
    return Trainer(state, configs, cfg.steps)


# ------------------------------------------------------------ metrics

def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def metrics_row(cfg: RunConfig, seed: int, log: EpisodeLog) -> list[str]:
    return [cfg.variant, cfg.env, str(seed), str(log.global_step), str(log.episode),
            _fmt(log.reward), _fmt(log.policy_loss), _fmt(log.value_loss), _fmt(log.entropy),
            _fmt(log.approx_kl)]


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: columns {reader.fieldnames} are not a metrics file")
        rows = []
        for r in reader:
            rows.append({"variant": r["variant"], "env": r["env"], "seed": int(r["seed"]),
                         "global_step": int(r["global_step"]), "episode": int(r["episode"]),
                         **{k: float(r[k]) for k in METRICS_COLUMNS[5:]}})
    return rows


# ------------------------------------------------------------ checkpoints

def _pack(mlp: Mlp) -> dict:
    return {"shapes": [list(p.shape) for p in mlp.params()],
            "activations": list(mlp.activations), "head": mlp.head,
            "data": [float(x) for p in mlp.params() for x in p.ravel()]}


def _unpack_into(mlp: Mlp, doc: Mapping, what: str) -> None:
    params = mlp.params()
    shapes = [tuple(s) for s in doc["shapes"]]
    if shapes != [p.shape for p in params]:
        raise ConfigError(f"{what}: checkpoint shapes {shapes} != network shapes {[p.shape for p in params]}")
    flat = np.asarray(doc["data"], dtype=np.float64)
    k = 0
    for p in params:
        p[...] = flat[k:k + p.size].reshape(p.shape)
        k += p.size


def save_checkpoint(trainer: Trainer, cfg: RunConfig, seed: int, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    agents = []
    for v, spec in enumerate(trainer.state.specs):
        doc: dict = {"vertex": v}
        if isinstance(spec.policy, MlpPolicy):
            doc["actor"] = _pack(spec.policy.actor)
            doc["critic"] = _pack(spec.policy.critic)
        if isinstance(spec.comm, EncoderComm):
            doc["encoder"] = _pack(spec.comm.encoder)
        if len(doc) > 1:
            name = f"agent_{v}.json"
            (d / name).write_text(json.dumps(doc) + "\n")
            agents.append(name)
    manifest = {"format_version": FORMAT_VERSION, "config_hash": cfg.config_hash(),
                "step": trainer.global_step, "seed": seed, "agents": agents}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (d / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(d / "trainer_state.pkl", "wb") as fh:
        pickle.dump(trainer, fh, protocol=pickle.HIGHEST_PROTOCOL)
    return d


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint manifest {path}: {exc.strerror}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format {manifest.get('format_version')}")
    return manifest


def load_parameters(directory: str | Path, variant: Variant) -> None:
    """Copy checkpointed parameters into a freshly built variant of the same shape."""
    d = Path(directory)
    manifest = read_manifest(d)
    for name in manifest["agents"]:
        doc = json.loads((d / name).read_text())
        v = int(doc["vertex"])
        if v >= len(variant.specs):
            raise ConfigError(f"{name}: vertex {v} not in a {len(variant.specs)}-vertex network")
        spec = variant.specs[v]
        for key, target in (("actor", "policy"), ("critic", "policy"), ("encoder", "comm")):
            if key not in doc:
                continue
            owner = getattr(spec, target)
            mlp = getattr(owner, "encoder" if key == "encoder" else key, None)
            if not isinstance(mlp, Mlp):
                raise ConfigError(f"{name}: agent {v} has no {key} network to load into")
            _unpack_into(mlp, doc[key], f"{name}/{key}")


def load_trainer(directory: str | Path, cfg: RunConfig | None = None) -> Trainer:
    d = Path(directory)
    manifest = read_manifest(d)
    if cfg is not None and manifest["config_hash"] != cfg.config_hash():
        raise ConfigError(f"{d}: checkpoint was written by a different configuration")
    with open(d / "trainer_state.pkl", "rb") as fh:
        return pickle.load(fh)


# ------------------------------------------------------------ training

def seed_dir(cfg: RunConfig, seed: int) -> Path:
    return Path(cfg.out) / cfg.variant / f"seed_{seed}"


def _truncate_metrics(path: Path, step: int) -> None:
    """Drop rows logged after ``step`` so a resumed run does not repeat them."""
    if not path.exists():
        path.write_text(",".join(METRICS_COLUMNS) + "\n")
        return
    lines = path.read_text().splitlines(keepends=True)
    col = METRICS_COLUMNS.index("global_step")
    keep = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",")[col]) <= step]
    path.write_text("".join(keep))


def train_seed(cfg: RunConfig, seed: int, resume: str | Path | None = None) -> Path:
    """Train one seed; write ``metrics.csv`` and checkpoints under its run dir."""
    out = seed_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.csv"
    if resume is not None:
        trainer = load_trainer(resume, cfg)
        _truncate_metrics(metrics, trainer.global_step)
        fh = open(metrics, "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
    else:
        trainer = build_trainer(cfg, seed)
        fh = open(metrics, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
    with fh:
        def on_episode(log: EpisodeLog) -> None:
            writer.writerow(metrics_row(cfg, seed, log))

        every = cfg.checkpoint_every
        while trainer.global_step < cfg.steps:
            chunk = every - trainer.global_step % every if every > 0 else None
            trainer.run(chunk, on_episode)
            if every > 0 and trainer.global_step % every == 0 and trainer.global_step < cfg.steps:
                fh.flush()
                save_checkpoint(trainer, cfg, seed, out / f"checkpoint_{trainer.global_step}")
    save_checkpoint(trainer, cfg, seed, out / "checkpoint")
    return metrics


def run_training(cfg: RunConfig) -> list[Path]:
    """Seeds run one after another so the output is independent of scheduling."""
    return [train_seed(cfg, seed) for seed in cfg.seeds]


# ------------------------------------------------------------ evaluation

@dataclass
class EvalResult:
    mean: float
    std: float
    returns: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_variant(variant: Variant, env, episodes: int, seed: int, greedy: bool = False) -> EvalResult:
    """Roll out without learning until ``episodes`` episodes have finished."""
    if episodes < 1:
        raise ValueError("episodes must be positive")
    state = engine.init_system(variant.layered, variant.specs, env, seed, record_for=())
    state.greedy = greedy
    while len(state.finished) < episodes:
        engine.step(state)
    returns = [r for r, _ in state.finished[:episodes]]
    return EvalResult(float(np.mean(returns)), float(np.std(returns)), returns)


def evaluate(checkpoint: str | Path, episodes: int = 100, seed: int = 0, greedy: bool = False) -> EvalResult:
    d = Path(checkpoint)
    cfg = load_config(d / "config.json")
    manifest = read_manifest(d)
    variant, _ = make_variant(cfg, int(manifest["seed"]))
    load_parameters(d, variant)
    env = make_env(cfg.env, **cfg.env_params)
    return evaluate_variant(variant, env, episodes, seed, greedy)


def random_baseline(cfg: RunConfig, episodes: int = 100, seed: int = 0) -> EvalResult:
    variant, _ = make_variant(cfg, seed, policy="random")
    env = make_env(cfg.env, **cfg.env_params)
    return evaluate_variant(variant, env, episodes, seed)
