"""Training loop and run orchestration.

One generator iteration = `n_dis` discriminator steps (each with a fresh
real mini-batch and fresh latents) followed by a single generator step
with the larger generator batch. Adam drives both networks; spectral
state advances one power-iteration step on every training-mode
discriminator forward. Evaluation always runs on a checkpoint snapshot,
never on live weights.

Any non-finite loss aborts the run after dumping a diagnostic checkpoint;
skipping bad steps would leave failures undiagnosable.
"""

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import data_io, metrics
from .config import RunConfig
from .losses import d_loss, g_loss, lazy_schedule
from .networks import Discriminator, Generator, NetworkSpec
from .substrate.gradcheck import DOUBLE_BACKPROP_SUPPORTED, GRAD_PENALTY_MODE

logger = logging.getLogger(__name__)

_Z_SEED_OFFSET = 1
_DATA_SEED_OFFSET = 2
_EVAL_SEED_OFFSET = 3
_WARMUP_SEED_OFFSET = 4
_EVAL_CHUNK = 256


class NaNAbortError(RuntimeError):
    """Raised when a training loss goes non-finite; carries the dump path."""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class TrainLog:
    """Append-only JSON-lines log with monotone step numbers.

    In determinism mode records omit wall time so two seeded runs produce
    byte-identical logs.
    """

    def __init__(self, path=None, deterministic: bool = False):
        self.path = Path(path) if path is not None else None
        self.deterministic = deterministic
        self.records = []
        self._last_step = 0

    def append(self, record: dict) -> None:
        if "step" in record:
            if record["step"] <= self._last_step:
                raise ValueError(
                    f"non-monotone log step {record['step']} after {self._last_step}")
            self._last_step = record["step"]
            if not self.deterministic:
                record["wall_time"] = time.time()
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def last_value(self, key: str):
        for record in reversed(self.records):
            if key in record:
                return record[key]
        return None


@dataclass
class TrainResult:
    checkpoint_path: Path
    log: TrainLog
    config: RunConfig


def _grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().double().square().sum())
    return total ** 0.5


def _state_tensors(prefix: str, module: torch.nn.Module) -> dict:
    return {f"{prefix}.{name}": tensor for name, tensor in module.state_dict().items()}


def _optimizer_tensors(prefix: str, opt: torch.optim.Optimizer) -> dict:
    out = {}
    for pid, state in opt.state_dict()["state"].items():
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                out[f"{prefix}.{pid}.{key}"] = value
    return out


def _load_optimizer(opt: torch.optim.Optimizer, prefix: str, tensors: dict) -> None:
    state = {}
    for name, arr in tensors.items():
        if not name.startswith(prefix + "."):
            continue
        _, pid, key = name.split(".", 2)
        state.setdefault(int(pid), {})[key] = torch.from_numpy(arr)
    sd = opt.state_dict()
    sd["state"] = state
    opt.load_state_dict(sd)


class Trainer:
    """Owns both networks, their optimizers, and the data stream.

    Custom generator/discriminator/dataset objects may be injected for
    experiments and tests; they only need the call signatures used here
    (G(z) -> images, D(x) -> per-sample scores, dataset.next_batch/sample/
    state/restore).
    """

    def __init__(self, cfg: RunConfig, generator=None, discriminator=None,
                 dataset=None, log_path=None):
        self.cfg = cfg
        if cfg.determinism:
            torch.set_num_threads(1)
        spec = cfg.network_spec()
        self.spec = spec
        self.G = generator if generator is not None else Generator(spec)
        self.D = discriminator if discriminator is not None else Discriminator(spec)
        self.dataset = dataset if dataset is not None else data_io.open_dataset(
            cfg.data, seed=cfg.seed + _DATA_SEED_OFFSET)
        betas = (cfg.beta1, cfg.beta2)
        g_params = [p for p in self.G.parameters() if p.requires_grad]
        self.opt_g = (torch.optim.Adam(g_params, lr=cfg.lr, betas=betas, eps=cfg.adam_eps)
                      if g_params else None)
        self.opt_d = torch.optim.Adam(self.D.parameters(), lr=cfg.lr, betas=betas,
                                      eps=cfg.adam_eps)
        self.z_gen = torch.Generator().manual_seed(cfg.seed + _Z_SEED_OFFSET)
        self.g_iter = 0
        self.d_steps = 0
        self._record_step = 0
        self.out_dir = Path(cfg.out_dir)
        self.log = TrainLog(log_path, deterministic=cfg.determinism)
        self.G.train()
        self.D.train()

    # -- logging helpers -------------------------------------------------

    def _next_step(self) -> int:
        self._record_step += 1
        return self._record_step

    def _write_header(self):
        self.log.append({
            "kind": "header",
            "config_hash": self.cfg.config_hash(),
            "grad_penalty_mode": GRAD_PENALTY_MODE,
            "fd_fallback": not DOUBLE_BACKPROP_SUPPORTED,
            "determinism": self.cfg.determinism,
        })

    # -- single steps ----------------------------------------------------

    def _sample_latents(self, batch: int) -> torch.Tensor:
        return torch.randn(batch, self.spec.latent_dim, generator=self.z_gen)

    def _check_finite(self, value: torch.Tensor, what: str):
        if not torch.isfinite(value).all():
            path = self._dump_diagnostic()
            raise NaNAbortError(f"non-finite {what} at g_iter={self.g_iter}, "
                                f"d_step={self.d_steps}; state dumped to {path}", path)

    def d_step(self) -> None:
        cfg = self.cfg
        x_real = self.dataset.next_batch(cfg.batch_d)
        z = self._sample_latents(cfg.batch_d)
        with torch.no_grad():
            fake = self.G(z)
        fires_r1 = (cfg.loss_kind.value == "ns-logistic-r1" and cfg.gamma > 0
                    and lazy_schedule(self.d_steps, cfg.lazy_interval))
        if fires_r1:
            x_real = x_real.requires_grad_(True)
        try:
            real_scores = self.D(x_real)
            fake_scores = self.D(fake)
            parts = {}
            loss = d_loss(cfg.loss_kind, real_scores, fake_scores,
                          x_real=x_real if fires_r1 else None, step=self.d_steps,
                          gamma=cfg.gamma, lazy_interval=cfg.lazy_interval, parts=parts)
        except FloatingPointError as err:
            path = self._dump_diagnostic()
            raise NaNAbortError(f"{err}; state dumped to {path}", path) from err
        self._check_finite(loss, "discriminator loss")
        self.opt_d.zero_grad(set_to_none=True)
        loss.backward()
        grad_norm = _grad_norm(self.D.parameters())
        self.opt_d.step()
        record = {"step": self._next_step(), "kind": "d", "g_iter": self.g_iter,
                  "d_step": self.d_steps, "loss": float(loss.detach()),
                  "grad_norm": grad_norm, "batch": cfg.batch_d}
        if "r1" in parts:
            record["r1"] = parts["r1"]
        self.log.append(record)
        self.d_steps += 1

    def g_step(self) -> None:
        cfg = self.cfg
        z = self._sample_latents(cfg.batch_g)
        try:
            fake = self.G(z)
            scores = self.D(fake)
            loss = g_loss(cfg.loss_kind, scores)
        except FloatingPointError as err:
            path = self._dump_diagnostic()
            raise NaNAbortError(f"{err}; state dumped to {path}", path) from err
        self._check_finite(loss, "generator loss")
        grad_norm = 0.0
        if self.opt_g is not None:
            self.opt_g.zero_grad(set_to_none=True)
            loss.backward()
            grad_norm = _grad_norm(self.G.parameters())
            self.opt_g.step()
        self.log.append({"step": self._next_step(), "kind": "g", "g_iter": self.g_iter,
                         "loss": float(loss.detach()), "grad_norm": grad_norm,
                         "batch": cfg.batch_g})

    # -- checkpointing ---------------------------------------------------

    def _manifest(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash(),
            "counters": {"g_iter": self.g_iter, "d_steps": self.d_steps,
                         "record_step": self._record_step},
            "dataset_state": self.dataset.state(),
            "dataset_source": getattr(self.dataset, "source", "custom"),
            "flags": {"grad_penalty_mode": GRAD_PENALTY_MODE,
                      "fd_fallback": not DOUBLE_BACKPROP_SUPPORTED,
                      "determinism": self.cfg.determinism},
        }

    def _tensors(self) -> dict:
        tensors = {}
        tensors.update(_state_tensors("g", self.G))
        tensors.update(_state_tensors("d", self.D))
        if self.opt_g is not None:
            tensors.update(_optimizer_tensors("optg", self.opt_g))
        tensors.update(_optimizer_tensors("optd", self.opt_d))
        tensors["rng.z"] = self.z_gen.get_state()
        return tensors

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data_io.save_checkpoint(path, self._manifest(), self._tensors())
        return path

    def _dump_diagnostic(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.save(self.out_dir / "nan-abort.ckpt")

    def load(self, path) -> None:
        manifest, tensors = data_io.load_checkpoint(path)
        if manifest["spec"] != self.spec.to_dict():
            raise ValueError("checkpoint network spec does not match the run config")
        if manifest["config_hash"] != self.cfg.config_hash():
            logger.warning("resuming with a config hash different from the checkpoint")
        _load_module_state(self.G, "g", tensors)
        _load_module_state(self.D, "d", tensors)
        if self.opt_g is not None:
            _load_optimizer(self.opt_g, "optg", tensors)
        _load_optimizer(self.opt_d, "optd", tensors)
        self.z_gen.set_state(torch.from_numpy(tensors["rng.z"]))
        counters = manifest["counters"]
        self.g_iter = int(counters["g_iter"])
        self.d_steps = int(counters["d_steps"])
        self._record_step = int(counters["record_step"])
        self.log._last_step = self._record_step
        self.dataset.restore(manifest["dataset_state"])

    # -- the loop ----------------------------------------------------------

    def run(self, resume=None) -> TrainResult:
        cfg = self.cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if resume is not None:
            self.load(resume)
        else:
            self._write_header()
        while self.g_iter < cfg.total_g_iters:
            for _ in range(cfg.n_dis):
                self.d_step()
            self.g_step()
            self.g_iter += 1
            if cfg.eval_every and self.g_iter % cfg.eval_every == 0 \
                    and self.g_iter < cfg.total_g_iters:
                ckpt = self.save(self.out_dir / f"ckpt_{self.g_iter:06d}.ckpt")
                self._evaluate_snapshot(ckpt)
        final = self.save(self.out_dir / "ckpt_final.ckpt")
        if cfg.eval_every:
            self._evaluate_snapshot(final)
        return TrainResult(checkpoint_path=final, log=self.log, config=cfg)

    def _evaluate_snapshot(self, ckpt_path) -> metrics.MetricReport:
        report = evaluate(ckpt_path, self.dataset, self.cfg.embedder, self.cfg.n_eval,
                          k=self.cfg.knn_k, seed=self.cfg.seed + _EVAL_SEED_OFFSET,
                          step=self.g_iter)
        with open(self.out_dir / "metrics.jsonl", "a", encoding="utf-8") as fh:
            fh.write(report.to_json_line() + "\n")
        logger.info("eval @ g_iter=%d: fid=%.4f p=%.3f r=%.3f",
                    self.g_iter, report.fid, report.precision, report.recall)
        return report


def _load_module_state(module: torch.nn.Module, prefix: str, tensors: dict) -> None:
    state = {}
    for name, arr in tensors.items():
        if name.startswith(prefix + "."):
            state[name[len(prefix) + 1:]] = torch.from_numpy(arr)
    module.load_state_dict(state, strict=True)


def train(cfg: RunConfig, generator=None, discriminator=None, dataset=None,
          resume=None) -> TrainResult:
    """Run the full training protocol described in the module docstring."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    if resume is None and log_path.exists():
        log_path.unlink()
    trainer = Trainer(cfg, generator=generator, discriminator=discriminator,
                      dataset=dataset, log_path=log_path)
    return trainer.run(resume=resume)


def load_generator(ckpt_path):
    """Rebuild the generator recorded in a checkpoint."""
    manifest, tensors = data_io.load_checkpoint(ckpt_path)
    spec = NetworkSpec.from_dict(manifest["spec"])
    gen = Generator(spec)
    _load_module_state(gen, "g", tensors)
    return gen, manifest


def _prime_batchnorm(generator: Generator, seed: int) -> bool:
    """Populate never-trained running stats with one train-mode forward.

    Evaluating a freshly initialized generator (for the baseline FID of a
    run, say) would otherwise trip the uninitialized-batchnorm guard.
    """
    if not generator.has_uninitialized_stats():
        return False
    warm_gen = torch.Generator().manual_seed(seed)
    z = torch.randn(64, generator.spec.latent_dim, generator=warm_gen)
    was_training = generator.training
    generator.train()
    with torch.no_grad():
        generator(z)
    generator.train(was_training)
    return True


def generate_images(generator: Generator, n: int, seed: int) -> torch.Tensor:
    """n images from seeded N(0, I) latents with eval-mode batchnorm."""
    _prime_batchnorm(generator, seed + _WARMUP_SEED_OFFSET)
    generator.eval()
    z_gen = torch.Generator().manual_seed(seed)
    chunks = []
    with torch.no_grad():
        remaining = n
        while remaining > 0:
            take = min(_EVAL_CHUNK, remaining)
            z = torch.randn(take, generator.spec.latent_dim, generator=z_gen)
            chunks.append(generator(z))
            remaining -= take
    return torch.cat(chunks, dim=0)


def sample(ckpt_path, n: int, seed: int, out_path) -> list:
    """Write sample grids (8x8 pages) plus a raw .npy dump; returns paths."""
    generator, _ = load_generator(ckpt_path)
    images = generate_images(generator, n, seed)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for page, start in enumerate(range(0, n, data_io.GRID_MAX_IMAGES)):
        chunk = images[start:start + data_io.GRID_MAX_IMAGES]
        path = out_path if page == 0 else out_path.with_name(
            f"{out_path.stem}-{page}{out_path.suffix}")
        data_io.write_grid(chunk, path)
        paths.append(path)
    dump_path = out_path.with_suffix(".npy")
    np.save(dump_path, images.numpy())
    paths.append(dump_path)
    return paths


def evaluate(ckpt_path, dataset, embedder_spec: str, n: int, k: int = 3,
             seed: int = 0, step: int = 0) -> metrics.MetricReport:
    """Generate n samples from the checkpoint and compare against n reals."""
    if n < 2:
        raise ValueError("evaluation needs n >= 2")
    if isinstance(dataset, str):
        dataset = data_io.open_dataset(dataset, seed=seed)
    generator, _ = load_generator(ckpt_path)
    fakes = generate_images(generator, n, seed)
    reals = dataset.sample(n, seed)
    embedder = metrics.make_embedder(embedder_spec, image_size=dataset.image_size)
    real_feats = embedder.embed(reals)
    fake_feats = embedder.embed(fakes)
    return metrics.compare_feature_sets(real_feats, fake_feats, k=k, step=step)
