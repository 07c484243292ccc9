"""Adversarial training loop with diffusive discriminator inputs,
noise-level annealing, and bit-exact checkpoints.

One step: (1) sample aligned LR/HR patches, (2) bicubic-upscale the LR
side, (3) update the discriminator on diffused real vs diffused detached
fake residuals, (4) update the generator on the five-term objective with
the adversarial term flowing through the (freshly updated)
discriminator, (5) advance the schedules, restart policy, diffusion
state, and noise multiplier. All randomness lives in named per-purpose
streams, so a (seed, config, data) triple fixes the entire metric
stream, and a checkpoint restores bit-identical continuation.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import tensor as T
from .config import RunConfig, parse_config, serialize_config
from .errors import CheckpointError, FftsrError
from .image import Image, resample_bicubic, resample_nchw
from .nets import Discriminator, Generator, NoiseState
from .optim import AdamW
from .tensor import Tensor

__all__ = [
    "DiffusionState",
    "Trainer",
    "TrainAbort",
    "Checkpoint",
    "read_checkpoint",
    "write_checkpoint",
    "sample_patches",
    "upscale_image",
    "build_generator",
]

CHECKPOINT_MAGIC = b"FRED"
CHECKPOINT_VERSION = 1


class TrainAbort(FftsrError):
    """Raised when a non-finite loss stops training; carries diagnostics."""

    def __init__(self, message, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---- diffusion ----


@dataclass
class DiffusionState:
    """Forward-chain Gaussian diffusion with an adaptive maximum timestep.

    alpha_bar follows a linear beta schedule; t = 0 adds no noise. The
    maximum timestep tracks an EMA of sign(D(real) - 0.5): when the
    discriminator keeps winning, t_max_current climbs, feeding it harder
    inputs; when it struggles, the noise backs off.
    """

    t_max: int = 500
    beta_start: float = 1e-4
    beta_end: float = 0.02
    target: float = 0.6
    stride: int = 1
    ema_decay: float = 0.99
    enabled: bool = True

    t: int = 0
    r_d: float = 0.0
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        steps = max(self.t_max, 1)
        betas = np.linspace(self.beta_start, self.beta_end, steps, dtype=np.float64)
        bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        self.alpha_bar = bars  # alpha_bar[0] = 1 (no noise at t = 0)

    def diffuse(self, residual: Tensor, rng: np.random.Generator) -> Tensor:
        """sqrt(abar_t) * r + sqrt(1 - abar_t) * eps with t ~ U{0..t}.

        Consumes no randomness when disabled or at t = 0, keeping the
        non-diffusive ablation bit-identical to the t = 0 path.
        """
        if not self.enabled or self.t == 0:
            return residual
        n = residual.shape[0]
        ts = rng.integers(0, self.t + 1, size=n)
        eps = rng.standard_normal(residual.shape).astype(residual.data.dtype)
        bars = self.alpha_bar[ts].reshape(n, 1, 1, 1)
        signal = np.sqrt(bars).astype(residual.data.dtype)
        noise = (np.sqrt(1.0 - bars).astype(residual.data.dtype)) * eps
        return residual * Tensor(signal) + Tensor(noise)

    def adapt(self, d_real_values: np.ndarray):
        """EMA the overfit estimate and nudge the max timestep toward target."""
        batch_sign = float(np.mean(np.sign(d_real_values - 0.5)))
        self.r_d = self.ema_decay * self.r_d + (1.0 - self.ema_decay) * batch_sign
        direction = int(np.sign(self.r_d - self.target))
        self.t = int(np.clip(self.t + self.stride * direction, 0, self.t_max))


# ---- patch sampling ----


def sample_patches(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    patch: int,
    scale: int,
    rng: np.random.Generator,
    batch: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform aligned crops -> (lr NCHW, hr NCHW) float32 batches.

    Crop offsets are multiples of ``scale`` so the LR crop is exactly the
    corresponding window of the prepared LR image.
    """
    lr_patch = patch // scale
    lrs = np.empty((batch, 3, lr_patch, lr_patch), dtype=np.float32)
    hrs = np.empty((batch, 3, patch, patch), dtype=np.float32)
    n = len(pairs)
    for b in range(batch):
        idx = int(rng.integers(0, n))
        lr, hr = pairs[idx]
        max_y = (hr.shape[0] - patch) // scale
        max_x = (hr.shape[1] - patch) // scale
        y0 = int(rng.integers(0, max_y + 1)) * scale
        x0 = int(rng.integers(0, max_x + 1)) * scale
        hrs[b] = hr[y0 : y0 + patch, x0 : x0 + patch].transpose(2, 0, 1)
        ly, lx = y0 // scale, x0 // scale
        lrs[b] = lr[ly : ly + lr_patch, lx : lx + lr_patch].transpose(2, 0, 1)
    return lrs, hrs


# ---- inference helpers ----


def build_generator(cfg: RunConfig, seed: int = 0) -> Generator:
    return Generator(cfg.model_config().generator, np.random.default_rng(np.random.SeedSequence(seed)))


def upscale_image(gen: Generator, img: Image, scale: int) -> Image:
    """clamp(bicubic(img) + G(bicubic(img)), 0, 1) in eval mode."""
    up = resample_bicubic(img, img.height * scale, img.width * scale)
    x = Tensor(up.data.transpose(2, 0, 1)[None].astype(np.float32))
    with T.no_grad():
        residual = gen(x, noise=None, training=False)
        sr = T.clamp(x + residual, 0.0, 1.0)
    return Image(sr.data[0].transpose(1, 2, 0), tag="generated")


# ---- trainer ----

_STREAMS = ("patch", "noise", "diffusion", "reinit")


class Trainer:
    """Owns both networks and every piece of adaptive training state."""

    def __init__(self, cfg: RunConfig, seed: int, pairs: list[tuple[np.ndarray, np.ndarray]]):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.scale = cfg.get("data.scale")
        self.patch = cfg.get("data.patch")
        self.batch = cfg.get("data.batch")
        self.pairs = self._usable_pairs(pairs)

        root = np.random.SeedSequence(seed)
        init_gen, init_disc, *streams = root.spawn(2 + len(_STREAMS))
        model = cfg.model_config()
        self.gen = Generator(model.generator, np.random.default_rng(init_gen))
        self.disc = Discriminator(model.discriminator, np.random.default_rng(init_disc))
        self.rng = {name: np.random.default_rng(seq) for name, seq in zip(_STREAMS, streams)}

        self.weights = cfg.loss_weights()
        self.extractor = L.PerceptualExtractor()
        self.opt_g = AdamW(
            list(self.gen.named_parameters("gen.")),
            lr=cfg.get("opt.lr_g"),
            beta1=cfg.get("opt.beta1"),
            beta2=cfg.get("opt.beta2"),
            eps=cfg.get("opt.eps"),
            weight_decay=cfg.get("opt.weight_decay"),
        )
        self.opt_d = AdamW(
            list(self.disc.named_parameters("disc.")),
            lr=cfg.get("opt.lr_d"),
            beta1=cfg.get("opt.beta1"),
            beta2=cfg.get("opt.beta2"),
            eps=cfg.get("opt.eps"),
            weight_decay=cfg.get("opt.weight_decay"),
        )
        self.sched_g = cfg.schedule(cfg.get("opt.lr_g"))
        self.sched_d = cfg.schedule(cfg.get("opt.lr_d"))
        self.policy = cfg.restart_policy()
        self.policy_enabled = cfg.get("policy.enabled")
        self.diffusion = DiffusionState(
            t_max=cfg.get("diffusion.t_max"),
            beta_start=cfg.get("diffusion.beta_start"),
            beta_end=cfg.get("diffusion.beta_end"),
            target=cfg.get("diffusion.target"),
            stride=cfg.get("diffusion.stride"),
            ema_decay=cfg.get("train.ema_decay"),
            enabled=cfg.get("diffusion.enabled"),
        )
        self.adapt_every = cfg.get("diffusion.adapt_every")
        self.noise = NoiseState(sigma0=cfg.get("gen.noise_sigma"), rng=self.rng["noise"])
        self.ema_decay = cfg.get("train.ema_decay")
        self.noise_warmup = cfg.get("noise.warmup_steps")
        self.loss_ema = 0.0
        self.loss_initial = None
        self.warmup_count = 0
        self.step = 0

    def _usable_pairs(self, pairs):
        usable = []
        self.skipped = []
        for i, (lr, hr) in enumerate(pairs):
            if hr.shape[0] < self.patch or hr.shape[1] < self.patch:
                self.skipped.append(i)
                continue
            usable.append((np.asarray(lr, dtype=np.float32), np.asarray(hr, dtype=np.float32)))
        if not usable:
            raise FftsrError(f"no training image is at least {self.patch}px on both sides")
        return usable

    # one step, split into the two half-updates for testability

    def _forward_generator(self, up_t: Tensor) -> Tensor:
        return self.gen(up_t, noise=self.noise, training=True)

    def _disc_update(self, real_res: Tensor, fake_res_detached: Tensor):
        d_real = self.disc(self.diffusion.diffuse(real_res, self.rng["diffusion"]), training=True)
        d_fake = self.disc(self.diffusion.diffuse(fake_res_detached, self.rng["diffusion"]), training=True)
        d_loss = L.adversarial_disc_loss(d_real, d_fake)
        self._check_finite({"d_loss": d_loss.item()})
        self.opt_d.zero_grad()
        d_loss.backward()
        lr_d = self.sched_d.lr_at(self.step) * self.policy.disc_lr_multiplier
        self.opt_d.step(lr=lr_d)
        return d_loss.item(), d_real.data, d_fake.data, lr_d

    def _gen_update(self, up_t: Tensor, fake_res: Tensor, hr_t: Tensor):
        sr = T.clamp(up_t + fake_res, 0.0, 1.0)
        d_fake = self.disc(self.diffusion.diffuse(fake_res, self.rng["diffusion"]), training=False)
        adv = L.adversarial_gen_loss(d_fake)
        perc = L.perceptual_loss(sr, hr_t, self.extractor)
        mge = L.mge_loss(sr, hr_t)
        ssim_v = L.ssim(sr, hr_t)
        charb = L.charbonnier(sr, hr_t, self.weights.charbonnier_eps)
        effective = L.LossWeights(
            adversarial=self.weights.adversarial * self.policy.adv_multiplier,
            perceptual=self.weights.perceptual,
            mge=self.weights.mge,
            ssim=self.weights.ssim,
            charbonnier=self.weights.charbonnier,
            charbonnier_eps=self.weights.charbonnier_eps,
        )
        total = L.total_generator_loss(adv, perc, mge, ssim_v, charb, effective)
        terms = {
            "g_adv": adv.item(),
            "g_perc": perc.item(),
            "g_mge": mge.item(),
            "g_ssim": ssim_v.item(),
            "g_charb": charb.item(),
            "g_loss": total.item(),
        }
        self._check_finite(terms)
        self.opt_g.zero_grad()
        total.backward()
        lr_g = self.sched_g.lr_at(self.step)
        self.opt_g.step(lr=lr_g)
        terms["lr_g"] = lr_g
        return terms

    def _check_finite(self, terms: dict):
        bad = {k: v for k, v in terms.items() if not math.isfinite(v)}
        if bad:
            raise TrainAbort(
                f"non-finite loss at step {self.step}: {bad}",
                diagnostics={"step": self.step, **terms},
            )

    def train_step(self) -> dict:
        lr_b, hr_b = sample_patches(
            self.pairs, self.patch, self.scale, self.rng["patch"], self.batch
        )
        up = resample_nchw(lr_b, self.patch, self.patch, kind="bicubic")
        up_t = Tensor(up)
        hr_t = Tensor(hr_b)
        real_res = Tensor(hr_b - up)

        fake_res = self._forward_generator(up_t)
        d_loss, d_real_vals, d_fake_vals, lr_d = self._disc_update(real_res, fake_res.detach())
        terms = self._gen_update(up_t, fake_res, hr_t)

        correct = np.concatenate([d_real_vals > 0.5, d_fake_vals < 0.5])
        d_acc = float(np.mean(correct))
        if self.policy_enabled:
            action = self.policy.observe(d_acc, self.step)
            if action.kind == "enter_boost" and action.reinit_discriminator:
                self._reinit_discriminator()
        if (self.step + 1) % self.adapt_every == 0:
            self.diffusion.adapt(d_real_vals)
        self._update_noise_multiplier(terms["g_loss"])

        record = {
            "step": self.step,
            **terms,
            "d_loss": d_loss,
            "d_acc": d_acc,
            "lr_d": lr_d,
            "T": self.diffusion.t,
            "r_d": self.diffusion.r_d,
            "noise": self.noise.multiplier,
        }
        self.step += 1
        return record

    def _update_noise_multiplier(self, g_loss: float):
        if self.warmup_count == 0:
            self.loss_ema = g_loss
        else:
            self.loss_ema = self.ema_decay * self.loss_ema + (1.0 - self.ema_decay) * g_loss
        if self.warmup_count < self.noise_warmup:
            self.warmup_count += 1
            if self.warmup_count == self.noise_warmup:
                self.loss_initial = self.loss_ema
            return
        if self.loss_initial is None or self.loss_initial == 0.0:
            return
        self.noise.multiplier = float(np.clip(self.loss_ema / self.loss_initial, 0.0, 1.0))

    def _reinit_discriminator(self):
        fresh = Discriminator(self.cfg.model_config().discriminator, self.rng["reinit"])
        for (_, old), (_, new) in zip(self.disc.named_parameters(), fresh.named_parameters()):
            old.data = new.data
        self.opt_d.m = [np.zeros_like(p.data) for p in self.opt_d.params]
        self.opt_d.v = [np.zeros_like(p.data) for p in self.opt_d.params]

    @staticmethod
    def format_metrics(record: dict) -> str:
        parts = []
        for key, value in record.items():
            if isinstance(value, float):
                parts.append(f"{key}={value!r}")
            else:
                parts.append(f"{key}={value}")
        return " ".join(parts)

    # ---- checkpoint integration ----

    def snapshot(self) -> tuple[dict, dict]:
        """(state text mapping, tensor table mapping) capturing everything."""
        state = {
            "state.step": str(self.step),
            "state.seed": str(self.seed),
            "state.opt_g.t": str(self.opt_g.t),
            "state.opt_d.t": str(self.opt_d.t),
            "state.diffusion.t": str(self.diffusion.t),
            "state.diffusion.r_d": repr(self.diffusion.r_d),
            "state.noise.multiplier": repr(self.noise.multiplier),
            "state.noise.ema": repr(self.loss_ema),
            "state.noise.initial": "none" if self.loss_initial is None else repr(self.loss_initial),
            "state.noise.warmup_count": str(self.warmup_count),
            "state.policy.mode": self.policy.mode,
            "state.policy.disc_lr_multiplier": repr(self.policy.disc_lr_multiplier),
            "state.policy.adv_multiplier": repr(self.policy.adv_multiplier),
            "state.policy.last_trigger_step": str(self.policy.last_trigger_step),
        }
        for name, rng in self.rng.items():
            bg = rng.bit_generator.state
            state[f"state.rng.{name}.state"] = str(bg["state"]["state"])
            state[f"state.rng.{name}.inc"] = str(bg["state"]["inc"])
            state[f"state.rng.{name}.has_uint32"] = str(bg["has_uint32"])
            state[f"state.rng.{name}.uinteger"] = str(bg["uinteger"])

        tensors: dict[str, np.ndarray] = {}
        for name, p in list(self.gen.named_parameters("gen.")) + list(
            self.disc.named_parameters("disc.")
        ):
            tensors[f"param.{name}"] = p.data
        for prefix, module in (("gen.", self.gen), ("disc.", self.disc)):
            for name, owner, attr in module.named_buffers(prefix):
                tensors[f"buffer.{name}"] = getattr(owner, attr)
        for tag, opt in (("g", self.opt_g), ("d", self.opt_d)):
            for pname, m, v in zip(opt.names, opt.m, opt.v):
                tensors[f"opt.{tag}.m.{pname}"] = m
                tensors[f"opt.{tag}.v.{pname}"] = v
        tensors["state.policy.window"] = np.asarray(self.policy._acc, dtype=np.float64)
        return state, tensors

    def restore(self, state: dict, tensors: dict):
        self.step = int(state["state.step"])
        self.opt_g.t = int(state["state.opt_g.t"])
        self.opt_d.t = int(state["state.opt_d.t"])
        self.diffusion.t = int(state["state.diffusion.t"])
        self.diffusion.r_d = float(state["state.diffusion.r_d"])
        self.noise.multiplier = float(state["state.noise.multiplier"])
        self.loss_ema = float(state["state.noise.ema"])
        raw_initial = state["state.noise.initial"]
        self.loss_initial = None if raw_initial == "none" else float(raw_initial)
        self.warmup_count = int(state["state.noise.warmup_count"])
        self.policy.mode = state["state.policy.mode"]
        self.policy.disc_lr_multiplier = float(state["state.policy.disc_lr_multiplier"])
        self.policy.adv_multiplier = float(state["state.policy.adv_multiplier"])
        self.policy.last_trigger_step = int(state["state.policy.last_trigger_step"])
        for name, rng in self.rng.items():
            bg = rng.bit_generator.state
            bg["state"]["state"] = int(state[f"state.rng.{name}.state"])
            bg["state"]["inc"] = int(state[f"state.rng.{name}.inc"])
            bg["has_uint32"] = int(state[f"state.rng.{name}.has_uint32"])
            bg["uinteger"] = int(state[f"state.rng.{name}.uinteger"])
            rng.bit_generator.state = bg

        for name, p in list(self.gen.named_parameters("gen.")) + list(
            self.disc.named_parameters("disc.")
        ):
            p.data = tensors[f"param.{name}"].copy()
        for prefix, module in (("gen.", self.gen), ("disc.", self.disc)):
            for name, owner, attr in module.named_buffers(prefix):
                setattr(owner, attr, tensors[f"buffer.{name}"].copy())
        for tag, opt in (("g", self.opt_g), ("d", self.opt_d)):
            opt.m = [tensors[f"opt.{tag}.m.{p}"].copy() for p in opt.names]
            opt.v = [tensors[f"opt.{tag}.v.{p}"].copy() for p in opt.names]
        window = tensors["state.policy.window"]
        self.policy._acc = [float(v) for v in window]

    @classmethod
    def from_checkpoint(cls, ckpt: "Checkpoint", pairs) -> "Trainer":
        trainer = cls(ckpt.config, int(ckpt.state["state.seed"]), pairs)
        trainer.restore(ckpt.state, ckpt.tensors)
        return trainer


# ---- checkpoint file format ----

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class Checkpoint:
    config: RunConfig
    config_text: str
    state: dict
    tensors: dict

    @property
    def step(self) -> int:
        return int(self.state["state.step"])


def write_checkpoint(path, config_text: str, state: dict, tensors: dict):
    """magic, version, key=value text, tensor table, trailing CRC32."""
    text_lines = [config_text.rstrip("\n")]
    for key in sorted(state):
        text_lines.append(f"{key} = {state[key]}")
    blob = "\n".join(text_lines).encode("utf-8") + b"\n"

    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<I", len(blob))
    out += blob
    names = sorted(tensors)
    out += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        tag = _DTYPE_TAGS[np.dtype(arr.dtype)]
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<BB", tag, arr.ndim)
        for extent in arr.shape:
            out += struct.pack("<I", extent)
        out += arr.astype(_TAG_DTYPES[tag], copy=False).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic (not a checkpoint file)", section="magic")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", section="version")
    if len(raw) < 4:
        raise CheckpointError("file truncated before checksum", section="checksum")
    (stored_crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checksum mismatch in tensor table", section="checksum")

    pos = 8
    (text_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if pos + text_len > len(raw) - 4:
        raise CheckpointError("config text overruns the file", section="config")
    try:
        text = raw[pos : pos + text_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"config text is not UTF-8: {exc}", section="config") from None
    pos += text_len

    config_lines = []
    state: dict[str, str] = {}
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("state."):
            key, _, value = stripped.partition("=")
            state[key.strip()] = value.strip()
        else:
            config_lines.append(line)
    config_text = "\n".join(config_lines) + "\n"
    try:
        config = parse_config(config_text)
    except FftsrError as exc:
        raise CheckpointError(f"embedded config invalid: {exc}", section="config") from None

    tensors: dict[str, np.ndarray] = {}
    try:
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + name_len].decode("utf-8")
            pos += name_len
            tag, rank = struct.unpack_from("<BB", raw, pos)
            pos += 2
            shape = struct.unpack_from(f"<{rank}I", raw, pos) if rank else ()
            pos += 4 * rank
            dtype = _TAG_DTYPES[tag]
            nbytes = int(np.prod(shape, dtype=np.int64) if rank else 1) * dtype.itemsize
            payload = raw[pos : pos + nbytes]
            if len(payload) != nbytes:
                raise CheckpointError(f"tensor {name!r} payload truncated", section="tensor table")
            pos += nbytes
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed tensor table: {exc}", section="tensor table") from None
    if pos != len(raw) - 4:
        raise CheckpointError("trailing bytes after tensor table", section="tensor table")
    return Checkpoint(config=config, config_text=config_text, state=state, tensors=tensors)


def save_trainer(trainer: Trainer, path):
    state, tensors = trainer.snapshot()
    write_checkpoint(path, serialize_config(trainer.cfg), state, tensors)


def generator_from_checkpoint(ckpt: Checkpoint) -> Generator:
    gen = build_generator(ckpt.config, seed=0)
    for name, p in gen.named_parameters("gen."):
        p.data = ckpt.tensors[f"param.{name}"].copy()
    for name, owner, attr in gen.named_buffers("gen."):
        setattr(owner, attr, ckpt.tensors[f"buffer.{name}"].copy())
    return gen


def parameter_counts(ckpt: Checkpoint) -> dict:
    gen = sum(v.size for k, v in ckpt.tensors.items() if k.startswith("param.gen."))
    disc = sum(v.size for k, v in ckpt.tensors.items() if k.startswith("param.disc."))
    return {"generator": int(gen), "discriminator": int(disc)}
