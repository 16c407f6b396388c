"""Learnable three-channel codec with conditional entropy models.

Five encoder layouts around one common and two private channels:

* ``shared``     two analysis transforms, each emitting a private part and a
                 common half; the halves are quantized and merged by the
                 match-or-zero combine rule.
* ``separated``  three independent analysis transforms, one per channel.
* ``combined``   one analysis transform whose output splits into the three
                 channel codes.
* ``joint``      a single channel feeds both task decoders.
* ``independent``  one private channel per task, no common channel.

Each task decoder consumes its private code concatenated with the common
code. Channel rates come from discretized-Gaussian entropy models; the
private models condition their (mean, scale) heads on the common code. All
transforms are dense ELU stacks, trained with Adam under the scaled
Lagrangian plus the half-matching auxiliary penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import range_coder as rc
from .errors import NumericalError, ValidationError
from .evaluation import GWRatePoint

ARCHS = ("shared", "separated", "combined", "joint", "independent")

SCALE_FLOOR = 1e-6
LIKELIHOOD_FLOOR = 2.0 ** -16
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class CodecConfig:
    arch: str
    latent_dim: int = 8  # E; channels are E/2 wide, joint/independent use E
    beta: float = 1.0
    eta: float = 0.1
    gamma: float = 1.0
    lambda1: float | None = None  # defaults to 1/eta
    lambda2: float | None = None
    seed: int = 0
    hidden_mult: int = 4

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValidationError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.beta <= 0 or self.eta <= 0:
            raise ValidationError("beta and eta must be positive")
        if self.latent_dim < 2 or self.latent_dim % 2:
            raise ValidationError("latent_dim must be an even integer >= 2")

    @property
    def lam1(self) -> float:
        return self.lambda1 if self.lambda1 is not None else 1.0 / self.eta

    @property
    def lam2(self) -> float:
        return self.lambda2 if self.lambda2 is not None else 1.0 / self.eta


@dataclass
class ChannelCodes:
    y0: ad.Tensor | None
    y1: ad.Tensor | None
    y2: ad.Tensor | None
    y0_half1: ad.Tensor | None = None
    y0_half2: ad.Tensor | None = None


def combine_y0(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Merge quantized common halves: mean where equal, zero otherwise.

    The surrogate gradient routes half of the output gradient to each input
    at matching positions and none at mismatches.
    """
    return ad.combine_matched(a, b)


# --- dense stacks ---------------------------------------------------------------

def _init_dense(rng: np.random.Generator, prefix: str, dims: list[int]) -> dict:
    params = {}
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        params[f"{prefix}.w{i}"] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (dims[i], dims[i + 1]))
        params[f"{prefix}.b{i}"] = np.zeros(dims[i + 1])
    return params


def _dense_layers(prefix: str, params: dict) -> int:
    return sum(1 for k in params if k.startswith(f"{prefix}.w"))


def _dense_forward(tape, leaves, prefix: str, x: ad.Tensor, n_layers: int) -> ad.Tensor:
    h = x
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, leaves[f"{prefix}.w{i}"]), leaves[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = ad.elu(h)
    return h


def _dense_forward_np(params: dict, prefix: str, x: np.ndarray, n_layers: int) -> np.ndarray:
    h = x
    for i in range(n_layers):
        h = h @ params[f"{prefix}.w{i}"] + params[f"{prefix}.b{i}"]
        if i < n_layers - 1:
            h = np.where(h > 0, h, np.expm1(h))
    return h


# --- entropy models --------------------------------------------------------------

def _std_normal_cdf(t: ad.Tensor) -> ad.Tensor:
    return ad.mul(ad.add(ad.erf(ad.mul(t, 1.0 / _SQRT2)), 1.0), 0.5)


def discretized_gaussian_bits(y: ad.Tensor, loc: ad.Tensor, scale: ad.Tensor) -> ad.Tensor:
    """Total code length of integer symbols under N(loc, scale) unit bins."""
    upper = _std_normal_cdf(ad.div(ad.add(ad.sub(y, loc), 0.5), scale))
    lower = _std_normal_cdf(ad.div(ad.add(ad.sub(y, loc), -0.5), scale))
    p = ad.lower_bound(ad.sub(upper, lower), LIKELIHOOD_FLOOR)
    return ad.mul(ad.tsum(ad.log(p)), -1.0 / math.log(2.0))


def _gaussian_pmf_np(loc: float, scale: float, lo: int, hi: int) -> np.ndarray:
    """Bin masses over integer support [lo, hi] with absorbing tail bins."""
    from scipy.special import ndtr

    edges = np.arange(lo, hi + 1) + 0.5
    cdf = ndtr((edges - loc) / scale)
    pmf = np.diff(np.concatenate([[0.0], cdf]))
    pmf[0] = cdf[0]
    pmf[-1] += 1.0 - cdf[-1]
    return np.maximum(pmf, 0.0)


class GrayWynerCodec:
    """One trained or trainable codec instance bound to a source geometry."""

    def __init__(self, cfg: CodecConfig, input_dim: int, target_dim: int,
                 pixels: int, task_kind: str):
        self.cfg = cfg
        self.input_dim = input_dim
        self.target_dim = target_dim
        self.pixels = pixels
        self.task_kind = task_kind
        e = cfg.latent_dim
        hidden = cfg.hidden_mult * e
        # every analysis transform emits e values; the channel widths follow
        # from how each layout carves that output up
        if cfg.arch == "combined":
            if e % 3:
                raise ValidationError("combined arch needs latent_dim divisible by 3")
            self.private_w = e // 3
            self.common_w = e // 3
        elif cfg.arch == "joint":
            self.private_w = 0
            self.common_w = e
        elif cfg.arch == "independent":
            self.private_w = e
            self.common_w = 0
        else:  # shared, separated
            self.private_w = e // 2
            self.common_w = e // 2

        rng = np.random.default_rng((cfg.seed, 0xC0DEC))
        p: dict[str, np.ndarray] = {}
        analysis_out = {
            "shared": self.private_w + self.common_w,
            "separated": None,
            "combined": 2 * self.private_w + self.common_w,
            "joint": self.common_w,
            "independent": self.private_w,
        }[cfg.arch]
        if cfg.arch == "shared":
            p.update(_init_dense(rng, "a1", [input_dim, hidden, hidden, analysis_out]))
            p.update(_init_dense(rng, "a2", [input_dim, hidden, hidden, analysis_out]))
        elif cfg.arch == "separated":
            p.update(_init_dense(rng, "a1", [input_dim, hidden, hidden, self.private_w]))
            p.update(_init_dense(rng, "a2", [input_dim, hidden, hidden, self.private_w]))
            p.update(_init_dense(rng, "a0", [input_dim, hidden, hidden, self.common_w]))
        elif cfg.arch == "combined":
            p.update(_init_dense(rng, "a", [input_dim, hidden, hidden, analysis_out]))
        elif cfg.arch == "joint":
            p.update(_init_dense(rng, "a", [input_dim, hidden, hidden, analysis_out]))
        else:  # independent
            p.update(_init_dense(rng, "a1", [input_dim, hidden, hidden, self.private_w]))
            p.update(_init_dense(rng, "a2", [input_dim, hidden, hidden, self.private_w]))

        dec1_in = {
            "shared": self.private_w + self.common_w,
            "separated": self.private_w + self.common_w,
            "combined": self.private_w + self.common_w,
            "joint": self.common_w,
            "independent": self.private_w,
        }[cfg.arch]
        p.update(_init_dense(rng, "g1", [dec1_in, hidden, hidden, target_dim]))
        p.update(_init_dense(rng, "g2", [dec1_in, hidden, hidden, target_dim]))

        # wide initial scales and tame latents keep the discretized-Gaussian
        # likelihoods off their tail floor at the start of training
        for name in ("a", "a0", "a1", "a2"):
            key = f"{name}.w2"
            if key in p:
                p[key] = p[key] * 0.5
        if self.has_common:
            p["h0.loc"] = np.zeros(self.common_w)
            p["h0.scale"] = np.full(self.common_w, 2.0)
        if self.has_private:
            if self.has_common:
                p.update(_init_dense(rng, "h1", [self.common_w, hidden, 2 * self.private_w]))
                p.update(_init_dense(rng, "h2", [self.common_w, hidden, 2 * self.private_w]))
                p["h1.b1"][self.private_w :] = 2.0
                p["h2.b1"][self.private_w :] = 2.0
            else:
                p["h1.loc"] = np.zeros(self.private_w)
                p["h1.scale"] = np.full(self.private_w, 2.0)
                p["h2.loc"] = np.zeros(self.private_w)
                p["h2.scale"] = np.full(self.private_w, 2.0)
        self.params = p

    @property
    def has_common(self) -> bool:
        return self.cfg.arch != "independent"

    @property
    def has_private(self) -> bool:
        return self.cfg.arch != "joint"

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    # --- tape forward -----------------------------------------------------------

    def leaves(self, tape: ad.Tape) -> dict[str, ad.Tensor]:
        return {k: tape.leaf(v) for k, v in self.params.items()}

    def forward_codes(self, tape, leaves, x: np.ndarray) -> ChannelCodes:
        xt = tape.constant(x)
        arch = self.cfg.arch
        if arch == "shared":
            out1 = _dense_forward(tape, leaves, "a1", xt, 3)
            out2 = _dense_forward(tape, leaves, "a2", xt, 3)
            y1_pre, half1_pre = ad.split(out1, [self.private_w, self.common_w])
            y2_pre, half2_pre = ad.split(out2, [self.private_w, self.common_w])
            half1 = ad.st_quantize(half1_pre)
            half2 = ad.st_quantize(half2_pre)
            return ChannelCodes(
                y0=combine_y0(half1, half2),
                y1=ad.st_quantize(y1_pre),
                y2=ad.st_quantize(y2_pre),
                y0_half1=half1,
                y0_half2=half2,
            )
        if arch == "separated":
            return ChannelCodes(
                y0=ad.st_quantize(_dense_forward(tape, leaves, "a0", xt, 3)),
                y1=ad.st_quantize(_dense_forward(tape, leaves, "a1", xt, 3)),
                y2=ad.st_quantize(_dense_forward(tape, leaves, "a2", xt, 3)),
            )
        if arch == "combined":
            out = _dense_forward(tape, leaves, "a", xt, 3)
            y1_pre, y2_pre, y0_pre = ad.split(
                out, [self.private_w, self.private_w, self.common_w]
            )
            return ChannelCodes(
                y0=ad.st_quantize(y0_pre),
                y1=ad.st_quantize(y1_pre),
                y2=ad.st_quantize(y2_pre),
            )
        if arch == "joint":
            return ChannelCodes(
                y0=ad.st_quantize(_dense_forward(tape, leaves, "a", xt, 3)),
                y1=None,
                y2=None,
            )
        return ChannelCodes(
            y0=None,
            y1=ad.st_quantize(_dense_forward(tape, leaves, "a1", xt, 3)),
            y2=ad.st_quantize(_dense_forward(tape, leaves, "a2", xt, 3)),
        )

    def decode_tasks(self, tape, leaves, codes: ChannelCodes):
        arch = self.cfg.arch
        if arch == "joint":
            in1 = in2 = codes.y0
        elif arch == "independent":
            in1, in2 = codes.y1, codes.y2
        else:
            in1 = ad.concat([codes.y1, codes.y0])
            in2 = ad.concat([codes.y2, codes.y0])
        pred1 = _dense_forward(tape, leaves, "g1", in1, 3)
        pred2 = _dense_forward(tape, leaves, "g2", in2, 3)
        return pred1, pred2

    def _unconditional_params(self, tape, leaves, name: str, n: int):
        loc = leaves[f"{name}.loc"]
        scale = ad.add(ad.softplus(leaves[f"{name}.scale"]), SCALE_FLOOR)
        ones = tape.constant(np.ones((n, 1)))
        width = loc.data.shape[0]
        loc_b = ad.matmul(ones, _reshape_row(tape, loc, width))
        scale_b = ad.matmul(ones, _reshape_row(tape, scale, width))
        return loc_b, scale_b

    def _conditional_params(self, tape, leaves, name: str, context: ad.Tensor):
        out = _dense_forward(tape, leaves, name, context, 2)
        loc, raw_scale = ad.split(out, [self.private_w, self.private_w])
        return loc, ad.add(ad.softplus(raw_scale), SCALE_FLOOR)

    def rate_terms(self, tape, leaves, codes: ChannelCodes):
        """Per-channel total code length (bits) for the batch under the models."""
        n = None
        for code in (codes.y0, codes.y1, codes.y2):
            if code is not None:
                n = code.data.shape[0]
                break
        zero = tape.constant(np.asarray(0.0))
        if self.has_common:
            loc0, scale0 = self._unconditional_params(tape, leaves, "h0", n)
            r0 = discretized_gaussian_bits(codes.y0, loc0, scale0)
        else:
            r0 = zero
        if self.has_private:
            if self.has_common:
                loc1, scale1 = self._conditional_params(tape, leaves, "h1", codes.y0)
                loc2, scale2 = self._conditional_params(tape, leaves, "h2", codes.y0)
            else:
                loc1, scale1 = self._unconditional_params(tape, leaves, "h1", n)
                loc2, scale2 = self._unconditional_params(tape, leaves, "h2", n)
            r1 = discretized_gaussian_bits(codes.y1, loc1, scale1)
            r2 = discretized_gaussian_bits(codes.y2, loc2, scale2)
        else:
            r1 = zero
            r2 = zero
        return r0, r1, r2

    # --- numpy forward (coding path) ----------------------------------------------

    def codes_np(self, x: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        arch = self.cfg.arch

        def q(v):
            return np.copysign(np.floor(np.abs(v) + 0.5), v)

        if arch == "shared":
            out1 = _dense_forward_np(p, "a1", x, 3)
            out2 = _dense_forward_np(p, "a2", x, 3)
            y1 = q(out1[:, : self.private_w])
            half1 = q(out1[:, self.private_w :])
            y2 = q(out2[:, : self.private_w])
            half2 = q(out2[:, self.private_w :])
            y0 = np.where(half1 == half2, 0.5 * (half1 + half2), 0.0)
            return {"y0": y0, "y1": y1, "y2": y2, "half1": half1, "half2": half2}
        if arch == "separated":
            return {
                "y0": q(_dense_forward_np(p, "a0", x, 3)),
                "y1": q(_dense_forward_np(p, "a1", x, 3)),
                "y2": q(_dense_forward_np(p, "a2", x, 3)),
            }
        if arch == "combined":
            out = q(_dense_forward_np(p, "a", x, 3))
            return {
                "y1": out[:, : self.private_w],
                "y2": out[:, self.private_w : 2 * self.private_w],
                "y0": out[:, 2 * self.private_w :],
            }
        if arch == "joint":
            return {"y0": q(_dense_forward_np(p, "a", x, 3))}
        return {
            "y1": q(_dense_forward_np(p, "a1", x, 3)),
            "y2": q(_dense_forward_np(p, "a2", x, 3)),
        }

    def predictions_np(self, codes: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        arch = self.cfg.arch
        if arch == "joint":
            in1 = in2 = codes["y0"]
        elif arch == "independent":
            in1, in2 = codes["y1"], codes["y2"]
        else:
            in1 = np.concatenate([codes["y1"], codes["y0"]], axis=1)
            in2 = np.concatenate([codes["y2"], codes["y0"]], axis=1)
        return (
            _dense_forward_np(self.params, "g1", in1, 3),
            _dense_forward_np(self.params, "g2", in2, 3),
        )

    def _uncond_np(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        loc = self.params[f"{name}.loc"]
        scale = np.logaddexp(0.0, self.params[f"{name}.scale"]) + SCALE_FLOOR
        return loc, scale

    def _cond_np(self, name: str, context: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = _dense_forward_np(self.params, name, context, 2)
        loc = out[:, : self.private_w]
        scale = np.logaddexp(0.0, out[:, self.private_w :]) + SCALE_FLOOR
        return loc, scale


def _reshape_row(tape, t: ad.Tensor, width: int) -> ad.Tensor:
    # view a vector parameter as a (1, width) row for broadcasting matmul
    def bwd(grad):
        return (grad.reshape(t.data.shape),)

    return tape._record(t.data.reshape(1, width), (t.idx,), bwd)


def build_arch(cfg: CodecConfig, source) -> GrayWynerCodec:
    """Instantiate the codec graph for a source's geometry."""
    return GrayWynerCodec(
        cfg,
        input_dim=source.input_dim,
        target_dim=source.target_dim,
        pixels=source.pixels,
        task_kind=source.task_kind,
    )


def loss_augmented(tape, codec: GrayWynerCodec, codes: ChannelCodes, rates, distortions):
    """Scaled Lagrangian plus the common-half matching penalty.

    eta * [beta r0 + r1 + r2 + lam1 d1 + lam2 d2] + gamma/|Y0| * E||half1-half2||^2
    with rates in bits per sample.
    """
    cfg = codec.cfg
    r0, r1, r2 = rates
    d1, d2 = distortions
    n = None
    for code in (codes.y0, codes.y1, codes.y2):
        if code is not None:
            n = code.data.shape[0]
            break
    inv_n = 1.0 / n
    lagrangian = ad.add(
        ad.mul(r0, cfg.beta * inv_n),
        ad.add(ad.mul(r1, inv_n), ad.mul(r2, inv_n)),
    )
    lagrangian = ad.add(lagrangian, ad.add(ad.mul(d1, cfg.lam1), ad.mul(d2, cfg.lam2)))
    loss = ad.mul(lagrangian, cfg.eta)
    if codes.y0_half1 is not None:
        width = codes.y0_half1.data.shape[1]
        aux = ad.mul(ad.sum_sq(ad.sub(codes.y0_half1, codes.y0_half2)),
                     cfg.gamma * inv_n / width)
        loss = ad.add(loss, aux)
    return loss


def task_distortion(tape, pred: ad.Tensor, target: np.ndarray, task_kind: str) -> ad.Tensor:
    if task_kind == "regression":
        diff = ad.sub(pred, tape.constant(target))
        return ad.sqrt(ad.tmean(ad.mul(diff, diff)))
    return ad.cross_entropy(pred, target)


@dataclass
class TrainResult:
    codec: GrayWynerCodec
    point: GWRatePoint
    history: list[dict] = field(repr=False, default_factory=list)
    stopped_epoch: int = 0


def _step_loss(codec, x, t1, t2):
    tape = ad.Tape()
    leaves = codec.leaves(tape)
    codes = codec.forward_codes(tape, leaves, x)
    pred1, pred2 = codec.decode_tasks(tape, leaves, codes)
    rates = codec.rate_terms(tape, leaves, codes)
    d1 = task_distortion(tape, pred1, t1, codec.task_kind)
    d2 = task_distortion(tape, pred2, t2, codec.task_kind)
    loss = loss_augmented(tape, codec, codes, rates, (d1, d2))
    return tape, leaves, codes, rates, (d1, d2), (pred1, pred2), loss


def evaluate(codec: GrayWynerCodec, source, val_steps: int, batch_size: int,
             val_offset: int = 1_000_000) -> dict:
    """Validation rates (bits and bpp) and distortions on a fixed batch stream."""
    n_total = 0
    bits = np.zeros(3)
    dist = np.zeros(2)
    correct = np.zeros(2)
    loss_total = 0.0
    for k in range(val_steps):
        x, t1, t2 = source.batch(batch_size, val_offset + k)
        tape, leaves, codes, rates, dts, preds, loss = _step_loss(codec, x, t1, t2)
        bits += [float(r.data) for r in rates]
        dist += [float(d.data) for d in dts]
        loss_total += float(loss.data)
        if codec.task_kind == "classification":
            correct[0] += (preds[0].data.argmax(1) == t1).sum()
            correct[1] += (preds[1].data.argmax(1) == t2).sum()
        n_total += batch_size
    r0, r1, r2 = bits / n_total
    out = {
        "R0": r0,
        "R1": r1,
        "R2": r2,
        "D1": dist[0] / val_steps,
        "D2": dist[1] / val_steps,
        "loss": loss_total / val_steps,
    }
    if codec.task_kind == "classification":
        out["acc1"] = correct[0] / n_total
        out["acc2"] = correct[1] / n_total
    return out


def train(
    cfg: CodecConfig,
    source,
    steps: int = 50,
    val_steps: int = 5,
    max_epochs: int = 40,
    patience: int = 10,
    batch_size: int = 100,
    lr: float = 1e-4,
) -> TrainResult:
    """Adam training with early stopping on validation loss.

    ``steps`` batches per epoch; batches are deterministic in
    (source seed, batch index), so identical configs retrain identically.
    """
    codec = build_arch(cfg, source)
    state = ad.adam_init(codec.params)
    best_loss = math.inf
    best_params = {k: v.copy() for k, v in codec.params.items()}
    best_epoch = 0
    history = []
    bad_epochs = 0
    for epoch in range(max_epochs):
        for step in range(steps):
            idx = epoch * steps + step
            x, t1, t2 = source.batch(batch_size, idx)
            tape, leaves, codes, rates, dts, preds, loss = _step_loss(codec, x, t1, t2)
            if not np.isfinite(loss.data):
                raise NumericalError(
                    f"training diverged at epoch {epoch} step {step}: loss={loss.data!r}"
                )
            grads_list = ad.backward(tape, loss)
            grads = {k: ad.gradient(grads_list, leaves[k]) for k in codec.params}
            codec.params, state = ad.adam_step(
                codec.params, grads, state, lr=lr, clip_norm=1.0
            )
        metrics = evaluate(codec, source, val_steps, batch_size)
        history.append({"epoch": epoch, **metrics})
        if metrics["loss"] < best_loss - 1e-9:
            best_loss = metrics["loss"]
            best_params = {k: v.copy() for k, v in codec.params.items()}
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= patience:
                break
    codec.params = best_params
    metrics = evaluate(codec, source, val_steps, batch_size)
    point = GWRatePoint.from_channel_rates(
        arch=cfg.arch,
        beta=cfg.beta,
        eta=cfg.eta,
        r0=metrics["R0"],
        r1=metrics["R1"],
        r2=metrics["R2"],
        d1=metrics["D1"],
        d2=metrics["D2"],
        pixels=codec.pixels,
        acc1=metrics.get("acc1"),
        acc2=metrics.get("acc2"),
    )
    return TrainResult(codec=codec, point=point, history=history, stopped_epoch=best_epoch)


# --- real coding -------------------------------------------------------------------

def _support_bounds(loc: np.ndarray, scale: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = np.ceil(8.0 * scale + 8.0).astype(np.int64)
    center = np.round(loc).astype(np.int64)
    return center - half, center + half


def _element_cdfs(loc: np.ndarray, scale: np.ndarray):
    lows, highs = _support_bounds(loc, scale)
    cdfs = []
    for mu, sig, lo, hi in zip(loc.reshape(-1), scale.reshape(-1),
                               lows.reshape(-1), highs.reshape(-1)):
        cdfs.append((int(lo), rc.quantize_cdf(_gaussian_pmf_np(mu, sig, int(lo), int(hi)))))
    return cdfs


def _model_bits(loc, scale, values) -> float:
    from scipy.special import ndtr

    upper = ndtr((values + 0.5 - loc) / scale)
    lower = ndtr((values - 0.5 - loc) / scale)
    p = np.maximum(upper - lower, LIKELIHOOD_FLOOR)
    return float(-np.log2(p).sum())


def _encode_channel(values: np.ndarray, cdfs) -> bytes:
    flat = values.reshape(-1).astype(np.int64)
    offsets = np.array([c[0] for c in cdfs], dtype=np.int64)
    symbols = flat - offsets
    tables = [c[1] for c in cdfs]
    for i, s in enumerate(symbols):
        if not 0 <= s < len(tables[i]) - 1:
            raise ValidationError(
                f"latent value {flat[i]} escapes the model support at element {i}"
            )
    return rc.encode(symbols.tolist(), lambda i: tables[i]).data


def _decode_channel(payload: bytes, cdfs, count: int) -> np.ndarray:
    symbols = rc.decode(rc.Bitstream(payload, 8 * len(payload)), lambda i: cdfs[i][1], count)
    offsets = np.array([c[0] for c in cdfs[:count]], dtype=np.int64)
    return np.asarray(symbols, dtype=np.int64) + offsets


def _batched(cdfs_per_element, n: int):
    return cdfs_per_element * n


def encode_batch(codec: GrayWynerCodec, x: np.ndarray) -> tuple[bytes, dict, dict]:
    """Range-encode one batch.

    Returns (container, integer codes, bits report); the report carries the
    model estimate and the actual payload length per channel.
    """
    codes = codec.codes_np(x)
    n = x.shape[0]
    streams = []
    report: dict[str, dict[str, float]] = {}

    if codec.has_common:
        loc0, scale0 = codec._uncond_np("h0")
        per_element = _element_cdfs(loc0, scale0)
        cdfs = _batched(per_element, n)
        payload = _encode_channel(codes["y0"], cdfs)
        report["y0"] = {
            "model_bits": _model_bits(loc0[None, :], scale0[None, :], codes["y0"]),
            "actual_bits": 8.0 * len(payload),
        }
        streams.append((codes["y0"].size, payload))
    else:
        streams.append((0, b""))

    if codec.has_private:
        if codec.has_common:
            loc1, scale1 = codec._cond_np("h1", codes["y0"])
            loc2, scale2 = codec._cond_np("h2", codes["y0"])
        else:
            u1, s1 = codec._uncond_np("h1")
            u2, s2 = codec._uncond_np("h2")
            loc1 = np.broadcast_to(u1, (n, u1.size))
            scale1 = np.broadcast_to(s1, (n, s1.size))
            loc2 = np.broadcast_to(u2, (n, u2.size))
            scale2 = np.broadcast_to(s2, (n, s2.size))
        for key, loc, scale in (("y1", loc1, scale1), ("y2", loc2, scale2)):
            cdfs = _element_cdfs(loc, scale)
            payload = _encode_channel(codes[key], cdfs)
            report[key] = {
                "model_bits": _model_bits(loc, scale, codes[key]),
                "actual_bits": 8.0 * len(payload),
            }
            streams.append((codes[key].size, payload))
    else:
        streams.append((0, b""))
        streams.append((0, b""))

    return rc.write_container(streams), codes, report


def decode_batch(codec: GrayWynerCodec, blob: bytes) -> dict[str, np.ndarray]:
    """Decode a container: common channel first, then privates conditioned on it."""
    channels = rc.read_container(blob, 3)
    out: dict[str, np.ndarray] = {}

    (count0, payload0), (count1, payload1), (count2, payload2) = channels
    if codec.has_common:
        n = count0 // codec.common_w
        loc0, scale0 = codec._uncond_np("h0")
        cdfs = _batched(_element_cdfs(loc0, scale0), n)
        out["y0"] = _decode_channel(payload0, cdfs, count0).reshape(n, codec.common_w)
    if codec.has_private:
        n = count1 // codec.private_w
        if codec.has_common:
            loc1, scale1 = codec._cond_np("h1", out["y0"].astype(np.float64))
            loc2, scale2 = codec._cond_np("h2", out["y0"].astype(np.float64))
            cdfs1 = _element_cdfs(loc1, scale1)
            cdfs2 = _element_cdfs(loc2, scale2)
        else:
            u1, s1 = codec._uncond_np("h1")
            u2, s2 = codec._uncond_np("h2")
            cdfs1 = _batched(_element_cdfs(u1, s1), n)
            cdfs2 = _batched(_element_cdfs(u2, s2), n)
        out["y1"] = _decode_channel(payload1, cdfs1, count1).reshape(n, codec.private_w)
        out["y2"] = _decode_channel(payload2, cdfs2, count2).reshape(n, codec.private_w)
    return out
