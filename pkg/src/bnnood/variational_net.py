"""Mean-field Gaussian variational networks with manual reverse-mode gradients.

Every learnable weight w_i carries two variational parameters (mu_i, rho_i)
stored in flat float64 vectors; the posterior is the fully factorized
Normal(mu_i, sigma_i^2) with sigma_i = softplus(rho_i), and the prior is
Normal(0, prior_variance) for every weight.  Concrete networks are described
by an ordered tuple of LayerSpec entries; a layer plan maps each entry to
slices of the flat parameter vector, so sampling, KL, and optimization all
operate on plain arrays.

Weight sampling uses the reparameterization w = mu + softplus(rho) * eps with
eps ~ N(0, 1), which keeps the training objective differentiable in
(mu, rho).  The objective is

    loss = pi * KL[q || prior] - sum_b ln softmax(f(w, x_b))[y_b]

averaged over n_mc weight draws; the KL term and its gradients are analytic,
the likelihood term is backpropagated by hand (no autodiff dependency).

Supported layers: dense (with implicit flatten), softplus activation,
valid-padding conv2d, and non-overlapping maxpool.
"""

from dataclasses import dataclass
import json
import struct

import numpy as np

from . import core_math, kernels
from .errors import ConfigError, DataError

LAYER_KINDS = ("dense", "conv2d", "maxpool", "softplus")


@dataclass(frozen=True)
class LayerSpec:
    """One architecture entry.

    For dense layers in_dim/out_dim are feature counts; for conv2d they are
    channel counts and kernel_size/stride describe the square filter.  For
    maxpool kernel_size doubles as the stride (non-overlapping windows).
    Activation layers carry no dimensions.
    """

    kind: str
    in_dim: int = 0
    out_dim: int = 0
    kernel_size: int = 0
    stride: int = 1


def dense(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec("dense", in_dim=int(in_dim), out_dim=int(out_dim))


def softplus_layer() -> LayerSpec:
    return LayerSpec("softplus")


def conv2d(in_channels: int, out_channels: int, kernel_size: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", in_dim=int(in_channels), out_dim=int(out_channels),
                     kernel_size=int(kernel_size), stride=int(stride))


def maxpool(kernel_size: int) -> LayerSpec:
    k = int(kernel_size)
    return LayerSpec("maxpool", kernel_size=k, stride=k)


def mlp(widths) -> tuple:
    """Dense stack with softplus between layers: [2, 32, 3] -> dense, act, dense."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ConfigError("an MLP needs at least input and output widths")
    layers = []
    for i in range(len(widths) - 1):
        if i > 0:
            layers.append(softplus_layer())
        layers.append(dense(widths[i], widths[i + 1]))
    return tuple(layers)


@dataclass(frozen=True)
class _PlannedLayer:
    spec: LayerSpec
    w_slice: slice
    b_slice: slice
    in_shape: tuple
    out_shape: tuple


def _shape_size(shape) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


_PLAN_CACHE: dict = {}


def plan_layers(architecture, input_shape):
    """Validate an architecture against an input shape and slice up the
    flat weight vector.

    Returns (planned_layers, weight_count, class_count).  Raises ConfigError
    when consecutive dimensions do not chain or a spatial layer meets a
    non-image shape.
    """
    architecture = tuple(architecture)
    input_shape = tuple(int(d) for d in input_shape)
    key = (architecture, input_shape)
    cached = _PLAN_CACHE.get(key)
    if cached is not None:
        return cached

    if not architecture:
        raise ConfigError("architecture must contain at least one layer")
    planned = []
    shape = input_shape
    offset = 0
    for idx, spec in enumerate(architecture):
        where = f"layer {idx} ({spec.kind})"
        if spec.kind == "dense":
            flat = _shape_size(shape)
            if flat != spec.in_dim:
                raise ConfigError(
                    f"{where}: expects {spec.in_dim} inputs but receives shape {shape}")
            if spec.out_dim <= 0:
                raise ConfigError(f"{where}: output width must be positive")
            n_w = spec.in_dim * spec.out_dim
            w_sl = slice(offset, offset + n_w)
            b_sl = slice(offset + n_w, offset + n_w + spec.out_dim)
            offset += n_w + spec.out_dim
            out_shape = (spec.out_dim,)
        elif spec.kind == "conv2d":
            if len(shape) != 3:
                raise ConfigError(f"{where}: expects [channels, height, width], got {shape}")
            c, h, w = shape
            if c != spec.in_dim:
                raise ConfigError(f"{where}: expects {spec.in_dim} channels, got {c}")
            k, st = spec.kernel_size, spec.stride
            if k <= 0 or st <= 0:
                raise ConfigError(f"{where}: kernel and stride must be positive")
            if h < k or w < k:
                raise ConfigError(f"{where}: kernel {k} larger than input {h}x{w}")
            out_h = (h - k) // st + 1
            out_w = (w - k) // st + 1
            n_w = spec.out_dim * spec.in_dim * k * k
            w_sl = slice(offset, offset + n_w)
            b_sl = slice(offset + n_w, offset + n_w + spec.out_dim)
            offset += n_w + spec.out_dim
            out_shape = (spec.out_dim, out_h, out_w)
        elif spec.kind == "maxpool":
            if len(shape) != 3:
                raise ConfigError(f"{where}: expects [channels, height, width], got {shape}")
            c, h, w = shape
            k = spec.kernel_size
            if k <= 0 or h % k or w % k:
                raise ConfigError(f"{where}: window {k} must evenly divide {h}x{w}")
            w_sl = b_sl = slice(offset, offset)
            out_shape = (c, h // k, w // k)
        elif spec.kind == "softplus":
            w_sl = b_sl = slice(offset, offset)
            out_shape = shape
        else:
            raise ConfigError(f"{where}: unknown layer kind {spec.kind!r}")
        planned.append(_PlannedLayer(spec, w_sl, b_sl, shape, out_shape))
        shape = out_shape

    if len(shape) != 1:
        raise ConfigError(f"final layer must emit a logit vector, got shape {shape}")
    if architecture[-1].kind != "dense":
        raise ConfigError("final layer must be dense (logit outputs, no activation)")
    result = (tuple(planned), offset, shape[0])
    _PLAN_CACHE[key] = result
    return result


def infer_input_shape(architecture):
    first = tuple(architecture)[0]
    if first.kind == "dense":
        return (first.in_dim,)
    raise ConfigError(
        "input shape cannot be inferred for spatial architectures; pass input_shape")


@dataclass
class VariationalParams:
    """theta = (mu, rho) for every weight, plus the shared prior variance."""

    mu: np.ndarray
    rho: np.ndarray
    architecture: tuple
    input_shape: tuple
    prior_variance: float = 0.01

    @property
    def weight_count(self) -> int:
        return self.mu.shape[0]

    @property
    def class_count(self) -> int:
        return plan_layers(self.architecture, self.input_shape)[2]

    def sigma(self) -> np.ndarray:
        return kernels.softplus(self.rho)

    def validate(self):
        _, count, _ = plan_layers(self.architecture, self.input_shape)
        if self.mu.shape != (count,) or self.rho.shape != (count,):
            raise ConfigError(
                f"parameter vectors must have shape ({count},) for this architecture")
        if not self.prior_variance > 0:
            raise ConfigError("prior_variance must be positive")
        return self


@dataclass(frozen=True)
class WeightSample:
    """One concrete network omega ~ q(omega), with the noise that produced it."""

    values: np.ndarray
    architecture: tuple
    input_shape: tuple
    eps: np.ndarray = None


MU_INIT_STD = 0.1    # Normal(0, 0.01)
RHO_INIT_MEAN = -5.0  # Normal(-5, 0.01); softplus(-5) ~ 0.0067
RHO_INIT_STD = 0.1


def init_params(architecture, seed: int, prior_variance: float = 0.01,
                input_shape=None) -> VariationalParams:
    """Fresh variational parameters: mu ~ N(0, 0.01), rho ~ N(-5, 0.01)."""
    architecture = tuple(architecture)
    if input_shape is None:
        input_shape = infer_input_shape(architecture)
    input_shape = tuple(int(d) for d in input_shape)
    _, count, _ = plan_layers(architecture, input_shape)
    rng = np.random.default_rng(seed)
    mu = rng.normal(0.0, MU_INIT_STD, count)
    rho = rng.normal(RHO_INIT_MEAN, RHO_INIT_STD, count)
    return VariationalParams(mu, rho, architecture, input_shape,
                             float(prior_variance)).validate()


def sample_weights(params: VariationalParams, rng) -> WeightSample:
    """Draw omega = mu + softplus(rho) * eps with eps ~ N(0,1) from ``rng``."""
    eps = rng.standard_normal(params.weight_count)
    values = params.mu + params.sigma() * eps
    return WeightSample(values, params.architecture, params.input_shape, eps)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _im2col(x, k, stride):
    """[B,C,H,W] -> [B,out_h,out_w, C*k*k] patch matrix (read-only view based)."""
    b, c, h, w = x.shape
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (b, c, out_h, out_w, k, k),
        (s0, s1, s2 * stride, s3 * stride, s2, s3), writeable=False)
    return view.transpose(0, 2, 3, 1, 4, 5).reshape(b, out_h, out_w, c * k * k)


def _col2im(dcols, x_shape, k, stride):
    """Scatter-add the im2col adjoint back onto the input grid."""
    b, c, h, w = x_shape
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    dx = np.zeros(x_shape)
    dc = dcols.reshape(b, out_h, out_w, c, k, k)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + out_h * stride:stride, j:j + out_w * stride:stride] += \
                dc[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


def _forward_layers(w, x, planned, keep_cache: bool):
    caches = [] if keep_cache else None
    h = x
    for pl in planned:
        spec = pl.spec
        if spec.kind == "dense":
            entry_shape = h.shape
            if h.ndim > 2:
                h = h.reshape(h.shape[0], -1)
            wmat = w[pl.w_slice].reshape(spec.in_dim, spec.out_dim)
            bias = w[pl.b_slice]
            if keep_cache:
                caches.append((h, entry_shape))
            h = h @ wmat + bias
        elif spec.kind == "softplus":
            if keep_cache:
                caches.append((h,))
            h = kernels.softplus(h)
        elif spec.kind == "conv2d":
            k, st = spec.kernel_size, spec.stride
            cols = _im2col(h, k, st)
            wmat = w[pl.w_slice].reshape(spec.out_dim, spec.in_dim * k * k)
            bias = w[pl.b_slice]
            if keep_cache:
                caches.append((cols, h.shape))
            h = (cols @ wmat.T + bias).transpose(0, 3, 1, 2)
        else:  # maxpool
            k = spec.kernel_size
            b, c, hh, ww = h.shape
            blocks = h.reshape(b, c, hh // k, k, ww // k, k)
            blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, hh // k, ww // k, k * k)
            idx = blocks.argmax(axis=-1)
            if keep_cache:
                caches.append((idx, h.shape))
            h = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return h, caches


def _backward_layers(dz, w, planned, caches):
    """Given dLoss/dLogits, return dLoss/dw over the flat weight vector."""
    gw = np.zeros_like(w)
    for pl, cache in zip(reversed(planned), reversed(caches)):
        spec = pl.spec
        if spec.kind == "dense":
            h_in, entry_shape = cache
            wmat = w[pl.w_slice].reshape(spec.in_dim, spec.out_dim)
            gw[pl.w_slice] = (h_in.T @ dz).ravel()
            gw[pl.b_slice] = dz.sum(axis=0)
            dz = dz @ wmat.T
            if len(entry_shape) > 2:
                dz = dz.reshape(entry_shape)
        elif spec.kind == "softplus":
            (pre,) = cache
            dz = dz * kernels.sigmoid(pre)
        elif spec.kind == "conv2d":
            cols, x_shape = cache
            k, st = spec.kernel_size, spec.stride
            dflat = dz.transpose(0, 2, 3, 1).reshape(-1, spec.out_dim)
            cols2 = cols.reshape(-1, cols.shape[-1])
            gw[pl.w_slice] = (dflat.T @ cols2).ravel()
            gw[pl.b_slice] = dflat.sum(axis=0)
            dcols = (dflat @ w[pl.w_slice].reshape(spec.out_dim, -1)).reshape(cols.shape)
            dz = _col2im(dcols, x_shape, k, st)
        else:  # maxpool
            idx, x_shape = cache
            k = spec.kernel_size
            b, c, hh, ww = x_shape
            dblocks = np.zeros((b, c, hh // k, ww // k, k * k))
            np.put_along_axis(dblocks, idx[..., None], dz[..., None], axis=-1)
            dz = dblocks.reshape(b, c, hh // k, ww // k, k, k) \
                        .transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)
    return gw


def forward(sample: WeightSample, inputs) -> np.ndarray:
    """Logits z(., x, omega); no softmax applied.

    Accepts a single input (shape == input_shape) or a batch with a leading
    axis; the result drops the batch axis in the single-input case.
    """
    planned, count, _ = plan_layers(sample.architecture, sample.input_shape)
    w = np.asarray(sample.values, dtype=np.float64)
    if w.shape != (count,):
        raise ConfigError(f"weight vector must have shape ({count},)")
    x = np.asarray(inputs, dtype=np.float64)
    in_shape = sample.input_shape
    single = x.shape == in_shape
    if single:
        x = x[None]
    if x.shape[1:] != in_shape:
        raise ConfigError(
            f"input shape {x.shape[1:]} does not match architecture input {in_shape}")
    logits, _ = _forward_layers(w, x, planned, keep_cache=False)
    return logits[0] if single else logits


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def kl_to_prior(params: VariationalParams) -> float:
    """Closed-form KL[q(omega) || N(0, prior_variance I)] in nats."""
    return _kl_and_grads(params)[0]


def _kl_and_grads(params):
    s2 = params.prior_variance
    sigma = params.sigma()
    kl = float(np.sum(0.5 * np.log(s2) - np.log(sigma)
                      + (sigma ** 2 + params.mu ** 2) / (2.0 * s2) - 0.5))
    gmu = params.mu / s2
    grho = (sigma / s2 - 1.0 / sigma) * kernels.sigmoid(params.rho)
    return kl, gmu, grho


def _check_labels(labels, class_count):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ConfigError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ConfigError(f"labels must lie in [0, {class_count})")
    return labels


def elbo_loss_fixed_noise(params: VariationalParams, inputs, labels, pi: float, eps):
    """Variational objective and gradients for explicitly supplied noise.

    eps has shape [weight_count] or [n_mc, weight_count]; the likelihood term
    is averaged over the n_mc draws.  Sharing eps across calls makes the
    returned gradient finite-difference checkable.
    """
    if pi < 0:
        raise ConfigError("pi must be nonnegative")
    planned, count, c_out = plan_layers(params.architecture, params.input_shape)
    x = np.asarray(inputs, dtype=np.float64)
    labels = _check_labels(labels, c_out)
    if x.shape[0] == 0:
        raise ConfigError("batch must be nonempty")
    if x.shape[0] != labels.shape[0]:
        raise ConfigError("inputs and labels disagree on batch size")
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if eps.shape[1] != count:
        raise ConfigError(f"noise must have {count} columns")

    sigma = params.sigma()
    sig_rho = kernels.sigmoid(params.rho)
    kl, gmu_kl, grho_kl = _kl_and_grads(params)

    rows = np.arange(x.shape[0])
    nll_sum = 0.0
    gmu_like = np.zeros(count)
    grho_like = np.zeros(count)
    for e in eps:
        w = params.mu + sigma * e
        logits, caches = _forward_layers(w, x, planned, keep_cache=True)
        lse = kernels.logsumexp_lastaxis(logits)
        nll_sum += float(np.sum(lse - logits[rows, labels]))
        dz = kernels.softmax_lastaxis(logits)
        dz[rows, labels] -= 1.0
        gw = _backward_layers(dz, w, planned, caches)
        gmu_like += gw
        grho_like += gw * e * sig_rho
    n_mc = eps.shape[0]
    loss = pi * kl + nll_sum / n_mc
    grad_mu = pi * gmu_kl + gmu_like / n_mc
    grad_rho = pi * grho_kl + grho_like / n_mc
    return loss, grad_mu, grad_rho


def elbo_loss(params: VariationalParams, inputs, labels, pi: float, rng, n_mc: int = 1):
    """Draw n_mc noise vectors from ``rng`` and evaluate the objective."""
    if n_mc < 1:
        raise ConfigError("n_mc must be at least 1")
    eps = rng.standard_normal((n_mc, params.weight_count))
    return elbo_loss_fixed_noise(params, inputs, labels, pi, eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"BNNVARCK"


def save_checkpoint(params: VariationalParams, path, config_hash: str = None):
    """Binary checkpoint: magic, JSON header, then big-endian mu and rho.

    Deliberately timestamp-free so identical runs produce identical bytes.
    """
    header = {
        "architecture": [[s.kind, s.in_dim, s.out_dim, s.kernel_size, s.stride]
                         for s in params.architecture],
        "config_hash": config_hash,
        "input_shape": list(params.input_shape),
        "prior_variance": params.prior_variance,
        "weight_count": params.weight_count,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(">I", len(blob)))
        fh.write(blob)
        fh.write(params.mu.astype(">f8").tobytes())
        fh.write(params.rho.astype(">f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (params, header dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or not raw.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack(">I", raw[pos:pos + 4])
    pos += 4
    if len(raw) < pos + header_len:
        raise DataError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc
    pos += header_len
    count = int(header["weight_count"])
    expected = 2 * 8 * count
    if len(raw) - pos != expected:
        raise DataError(
            f"{path}: payload holds {len(raw) - pos} bytes, expected {expected}")
    mu = np.frombuffer(raw, dtype=">f8", count=count, offset=pos).astype(np.float64)
    rho = np.frombuffer(raw, dtype=">f8", count=count,
                        offset=pos + 8 * count).astype(np.float64)
    architecture = tuple(LayerSpec(k, i, o, ks, st)
                         for k, i, o, ks, st in header["architecture"])
    params = VariationalParams(mu, rho, architecture,
                               tuple(header["input_shape"]),
                               float(header["prior_variance"]))
    try:
        params.validate()
    except ConfigError as exc:
        raise DataError(f"{path}: inconsistent checkpoint: {exc}") from exc
    return params, header
