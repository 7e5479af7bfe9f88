"""Multilayer ReLU autoencoder with batch normalization.

The encoder maps inputs to a low-dimensional latent code; the decoder is
a mirrored stack mapping the code back.  Hidden layers are
affine -> batch norm -> ReLU; the bottleneck output and the final decoder
layer skip batch norm (the final decoder layer is linear by default so
reconstructions can take any real value).

Training minimizes, over a mini-batch, the joint per-sample loss

    sum_i ||g(f(x_i)) - x_i||^2  +  (lam/2) * sum_i ||f(x_i) - m_i||^2

where ``m_i`` is the centroid currently assigned to sample i.  The
``backward`` pass returns exact gradients of that summed loss; they are
validated against central finite differences in the test suite.

Forward evaluation in train mode uses batch statistics; inference mode
uses the stored running statistics and never mutates anything, so
repeated calls are bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, ShapeError
from .linalg import as_matrix

BN_EPS = 1e-5
BN_MOMENTUM = 0.99

ACTIVATIONS = ("relu", "linear")

CHECKPOINT_MAGIC = b"DCNP"
CHECKPOINT_VERSION = 1
_ACT_CODES = {"linear": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass
class LayerSpec:
    """Shape and wiring of one affine layer."""

    in_dim: int
    out_dim: int
    activation: str = "relu"
    batch_norm: bool = True

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(
                f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class LayerParams:
    """Parameter arrays for one layer; batch-norm arrays are None when off."""

    spec: LayerSpec
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    def copy(self) -> "LayerParams":
        return LayerParams(
            spec=self.spec,
            weight=self.weight.copy(),
            bias=self.bias.copy(),
            gamma=None if self.gamma is None else self.gamma.copy(),
            beta=None if self.beta is None else self.beta.copy(),
            running_mean=None
            if self.running_mean is None
            else self.running_mean.copy(),
            running_var=None if self.running_var is None else self.running_var.copy(),
        )


@dataclass
class AutoencoderParams:
    """Encoder and decoder layer stacks.

    Invariant: decoder layer dimensions are the exact reverse of the
    encoder's, and all running variances stay strictly positive.
    """

    encoder: list[LayerParams]
    decoder: list[LayerParams]

    def __post_init__(self):
        enc_dims = [(lp.spec.in_dim, lp.spec.out_dim) for lp in self.encoder]
        dec_dims = [(lp.spec.in_dim, lp.spec.out_dim) for lp in self.decoder]
        mirrored = [(o, i) for (i, o) in reversed(enc_dims)]
        if dec_dims != mirrored:
            raise ValueError(
                f"decoder dims {dec_dims} are not the mirror of encoder dims {enc_dims}"
            )
        for lp in self.encoder + self.decoder:
            if lp.running_var is not None and not np.all(lp.running_var > 0):
                raise ValueError("running variances must stay strictly positive")

    @property
    def input_dim(self) -> int:
        return self.encoder[0].spec.in_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].spec.out_dim

    def layers(self) -> list[LayerParams]:
        return self.encoder + self.decoder

    def named_arrays(self):
        """Trainable arrays as (name, array) pairs in declaration order."""
        for side, stack in (("enc", self.encoder), ("dec", self.decoder)):
            for i, lp in enumerate(stack):
                yield f"{side}{i}.weight", lp.weight
                yield f"{side}{i}.bias", lp.bias
                if lp.spec.batch_norm:
                    yield f"{side}{i}.gamma", lp.gamma
                    yield f"{side}{i}.beta", lp.beta

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(
            encoder=[lp.copy() for lp in self.encoder],
            decoder=[lp.copy() for lp in self.decoder],
        )


@dataclass
class LayerGrads:
    weight: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None


@dataclass
class GradientSet:
    """Gradients mirroring :class:`AutoencoderParams`."""

    encoder: list[LayerGrads]
    decoder: list[LayerGrads]

    def named_arrays(self):
        for side, stack in (("enc", self.encoder), ("dec", self.decoder)):
            for i, lg in enumerate(stack):
                yield f"{side}{i}.weight", lg.weight
                yield f"{side}{i}.bias", lg.bias
                if lg.gamma is not None:
                    yield f"{side}{i}.gamma", lg.gamma
                    yield f"{side}{i}.beta", lg.beta

    def scale(self, factor: float) -> "GradientSet":
        for _, arr in self.named_arrays():
            arr *= factor
        return self


@dataclass
class _LayerCache:
    x: np.ndarray  # layer input
    z: np.ndarray  # affine output
    mean: np.ndarray | None
    var: np.ndarray | None
    xhat: np.ndarray | None
    act_in: np.ndarray  # what the activation saw (bn output or z)
    out: np.ndarray


@dataclass
class ForwardTrace:
    """Per-layer intermediates of one forward pass, for backprop.

    ``caches`` covers encoder then decoder layers, so its depth equals
    encoder depth + decoder depth.
    """

    caches: list[_LayerCache] = field(default_factory=list)
    latent: np.ndarray | None = None
    reconstruction: np.ndarray | None = None
    train: bool = True

    @property
    def depth(self) -> int:
        return len(self.caches)


def encoder_specs(
    input_dim: int,
    widths,
    bottleneck_activation: str = "relu",
    batch_norm: bool = True,
) -> list[LayerSpec]:
    """Specs for an encoder stack ``input_dim -> widths[0] -> ... -> widths[-1]``.

    Hidden layers are ReLU with batch norm (when enabled); the bottleneck
    layer uses ``bottleneck_activation`` and never batch norm.
    """
    widths = list(widths)
    if not widths:
        raise ValueError("need at least one layer width")
    dims = [input_dim] + widths
    specs = []
    for i in range(len(widths)):
        last = i == len(widths) - 1
        specs.append(
            LayerSpec(
                in_dim=dims[i],
                out_dim=dims[i + 1],
                activation=bottleneck_activation if last else "relu",
                batch_norm=False if last else batch_norm,
            )
        )
    return specs


def mirror_specs(specs: list[LayerSpec], output_activation: str = "linear") -> list[LayerSpec]:
    """Decoder specs: reversed dims; the final layer is ``output_activation``
    without batch norm, hidden layers mirror their encoder partner."""
    out = []
    for j, enc_spec in enumerate(reversed(specs)):
        last = j == len(specs) - 1
        out.append(
            LayerSpec(
                in_dim=enc_spec.out_dim,
                out_dim=enc_spec.in_dim,
                activation=output_activation if last else "relu",
                batch_norm=False if last else enc_spec.batch_norm,
            )
        )
    return out


def _init_layer(spec: LayerSpec, rng: np.random.Generator) -> LayerParams:
    # Uniform +-sqrt(6/(fan_in+fan_out)), biases zero.
    limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
    weight = rng.uniform(-limit, limit, size=(spec.out_dim, spec.in_dim))
    bias = np.zeros(spec.out_dim)
    if spec.batch_norm:
        return LayerParams(
            spec=spec,
            weight=weight,
            bias=bias,
            gamma=np.ones(spec.out_dim),
            beta=np.zeros(spec.out_dim),
            running_mean=np.zeros(spec.out_dim),
            running_var=np.ones(spec.out_dim),
        )
    return LayerParams(spec=spec, weight=weight, bias=bias)


def init_params(
    specs: list[LayerSpec],
    rng,
    output_activation: str = "linear",
) -> AutoencoderParams:
    """Random autoencoder from encoder specs plus a mirrored decoder."""
    rng = np.random.default_rng(rng)
    dec_specs = mirror_specs(specs, output_activation=output_activation)
    return AutoencoderParams(
        encoder=[_init_layer(s, rng) for s in specs],
        decoder=[_init_layer(s, rng) for s in dec_specs],
    )


def _layer_forward(lp: LayerParams, x: np.ndarray, train: bool) -> _LayerCache:
    if x.shape[1] != lp.spec.in_dim:
        raise ShapeError(
            f"layer expects {lp.spec.in_dim} input columns, got {x.shape[1]}"
        )
    z = x @ lp.weight.T + lp.bias
    if lp.spec.batch_norm:
        if train:
            if x.shape[0] < 2:
                raise ValueError(
                    "batch norm in train mode needs a batch of at least 2 samples"
                )
            mean = z.mean(axis=0)
            var = z.var(axis=0)
        else:
            mean = lp.running_mean
            var = lp.running_var
        xhat = (z - mean) / np.sqrt(var + BN_EPS)
        act_in = lp.gamma * xhat + lp.beta
    else:
        mean = var = xhat = None
        act_in = z
    out = np.maximum(act_in, 0.0) if lp.spec.activation == "relu" else act_in
    return _LayerCache(x=x, z=z, mean=mean, var=var, xhat=xhat, act_in=act_in, out=out)


def _stack_forward(layers: list[LayerParams], x: np.ndarray, train: bool):
    caches = []
    cur = x
    for lp in layers:
        cache = _layer_forward(lp, cur, train)
        caches.append(cache)
        cur = cache.out
    return cur, caches


def _layer_backward(lp: LayerParams, cache: _LayerCache, d_out: np.ndarray, train: bool):
    if lp.spec.activation == "relu":
        # Subgradient at exactly 0 is 0, keeping dead units dead.
        d_act = d_out * (cache.act_in > 0)
    else:
        d_act = d_out
    if lp.spec.batch_norm:
        d_gamma = (d_act * cache.xhat).sum(axis=0)
        d_beta = d_act.sum(axis=0)
        d_xhat = d_act * lp.gamma
        inv_std = 1.0 / np.sqrt(cache.var + BN_EPS)
        if train:
            m = cache.z.shape[0]
            zc = cache.z - cache.mean
            d_var = (d_xhat * zc).sum(axis=0) * (-0.5) * inv_std**3
            d_mean = -(d_xhat.sum(axis=0)) * inv_std + d_var * (-2.0 / m) * zc.sum(
                axis=0
            )
            dz = d_xhat * inv_std + d_var * (2.0 / m) * zc + d_mean / m
        else:
            dz = d_xhat * inv_std
    else:
        d_gamma = d_beta = None
        dz = d_act
    d_weight = dz.T @ cache.x
    d_bias = dz.sum(axis=0)
    d_x = dz @ lp.weight
    return d_x, LayerGrads(weight=d_weight, bias=d_bias, gamma=d_gamma, beta=d_beta)


def _stack_backward(layers, caches, d_out, train):
    grads = [None] * len(layers)
    cur = d_out
    for i in range(len(layers) - 1, -1, -1):
        cur, grads[i] = _layer_backward(layers[i], caches[i], cur, train)
    return cur, grads


def _commit_stats(layers, caches, momentum: float = BN_MOMENTUM) -> None:
    for lp, cache in zip(layers, caches):
        if lp.spec.batch_norm:
            lp.running_mean *= momentum
            lp.running_mean += (1.0 - momentum) * cache.mean
            lp.running_var *= momentum
            lp.running_var += (1.0 - momentum) * cache.var


def commit_batch_stats(
    params: AutoencoderParams, trace: ForwardTrace, momentum: float = BN_MOMENTUM
) -> None:
    """Fold the trace's batch statistics into the running statistics."""
    if not trace.train:
        raise ValueError("only train-mode traces carry batch statistics")
    _commit_stats(params.layers(), trace.caches, momentum)


def _check_mode(mode: str) -> bool:
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return mode == "train"


def encode(params: AutoencoderParams, x, mode: str = "infer") -> np.ndarray:
    """Latent codes for the rows of ``x``.

    Train mode normalizes with batch statistics and folds them into the
    running statistics; infer mode reads the running statistics and
    leaves all state untouched.
    """
    train = _check_mode(mode)
    x = as_matrix(x, "x")
    out, caches = _stack_forward(params.encoder, x, train)
    if train:
        for lp, cache in zip(params.encoder, caches):
            if lp.spec.batch_norm:
                lp.running_mean *= BN_MOMENTUM
                lp.running_mean += (1.0 - BN_MOMENTUM) * cache.mean
                lp.running_var *= BN_MOMENTUM
                lp.running_var += (1.0 - BN_MOMENTUM) * cache.var
    return out


def decode(params: AutoencoderParams, h, mode: str = "infer") -> np.ndarray:
    """Reconstructions from latent codes; modes behave as in :func:`encode`."""
    train = _check_mode(mode)
    h = as_matrix(h, "h")
    out, caches = _stack_forward(params.decoder, h, train)
    if train:
        for lp, cache in zip(params.decoder, caches):
            if lp.spec.batch_norm:
                lp.running_mean *= BN_MOMENTUM
                lp.running_mean += (1.0 - BN_MOMENTUM) * cache.mean
                lp.running_var *= BN_MOMENTUM
                lp.running_var += (1.0 - BN_MOMENTUM) * cache.var
    return out


def forward_trace(params: AutoencoderParams, x, train: bool = True) -> ForwardTrace:
    """Full encoder+decoder pass recording every intermediate.

    Pure: running statistics are read but never written.  Use
    :func:`commit_batch_stats` to fold a train-mode trace's batch
    statistics into the parameters.
    """
    x = as_matrix(x, "x")
    h, enc_caches = _stack_forward(params.encoder, x, train)
    rec, dec_caches = _stack_forward(params.decoder, h, train)
    return ForwardTrace(
        caches=enc_caches + dec_caches, latent=h, reconstruction=rec, train=train
    )


def joint_loss(
    params: AutoencoderParams,
    x_batch,
    m_assigned,
    lam: float,
    mode: str = "train",
    include_reconstruction: bool = True,
):
    """Joint reconstruction + latent clustering loss over a batch.

    Parameters
    ----------
    x_batch : ndarray (n, input_dim)
    m_assigned : ndarray (n, latent_dim)
        Row i holds the centroid currently assigned to sample i.
    lam : float >= 0
        Weight of the clustering penalty (applied as lam/2).
    include_reconstruction : bool
        When False the reconstruction term is dropped entirely (the
        clustering-only ablation).

    Returns
    -------
    (total, recon, clust) : tuple of floats
        ``recon = sum_i ||g(f(x_i)) - x_i||^2``,
        ``clust = (lam/2) * sum_i ||f(x_i) - m_i||^2``, and total is
        their sum (or just ``clust`` when reconstruction is excluded).
        Never mutates running statistics.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    train = _check_mode(mode)
    x_batch = as_matrix(x_batch, "x_batch")
    m_assigned = as_matrix(m_assigned, "m_assigned")
    if m_assigned.shape[0] != x_batch.shape[0]:
        raise ShapeError(
            f"m_assigned has {m_assigned.shape[0]} rows, batch has {x_batch.shape[0]}"
        )
    trace = forward_trace(params, x_batch, train=train)
    if m_assigned.shape[1] != trace.latent.shape[1]:
        raise ShapeError(
            f"m_assigned has {m_assigned.shape[1]} columns, latent dim is "
            f"{trace.latent.shape[1]}"
        )
    rdiff = trace.reconstruction - x_batch
    recon = float(np.einsum("ij,ij->", rdiff, rdiff))
    if lam == 0:
        clust = 0.0
    else:
        cdiff = trace.latent - m_assigned
        clust = 0.5 * lam * float(np.einsum("ij,ij->", cdiff, cdiff))
    total = (recon + clust) if include_reconstruction else clust
    return total, recon, clust


def backward(
    params: AutoencoderParams,
    trace: ForwardTrace,
    x_batch,
    m_assigned,
    lam: float,
    include_reconstruction: bool = True,
) -> GradientSet:
    """Exact gradients of :func:`joint_loss` (summed over the batch).

    ``trace`` must come from a matching :func:`forward_trace` call on the
    same parameters and batch; a stale or mismatched trace raises.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    x_batch = as_matrix(x_batch, "x_batch")
    m_assigned = as_matrix(m_assigned, "m_assigned")
    n_layers = len(params.encoder) + len(params.decoder)
    if trace.depth != n_layers:
        raise ValueError(
            f"trace depth {trace.depth} does not match network depth {n_layers}"
        )
    if trace.caches[0].x.shape != x_batch.shape or not np.array_equal(
        trace.caches[0].x, x_batch
    ):
        raise ValueError("trace does not belong to this batch")

    n_enc = len(params.encoder)
    if include_reconstruction:
        d_rec = 2.0 * (trace.reconstruction - x_batch)
    else:
        d_rec = np.zeros_like(trace.reconstruction)
    d_latent, dec_grads = _stack_backward(
        params.decoder, trace.caches[n_enc:], d_rec, trace.train
    )
    if lam != 0:
        d_latent = d_latent + lam * (trace.latent - m_assigned)
    _, enc_grads = _stack_backward(
        params.encoder, trace.caches[:n_enc], d_latent, trace.train
    )
    return GradientSet(encoder=enc_grads, decoder=dec_grads)


def pretrain_layerwise(
    data,
    specs: list[LayerSpec],
    *,
    alpha: float,
    epochs: int,
    batch_size: int,
    momentum: float = 0.9,
    nesterov: bool = True,
    output_activation: str = "linear",
    seed=0,
) -> AutoencoderParams:
    """Greedy layer-wise initialization of the full autoencoder.

    Each encoder layer and its mirrored decoder layer are trained as a
    shallow two-layer autoencoder on the frozen (inference-mode) output
    of the layers below, using the reconstruction loss only.  With
    ``epochs=0`` the random initialization is returned unchanged.
    """
    from .optim import init_sgd_state, make_batches, sgd_step

    data = as_matrix(data, "data")
    if data.shape[0] == 0:
        raise ValueError("empty dataset")
    if data.shape[1] != specs[0].in_dim:
        raise ShapeError(
            f"data has {data.shape[1]} columns, first layer expects {specs[0].in_dim}"
        )
    ss = np.random.SeedSequence(seed)
    init_seed, shuffle_seed = ss.spawn(2)
    params = init_params(specs, init_seed, output_activation=output_activation)

    depth = len(specs)
    shuffle_seeds = shuffle_seed.spawn(depth * max(epochs, 1))
    current = data
    for level in range(depth):
        enc_layer = params.encoder[level]
        dec_layer = params.decoder[depth - 1 - level]
        pair = [enc_layer, dec_layer]
        pair_params = AutoencoderParams(encoder=[enc_layer], decoder=[dec_layer])
        if epochs > 0:
            opt = init_sgd_state(
                pair_params.named_arrays(), alpha, momentum=momentum, nesterov=nesterov
            )
            for ep in range(epochs):
                opt.epoch = ep
                plan = make_batches(
                    current.shape[0],
                    min(batch_size, current.shape[0]),
                    shuffle_seeds[level * epochs + ep],
                )
                for idx in plan:
                    xb = current[idx]
                    out, caches = _stack_forward(pair, xb, train=True)
                    d_rec = 2.0 * (out - xb) / xb.shape[0]
                    _, grads = _stack_backward(pair, caches, d_rec, True)
                    named_grads = [
                        (f"enc0.{leaf}", getattr(grads[0], leaf))
                        for leaf in ("weight", "bias", "gamma", "beta")
                        if getattr(grads[0], leaf) is not None
                    ] + [
                        (f"dec0.{leaf}", getattr(grads[1], leaf))
                        for leaf in ("weight", "bias", "gamma", "beta")
                        if getattr(grads[1], leaf) is not None
                    ]
                    sgd_step(opt, list(pair_params.named_arrays()), named_grads)
                    for lp, cache in zip(pair, caches):
                        if lp.spec.batch_norm:
                            lp.running_mean *= BN_MOMENTUM
                            lp.running_mean += (1.0 - BN_MOMENTUM) * cache.mean
                            lp.running_var *= BN_MOMENTUM
                            lp.running_var += (1.0 - BN_MOMENTUM) * cache.var
        if not np.all(np.isfinite(enc_layer.weight)):
            raise ValueError(f"pretraining diverged at layer {level}")
        # Deeper layers consume the frozen inference-mode output.
        current, _ = _stack_forward([enc_layer], current, train=False)
        if not np.all(np.isfinite(current)):
            raise ValueError(f"layer {level} produced non-finite outputs")
    return params


def save_checkpoint(path, params: AutoencoderParams) -> None:
    """Write parameters in the DCNP binary format (see README).

    Little-endian throughout: magic ``DCNP``, u32 version, u32 encoder
    layer count, u32 decoder layer count; one header per layer (u32
    in_dim, u32 out_dim, u8 activation code, u8 batch-norm flag); then
    raw float64 arrays in declaration order (weight row-major, bias, and
    for batch-norm layers gamma, beta, running mean, running variance).
    """
    layers = params.layers()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(
            struct.pack(
                "<III", CHECKPOINT_VERSION, len(params.encoder), len(params.decoder)
            )
        )
        for lp in layers:
            f.write(
                struct.pack(
                    "<IIBB",
                    lp.spec.in_dim,
                    lp.spec.out_dim,
                    _ACT_CODES[lp.spec.activation],
                    1 if lp.spec.batch_norm else 0,
                )
            )
        for lp in layers:
            f.write(lp.weight.astype("<f8").tobytes())
            f.write(lp.bias.astype("<f8").tobytes())
            if lp.spec.batch_norm:
                for arr in (lp.gamma, lp.beta, lp.running_mean, lp.running_var):
                    f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> AutoencoderParams:
    """Read a DCNP checkpoint written by :func:`save_checkpoint`."""

    def read_exact(f, n):
        buf = f.read(n)
        if len(buf) != n:
            raise DataFormatError(f"{path}: truncated checkpoint")
        return buf

    with open(path, "rb") as f:
        if read_exact(f, 4) != CHECKPOINT_MAGIC:
            raise DataFormatError(f"{path}: bad magic, not a DCNP checkpoint")
        version, n_enc, n_dec = struct.unpack("<III", read_exact(f, 12))
        if version != CHECKPOINT_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        specs = []
        for _ in range(n_enc + n_dec):
            in_dim, out_dim, act, bn = struct.unpack("<IIBB", read_exact(f, 10))
            if act not in _ACT_NAMES:
                raise DataFormatError(f"{path}: unknown activation code {act}")
            specs.append(
                LayerSpec(
                    in_dim=in_dim,
                    out_dim=out_dim,
                    activation=_ACT_NAMES[act],
                    batch_norm=bool(bn),
                )
            )
        layers = []
        for spec in specs:
            def read_arr(shape):
                count = int(np.prod(shape))
                arr = np.frombuffer(read_exact(f, count * 8), dtype="<f8").astype(
                    np.float64
                )
                return arr.reshape(shape)

            weight = read_arr((spec.out_dim, spec.in_dim))
            bias = read_arr((spec.out_dim,))
            if spec.batch_norm:
                gamma = read_arr((spec.out_dim,))
                beta = read_arr((spec.out_dim,))
                rmean = read_arr((spec.out_dim,))
                rvar = read_arr((spec.out_dim,))
                layers.append(
                    LayerParams(spec, weight, bias, gamma, beta, rmean, rvar)
                )
            else:
                layers.append(LayerParams(spec, weight, bias))
    return AutoencoderParams(encoder=layers[:n_enc], decoder=layers[n_enc:])
